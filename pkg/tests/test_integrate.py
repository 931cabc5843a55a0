import numba as nb
import numpy as np

from ddbh.integrate import dense_value, dp5_attempt, integrate


@nb.njit
def _decay(t, y, out, args):
    for i in range(y.shape[0]):
        out[i] = -args[0] * y[i]


@nb.njit
def _rotation(t, y, out, args):
    out[0] = -1j * args[0] * y[0]


def test_exponential_decay_accuracy():
    times = np.linspace(0, 5, 11)
    ys, status = integrate(_decay, 0.0, np.array([1.0, 2.0]), times, 1e-10, 1e-12, 1e-3, (0.7,))
    assert status == 0
    assert np.allclose(ys[:, 0], np.exp(-0.7 * times), rtol=1e-8, atol=1e-12)
    assert np.allclose(ys[:, 1], 2 * np.exp(-0.7 * times), rtol=1e-8, atol=1e-12)


def test_phase_rotation_keeps_modulus():
    times = np.linspace(0, 50, 6)
    ys, status = integrate(_rotation, 0.0, np.array([1.0 + 0j]), times, 1e-10, 1e-12, 1e-3, (3.0,))
    assert status == 0
    assert np.allclose(ys[:, 0], np.exp(-3j * times), atol=1e-7)


def _dense_error(h, theta):
    y = np.array([1.0])
    K = np.empty((7, 1))
    _decay(0.0, y, K[0], (1.0,))
    y_new = np.empty(1)
    tmp = np.empty(1)
    err = dp5_attempt(_decay, 0.0, y, h, K, y_new, tmp, 1e-8, 1e-12, (1.0,))
    assert err < 1.0
    out = np.empty(1)
    dense_value(y, h, K, theta, out)
    return abs(out[0] - np.exp(-theta * h))


def test_dense_output_interpolates_within_step():
    for theta in (0.0, 0.25, 0.5, 0.8, 1.0):
        assert _dense_error(0.1, theta) < 1e-8
    # quartic interpolant: local error shrinks like h^5
    ratio = _dense_error(0.1, 0.5) / _dense_error(0.05, 0.5)
    assert 20 < ratio < 45
