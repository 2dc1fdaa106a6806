import numpy as np
import pytest

from momentbc import jets


def smooth_scalar(x):
    # generic smooth test function with anisotropy and a 1/|x| factor
    r2 = np.sum(x * x, axis=-1)
    return np.sin(x[..., 0] + 2 * x[..., 1]) * np.exp(-0.1 * x[..., 2]) / np.sqrt(r2) + x[..., 0] ** 3 / r2


def smooth_jet(xj):
    r2 = jets.dot(xj, xj)
    # sin/exp via their Taylor series around the base value
    arg = xj[..., 0, :] + 2 * xj[..., 1, :]
    a0 = arg[..., 0]
    sin = jets._series(arg, (np.sin(a0), np.cos(a0), -np.sin(a0) / 2, -np.cos(a0) / 6))
    b = -0.1 * xj[..., 2, :]
    b0 = b[..., 0]
    e = np.exp(b0)
    exp = jets._series(b, (e, e, e / 2, e / 6))
    cube = jets.mul(jets.mul(xj[..., 0, :], xj[..., 0, :]), xj[..., 0, :])
    return jets.mul(jets.mul(sin, exp), jets.rsqrt(r2)) + jets.mul(cube, jets.reciprocal(r2))


def fd_grad(f, x, h=1e-5):
    g = np.zeros(3)
    for i in range(3):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_value_and_gradient_match_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.normal(size=3) + np.array([2.5, 0, 0])
        j = smooth_jet(jets.seed(x))
        assert jets.value(j) == pytest.approx(smooth_scalar(x), rel=1e-12)
        g = jets.gradient(j)
        np.testing.assert_allclose(g, fd_grad(smooth_scalar, x), rtol=1e-6, atol=1e-8)


def test_hessian_and_third_match_finite_differences_of_gradient():
    rng = np.random.default_rng(4)
    x = rng.normal(size=3) + np.array([0, 3.0, 0])
    j = smooth_jet(jets.seed(x))
    hess = jets.hessian(j)
    tens = jets.third(j)
    h = 1e-4
    for i in range(3):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        gp = jets.gradient(smooth_jet(jets.seed(xp)))
        gm = jets.gradient(smooth_jet(jets.seed(xm)))
        np.testing.assert_allclose(hess[:, i], (gp - gm) / (2 * h), rtol=1e-6, atol=1e-8)
        hp = jets.hessian(smooth_jet(jets.seed(xp)))
        hm = jets.hessian(smooth_jet(jets.seed(xm)))
        np.testing.assert_allclose(tens[:, :, i], (hp - hm) / (2 * h), rtol=1e-5, atol=1e-7)


def test_third_tensor_is_symmetric():
    x = np.array([1.3, -0.4, 2.2])
    t = jets.third(smooth_jet(jets.seed(x)))
    for perm in [(0, 2, 1), (1, 0, 2), (2, 1, 0)]:
        np.testing.assert_allclose(t, np.transpose(t, perm), atol=1e-14)


def test_mul_agrees_with_polynomial_multiplication():
    rng = np.random.default_rng(5)
    a = rng.normal(size=jets.N_COEFFS)
    b = rng.normal(size=jets.N_COEFFS)
    prod = jets.mul(a, b)
    # brute-force truncated product over all exponent pairs
    expected = np.zeros(jets.N_COEFFS)
    for i, ea in enumerate(jets.EXPONENTS):
        for j, eb in enumerate(jets.EXPONENTS):
            es = tuple(p + q for p, q in zip(ea, eb))
            if sum(es) <= 3:
                expected[jets.EXPONENTS.index(es)] += a[i] * b[j]
    np.testing.assert_allclose(prod, expected, atol=1e-14)


def test_matinv3_inverts():
    rng = np.random.default_rng(6)
    m = rng.normal(size=(4, 3, 3, jets.N_COEFFS))
    m[..., 0] += 5 * np.eye(3)  # keep the value part comfortably invertible
    inv = jets.matinv3(m)
    prod = jets._matmul(m, inv)
    eye = np.zeros_like(prod)
    eye[..., 0, 0, 0] = eye[..., 1, 1, 0] = eye[..., 2, 2, 0] = 1.0
    np.testing.assert_allclose(prod, eye, atol=1e-12)


def test_batched_matches_loop():
    rng = np.random.default_rng(7)
    xs = rng.normal(size=(6, 3)) + np.array([2.0, 1.0, 0.5])
    batch = smooth_jet(jets.seed(xs))
    for n, x in enumerate(xs):
        np.testing.assert_allclose(batch[n], smooth_jet(jets.seed(x)), atol=1e-13)
