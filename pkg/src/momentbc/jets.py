"""Truncated Taylor-polynomial (jet) arithmetic in three variables.

A jet stores the coefficients of a degree-3 Taylor polynomial around a base
point, one coefficient per monomial in the perturbation (dx, dy, dz).  Pushing
jets through ordinary arithmetic yields exact derivatives up to third order of
the composite expression, which is how the Green's-function quadratures are
differentiated: the integrand is evaluated on jets seeded with the evaluation
point, and the derivatives are read off the result.

Jets are plain numpy arrays whose last axis has length 20 (the number of
monomials of total degree <= 3 in three variables).  Any leading axes are
broadcast elementwise, so whole batches of evaluation points and quadrature
nodes are processed at once.
"""

from __future__ import annotations

import numpy as np

#: Exponent triples of the monomial basis, ordered by total degree.
EXPONENTS: tuple[tuple[int, int, int], ...] = tuple(
    (i, j, k)
    for deg in range(4)
    for i in range(deg, -1, -1)
    for j in range(deg - i, -1, -1)
    for k in ((deg - i - j,) if deg - i - j >= 0 else ())
)

N_COEFFS = len(EXPONENTS)  # 20

_INDEX = {e: n for n, e in enumerate(EXPONENTS)}
_DEGREE = np.array([sum(e) for e in EXPONENTS])


def _build_table(min_deg_a: int, min_deg_b: int):
    """Ordered (k, i, j) triples with monomial_i * monomial_j = monomial_k."""
    table = []
    for i, ea in enumerate(EXPONENTS):
        if sum(ea) < min_deg_a:
            continue
        for j, eb in enumerate(EXPONENTS):
            if sum(eb) < min_deg_b:
                continue
            es = (ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2])
            if sum(es) <= 3:
                table.append((_INDEX[es], i, j))
    table.sort()
    return tuple(table)


_TABLES = {
    (0, 0): _build_table(0, 0),
    (1, 1): _build_table(1, 1),
    (2, 1): _build_table(2, 1),
}


def seed(x, dtype=float):
    """Jets of the three coordinate functions around the base point(s) ``x``.

    ``x`` has shape (..., 3); the result has shape (..., 3, 20) with the
    value part set to ``x`` and unit first-order coefficients.
    """
    x = np.asarray(x, dtype=dtype)
    out = np.zeros(x.shape + (N_COEFFS,), dtype=dtype)
    out[..., 0] = x
    for axis in range(3):
        out[..., axis, 1 + axis] = 1.0
    return out


def constant(value, dtype=float):
    value = np.asarray(value, dtype=dtype)
    out = np.zeros(value.shape + (N_COEFFS,), dtype=dtype)
    out[..., 0] = value
    return out


def mul(a, b, min_deg=(0, 0)):
    """Product of two jets, truncated at total degree 3.

    ``min_deg`` declares the lowest-degree nonzero coefficient of each factor;
    passing it skips monomial pairs known to be absent (the series inverses
    below exploit this for their nilpotent perturbation parts).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    out = np.zeros(shape + (N_COEFFS,), dtype=np.result_type(a, b))
    for k, i, j in _TABLES[min_deg]:
        out[..., k] += a[..., i] * b[..., j]
    return out


def _series(a, coeffs):
    """Compose a scalar Taylor series with a jet.

    ``coeffs`` are the series coefficients c0..c3 about the jet's value part
    (arrays broadcastable against the jet's batch shape); the perturbation
    part of ``a`` is nilpotent so the composition terminates exactly.
    """
    eps = np.array(a, copy=True)
    eps[..., 0] = 0.0
    e2 = mul(eps, eps, min_deg=(1, 1))
    e3 = mul(e2, eps, min_deg=(2, 1))
    out = coeffs[1][..., None] * eps
    out += coeffs[2][..., None] * e2
    out += coeffs[3][..., None] * e3
    out[..., 0] += coeffs[0]
    return out


def reciprocal(a):
    a0 = a[..., 0]
    inv = 1.0 / a0
    return _series(a, (inv, -inv * inv, inv**3, -inv**4))


def sqrt(a):
    a0 = a[..., 0]
    s = np.sqrt(a0)
    return _series(a, (s, 0.5 / s, -0.125 / (a0 * s), 0.0625 / (a0 * a0 * s)))


def rsqrt(a):
    a0 = a[..., 0]
    r = 1.0 / np.sqrt(a0)
    return _series(a, (r, -0.5 * r / a0, 0.375 * r / a0**2, -0.3125 * r / a0**3))


def dot(a, b):
    """Euclidean dot product of jet 3-vectors, shapes (..., 3, 20)."""
    return (
        mul(a[..., 0, :], b[..., 0, :])
        + mul(a[..., 1, :], b[..., 1, :])
        + mul(a[..., 2, :], b[..., 2, :])
    )


def cross(a, b):
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        out[..., i, :] = mul(a[..., j, :], b[..., k, :]) - mul(a[..., k, :], b[..., j, :])
    return out


def matinv3(m):
    """Inverse of a jet-valued 3x3 matrix, shape (..., 3, 3, 20).

    Splits M = M0 + E with numeric value part M0 and nilpotent jet part E and
    sums the exact Neumann series (I - X + X^2 - X^3) M0^{-1}, X = M0^{-1} E.
    """
    m0 = m[..., 0]
    m0inv = np.linalg.inv(m0)
    pert = np.array(m, copy=True)
    pert[..., 0] = 0.0
    x = np.einsum("...ab,...bcm->...acm", m0inv, pert)
    x2 = _matmul(x, x, min_deg=(1, 1))
    x3 = _matmul(x2, x, min_deg=(2, 1))
    series = -x + x2 - x3
    series[..., 0, 0, 0] += 1.0
    series[..., 1, 1, 0] += 1.0
    series[..., 2, 2, 0] += 1.0
    return np.einsum("...abm,...bc->...acm", series, m0inv)


def _matmul(a, b, min_deg=(0, 0)):
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    for c in range(3):
        for k in range(3):
            acc = mul(a[..., c, 0, :], b[..., 0, k, :], min_deg)
            acc += mul(a[..., c, 1, :], b[..., 1, k, :], min_deg)
            acc += mul(a[..., c, 2, :], b[..., 2, k, :], min_deg)
            out[..., c, k, :] = acc
    return out


def _factorials():
    from math import factorial

    return np.array([factorial(i) * factorial(j) * factorial(k) for (i, j, k) in EXPONENTS], dtype=float)


# Multipliers turning Taylor coefficients back into derivatives (alpha!).
_ALPHA_FACT = _factorials()


def value(a):
    return a[..., 0]


def gradient(a):
    """First-derivative vector, shape (..., 3)."""
    return np.stack([a[..., _INDEX[(1, 0, 0)]], a[..., _INDEX[(0, 1, 0)]], a[..., _INDEX[(0, 0, 1)]]], axis=-1)


def hessian(a):
    """Symmetric second-derivative matrix, shape (..., 3, 3)."""
    out = np.empty(a.shape[:-1] + (3, 3), dtype=a.dtype)
    for i in range(3):
        for j in range(3):
            e = [0, 0, 0]
            e[i] += 1
            e[j] += 1
            idx = _INDEX[tuple(e)]
            out[..., i, j] = a[..., idx] * _ALPHA_FACT[idx]
    return out


def third(a):
    """Symmetric third-derivative tensor, shape (..., 3, 3, 3)."""
    out = np.empty(a.shape[:-1] + (3, 3, 3), dtype=a.dtype)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                e = [0, 0, 0]
                e[i] += 1
                e[j] += 1
                e[k] += 1
                idx = _INDEX[tuple(e)]
                out[..., i, j, k] = a[..., idx] * _ALPHA_FACT[idx]
    return out


def laplacian(a):
    h = hessian(a)
    return h[..., 0, 0] + h[..., 1, 1] + h[..., 2, 2]


def laplacian_gradient(a):
    """Gradient of the Laplacian, from the third-order coefficients."""
    t = third(a)
    return t[..., 0, 0, :] + t[..., 1, 1, :] + t[..., 2, 2, :]
