"""Toy interatomic potential: tapered Morse pair term plus a sqrt embedding.

The site energy is

    V(A) = 1/2 sum_rho phi(|rho + A_rho|) + F( sum_rho psi(|rho + A_rho|) )

with A_rho the displacement differences over the site's stencil, phi a Morse
pair function, psi an exponential density and F(d) = -kappa sqrt(d).  Both
phi and psi are multiplied by a quintic taper so the potential and its first
two derivatives vanish identically at the cutoff; the energy is therefore C2
everywhere bonds stay above the bond-length floor.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from . import lattice
from .errors import ConfigurationError, NonFiniteEnergyError


@dataclass(frozen=True)
class PotentialParams:
    """Defaults give a stable, anisotropic BCC crystal with a0 near 1.

    The stencil then covers the first three neighbor shells, and the
    acoustic tensor's smallest eigenvalue stays above a fifth of its largest
    over the unit sphere.
    """

    well_depth: float = 1.0       # Morse depth
    r0: float = 0.92              # pair equilibrium distance
    stiffness: float = 4.0        # Morse inverse width (1/length)
    embed_strength: float = 0.8   # kappa in F(d) = -kappa sqrt(d); 0 = pure pair
    r_cut: float = 1.40
    taper_width: float = 0.45
    bond_floor: float = 0.1       # collapsed-bond threshold (0.1 a0 by default)

    def __post_init__(self):
        if self.r_cut <= self.r0:
            raise ConfigurationError("r_cut must exceed the pair equilibrium distance")
        if self.taper_width <= 0 or self.taper_width >= self.r_cut:
            raise ConfigurationError("taper width must lie in (0, r_cut)")


def _smoothstep(t):
    """Quintic smoothstep on [0,1] with vanishing first/second end derivatives."""
    t = np.clip(t, 0.0, 1.0)
    s = t**3 * (10.0 + t * (-15.0 + 6.0 * t))
    ds = 30.0 * t**2 * (1.0 - t) ** 2
    dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return s, ds, dds


def _taper(r, params):
    """Multiplier T(r): 1 below r_cut - w, 0 above r_cut, C2 in between."""
    w = params.taper_width
    t = (params.r_cut - np.asarray(r, dtype=float)) / w
    s, ds, dds = _smoothstep(t)
    inside = (t > 0.0) & (t < 1.0)
    dT = np.where(inside, -ds / w, 0.0)
    ddT = np.where(inside, dds / w**2, 0.0)
    return s, dT, ddT


def pair_terms(r, params):
    """(phi, phi', phi'') of the tapered Morse pair function."""
    r = np.asarray(r, dtype=float)
    a = params.stiffness
    e = np.exp(-a * (r - params.r0))
    m = params.well_depth * ((1.0 - e) ** 2 - 1.0)
    dm = 2.0 * params.well_depth * a * e * (1.0 - e)
    ddm = 2.0 * params.well_depth * a * a * e * (2.0 * e - 1.0)
    T, dT, ddT = _taper(r, params)
    return m * T, dm * T + m * dT, ddm * T + 2.0 * dm * dT + m * ddT


def density_terms(r, params):
    """(psi, psi', psi'') of the tapered exponential density."""
    r = np.asarray(r, dtype=float)
    a = params.stiffness
    e = np.exp(-a * (r - params.r0))
    T, dT, ddT = _taper(r, params)
    return e * T, -a * e * T + e * dT, a * a * e * T - 2.0 * a * e * dT + e * ddT


def embed_terms(dbar, params):
    """(F, F', F'') of the embedding function F(d) = -kappa sqrt(d)."""
    dbar = np.asarray(dbar, dtype=float)
    k = params.embed_strength
    if k == 0.0:
        z = np.zeros_like(dbar)
        return z, z.copy(), z.copy()
    s = np.sqrt(np.maximum(dbar, 1e-300))
    return -k * s, -0.5 * k / s, 0.25 * k / (s * dbar)


def _bond_geometry(diffs, offsets, params):
    bonds = np.asarray(offsets, dtype=float) + np.asarray(diffs, dtype=float)
    r = np.linalg.norm(bonds, axis=-1)
    if np.any(~np.isfinite(r)) or np.any(r < params.bond_floor):
        raise NonFiniteEnergyError(f"bond length below floor {params.bond_floor}")
    return bonds, r


def site_energy(diffs, offsets, params):
    """V(diffs) - V(0) for one site with the given stencil offsets."""
    _, r = _bond_geometry(diffs, offsets, params)
    r0 = np.linalg.norm(np.asarray(offsets, dtype=float), axis=-1)
    phi, _, _ = pair_terms(r, params)
    phi0, _, _ = pair_terms(r0, params)
    psi, _, _ = density_terms(r, params)
    psi0, _, _ = density_terms(r0, params)
    f, _, _ = embed_terms(psi.sum(), params)
    f0, _, _ = embed_terms(psi0.sum(), params)
    return 0.5 * (phi.sum() - phi0.sum()) + f - f0


def site_gradient(diffs, offsets, params):
    """dV/dA_rho, one 3-vector per stencil offset."""
    bonds, r = _bond_geometry(diffs, offsets, params)
    unit = bonds / r[:, None]
    _, dphi, _ = pair_terms(r, params)
    psi, dpsi, _ = density_terms(r, params)
    _, dF, _ = embed_terms(psi.sum(), params)
    return (0.5 * dphi + dF * dpsi)[:, None] * unit


def site_hessian(diffs, offsets, params):
    """d2V/dA_rho dA_sigma as an (M, M, 3, 3) block array."""
    bonds, r = _bond_geometry(diffs, offsets, params)
    unit = bonds / r[:, None]
    _, dphi, ddphi = pair_terms(r, params)
    psi, dpsi, ddpsi = density_terms(r, params)
    _, dF, ddF = embed_terms(psi.sum(), params)

    m = len(r)
    uu = unit[:, :, None] * unit[:, None, :]
    radial = 0.5 * ddphi + dF * ddpsi
    tangent = (0.5 * dphi + dF * dpsi) / r
    out = np.zeros((m, m, 3, 3))
    diag = radial[:, None, None] * uu + tangent[:, None, None] * (np.eye(3) - uu)
    out[np.arange(m), np.arange(m)] = diag
    out += ddF * np.einsum("p,pa,q,qb->pqab", dpsi, unit, dpsi, unit)
    return out


def hydrostatic_residual(params, spec):
    """Derivative of the per-site energy under uniform scaling, at scale 1."""
    stc = lattice.stencil(spec, params.r_cut)
    r = np.linalg.norm(stc.offsets, axis=1)
    _, dphi, _ = pair_terms(r, params)
    psi, dpsi, _ = density_terms(r, params)
    _, dF, _ = embed_terms(psi.sum(), params)
    return float(np.sum((0.5 * dphi + dF * dpsi) * r))


def calibrate_equilibrium(params, spec, bracket=(0.75, 1.3), tol=1e-13):
    """Rescale the lattice constant so the crystal is stress free.

    The bracket is relative to spec.a0.  Residual forces vanish for any a0 by
    point symmetry; the scalar being zeroed is the hydrostatic stress, which
    makes u = 0 a genuine equilibrium under the clamped far field.
    """

    def resid(a0):
        return hydrostatic_residual(params, spec.rescale(a0))

    lo, hi = bracket[0] * spec.a0, bracket[1] * spec.a0
    flo, fhi = resid(lo), resid(hi)
    if flo * fhi > 0:
        raise ConfigurationError(
            f"no stress-free lattice constant in [{lo:.4g}, {hi:.4g}] "
            f"(residuals {flo:.3g}, {fhi:.3g})"
        )
    a0 = brentq(resid, lo, hi, xtol=tol)
    return spec.rescale(a0)


@dataclass(frozen=True)
class ForceConstants:
    """Second derivatives of the site potential at zero displacement."""

    offsets: np.ndarray        # (M, 3)
    int_offsets: np.ndarray    # (M, 3)
    C: np.ndarray              # (M, M, 3, 3)

    @property
    def is_pair_diagonal(self):
        off = self.C.copy()
        m = len(self.offsets)
        off[np.arange(m), np.arange(m)] = 0.0
        return float(np.abs(off).max()) < 1e-12 * max(1.0, float(np.abs(self.C).max()))


def force_constants(params, spec, stc=None):
    stc = stc or lattice.stencil(spec, params.r_cut)
    C = site_hessian(np.zeros_like(stc.offsets), stc.offsets, params)
    return ForceConstants(stc.offsets, stc.int_offsets, C)
