"""Defect energy functional, residual forces and linearized operators.

A `Configuration` freezes the geometry of one computational cell: the defected
ball, its neighbor table in padded-array form, the free/clamped partition at
radius R and the per-site reference energies V_l(0).  Energies and forces are
assembled with numpy over all bonds at once; padding slots carry a fake bond
longer than the cutoff so the tapered potential zeroes them out.

Sign conventions: `residual_forces` returns minus the gradient of the energy
(the physical forces); `hessian_apply` returns the action of the second
variation, so at u = 0 on the homogeneous lattice it matches `linear_h`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lattice, potential
from .errors import ConfigurationError, NonFiniteEnergyError


@dataclass
class Displacement:
    """Per-site 3-vectors, plus the rule extending them beyond their domain."""

    values: np.ndarray
    extension: object = None  # callable positions -> (n, 3); None means zero

    def extend(self, positions):
        positions = np.asarray(positions, dtype=float)
        if self.extension is None:
            return np.zeros_like(positions)
        return self.extension(positions)


@dataclass
class Configuration:
    """A defected ball with the bookkeeping needed for fast assembly."""

    sites: lattice.DefectSiteSet
    params: potential.PotentialParams
    stc: lattice.Stencil
    free_radius: float
    nb_idx: np.ndarray      # (N, K)
    nb_mask: np.ndarray     # (N, K)
    free: np.ndarray        # (N,) bool: |x| <= free_radius
    energy_mask: np.ndarray  # (N,) bool: sites whose V_l enters the energy sum
    site_ref_pair: np.ndarray = field(default=None, repr=False)
    site_ref_dens: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.site_ref_pair is None:
            pair0, dens0 = _bond_sums(self, np.zeros((len(self.sites), 3)))
            self.site_ref_pair = pair0
            self.site_ref_dens = dens0

    @property
    def n_sites(self):
        return len(self.sites)

    @property
    def positions(self):
        return self.sites.positions

    def clamped_indices(self):
        return np.nonzero(~self.free)[0]


def build_config(spec, params, defect, free_radius, domain_radius=None, stc=None):
    """Assemble a computational cell for a solve clamped outside free_radius.

    The stored domain defaults to free_radius + 2 r_cut so every site whose
    potential sees a free site has its full stencil in storage.
    """
    stc = stc or lattice.stencil(spec, params.r_cut)
    if domain_radius is None:
        domain_radius = free_radius + 2.0 * params.r_cut
    if domain_radius < free_radius + 2.0 * params.r_cut - 1e-9:
        raise ConfigurationError("stored domain must extend 2 r_cut past the free region")
    sites = lattice.apply_defect(spec, defect, domain_radius)
    if free_radius <= sites.core_radius:
        raise ConfigurationError("free region must contain the defect core")
    nt = lattice.neighbor_table(sites.positions, params.r_cut)
    nb_idx, nb_mask = nt.padded()
    r = np.linalg.norm(sites.positions, axis=1)
    free = r <= free_radius + 1e-9
    energy_mask = r <= free_radius + params.r_cut + 1e-9
    return Configuration(sites, params, stc, free_radius, nb_idx, nb_mask, free, energy_mask)


def _bond_vectors(config, u):
    pos = config.positions
    b = pos[config.nb_idx] + u[config.nb_idx] - (pos + u)[:, None, :]
    b[~config.nb_mask] = np.array([2.0 * config.params.r_cut, 0.0, 0.0])
    return b


def _bond_sums(config, u):
    b = _bond_vectors(config, u)
    r = np.linalg.norm(b, axis=2)
    _check_floor(config, r)
    phi, _, _ = potential.pair_terms(r, config.params)
    psi, _, _ = potential.density_terms(r, config.params)
    return 0.5 * phi.sum(axis=1), psi.sum(axis=1)


def _check_floor(config, r):
    bad = (r < config.params.bond_floor) & config.nb_mask
    if bad.any():
        raise NonFiniteEnergyError("bond collapsed below the bond-length floor")


def total_energy(u, config):
    """Sum of V_l(Du) - V_l(0) over the configuration's energy sites."""
    u = np.asarray(u, dtype=float)
    pair, dens = _bond_sums(config, u)
    f, _, _ = potential.embed_terms(dens, config.params)
    f0, _, _ = potential.embed_terms(config.site_ref_dens, config.params)
    per_site = pair - config.site_ref_pair + f - f0
    return float(per_site[config.energy_mask].sum())


def _force_ingredients(config, u):
    b = _bond_vectors(config, u)
    r = np.linalg.norm(b, axis=2)
    _check_floor(config, r)
    unit = b / r[..., None]
    _, dphi, ddphi = potential.pair_terms(r, config.params)
    psi, dpsi, ddpsi = potential.density_terms(r, config.params)
    dens = (psi * config.nb_mask).sum(axis=1)
    _, dF, ddF = potential.embed_terms(dens, config.params)
    return b, r, unit, dphi, ddphi, dpsi, ddpsi, dF, ddF


def residual_forces(u, config):
    """Negative energy gradient on free sites; zero on clamped sites."""
    u = np.asarray(u, dtype=float)
    _, r, unit, dphi, _, dpsi, _, dF, _ = _force_ingredients(config, u)
    g = dphi + (dF[:, None] + dF[config.nb_idx]) * dpsi
    g = np.where(config.nb_mask, g, 0.0)
    force = np.einsum("nk,nka->na", g, unit)
    force[~config.free] = 0.0
    return force


def hessian_apply(u, v, config):
    """Action of the second variation at u on a direction v (free sites)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _, r, unit, dphi, ddphi, dpsi, ddpsi, dF, ddF = _force_ingredients(config, u)

    dv = v[config.nb_idx] - v[:, None, :]
    dr = np.einsum("nka,nka->nk", unit, dv)
    dr = np.where(config.nb_mask, dr, 0.0)
    dunit = (dv - unit * dr[..., None]) / r[..., None]
    dunit[~config.nb_mask] = 0.0

    ddens = (dpsi * dr * config.nb_mask).sum(axis=1)
    ddF_dir = ddF * ddens  # directional derivative of F'(rho_bar) per site

    fsum = dF[:, None] + dF[config.nb_idx]
    g = np.where(config.nb_mask, dphi + fsum * dpsi, 0.0)
    dg = (ddphi + fsum * ddpsi) * dr + (ddF_dir[:, None] + ddF_dir[config.nb_idx]) * dpsi
    dg = np.where(config.nb_mask, dg, 0.0)

    dres = np.einsum("nk,nka->na", dg, unit) + np.einsum("nk,nka->na", g, dunit)
    out = -dres
    out[~config.free] = 0.0
    return out


@dataclass
class HomogeneousBall:
    """Homogeneous lattice ball with offset gather tables for linear_h."""

    spec: lattice.LatticeSpec
    radius: float
    positions: np.ndarray
    int_coords: np.ndarray
    index: lattice.BallIndex
    gather: np.ndarray        # (N, M): site index at z + offset_m, -1 outside
    neg_perm: np.ndarray      # m index of the negated offset
    interior: np.ndarray      # sites where linear_h is exact

    def __len__(self):
        return len(self.positions)


def homogeneous_ball(spec, radius, stc):
    pos, z = lattice.generate_ball(spec, radius)
    idx = lattice.BallIndex(z)
    m = len(stc)
    targets = z[:, None, :] + stc.int_offsets[None, :, :]
    gather = idx.lookup(targets.reshape(-1, 3)).reshape(len(z), m)
    neg = np.array([np.nonzero(np.all(stc.int_offsets == -o, axis=1))[0][0] for o in stc.int_offsets])
    valid1 = np.all(gather >= 0, axis=1)
    interior = valid1.copy()
    safe = np.where(gather >= 0, gather, 0)
    interior &= np.all(valid1[safe] | (gather < 0), axis=1)
    return HomogeneousBall(spec, radius, pos, z, idx, gather, neg, interior)


def linear_h(values, ball, fc):
    """H[u] = sum_{rho,sigma} D_{-rho}(C_{rho sigma} D_sigma u) on the interior.

    Returns an (N, 3) array that is exact on ball.interior and zero elsewhere.
    """
    u = np.asarray(values, dtype=float)
    n, m = ball.gather.shape
    safe = np.where(ball.gather >= 0, ball.gather, 0)
    du = u[safe] - u[:, None, :]
    du[ball.gather < 0] = 0.0
    t = np.einsum("pqab,nqb->npa", fc.C, du)
    # D_{-rho} t_rho(l) = t_rho(l - rho); reuse the gather of the negated offset
    back = safe[:, ball.neg_perm]
    t_shift = t[back, np.arange(m)[None, :], :]
    out = (t_shift - t).sum(axis=1)
    out[~ball.interior] = 0.0
    return out


def lattice_energy_norm(values, ball, stc):
    """l2 norm of the stencil difference field Du on sites with full gathers."""
    u = np.asarray(values, dtype=float)
    safe = np.where(ball.gather >= 0, ball.gather, 0)
    du = u[safe] - u[:, None, :]
    valid = np.all(ball.gather >= 0, axis=1)
    return float(np.sqrt((du[valid] ** 2).sum()))
