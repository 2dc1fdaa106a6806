import numpy as np
import pytest

from momentbc import lattice, potential


@pytest.fixture(scope="session")
def toy_model():
    """Calibrated BCC toy EAM: (params, spec, stencil, force_constants)."""
    params = potential.PotentialParams()
    spec = potential.calibrate_equilibrium(params, lattice.make_lattice("bcc", 1.0))
    stc = lattice.stencil(spec, params.r_cut)
    fc = potential.force_constants(params, spec, stc)
    return params, spec, stc, fc


@pytest.fixture(scope="session")
def pair_model():
    """Calibrated pair-only BCC toy (diagonal force constants)."""
    params = potential.PotentialParams(r0=0.90, embed_strength=0.0)
    spec = potential.calibrate_equilibrium(params, lattice.make_lattice("bcc", 1.0))
    stc = lattice.stencil(spec, params.r_cut)
    fc = potential.force_constants(params, spec, stc)
    return params, spec, stc, fc


@pytest.fixture(scope="session")
def scalar_laplacian():
    """Unit cubic lattice whose linearization is the 7-point Laplacian.

    The pair term with phi''(1) = 1, phi'(1) = 0 gives C_{rho rho} = I/2 per
    first-shell offset, i.e. the discrete vector Laplacian symbol
    sum_j 2(1 - cos k_j).
    """
    from momentbc.potential import ForceConstants

    spec = lattice.make_lattice("sc", 1.0)
    stc = lattice.stencil(spec, 1.01)
    m = len(stc)
    C = np.zeros((m, m, 3, 3))
    C[np.arange(m), np.arange(m)] = 0.5 * np.eye(3)
    return spec, stc, ForceConstants(stc.offsets, stc.int_offsets, C)
