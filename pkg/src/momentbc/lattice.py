"""Bravais lattice balls, point-defect configurations and neighbor tables.

Sites are generated in a deterministic order (lexicographic in their integer
coordinates) so that every downstream sum is reproducible bit-for-bit.
Positions are real-space; integer coordinates refer to the primitive basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

_TOL = 1e-9


@dataclass(frozen=True)
class LatticeSpec:
    """Bravais lattice A Z^3; columns of ``basis`` are the lattice vectors."""

    basis: np.ndarray
    a0: float
    structure: str = "custom"

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.shape != (3, 3) or abs(np.linalg.det(b)) < 1e-14:
            raise ConfigurationError("lattice basis must be an invertible 3x3 matrix")
        object.__setattr__(self, "basis", b)

    @property
    def cell_volume(self):
        return abs(np.linalg.det(self.basis))

    def rescale(self, a0_new):
        """Same structure at a different lattice constant."""
        return LatticeSpec(self.basis * (a0_new / self.a0), a0_new, self.structure)


def make_lattice(structure, a0=1.0):
    """Primitive bases for the supported structures."""
    structure = structure.lower().replace("-", "").replace("_", "")
    if structure in ("sc", "simplecubic", "cubic"):
        basis = np.eye(3)
    elif structure in ("bcc", "bodycenteredcubic"):
        basis = 0.5 * np.array([[-1.0, 1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, -1.0]]).T
    elif structure in ("fcc", "facecenteredcubic"):
        basis = 0.5 * np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).T
    else:
        raise ConfigurationError(f"unknown lattice structure '{structure}'")
    return LatticeSpec(basis * a0, a0, structure)


def generate_ball(spec, radius):
    """All lattice sites with |A z| <= radius, lexicographic in z.

    Returns (positions (N, 3), int_coords (N, 3)).
    """
    if radius < 0:
        raise ConfigurationError("ball radius must be nonnegative")
    inv = np.linalg.inv(spec.basis)
    # row norms of A^{-1} bound the integer coordinates of points in the ball
    bounds = np.floor(np.linalg.norm(inv, axis=1) * radius + _TOL).astype(int)
    ranges = [np.arange(-b, b + 1) for b in bounds]
    z = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
    pos = z @ spec.basis.T
    keep = np.einsum("ij,ij->i", pos, pos) <= (radius + _TOL) ** 2
    return pos[keep], z[keep]


@dataclass(frozen=True)
class Stencil:
    """Finite inversion-symmetric interaction offsets."""

    offsets: np.ndarray        # (M, 3) real-space
    int_offsets: np.ndarray    # (M, 3) integer
    r_cut: float

    def __len__(self):
        return len(self.offsets)


def stencil(spec, r_cut):
    """All nonzero lattice vectors of length <= r_cut.

    Raises if r_cut does not reach the first shell or if the offsets fail to
    span the lattice over the integers.
    """
    if r_cut <= 0:
        raise ConfigurationError("r_cut must be positive")
    pos, z = generate_ball(spec, r_cut)
    nonzero = np.any(z != 0, axis=1)
    pos, z = pos[nonzero], z[nonzero]
    if len(pos) == 0:
        raise ConfigurationError("r_cut smaller than the nearest-neighbor distance")
    order = np.lexsort((z[:, 2], z[:, 1], z[:, 0], np.linalg.norm(pos, axis=1).round(12)))
    pos, z = pos[order], z[order]
    if not _spans_lattice(z):
        raise ConfigurationError("stencil offsets do not span the lattice over Z")
    return Stencil(pos, z, r_cut)


def nearest_neighbor_distance(spec):
    pos, z = generate_ball(spec, np.linalg.norm(spec.basis, axis=0).max() * 1.5)
    r = np.linalg.norm(pos, axis=1)
    return r[r > _TOL].min()


def _smith_diagonal(mat):
    """Elementary divisors of an integer matrix (Smith normal form diagonal)."""
    a = np.array(mat, dtype=object).copy()
    rows, cols = a.shape
    diag = []
    r = c = 0
    while r < rows and c < cols:
        sub = a[r:, c:]
        if not np.any(sub != 0):
            break
        # move the smallest nonzero entry to the pivot
        nz = [(abs(sub[i, j]), i, j) for i in range(sub.shape[0]) for j in range(sub.shape[1]) if sub[i, j] != 0]
        _, i, j = min(nz)
        a[[r, r + i]] = a[[r + i, r]]
        a[:, [c, c + j]] = a[:, [c + j, c]]
        # reduce column and row against the pivot until clean
        while True:
            pivot = a[r, c]
            done = True
            for i in range(r + 1, rows):
                if a[i, c] % pivot != 0:
                    done = False
                q = a[i, c] // pivot
                a[i] = a[i] - q * a[r]
            for j in range(c + 1, cols):
                if a[r, j] % pivot != 0:
                    done = False
                q = a[r, j] // pivot
                a[:, j] = a[:, j] - q * a[:, c]
            if np.all(a[r + 1:, c] == 0) and np.all(a[r, c + 1:] == 0):
                break
            if done:
                break
        diag.append(abs(a[r, c]))
        r += 1
        c += 1
    return diag


def _spans_lattice(int_offsets):
    diag = _smith_diagonal(np.asarray(int_offsets, dtype=np.int64))
    return len(diag) == 3 and all(d == 1 for d in diag)


@dataclass(frozen=True)
class DefectSpec:
    """One of: none, vacancy, divacancy, interstitial, microcrack(n)."""

    kind: str = "vacancy"
    removed_count: int = 0  # only for microcrack

    @classmethod
    def parse(cls, name):
        name = name.strip().lower()
        if name in ("none", "vacancy", "divacancy", "interstitial"):
            return cls(name)
        if name == "microcrack2":
            return cls("microcrack", 5)
        if name == "microcrack3":
            return cls("microcrack", 7)
        if name.startswith("microcrack:"):
            return cls("microcrack", int(name.split(":", 1)[1]))
        raise ConfigurationError(f"unknown defect kind '{name}'")

    @property
    def label(self):
        if self.kind == "microcrack":
            return f"microcrack:{self.removed_count}"
        return self.kind


@dataclass
class DefectSiteSet:
    """A finite ball of the defected lattice with index bookkeeping."""

    spec: LatticeSpec
    defect: DefectSpec
    radius: float
    positions: np.ndarray          # (N, 3)
    int_coords: np.ndarray         # (N, 3); the interstitial row is a placeholder
    is_lattice: np.ndarray         # (N,) bool; False only for added sites
    removed_positions: np.ndarray  # (Nr, 3)
    removed_int_coords: np.ndarray
    added_positions: np.ndarray    # (Na, 3)
    core_radius: float
    metadata: dict = field(default_factory=dict)
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._index:
            self._index = {tuple(z): i for i, z in zip(np.nonzero(self.is_lattice)[0], self.int_coords[self.is_lattice])}

    def __len__(self):
        return len(self.positions)

    def index_of(self, int_coord):
        """Site index of a lattice point, or -1 if absent."""
        return self._index.get(tuple(int_coord), -1)


def apply_defect(spec, defect, radius):
    """Build the defected ball Lambda^def intersected with B_radius."""
    pos, z = generate_ball(spec, radius)
    nn = nearest_neighbor_distance(spec)
    first_shell_pos, first_shell_z = _first_shell(spec, nn)
    rho1_pos, rho1_z = first_shell_pos[0], first_shell_z[0]

    removed_z = np.zeros((0, 3), dtype=int)
    added = np.zeros((0, 3))
    meta = {}
    if defect.kind == "none":
        pass
    elif defect.kind == "vacancy":
        removed_z = np.zeros((1, 3), dtype=int)
    elif defect.kind == "divacancy":
        removed_z = np.array([[0, 0, 0], rho1_z])
        meta["divacancy_pair"] = [[0, 0, 0], rho1_z.tolist()]
    elif defect.kind == "interstitial":
        added = np.array([[spec.a0 / 4.0] * 3])
    elif defect.kind == "microcrack":
        n = defect.removed_count
        if n < 1:
            raise ConfigurationError("microcrack needs at least one removed site")
        # center the vacancy row on the origin to keep the core ball small
        removed_z = np.array([k * rho1_z for k in range(-(n // 2), n - n // 2)])
        meta["microcrack_direction"] = rho1_z.tolist()
    else:
        raise ConfigurationError(f"unknown defect kind '{defect.kind}'")

    removed_pos = removed_z @ spec.basis.T
    core = 0.0
    if len(removed_pos):
        core = max(core, np.linalg.norm(removed_pos, axis=1).max())
    if len(added):
        core = max(core, np.linalg.norm(added, axis=1).max())
    core += nn
    if radius <= core:
        raise ConfigurationError(f"domain radius {radius} does not contain the defect core ({core:.3f})")

    keep = np.ones(len(pos), dtype=bool)
    if len(removed_z):
        removed_set = {tuple(r) for r in removed_z}
        keep = np.array([tuple(c) not in removed_set for c in z])
    positions = pos[keep]
    coords = z[keep]
    is_lattice = np.ones(len(positions), dtype=bool)
    if len(added):
        positions = np.vstack([positions, added])
        coords = np.vstack([coords, np.zeros((len(added), 3), dtype=int)])
        is_lattice = np.concatenate([is_lattice, np.zeros(len(added), dtype=bool)])

    return DefectSiteSet(
        spec=spec,
        defect=defect,
        radius=radius,
        positions=positions,
        int_coords=coords,
        is_lattice=is_lattice,
        removed_positions=removed_pos,
        removed_int_coords=removed_z,
        added_positions=added,
        core_radius=core,
        metadata=meta,
    )


def _first_shell(spec, nn):
    pos, z = generate_ball(spec, nn + _TOL)
    r = np.linalg.norm(pos, axis=1)
    shell = (r > _TOL) & (r <= nn + _TOL)
    pos, z = pos[shell], z[shell]
    order = np.lexsort((z[:, 2], z[:, 1], z[:, 0]))
    return pos[order], z[order]


@dataclass
class NeighborTable:
    """CSR-style per-site neighbor lists (indices into the site array)."""

    indptr: np.ndarray
    indices: np.ndarray

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def counts(self):
        return np.diff(self.indptr)

    def padded(self):
        """(idx (N, K), mask (N, K)) view; padding slots point at site 0."""
        counts = self.counts()
        n, k = len(counts), counts.max() if len(counts) else 0
        idx = np.zeros((n, k), dtype=np.int64)
        mask = np.zeros((n, k), dtype=bool)
        for i in range(n):
            c = counts[i]
            idx[i, :c] = self.indices[self.indptr[i]:self.indptr[i] + c]
            mask[i, :c] = True
        return idx, mask


def neighbor_table(positions, r_cut):
    """All pairs within r_cut via cell binning; symmetric, sorted, O(N)."""
    if r_cut <= 0:
        raise ConfigurationError("r_cut must be positive")
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    cells = np.floor(positions / r_cut).astype(np.int64)
    cell_map = {}
    for i, c in enumerate(map(tuple, cells)):
        cell_map.setdefault(c, []).append(i)

    r2 = (r_cut * (1 + 1e-12)) ** 2
    neighbor_lists = [None] * n
    shifts = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)]
    for c, members in cell_map.items():
        cand = []
        for s in shifts:
            cand.extend(cell_map.get((c[0] + s[0], c[1] + s[1], c[2] + s[2]), ()))
        cand = np.array(cand)
        mpos = positions[members]
        cpos = positions[cand]
        d2 = ((mpos[:, None, :] - cpos[None, :, :]) ** 2).sum(axis=2)
        for row, i in enumerate(members):
            sel = cand[(d2[row] <= r2) & (cand != i)]
            sel.sort()
            neighbor_lists[i] = sel

    counts = np.array([len(v) for v in neighbor_lists])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.concatenate(neighbor_lists) if n else np.zeros(0, dtype=np.int64)
    return NeighborTable(indptr, indices.astype(np.int64))


class BallIndex:
    """Fast integer-coordinate lookup for a homogeneous ball."""

    def __init__(self, int_coords):
        int_coords = np.asarray(int_coords)
        self.lo = int_coords.min(axis=0)
        shape = int_coords.max(axis=0) - self.lo + 1
        self.grid = -np.ones(shape, dtype=np.int64)
        shifted = int_coords - self.lo
        self.grid[shifted[:, 0], shifted[:, 1], shifted[:, 2]] = np.arange(len(int_coords))

    def lookup(self, int_coords):
        """Indices of the given integer coordinates; -1 where absent."""
        z = np.asarray(int_coords) - self.lo
        inside = np.all((z >= 0) & (z < self.grid.shape), axis=-1)
        out = -np.ones(z.shape[:-1], dtype=np.int64)
        zi = z[inside]
        out[inside] = self.grid[zi[..., 0], zi[..., 1], zi[..., 2]]
        return out


def project_displacement(u, siteset, stc):
    """Project a displacement on a defected ball onto the homogeneous ball.

    Surviving sites copy their values, removed sites take the mean over their
    surviving stencil neighbors, and any added site's value is dropped.
    Returns (ball_positions, ball_int_coords, values).
    """
    u = np.asarray(u, dtype=float)
    ball_pos, ball_z = generate_ball(siteset.spec, siteset.radius)
    values = np.zeros((len(ball_pos), 3))
    idx = BallIndex(ball_z)

    src = siteset.int_coords[siteset.is_lattice]
    src_rows = np.nonzero(siteset.is_lattice)[0]
    dest = idx.lookup(src)
    ok = dest >= 0
    values[dest[ok]] = u[src_rows[ok]]

    for rz in siteset.removed_int_coords:
        dest_i = idx.lookup(rz[None, :])[0]
        if dest_i < 0:
            continue
        acc = np.zeros(3)
        count = 0
        for off in stc.int_offsets:
            j = siteset.index_of(rz + off)
            if j >= 0:
                acc += u[j]
                count += 1
        if count:
            values[dest_i] = acc / count
    return ball_pos, ball_z, values


def write_xyz(path, positions, element="X", comment=""):
    """Minimal XYZ-format dump of a site list."""
    positions = np.asarray(positions)
    with open(path, "w") as f:
        f.write(f"{len(positions)}\n{comment}\n")
        for p in positions:
            f.write(f"{element} {p[0]:.12g} {p[1]:.12g} {p[2]:.12g}\n")
