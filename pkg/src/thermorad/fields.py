"""Grid-sampled scalar/angular fields, phantoms, interpolation, discrete Hölder norms.

Fields live on a uniform Cartesian grid over a box that contains the closed
disk with a two-cell margin; nodes outside the disk hold 0 (compact-support
zero extension).  All field data is immutable by convention after
construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ValidationError
from .geometry import UNIT_DISK, DiskDomain

# node classification codes stored in Grid2.mask
EXTERIOR = 0        # outside the open disk
ADJACENT = 1        # inside, but some 4-neighbour is outside (cut cell)
INTERIOR = 2        # inside with all 4 neighbours inside

_FIELD_MAGIC = b"RTEF"
_ANGULAR_MAGIC = b"RTEA"


class Grid2:
    """Uniform nx x ny grid; node (i, j) sits at origin + (i*h, j*h).

    The canonical constructor `cover_disk` spans [-r-2h, r+2h]^2 so the disk
    is strictly inside the grid box.  `mask[j, i]` classifies node (i, j) as
    EXTERIOR / ADJACENT / INTERIOR relative to the attached disk.
    """

    def __init__(self, nx: int, ny: int, h: float, origin, domain: DiskDomain = UNIT_DISK):
        if nx < 8 or ny < 8:
            raise ValidationError("grid needs at least 8 nodes per side")
        if h <= 0:
            raise ValidationError("grid spacing must be positive")
        self.nx = int(nx)
        self.ny = int(ny)
        self.h = float(h)
        self.origin = (float(origin[0]), float(origin[1]))
        self.domain = domain
        self.mask = self._classify()
        self.mask.setflags(write=False)

    @classmethod
    def cover_disk(cls, n: int, domain: DiskDomain = UNIT_DISK) -> "Grid2":
        """Square n x n grid covering [-r-2h, r+2h]^2 around the disk center."""
        if n < 8:
            raise ValidationError("n must be >= 8")
        h = 2.0 * domain.radius / (n - 5)
        ox = domain.center[0] - domain.radius - 2.0 * h
        oy = domain.center[1] - domain.radius - 2.0 * h
        return cls(n, n, h, (ox, oy), domain)

    def _classify(self) -> np.ndarray:
        X, Y = self.meshgrid()
        inside = self.domain.xi(X, Y) < 0.0
        mask = np.zeros((self.ny, self.nx), dtype=np.int8)
        nbr_inside = np.ones_like(inside)
        nbr_inside[:, 1:] &= inside[:, :-1]
        nbr_inside[:, :-1] &= inside[:, 1:]
        nbr_inside[1:, :] &= inside[:-1, :]
        nbr_inside[:-1, :] &= inside[1:, :]
        # nodes on the outermost ring never have 4 neighbours; they are exterior anyway
        mask[inside] = ADJACENT
        mask[inside & nbr_inside] = INTERIOR
        return mask

    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def meshgrid(self):
        return np.meshgrid(self.xs(), self.ys())

    def node_xy(self, i, j):
        return self.origin[0] + self.h * i, self.origin[1] + self.h * j

    @property
    def xmax(self) -> float:
        return self.origin[0] + self.h * (self.nx - 1)

    @property
    def ymax(self) -> float:
        return self.origin[1] + self.h * (self.ny - 1)

    def nonexterior(self) -> np.ndarray:
        return self.mask != EXTERIOR

    def same_layout(self, other: "Grid2") -> bool:
        return (self.nx, self.ny) == (other.nx, other.ny) and \
            abs(self.h - other.h) < 1e-15 and \
            abs(self.origin[0] - other.origin[0]) < 1e-15 and \
            abs(self.origin[1] - other.origin[1]) < 1e-15


class ScalarField:
    """Real field sampled at grid nodes; exterior nodes hold 0."""

    def __init__(self, grid: Grid2, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.ny, grid.nx):
            raise ValidationError(f"values shape {values.shape} != grid shape {(grid.ny, grid.nx)}")
        if not np.all(np.isfinite(values[grid.nonexterior()])):
            raise ValidationError("non-exterior nodes must hold finite values")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: Grid2) -> "ScalarField":
        return cls(grid, np.zeros((grid.ny, grid.nx)))

    @classmethod
    def from_function(cls, grid: Grid2, fn, restrict_to_disk: bool = True) -> "ScalarField":
        X, Y = grid.meshgrid()
        vals = np.asarray(fn(X, Y), dtype=float)
        if restrict_to_disk:
            vals = np.where(grid.nonexterior(), vals, 0.0)
        return cls(grid, vals)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def min_nonexterior(self) -> float:
        return float(self.values[self.grid.nonexterior()].min())

    def max_nonexterior(self) -> float:
        return float(self.values[self.grid.nonexterior()].max())


class AngularField:
    """Direction-resolved field u(x, theta_k), theta_k = (cos, sin)(2 pi k / n_dir)."""

    def __init__(self, grid: Grid2, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or values.shape[:2] != (grid.ny, grid.nx):
            raise ValidationError("angular values must have shape (ny, nx, n_dir)")
        if not np.all(np.isfinite(values[grid.nonexterior()])):
            raise ValidationError("non-exterior nodes must hold finite values")
        self.grid = grid
        self.values = values
        self.n_dir = values.shape[2]

    @classmethod
    def zeros(cls, grid: Grid2, n_dir: int) -> "AngularField":
        return cls(grid, np.zeros((grid.ny, grid.nx, n_dir)))

    def direction_angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_dir) / self.n_dir

    def directions(self) -> np.ndarray:
        phi = self.direction_angles()
        return np.column_stack([np.cos(phi), np.sin(phi)])


def direction_angles(n_dir: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_dir) / n_dir


def angular_average(u: AngularField) -> ScalarField:
    """Normalized radiation intensity: uniform mean over the direction circle.

    With equispaced angles the periodic trapezoid rule is the plain mean.
    """
    if u.n_dir < 4:
        raise ValidationError("angular average needs n_dir >= 4")
    return ScalarField(u.grid, u.values.mean(axis=2))


# ---------------------------------------------------------------------------
# interpolation

def _locate(grid: Grid2, px, py):
    """Cell indices and fractional offsets for bilinear interpolation."""
    gx = (px - grid.origin[0]) / grid.h
    gy = (py - grid.origin[1]) / grid.h
    ix = np.clip(np.floor(gx).astype(np.int64), 0, grid.nx - 2)
    iy = np.clip(np.floor(gy).astype(np.int64), 0, grid.ny - 2)
    return ix, iy, gx - ix, gy - iy


def interp_many(f: ScalarField, px, py) -> np.ndarray:
    """Bilinear interpolation at arbitrary points inside the grid box.

    Exact for affine functions.  Raises DomainError if any point falls
    outside the grid box by more than a roundoff tolerance.
    """
    grid = f.grid
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    eps = 1e-12 * max(1.0, grid.h * grid.nx)
    if np.any(px < grid.origin[0] - eps) or np.any(px > grid.xmax + eps) or \
       np.any(py < grid.origin[1] - eps) or np.any(py > grid.ymax + eps):
        raise DomainError("interpolation point outside grid bounds")
    ix, iy, fx, fy = _locate(grid, px, py)
    v = f.values
    return ((1 - fx) * (1 - fy) * v[iy, ix] + fx * (1 - fy) * v[iy, ix + 1]
            + (1 - fx) * fy * v[iy + 1, ix] + fx * fy * v[iy + 1, ix + 1])


def interp(f: ScalarField, x) -> float:
    """Scalar convenience wrapper around interp_many."""
    return float(interp_many(f, x[0], x[1]))


def sample_extended(f: ScalarField, px, py) -> np.ndarray:
    """Bilinear sample with the compact-support convention: 0 outside the grid box."""
    grid = f.grid
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    inside = (px >= grid.origin[0]) & (px <= grid.xmax) & (py >= grid.origin[1]) & (py <= grid.ymax)
    pxc = np.where(inside, px, grid.origin[0])
    pyc = np.where(inside, py, grid.origin[1])
    ix, iy, fx, fy = _locate(grid, pxc, pyc)
    v = f.values
    vals = ((1 - fx) * (1 - fy) * v[iy, ix] + fx * (1 - fy) * v[iy, ix + 1]
            + (1 - fx) * fy * v[iy + 1, ix] + fx * fy * v[iy + 1, ix + 1])
    return np.where(inside, vals, 0.0)


# ---------------------------------------------------------------------------
# phantoms

@dataclass(frozen=True)
class GaussianBump:
    center: tuple[float, float]
    amplitude: float
    width: float


@dataclass(frozen=True)
class PhantomSpec:
    """Smooth compactly supported phantom: background + Gaussian bumps, cut off
    by a quintic smoothstep that is 1 for |x| <= support_radius and 0 for
    |x| >= (1 + support_radius)/2."""

    background: float
    bumps: tuple[GaussianBump, ...] = ()
    support_radius: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.support_radius < 1.0:
            raise ValidationError("support_radius must lie in (0, 1)")
        for b in self.bumps:
            if b.width <= 0:
                raise ValidationError("bump width must be positive")
            # bump effectively supported inside the unit disk
            if np.hypot(*b.center) + 3.0 * b.width > 1.0 + 1e-12:
                raise ValidationError(
                    f"bump at {b.center} with width {b.width} is not compactly supported in the disk")


def _cutoff(r, r_inner, r_outer):
    """Quintic smoothstep: 1 for r <= r_inner, 0 for r >= r_outer, C^2 in between."""
    t = np.clip((np.asarray(r, dtype=float) - r_inner) / (r_outer - r_inner), 0.0, 1.0)
    return 1.0 - t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def eval_phantom(spec: PhantomSpec, grid: Grid2) -> ScalarField:
    """Materialize a phantom on the grid (zero on exterior nodes)."""
    X, Y = grid.meshgrid()
    r = np.hypot(X - grid.domain.center[0], Y - grid.domain.center[1])
    chi = _cutoff(r, spec.support_radius, 0.5 * (1.0 + spec.support_radius))
    vals = np.full_like(X, float(spec.background))
    for b in spec.bumps:
        vals = vals + b.amplitude * np.exp(-((X - b.center[0]) ** 2 + (Y - b.center[1]) ** 2)
                                           / (2.0 * b.width**2))
    vals = vals * chi
    vals[~grid.nonexterior()] = 0.0
    return ScalarField(grid, vals)


def phantom_stats(f: ScalarField, gamma: float, pair_budget: int = 2_000_000) -> dict:
    """Min/max over non-exterior nodes plus the discrete C^gamma norm."""
    sup, semi = holder_norm(f, gamma, pair_budget)
    return {
        "min": f.min_nonexterior(),
        "max": f.max_nonexterior(),
        "sup": sup,
        "holder_seminorm": semi,
        "holder_norm": sup + semi,
        "gamma": gamma,
    }


# built-in phantoms used by the demo pipeline
DEFAULT_SIGMA_SPEC = PhantomSpec(background=0.1,
                                 bumps=(GaussianBump((-0.2, -0.1), 0.15, 0.2),),
                                 support_radius=0.8)
DEFAULT_MU_SPEC = PhantomSpec(background=0.2,
                              bumps=(GaussianBump((0.2, 0.1), 0.3, 0.2),),
                              support_radius=0.8)
# second emission phantom for two-media experiments
ALT_SIGMA_SPEC = PhantomSpec(background=0.1,
                             bumps=(GaussianBump((-0.2, -0.1), 0.075, 0.2),),
                             support_radius=0.8)


# ---------------------------------------------------------------------------
# discrete Hölder norm

def holder_norm(f: ScalarField, gamma: float, pair_budget: int = 2_000_000):
    """Discrete C^gamma data: (sup |f|, max pair quotient |f(x)-f(y)| / |x-y|^gamma).

    Pairs are taken over non-exterior nodes: all pairs when their count fits
    in pair_budget, otherwise all pairs of a fixed-stride node subsample
    augmented with every adjacent-node pair (still a subset of all pairs, so
    the result is a lower bound of the full enumeration).  Deterministic for
    fixed inputs.
    """
    if not 0.0 < gamma < 1.0:
        raise ValidationError("gamma must lie in (0, 1)")
    mask = f.grid.nonexterior()
    X, Y = f.grid.meshgrid()
    px = X[mask]
    py = Y[mask]
    vals = f.values[mask]
    n = len(vals)
    sup = float(np.abs(vals).max()) if n else 0.0
    if n < 2:
        return sup, 0.0

    total_pairs = n * (n - 1) // 2
    if total_pairs <= pair_budget:
        sx, sy, sv = px, py, vals
    else:
        stride = int(np.ceil(np.sqrt(total_pairs / pair_budget)))
        sx, sy, sv = px[::stride], py[::stride], vals[::stride]

    semi = 0.0
    block = 256
    m = len(sv)
    for lo in range(0, m - 1, block):
        hi = min(lo + block, m - 1)
        # pairs (i, j) with lo <= i < hi, i < j
        dv = np.abs(sv[lo:hi, None] - sv[None, lo:])
        dd = np.hypot(sx[lo:hi, None] - sx[None, lo:], sy[lo:hi, None] - sy[None, lo:])
        iu = np.triu_indices(hi - lo, k=1, m=m - lo)
        q = dv[iu] / dd[iu] ** gamma
        if q.size:
            semi = max(semi, float(q.max()))

    if total_pairs > pair_budget:
        # adjacent-node pairs keep small-scale variation visible in the subsample
        v = f.values
        for dv, dd in ((np.abs(v[:, 1:] - v[:, :-1]), mask[:, 1:] & mask[:, :-1]),
                       (np.abs(v[1:, :] - v[:-1, :]), mask[1:, :] & mask[:-1, :])):
            if np.any(dd):
                semi = max(semi, float(dv[dd].max()) / f.grid.h**gamma)
    return sup, semi


# ---------------------------------------------------------------------------
# file formats

def save_field_text(f: ScalarField, path):
    with open(path, "w") as fh:
        fh.write(f"# field {f.grid.nx} {f.grid.ny} {f.grid.h!r} {f.grid.origin[0]!r} {f.grid.origin[1]!r}\n")
        for row in f.values:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_field_text(path, domain: DiskDomain = UNIT_DISK) -> ScalarField:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) < 7 or header[0] != "#" or header[1] != "field":
            raise ValidationError(f"{path}: not a field file")
        nx, ny = int(header[2]), int(header[3])
        h, ox, oy = float(header[4]), float(header[5]), float(header[6])
        data = np.loadtxt(fh).reshape(ny, nx)
    grid = Grid2(nx, ny, h, (ox, oy), domain)
    return ScalarField(grid, data)


def save_field_binary(f: ScalarField, path):
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(struct.pack("<IIddd", f.grid.nx, f.grid.ny, f.grid.h,
                             f.grid.origin[0], f.grid.origin[1]))
        fh.write(f.values.astype("<f8").tobytes())


def load_field_binary(path, domain: DiskDomain = UNIT_DISK) -> ScalarField:
    with open(path, "rb") as fh:
        if fh.read(4) != _FIELD_MAGIC:
            raise ValidationError(f"{path}: bad field magic")
        nx, ny, h, ox, oy = struct.unpack("<IIddd", fh.read(32))
        data = np.frombuffer(fh.read(8 * nx * ny), dtype="<f8").reshape(ny, nx)
    grid = Grid2(nx, ny, h, (ox, oy), domain)
    return ScalarField(grid, data.copy())


def save_angular_binary(u: AngularField, path):
    with open(path, "wb") as fh:
        fh.write(_ANGULAR_MAGIC)
        fh.write(struct.pack("<IIIddd", u.grid.nx, u.grid.ny, u.n_dir, u.grid.h,
                             u.grid.origin[0], u.grid.origin[1]))
        fh.write(u.values.astype("<f8").tobytes())


def load_angular_binary(path, domain: DiskDomain = UNIT_DISK) -> AngularField:
    with open(path, "rb") as fh:
        if fh.read(4) != _ANGULAR_MAGIC:
            raise ValidationError(f"{path}: bad angular-field magic")
        nx, ny, n_dir, h, ox, oy = struct.unpack("<IIIddd", fh.read(36))
        data = np.frombuffer(fh.read(8 * nx * ny * n_dir), dtype="<f8").reshape(ny, nx, n_dir)
    grid = Grid2(nx, ny, h, (ox, oy), domain)
    return AngularField(grid, data.copy())


def load_field(path, domain: DiskDomain = UNIT_DISK) -> ScalarField:
    """Load a field from either the text or the binary format (sniffed)."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _FIELD_MAGIC:
        return load_field_binary(path, domain)
    return load_field_text(path, domain)
