"""Strictly convex disk geometry: level set, normals, backward exit times, phase-space boundaries.

The domain is a disk (default: unit disk at the origin).  Its defining
function is xi(x) = |x - center|^2 - radius^2, negative inside, zero on the
boundary, with Hessian 2*I so the convexity constant is D0 = 2.  All exit
times are closed-form ray/circle intersections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ValidationError

# points with xi(x) <= TOL_GEOM count as inside the closed disk
TOL_GEOM = 1e-12
# |theta . n| below this is a grazing ray and gets excluded from Gamma+-
TOL_GRAZE = 1e-8

GAMMA_MINUS = "gamma_minus"
GAMMA_PLUS = "gamma_plus"


@dataclass(frozen=True)
class DiskDomain:
    """Disk {x : |x - center|^2 < radius^2} with smooth strictly convex boundary."""

    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValidationError(f"radius must be positive, got {self.radius}")

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def convexity_constant(self) -> float:
        """Lower bound D0 on the Hessian quadratic form of xi (exactly 2 for the disk)."""
        return 2.0

    def xi(self, x, y):
        """Defining level-set function, vectorized over coordinate arrays."""
        return (np.asarray(x) - self.center[0]) ** 2 + (np.asarray(y) - self.center[1]) ** 2 - self.radius**2

    def contains(self, x, y, tol=TOL_GEOM):
        return self.xi(x, y) <= tol

    def normal(self, x, y):
        """Unit outward normal, valid on the boundary (radial elsewhere)."""
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        return dx / self.radius, dy / self.radius

    def boundary_point(self, beta):
        """Boundary parametrization x(beta) = center + radius*(cos beta, sin beta)."""
        beta = np.asarray(beta, dtype=float)
        return self.center[0] + self.radius * np.cos(beta), self.center[1] + self.radius * np.sin(beta)

    def boundary_angle(self, x, y):
        """Inverse of boundary_point for points on (or near) the boundary."""
        return np.mod(np.arctan2(np.asarray(y) - self.center[1], np.asarray(x) - self.center[0]), 2.0 * np.pi)


UNIT_DISK = DiskDomain()


@dataclass(frozen=True)
class PhasePoint:
    """Point (x, theta) of the phase space, |theta| = 1."""

    x: tuple[float, float]
    theta: tuple[float, float]

    def __post_init__(self):
        norm = np.hypot(self.theta[0], self.theta[1])
        if abs(norm - 1.0) > 1e-12:
            raise ValidationError(f"direction must be a unit vector, |theta| = {norm!r}")


def exit_time_backward(domain: DiskDomain, px, py, tx, ty):
    """Vectorized backward exit time tau-(x, theta) for points of the closed disk.

    Closed form for the disk: with y = x - center and b = y . theta,
    tau- = b + sqrt(b^2 + radius^2 - |y|^2).  The discriminant is clamped at
    zero to absorb roundoff for points on the boundary.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    yx = px - domain.center[0]
    yy = py - domain.center[1]
    b = yx * tx + yy * ty
    disc = b * b + domain.radius**2 - (yx * yx + yy * yy)
    tau = b + np.sqrt(np.maximum(disc, 0.0))
    return np.maximum(tau, 0.0)


def exit_backward(domain: DiskDomain, p: PhasePoint):
    """Backward exit time and exit point: x - tau*theta lies on the boundary.

    Raises DomainError when x is outside the closed disk beyond tolerance.
    """
    x, y = p.x
    if domain.xi(x, y) > 1e-9:
        raise DomainError(f"point {p.x} lies outside the closed domain")
    tau = float(exit_time_backward(domain, x, y, p.theta[0], p.theta[1]))
    x_minus = (x - tau * p.theta[0], y - tau * p.theta[1])
    return tau, x_minus


def sample_gamma(domain: DiskDomain, n_boundary: int, n_dir: int, sign: str,
                 tol_graze: float = TOL_GRAZE) -> list[PhasePoint]:
    """Sample the incoming (sign='minus') or outgoing (sign='plus') boundary set.

    Boundary positions beta_i and directions theta_k are uniform on [0, 2pi);
    pairs are kept when theta . n(x) has the requested sign with magnitude
    above tol_graze (grazing rays excluded).
    """
    if n_boundary < 4 or n_dir < 4:
        raise ValidationError("n_boundary and n_dir must both be >= 4")
    if sign not in ("minus", "plus"):
        raise ValidationError(f"sign must be 'minus' or 'plus', got {sign!r}")
    betas = 2.0 * np.pi * np.arange(n_boundary) / n_boundary
    phis = 2.0 * np.pi * np.arange(n_dir) / n_dir
    want = -1.0 if sign == "minus" else 1.0
    points = []
    for beta in betas:
        bx, by = domain.boundary_point(beta)
        nx, ny = domain.normal(bx, by)
        for phi in phis:
            tx, ty = np.cos(phi), np.sin(phi)
            dot = tx * nx + ty * ny
            if want * dot > tol_graze:
                points.append(PhasePoint((float(bx), float(by)), (float(tx), float(ty))))
    return points
