"""Boundary geometry for doubly-connected scatterer cross sections.

Three parametric families of closed curves are supported, tagged by
integer class labels: peanut (1), kite (2), and star (3).  All curves
live inside a disk of radius ``outer_radius`` centered at the origin
and are sampled on the uniform grid tau_k = 2*pi*k/T.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import DegenerateShapeError, SamplingStuckError, ValidationError
from .serial import dumps_compact

STAR_Q = 5  # number of cosine/sine harmonics in the star family

# sampling ranges for the random families
PEANUT_AXIS_RANGE = (0.02, 0.20)
KITE_ALPHA_RANGE = (0.15, 0.35)
KITE_BETA_RANGE = (0.05, 0.15)
KITE_GAMMA_RANGE = (0.15, 0.35)
STAR_BASE_RANGE = (0.10, 0.40)
STAR_HARMONIC_RANGE = (-1.0, 1.0)
CENTER_RANGE = (-0.2, 0.2)
IMPEDANCE_RANGE = (0.1, 10.0)

MIN_RADIAL = 0.02     # validation floor on rho(tau) for radial families
MAX_POINT_NORM = 0.75  # boundary must stay strictly inside this radius
MAX_REJECTIONS = 1000  # consecutive rejected candidates before giving up


class ShapeClass(IntEnum):
    PEANUT = 1
    KITE = 2
    STAR = 3


_N_COEFFS = {ShapeClass.PEANUT: 2, ShapeClass.KITE: 3, ShapeClass.STAR: 2 * STAR_Q + 1}


@dataclass(frozen=True)
class ScatterConfig:
    """Physical constants and grid sizes for the oblique-incidence setup.

    The wavenumber ``kappa0`` is derived from the other constants on
    construction and satisfies kappa0**2 = omega**2 * mu0 * eps0 * (1 - cos(theta)**2).
    """

    omega: float = 5.0
    theta: float = math.pi / 6
    phis: tuple[float, ...] = (0.0,)
    eps0: float = 1.0
    mu0: float = 1.0
    eps1: float = 2.0
    mu1: float = 1.0
    outer_radius: float = 0.8
    t_boundary: int = 128
    t0: int = 32
    c0: int = 2
    kappa0: float = field(init=False)

    def __post_init__(self):
        if self.omega <= 0:
            raise ValidationError("omega must be positive")
        if not 0.0 < self.theta < math.pi:
            raise ValidationError("theta must lie strictly between 0 and pi")
        for name in ("eps0", "mu0", "eps1", "mu1"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.t_boundary < 4:
            raise ValidationError("boundary grid needs at least 4 nodes")
        if self.t0 not in (32, 128):
            raise ValidationError("t0 must be 32 or 128")
        if self.c0 not in (2, 4, 8):
            raise ValidationError("c0 must be 2, 4, or 8")
        phis = tuple(float(p) for p in self.phis)
        if not phis or any(p not in (0.0, math.pi) for p in phis):
            raise ValidationError("phis must be a nonempty subset of {0, pi}")
        if len(set(phis)) != len(phis):
            raise ValidationError("phis must not repeat")
        if self.c0 == 8 and phis != (0.0, math.pi):
            raise ValidationError("c0=8 requires phis=(0, pi)")
        if self.c0 in (2, 4) and len(phis) != 1:
            raise ValidationError(f"c0={self.c0} requires a single phi")
        object.__setattr__(self, "phis", phis)
        kappa0 = self.omega * math.sqrt(self.mu0 * self.eps0) * math.sin(self.theta)
        object.__setattr__(self, "kappa0", kappa0)
        # consistency check of the dispersion relation
        target = self.omega**2 * self.mu0 * self.eps0 * (1.0 - math.cos(self.theta) ** 2)
        if abs(kappa0**2 - target) > 1e-12 * max(1.0, abs(target)):
            raise ValidationError("kappa0 inconsistent with omega, theta, mu0, eps0")


def boundary_grid(t: int) -> np.ndarray:
    """Uniform parameter grid tau_k = 2*pi*k/T, k = 0..T-1.

    Parameters
    ----------
    t : int
        Number of nodes, at least 4.

    Returns
    -------
    ndarray of shape (t,)
    """
    if t < 4:
        raise ValidationError("grid size must be at least 4")
    return 2.0 * np.pi * np.arange(t, dtype=np.float64) / t


@dataclass
class BoundaryShape:
    """One obstacle boundary: class tag, coefficients, center, impedance.

    Coefficient layout per class:

    * peanut: (alpha, beta), rho(tau) = sqrt(alpha*cos(tau)**2 + beta*sin(tau)**2)
    * kite:   (alpha, beta, gamma), x(tau) = (alpha*cos(tau) + beta*cos(2*tau),
      gamma*sin(tau)) + center
    * star:   (alpha0, alpha1..alpha5, beta1..beta5),
      rho(tau) = alpha0 * (1 + (1/(2*Q)) * sum_q alpha_q*cos(q*tau) + beta_q*sin(q*tau))

    ``check_ranges=False`` skips the sampling-range checks on center and
    impedance; raw network predictions use it so that out-of-range values
    survive untouched and can be flagged downstream.
    """

    class_tag: ShapeClass
    coeffs: np.ndarray
    center: np.ndarray
    impedance: float
    check_ranges: bool = True

    def __post_init__(self):
        self.class_tag = ShapeClass(self.class_tag)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.center = np.asarray(self.center, dtype=np.float64)
        n = _N_COEFFS[self.class_tag]
        if self.coeffs.shape != (n,):
            raise ValidationError(
                f"{self.class_tag.name.lower()} expects {n} coefficients, "
                f"got shape {self.coeffs.shape}"
            )
        if self.center.shape != (2,):
            raise ValidationError("center must be a 2-vector")
        if not np.all(np.isfinite(self.coeffs)) or not np.all(np.isfinite(self.center)):
            raise ValidationError("coefficients and center must be finite")
        if not math.isfinite(self.impedance):
            raise ValidationError("impedance must be finite")
        if self.check_ranges:
            lo, hi = CENTER_RANGE
            if np.any(self.center < lo) or np.any(self.center > hi):
                raise ValidationError("center outside sampling range")
            lo, hi = IMPEDANCE_RANGE
            if not lo <= self.impedance <= hi:
                raise ValidationError("impedance outside sampling range")


def _radial_profile(shape: BoundaryShape, tau: np.ndarray):
    """rho(tau) and rho'(tau) for the radial families; peanut returns rho**2
    in the first slot of the extras tuple so callers can detect sign problems
    before the square root."""
    tag = shape.class_tag
    if tag == ShapeClass.PEANUT:
        alpha, beta = shape.coeffs
        c, s = np.cos(tau), np.sin(tau)
        rho_sq = alpha * c * c + beta * s * s
        rho = np.sqrt(np.maximum(rho_sq, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            drho = np.where(rho > 0.0, (beta - alpha) * s * c / np.where(rho > 0, rho, 1.0), 0.0)
        return rho, drho, rho_sq
    if tag == ShapeClass.STAR:
        coeffs = shape.coeffs
        alpha0 = coeffs[0]
        acc = np.ones_like(tau)
        dacc = np.zeros_like(tau)
        for q in range(1, STAR_Q + 1):
            aq = coeffs[q]
            bq = coeffs[STAR_Q + q]
            acc = acc + (aq * np.cos(q * tau) + bq * np.sin(q * tau)) / (2.0 * STAR_Q)
            dacc = dacc + q * (-aq * np.sin(q * tau) + bq * np.cos(q * tau)) / (2.0 * STAR_Q)
        rho = alpha0 * acc
        drho = alpha0 * dacc
        return rho, drho, rho
    raise ValidationError(f"{tag.name.lower()} has no radial profile")


def eval_curve(shape: BoundaryShape, tau, allow_degenerate: bool = False):
    """Evaluate boundary points and tangent derivatives.

    Parameters
    ----------
    shape : BoundaryShape
    tau : array_like of shape (m,)
        Parameter values.
    allow_degenerate : bool
        When False (default) a non-positive radial profile raises
        DegenerateShapeError.  When True the peanut profile is clamped at
        zero and the star profile is used as computed, so a curve is
        always produced (used when drawing raw predictions).

    Returns
    -------
    points, deriv : ndarray of shape (m, 2)
        x(tau) and x'(tau).
    """
    tau = np.asarray(tau, dtype=np.float64)
    if tau.ndim != 1:
        raise ValidationError("tau must be one-dimensional")
    tag = shape.class_tag
    if tag == ShapeClass.KITE:
        alpha, beta, gamma = shape.coeffs
        c, s = np.cos(tau), np.sin(tau)
        x = alpha * c + beta * np.cos(2.0 * tau) + shape.center[0]
        y = gamma * s + shape.center[1]
        dx = -alpha * s - 2.0 * beta * np.sin(2.0 * tau)
        dy = gamma * c
        return np.stack([x, y], axis=1), np.stack([dx, dy], axis=1)

    rho, drho, signed = _radial_profile(shape, tau)
    if not allow_degenerate and np.any(signed <= 0.0):
        raise DegenerateShapeError(
            f"{tag.name.lower()} radial profile non-positive at some tau"
        )
    c, s = np.cos(tau), np.sin(tau)
    x = rho * c + shape.center[0]
    y = rho * s + shape.center[1]
    dx = drho * c - rho * s
    dy = drho * s + rho * c
    return np.stack([x, y], axis=1), np.stack([dx, dy], axis=1)


def _cross2(ux, uy, vx, vy):
    return ux * vy - uy * vx


def polygon_is_simple(points: np.ndarray) -> bool:
    """True when the closed polyline through ``points`` has no proper
    self-crossing.  Adjacent edges (which share a vertex) are skipped;
    the test uses strict orientation signs, so exact collinear touching
    of non-adjacent edges is not flagged."""
    points = np.asarray(points, dtype=np.float64)
    t = len(points)
    if t < 3:
        raise ValidationError("polygon needs at least 3 vertices")
    a = points
    e = np.roll(points, -1, axis=0) - points  # edge vectors
    # d1[i, j] = cross(e_i, a_j - a_i), d2[i, j] = cross(e_i, b_j - a_i)
    diff = a[None, :, :] - a[:, None, :]
    d1 = _cross2(e[:, None, 0], e[:, None, 1], diff[..., 0], diff[..., 1])
    b_diff = diff + e[None, :, :]
    d2 = _cross2(e[:, None, 0], e[:, None, 1], b_diff[..., 0], b_diff[..., 1])
    crossing = (d1 * d2 < 0.0) & (d1.T * d2.T < 0.0)
    idx = np.arange(t)
    gap = (idx[None, :] - idx[:, None]) % t
    crossing &= (gap != 0) & (gap != 1) & (gap != t - 1)
    return not bool(np.any(crossing))


@dataclass(frozen=True)
class ShapeDiagnostics:
    ok: bool
    reason: str | None
    min_radial: float | None
    max_norm: float
    simple: bool


def validate_shape(shape: BoundaryShape, config: ScatterConfig) -> ShapeDiagnostics:
    """Check a shape against the admissibility rules on the boundary grid.

    Rules: radial families need min rho > MIN_RADIAL on the grid; every
    node must satisfy |x(tau)| < MAX_POINT_NORM; the polyline through the
    nodes must be simple.
    """
    tau = boundary_grid(config.t_boundary)
    min_radial = None
    if shape.class_tag in (ShapeClass.PEANUT, ShapeClass.STAR):
        rho, _, signed = _radial_profile(shape, tau)
        min_radial = float(np.min(signed)) if shape.class_tag == ShapeClass.STAR else float(
            np.min(np.sqrt(np.maximum(signed, 0.0)))
        )
        if min_radial <= MIN_RADIAL:
            return ShapeDiagnostics(False, "radial profile too small", min_radial, math.nan, False)
    points, _ = eval_curve(shape, tau, allow_degenerate=True)
    max_norm = float(np.max(np.hypot(points[:, 0], points[:, 1])))
    if max_norm >= MAX_POINT_NORM:
        return ShapeDiagnostics(False, "boundary too close to outer circle", min_radial, max_norm, True)
    simple = polygon_is_simple(points)
    if not simple:
        return ShapeDiagnostics(False, "boundary self-intersects", min_radial, max_norm, False)
    return ShapeDiagnostics(True, None, min_radial, max_norm, True)


def draw_shape_candidate(class_tag, rng: np.random.Generator,
                         fixed_impedance: float | None = None) -> BoundaryShape:
    """Draw one unvalidated candidate from the class sampling ranges.

    The impedance draw is always consumed, even when ``fixed_impedance``
    overrides it, so candidate sequences match across the two modes.
    """
    tag = ShapeClass(class_tag)
    if tag == ShapeClass.PEANUT:
        coeffs = rng.uniform(*PEANUT_AXIS_RANGE, size=2)
    elif tag == ShapeClass.KITE:
        coeffs = np.array([
            rng.uniform(*KITE_ALPHA_RANGE),
            rng.uniform(*KITE_BETA_RANGE),
            rng.uniform(*KITE_GAMMA_RANGE),
        ])
    else:
        coeffs = np.concatenate([
            [rng.uniform(*STAR_BASE_RANGE)],
            rng.uniform(*STAR_HARMONIC_RANGE, size=2 * STAR_Q),
        ])
    center = rng.uniform(*CENTER_RANGE, size=2)
    impedance = float(rng.uniform(*IMPEDANCE_RANGE))
    if fixed_impedance is not None:
        impedance = float(fixed_impedance)
    return BoundaryShape(tag, coeffs, center, impedance, check_ranges=False)


def sample_shape(class_tag, rng: np.random.Generator, config: ScatterConfig,
                 fixed_impedance: float | None = None) -> BoundaryShape:
    """Rejection-sample an admissible shape of the given class."""
    rejected = 0
    while True:
        cand = draw_shape_candidate(class_tag, rng, fixed_impedance)
        if validate_shape(cand, config).ok:
            return cand
        rejected += 1
        if rejected > MAX_REJECTIONS:
            raise SamplingStuckError(
                f"{ShapeClass(class_tag).name.lower()}: {rejected} consecutive rejections"
            )


def boundary_discrepancy(shape_a: BoundaryShape, shape_b: BoundaryShape, t: int) -> float:
    """Root-mean-square distance between two boundaries at matched tau nodes.

    For identical shapes translated by a vector v this equals |v|; for
    concentric circles of radii r1, r2 it equals |r1 - r2|.
    """
    tau = boundary_grid(t)
    pa, _ = eval_curve(shape_a, tau, allow_degenerate=True)
    pb, _ = eval_curve(shape_b, tau, allow_degenerate=True)
    d = pa - pb
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def shape_to_targets(shape: BoundaryShape, include_impedance: bool) -> np.ndarray:
    """Flatten a shape into the regression target vector
    (coeffs..., x0, y0[, impedance])."""
    parts = [shape.coeffs, shape.center]
    if include_impedance:
        parts.append(np.array([shape.impedance]))
    return np.concatenate(parts)


def targets_to_shape(class_tag, values, fixed_impedance: float | None = None,
                     check_ranges: bool = True) -> BoundaryShape:
    """Inverse of shape_to_targets.  The vector length decides whether the
    impedance is included; when absent, ``fixed_impedance`` must be given."""
    tag = ShapeClass(class_tag)
    values = np.asarray(values, dtype=np.float64)
    n = _N_COEFFS[tag]
    if values.shape == (n + 3,):
        impedance = float(values[n + 2])
    elif values.shape == (n + 2,):
        if fixed_impedance is None:
            raise ValidationError("target vector omits impedance and no fixed value given")
        impedance = float(fixed_impedance)
    else:
        raise ValidationError(
            f"expected {n + 2} or {n + 3} target values for {tag.name.lower()}, got {values.shape}"
        )
    return BoundaryShape(tag, values[:n], values[n:n + 2], impedance, check_ranges=check_ranges)


def shape_to_json(shape: BoundaryShape) -> str:
    """Serialize to a JSON object with 17-significant-digit doubles."""
    return dumps_compact({
        "class": int(shape.class_tag),
        "coeffs": [float(c) for c in shape.coeffs],
        "center": [float(c) for c in shape.center],
        "impedance": float(shape.impedance),
    })


def shape_from_json(text: str, check_ranges: bool = True) -> BoundaryShape:
    obj = json.loads(text)
    try:
        return BoundaryShape(obj["class"], np.asarray(obj["coeffs"], dtype=np.float64),
                             np.asarray(obj["center"], dtype=np.float64),
                             float(obj["impedance"]), check_ranges=check_ranges)
    except KeyError as exc:
        raise ValidationError(f"shape JSON missing key {exc}") from exc
