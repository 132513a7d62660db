"""Domain types and coordinate maps for the top-of-book diffusion models.

Queues are measured in normalized units: ``x = q_b / sigma_b`` and
``y = q_a / sigma_a`` where the sigmas are per-square-root-second diffusion
scales, so the bid queue, the ask queue and the latent trade-arrival level
``z`` are all unit-variance Brownian motions in seconds.

Most numeric functions here accept floats or numpy arrays and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

# Largest |rho_xy| accepted by model parameters; the wedge degenerates at 1.
MAX_ABS_RHO_XY = 0.99
# Replacement for a zero queue when an imbalance of +/-1 is used as a start.
EDGE_EPS = 1e-9


def compute_imbalance(q_b, q_a):
    """Top-of-book imbalance ``(q_b - q_a) / (q_b + q_a)`` in [-1, 1]."""
    q_b = np.asarray(q_b, dtype=float)
    q_a = np.asarray(q_a, dtype=float)
    if np.any(q_b < 0) or np.any(q_a < 0):
        raise DomainError("queue sizes must be nonnegative")
    total = q_b + q_a
    if np.any(total <= 0):
        raise DomainError("imbalance undefined for an empty book (q_b + q_a == 0)")
    out = (q_b - q_a) / total
    return float(out) if out.ndim == 0 else out


def _check_rho(rho: float, name: str = "rho_xy") -> float:
    rho = float(rho)
    if not (-1.0 < rho < 1.0):
        raise DomainError(f"{name} must lie strictly inside (-1, 1), got {rho}")
    return rho


def phi_max(rho_xy: float) -> float:
    """Opening angle of the decorrelated quadrant, ``arccos(-rho_xy)``."""
    return math.acos(-_check_rho(rho_xy))


@dataclass(frozen=True)
class CorrelationTriple:
    """Pairwise correlations of the bid queue, ask queue and trade process."""

    rho_xy: float
    rho_xz: float
    rho_yz: float

    def __post_init__(self):
        for name in ("rho_xy", "rho_xz", "rho_yz"):
            _check_rho(getattr(self, name), name)
        if self.det <= 0.0:
            raise DomainError(
                f"correlation triple ({self.rho_xy}, {self.rho_xz}, {self.rho_yz}) is not "
                f"positive definite: D = {self.det:.6g} <= 0"
            )

    @property
    def det(self) -> float:
        """Determinant ``D`` of the 3x3 correlation matrix."""
        a, b, c = self.rho_xy, self.rho_xz, self.rho_yz
        return 1.0 - a * a - b * b - c * c + 2.0 * a * b * c

    def matrix(self) -> np.ndarray:
        a, b, c = self.rho_xy, self.rho_xz, self.rho_yz
        return np.array([[1.0, a, b], [a, 1.0, c], [b, c, 1.0]])

    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.matrix())

    def mirrored(self) -> CorrelationTriple:
        """Triple seen after swapping the bid and ask axes."""
        return CorrelationTriple(self.rho_xy, self.rho_yz, self.rho_xz)


def correlation_det(rho_xy: float, rho_xz: float, rho_yz: float) -> float:
    return 1.0 - rho_xy**2 - rho_xz**2 - rho_yz**2 + 2.0 * rho_xy * rho_xz * rho_yz


# ---------------------------------------------------------------------------
# Reset distributions for depleted queues (in shares).


@dataclass(frozen=True)
class LogNormalReset:
    median: float
    dispersion: float = 0.5

    def __post_init__(self):
        if self.median <= 0 or self.dispersion < 0:
            raise DomainError("lognormal reset needs median > 0 and dispersion >= 0")

    def sample(self, rng: np.random.Generator, size=None):
        return self.median * np.exp(self.dispersion * rng.standard_normal(size))

    def describe(self) -> str:
        return f"lognormal:median={self.median!r},dispersion={self.dispersion!r}"


@dataclass(frozen=True)
class EmpiricalReset:
    samples: tuple[float, ...]
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.samples) == 0 or min(self.samples) <= 0:
            raise DomainError("empirical reset distribution needs strictly positive samples")

    def sample(self, rng: np.random.Generator, size=None):
        arr = np.asarray(self.samples, dtype=float)
        return arr[rng.integers(0, arr.size, size=size)]

    @property
    def median(self) -> float:
        return float(np.median(self.samples))

    def describe(self) -> str:
        if self.source:
            return f"empirical:{self.source}"
        return "empirical:" + ";".join(repr(float(s)) for s in self.samples)


ResetDistribution = LogNormalReset | EmpiricalReset


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set of the three-process queue/trade model.

    ``phi0`` is in square-root seconds, ``sigma_b``/``sigma_a`` in shares per
    square-root second, ``reset_*`` draw shares, ``tick``/``spread`` are in
    price units and ``depth`` is the total top-of-book size in shares used to
    turn an imbalance into a state (``None`` means "take it from data").
    """

    corr: CorrelationTriple
    phi0: float = 3.5
    sigma_b: float = 1.0
    sigma_a: float = 1.0
    reset_b: ResetDistribution = LogNormalReset(1.0)
    reset_a: ResetDistribution = LogNormalReset(1.0)
    tick: float = 1.0
    spread: float = 1.0
    depth: float | None = None

    def __post_init__(self):
        if abs(self.corr.rho_xy) > MAX_ABS_RHO_XY:
            raise DomainError(f"|rho_xy| must not exceed {MAX_ABS_RHO_XY}")
        if self.phi0 < 0:
            raise DomainError("phi0 must be nonnegative")
        if self.sigma_b <= 0 or self.sigma_a <= 0:
            raise DomainError("queue diffusion scales must be positive")
        if self.tick <= 0 or self.spread <= 0:
            raise DomainError("tick and spread must be positive")
        if self.depth is not None and self.depth <= 0:
            raise DomainError("depth must be positive")

    def replace(self, **changes) -> ModelParams:
        from dataclasses import replace

        return replace(self, **changes)


# ---------------------------------------------------------------------------
# States.


@dataclass(frozen=True)
class WedgeState:
    x: float
    y: float

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or (self.x == 0 and self.y == 0):
            raise DomainError(f"invalid wedge state ({self.x}, {self.y})")


@dataclass(frozen=True)
class OrthantState:
    x: float
    y: float
    z: float

    def __post_init__(self):
        coords = (self.x, self.y, self.z)
        if min(coords) < 0 or sum(c == 0 for c in coords) > 1:
            raise DomainError(f"invalid orthant state {coords}")

    @property
    def interior(self) -> bool:
        return min(self.x, self.y, self.z) > 0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class SphericalPoint:
    r: float
    theta: float
    phi: float
    polar: bool = False


def state_from_imbalance(imbalance: float, depth: float, params: ModelParams,
                         clamp: bool = False) -> OrthantState:
    """Split ``depth`` shares according to ``imbalance`` and normalize.

    With ``clamp`` a queue that comes out as zero (``|I| == 1``) is replaced
    by ``EDGE_EPS`` so the result can serve as a starting point.
    """
    if depth <= 0:
        raise DomainError("depth must be positive")
    if not -1.0 <= imbalance <= 1.0:
        raise DomainError(f"imbalance {imbalance} outside [-1, 1]")
    x = depth * (1.0 + imbalance) / 2.0 / params.sigma_b
    y = depth * (1.0 - imbalance) / 2.0 / params.sigma_a
    if clamp:
        x = max(x, EDGE_EPS)
        y = max(y, EDGE_EPS)
    return OrthantState(x, y, params.phi0)


# ---------------------------------------------------------------------------
# Two-dimensional wedge.


def decorrelate_2d(x, y, rho_xy: float):
    """Map queue coordinates to uncorrelated ``(alpha, beta)``."""
    rho = _check_rho(rho_xy)
    s = math.sqrt(1.0 - rho * rho)
    return x, (y - rho * np.asarray(x)) / s


def recorrelate_2d(alpha, beta, rho_xy: float):
    rho = _check_rho(rho_xy)
    s = math.sqrt(1.0 - rho * rho)
    return alpha, s * np.asarray(beta) + rho * np.asarray(alpha)


def to_polar(alpha, beta):
    """``alpha = r sin(phi)``, ``beta = r cos(phi)``."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    r = np.hypot(alpha, beta)
    if np.any(r == 0):
        raise DomainError("polar angle undefined at the origin")
    phi = np.arctan2(alpha, beta)
    if r.ndim == 0:
        return float(r), float(phi)
    return r, phi


def uptick_probability(x, y, rho_xy: float):
    """Probability that the ask queue empties before the bid queue.

    Closed form of the harmonic function on the decorrelated wedge: it is 1
    on ``y = 0``, 0 on ``x = 0`` and depends on the state only through
    ``(y - x) / (y + x)``.
    """
    rho = _check_rho(rho_xy)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x < 0) or np.any(y < 0) or np.any(x + y <= 0):
        raise DomainError("uptick probability needs x, y >= 0 and x + y > 0")
    kappa = math.sqrt((1.0 + rho) / (1.0 - rho))
    p = 0.5 * (1.0 - np.arctan(kappa * (y - x) / (y + x)) / math.atan(kappa))
    p = np.clip(p, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def uptick_probability_polar(x, y, rho_xy: float):
    """Same probability via the polar solution ``phi / phi_max``."""
    alpha, beta = decorrelate_2d(x, y, rho_xy)
    _, phi = to_polar(alpha, beta)
    return phi / phi_max(rho_xy)


# ---------------------------------------------------------------------------
# Three-dimensional orthant.


def whitening_matrix(corr: CorrelationTriple) -> np.ndarray:
    """Matrix ``A`` with ``A C A^T = I`` mapping (x, y, z) to (alpha, beta, gamma)."""
    a, b, c = corr.rho_xy, corr.rho_xz, corr.rho_yz
    s = math.sqrt(1.0 - a * a)
    sd = math.sqrt(corr.det)
    return np.array([
        [1.0, 0.0, 0.0],
        [-a / s, 1.0 / s, 0.0],
        [(a * c - b) / (s * sd), (a * b - c) / (s * sd), s / sd],
    ])


def decorrelate_3d(x, y, z, corr: CorrelationTriple):
    """Map (x, y, z) to coordinates in which the generator is the Laplacian."""
    a, b, c = corr.rho_xy, corr.rho_xz, corr.rho_yz
    s = math.sqrt(1.0 - a * a)
    sd = math.sqrt(corr.det)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    alpha = x
    beta = (y - a * x) / s
    gamma = ((a * c - b) * x + (a * b - c) * y + (1.0 - a * a) * z) / (s * sd)
    if alpha.ndim == 0:
        return float(alpha), float(beta), float(gamma)
    return alpha, beta, gamma


def recorrelate_3d(alpha, beta, gamma, corr: CorrelationTriple):
    inv = np.linalg.inv(whitening_matrix(corr))
    v = inv @ np.array([np.asarray(alpha, float), np.asarray(beta, float), np.asarray(gamma, float)])
    if v.ndim == 1:
        return float(v[0]), float(v[1]), float(v[2])
    return v[0], v[1], v[2]


def to_spherical(alpha: float, beta: float, gamma: float) -> SphericalPoint:
    """Spherical coordinates with the pole on the gamma axis.

    At the poles the azimuth is undefined; it is reported as 0 and the point
    is flagged ``polar``.
    """
    rho = math.hypot(alpha, beta)
    r = math.hypot(rho, gamma)
    if r == 0:
        raise DomainError("spherical coordinates undefined at the origin")
    theta = math.atan2(rho, gamma)
    if rho == 0:
        return SphericalPoint(r, theta, 0.0, polar=True)
    return SphericalPoint(r, theta, math.atan2(alpha, beta))


def from_spherical(point: SphericalPoint) -> tuple[float, float, float]:
    st = math.sin(point.theta)
    return (point.r * st * math.sin(point.phi),
            point.r * st * math.cos(point.phi),
            point.r * math.cos(point.theta))


def zeta_of_theta(theta):
    """``ln tan(theta / 2)``: maps (0, pi) onto the real line."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(theta >= np.pi):
        raise DomainError("zeta is finite only for theta in (0, pi)")
    out = np.log(np.tan(theta / 2.0))
    return float(out) if out.ndim == 0 else out


def theta_of_zeta(zeta):
    out = 2.0 * np.arctan(np.exp(np.asarray(zeta, dtype=float)))
    return float(out) if out.ndim == 0 else out


def boundary_coefficients(rho_uv: float, rho_uw: float, rho_vw: float) -> tuple[float, float]:
    """``(c1, c2)`` with ``cot(theta) = c1 sin(phi) + c2 cos(phi)`` on ``w = 0``.

    Coordinates ``(u, v)`` span the wedge and ``w`` is the third process.
    """
    det = correlation_det(rho_uv, rho_uw, rho_vw)
    if det <= 0:
        raise DomainError(f"correlation matrix not positive definite (D = {det:.6g})")
    sd = math.sqrt(det)
    c1 = -rho_uw * math.sqrt(1.0 - rho_uv * rho_uv) / sd
    c2 = (rho_uv * rho_uw - rho_vw) / sd
    return c1, c2


def boundary_Z(phi, corr: CorrelationTriple):
    """Upper edge ``zeta = Z(phi)`` of the strip, the image of the plane z = 0.

    ``Z = ln tan(Theta / 2)`` with ``cot(Theta) = c1 sin(phi) + c2 cos(phi)``;
    since ``tan(Theta / 2) = csc(Theta) - cot(Theta)`` this is ``-asinh(cot)``.
    """
    c1, c2 = boundary_coefficients(corr.rho_xy, corr.rho_xz, corr.rho_yz)
    phi = np.asarray(phi, dtype=float)
    out = -np.arcsinh(c1 * np.sin(phi) + c2 * np.cos(phi))
    return float(out) if out.ndim == 0 else out


def strip_coordinates(x, y, z, corr: CorrelationTriple):
    """``(phi, zeta)`` of orthant points, with the pole on the x = y = 0 edge."""
    alpha, beta, gamma = decorrelate_3d(x, y, z, corr)
    rho = np.hypot(alpha, beta)
    if np.any(rho == 0):
        raise DomainError("points on the x = y = 0 edge have no azimuth")
    phi = np.arctan2(alpha, beta)
    zeta = -np.arcsinh(np.asarray(gamma) / rho)
    return phi, zeta
