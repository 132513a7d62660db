"""Generalized Fourier series solver for the three-process hitting problem.

After decorrelation the hitting probability is harmonic, homogeneous of
degree zero, and lives on the unit sphere.  Two of the three faces of the
orthant are planes through a common edge; taking that edge as the pole, the
map ``zeta = ln tan(theta / 2)`` turns the spherical triangle into the strip
``0 <= phi <= phi_max``, ``zeta <= Z(phi)`` on which the problem is the flat
Laplace equation.  The basis ``sin(k_n phi) exp(k_n zeta)`` with
``k_n = pi n / phi_max`` vanishes on both side walls, and the coefficients
come from the Galerkin system ``J c = I`` on the curved edge.

Two refinements on top of the plain expansion:

* corner terms: the boundary data jumps where the curved edge meets the
  walls.  In the variable ``s = exp(k_1 (zeta + i phi))`` the walls are the
  real axis and each corner has a closed-form harmonic "angle" function that
  vanishes on both walls.  Subtracting these leaves continuous data for the
  series, which then converges quickly.
* frame choice: any of the three orthant edges can serve as the pole.  A
  steeply tilted ``Z(phi)`` makes the exponentials span many orders of
  magnitude, so by default every frame is solved and each state is
  evaluated in the one with the smallest local error estimate.
"""

from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IllConditionedError
from .model import CorrelationTriple, boundary_coefficients

log = logging.getLogger(__name__)

DEFAULT_MODES = 40
COND_LIMIT = 1e12
LSTSQ_RCOND = 1e-13
FORMAT_VERSION = 1
ALTERNATE_FACTOR = 10.0


class EventKind(enum.Enum):
    PRICE_UP = "PriceUp"
    PRICE_DOWN = "PriceDown"
    NEAR_SIDE_TRADE = "NearSideTrade"

    @property
    def face(self) -> int:
        """Index of the coordinate whose zero-crossing is this event."""
        return {EventKind.PRICE_DOWN: 0, EventKind.PRICE_UP: 1, EventKind.NEAR_SIDE_TRADE: 2}[self]


# Pole edges: the first two axes span the wedge, the third one is the floor.
FRAMES: dict[str, tuple[int, int, int]] = {
    "xy": (0, 1, 2),
    "xz": (0, 2, 1),
    "yz": (1, 2, 0),
}


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Legendre rule on ``[0, phi_max]``."""

    nodes: int

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError("quadrature needs at least two nodes")

    @classmethod
    def for_modes(cls, n_modes: int) -> QuadratureSpec:
        return cls(max(4 * n_modes, 32))

    def rule(self, upper: float) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        half = 0.5 * upper
        return half * (x + 1.0), half * w


class _Geometry:
    """Strip geometry of one pole frame for a given correlation triple."""

    def __init__(self, corr: CorrelationTriple, frame: str):
        if frame not in FRAMES:
            raise ValueError(f"unknown frame {frame!r}; choose from {sorted(FRAMES)}")
        self.frame = frame
        self.axes = FRAMES[frame]
        m = corr.matrix()
        u, v, w = self.axes
        self.rho_uv, self.rho_uw, self.rho_vw = m[u, v], m[u, w], m[v, w]
        self.det = corr.det
        self.c1, self.c2 = boundary_coefficients(self.rho_uv, self.rho_uw, self.rho_vw)
        self.phi_max = math.acos(-self.rho_uv)
        self.k1 = math.pi / self.phi_max
        z0, z1 = self.Z(0.0), self.Z(self.phi_max)
        # Corner positions in the s-plane and the angle at which the curved
        # edge leaves each of them.
        self.a = math.exp(self.k1 * z0)
        self.b = math.exp(self.k1 * z1)
        self.beta_a = math.atan2(1.0, self.dZ(0.0))
        self.alpha_b = math.atan2(1.0, self.dZ(self.phi_max))

    def Z(self, phi):
        return -np.arcsinh(self.c1 * np.sin(phi) + self.c2 * np.cos(phi))

    @functools.cached_property
    def z_max(self) -> float:
        """Exact maximum of ``Z`` on ``[0, phi_max]``."""
        crit = math.atan2(self.c1, self.c2)  # zero of the derivative of c1 sin + c2 cos
        cands = [0.0, self.phi_max] + [c for c in (crit, crit + math.pi, crit - math.pi)
                                       if 0.0 < c < self.phi_max]
        return float(max(self.Z(c) for c in cands))

    def dZ(self, phi):
        c = self.c1 * np.sin(phi) + self.c2 * np.cos(phi)
        return -(self.c1 * np.cos(phi) - self.c2 * np.sin(phi)) / np.sqrt(1.0 + c * c)

    def corner_terms(self, phi, zeta):
        s = np.exp(self.k1 * (np.asarray(zeta) + 1j * np.asarray(phi)))
        s_a = (math.pi - np.angle(s - self.a)) / (math.pi - self.beta_a)
        s_b = np.angle(s + self.b) / self.alpha_b
        return s_a, s_b

    def strip(self, xyz: np.ndarray):
        """``(phi, zeta)`` of points given as an array of shape (..., 3)."""
        u, v, w = (xyz[..., i] for i in self.axes)
        s = math.sqrt(1.0 - self.rho_uv ** 2)
        alpha = u
        beta = (v - self.rho_uv * u) / s
        gamma = ((self.rho_uv * self.rho_vw - self.rho_uw) * u
                 + (self.rho_uv * self.rho_uw - self.rho_vw) * v
                 + s * s * w) / (s * math.sqrt(self.det))
        rho = np.hypot(alpha, beta)
        with np.errstate(divide="ignore", invalid="ignore"):
            zeta = -np.arcsinh(gamma / rho)
        return np.arctan2(alpha, beta), zeta

    def face_points(self, phi) -> np.ndarray:
        """Points ``(x, y, z)`` on the floor face at azimuths ``phi``."""
        s = math.sqrt(1.0 - self.rho_uv ** 2)
        alpha = np.sin(phi)
        beta = np.cos(phi)
        pts = np.zeros(np.shape(phi) + (3,))
        pts[..., self.axes[0]] = alpha
        pts[..., self.axes[1]] = s * beta + self.rho_uv * alpha
        return pts


@functools.lru_cache(maxsize=64)
def _geometry(corr: CorrelationTriple, frame: str) -> _Geometry:
    return _Geometry(corr, frame)


def _event_role(event: EventKind, frame: str) -> str:
    u, v, w = FRAMES[frame]
    face = event.face
    return "u" if face == u else "v" if face == v else "w"


def _base_values(geo: _Geometry, role: str, phi, zeta, corner_terms: bool, base_term: bool = True):
    """Closed-form part of the solution (zero when neither term is used)."""
    phi = np.asarray(phi, dtype=float)
    if corner_terms:
        s_a, s_b = geo.corner_terms(phi, zeta)
    else:
        s_a = s_b = 0.0
    t = phi / geo.phi_max
    if role == "u":
        out = (1.0 - t if base_term else 0.0) - s_a
    elif role == "v":
        out = (t if base_term else 0.0) - s_b
    else:
        out = s_a + s_b
    return np.broadcast_to(out, np.broadcast(phi, np.asarray(zeta)).shape).astype(float)


def _design(geo: _Geometry, n_modes: int, quad: QuadratureSpec):
    if quad.nodes < 2 * n_modes:
        raise ValueError(f"quadrature needs at least 2N = {2 * n_modes} nodes, got {quad.nodes}")
    phi, w = quad.rule(geo.phi_max)
    z = geo.Z(phi)
    z_ref = geo.z_max
    k = geo.k1 * np.arange(1, n_modes + 1)
    A = np.sin(np.outer(phi, k)) * np.exp(np.outer(z - z_ref, k))
    return phi, w, z, z_ref, k, A


def _edge_data(geo: _Geometry, role: str, phi, z, corner_terms: bool) -> np.ndarray:
    """Values the series must take on the curved edge."""
    target = 1.0 if role == "w" else 0.0
    return target - _base_values(geo, role, phi, z, corner_terms)


def assemble_system(corr: CorrelationTriple, event: EventKind, n_modes: int,
                    quad: QuadratureSpec | None = None, *, frame: str = "xy",
                    corner_terms: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Galerkin matrix ``J`` and right-hand side ``I`` for one event.

    Basis functions are rescaled by ``exp(-k_n Z_max)`` so no entry
    overflows; with ``Z == 0`` this is the unscaled system.  For price-move
    events the right-hand side is the projection of ``-(wedge term)`` on the
    curved edge.
    """
    if n_modes < 1:
        raise ValueError("need at least one mode")
    quad = quad or QuadratureSpec.for_modes(n_modes)
    geo = _geometry(corr, frame)
    phi, w, z, _, _, A = _design(geo, n_modes, quad)
    g = _edge_data(geo, _event_role(event, frame), phi, z, corner_terms)
    Aw = A * w[:, None]
    J = Aw.T @ A
    I = Aw.T @ g
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(I))):
        raise IllConditionedError("non-finite Galerkin entries; reduce the number of modes")
    return J, I


def solve_coefficients(J: np.ndarray, I: np.ndarray) -> np.ndarray:
    """Solve ``J c = I`` after symmetric diagonal scaling."""
    J = np.asarray(J, dtype=float)
    I = np.asarray(I, dtype=float)
    d = np.sqrt(np.abs(np.diag(J)))
    d[d == 0] = 1.0
    Js = J / np.outer(d, d)
    cond = np.linalg.cond(Js)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IllConditionedError(
            f"Galerkin matrix condition estimate {cond:.3g} exceeds {COND_LIMIT:.0e}; "
            "reduce the number of modes or increase the quadrature order"
        )
    c = np.linalg.solve(Js, I / d) / d
    resid = np.max(np.abs(J @ c - I))
    scale = max(np.max(np.abs(I)), np.finfo(float).tiny)
    if resid > 1e-8 * scale:
        raise IllConditionedError(f"residual {resid:.3g} too large relative to |I| = {scale:.3g}")
    return c


def _least_squares(A: np.ndarray, g: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Same minimizer as ``J^{-1} I`` without forming ``J``.

    Singular directions below ``LSTSQ_RCOND`` of the largest are dropped, so
    adding modes past the conditioning limit cannot blow up the coefficients.
    Returns coefficients, condition number of the retained part of the
    weighted design matrix and the weighted RMS misfit on the edge.
    """
    sw = np.sqrt(w)
    Aw = A * sw[:, None]
    colnorm = np.linalg.norm(Aw, axis=0)
    colnorm[colnorm == 0] = 1.0
    c, _, rank, sv = np.linalg.lstsq(Aw / colnorm, g * sw, rcond=LSTSQ_RCOND)
    if rank == 0 or not np.all(np.isfinite(c)):
        raise IllConditionedError("design matrix has no usable singular values")
    cond = sv[0] / sv[rank - 1]
    c = c / colnorm
    misfit = math.sqrt(float(np.sum(w * (A @ c - g) ** 2)) / float(np.sum(w)))
    return c, float(cond), misfit


@dataclass(frozen=True, eq=False)
class SeriesSolution:
    """Truncated series for one event.

    The represented function is ``base(phi, zeta) + sum_n c_n sin(k_n phi)
    exp(k_n (zeta - z_ref))`` in the strip coordinates of ``frame``.
    """

    event: EventKind
    corr: CorrelationTriple
    frame: str
    phi_max: float
    k: np.ndarray
    coeffs: np.ndarray
    z_ref: float
    base_term: bool = True
    corner_terms: bool = True
    misfit: float = field(default=math.nan, compare=False)

    @property
    def n_modes(self) -> int:
        return len(self.k)

    @property
    def modes(self) -> list[tuple[float, float]]:
        """``(k_n, c_n)`` pairs with ``c_n`` in the unscaled basis (may overflow to inf)."""
        with np.errstate(over="ignore"):
            scale = np.exp(-self.k * self.z_ref)
        return list(zip(self.k.tolist(), (self.coeffs * scale).tolist()))

    @property
    def geometry(self) -> _Geometry:
        return _geometry(self.corr, self.frame)

    def value_at(self, phi, zeta) -> np.ndarray:
        """Unclamped value at strip coordinates of this solution's frame."""
        geo = self.geometry
        # Round-off can push the azimuth of a wall point just outside the
        # wedge, which would flip the branch of the corner angles.
        phi = np.clip(np.asarray(phi, dtype=float), 0.0, geo.phi_max)
        zeta = np.asarray(zeta, dtype=float)
        role = _event_role(self.event, self.frame)
        base = _base_values(geo, role, phi, zeta, self.corner_terms, self.base_term)
        arg = np.multiply.outer(zeta - self.z_ref, self.k)
        basis = np.sin(np.multiply.outer(phi, self.k)) * np.exp(np.minimum(arg, 700.0))
        return base + basis @ self.coeffs

    def raw(self, xyz) -> np.ndarray:
        """Unclamped value at points ``(..., 3)`` of the closed orthant."""
        phi, zeta = self.geometry.strip(np.asarray(xyz, dtype=float))
        return self.value_at(phi, zeta)

    @functools.cached_property
    def _edge_residual(self) -> tuple[np.ndarray, np.ndarray]:
        """Sine coefficients of the misfit left on the curved edge."""
        geo = self.geometry
        phi, w = QuadratureSpec(max(10 * self.n_modes, 400)).rule(geo.phi_max)
        target = 1.0 if self.event.face == geo.axes[2] else 0.0
        resid = self.raw(geo.face_points(phi)) - target
        k = geo.k1 * np.arange(1, max(5 * self.n_modes, 100) + 1)
        return k, (2.0 / geo.phi_max) * (np.sin(np.outer(k, phi)) @ (w * resid))

    def error_estimate(self, xyz) -> np.ndarray:
        """Signed estimate of the truncation error at points ``(..., 3)``.

        The curved-edge misfit is expanded in sines that vanish on the walls
        and continued inward as if the edge were flat at the point's azimuth,
        so each mode decays with the depth ``Z(phi) - zeta`` below the edge.
        Walls are satisfied exactly and contribute nothing.
        """
        geo = self.geometry
        phi, zeta = geo.strip(np.asarray(xyz, dtype=float))
        depth = np.maximum(geo.Z(phi) - zeta, 0.0)
        k, b = self._edge_residual
        modes = np.sin(np.multiply.outer(phi, k)) * np.exp(-np.multiply.outer(depth, k))
        return modes @ b

    def to_text(self) -> str:
        lines = [
            "# hitting-probability series",
            f"version {FORMAT_VERSION}",
            f"event {self.event.value}",
            f"frame {self.frame}",
            f"rho_xy {self.corr.rho_xy!r}",
            f"rho_xz {self.corr.rho_xz!r}",
            f"rho_yz {self.corr.rho_yz!r}",
            f"phi_max {self.phi_max!r}",
            f"z_ref {self.z_ref!r}",
            f"base_term {int(self.base_term)}",
            f"corner_terms {int(self.corner_terms)}",
            f"misfit {self.misfit!r}",
            f"n_modes {self.n_modes}",
        ]
        lines += [f"{float(k)!r} {float(c)!r}" for k, c in zip(self.k, self.coeffs)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> SeriesSolution:
        rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        head: dict[str, str] = {}
        i = 0
        while i < len(rows) and rows[i].split()[0].isidentifier():
            key, value = rows[i].split(maxsplit=1)
            head[key] = value
            i += 1
        if int(head.get("version", -1)) != FORMAT_VERSION:
            raise ValueError(f"unsupported series format version {head.get('version')}")
        pairs = np.array([[float(t) for t in r.split()] for r in rows[i:]]).reshape(-1, 2)
        if len(pairs) != int(head["n_modes"]):
            raise ValueError("mode count does not match header")
        corr = CorrelationTriple(float(head["rho_xy"]), float(head["rho_xz"]), float(head["rho_yz"]))
        return cls(
            event=EventKind(head["event"]), corr=corr, frame=head["frame"],
            phi_max=float(head["phi_max"]), k=pairs[:, 0], coeffs=pairs[:, 1],
            z_ref=float(head["z_ref"]), base_term=bool(int(head["base_term"])),
            corner_terms=bool(int(head["corner_terms"])), misfit=float(head.get("misfit", "nan")),
        )


def build_solution(corr: CorrelationTriple, event: EventKind, n_modes: int = DEFAULT_MODES,
                   quad: QuadratureSpec | None = None, *, frame: str = "xy",
                   corner_terms: bool = True, method: str = "lstsq") -> SeriesSolution:
    """Series for one event in a fixed frame.

    ``method="normal"`` goes through :func:`assemble_system` and
    :func:`solve_coefficients` literally; ``"lstsq"`` minimizes the same
    quadrature-weighted misfit through the design matrix, whose condition
    number is the square root of that of ``J``.
    """
    quad = quad or QuadratureSpec.for_modes(n_modes)
    geo = _geometry(corr, frame)
    phi, w, z, z_ref, k, A = _design(geo, n_modes, quad)
    g = _edge_data(geo, _event_role(event, frame), phi, z, corner_terms)
    if method == "normal":
        Aw = A * w[:, None]
        c = solve_coefficients(Aw.T @ A, Aw.T @ g)
        misfit = math.sqrt(float(np.sum(w * (A @ c - g) ** 2)) / float(np.sum(w)))
    elif method == "lstsq":
        c, _, misfit = _least_squares(A, g, w)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SeriesSolution(event=event, corr=corr, frame=frame, phi_max=geo.phi_max, k=k,
                          coeffs=c, z_ref=z_ref, base_term=True, corner_terms=corner_terms,
                          misfit=misfit)


@dataclass(frozen=True)
class EventSolutions:
    """Series for the three competing events, sharing one frame.

    ``alternates`` holds the same problem solved in other frames. When
    present, each state is evaluated in whichever candidate has the smallest
    local error estimate, so all three events still come from one frame.
    """

    up: SeriesSolution
    down: SeriesSolution
    trade: SeriesSolution
    alternates: tuple[EventSolutions, ...] = ()

    def __iter__(self):
        return iter((self.up, self.down, self.trade))

    @property
    def frame(self) -> str:
        return self.trade.frame

    def error_indicator(self, pts: np.ndarray) -> np.ndarray:
        """Largest estimated error over the three events."""
        return np.max(np.abs([sol.error_estimate(pts) for sol in self]), axis=0)

    def _choice(self, pts: np.ndarray) -> np.ndarray:
        if not self.alternates:
            return np.zeros(pts.shape[:-1], dtype=np.intp)
        cands = (self,) + self.alternates
        return np.argmin([c.error_indicator(pts) for c in cands], axis=0)

    def frame_at(self, x, y, z):
        """Frame used for each state."""
        pts = _orthant_points(x, y, z)
        names = np.array([c.frame for c in (self,) + self.alternates])
        out = names[self._choice(pts)]
        return str(out) if out.ndim == 0 else out

    def _raw_points(self, pts: np.ndarray) -> np.ndarray:
        pick = self._choice(pts)
        cands = (self,) + self.alternates
        vals = np.stack([np.stack([sol.raw(pts) for sol in c]) for c in cands])
        return np.take_along_axis(vals, pick[None, None], axis=0)[0]

    def raw(self, x, y, z) -> np.ndarray:
        """Unclamped ``(p_up, p_down, p_trade)`` stacked on the first axis.

        When swapping bid and ask leaves the correlations unchanged, the
        value at a state is averaged with the mirrored value at the swapped
        state, which makes that symmetry exact.
        """
        pts = _orthant_points(x, y, z)
        vals = self._raw_points(pts)
        c = self.trade.corr
        if c.rho_xz == c.rho_yz:
            mirror = self._raw_points(pts[..., [1, 0, 2]])
            vals = 0.5 * (vals + mirror[[1, 0, 2]])
        return vals

    def probabilities(self, x, y, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(_clamped(v, sol.event) for v, sol in zip(self.raw(x, y, z), self))


def solve_events(corr: CorrelationTriple, n_modes: int = DEFAULT_MODES,
                 quad: QuadratureSpec | None = None, *, frame: str = "auto",
                 corner_terms: bool = True) -> EventSolutions:
    """Solve all three events.

    ``frame="auto"`` solves in every frame, keeps the one with the smallest
    boundary mismatch as primary and the others within ``ALTERNATE_FACTOR``
    of it as pointwise alternates.
    """
    return _solve_events_cached(corr, n_modes, quad or QuadratureSpec.for_modes(n_modes),
                                frame, corner_terms)


@functools.lru_cache(maxsize=256)
def _solve_events_cached(corr, n_modes, quad, frame, corner_terms) -> EventSolutions:
    frames = list(FRAMES) if frame == "auto" else [frame]
    scored, last_err = [], None
    for name in frames:
        try:
            sols = EventSolutions(*(build_solution(corr, ev, n_modes, quad, frame=name,
                                                   corner_terms=corner_terms)
                                    for ev in (EventKind.PRICE_UP, EventKind.PRICE_DOWN,
                                               EventKind.NEAR_SIDE_TRADE)))
        except IllConditionedError as err:
            last_err = err
            continue
        if len(frames) == 1:
            return sols
        # The edge misfit ignores the two faces that the frame satisfies only
        # through corner terms, so compare frames on all three faces.
        scored.append((max(boundary_mismatch(s).max_abs for s in sols), sols))
    if not scored:
        raise last_err
    scored.sort(key=lambda t: t[0])
    best_score, best = scored[0]
    limit = ALTERNATE_FACTOR * max(best_score, 1e-12)
    alts = tuple(sols for score, sols in scored[1:] if score <= limit)
    return EventSolutions(best.up, best.down, best.trade, alts)


def _orthant_points(x, y, z) -> np.ndarray:
    pts = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float),
                                       np.asarray(z, float)), axis=-1)
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise DomainError("series evaluation needs a state in the open positive orthant")
    return pts


def _clamped(values: np.ndarray, event: EventKind):
    excess = float(np.max(np.maximum(values - 1.0, 0.0) + np.maximum(-values, 0.0), initial=0.0))
    if excess > 0:
        log.debug("clamped %s probability by up to %.3g", event.value, excess)
    out = np.clip(values, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def eval_probability(sol: SeriesSolution, x, y, z, *, return_excess: bool = False):
    """Event probability at orthant states, clamped to [0, 1]."""
    raw = sol.raw(_orthant_points(x, y, z))
    out = _clamped(raw, sol.event)
    if return_excess:
        excess = float(np.max(np.maximum(raw - 1.0, 0.0) + np.maximum(-raw, 0.0), initial=0.0))
        return out, excess
    return out


def event_probabilities(x, y, z, corr: CorrelationTriple, n_modes: int = DEFAULT_MODES,
                        quad: QuadratureSpec | None = None, *, frame: str = "auto",
                        corner_terms: bool = True):
    """``(p_up, p_down, p_trade)`` at one or many states."""
    return solve_events(corr, n_modes, quad, frame=frame, corner_terms=corner_terms) \
        .probabilities(x, y, z)


@dataclass(frozen=True)
class BoundaryReport:
    max_abs: float
    rms: float
    per_face: dict[str, float]


_FACE_NAMES = {0: "x=0", 1: "y=0", 2: "z=0"}


def boundary_mismatch(sol: SeriesSolution, n_points: int | None = None,
                      faces: tuple[int, ...] = (0, 1, 2)) -> BoundaryReport:
    """Deviation from the event's boundary data over the orthant faces.

    Each face is sampled at Gauss-Legendre azimuths of its own wedge, so the
    exact corners are never hit.
    """
    n_points = n_points or QuadratureSpec.for_modes(sol.n_modes).nodes
    quad = QuadratureSpec(n_points)
    errs, sq, wsum, per_face = [], 0.0, 0.0, {}
    for face in faces:
        frame = next(name for name, ax in FRAMES.items() if ax[2] == face)
        geo = _geometry(sol.corr, frame)
        phi, w = quad.rule(geo.phi_max)
        pts = geo.face_points(phi)
        target = 1.0 if face == sol.event.face else 0.0
        err = np.abs(sol.raw(pts) - target)
        per_face[_FACE_NAMES[face]] = float(err.max())
        errs.append(err.max())
        sq += float(np.sum(w * err ** 2))
        wsum += float(np.sum(w))
    return BoundaryReport(float(max(errs)), math.sqrt(sq / wsum), per_face)
