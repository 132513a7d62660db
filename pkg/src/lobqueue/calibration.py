"""Fit correlations and the trade-process start level to empirical curves.

Model curves are produced for an order resting on the bid: the bid queue is
``x``, sell trades are the zero-crossings of ``z``, a falling mid is the
favourable move and a rising mid the unfavourable one. Event probabilities
come from the series solver; mid moves and waits until the next trade of
each side come from the Monte Carlo engine with a fixed seed per bucket and
side, so the objective is a deterministic function of the parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import mc
from .errors import DomainError, IllConditionedError
from .model import CorrelationTriple, ModelParams, correlation_det, state_from_imbalance
from .series import DEFAULT_MODES, solve_events
from .taq import CURVE_NAMES, CurveTable

log = logging.getLogger(__name__)

PROB_NAMES = CURVE_NAMES[:3]
MOVE_NAMES = ("move_sell", "move_buy")
WAIT_NAMES = ("wait_sell", "wait_buy")


@dataclass(frozen=True, eq=False)
class CalibrationTarget:
    """Seven curves on shared bucket edges, with their standard errors."""

    edges: np.ndarray
    mean: dict
    std_error: dict

    def __post_init__(self):
        missing = [n for n in CURVE_NAMES if n not in self.mean or n not in self.std_error]
        if missing:
            raise ValueError(f"target lacks curve(s) {', '.join(missing)}")
        nb = self.edges.size - 1
        for n in CURVE_NAMES:
            if np.shape(self.mean[n]) != (nb,) or np.shape(self.std_error[n]) != (nb,):
                raise ValueError(f"curve {n} does not match the bucket edges")

    @classmethod
    def from_tables(cls, tables: dict[str, CurveTable]) -> CalibrationTarget:
        edges = tables[CURVE_NAMES[0]].edges
        for n in CURVE_NAMES:
            if not np.array_equal(tables[n].edges, edges):
                raise ValueError(f"curve {n} uses different bucket edges")
        return cls(edges.copy(), {n: tables[n].mean.copy() for n in CURVE_NAMES},
                   {n: tables[n].std_error.copy() for n in CURVE_NAMES})

    @property
    def n_buckets(self) -> int:
        return self.edges.size - 1

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def used(self, name: str) -> np.ndarray:
        return np.isfinite(self.mean[name])

    def scale(self, name: str) -> float:
        """Divisor that makes a curve dimensionless (cross-bucket mean of waits)."""
        if name in WAIT_NAMES:
            vals = self.mean[name][self.used(name)]
            s = float(np.mean(vals)) if vals.size else 1.0
            return s if s > 0 else 1.0
        return 1.0

    def weights(self, name: str, se_floor: float, model_se: dict | None = None) -> np.ndarray:
        """Inverse variances of the residuals of curve ``name``.

        ``model_se`` adds the sampling error of a simulated model curve, so
        noisy Monte Carlo curves do not outweigh the series probabilities.
        """
        se = np.where(np.isfinite(self.std_error[name]), self.std_error[name], 0.0)
        var = se**2
        if model_se is not None and name in model_se:
            extra = np.asarray(model_se[name], dtype=float)
            var = var + np.where(np.isfinite(extra), extra, 0.0) ** 2
        se = np.maximum(np.sqrt(var) / self.scale(name), se_floor)
        return 1.0 / se**2

    def is_empty(self) -> bool:
        return not any(self.used(n).any() for n in CURVE_NAMES)


@dataclass(frozen=True)
class CalibrationOptions:
    symmetric: bool = True
    free_depth: bool = False
    n_modes: int = DEFAULT_MODES
    mc_paths: int = 2000
    mc_dt: float = 1e-2
    seed: int = 20120101
    restarts: int = 3
    maxfev: int = 400
    xatol: float = 2e-3
    fatol: float = 1e-2
    rtol: float = 1e-2
    se_floor: float = 1e-3
    max_epochs: int = 10_000


@dataclass(frozen=True)
class ModelCurves:
    mean: dict
    std_error: dict


@dataclass
class CalibrationResult:
    params: ModelParams
    depth: float
    objective: float
    residuals: dict
    model: ModelCurves
    trace: list = field(default_factory=list)
    converged: bool = False
    n_evals: int = 0

    def to_json(self) -> dict:
        c = self.params.corr
        return {
            "params": {"rho_xy": c.rho_xy, "rho_xz": c.rho_xz, "rho_yz": c.rho_yz,
                       "phi0": self.params.phi0, "depth": self.depth},
            "objective": self.objective,
            "converged": self.converged,
            "n_evals": self.n_evals,
            "residuals": {k: [None if not math.isfinite(v) else float(v) for v in r]
                          for k, r in self.residuals.items()},
            "trace": [{"eval": i, "x": [float(v) for v in x], "objective": f}
                      for i, x, f in self.trace],
        }


def _bucket_seed(seed: int, bucket: int, side: int) -> int:
    return (seed * 1_000_003 + bucket * 2 + side) % 2**63


def model_curves(params: ModelParams, edges: np.ndarray, depth: float,
                 options: CalibrationOptions = CalibrationOptions(),
                 buckets: np.ndarray | None = None) -> ModelCurves:
    """All seven curves of the model at the bucket midpoints.

    ``buckets`` restricts the Monte Carlo curves to the given bucket indices;
    the others are NaN.
    """
    mids = 0.5 * (edges[:-1] + edges[1:])
    nb = mids.size
    states = [state_from_imbalance(float(I), depth, params, clamp=True) for I in mids]
    sols = solve_events(params.corr, options.n_modes)
    xs = np.array([s.x for s in states])
    ys = np.array([s.y for s in states])
    zs = np.array([s.z for s in states])
    if params.phi0 <= 0:
        p_up, p_down, p_trade = np.zeros(nb), np.zeros(nb), np.ones(nb)
    else:
        p_up, p_down, p_trade = (np.atleast_1d(p) for p in sols.probabilities(xs, ys, zs))
    mean = {"prob_favourable": p_down, "prob_unfavourable": p_up, "prob_fill": p_trade}
    se = {n: np.zeros(nb) for n in PROB_NAMES}
    for n in MOVE_NAMES + WAIT_NAMES:
        mean[n] = np.full(nb, np.nan)
        se[n] = np.full(nb, np.nan)
    todo = range(nb) if buckets is None else buckets
    for b in todo:
        st = states[b]
        if st.z <= 0:
            for n in MOVE_NAMES + WAIT_NAMES:
                mean[n][b], se[n][b] = 0.0, 0.0
            continue
        for k, (side, mname, wname) in enumerate((("Bid", "move_sell", "wait_sell"),
                                                  ("Ask", "move_buy", "wait_buy"))):
            cfg = mc.SimConfig(dt=options.mc_dt, n_paths=options.mc_paths,
                               seed=_bucket_seed(options.seed, int(b), k),
                               max_epochs=options.max_epochs)
            move, wait = mc.simulate_until_side_trade(side, st, params, cfg)
            mean[mname][b], se[mname][b] = move.mean, move.std_error
            mean[wname][b], se[wname][b] = wait.mean, wait.std_error
    return ModelCurves(mean, se)


# ---------------------------------------------------------------------------
# Parameter vector.


def _pack(params: ModelParams, depth: float, options: CalibrationOptions) -> np.ndarray:
    c = params.corr
    x = [c.rho_xy, c.rho_xz] if options.symmetric else [c.rho_xy, c.rho_xz, c.rho_yz]
    x.append(params.phi0)
    if options.free_depth:
        x.append(depth)
    return np.array(x, dtype=float)


def _unpack(x: np.ndarray, base: ModelParams, depth: float, options: CalibrationOptions):
    """Parameters for vector ``x`` or None when ``x`` violates a constraint."""
    x = [float(v) for v in x]
    rho_xy, rho_xz = x[0], x[1]
    if options.symmetric:
        rho_yz, rest = -rho_xz, x[2:]
    else:
        rho_yz, rest = x[2], x[3:]
    phi0 = rest[0]
    if options.free_depth:
        depth = rest[1]
    rhos = (rho_xy, rho_xz, rho_yz)
    if (any(not math.isfinite(r) or abs(r) >= 1 for r in rhos) or abs(rho_xy) > 0.99
            or correlation_det(*rhos) <= 0 or not phi0 >= 0 or not depth > 0):
        return None
    try:
        return base.replace(corr=CorrelationTriple(*rhos), phi0=phi0), depth
    except DomainError:
        return None


def residuals(curves: ModelCurves, target: CalibrationTarget) -> dict:
    """Dimensionless residuals per curve; NaN where the target has no data."""
    out = {}
    for n in CURVE_NAMES:
        r = (curves.mean[n] - target.mean[n]) / target.scale(n)
        out[n] = np.where(target.used(n), r, np.nan)
    return out


def _mc_buckets(target: CalibrationTarget) -> np.ndarray:
    used = np.zeros(target.n_buckets, dtype=bool)
    for n in MOVE_NAMES + WAIT_NAMES:
        used |= target.used(n)
    return np.flatnonzero(used)


def _loss(res: dict, target: CalibrationTarget, se_floor: float,
          model_se: dict | None = None) -> float:
    total = 0.0
    for n in CURVE_NAMES:
        use = target.used(n)
        r = res[n][use]
        if not np.all(np.isfinite(r)):
            return math.inf
        total += float(np.sum(target.weights(n, se_floor, model_se)[use] * r * r))
    return total


def objective(params: ModelParams, target: CalibrationTarget, depth: float,
              options: CalibrationOptions = CalibrationOptions(),
              model_se: dict | None = None) -> float:
    """Inverse-variance weighted squared residuals over all seven curves.

    ``model_se`` holds fixed per-bucket standard errors of the simulated
    model curves (see :meth:`CalibrationTarget.weights`). Returns ``inf``
    for parameters outside the admissible region.
    """
    c = params.corr
    if (correlation_det(c.rho_xy, c.rho_xz, c.rho_yz) <= 0 or params.phi0 < 0
            or max(abs(c.rho_xy), abs(c.rho_xz), abs(c.rho_yz)) >= 1):
        return math.inf
    try:
        curves = model_curves(params, target.edges, depth, options, _mc_buckets(target))
    except (IllConditionedError, DomainError) as err:
        log.debug("objective failed at %s: %s", params, err)
        return math.inf
    return _loss(residuals(curves, target), target, options.se_floor, model_se)


def _initial_simplex(x0: np.ndarray, options: CalibrationOptions, rng) -> np.ndarray:
    n = x0.size
    steps = np.full(n, 0.1)
    phi_idx = 2 if options.symmetric else 3
    steps[phi_idx] = max(0.15 * abs(x0[phi_idx]), 0.1)
    if options.free_depth:
        steps[-1] = 0.15 * abs(x0[-1])
    sim = np.tile(x0, (n + 1, 1))
    for i in range(n):
        sign = 1.0 if rng is None else rng.choice((-1.0, 1.0))
        sim[i + 1, i] += sign * steps[i]
    return sim


def calibrate(target: CalibrationTarget, init: ModelParams, depth: float,
              options: CalibrationOptions = CalibrationOptions()) -> CalibrationResult:
    """Nelder-Mead from ``init``, then restarts around the incumbent.

    Each restart begins from the best point so far with a freshly drawn
    simplex. The result is marked converged when the last restart neither
    fails to converge nor improves the objective by more than ``fatol``.
    """
    if target.is_empty():
        raise ValueError("calibration target has no data")
    base = init
    trace: list = []
    cache: dict = {}

    def f(x):
        key = tuple(np.round(x, 12))
        if key in cache:
            return cache[key]
        unpacked = _unpack(x, base, depth, options)
        val = (math.inf if unpacked is None
               else objective(unpacked[0], target, unpacked[1], options, model_se))
        cache[key] = val
        trace.append((len(trace), np.array(x), val))
        return val

    # Model-side sampling error, measured once at the start so the weights
    # stay fixed during the search.
    start = model_curves(init, target.edges, depth, options, _mc_buckets(target))
    model_se = {n: start.std_error[n] for n in MOVE_NAMES + WAIT_NAMES}

    rng = np.random.default_rng(options.seed)
    best_x = _pack(init, depth, options)
    best_f = f(best_x)
    converged = False
    for attempt in range(options.restarts + 1):
        sim = _initial_simplex(best_x, options, None if attempt == 0 else rng)
        res = minimize(f, best_x, method="Nelder-Mead",
                       options=dict(initial_simplex=sim, maxfev=options.maxfev,
                                    xatol=options.xatol, fatol=options.fatol))
        improved = best_f - res.fun
        if res.fun < best_f:
            best_x, best_f = np.array(res.x), float(res.fun)
        # A restart that still finds a better point means the previous pass
        # stopped early.
        converged = bool(res.success) and bool(improved <= options.fatol + options.rtol * best_f)
        log.info("calibration pass %d: objective %.6g (%s)", attempt, best_f, res.message)
        if attempt > 0 and converged:
            break
    fitted = _unpack(best_x, base, depth, options)
    if fitted is None:
        raise DomainError("calibration ended outside the admissible region")
    params, depth = fitted
    curves = model_curves(params, target.edges, depth, options, _mc_buckets(target))
    res = residuals(curves, target)
    return CalibrationResult(params, depth, _loss(res, target, options.se_floor, model_se), res,
                             curves, trace, converged and math.isfinite(best_f), len(trace))


def synthesize_target(params: ModelParams, edges: np.ndarray, depth: float, *,
                      n_paths: int = 20_000, dt: float = 1e-2, seed: int = 7,
                      max_epochs: int = 10_000) -> CalibrationTarget:
    """Target curves simulated from known parameters, noise included.

    Event probabilities come from first-event simulation, so the target
    carries sampling noise and discretization error independent of the
    series solver used by the model side.
    """
    mids = 0.5 * (edges[:-1] + edges[1:])
    nb = mids.size
    mean = {n: np.zeros(nb) for n in CURVE_NAMES}
    se = {n: np.zeros(nb) for n in CURVE_NAMES}
    for b, I in enumerate(mids):
        st = state_from_imbalance(float(I), depth, params, clamp=True)
        cfg = mc.SimConfig(dt=dt, n_paths=n_paths, seed=(seed * 7919 + b) % 2**63,
                           max_epochs=max_epochs)
        up, down, trade = mc.simulate_first_event(st, params, cfg)
        for n, e in zip(PROB_NAMES, (down, up, trade)):
            mean[n][b], se[n][b] = e.mean, e.std_error
        for k, (side, mname, wname) in enumerate((("Bid", "move_sell", "wait_sell"),
                                                  ("Ask", "move_buy", "wait_buy"))):
            cfg = mc.SimConfig(dt=dt, n_paths=n_paths,
                               seed=(seed * 104729 + 2 * b + k + 1) % 2**63,
                               max_epochs=max_epochs)
            move, wait = mc.simulate_until_side_trade(side, st, params, cfg)
            mean[mname][b], se[mname][b] = move.mean, move.std_error
            mean[wname][b], se[wname][b] = wait.mean, wait.std_error
    return CalibrationTarget(np.asarray(edges, float).copy(), mean, se)
