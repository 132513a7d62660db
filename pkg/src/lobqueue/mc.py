"""Monte Carlo engine for the correlated queue/trade diffusion.

Paths are Euler steps of a unit-variance correlated Brownian triple with a
per-coordinate Brownian-bridge crossing test against zero. Each path draws
from its own counter-based stream keyed by ``(seed, path index)``, so results
do not depend on how paths are split across worker threads.

With ``adaptive`` on, the step is ``dt * r**2`` where ``r`` is the distance
of the current state from the origin. The hitting problem is scale
invariant, so this is the fixed-``dt`` scheme applied in units where the
state sits at unit distance, and it keeps the heavy-tailed exit times of the
wedge affordable.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .errors import DomainError
from .model import (CorrelationTriple, EmpiricalReset, LogNormalReset, ModelParams,
                    OrthantState, WedgeState)
from .series import EventKind

# Event codes written by the kernel.
EV_DOWN = 0      # x (near queue) depleted
EV_UP = 1        # y depleted
EV_TRADE = 2     # z reached zero
EV_CENSORED = -1

_EVENT_OF_CODE = {EV_DOWN: EventKind.PRICE_DOWN, EV_UP: EventKind.PRICE_UP,
                  EV_TRADE: EventKind.NEAR_SIDE_TRADE}

# Skip the bridge exponential when it is below exp(-40).
_BRIDGE_CUTOFF = 40.0
_SURVIVOR_FLOOR = 1e-9
_BLOCK = 4096


class Side(enum.Enum):
    BID = "Bid"
    ASK = "Ask"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    n_paths: int = 100_000
    seed: int = 12345
    bridge_correction: bool = True
    max_epochs: int = 10_000
    adaptive: bool = True
    max_steps: int = 10_000_000
    workers: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.n_paths < 1:
            raise DomainError("n_paths must be at least 1")
        if self.max_epochs < 1 or self.max_steps < 1 or self.workers < 1:
            raise DomainError("max_epochs, max_steps and workers must be positive")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n: int

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> McEstimate:
        n = int(samples.size)
        if n == 0:
            return cls(math.nan, math.nan, 0)
        mean = float(np.sum(samples) / n)
        se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        return cls(mean, se, n)

    def zscore(self, value: float) -> float:
        if self.std_error == 0:
            return 0.0 if value == self.mean else math.inf
        return (self.mean - value) / self.std_error


@dataclass(frozen=True)
class PathOutcome:
    first_event: EventKind
    time_to_event: float
    mid_move_at_stop: float


@dataclass(frozen=True)
class SimResult:
    """Per-path arrays produced by one engine run."""

    code: np.ndarray
    time: np.ndarray
    move: np.ndarray
    epochs: np.ndarray

    @property
    def completed(self) -> np.ndarray:
        return self.code != EV_CENSORED

    @property
    def n_censored(self) -> int:
        return int(np.count_nonzero(self.code == EV_CENSORED))

    @property
    def censored_fraction(self) -> float:
        return self.n_censored / self.code.size

    def outcomes(self) -> list[PathOutcome]:
        return [PathOutcome(_EVENT_OF_CODE[int(c)], float(t), float(m))
                for c, t, m in zip(self.code, self.time, self.move) if c != EV_CENSORED]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path_id", "first_event", "time_to_event", "mid_move"])
        for i, (c, t, m) in enumerate(zip(self.code, self.time, self.move)):
            name = "Censored" if c == EV_CENSORED else _EVENT_OF_CODE[int(c)].value
            w.writerow([i, name, repr(float(t)), repr(float(m))])
        return buf.getvalue()

    def dump_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())


# ---------------------------------------------------------------------------
# Random numbers: SplitMix64 keyed by (seed, path index).


@numba.njit(inline="always")
def _mix64(z):
    z = (z ^ (z >> numba.uint64(30))) * numba.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> numba.uint64(27))) * numba.uint64(0x94D049BB133111EB)
    return z ^ (z >> numba.uint64(31))


@numba.njit(inline="always")
def _next_uniform(state):
    """Advance ``state`` and return a uniform on the open interval (0, 1)."""
    state = state + numba.uint64(0x9E3779B97F4A7C15)
    bits = _mix64(state) >> numba.uint64(11)
    return state, (np.float64(bits) + 0.5) * 1.1102230246251565e-16


@numba.njit(inline="always")
def _path_state(seed, path):
    return _mix64(numba.uint64(seed) ^ _mix64(numba.uint64(path) + numba.uint64(0x632BE59BD9B4E019)))


def _ziggurat_tables(layers: int = 128, r: float = 3.442619855899,
                     v: float = 9.91256303526217e-3) -> tuple[np.ndarray, np.ndarray]:
    # Doornik's 128-layer ziggurat for the standard normal.
    x = np.zeros(layers + 1)
    f = math.exp(-0.5 * r * r)
    x[0] = v / f
    x[1] = r
    for i in range(2, layers):
        x[i] = math.sqrt(-2.0 * math.log(v / x[i - 1] + f))
        f = math.exp(-0.5 * x[i] * x[i])
    ratio = x[1:] / x[:-1]
    return x, ratio


_ZIG_X, _ZIG_R = _ziggurat_tables()
_ZIG_TAIL = 3.442619855899


@numba.njit(inline="always")
def _normal(state):
    """One standard normal from the ziggurat; a single 64-bit draw usually."""
    while True:
        state = state + numba.uint64(0x9E3779B97F4A7C15)
        bits = _mix64(state)
        i = np.int64(bits & numba.uint64(0x7F))
        u = 2.0 * ((np.float64(bits >> numba.uint64(11)) + 0.5) * 1.1102230246251565e-16) - 1.0
        if abs(u) < _ZIG_R[i]:
            return state, u * _ZIG_X[i]
        if i == 0:
            while True:
                state, u1 = _next_uniform(state)
                state, u2 = _next_uniform(state)
                xt = math.log(u1) / _ZIG_TAIL
                yt = math.log(u2)
                if -2.0 * yt >= xt * xt:
                    return state, (xt - _ZIG_TAIL) if u < 0 else (_ZIG_TAIL - xt)
        xx = u * _ZIG_X[i]
        f0 = math.exp(-0.5 * (_ZIG_X[i] * _ZIG_X[i] - xx * xx))
        f1 = math.exp(-0.5 * (_ZIG_X[i + 1] * _ZIG_X[i + 1] - xx * xx))
        state, w = _next_uniform(state)
        if f1 + w * (f0 - f1) < 1.0:
            return state, xx


@numba.njit(inline="always")
def _normal_pair(state):
    state, a = _normal(state)
    state, b = _normal(state)
    return state, a, b


@numba.njit(inline="always")
def _bridge_hit_time(state, a, b, h):
    """Time at which a Brownian bridge from ``a > 0`` to ``b`` over ``[0, h]``
    first reaches zero, given that it does.

    ``u = t / (h - t)`` is inverse Gaussian with mean ``a / |b|`` and shape
    ``a**2 / h``; for ``b == 0`` it is the Levy limit.
    """
    lam = a * a / h
    state, n1 = _normal(state)
    ab = abs(b)
    if ab < 1e-300:
        u = lam / (n1 * n1 + 1e-300)
    else:
        mu = a / ab
        yy = n1 * n1
        u = mu + mu * mu * yy / (2.0 * lam) - mu / (2.0 * lam) * math.sqrt(
            4.0 * mu * lam * yy + mu * mu * yy * yy)
        state, v = _next_uniform(state)
        if v > mu / (mu + u):
            u = mu * mu / u
    t = h * u / (1.0 + u)
    if t <= 0.0:
        t = 1e-300
    if t > h:
        t = h
    return state, t


@numba.njit(inline="always")
def _crossing(state, a, b, h, bridge):
    """Whether one coordinate reaches zero during a step from ``a`` to ``b``
    and, if so, when."""
    crossed = b <= 0.0
    if not crossed and bridge:
        e = 2.0 * a * b / h
        if e < _BRIDGE_CUTOFF:
            state, u = _next_uniform(state)
            crossed = u < math.exp(-e)
    if not crossed:
        return state, False, h
    if not bridge:
        return state, True, h
    state, tc = _bridge_hit_time(state, a, b, h)
    return state, True, tc


@numba.njit(inline="always")
def _draw_reset(state, kind, median, disp, samples):
    if kind == 0:
        state, n1 = _normal(state)
        return state, median * math.exp(disp * n1)
    state, u = _next_uniform(state)
    k = int(u * samples.size)
    if k >= samples.size:
        k = samples.size - 1
    return state, samples[k]


@numba.njit(nogil=True, cache=True)
def _run_block(first, last, seed, x_init, y_init, z_init, L, has_z, dt, adaptive, bridge,
               max_steps, multi_epoch, max_epochs, phi0,
               rx_kind, rx_med, rx_disp, rx_samples, ry_kind, ry_med, ry_disp, ry_samples,
               move_x, move_y, code, time, move, epochs):
    l00 = L[0, 0]
    l10 = L[1, 0]
    l11 = L[1, 1]
    l20 = L[2, 0]
    l21 = L[2, 1]
    l22 = L[2, 2]
    for p in range(first, last):
        state = _path_state(seed, p)
        x = x_init
        y = y_init
        z = z_init
        t_acc = 0.0
        m_acc = 0.0
        ep = 0
        ev = EV_CENSORED
        steps = 0
        while steps < max_steps:
            steps += 1
            if adaptive:
                r2 = x * x + y * y
                if has_z:
                    r2 += z * z
                h = dt * r2
            else:
                h = dt
            sq = math.sqrt(h)
            state, n1, n2 = _normal_pair(state)
            x1 = x + sq * (l00 * n1)
            y1 = y + sq * (l10 * n1 + l11 * n2)
            z1 = z
            if has_z:
                state, n3 = _normal(state)
                z1 = z + sq * (l20 * n1 + l21 * n2 + l22 * n3)
            # Which coordinates cross during the step, and when. Strict
            # comparisons keep the lower-index coordinate on exact ties.
            hit = -1
            t_hit = h
            state, cx, tx = _crossing(state, x, x1, h, bridge)
            if cx:
                hit = 0
                t_hit = tx
            state, cy, ty = _crossing(state, y, y1, h, bridge)
            if cy and (hit < 0 or ty < t_hit):
                hit = 1
                t_hit = ty
            if has_z:
                state, cz, tz = _crossing(state, z, z1, h, bridge)
                if cz and (hit < 0 or tz < t_hit):
                    hit = 2
                    t_hit = tz
            if hit < 0:
                x = x1
                y = y1
                z = z1
                t_acc += h
                continue
            t_acc += t_hit
            if not multi_epoch or hit == EV_TRADE:
                if hit == 0:
                    m_acc += move_x
                elif hit == 1:
                    m_acc += move_y
                ev = hit
                break
            # Depletion inside a multi-epoch run: move the mid, redraw the
            # depleted queue, carry the survivor and restart the trade level.
            w = t_hit / h
            ep += 1
            if ep > max_epochs:
                break
            if hit == 0:
                m_acc += move_x
                state, x = _draw_reset(state, rx_kind, rx_med, rx_disp, rx_samples)
                y = max(y + w * (y1 - y), _SURVIVOR_FLOOR)
            else:
                m_acc += move_y
                state, y = _draw_reset(state, ry_kind, ry_med, ry_disp, ry_samples)
                x = max(x + w * (x1 - x), _SURVIVOR_FLOOR)
            z = phi0
        code[p] = ev
        time[p] = t_acc
        move[p] = m_acc
        epochs[p] = ep


# ---------------------------------------------------------------------------
# Python driver.


def _reset_args(dist, sigma: float):
    if isinstance(dist, LogNormalReset):
        return 0, dist.median / sigma, dist.dispersion, np.zeros(1)
    if isinstance(dist, EmpiricalReset):
        return 1, dist.median / sigma, 0.0, np.asarray(dist.samples, dtype=float) / sigma
    raise DomainError(f"unsupported reset distribution {dist!r}")


def _padded_cholesky(corr: CorrelationTriple | None, rho_xy: float) -> np.ndarray:
    if corr is not None:
        return np.ascontiguousarray(corr.cholesky())
    L = np.eye(3)
    L[1, 0] = rho_xy
    L[1, 1] = math.sqrt(1.0 - rho_xy * rho_xy)
    return L


def _run(cfg: SimConfig, x: float, y: float, z: float, L: np.ndarray, has_z: bool, *,
         multi_epoch: bool = False, phi0: float = 0.0, reset_x=None, reset_y=None,
         move_x: float = -1.0, move_y: float = 1.0) -> SimResult:
    if min(x, y) <= 0 or (has_z and z <= 0):
        raise DomainError("simulation needs a start in the open positive orthant")
    n = cfg.n_paths
    code = np.empty(n, dtype=np.int8)
    time = np.empty(n)
    move = np.empty(n)
    epochs = np.empty(n, dtype=np.int64)
    rx = reset_x or (0, 1.0, 0.0, np.zeros(1))
    ry = reset_y or (0, 1.0, 0.0, np.zeros(1))
    args = (np.uint64(cfg.seed), float(x), float(y), float(z), L, bool(has_z), float(cfg.dt),
            bool(cfg.adaptive), bool(cfg.bridge_correction), int(cfg.max_steps),
            bool(multi_epoch), int(cfg.max_epochs), float(phi0), *rx, *ry,
            float(move_x), float(move_y), code, time, move, epochs)
    blocks = [(i, min(i + _BLOCK, n)) for i in range(0, n, _BLOCK)]
    if cfg.workers == 1 or len(blocks) == 1:
        _run_block(0, n, *args)
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(lambda b: _run_block(b[0], b[1], *args), blocks))
    return SimResult(code, time, move, epochs)


def _probabilities(res: SimResult, codes) -> tuple[McEstimate, ...]:
    done = res.code[res.completed]
    return tuple(McEstimate.from_samples((done == c).astype(float)) for c in codes)


def simulate_first_event(state: OrthantState, params: ModelParams, cfg: SimConfig, *,
                         return_paths: bool = False):
    """Probabilities of (PriceUp, PriceDown, NearSideTrade) as the first event.

    The near side is the bid: ``x`` is the bid queue and ``z`` the level of
    the process whose zero-crossings are sell trades.
    """
    res = _run(cfg, state.x, state.y, state.z, _padded_cholesky(params.corr, 0.0), True,
               move_x=-params.tick / params.spread, move_y=params.tick / params.spread)
    est = _probabilities(res, (EV_UP, EV_DOWN, EV_TRADE))
    return (est, res) if return_paths else est


def simulate_next_mid_move(state: WedgeState, rho_xy: float, params: ModelParams,
                           cfg: SimConfig, *, return_paths: bool = False):
    """Average spread-normalized move, wait and up-tick probability until the
    first queue depletion of the two-queue model."""
    if abs(rho_xy) >= 1:
        raise DomainError("rho_xy must lie strictly inside (-1, 1)")
    step = params.tick / params.spread
    res = _run(cfg, state.x, state.y, 1.0, _padded_cholesky(None, rho_xy), False,
               move_x=-step, move_y=step)
    ok = res.completed
    est = (McEstimate.from_samples(res.move[ok]), McEstimate.from_samples(res.time[ok]),
           McEstimate.from_samples((res.code[ok] == EV_UP).astype(float)))
    return (est, res) if return_paths else est


def simulate_until_side_trade(side: Side | str, state: OrthantState, params: ModelParams,
                              cfg: SimConfig, *, return_paths: bool = False):
    """Mid move (in spreads) and elapsed time until the first trade hitting
    ``side``, across queue depletions and resets.

    ``state`` is always (bid, ask, trade level). For ``Ask`` the engine runs
    the mirrored book: the ask queue takes the near role, the correlations
    keep their near/far meaning and price moves flip sign.
    """
    side = Side(side)
    step = params.tick / params.spread
    rb = _reset_args(params.reset_b, params.sigma_b)
    ra = _reset_args(params.reset_a, params.sigma_a)
    L = _padded_cholesky(params.corr, 0.0)
    if side is Side.BID:
        res = _run(cfg, state.x, state.y, state.z, L, True, multi_epoch=True,
                   phi0=params.phi0, reset_x=rb, reset_y=ra, move_x=-step, move_y=step)
    else:
        res = _run(cfg, state.y, state.x, state.z, L, True, multi_epoch=True,
                   phi0=params.phi0, reset_x=ra, reset_y=rb, move_x=step, move_y=-step)
    ok = res.completed
    est = (McEstimate.from_samples(res.move[ok]), McEstimate.from_samples(res.time[ok]))
    return (est, res) if return_paths else est
