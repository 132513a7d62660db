"""Independent reference implementations used to freeze expected values.

Nothing here imports the package. The TAQ oracle is a deliberately naive
event-by-event scan; the Monte Carlo oracles are plain numpy random walks
with a fixed relative step and a per-coordinate Brownian-bridge test.
"""

from __future__ import annotations

import csv
import math

import numpy as np

US_PER_DAY = 86_400_000_000


# ---------------------------------------------------------------------------
# Trades and quotes.


def _read_merged(path):
    events = []
    with open(path, newline="") as fh:
        for order, rec in enumerate(csv.DictReader(fh)):
            ts = int(rec["ts_us"])
            if rec["kind"] == "Q":
                bid, ask = float(rec["bid_px"]), float(rec["ask_px"])
                if ask <= bid:
                    continue
                events.append(dict(ts=ts, q=True, order=order, bid=bid, ask=ask,
                                   bq=float(rec["bid_qty"]), aq=float(rec["ask_qty"])))
            else:
                side = {"": 0, "b": 1, "buy": 1, "s": -1, "sell": -1}[rec["side"].strip().lower()]
                events.append(dict(ts=ts, q=False, order=order, px=float(rec["px"]), side=side))
    events.sort(key=lambda e: (e["ts"], 0 if e["q"] else 1, e["order"]))
    for e in events:
        e["day"] = e["ts"] // US_PER_DAY
    return events


def _sign_trades(events):
    quote, last_px, tick, day = None, None, 0, None
    for e in events:
        if e["day"] != day:
            quote, last_px, tick, day = None, None, 0, e["day"]
        if e["q"]:
            quote = e
            continue
        if last_px is not None and e["px"] != last_px:
            tick = 1 if e["px"] > last_px else -1
        last_px = e["px"]
        if e["side"] != 0:
            continue
        if quote is not None and e["px"] >= quote["ask"]:
            e["side"] = 1
        elif quote is not None and e["px"] <= quote["bid"]:
            e["side"] = -1
        else:
            e["side"] = tick


def _mid(e):
    return (e["bid"] + e["ask"]) / 2


def _bucket(imb, edges):
    nb = len(edges) - 1
    for b in range(nb):
        if edges[b] <= imb < edges[b + 1]:
            return b
    return nb - 1


def _sequential_stats(values):
    n = len(values)
    total = 0.0
    for v in values:
        total += v
    mean = total / n
    if n == 1:
        return mean, 0.0
    ss = 0.0
    for v in values:
        ss += (v - mean) * (v - mean)
    return mean, math.sqrt(ss / (n - 1)) / math.sqrt(n)


def _curve_csv(samples, edges):
    """samples: list of (day, bucket, value)."""
    nb = len(edges) - 1
    lines = ["bucket_lo,bucket_hi,mean,std_err,count"]
    for b in range(nb):
        per_day = {}
        for d, bb, v in samples:
            if bb == b:
                per_day.setdefault(d, []).append(v)
        if per_day:
            stats = [_sequential_stats(per_day[d]) for d in sorted(per_day)]
            mean = stats[0][0] if len(stats) == 1 else sum(s[0] for s in stats) / len(stats)
            se = math.sqrt(sum(s[1] ** 2 for s in stats)) / len(stats)
            m, s = repr(mean), repr(se)
        else:
            m = s = "nan"
        count = sum(len(v) for v in per_day.values())
        lines.append(f"{edges[b]!r},{edges[b + 1]!r},{m},{s},{count}")
    return "\n".join(lines) + "\n"


def taq_curves(path, n_buckets: int = 20, near_side: str = "Bid") -> dict[str, str]:
    """Expected content of every curve file for a merged CSV."""
    events = _read_merged(path)
    _sign_trades(events)
    edges = [float(v) for v in np.linspace(-1.0, 1.0, n_buckets + 1)]
    fill_side = -1 if near_side == "Bid" else 1
    out = {k: [] for k in ("prob_favourable", "prob_unfavourable", "prob_fill", "move_sell",
                           "move_buy", "wait_sell", "wait_buy", "mid_move", "mid_wait")}
    for i, e in enumerate(events):
        if not e["q"] or e["bq"] + e["aq"] == 0:
            continue
        imb = (e["bq"] - e["aq"]) / (e["bq"] + e["aq"])
        b = _bucket(imb, edges)
        spread = e["ask"] - e["bid"]
        later = [f for f in events[i + 1:] if f["day"] == e["day"]]
        # next mid change
        for f in later:
            if f["q"] and _mid(f) != _mid(e):
                out["mid_move"].append((e["day"], b, (_mid(f) - _mid(e)) / spread))
                out["mid_wait"].append((e["day"], b, (f["ts"] - e["ts"]) / 1e6))
                break
        # next trade of each side, with the quote prevailing at that trade
        for side, name in ((-1, "sell"), (1, "buy")):
            prevailing = e
            for f in later:
                if f["q"]:
                    prevailing = f
                elif f["side"] == side:
                    out[f"move_{name}"].append((e["day"], b,
                                                (_mid(prevailing) - _mid(e)) / spread))
                    out[f"wait_{name}"].append((e["day"], b, (f["ts"] - e["ts"]) / 1e6))
                    break
        # first of: fill on the near side, mid change
        for f in later:
            if not f["q"] and f["side"] == fill_side:
                outcome = "fill"
            elif f["q"] and _mid(f) != _mid(e):
                up = _mid(f) > _mid(e)
                outcome = "unfav" if up == (near_side == "Bid") else "fav"
            else:
                continue
            out["prob_fill"].append((e["day"], b, float(outcome == "fill")))
            out["prob_favourable"].append((e["day"], b, float(outcome == "fav")))
            out["prob_unfavourable"].append((e["day"], b, float(outcome == "unfav")))
            break
    return {f"{name}.csv": _curve_csv(samples, edges) for name, samples in out.items()}


# ---------------------------------------------------------------------------
# Hitting probabilities by brute-force random walk.


def _walk(start, chol, n_paths, dt, seed, max_iter=200_000):
    """First coordinate to hit zero for each path (-1 if still alive).

    The step is ``dt`` times the squared distance to the origin, so the walk
    covers scales geometrically; a Brownian bridge test catches crossings
    between grid points.
    """
    rng = np.random.default_rng(seed)
    dim = len(start)
    pos = np.tile(np.asarray(start, dtype=float), (n_paths, 1))
    hit = np.full(n_paths, -1, dtype=np.int64)
    alive = np.arange(n_paths)
    for _ in range(max_iter):
        if alive.size == 0:
            break
        p = pos[alive]
        h = dt * np.sum(p * p, axis=1)
        new = p + (rng.standard_normal((alive.size, dim)) @ chol.T) * np.sqrt(h)[:, None]
        with np.errstate(divide="ignore", over="ignore"):
            pc = np.where(new <= 0, 1.0, np.exp(-2.0 * p * np.maximum(new, 0) / h[:, None]))
        crossed = rng.random((alive.size, dim)) < pc
        # Among simultaneous crossings take the one most likely to have gone first.
        score = np.where(crossed, pc / np.maximum(p, 1e-300), -1.0)
        any_cross = crossed.any(axis=1)
        first = np.argmax(score, axis=1)
        hit[alive[any_cross]] = first[any_cross]
        pos[alive] = new
        alive = alive[~any_cross]
    return hit


def _estimate(hit, coord):
    done = hit >= 0
    v = (hit[done] == coord).astype(float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), int(np.count_nonzero(~done))


def hitting_2d(x, y, rho, n_paths=200_000, dt=1e-3, seed=1):
    """Probability that y reaches zero before x: (mean, std error, censored)."""
    chol = np.array([[1.0, 0.0], [rho, math.sqrt(1 - rho * rho)]])
    return _estimate(_walk((x, y), chol, n_paths, dt, seed), 1)


def first_event_3d(x, y, z, rho_xy, rho_xz, rho_yz, n_paths=200_000, dt=1e-3, seed=1):
    """(p_up, p_down, p_trade) estimates, each as (mean, std error, censored).

    Up means y hits zero first, down means x, trade means z.
    """
    cov = np.array([[1, rho_xy, rho_xz], [rho_xy, 1, rho_yz], [rho_xz, rho_yz, 1]], float)
    hit = _walk((x, y, z), np.linalg.cholesky(cov), n_paths, dt, seed)
    return tuple(_estimate(hit, c) for c in (1, 0, 2))


def closed_form_uptick(x, y, rho):
    """Reference closed form written from scratch in the decorrelated frame.

    With ``u = y`` and ``v = (x - rho y) / sqrt(1 - rho^2)`` the face y = 0 is
    the ray at angle pi/2 and the face x = 0 the ray at -asin(rho); the
    harmonic measure of the first is linear in the angle.
    """
    v = (x - rho * y) / math.sqrt(1 - rho * rho)
    theta = math.atan2(v, y)
    return (theta + math.asin(rho)) / (math.pi / 2 + math.asin(rho))
