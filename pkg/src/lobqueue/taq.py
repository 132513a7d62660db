"""Trades-and-quotes ingestion and imbalance-bucketed empirical curves.

The stream is held as flat numpy arrays in merged event order (quotes before
trades at equal timestamps). Every curve is computed per UTC day, then the
daily aggregates are combined; nothing ever looks across a day boundary.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InputError

US_PER_DAY = 86_400_000_000
DEFAULT_BUCKETS = 20

QUOTE_COLUMNS = ("ts_us", "bid_px", "ask_px", "bid_qty", "ask_qty")
TRADE_COLUMNS = ("ts_us", "px", "qty")
MERGED_COLUMNS = ("ts_us", "kind", "bid_px", "ask_px", "bid_qty", "ask_qty", "px", "qty", "side")
CURVE_COLUMNS = ("bucket_lo", "bucket_hi", "mean", "std_err", "count")


class TradeSide(enum.Enum):
    BUY = "Buy"
    SELL = "Sell"
    UNKNOWN = "Unknown"

    @property
    def sign(self) -> int:
        return {"Buy": 1, "Sell": -1, "Unknown": 0}[self.value]

    @classmethod
    def parse(cls, text: str) -> TradeSide:
        key = text.strip().lower()
        if key in ("", "unknown", "u", "?"):
            return cls.UNKNOWN
        if key in ("buy", "b"):
            return cls.BUY
        if key in ("sell", "s"):
            return cls.SELL
        raise ValueError(f"unrecognised trade side {text!r}")


_SIDE_OF_SIGN = {1: TradeSide.BUY, -1: TradeSide.SELL, 0: TradeSide.UNKNOWN}


@dataclass(frozen=True)
class QuoteUpdate:
    t: int
    bid_px: float
    ask_px: float
    bid_qty: float
    ask_qty: float

    def __post_init__(self):
        if not self.ask_px > self.bid_px:
            raise DomainError(f"quote at {self.t} is crossed or locked")
        if self.bid_qty < 0 or self.ask_qty < 0:
            raise DomainError(f"quote at {self.t} has a negative size")

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid_px + self.ask_px)

    @property
    def spread(self) -> float:
        return self.ask_px - self.bid_px


@dataclass(frozen=True)
class TradeRecord:
    t: int
    px: float
    qty: float
    side: TradeSide = TradeSide.UNKNOWN

    def __post_init__(self):
        if not self.qty > 0:
            raise DomainError(f"trade at {self.t} has nonpositive quantity")


def infer_trade_side(trade: TradeRecord, prevailing: QuoteUpdate | None, tick: int = 0) -> TradeSide:
    """Quote rule against the prevailing quote, tick rule inside the spread.

    ``tick`` is the direction of the last trade-price change (+1, -1 or 0
    when there is none); it is only consulted for prices strictly inside
    the spread or when no quote is available.
    """
    if prevailing is not None:
        if trade.px >= prevailing.ask_px:
            return TradeSide.BUY
        if trade.px <= prevailing.bid_px:
            return TradeSide.SELL
    return _SIDE_OF_SIGN[int(np.sign(tick))]


@dataclass
class StreamStats:
    crossed_dropped: int = 0
    resorted: int = 0
    sides_given: int = 0
    sides_by_quote: int = 0
    sides_by_tick: int = 0
    sides_unknown: int = 0


@dataclass(frozen=True, eq=False)
class TaqStream:
    """Merged quote/trade sequence as parallel arrays.

    ``kind`` is 0 for quotes and 1 for trades. Quote columns are NaN on trade
    rows and vice versa. ``side`` holds +1/-1/0 (buy, sell, unknown) after
    inference.
    """

    ts: np.ndarray
    kind: np.ndarray
    bid_px: np.ndarray
    ask_px: np.ndarray
    bid_qty: np.ndarray
    ask_qty: np.ndarray
    px: np.ndarray
    qty: np.ndarray
    side: np.ndarray
    stats: StreamStats = field(default_factory=StreamStats)

    def __len__(self) -> int:
        return int(self.ts.size)

    @property
    def day(self) -> np.ndarray:
        return self.ts // US_PER_DAY

    @property
    def quote_index(self) -> np.ndarray:
        return np.flatnonzero(self.kind == 0)

    @property
    def trade_index(self) -> np.ndarray:
        return np.flatnonzero(self.kind == 1)

    @property
    def n_days(self) -> int:
        return int(np.unique(self.day).size)

    def __iter__(self):
        for i in range(len(self)):
            if self.kind[i] == 0:
                yield QuoteUpdate(int(self.ts[i]), float(self.bid_px[i]), float(self.ask_px[i]),
                                  float(self.bid_qty[i]), float(self.ask_qty[i]))
            else:
                yield TradeRecord(int(self.ts[i]), float(self.px[i]), float(self.qty[i]),
                                  _SIDE_OF_SIGN[int(self.side[i])])


# ---------------------------------------------------------------------------
# Parsing.


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, newline="", encoding="utf-8"), str(source)
        except OSError as err:
            raise InputError(f"cannot open: {err.strerror}", path=str(source)) from err
    return source, getattr(source, "name", None)


def _read_rows(source, required: tuple[str, ...], optional: tuple[str, ...] = ()):
    """Yield (line number, dict) for each data row after checking the header."""
    fh, name = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return
        except UnicodeDecodeError as err:
            raise InputError("file is not valid UTF-8", line=1, path=name) from err
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise InputError(f"header lacks column(s) {', '.join(missing)}", line=1, path=name)
        cols = {c: header.index(c) for c in required + optional if c in header}
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise InputError(f"expected {len(header)} fields, found {len(row)}",
                                     line=line, path=name)
                yield line, name, {c: row[i].strip() for c, i in cols.items()}
        except UnicodeDecodeError as err:
            raise InputError("file is not valid UTF-8", path=name) from err
    finally:
        if fh is not source:
            fh.close()


def _num(text: str, what: str, line: int, name, integer: bool = False):
    try:
        val = int(text) if integer else float(text)
    except ValueError:
        raise InputError(f"{what} is not a valid {'integer' if integer else 'number'}: {text!r}",
                         line=line, path=name) from None
    if not integer and not math.isfinite(val):
        raise InputError(f"{what} is not finite: {text!r}", line=line, path=name)
    return val


def _quote_row(rec: dict, line: int, name, stats: StreamStats):
    ts = _num(rec["ts_us"], "ts_us", line, name, integer=True)
    bp = _num(rec["bid_px"], "bid_px", line, name)
    ap = _num(rec["ask_px"], "ask_px", line, name)
    bq = _num(rec["bid_qty"], "bid_qty", line, name)
    aq = _num(rec["ask_qty"], "ask_qty", line, name)
    if bq < 0 or aq < 0:
        raise InputError("quote sizes must be nonnegative", line=line, path=name)
    if ap <= bp:
        stats.crossed_dropped += 1
        return None
    return ts, bp, ap, bq, aq


def _trade_row(rec: dict, line: int, name):
    ts = _num(rec["ts_us"], "ts_us", line, name, integer=True)
    px = _num(rec["px"], "px", line, name)
    qty = _num(rec["qty"], "qty", line, name)
    if qty <= 0:
        raise InputError("trade quantity must be positive", line=line, path=name)
    try:
        side = TradeSide.parse(rec.get("side", ""))
    except ValueError as err:
        raise InputError(str(err), line=line, path=name) from None
    return ts, px, qty, side.sign


def _check_order(ts_list: list[int], lines: list[int], name, on_unsorted: str) -> bool:
    for k in range(1, len(ts_list)):
        if ts_list[k] < ts_list[k - 1]:
            if on_unsorted == "sort":
                return True
            raise InputError(f"timestamp {ts_list[k]} precedes the previous row "
                             f"({ts_list[k - 1]}); use on_unsorted='sort' to accept",
                             line=lines[k], path=name)
    return False


def parse_stream(source=None, *, quotes=None, trades=None, on_unsorted: str = "reject") -> TaqStream:
    """Read a merged CSV (``source``) or a quotes/trades pair into a stream.

    Rows with ``ask_px <= bid_px`` are dropped and counted. Timestamps must
    be nondecreasing unless ``on_unsorted='sort'``, which applies a stable
    sort. Trade sides are inferred where not given.
    """
    if on_unsorted not in ("reject", "sort"):
        raise ValueError("on_unsorted must be 'reject' or 'sort'")
    if (source is None) == (quotes is None and trades is None):
        raise ValueError("pass either a merged source or quotes/trades files")
    stats = StreamStats()
    q_rows, t_rows = [], []  # (ts, order, values)
    if source is not None:
        ts_all, lines = [], []
        name = None
        for order, (line, name, rec) in enumerate(_read_rows(source, MERGED_COLUMNS[:2],
                                                             MERGED_COLUMNS[2:])):
            kind = rec["kind"].upper()
            if kind == "Q":
                for c in QUOTE_COLUMNS[1:]:
                    if c not in rec:
                        raise InputError(f"header lacks column {c}", line=1, path=name)
                vals = _quote_row(rec, line, name, stats)
                ts = _num(rec["ts_us"], "ts_us", line, name, integer=True)
                if vals is not None:
                    q_rows.append((ts, order, vals))
            elif kind == "T":
                for c in TRADE_COLUMNS[1:]:
                    if c not in rec:
                        raise InputError(f"header lacks column {c}", line=1, path=name)
                vals = _trade_row(rec, line, name)
                ts = vals[0]
                t_rows.append((ts, order, vals))
            else:
                raise InputError(f"kind must be Q or T, got {rec['kind']!r}", line=line, path=name)
            ts_all.append(ts)
            lines.append(line)
        if _check_order(ts_all, lines, name, on_unsorted):
            stats.resorted = 1
    else:
        if quotes is not None:
            ts_q, lines = [], []
            name = None
            for order, (line, name, rec) in enumerate(_read_rows(quotes, QUOTE_COLUMNS)):
                ts = _num(rec["ts_us"], "ts_us", line, name, integer=True)
                ts_q.append(ts)
                lines.append(line)
                vals = _quote_row(rec, line, name, stats)
                if vals is not None:
                    q_rows.append((ts, order, vals))
            if _check_order(ts_q, lines, name, on_unsorted):
                stats.resorted += 1
        if trades is not None:
            ts_t, lines = [], []
            name = None
            for order, (line, name, rec) in enumerate(_read_rows(trades, TRADE_COLUMNS, ("side",))):
                vals = _trade_row(rec, line, name)
                ts_t.append(vals[0])
                lines.append(line)
                t_rows.append((vals[0], order, vals))
            if _check_order(ts_t, lines, name, on_unsorted):
                stats.resorted += 1
    return _assemble(q_rows, t_rows, stats)


def _assemble(q_rows, t_rows, stats: StreamStats) -> TaqStream:
    # Sort key: timestamp, quotes before trades, then original order.
    keyed = [(ts, 0, order, vals) for ts, order, vals in q_rows]
    keyed += [(ts, 1, order, vals) for ts, order, vals in t_rows]
    keyed.sort(key=lambda r: (r[0], r[1], r[2]))
    n = len(keyed)
    ts = np.array([r[0] for r in keyed], dtype=np.int64)
    kind = np.array([r[1] for r in keyed], dtype=np.int8)
    cols = {c: np.full(n, np.nan) for c in ("bid_px", "ask_px", "bid_qty", "ask_qty", "px", "qty")}
    side = np.zeros(n, dtype=np.int8)
    for i, (_, k, _, vals) in enumerate(keyed):
        if k == 0:
            cols["bid_px"][i], cols["ask_px"][i], cols["bid_qty"][i], cols["ask_qty"][i] = vals[1:]
        else:
            cols["px"][i], cols["qty"][i], side[i] = vals[1], vals[2], vals[3]
    stream = TaqStream(ts, kind, side=side, stats=stats, **cols)
    _infer_sides(stream)
    return stream


def _infer_sides(stream: TaqStream) -> None:
    stats = stream.stats
    day = stream.day
    prevailing = None
    last_px, tick = None, 0
    for i in range(len(stream)):
        if i > 0 and day[i] != day[i - 1]:
            prevailing, last_px, tick = None, None, 0
        if stream.kind[i] == 0:
            prevailing = i
            continue
        px = stream.px[i]
        if last_px is not None and px != last_px:
            tick = 1 if px > last_px else -1
        last_px = px
        if stream.side[i] != 0:
            stats.sides_given += 1
            continue
        quote = None
        if prevailing is not None:
            quote = QuoteUpdate(int(stream.ts[prevailing]), float(stream.bid_px[prevailing]),
                                float(stream.ask_px[prevailing]), float(stream.bid_qty[prevailing]),
                                float(stream.ask_qty[prevailing]))
        side = infer_trade_side(TradeRecord(int(stream.ts[i]), float(px), float(stream.qty[i])),
                                quote, tick)
        stream.side[i] = side.sign
        if side is TradeSide.UNKNOWN:
            stats.sides_unknown += 1
        elif quote is not None and (px >= quote.ask_px or px <= quote.bid_px):
            stats.sides_by_quote += 1
        else:
            stats.sides_by_tick += 1


# ---------------------------------------------------------------------------
# Bucketed statistics.


def bucket_edges(n_buckets: int = DEFAULT_BUCKETS) -> np.ndarray:
    if n_buckets < 1:
        raise ValueError("need at least one bucket")
    return np.linspace(-1.0, 1.0, n_buckets + 1)


def assign_buckets(imbalance, edges: np.ndarray) -> np.ndarray:
    """Bucket index per imbalance; edges go to the right bucket, 1 to the last."""
    idx = np.searchsorted(edges, np.asarray(imbalance, dtype=float), side="right") - 1
    return np.clip(idx, 0, edges.size - 2)


@dataclass(frozen=True, eq=False)
class BucketedCurve:
    """Per-bucket mean, standard error and count, built from daily aggregates.

    The bucket mean is the plain average of daily means over the days that
    have samples in the bucket. Each day's mean carries its own standard
    error ``s_d / sqrt(n_d)``; days are independent, so the error of the
    average is ``sqrt(sum SE_d**2) / n_days``.
    """

    edges: np.ndarray
    days: np.ndarray
    day_count: np.ndarray   # (n_days, n_buckets)
    day_mean: np.ndarray
    day_se: np.ndarray
    excluded: int = 0

    @classmethod
    def from_samples(cls, edges: np.ndarray, day, bucket, value, excluded: int = 0) -> BucketedCurve:
        day = np.asarray(day, dtype=np.int64)
        bucket = np.asarray(bucket, dtype=np.int64)
        value = np.asarray(value, dtype=float)
        days = np.unique(day)
        nb = edges.size - 1
        count = np.zeros((days.size, nb), dtype=np.int64)
        mean = np.full((days.size, nb), np.nan)
        se = np.full((days.size, nb), np.nan)
        for di, d in enumerate(days):
            on_day = day == d
            for b in np.unique(bucket[on_day]):
                v = value[on_day & (bucket == b)]
                count[di, b] = v.size
                mean[di, b] = np.mean(v)
                se[di, b] = np.std(v, ddof=1) / math.sqrt(v.size) if v.size > 1 else 0.0
        return cls(edges, days, count, mean, se, excluded)

    @property
    def n_buckets(self) -> int:
        return self.edges.size - 1

    @property
    def count(self) -> np.ndarray:
        return self.day_count.sum(axis=0)

    @property
    def n_days_per_bucket(self) -> np.ndarray:
        return (self.day_count > 0).sum(axis=0)

    @property
    def mean(self) -> np.ndarray:
        out = np.full(self.n_buckets, np.nan)
        for b in range(self.n_buckets):
            has = self.day_count[:, b] > 0
            if has.any():
                out[b] = np.mean(self.day_mean[has, b])
        return out

    @property
    def std_error(self) -> np.ndarray:
        out = np.full(self.n_buckets, np.nan)
        for b in range(self.n_buckets):
            has = self.day_count[:, b] > 0
            if has.any():
                out[b] = math.sqrt(float(np.sum(self.day_se[has, b] ** 2))) / int(has.sum())
        return out

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def is_empty(self) -> bool:
        return int(self.count.sum()) == 0

    def rows(self):
        mean, se, count = self.mean, self.std_error, self.count
        for b in range(self.n_buckets):
            yield (float(self.edges[b]), float(self.edges[b + 1]), float(mean[b]),
                   float(se[b]), int(count[b]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CURVE_COLUMNS) + "\n")
        for lo, hi, m, s, c in self.rows():
            buf.write(f"{_fmt(lo)},{_fmt(hi)},{_fmt(m)},{_fmt(s)},{c}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class CurveTable:
    """A curve as read back from CSV: only the aggregated columns."""

    edges: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    count: np.ndarray

    @property
    def n_buckets(self) -> int:
        return self.edges.size - 1

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @classmethod
    def from_curve(cls, curve: BucketedCurve) -> CurveTable:
        return cls(curve.edges.copy(), curve.mean, curve.std_error, curve.count)


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    return repr(float(x))


def read_curve_csv(path) -> CurveTable:
    los, his, means, ses, counts = [], [], [], [], []
    for line, name, rec in _read_rows(path, CURVE_COLUMNS):
        los.append(_num(rec["bucket_lo"], "bucket_lo", line, name))
        his.append(_num(rec["bucket_hi"], "bucket_hi", line, name))
        means.append(float(rec["mean"]) if rec["mean"] != "nan" else math.nan)
        ses.append(float(rec["std_err"]) if rec["std_err"] != "nan" else math.nan)
        counts.append(_num(rec["count"], "count", line, name, integer=True))
    if not los:
        raise InputError("curve file has no rows", path=str(path))
    edges = np.array(los + [his[-1]])
    if not np.allclose(edges[1:-1], np.array(his[:-1]), rtol=0, atol=1e-12):
        raise InputError("curve buckets are not contiguous", path=str(path))
    return CurveTable(edges, np.array(means), np.array(ses), np.array(counts, dtype=np.int64))


# ---------------------------------------------------------------------------
# Empirical curves.


@dataclass(frozen=True)
class _QuoteView:
    pos: np.ndarray       # merged positions of the quotes
    day: np.ndarray
    mid: np.ndarray
    spread: np.ndarray
    imbalance: np.ndarray  # NaN for an empty book
    ts: np.ndarray


def _quotes(stream: TaqStream) -> _QuoteView:
    pos = stream.quote_index
    bq, aq = stream.bid_qty[pos], stream.ask_qty[pos]
    tot = bq + aq
    with np.errstate(invalid="ignore", divide="ignore"):
        imb = np.where(tot > 0, (bq - aq) / np.where(tot > 0, tot, 1.0), np.nan)
    bp, ap = stream.bid_px[pos], stream.ask_px[pos]
    return _QuoteView(pos, stream.day[pos], 0.5 * (bp + ap), ap - bp, imb, stream.ts[pos])


def _first_after(targets: np.ndarray, starts: np.ndarray, day: np.ndarray,
                 start_day: np.ndarray) -> np.ndarray:
    """For each start, the first target strictly after it on the same day, or
    -1. ``targets`` is sorted; ``day`` gives the day of each target."""
    out = np.full(starts.size, -1, dtype=np.int64)
    if targets.size == 0:
        return out
    k = np.searchsorted(targets, starts, side="right")
    ok = k < targets.size
    cand = targets[np.minimum(k, targets.size - 1)]
    ok &= day[np.minimum(k, targets.size - 1)] == start_day
    out[ok] = cand[ok]
    return out


def _next_mid_change(q: _QuoteView) -> np.ndarray:
    """Index (into the quote view) of the next quote with a different mid on
    the same day, or -1."""
    change = np.flatnonzero((q.mid[1:] != q.mid[:-1]) & (q.day[1:] == q.day[:-1])) + 1
    return _first_after(change, np.arange(q.mid.size), q.day[change], q.day)


def _next_trade(stream: TaqStream, q: _QuoteView, side_sign: int) -> np.ndarray:
    """Merged position of the next same-day trade of the given side after
    each quote, or -1."""
    tpos = np.flatnonzero((stream.kind == 1) & (stream.side == side_sign))
    return _first_after(tpos, q.pos, stream.day[tpos], q.day)


def curve_next_mid_move(stream: TaqStream, edges: np.ndarray) -> tuple[BucketedCurve, BucketedCurve]:
    """Spread-normalized move and wait (seconds) to the next mid change."""
    q = _quotes(stream)
    nxt = _next_mid_change(q)
    use = (nxt >= 0) & ~np.isnan(q.imbalance)
    excluded = int(np.count_nonzero(~use))
    i = np.flatnonzero(use)
    j = nxt[use]
    move = (q.mid[j] - q.mid[i]) / q.spread[i]
    wait = (q.ts[j] - q.ts[i]) / 1e6
    b = assign_buckets(q.imbalance[i], edges)
    return (BucketedCurve.from_samples(edges, q.day[i], b, move, excluded),
            BucketedCurve.from_samples(edges, q.day[i], b, wait, excluded))


def _prevailing_quote(q: _QuoteView, merged_pos: np.ndarray) -> np.ndarray:
    return np.searchsorted(q.pos, merged_pos, side="left") - 1


def curve_to_next_trade(stream: TaqStream, edges: np.ndarray,
                        side: TradeSide | str) -> tuple[BucketedCurve, BucketedCurve]:
    """Move (in spreads of the original quote) and wait until the next trade
    of ``side``, measured at the quote prevailing when the trade prints."""
    side = TradeSide(side)
    if side is TradeSide.UNKNOWN:
        raise ValueError("side must be Buy or Sell")
    q = _quotes(stream)
    nxt = _next_trade(stream, q, side.sign)
    use = (nxt >= 0) & ~np.isnan(q.imbalance)
    excluded = int(np.count_nonzero(~use))
    i = np.flatnonzero(use)
    tp = nxt[use]
    prev = _prevailing_quote(q, tp)
    move = (q.mid[prev] - q.mid[i]) / q.spread[i]
    wait = (stream.ts[tp] - q.ts[i]) / 1e6
    b = assign_buckets(q.imbalance[i], edges)
    return (BucketedCurve.from_samples(edges, q.day[i], b, move, excluded),
            BucketedCurve.from_samples(edges, q.day[i], b, wait, excluded))


def curve_event_probabilities(stream: TaqStream, edges: np.ndarray, near_side: str = "Bid"
                              ) -> tuple[BucketedCurve, BucketedCurve, BucketedCurve]:
    """Frequencies of (favourable move, unfavourable move, fill) as the first
    event after each quote, for an order pegged at ``near_side``.

    For a bid the fill is a sell trade and a falling mid is favourable; the
    ask is the mirror image. Quotes followed by neither before the day ends
    are excluded and counted.
    """
    if near_side not in ("Bid", "Ask"):
        raise ValueError("near_side must be 'Bid' or 'Ask'")
    fill_sign = -1 if near_side == "Bid" else 1
    q = _quotes(stream)
    nxt_mid = _next_mid_change(q)
    mid_pos = np.where(nxt_mid >= 0, q.pos[np.maximum(nxt_mid, 0)], -1)
    trade_pos = _next_trade(stream, q, fill_sign)
    big = np.iinfo(np.int64).max
    m = np.where(mid_pos >= 0, mid_pos, big)
    t = np.where(trade_pos >= 0, trade_pos, big)
    classified = (np.minimum(m, t) < big) & ~np.isnan(q.imbalance)
    excluded = int(np.count_nonzero(~classified))
    i = np.flatnonzero(classified)
    is_fill = t[i] < m[i]
    up = np.zeros(i.size, dtype=bool)
    moved = ~is_fill
    up[moved] = q.mid[nxt_mid[i[moved]]] > q.mid[i[moved]]
    if near_side == "Bid":
        fav, unfav = moved & ~up, moved & up
    else:
        fav, unfav = moved & up, moved & ~up
    b = assign_buckets(q.imbalance[i], edges)
    d = q.day[i]
    return tuple(BucketedCurve.from_samples(edges, d, b, ind.astype(float), excluded)
                 for ind in (fav, unfav, is_fill))


def estimate_queue_scales(stream: TaqStream) -> tuple[float, float]:
    """Per-square-root-second diffusion scales of the bid and ask queues.

    Realized variance of size changes between consecutive same-day quotes
    whose price on that side did not change, over the elapsed time.
    """
    q = stream.quote_index
    if q.size < 2:
        raise InputError("need at least two quote updates to estimate queue scales")
    day = stream.day[q]
    same_day = day[1:] == day[:-1]
    dt = (stream.ts[q][1:] - stream.ts[q][:-1]) / 1e6
    out = []
    for px, qty, name in ((stream.bid_px, stream.bid_qty, "bid"),
                          (stream.ask_px, stream.ask_qty, "ask")):
        p, s = px[q], qty[q]
        keep = same_day & (p[1:] == p[:-1])
        elapsed = float(np.sum(dt[keep]))
        if elapsed <= 0:
            raise InputError(f"no elapsed time between same-price {name} quotes; "
                             "cannot estimate the queue scale")
        var = float(np.sum((s[1:] - s[:-1])[keep] ** 2)) / elapsed
        if var <= 0:
            raise DomainError(f"{name} queue never changes size; its diffusion scale is zero")
        out.append(math.sqrt(var))
    return out[0], out[1]


def average_depth(stream: TaqStream) -> float:
    """Time-weighted mean of ``bid_qty + ask_qty`` over same-day quote spells."""
    q = stream.quote_index
    if q.size == 0:
        raise InputError("no quotes in stream")
    tot = stream.bid_qty[q] + stream.ask_qty[q]
    day = stream.day[q]
    dt = (stream.ts[q][1:] - stream.ts[q][:-1]).astype(float)
    dt[day[1:] != day[:-1]] = 0.0
    if dt.sum() <= 0:
        return float(np.mean(tot))
    return float(np.sum(tot[:-1] * dt) / np.sum(dt))


def reset_samples(stream: TaqStream) -> tuple[np.ndarray, np.ndarray]:
    """Queue sizes seen right after a level is depleted.

    A falling bid price or a rising ask price between consecutive same-day
    quotes marks a depletion; the new size on that side is a reset draw.
    """
    q = stream.quote_index
    day = stream.day[q]
    same = day[1:] == day[:-1]
    bp, ap = stream.bid_px[q], stream.ask_px[q]
    bq, aq = stream.bid_qty[q], stream.ask_qty[q]
    bid = bq[1:][same & (bp[1:] < bp[:-1])]
    ask = aq[1:][same & (ap[1:] > ap[:-1])]
    return bid[bid > 0], ask[ask > 0]


# ---------------------------------------------------------------------------
# The full set of curves used downstream.

CURVE_NAMES = ("prob_favourable", "prob_unfavourable", "prob_fill",
               "move_sell", "move_buy", "wait_sell", "wait_buy")
FIG1_NAMES = ("mid_move", "mid_wait")


@dataclass(frozen=True, eq=False)
class EmpiricalCurves:
    curves: dict
    summary: dict

    def files(self) -> dict[str, str]:
        """Output file name -> exact file content."""
        out = {f"{name}.csv": self.curves[name].to_csv() for name in CURVE_NAMES + FIG1_NAMES}
        out["summary.json"] = json.dumps(self.summary, indent=2, sort_keys=True) + "\n"
        return out


def compute_all_curves(stream: TaqStream, n_buckets: int = DEFAULT_BUCKETS,
                       near_side: str = "Bid") -> EmpiricalCurves:
    edges = bucket_edges(n_buckets)
    fav, unfav, fill = curve_event_probabilities(stream, edges, near_side)
    move_sell, wait_sell = curve_to_next_trade(stream, edges, TradeSide.SELL)
    move_buy, wait_buy = curve_to_next_trade(stream, edges, TradeSide.BUY)
    mid_move, mid_wait = curve_next_mid_move(stream, edges)
    curves = dict(prob_favourable=fav, prob_unfavourable=unfav, prob_fill=fill,
                  move_sell=move_sell, move_buy=move_buy, wait_sell=wait_sell,
                  wait_buy=wait_buy, mid_move=mid_move, mid_wait=mid_wait)
    try:
        sigma_b, sigma_a = estimate_queue_scales(stream)
        sigma_note = None
    except (InputError, DomainError) as err:
        sigma_b = sigma_a = None
        sigma_note = str(err)
    st = stream.stats
    summary = {
        "n_buckets": n_buckets,
        "near_side": near_side,
        "n_days": stream.n_days,
        "n_quotes": int(stream.quote_index.size),
        "n_trades": int(stream.trade_index.size),
        "crossed_dropped": st.crossed_dropped,
        "resorted": bool(st.resorted),
        "trade_sides": {"given": st.sides_given, "quote_rule": st.sides_by_quote,
                        "tick_rule": st.sides_by_tick, "unknown": st.sides_unknown},
        "excluded": {"event_probabilities": fill.excluded, "move_sell": move_sell.excluded,
                     "move_buy": move_buy.excluded, "mid_move": mid_move.excluded},
        "sigma_b": sigma_b,
        "sigma_a": sigma_a,
        "depth": average_depth(stream) if stream.quote_index.size else None,
    }
    if sigma_note:
        summary["sigma_note"] = sigma_note
    return EmpiricalCurves(curves, summary)
