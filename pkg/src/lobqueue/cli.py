"""Command-line entry point: ``lobqueue {curves,solve,simulate,calibrate,replay}``.

Each command computes all of its outputs in memory first and only then
writes them, together with a ``manifest.json`` that records everything
needed to rerun it. Exit codes: 0 success, 2 input error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__, calibration, mc, taq
from .config import Config, load_config, sha256_file
from .errors import DomainError, IllConditionedError, InputError
from .model import ModelParams, WedgeState, state_from_imbalance, uptick_probability
from .series import boundary_mismatch, solve_events

log = logging.getLogger("lobqueue")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(v if isinstance(v, str) else _fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# Shared option plumbing.


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--out-dir", required=True, help="directory for outputs and manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--buckets", type=int)
    p.add_argument("--modes", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("-v", "--verbose", action="store_true")


def _config(args) -> Config:
    cfg = load_config(args.config)
    over = {k: getattr(args, k, None) for k in ("seed", "buckets", "modes", "paths", "dt")}
    for flag, key in (("workers", "workers"), ("grid", "grid"), ("near_side", "near_side"),
                      ("on_unsorted", "on_unsorted")):
        over[key] = getattr(args, flag, None)
    return cfg.override(**over)


def _depth(cfg: Config, params: ModelParams) -> float:
    depth = cfg.depth()
    if depth is None:
        depth = params.sigma_b + params.sigma_a
        log.warning("no depth configured; using sigma_b + sigma_a = %g", depth)
    return depth


def _sim_config(cfg: Config, seed: int | None = None, paths: int | None = None) -> mc.SimConfig:
    return mc.SimConfig(dt=cfg.float("dt"), n_paths=paths or cfg.int("paths"),
                        seed=cfg.int("seed") if seed is None else seed,
                        bridge_correction=cfg.bool("bridge_correction"),
                        max_epochs=cfg.int("max_epochs"), workers=cfg.int("workers"))


# ---------------------------------------------------------------------------
# Commands. Each returns (files, inputs, warnings, effective config).


def cmd_curves(args, cfg: Config):
    on_unsorted = cfg.get("on_unsorted")
    if args.merged:
        if args.quotes or args.trades:
            raise InputError("use either --merged or --quotes/--trades")
        stream = taq.parse_stream(args.merged, on_unsorted=on_unsorted)
        inputs = [args.merged]
    else:
        if not args.quotes:
            raise InputError("curves needs --quotes (and usually --trades) or --merged")
        stream = taq.parse_stream(quotes=args.quotes, trades=args.trades, on_unsorted=on_unsorted)
        inputs = [p for p in (args.quotes, args.trades) if p]
    result = taq.compute_all_curves(stream, cfg.int("buckets"), cfg.get("near_side"))
    files = result.files()
    bid, ask = taq.reset_samples(stream)
    files["reset_bid.csv"] = _csv(["qty"], [[v] for v in bid])
    files["reset_ask.csv"] = _csv(["qty"], [[v] for v in ask])
    return files, inputs, [], cfg


def cmd_solve(args, cfg: Config):
    params = cfg.model_params()
    depth = _depth(cfg, params)
    n_modes = cfg.int("modes")
    sols = solve_events(params.corr, n_modes)
    rows = []
    for I in cfg.grid():
        st = state_from_imbalance(I, depth, params, clamp=True)
        if st.z <= 0:
            raise DomainError("phi0 must be positive to solve for a starting state")
        up, down, trade = (float(p) for p in sols.probabilities(st.x, st.y, st.z))
        rows.append([I, st.x, st.y, st.z, up, down, trade, up + down + trade])
    files = {"probabilities.csv": _csv(["imbalance", "x", "y", "z", "p_up", "p_down", "p_trade",
                                        "sum"], rows)}
    diag = []
    for sol in sols:
        rep = boundary_mismatch(sol)
        diag.append([sol.event.value, sol.frame, sol.n_modes, rep.max_abs, rep.rms])
        files[f"solution_{sol.event.value}.txt"] = sol.to_text()
    files["boundary.csv"] = _csv(["event", "frame", "modes", "max_abs_mismatch", "rms_mismatch"],
                                 diag)
    return files, [], [], cfg


def cmd_simulate(args, cfg: Config):
    params = cfg.model_params()
    depth = _depth(cfg, params)
    seed = cfg.int("seed")
    scenario = args.scenario
    rows, comp, dumps = [], [], {}
    sols = solve_events(params.corr, cfg.int("modes")) if scenario == "first_event" else None
    for k, I in enumerate(cfg.grid()):
        st = state_from_imbalance(I, depth, params, clamp=True)
        sc = _sim_config(cfg, seed=(seed + k) % 2**64)
        if scenario == "first_event":
            est, res = mc.simulate_first_event(st, params, sc, return_paths=True)
            rows.append([I] + [v for e in est for v in (e.mean, e.std_error)]
                        + [est[0].n, res.n_censored])
            series = sols.probabilities(st.x, st.y, st.z)
            for ev, e, s in zip(("PriceUp", "PriceDown", "NearSideTrade"), est, series):
                comp.append([I, ev, e.mean, e.std_error, float(s), e.zscore(float(s))])
        elif scenario == "side_trade":
            (ms, ws), rs = mc.simulate_until_side_trade("Bid", st, params, sc, return_paths=True)
            (mb, wb), rb = mc.simulate_until_side_trade("Ask", st, params, sc, return_paths=True)
            rows.append([I, ms.mean, ms.std_error, ws.mean, ws.std_error, mb.mean, mb.std_error,
                         wb.mean, wb.std_error, ms.mean - mb.mean,
                         math.hypot(ms.std_error, mb.std_error), rs.n_censored + rb.n_censored])
            res = rs
        else:
            w = WedgeState(st.x, st.y)
            rho = params.corr.rho_xy
            (m, wt, pu), res = mc.simulate_next_mid_move(w, rho, params, sc, return_paths=True)
            exact = uptick_probability(st.x, st.y, rho)
            rows.append([I, m.mean, m.std_error, wt.mean, wt.std_error, pu.mean,
                         pu.std_error, exact, pu.zscore(exact), res.n_censored])
        if args.dump_paths:
            dumps[f"paths_{k:03d}.csv"] = res.to_csv_text()
    headers = {
        "first_event": ["imbalance", "p_up", "p_up_se", "p_down", "p_down_se", "p_trade",
                        "p_trade_se", "n_completed", "n_censored"],
        "side_trade": ["imbalance", "move_sell", "move_sell_se", "wait_sell", "wait_sell_se",
                       "move_buy", "move_buy_se", "wait_buy", "wait_buy_se", "gap", "gap_se",
                       "n_censored"],
        "next_mid": ["imbalance", "move", "move_se", "wait", "wait_se", "p_up", "p_up_se",
                     "p_up_closed_form", "zscore", "n_censored"],
    }
    files = {"mc_curves.csv": _csv(headers[scenario], rows)}
    if comp:
        files["comparison.csv"] = _csv(["imbalance", "event", "mc", "mc_se", "series", "zscore"],
                                       comp)
    files.update(dumps)
    warnings = []
    censored = sum(int(r[-1]) for r in rows)
    if censored:
        warnings.append(f"{censored} path(s) censored by the step or epoch cap")
    return files, [], warnings, cfg


def cmd_calibrate(args, cfg: Config):
    tables, inputs = {}, []
    for name in taq.CURVE_NAMES:
        path = os.path.join(args.curves_dir, f"{name}.csv")
        tables[name] = taq.read_curve_csv(path)
        inputs.append(path)
    summary_path = os.path.join(args.curves_dir, "summary.json")
    summary = {}
    if os.path.exists(summary_path):
        with open(summary_path, encoding="utf-8") as fh:
            summary = json.load(fh)
        inputs.append(summary_path)
        if summary.get("near_side", "Bid") != "Bid":
            raise InputError("calibration expects event curves for a bid-side order",
                             path=summary_path)
    try:
        target = calibration.CalibrationTarget.from_tables(tables)
    except ValueError as err:
        raise InputError(str(err), path=args.curves_dir) from None
    over = {}
    for key in ("sigma_b", "sigma_a", "depth"):
        if key not in cfg.values and summary.get(key) is not None:
            over[key] = summary[key]
    cfg = cfg.override(**over)
    init = cfg.model_params()
    depth = _depth(cfg, init)
    opts = calibration.CalibrationOptions(
        symmetric=cfg.bool("symmetric"), free_depth=cfg.bool("free_depth"),
        n_modes=cfg.int("modes"), mc_paths=cfg.int("mc_paths"), mc_dt=cfg.float("mc_dt"),
        seed=cfg.int("seed"), restarts=cfg.int("restarts"), max_epochs=cfg.int("max_epochs"))
    if opts.symmetric and init.corr.rho_yz != -init.corr.rho_xz:
        init = init.replace(corr=type(init.corr)(init.corr.rho_xy, init.corr.rho_xz,
                                                 -init.corr.rho_xz))
    result = calibration.calibrate(target, init, depth, opts)
    files = {"result.json": json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n"}
    mids = target.midpoints
    for name in taq.CURVE_NAMES:
        rows = [[m, e, mo, r] for m, e, mo, r in zip(mids, target.mean[name],
                                                      result.model.mean[name],
                                                      result.residuals[name])]
        files[f"overlay_{name}.csv"] = _csv(["bucket", "empirical", "model", "residual"], rows)
    warnings = [] if result.converged else ["calibration did not converge; result written anyway"]
    return files, inputs, warnings, cfg


# ---------------------------------------------------------------------------
# Output, manifest and replay.


def _write_outputs(out_dir: str, files: dict[str, str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for name, content in files.items():
        final = os.path.join(out_dir, name)
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(content)
        os.replace(tmp, final)


def _manifest(args, argv, cfg: Config, inputs, files, started) -> dict:
    return {
        "command": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "config_path": args.config,
        "config_sha256": sha256_file(args.config) if args.config else None,
        "resolved_config": cfg.resolved(),
        "inputs": {p: sha256_file(p) for p in inputs},
        "outputs": {n: hashlib.sha256(c.encode("utf-8")).hexdigest()
                    for n, c in sorted(files.items())},
        "seed": cfg.int("seed"),
        "version": __version__,
        "started_utc": started,
        "finished_utc": _now(),
    }


def _replay_argv(args) -> list[str]:
    """Rebuild a command line from a manifest, pointing at a fresh out dir."""
    try:
        with open(args.manifest, encoding="utf-8") as fh:
            man = json.load(fh)
        argv = list(man["argv"])
        cwd = man["cwd"]
        inputs = man["inputs"]
        resolved = man["resolved_config"]
    except (OSError, ValueError, KeyError) as err:
        raise InputError(f"unreadable manifest: {err}", path=args.manifest) from None
    for path, digest in inputs.items():
        full = path if os.path.isabs(path) else os.path.join(cwd, path)
        if not os.path.exists(full) or sha256_file(full) != digest:
            raise InputError(f"input {path} is missing or changed since the recorded run")
    out = []
    skip = False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        if tok in ("--out-dir", "--config"):
            skip = True
            continue
        if tok.startswith(("--out-dir=", "--config=")):
            continue
        out.append(tok)
    # Input paths are made absolute against the recorded working directory.
    fixed = []
    path_flags = {"--quotes", "--trades", "--merged", "--curves-dir"}
    it = iter(out)
    for tok in it:
        fixed.append(tok)
        if tok in path_flags:
            val = next(it)
            fixed.append(val if os.path.isabs(val) else os.path.join(cwd, val))
    cfg_file = os.path.join(tempfile.mkdtemp(prefix="lobqueue-replay-"), "config.conf")
    with open(cfg_file, "w", encoding="utf-8") as fh:
        fh.write("".join(f"{k} = {v}\n" for k, v in sorted(resolved.items()) if v is not None))
    return fixed + ["--config", cfg_file, "--out-dir", args.out_dir]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lobqueue", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curves", help="empirical imbalance curves from trades and quotes")
    _common(p)
    p.add_argument("--quotes", help="quotes CSV: ts_us,bid_px,ask_px,bid_qty,ask_qty")
    p.add_argument("--trades", help="trades CSV: ts_us,px,qty[,side]")
    p.add_argument("--merged", help="merged CSV with a kind column (Q or T)")
    p.add_argument("--near-side", choices=("Bid", "Ask"))
    p.add_argument("--on-unsorted", choices=("reject", "sort"))

    p = sub.add_parser("solve", help="series probabilities over an imbalance grid")
    _common(p)
    p.add_argument("--grid", help="imbalance grid as lo:hi:count")

    p = sub.add_parser("simulate", help="Monte Carlo curves over an imbalance grid")
    _common(p)
    p.add_argument("--scenario", choices=("first_event", "side_trade", "next_mid"),
                   default="first_event")
    p.add_argument("--grid", help="imbalance grid as lo:hi:count")
    p.add_argument("--workers", type=int)
    p.add_argument("--dump-paths", action="store_true", help="write per-path outcomes")

    p = sub.add_parser("calibrate", help="fit the model to curves written by 'curves'")
    _common(p)
    p.add_argument("--curves-dir", required=True)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    return parser


COMMANDS = {"curves": cmd_curves, "solve": cmd_solve, "simulate": cmd_simulate,
            "calibrate": cmd_calibrate}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "replay":
            return main(_replay_argv(args))
        started = _now()
        cfg = _config(args)
        # The manifest records the configuration the command actually used,
        # including values it filled in from its inputs.
        files, inputs, warnings, cfg = COMMANDS[args.command](args, cfg)
        files = dict(files)
        manifest = _manifest(args, argv, cfg, inputs, files, started)
        files["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        _write_outputs(args.out_dir, files)
    except (InputError, DomainError, FileNotFoundError) as err:
        print(f"lobqueue: error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (IllConditionedError, ArithmeticError) as err:
        print(f"lobqueue: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    for w in warnings:
        print(f"lobqueue: warning: {w}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
