"""Command-line entry point: figure data as CSV, scenario runs, butterfly demo.

Exit codes: 0 success, 1 detection failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .errors import ConfigError, TracebackError
from .field import FieldCtx
from .incremental import DecoderParams, required_l
from .marking import MarkingConfig
from .netcode import butterfly, coded_routes
from .sim import Scenario, run_trial
from .stats import detection_window, fractions, safe_ceil, worst_case_ratio

BUTTERFLY_EXPECTED = {
    "D1": {"SCD1", "SEABD1", "SCABD1"},
    "D2": {"SED2", "SCABD2", "SEABD2"},
}


def fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


class Table:
    def __init__(self, command: str, meta: dict, header: List[str]):
        self.meta = {"algtrace": __version__, "command": command, **meta}
        self.header = header
        self.rows: List[list] = []

    def add(self, *row):
        self.rows.append([fmt(v) for v in row])

    def render(self) -> str:
        buf = io.StringIO()
        for k, v in self.meta.items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()


def _d_range(args, lo_default: int) -> range:
    lo = args.d_min if args.d_min is not None else lo_default
    if lo < 1 or args.d_max < lo or args.d_step < 1:
        raise ConfigError("need 1 <= d-min <= d-max and d-step >= 1")
    return range(lo, args.d_max + 1, args.d_step)


def cmd_fig3(args) -> Table:
    ctx = FieldCtx(args.p)
    cfg = MarkingConfig.uniform(args.q)
    header = ["d", "det_noninc", "det_inc", "rand_noninc", "rand_inc",
              "rand_inc_ceil_inner", "rand_inc_product"]
    if args.trials:
        header.append("mc_det_inc")
    t = Table("fig3", {"p": args.p, "delta": args.delta, "q": args.q,
                       "trials": args.trials, "seed": args.seed}, header)
    for d in _d_range(args, 1):
        l = required_l(d, ctx, args.delta)
        st = fractions(cfg, d)
        rand_noninc = d * safe_ceil(st.ratio)
        inner = detection_window(cfg, d, l)
        if d >= 2:
            F0, F1 = worst_case_ratio(cfg, d)
        else:
            st2 = fractions(cfg, 2)
            F0, F1 = st2.f0, st2.f1
        product = l * (1.0 - F0) / F1
        row = [d, d, l, rand_noninc, inner, inner, product]
        if args.trials:
            row.append(_mc_det_inc(ctx, d, args))
        t.add(*row)
    return t


def _mc_det_inc(ctx: FieldCtx, d: int, args) -> float:
    """Mean marked packets the deterministic detector consumed on random single additions."""
    from .path_model import ChangeEvent, Path, TimedEvent
    from .sim import run_ensemble

    rng = np.random.Generator(np.random.PCG64(args.seed + d))
    path = Path(rng.integers(0, ctx.p, d).tolist())
    ev = ChangeEvent.added(int(rng.integers(1, d + 2)), int(rng.integers(0, ctx.p)))
    sc = Scenario(ctx, path, MarkingConfig.deterministic(), [TimedEvent(0, ev)],
                  n_packets=10 * (d + 50), mode="deterministic", params=DecoderParams(args.delta))
    res = run_ensemble(sc, args.trials, args.seed)
    return res["marked_packets_consumed"]["mean"]


def cmd_fig4(args) -> Table:
    schemes = [MarkingConfig.uniform(args.q), MarkingConfig.cutoff(args.q, args.h0),
               MarkingConfig.geometric(args.alpha, args.h0)]
    t = Table("fig4", {"q": args.q, "alpha": args.alpha, "h0": args.h0},
              ["d", "scheme0_ratio", "scheme1_ratio", "scheme2_ratio"])
    for d in _d_range(args, 2):
        if d < 2:
            raise ConfigError("fig4 needs d >= 2")
        row = [d]
        for cfg in schemes:
            F0, F1 = worst_case_ratio(cfg, d)
            row.append((1.0 - F0) / F1)
        t.add(*row)
    return t


def _scheme_override(args) -> Optional[MarkingConfig]:
    if args.scheme is None:
        return None
    if args.scheme == "uniform":
        return MarkingConfig.uniform(args.q)
    if args.scheme == "cutoff":
        return MarkingConfig.cutoff(args.q, args.h0)
    if args.scheme == "geometric":
        return MarkingConfig.geometric(args.alpha, args.h0)
    return MarkingConfig.deterministic()


def cmd_simulate(args):
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from None
    over = {}
    if args.mode:
        over["mode"] = args.mode
    cfg = _scheme_override(args)
    if cfg is not None:
        over["config"] = cfg
    if args.delta_set:
        over["params"] = DecoderParams(delta=args.delta)
    base = Scenario.from_json(text, **over)
    seed0 = base.seed if args.seed_set is False else args.seed
    t = Table("simulate", {"scenario": args.scenario, "mode": base.mode, "p": base.ctx.p,
                           "trials": args.trials, "seed": seed0},
              ["trial", "seed", "initial_trace_packets", "initial_trace_ok", "event",
               "truth", "detected", "correct", "packets_consumed",
               "marked_packets_consumed", "retries", "error"])
    all_ok = True
    for i in range(args.trials):
        sc = Scenario(**{**base.__dict__, "seed": seed0 + i, "events": list(base.events)})
        rep = run_trial(sc)
        all_ok &= rep.all_correct
        if not rep.detections:
            t.add(i, sc.seed, rep.initial_trace_packets, int(rep.initial_trace_ok),
                  "", "", "", "", "", "", "", "")
        for j, det in enumerate(rep.detections):
            t.add(i, sc.seed, rep.initial_trace_packets, int(rep.initial_trace_ok), j,
                  det.truth, "" if det.detected is None else det.detected, int(det.correct),
                  det.packets_consumed, det.marked_packets_consumed, det.retries, det.error or "")
    return t, all_ok


def cmd_butterfly(args):
    dag = butterfly()
    ctx = FieldCtx(args.p)
    t = Table("butterfly", {"p": args.p, "seed": args.seed, "slots": args.slots},
              ["destination", "route"])
    routes = coded_routes(dag, args.slots, ctx, np.random.Generator(np.random.PCG64(args.seed)))
    ok = True
    for dest in dag.destinations:
        names = sorted("".join(r) for r in routes[dest])
        ok &= set(names) == BUTTERFLY_EXPECTED[dest]
        for name in names:
            t.add(dest, name)
    return t, ok


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--p", type=int, default=65537, help="field modulus (prime)")
    common.add_argument("--delta", type=int, default=None, help="extra marks over log_p d (default 2)")
    common.add_argument("--q", type=float, default=None, help="marking probability")
    common.add_argument("--alpha", type=float, default=0.5)
    common.add_argument("--h0", type=int, default=5)
    common.add_argument("--d-min", type=int, default=None)
    common.add_argument("--d-max", type=int, default=100)
    common.add_argument("--d-step", type=int, default=1)
    common.add_argument("--trials", type=int, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output CSV (default stdout)")
    common.add_argument("--scheme", choices=["uniform", "cutoff", "geometric", "deterministic"])
    common.add_argument("--mode", choices=["deterministic", "randomized"])

    ap = argparse.ArgumentParser(prog="algtrace", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("fig3", parents=[common], help="marked packets needed vs path length")
    sub.add_parser("fig4", parents=[common], help="(1-F0)/F1 for three marking schemes")
    s = sub.add_parser("simulate", parents=[common], help="run a scenario file")
    s.add_argument("scenario")
    b = sub.add_parser("butterfly", parents=[common], help="route recovery on the butterfly")
    b.add_argument("--slots", type=int, default=40)
    return ap


def _apply_defaults(args) -> None:
    args.delta_set = args.delta is not None
    args.seed_set = args.seed is not None
    if args.delta is None:
        args.delta = 2
    if args.seed is None:
        args.seed = 0
    if args.q is None:
        args.q = 0.04 if args.command == "fig3" else 0.2
    if args.trials is None:
        args.trials = 1 if args.command == "simulate" else 0
    if args.command == "fig4" and args.d_max == 100 and args.d_min is None:
        args.d_max = 30
    if args.trials < 0:
        raise ConfigError("--trials must be >= 0")


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_defaults(args)
        ok = True
        if args.command == "fig3":
            table = cmd_fig3(args)
        elif args.command == "fig4":
            table = cmd_fig4(args)
        elif args.command == "simulate":
            table, ok = cmd_simulate(args)
        else:
            table, ok = cmd_butterfly(args)
        text = table.render()
        if args.out:
            try:
                with open(args.out, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
            except OSError as exc:
                print(f"algtrace: cannot write {args.out}: {exc}", file=sys.stderr)
                return 2
        else:
            sys.stdout.write(text)
    except (ConfigError, ValueError) as exc:
        print(f"algtrace: {exc}", file=sys.stderr)
        return 2
    except TracebackError as exc:
        print(f"algtrace: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
