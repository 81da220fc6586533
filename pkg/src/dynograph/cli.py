"""``dynograph`` command-line tool.

Exit codes: 0 success, 1 invalid model or input, 2 query usage error,
3 simulation failure.  Commands that write files also write
``<first output>.manifest.json`` describing the run.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import influence as inf
from . import kalman
from ._backend import BACKEND
from .dsl import format_diagnostic, parse_model
from .errors import DynographError, ModelError, QueryError, SimulationError
from .model import SystemSpec, validate
from .simulate import (SimConfig, default_threads, observe, simulate,
                       write_observations_csv, write_trajectories_csv)

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_SIM = 0, 1, 2, 3

QUERY_RELATIONS = ("wcli", "direct", "influence", "scli-literal", "blocks", "dynindep",
                   "noninfluenced")


class _Usage(Exception):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: str, argv: Sequence[str], inputs: Sequence[str], started: str,
                   seed: Optional[int] = None, extra: Optional[dict] = None) -> None:
    doc = {
        "command": list(argv),
        "inputs": {p: _sha256(p) for p in inputs},
        "master_seed": seed,
        "version": __version__,
        "backend": BACKEND,
        "started": started,
        "finished": _now(),
    }
    if extra:
        doc.update(extra)
    Path(out + ".manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load(path: str) -> tuple[Optional[SystemSpec], list[str]]:
    """Parse and validate; returns (spec or None, printable problems)."""
    try:
        source = Path(path).read_text()
    except OSError as e:
        return None, [f"{path}: error[IO] {e.strerror}"]
    result = parse_model(source)
    if isinstance(result, list):
        return None, [format_diagnostic(d, path) for d in result]
    problems = [f"{path}: {v}" for v in validate(result)]
    return (None if problems else result), problems


def _load_or_exit(path: str) -> SystemSpec:
    spec, problems = _load(path)
    for p in problems:
        print(p, file=sys.stderr)
    if spec is None:
        raise SystemExit(EXIT_INVALID)
    return spec


# --- commands ------------------------------------------------------------

def cmd_check(args, argv) -> int:
    spec, problems = _load(args.file)
    for p in problems:
        print(p)
    if spec is None:
        return EXIT_INVALID
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mismatches = inf.probe_mismatches(spec)
    for j, k in mismatches:
        print(f"{args.file}: warning: {j} appears in the drift of {k} "
              "but does not change it numerically")
    print(f"{args.file}: ok ({len(spec.components)} components)")
    return EXIT_OK


def cmd_graph(args, argv) -> int:
    started = _now()
    spec = _load_or_exit(args.file)
    g = inf.derive_graph(spec)
    outs = []
    if args.dot:
        Path(args.dot).write_text(inf.export_dot(g, spec.name))
        outs.append(args.dot)
    if args.json:
        Path(args.json).write_text(inf.to_json(g))
        outs.append(args.json)
    if not outs:
        sys.stdout.write(inf.export_dot(g, spec.name))
    else:
        write_manifest(outs[0], argv, [args.file], started)
    return EXIT_OK


def _split(text: Optional[str]) -> list[str]:
    return [s.strip() for s in (text or "").split(",") if s.strip()]


def cmd_query(args, argv) -> int:
    started = _now()
    spec = _load_or_exit(args.file)
    g = inf.derive_graph(spec)
    rel = args.relation
    try:
        if rel == "noninfluenced":
            group = _split(args.from_)
            if not group:
                raise _Usage("noninfluenced needs --from with a comma-separated group")
            verdict = inf.non_influenced(g, group)
        else:
            if not args.from_ or not args.to:
                raise _Usage(f"{rel} needs --from and --to")
            j, k = args.from_, args.to
            if rel == "blocks":
                if args.block is None:
                    raise _Usage("blocks needs --block")
                verdict = inf.blocks(g, _split(args.block), j, k)
            else:
                fn = {"wcli": inf.wcli, "direct": inf.direct_influence, "influence": inf.influence,
                      "scli-literal": inf.scli_literal,
                      "dynindep": inf.dynamical_independence}[rel]
                verdict = fn(g, j, k)
    except (_Usage, QueryError) as e:
        print(f"dynograph query: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    text = json.dumps(verdict.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        write_manifest(args.out, argv, [args.file], started)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def parse_observe(text: str) -> tuple[str, list[float], float, Optional[float]]:
    """``channel:t1,t2,...:sd[:eta]`` -> (channel, times, sd, eta)."""
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise ValueError(f"bad --observe {text!r}; expected channel:times:sd[:eta]")
    channel = parts[0]
    times = [float(t) for t in _split(parts[1])]
    if not channel or not times:
        raise ValueError(f"bad --observe {text!r}; channel and times required")
    sd = float(parts[2])
    eta = float(parts[3]) if len(parts) == 4 and parts[3] != "" else None
    return channel, times, sd, eta


def _observation_seed(master: int, k: int) -> int:
    return int(np.random.SeedSequence([master, 0x0B5, k]).generate_state(1, np.uint64)[0])


def cmd_simulate(args, argv) -> int:
    started = _now()
    spec = _load_or_exit(args.file)
    try:
        observations = [parse_observe(o) for o in args.observe or []]
        if observations and not args.obs_out:
            raise ValueError("--observe needs --obs-out")
    except ValueError as e:
        print(f"dynograph simulate: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    threads = args.threads or default_threads()
    try:
        cfg = SimConfig(dt=args.dt, horizon=args.horizon, replicates=args.reps,
                        master_seed=args.seed, threads=threads)
        bundle = simulate(spec, cfg)
    except SimulationError as e:
        print(f"dynograph simulate: simulation failed: {e}", file=sys.stderr)
        return EXIT_SIM
    except ModelError as e:
        print(f"dynograph simulate: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    with open(args.out, "w", newline="") as fh:
        write_trajectories_csv(bundle, fh)
    extra = {"threads": threads}
    if observations:
        from .hiv import observed_markers

        markers = None
        records = []
        try:
            for k, (channel, times, sd, eta) in enumerate(observations):
                source = bundle
                if channel in ("VL", "CD4", "logVL") and channel not in bundle.components:
                    if markers is None:
                        markers = (observed_markers(bundle), observed_markers(bundle, log10=True))
                    source = markers[1] if channel == "logVL" else markers[0]
                    channel = "VL" if channel == "logVL" else channel
                recs = observe(source, channel, times, sd, eta, seed=_observation_seed(args.seed, k))
                records.append(recs)
        except ModelError as e:
            print(f"dynograph simulate: error: {e}", file=sys.stderr)
            return EXIT_INVALID
        merged = [sum((ch[r] for ch in records), []) for r in range(bundle.replicates)]
        with open(args.obs_out, "w", newline="") as fh:
            write_observations_csv(merged, fh)
        extra["observations"] = args.obs_out
    write_manifest(args.out, argv, [args.file], started, seed=args.seed, extra=extra)
    return EXIT_OK


def _read_coeffs(args) -> list[float]:
    if args.coeffs:
        text = args.coeffs
    else:
        raw = Path(args.coeffs_file).read_text()
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError:
            text = raw
        else:
            if isinstance(doc, dict):
                return [float(doc[n]) for n in kalman.COEFFICIENTS]
            return [float(v) for v in doc]
    return [float(v) for v in text.replace("\n", ",").split(",") if v.strip()]


def cmd_faithfulness(args, argv) -> int:
    started = _now()
    try:
        values = _read_coeffs(args)
        sys3 = kalman.LinearSystem3.from_sequence(values)
    except (OSError, ValueError, KeyError) as e:
        print(f"dynograph faithfulness: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    doc = {"coefficients": dict(zip(kalman.COEFFICIENTS, values))}
    if args.construct_unfaithful:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sys3 = kalman.construct_unfaithful(sys3.c1, sys3.c2, sys3.c3, sys3.b2, args.horizon,
                                               args.dt, a1=sys3.a1, a2=sys3.a2, a3=sys3.a3,
                                               b3_rule=args.b3_rule)
        res = kalman.dz_expansion_residuals(sys3, args.horizon, args.dt)
        doc["construction"] = {"b3_rule": args.b3_rule, "dx2_residual": res.dx2_coefficient,
                               "drift_condition_residual": res.drift_condition,
                               "notes": list(sys3.notes)}
    verdict = kalman.faithfulness_verdict(sys3, args.horizon, args.dt)
    doc["verdict"] = verdict.to_dict()
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.trace:
        ric = kalman.riccati_solve(sys3, args.horizon, args.dt)
        t = ric.time_grid
        b1 = sys3.coef("b1", t)
        resid = b1 + ric.R * sys3.coef("c1", t) * sys3.coef("c2", t)
        with open(args.trace, "w", newline="") as fh:
            fh.write("t,R,b1,b3,residual\n")
            for row in zip(t, ric.R, b1, sys3.coef("b3", t), resid):
                fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")
    first = args.out or args.trace
    if first:
        inputs = [args.coeffs_file] if args.coeffs_file else []
        write_manifest(first, argv, inputs, started)
    return EXIT_OK


# --- entry point ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynograph",
                                description="Influence graphs and simulation for dynamical models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="parse and validate a model file")
    c.add_argument("file")
    c.set_defaults(func=cmd_check)

    g = sub.add_parser("graph", help="derive the influence graph")
    g.add_argument("file")
    g.add_argument("--dot", help="write Graphviz DOT here")
    g.add_argument("--json", help="write JSON here")
    g.set_defaults(func=cmd_graph)

    q = sub.add_parser("query", help="ask a graph question")
    q.add_argument("file")
    q.add_argument("--relation", required=True, choices=QUERY_RELATIONS)
    q.add_argument("--from", dest="from_", help="source node (or group for noninfluenced)")
    q.add_argument("--to")
    q.add_argument("--block", help="comma-separated blocking set")
    q.add_argument("--out", help="write the JSON verdict here instead of stdout")
    q.set_defaults(func=cmd_query)

    s = sub.add_parser("simulate", help="Monte Carlo trajectories")
    s.add_argument("file")
    s.add_argument("--dt", type=float, required=True)
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="trajectory CSV")
    s.add_argument("--observe", action="append", metavar="CHANNEL:TIMES:SD[:ETA]",
                   help="measure a channel at comma-separated times; may repeat")
    s.add_argument("--obs-out", help="observation CSV (required with --observe)")
    s.add_argument("--threads", type=int, help="worker threads (default: DYNOGRAPH_THREADS or all cores)")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("faithfulness", help="linear three-component faithfulness check")
    src = f.add_mutually_exclusive_group(required=True)
    src.add_argument("--coeffs", help="a1,b1,c1,a2,b2,c2,a3,b3,c3")
    src.add_argument("--coeffs-file", help="JSON object/list or comma-separated text")
    f.add_argument("--horizon", type=float, default=10.0)
    f.add_argument("--dt", type=float, default=1e-3)
    f.add_argument("--construct-unfaithful", action="store_true",
                   help="replace b1 and b3 by the cancelling time-varying choice")
    f.add_argument("--b3-rule", choices=("literal", "exact"), default="literal")
    f.add_argument("--out", help="write the JSON verdict here instead of stdout")
    f.add_argument("--trace", help="write t,R,b1,b3,residual CSV here")
    f.set_defaults(func=cmd_faithfulness)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args, ["dynograph", *argv])
    except SystemExit as e:
        return int(e.code or 0)
    except DynographError as e:
        print(f"dynograph {args.command}: error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
