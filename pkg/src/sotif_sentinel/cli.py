"""Command-line entry point: ``sotif-sentinel <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 malformed input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import config as config_mod
from .config import Config, ConfigError
from .entropy import assess
from .field import CATEGORIES, PerceivedObjectState, rasterize
from .fusion import FormatError, FusedObject, fuse_frame, read_frames
from .planner import Policy
from .plotting import MissingColumn, plot_csv
from .sim import compute_outcome, lateral_rms_difference, run_closed_loop

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_RUNTIME = 0, 1, 2, 3
THREADS_ENV = "SOTIF_SENTINEL_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _open_in(path):
    return sys.stdin if path in (None, "-") else open(path, encoding="utf-8")


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    raise TypeError(type(o))


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_json_default)


# -- subcommands ------------------------------------------------------------------


def cmd_fuse(args, cfg: Config) -> int:
    threshold = cfg.perception.affinity_threshold if args.threshold is None else args.threshold
    fin, fout = _open_in(args.input), _open_out(args.output)
    try:
        for frame_id, preds in read_frames(fin):
            for j, obj in enumerate(fuse_frame(preds, threshold)):
                fout.write(_dump({"frame": frame_id, "object": j, **obj.to_dict()}) + "\n")
    finally:
        if fin is not sys.stdin:
            fin.close()
        if fout is not sys.stdout:
            fout.close()
    return EXIT_OK


def _fused_records(fin, detections: bool, threshold: float):
    if detections:
        for frame_id, preds in read_frames(fin):
            for j, obj in enumerate(fuse_frame(preds, threshold)):
                yield frame_id, j, obj
        return
    for lineno, text in enumerate(fin, start=1):
        if not text.strip():
            continue
        try:
            rec = json.loads(text)
            yield int(rec["frame"]), int(rec["object"]), FusedObject.from_dict(rec)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad fused-object record ({exc})", lineno) from None


def cmd_assess(args, cfg: Config) -> int:
    ecfg = cfg.entropy
    fin, fout = _open_in(args.input), _open_out(args.output)
    try:
        for frame_id, j, obj in _fused_records(fin, args.detections, cfg.perception.affinity_threshold):
            if len(obj.mean_scores) != ecfg.C:
                raise FormatError(f"frame {frame_id} object {j}: expected {ecfg.C} scores")
            if not 1 <= obj.d <= ecfg.T:
                raise FormatError(f"frame {frame_id} object {j}: d={obj.d} outside [1, {ecfg.T}]")
            rep = assess(obj, ecfg)
            fout.write(_dump({"frame": frame_id, "object": j, **rep.to_dict()}) + "\n")
    finally:
        if fin is not sys.stdin:
            fin.close()
        if fout is not sys.stdout:
            fout.close()
    return EXIT_OK


def _parse_object(spec: str, i: int) -> PerceivedObjectState:
    parts = [p.strip() for p in spec.split(",")]
    if len(parts) not in (3, 4, 5):
        raise UsageError(f"--object {spec!r}: expected category,x,y[,heading[,level]]")
    cat = parts[0].lower()
    c = CATEGORIES.index(cat) if cat in CATEGORIES else int(cat)
    heading = float(parts[3]) if len(parts) > 3 else 0.0
    level = int(parts[4]) if len(parts) > 4 else 0
    return PerceivedObjectState(i, c, float(parts[1]), float(parts[2]), heading, level)


def cmd_field_dump(args, cfg: Config) -> int:
    try:
        objects = [_parse_object(s, i) for i, s in enumerate(args.object or [])]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.step <= 0:
        raise UsageError("--step must be positive")
    X, Y, PF = rasterize(
        objects, None if args.no_road else cfg.road, cfg.field, (args.xmin, args.xmax), (args.ymin, args.ymax), args.step
    )
    fout = _open_out(args.output)
    try:
        fout.write("X,Y,PF\n")
        for x, y, v in zip(X, Y, PF):
            fout.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")
    finally:
        if fout is not sys.stdout:
            fout.close()
    return EXIT_OK


def _simulate(cfg: Config, policy: Policy):
    return run_closed_loop(cfg.scenario, policy, **cfg.sim_kwargs())


def _write_csv(log, path):
    with _open_out(path) as fh:
        log.to_csv(fh)


def cmd_simulate(args, cfg: Config) -> int:
    if args.case is not None:
        cfg = cfg.with_case(args.case)
    log = _simulate(cfg, Policy.parse(args.policy))
    if args.out:
        _write_csv(log, args.out)
    outcome = {"policy": log.policy, "case": log.case_id, **compute_outcome(log).to_dict()}
    text = json.dumps(outcome, indent=2, sort_keys=True, default=_json_default)
    if args.outcome:
        with _open_out(args.outcome) as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def compare_policies(cfg: Config) -> tuple[dict, object, object]:
    """Run both policies on the same perception stream; returns the outcome
    summary and the two logs."""
    base = _simulate(cfg, Policy.BASELINE)
    puadm = _simulate(cfg, Policy.PUADM)
    ob, op = compute_outcome(base), compute_outcome(puadm)
    rms = lateral_rms_difference(base, puadm)
    summary = {
        "case": cfg.case.case_id,
        "seed": cfg.scenario.seed,
        Policy.BASELINE.value: ob.to_dict(),
        Policy.PUADM.value: op.to_dict(),
        "lateral_rms_difference": rms,
        "lateral_rms_ratio": rms / ob.peak_abs_Y if ob.peak_abs_Y > 0 else None,
    }
    return summary, base, puadm


def cmd_compare(args, cfg: Config) -> int:
    cfg = cfg.with_case(args.case)
    summary, base, puadm = compare_policies(cfg)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        _write_csv(base, os.path.join(args.out_dir, f"case{args.case}_{Policy.BASELINE.value}.csv"))
        _write_csv(puadm, os.path.join(args.out_dir, f"case{args.case}_{Policy.PUADM.value}.csv"))
        with open(os.path.join(args.out_dir, f"case{args.case}_outcome.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
    return EXIT_OK


def _sweep_job(job):
    cfg, key, value, policy = job
    log = _simulate(cfg, Policy.parse(policy))
    return {"param": key, "value": value, "policy": policy, **compute_outcome(log).to_dict()}


def _thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV)
    n = os.cpu_count() or 1
    if raw:
        try:
            n = max(1, int(raw))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    return n


def cmd_sweep(args, cfg: Config) -> int:
    if args.case is not None:
        cfg = cfg.with_case(args.case)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values is empty")
    policies = [Policy.parse(p).value for p in (args.policy or [p.value for p in Policy])]
    jobs = []
    for v in values:
        c = config_mod.apply_overrides(cfg, [f"{args.param}={v}"])
        for p in policies:
            jobs.append((c, args.param, v, p))
    workers = min(_thread_cap(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    cols = list(rows[0].keys())
    fout = _open_out(args.output)
    try:
        fout.write(",".join(cols) + "\n")
        for r in rows:
            fout.write(",".join("" if r[c] is None else str(r[c]) for c in cols) + "\n")
    finally:
        if fout is not sys.stdout:
            fout.close()
    return EXIT_OK


def cmd_plot(args, cfg: Config) -> int:
    if args.labels and len(args.labels) != len(args.inputs):
        raise UsageError("--labels must match the number of inputs")
    plot_csv(args.inputs, args.output, args.labels, args.title)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sotif-sentinel", description=__doc__.splitlines()[0])
    p.add_argument("-c", "--config", help="INI config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="config override (repeatable)")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("fuse", help="cluster and fuse ensemble detections (JSONL)")
    s.add_argument("-i", "--input", default="-")
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--threshold", type=float, default=None, help="IoU affinity threshold (default: config, 0.95)")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("assess", help="entropy reports for fused objects (JSONL)")
    s.add_argument("-i", "--input", default="-")
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--detections", action="store_true", help="input is raw detection JSONL; fuse first")
    s.set_defaults(func=cmd_assess)

    s = sub.add_parser("field-dump", help="rasterize the potential field to CSV")
    s.add_argument("--object", action="append", metavar="CAT,X,Y[,HEADING[,LEVEL]]")
    s.add_argument("--xmin", type=float, default=-10.0)
    s.add_argument("--xmax", type=float, default=60.0)
    s.add_argument("--ymin", type=float, default=-1.75)
    s.add_argument("--ymax", type=float, default=5.25)
    s.add_argument("--step", type=float, default=0.25)
    s.add_argument("--no-road", action="store_true")
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_field_dump)

    s = sub.add_parser("simulate", help="run one closed-loop scenario")
    s.add_argument("--case", type=int, choices=(1, 2, 3, 4))
    s.add_argument("--policy", default=Policy.PUADM.value, choices=[x.value for x in Policy])
    s.add_argument("--out", help="SimLog CSV path")
    s.add_argument("--outcome", help="outcome JSON path (default: stdout)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", help="run both policies on one case")
    s.add_argument("--case", type=int, required=True, choices=(1, 2, 3, 4))
    s.add_argument("--out-dir", help="directory for the two SimLog CSVs and outcome JSON")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="parameter sweep over one config key")
    s.add_argument("--param", required=True, metavar="SECTION.KEY")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--case", type=int, choices=(1, 2, 3, 4))
    s.add_argument("--policy", action="append", choices=[x.value for x in Policy])
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("plot", help="SVG panel from SimLog CSVs")
    s.add_argument("inputs", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--labels", nargs="+")
    s.add_argument("--title")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_mod.load(args.config, args.set)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    if args.print_config:
        sys.stdout.write(config_mod.dumps(cfg))
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, MissingColumn, ConfigError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
