"""Command line entry point: ``taxicharge generate | solve | validate | replay``.

Exit codes
    0  success
    1  replay produced different bytes
    2  bad configuration, unreadable input or incompatible files
    3  precondition failed (some scenario cannot be served with every station open)
    4  time limit reached
    5  validation failed (some set misses the solution's level)
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from . import artifacts
from .generator import GeneratorConfig, GeneratorError, generate_instance, out_of_sample_sets
from .model import InstanceError, load_instance, save_instance
from .operational import OperationalOptions, TimeLimitReached
from .robust import MODES, RobustConfig, Workers, acceptance, evaluate_feasibility, solve
from .strategic import PreconditionError

OK, REPLAY_MISMATCH, BAD_INPUT, PRECONDITION, TIME_LIMIT, VALIDATION_FAILED = 0, 1, 2, 3, 4, 5
JOBS_ENV = "TAXICHARGE_JOBS"


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _load_instance(path: str):
    try:
        return load_instance(path)
    except (OSError, json.JSONDecodeError, InstanceError) as err:
        raise _Fail(BAD_INPUT, f"{path}: {err}") from None


def _options(time_limit: float | None) -> OperationalOptions:
    opts = OperationalOptions()
    if time_limit is not None:
        opts.deadline = time.perf_counter() + time_limit
    return opts


def _sidecar(path: Path) -> Path:
    return path.with_name(path.stem + ".provenance.json")


def cmd_generate(args: argparse.Namespace, timings: dict[str, float]) -> dict[str, str]:
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = GeneratorConfig.from_dict(raw)
        cfg.validate()
    except (OSError, json.JSONDecodeError, GeneratorError, TypeError) as err:
        raise _Fail(BAD_INPUT, f"{args.config}: {err}") from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        inst, prov = generate_instance(cfg)
    except GeneratorError as err:
        raise _Fail(BAD_INPUT, str(err)) from None
    written = {}
    save_instance(inst, out)
    written[str(out)] = artifacts.file_sha256(out)
    written[str(_sidecar(out))] = artifacts.write_json(_sidecar(out), prov.to_dict())
    for k, (other, oprov) in enumerate(out_of_sample_sets(cfg, args.out_of_sample, inst.stations), start=1):
        path = out.with_name(f"{out.stem}.oos{k}{out.suffix}")
        save_instance(other, path)
        written[str(path)] = artifacts.file_sha256(path)
        written[str(_sidecar(path))] = artifacts.write_json(_sidecar(path), oprov.to_dict())
    timings["generate"] = time.perf_counter() - t0
    print(f"wrote {out} ({len(inst.scenarios)} scenarios, {len(inst.stations)} stations)")
    return written


def _run_config(args: argparse.Namespace) -> RobustConfig:
    alpha = 1.0 if args.alpha is None else args.alpha
    try:
        return RobustConfig(args.mode, alpha, args.seed_strategy, args.seed or 0, args.scenario)
    except ValueError as err:
        raise _Fail(BAD_INPUT, str(err)) from None


def cmd_solve(args: argparse.Namespace, timings: dict[str, float]) -> dict[str, str]:
    cfg = _run_config(args)
    inst = _load_instance(args.instance)
    if cfg.scenario is not None and cfg.scenario not in {z.id for z in inst.scenarios}:
        raise _Fail(BAD_INPUT, f"unknown scenario {cfg.scenario!r}")
    others = [(Path(p).stem, _load_instance(p)) for p in args.out_of_sample]
    for name, other in others:
        if set(other.station_ids) != set(inst.station_ids):
            raise _Fail(BAD_INPUT, f"{name}: station set differs from {args.instance}")
    opts = _options(args.time_limit)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with Workers(args.jobs) as workers:
        t0 = time.perf_counter()
        try:
            result = solve(inst, cfg, opts, workers)
        except PreconditionError as err:
            raise _Fail(PRECONDITION, str(err)) from None
        timings["solve"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        rep = evaluate_feasibility(inst, result.config, options=opts, workers=workers)
        oos = [(name, evaluate_feasibility(other, result.config, options=opts, workers=workers)) for name, other in others]
        timings["evaluate"] = time.perf_counter() - t0
    timings.update({f"solver.{k}": v for k, v in result.timings.items()})
    written = {}
    sol_path, rep_path = out_dir / "solution.json", out_dir / "report.json"
    written[str(sol_path)] = artifacts.write_json(
        sol_path, artifacts.solution_doc(cfg, result.config, artifacts.file_sha256(args.instance))
    )
    written[str(rep_path)] = artifacts.write_json(rep_path, artifacts.report_doc(cfg, result, rep, acceptance(cfg, rep, result.omega), oos))
    print(f"{cfg.name}: cost {result.config.total_cost:g}, opened {len(result.config.opened)} stations")
    print(f"  optimisation set: mean {rep.mean_vehicle_feasibility:.4f}, min {rep.min_vehicle_feasibility:.4f}, scenarios {rep.scenario_feasibility:.4f}")
    for name, r in oos:
        print(f"  {name}: mean {r.mean_vehicle_feasibility:.4f}, min {r.min_vehicle_feasibility:.4f}, scenarios {r.scenario_feasibility:.4f}")
    return written


def cmd_validate(args: argparse.Namespace, timings: dict[str, float]) -> dict[str, str]:
    try:
        cfg, config, doc = artifacts.load_solution(args.solution)
    except artifacts.ArtifactError as err:
        raise _Fail(BAD_INPUT, str(err)) from None
    rows = []
    opts = _options(args.time_limit)
    t0 = time.perf_counter()
    with Workers(args.jobs) as workers:
        for path in args.sets:
            inst = _load_instance(path)
            missing = set(config.opened) - set(inst.station_ids)
            if missing:
                raise _Fail(BAD_INPUT, f"{path}: stations {sorted(missing)} are not part of this instance")
            rep = evaluate_feasibility(inst, config, options=opts, workers=workers)
            # on other sets every mode is held to its recorded level; ISA and det to alpha = 1
            rows.append((Path(path).stem, rep, acceptance(cfg, rep, ())))
    timings["validate"] = time.perf_counter() - t0
    print(f"{'set':<24} {'mean':>8} {'min':>8} {'scen':>8}  ok")
    for name, rep, ok in rows:
        print(
            f"{name:<24} {rep.mean_vehicle_feasibility:>8.4f} {rep.min_vehicle_feasibility:>8.4f} "
            f"{rep.scenario_feasibility:>8.4f}  {'yes' if ok else 'NO'}"
        )
    written = {}
    if args.out:
        written[args.out] = artifacts.write_json(args.out, artifacts.validation_doc(doc, rows))
    if not all(ok for _, _, ok in rows):
        raise _Fail(VALIDATION_FAILED, f"{cfg.name} misses its level on some set")
    return written


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        manifest = artifacts.read_json(args.manifest, artifacts.MANIFEST_SCHEMA)
    except artifacts.ArtifactError as err:
        print(f"error: {err}", file=sys.stderr)
        return BAD_INPUT
    recorded = manifest["outputs"]
    code = main(manifest["argv"])
    if code != manifest["exit_code"]:
        print(f"replay exited with {code}, recorded {manifest['exit_code']}", file=sys.stderr)
        return REPLAY_MISMATCH
    differ = [p for p, h in recorded.items() if not Path(p).exists() or artifacts.file_sha256(p) != h]
    for p in differ:
        print(f"differs: {p}", file=sys.stderr)
    return REPLAY_MISMATCH if differ else OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taxicharge", description="Plan charging stations for an electric taxi fleet.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--jobs", type=int, default=_default_jobs(), help=f"worker processes (default ${JOBS_ENV} or CPU count)")
        sp.add_argument("--time-limit", type=float, default=None, help="wall-clock limit in seconds")
        sp.add_argument("--manifest", default=None, help="where to write the run manifest")

    g = sub.add_parser("generate", help="generate an instance from a generator config")
    g.add_argument("config", help="generator config (JSON)")
    g.add_argument("--out", required=True, help="instance file to write")
    g.add_argument("--seed", type=int, default=None, help="override the config seed")
    g.add_argument("--out-of-sample", type=int, default=0, metavar="N", help="also write N out-of-sample sets")
    common(g)

    s = sub.add_parser("solve", help="choose stations for an instance")
    s.add_argument("instance")
    s.add_argument("--mode", choices=MODES, required=True)
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--seed-strategy", choices=("l", "m"), default="l")
    s.add_argument("--scenario", default=None, help="scenario id for --mode det")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--out-of-sample", nargs="*", default=[], metavar="INSTANCE", help="extra sets to evaluate")
    common(s)

    v = sub.add_parser("validate", help="evaluate a solution on instance files")
    v.add_argument("solution")
    v.add_argument("sets", nargs="+")
    v.add_argument("--out", default=None, help="write a validation report")
    common(v)

    r = sub.add_parser("replay", help="rerun the command recorded in a manifest and compare outputs")
    r.add_argument("manifest")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return OK if exc.code in (0, None) else BAD_INPUT
    if args.command == "replay":
        return cmd_replay(args)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return BAD_INPUT

    started = _now()
    timings: dict[str, float] = {}
    handler = {"generate": cmd_generate, "solve": cmd_solve, "validate": cmd_validate}[args.command]
    code, written = OK, {}
    try:
        written = handler(args, timings)
    except _Fail as err:
        print(f"error: {err}", file=sys.stderr)
        code = err.code
    except TimeLimitReached:
        print("error: time limit reached", file=sys.stderr)
        code = TIME_LIMIT
    if args.manifest and code != BAD_INPUT:
        inputs = [args.config] if args.command == "generate" else [getattr(args, "instance", None) or args.solution]
        inputs += list(getattr(args, "out_of_sample", None) or []) if args.command == "solve" else []
        inputs += list(getattr(args, "sets", []))
        doc = artifacts.manifest_doc(
            args.command,
            argv,
            getattr(args, "seed", None),
            {p: artifacts.file_sha256(p) for p in inputs if p and Path(p).is_file()},
            written,
            started,
            _now(),
            timings,
            args.jobs,
            code,
            args.config if args.command == "generate" else None,
        )
        artifacts.write_json(args.manifest, doc)
    return code


if __name__ == "__main__":
    sys.exit(main())
