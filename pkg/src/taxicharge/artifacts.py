"""Solution, report and manifest files.

All files are UTF-8 JSON with a ``schema`` tag. Solutions and reports hold no
timestamps or wall times, so a rerun with the same inputs and seed writes the
same bytes. Timing and hashes go to the manifest.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Mapping

from . import __version__
from .model import StationConfiguration
from .robust import FeasibilityReport, RobustConfig, RobustResult

SOLUTION_SCHEMA = "taxicharge.solution/1"
REPORT_SCHEMA = "taxicharge.report/1"
MANIFEST_SCHEMA = "taxicharge.manifest/1"
VALIDATION_SCHEMA = "taxicharge.validation/1"


class ArtifactError(ValueError):
    pass


def dumps(doc: Mapping[str, Any]) -> str:
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


def write_json(path: str | Path, doc: Mapping[str, Any]) -> str:
    """Write ``doc`` and return the sha256 of the bytes written."""
    data = dumps(doc).encode("utf-8")
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_json(path: str | Path, schema: str) -> dict[str, Any]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ArtifactError(f"cannot read {path}: {err}") from None
    if doc.get("schema") != schema:
        raise ArtifactError(f"{path}: expected schema {schema!r}, found {doc.get('schema')!r}")
    return doc


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _run_fields(cfg: RobustConfig) -> dict[str, Any]:
    return {
        "run": cfg.name,
        "mode": cfg.mode,
        "alpha": cfg.alpha,
        "seed_strategy": cfg.seed_strategy,
        "scenario": cfg.scenario,
        "seed": cfg.seed,
    }


def solution_doc(cfg: RobustConfig, config: StationConfiguration, instance_sha256: str) -> dict[str, Any]:
    return {
        "schema": SOLUTION_SCHEMA,
        **_run_fields(cfg),
        "opened": sorted(config.opened),
        "total_cost": config.total_cost,
        "instance_sha256": instance_sha256,
    }


def load_solution(path: str | Path) -> tuple[RobustConfig, StationConfiguration, dict[str, Any]]:
    doc = read_json(path, SOLUTION_SCHEMA)
    try:
        cfg = RobustConfig(doc["mode"], doc["alpha"], doc["seed_strategy"], doc["seed"], doc.get("scenario"))
        config = StationConfiguration(frozenset(doc["opened"]), float(doc["total_cost"]))
    except (KeyError, TypeError, ValueError) as err:
        raise ArtifactError(f"{path}: malformed solution ({err})") from None
    return cfg, config, doc


def report_doc(
    cfg: RobustConfig,
    result: RobustResult,
    optimization: FeasibilityReport,
    accepted: bool,
    out_of_sample: Iterable[tuple[str, FeasibilityReport]] = (),
) -> dict[str, Any]:
    return {
        "schema": REPORT_SCHEMA,
        **_run_fields(cfg),
        "cost": result.config.total_cost,
        "opened": sorted(result.config.opened),
        "accepted": accepted,
        "optimization": optimization.to_dict(),
        "out_of_sample": [{"name": name, **rep.to_dict()} for name, rep in out_of_sample],
        "omega": list(result.omega),
        "ranking": [
            {"scenario": r.scenario, "cost": r.config.total_cost, "opened": sorted(r.config.opened)} for r in result.ranking
        ],
        "adversarial_steps": [
            {
                "opened": sorted(s.opened),
                "cost": s.cost,
                "violated": s.violated,
                "chosen": s.chosen,
                "partial": list(s.partial),
                "escalated": s.escalated,
            }
            for s in result.steps
        ],
        "cuts": [sorted(c) for c in result.cuts],
        "operational_evaluations": result.evaluations,
    }


def validation_doc(solution: Mapping[str, Any], rows: Iterable[tuple[str, FeasibilityReport, bool]]) -> dict[str, Any]:
    return {
        "schema": VALIDATION_SCHEMA,
        "run": solution["run"],
        "alpha": solution["alpha"],
        "opened": solution["opened"],
        "sets": [{"name": name, "meets_alpha": ok, **rep.to_dict()} for name, rep, ok in rows],
    }


def manifest_doc(
    command: str,
    argv: list[str],
    seed: int | None,
    inputs: Mapping[str, str],
    outputs: Mapping[str, str],
    started: str,
    finished: str,
    timings: Mapping[str, float],
    jobs: int,
    exit_code: int,
    config_path: str | None = None,
) -> dict[str, Any]:
    return {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "argv": argv,
        "config": config_path,
        "seed": seed,
        "jobs": jobs,
        "version": __version__,
        "inputs": dict(inputs),
        "outputs": dict(outputs),
        "started": started,
        "finished": finished,
        "wall_seconds": dict(timings),
        "exit_code": exit_code,
    }
