"""Experiment runner: config parsing, sweep execution, report emission.

Configuration is flat ``key = value`` text; command-line flags override file
values.  The ``run`` subcommand executes the (stabilizer x predictor x
backup size) sweep, ``analyze`` prints the closed-form chain as JSON, and
``predict-bench`` reproduces the predictor error table without the overlay.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .analytics import analysis_chain
from .churn import CHURN_KINDS, ChurnModel
from .engine import RunMetrics, SimConfig, aggregate, run_topology, slot_metrics_dict
from .bench import run_predictor_bench
from .overlay import ConfigError
from .predictors import PREDICTOR_KINDS
from .stabilizers import STABILIZER_KINDS

DEFAULT_WORKERS = max(1, min(8, os.cpu_count() or 1))


@dataclass
class RunSpec:
    """A resolved experiment matrix: one base config plus sweep lists."""

    base: SimConfig
    backup_sizes: list[int]
    stabilizers: list[str]
    predictors: list[str]
    out_dir: Path
    formats: list[str]
    workers: int = DEFAULT_WORKERS
    trace: bool = False

    def combinations(self) -> list[SimConfig]:
        combos = []
        for stab in self.stabilizers:
            for pred in self.predictors:
                for b in self.backup_sizes:
                    combos.append(
                        replace(self.base, stabilizer=stab, predictor=pred, backup_size=b)
                    )
        return combos


@dataclass(frozen=True)
class ReportRow:
    stabilizer: str
    predictor: str
    backup_size: int
    avg_success_ratio: float
    std_success_ratio: float
    avg_search_latency_ms: float
    std_search_latency_ms: float
    avg_prediction_error: float
    std_prediction_error: float
    avg_resolve_messages: float
    avg_backup_neighbors_per_level: float
    topologies: int
    slots: int
    seed: int

    @classmethod
    def from_metrics(cls, cfg: SimConfig, metrics: RunMetrics) -> "ReportRow":
        return cls(
            stabilizer=cfg.stabilizer,
            predictor=cfg.predictor,
            backup_size=cfg.backup_size,
            avg_success_ratio=metrics.avg_success_ratio,
            std_success_ratio=metrics.std_success_ratio,
            avg_search_latency_ms=metrics.avg_search_latency_ms,
            std_search_latency_ms=metrics.std_search_latency_ms,
            avg_prediction_error=metrics.avg_prediction_error,
            std_prediction_error=metrics.std_prediction_error,
            avg_resolve_messages=metrics.avg_resolve_messages,
            avg_backup_neighbors_per_level=metrics.avg_backup_neighbors_per_level,
            topologies=metrics.runs,
            slots=metrics.slots,
            seed=cfg.seed,
        )


CSV_COLUMNS = [
    "stabilizer",
    "predictor",
    "backup_size",
    "avg_success_ratio",
    "std_success_ratio",
    "avg_search_latency_ms",
    "std_search_latency_ms",
    "avg_prediction_error",
    "std_prediction_error",
    "avg_resolve_messages",
    "avg_backup_neighbors_per_level",
    "topologies",
    "slots",
    "seed",
]

_INT_KEYS = {
    "capacity",
    "slots",
    "topologies",
    "seed",
    "max-state-size",
    "workers",
}
_FLOAT_KEYS = {
    "timeout-multiplier",
    "rtt-base-ms",
    "rtt-per-unit-ms",
    "session-shape",
    "session-mean-hours",
    "interarrival-mean-seconds",
    "uniform-q",
}
_LIST_KEYS = {"backup-size", "stabilizer", "predictor", "format"}
_STR_KEYS = {
    "rejoin",
    "pred-error",
    "churn-kind",
    "arrival-process",
    "out",
}
_SPECIAL_KEYS = {"search-cap"}
KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _LIST_KEYS | _STR_KEYS | _SPECIAL_KEYS


def _parse_scalar(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    return raw


def _read_config_file(path: Path) -> dict:
    values: dict = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or stripped.startswith(";"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.split("#", 1)[0].strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key: {key}")
        if key in _LIST_KEYS:
            values[key] = [item.strip() for item in raw.split(",") if item.strip()]
        elif key == "search-cap":
            values[key] = None if raw.lower() in ("none", "unlimited") else int(raw)
        else:
            values[key] = _parse_scalar(key, raw)
    return values


def parse_config(path: Path | None, overrides: dict | None = None) -> RunSpec:
    """Resolve a RunSpec from an optional config file plus override values.

    Overrides win over file values; anything left unset falls back to the
    defaults (capacity 1024, 168 slots, 100 topologies, measured churn).
    """
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(_read_config_file(p))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key: {key}")
        values[key] = val

    churn_kind = values.get("churn-kind", "debian")
    if churn_kind not in CHURN_KINDS:
        raise ConfigError(f"churn-kind must be one of {CHURN_KINDS}, got {churn_kind!r}")
    churn = ChurnModel(
        kind=churn_kind,
        session_shape=values.get("session-shape", ChurnModel.session_shape),
        session_mean_hours=values.get("session-mean-hours", ChurnModel.session_mean_hours),
        interarrival_mean_seconds=values.get(
            "interarrival-mean-seconds", ChurnModel.interarrival_mean_seconds
        ),
        uniform_q=values.get("uniform-q", ChurnModel.uniform_q),
        arrival_process=values.get("arrival-process", ChurnModel.arrival_process),
    )

    backup_sizes = [int(v) for v in values.get("backup-size", [40])]
    stabilizers = list(values.get("stabilizer", ["interlaced"]))
    predictors = list(values.get("predictor", ["swdbg"]))
    if not backup_sizes or not stabilizers or not predictors:
        raise ConfigError("sweep lists must be non-empty")
    for s in stabilizers:
        if s not in STABILIZER_KINDS:
            raise ConfigError(f"stabilizer must be one of {STABILIZER_KINDS}, got {s!r}")
    for p in predictors:
        if p not in PREDICTOR_KINDS:
            raise ConfigError(f"predictor must be one of {PREDICTOR_KINDS}, got {p!r}")

    base = SimConfig(
        capacity=values.get("capacity", 1024),
        slots=values.get("slots", 168),
        topologies=values.get("topologies", 100),
        backup_size=backup_sizes[0],
        stabilizer=stabilizers[0],
        predictor=predictors[0],
        timeout_multiplier=values.get("timeout-multiplier", 2.0),
        rtt_base_ms=values.get("rtt-base-ms", 10.0),
        rtt_per_unit_ms=values.get("rtt-per-unit-ms", 100.0),
        search_cap=values.get("search-cap", SimConfig.search_cap),
        seed=values.get("seed", 1),
        rejoin=values.get("rejoin", "fresh"),
        pred_error_mode=values.get("pred-error", "window"),
        max_state_size=values.get("max-state-size", SimConfig.max_state_size),
        churn=churn,
    )
    formats = list(values.get("format", ["csv", "json"]))
    for f in formats:
        if f not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {f!r}")
    return RunSpec(
        base=base,
        backup_sizes=backup_sizes,
        stabilizers=stabilizers,
        predictors=predictors,
        out_dir=Path(values.get("out", "results")),
        formats=formats,
        workers=values.get("workers", DEFAULT_WORKERS),
    )


def _topology_task(args: tuple[SimConfig, int]) -> tuple[int, RunMetrics]:
    cfg, index = args
    return index, run_topology(cfg, index)


def run_combination(cfg: SimConfig, workers: int = 1) -> RunMetrics:
    """All topology runs of one configuration, reduced in index order."""
    jobs = [(cfg, i) for i in range(cfg.topologies)]
    if workers > 1 and cfg.topologies > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_topology_task, jobs))
    else:
        results = [_topology_task(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    return aggregate([m for _, m in results])


def run_experiments(spec: RunSpec) -> list[tuple[SimConfig, RunMetrics]]:
    """Execute every sweep combination; abort naming the offender on failure."""
    out = []
    combos = spec.combinations()
    for i, cfg in enumerate(combos, start=1):
        label = f"{cfg.stabilizer}/{cfg.predictor}/b={cfg.backup_size}"
        print(f"[{i}/{len(combos)}] running {label} "
              f"({cfg.topologies} topologies x {cfg.slots} slots)", file=sys.stderr)
        try:
            metrics = run_combination(cfg, workers=spec.workers)
        except Exception as exc:
            raise RuntimeError(f"combination {label} failed: {exc}") from exc
        out.append((cfg, metrics))
    return out


def _float_repr(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def rows_to_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_float_repr(getattr(row, col)) for col in CSV_COLUMNS])
    return buf.getvalue()


def results_to_json(results: list[tuple[SimConfig, RunMetrics]]) -> str:
    doc = {"rows": []}
    for cfg, metrics in results:
        row = ReportRow.from_metrics(cfg, metrics)
        entry = {col: getattr(row, col) for col in CSV_COLUMNS}
        entry["slot_series"] = [slot_metrics_dict(sm) for sm in metrics.slot_series]
        doc["rows"].append(entry)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def emit_reports(
    results: list[tuple[SimConfig, RunMetrics]], formats: list[str], out_dir: Path
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    rows = [ReportRow.from_metrics(cfg, m) for cfg, m in results]
    if "csv" in formats:
        path = out_dir / "results.csv"
        path.write_text(rows_to_csv(rows), encoding="utf-8")
        written.append(path)
    if "json" in formats:
        path = out_dir / "results.json"
        path.write_text(results_to_json(results), encoding="utf-8")
        written.append(path)
    return written


def preflight_out_dir(out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write-probe"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {out_dir}: {exc}") from exc


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--capacity", type=int, default=None)
    parser.add_argument("--slots", type=int, default=None)
    parser.add_argument("--topologies", type=int, default=None)
    parser.add_argument("--backup-size", default=None,
                        help="comma-separated list, e.g. 10,20,40")
    parser.add_argument("--stabilizer", default=None,
                        help=f"comma-separated list from {STABILIZER_KINDS}")
    parser.add_argument("--predictor", default=None,
                        help=f"comma-separated list from {PREDICTOR_KINDS}")
    parser.add_argument("--search-cap", default=None,
                        help="per-slot search cap; 'none' removes the cap")
    parser.add_argument("--churn-kind", choices=CHURN_KINDS, default=None)
    parser.add_argument("--uniform-q", type=float, default=None)
    parser.add_argument("--interarrival-mean-seconds", type=float, default=None)
    parser.add_argument("--session-mean-hours", type=float, default=None)
    parser.add_argument("--session-shape", type=float, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--format", default=None, help="csv,json")
    parser.add_argument("--trace", action="store_true", help="write per-search trace log")


def _overrides_from_args(args: argparse.Namespace) -> dict:
    def split(v):
        return [s.strip() for s in v.split(",") if s.strip()] if v is not None else None

    overrides = {
        "seed": args.seed,
        "capacity": args.capacity,
        "slots": args.slots,
        "topologies": args.topologies,
        "backup-size": split(args.backup_size),
        "stabilizer": split(args.stabilizer),
        "predictor": split(args.predictor),
        "churn-kind": args.churn_kind,
        "uniform-q": args.uniform_q,
        "interarrival-mean-seconds": args.interarrival_mean_seconds,
        "session-mean-hours": args.session_mean_hours,
        "session-shape": args.session_shape,
        "workers": args.workers,
        "out": args.out,
        "format": split(args.format),
    }
    if args.search_cap is not None:
        overrides["search-cap"] = (
            None if str(args.search_cap).lower() in ("none", "unlimited") else int(args.search_cap)
        )
    return overrides


def _cmd_run(args: argparse.Namespace) -> int:
    spec = parse_config(args.config, _overrides_from_args(args))
    spec.trace = args.trace
    preflight_out_dir(spec.out_dir)
    if spec.trace:
        trace_path = spec.out_dir / "trace.ndjson"
        handle = trace_path.open("w", encoding="utf-8")
        results = []
        try:
            for cfg in spec.combinations():
                runs = []
                for t in range(cfg.topologies):
                    sink = lambda rec: handle.write(json.dumps(rec, sort_keys=True) + "\n")
                    runs.append(run_topology(cfg, t, trace_sink=sink))
                results.append((cfg, aggregate(runs)))
        finally:
            handle.close()
    else:
        results = run_experiments(spec)
    written = emit_reports(results, spec.formats, spec.out_dir)
    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    chain = analysis_chain(args.n, args.q, b=args.b, target_e_f=args.target_e_f)
    print(json.dumps(chain, indent=2, sort_keys=True))
    return 0


def _cmd_predict_bench(args: argparse.Namespace) -> int:
    spec = parse_config(args.config, _overrides_from_args(args))
    base = spec.base
    kinds = tuple(spec.predictors) if args.predictor else PREDICTOR_KINDS
    result = run_predictor_bench(
        capacity=base.capacity,
        slots=base.slots,
        topologies=base.topologies,
        seed=base.seed,
        churn=base.churn,
        kinds=kinds,
        workers=spec.workers,
    )
    rows = result.table()
    width = max(len(k) for k, _, _ in rows)
    print(f"{'predictor':<{width}}  mean_error  std_across_topologies")
    for kind, mean, std in rows:
        print(f"{kind:<{width}}  {mean:10.4f}  {std:.4f}")
    if "swdbg" in kinds:
        print(f"mean wide-end state size: {result.mean_right_state_size():.2f}")
    if args.out:
        out_dir = Path(args.out)
        preflight_out_dir(out_dir)
        path = out_dir / "predictor_errors.csv"
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["predictor", "mean_error", "std_across_topologies"])
        for kind, mean, std in rows:
            writer.writerow([kind, repr(mean), repr(std)])
        path.write_text(buf.getvalue(), encoding="utf-8")
        print(f"wrote {path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skipchurn",
        description="Skip Graph overlay simulator with churn stabilization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the experiment sweep")
    _add_override_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_an = sub.add_parser("analyze", help="print the closed-form analysis chain")
    p_an.add_argument("--n", type=int, required=True)
    p_an.add_argument("--q", type=float, required=True)
    p_an.add_argument("--b", type=int, default=None)
    p_an.add_argument("--target-e-f", type=float, default=None)
    p_an.set_defaults(func=_cmd_analyze)

    p_pb = sub.add_parser("predict-bench", help="predictor error table, no overlay")
    _add_override_flags(p_pb)
    p_pb.set_defaults(func=_cmd_predict_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
