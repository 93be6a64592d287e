"""Command-line entry point: ``patterndp {synth,ingest,allocate,run}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command
writes a ``manifest.json`` next to its outputs recording the arguments,
seeds, tool version and content hashes needed to reproduce them.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from patterndp import __version__
from patterndp.adaptive import OptimizerConfig, optimize
from patterndp.datasets import (GridSpec, IngestError, SynthConfig, assign_areas, ingest_tdrive_dir,
                                synthesize, taxi_queries)
from patterndp.experiment import ExperimentPlan, PlanError, fingerprint, run_experiment, write_csv
from patterndp.matcher import read_queries, write_queries
from patterndp.ppm import composed_epsilon, uniform_allocate
from patterndp.stream_model import read_events_jsonl, write_events_jsonl
from patterndp.workload import Workload

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, args: dict, seeds: dict, outputs: list[Path],
                    dataset_fingerprint: str | None, config_path: str | None = None) -> None:
    manifest = {
        "command": command,
        "args": args,
        "config_path": config_path,
        "seeds": seeds,
        "tool_version": __version__,
        "dataset_fingerprint": dataset_fingerprint,
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_dataset(out: Path, stream, queries, by_source: bool) -> list[Path]:
    events, qfile, desc = out / "events.jsonl", out / "queries.json", out / "dataset.json"
    write_events_jsonl(stream, events)
    write_queries(queries, qfile)
    desc.write_text(json.dumps({"kind": "files", "events": events.name, "queries": qfile.name,
                                "by_source": by_source}, indent=1, sort_keys=True) + "\n")
    return [events, qfile, desc]


def cmd_synth(a: argparse.Namespace) -> int:
    out = _outdir(a.out)
    ds = synthesize(SynthConfig(seed=a.seed, n_windows=a.n_windows))
    files = _write_dataset(out, ds.stream, ds.queries, by_source=False)
    occ = out / "occurrence.json"
    occ.write_text(json.dumps(list(ds.occurrence)) + "\n")
    _write_manifest(out, "synth", {"seed": a.seed, "n_windows": a.n_windows}, {"seed": a.seed},
                    files + [occ], fingerprint(ds.stream))
    print(f"wrote {len(ds.stream)} events, {len(ds.queries)} queries to {out}")
    return EXIT_OK


def cmd_ingest(a: argparse.Namespace) -> int:
    if not Path(a.tdrive_dir).is_dir():
        raise UsageError(f"not a directory: {a.tdrive_dir}")
    grid = GridSpec(cell_size=a.cell_size, seed=a.seed)
    stream, stats = ingest_tdrive_dir(a.tdrive_dir, grid)
    if not len(stream):
        raise IngestError(f"no usable fixes in {a.tdrive_dir}")
    cells = {e.payload for e in stream}
    if len(cells) < 10:
        # too few cells to split by fraction: keep the events, leave the areas empty
        print(f"patterndp ingest: only {len(cells)} cells, area assignment skipped", file=sys.stderr)
        private, target = frozenset(), frozenset()
    else:
        private, target = assign_areas(cells, grid)
    out = _outdir(a.out)
    files = _write_dataset(out, stream, taxi_queries(private, target, a.window), by_source=True)
    areas = out / "areas.json"
    areas.write_text(json.dumps({"cell_size": a.cell_size, "private": sorted(private),
                                 "target": sorted(target), "files": stats},
                                indent=1, sort_keys=True) + "\n")
    _write_manifest(out, "ingest", {"tdrive_dir": a.tdrive_dir, "cell_size": a.cell_size,
                                    "seed": a.seed, "window": a.window},
                    {"seed": a.seed}, files + [areas], fingerprint(stream))
    print(f"wrote {len(stream)} events over {len({e.payload for e in stream})} cells to {out}")
    return EXIT_OK


def _load_dataset_dir(path: str):
    p = Path(path)
    desc = p / "dataset.json" if p.is_dir() else p
    if not desc.exists():
        raise UsageError(f"dataset not found: {desc}")
    spec = json.loads(desc.read_text())
    base = desc.parent
    stream = read_events_jsonl(base / spec["events"])
    queries = read_queries(base / spec["queries"])
    return stream, queries, bool(spec.get("by_source", False))


def cmd_allocate(a: argparse.Namespace) -> int:
    if a.eps < 0:
        raise UsageError(f"--eps must be >= 0, got {a.eps}")
    stream, queries, by_source = _load_dataset_dir(a.dataset)
    by_id = {q.id: q for q in queries}
    if a.private_query not in by_id:
        raise UsageError(f"no query {a.private_query!r} in dataset (have {sorted(by_id)})")
    q = by_id[a.private_query]
    result: dict = {}
    if a.mode == "uniform":
        alloc = uniform_allocate(a.eps, q.m, q.id)
    else:
        cfg = OptimizerConfig(trials=a.trials, seed=a.seed, delta_eps=a.delta, alpha=a.alpha)
        wl = Workload(stream, queries, by_source=by_source)
        fixed = {p.id: uniform_allocate(a.eps, p.m, p.id) for p in wl.private if p.id != q.id}
        res = optimize(wl, q, None, a.eps, cfg, fixed=fixed)
        alloc = res.allocation
        result.update(quality={"q_mean": res.quality.q_mean, "q_stderr": res.quality.q_stderr},
                      stop_reason=res.stop_reason, trace=res.trace)
    result = {"mode": a.mode, "allocation": alloc.to_json(),
              "composed_epsilon": composed_epsilon(alloc), **result}
    text = json.dumps(result, indent=1, sort_keys=True) + "\n"
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _jobs(a: argparse.Namespace) -> int:
    if a.jobs is not None:
        return a.jobs
    env = os.environ.get("PATTERN_DP_JOBS")
    try:
        return int(env) if env else 1
    except ValueError:
        raise UsageError(f"PATTERN_DP_JOBS must be an integer, got {env!r}")


def cmd_run(a: argparse.Namespace) -> int:
    if not Path(a.plan).exists():
        raise UsageError(f"plan not found: {a.plan}")
    try:
        plan = ExperimentPlan.load(a.plan)
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise UsageError(f"invalid plan {a.plan}: {exc}")
    from patterndp.experiment import load_workload
    wl = load_workload(plan.dataset)
    rows = run_experiment(plan, wl, jobs=_jobs(a))
    out = _outdir(a.out)
    csv_path = out / "results.csv"
    write_csv(rows, csv_path)
    _write_manifest(out, "run", {"plan": json.loads(Path(a.plan).read_text())}, {"seed": plan.seed},
                    [csv_path], fingerprint(wl.stream), config_path=str(a.plan))
    failed = sorted({(r.mechanism, r.eps) for r in rows if r.failed})
    print(f"wrote {len(rows)} rows to {csv_path}")
    if failed:
        print(f"{len(failed)} failed cells: " + ", ".join(f"{m}@{e}" for m, e in failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patterndp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the synthetic windowed dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--n-windows", type=int, default=1000)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="ingest T-Drive text files into a cell-entry dataset")
    s.add_argument("--tdrive-dir", required=True)
    s.add_argument("--cell-size", type=float, default=GridSpec.cell_size)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--window", type=int, default=3540, help="detection window in seconds")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("allocate", help="allocate a private pattern's budget")
    s.add_argument("--dataset", required=True, help="dataset directory or dataset.json")
    s.add_argument("--private-query", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--mode", choices=("uniform", "adaptive"), default="uniform")
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--delta", type=float, default=None)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_allocate)

    s = sub.add_parser("run", help="run an experiment plan")
    s.add_argument("--plan", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=None, help="worker processes (env PATTERN_DP_JOBS)")
    s.set_defaults(func=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        return a.func(a)
    except (UsageError, PlanError) as exc:
        parser.error(str(exc))  # exits 2
    except (IngestError, OSError, ValueError) as exc:
        print(f"patterndp {a.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
