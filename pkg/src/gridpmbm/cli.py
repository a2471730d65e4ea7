"""Command-line entry point.

    gridpmbm run --config F [--runs N] [--seed S] [--birth-model grid|gm] --out DIR
    gridpmbm report --in DIR

Exit codes: 0 ok, 1 runtime/I-O failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, build_gm_birth, dump_config, load_config
from .kernels import BACKEND
from .sim import COLUMNS, RunRecord, aggregate, monte_carlo

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

INT_COLUMNS = {"step", "n_missed", "n_false", "n_truth", "n_est"}


def write_csv(
    path: Path, columns: dict[str, np.ndarray], names: Sequence[str], int_columns=INT_COLUMNS
) -> None:
    n = len(columns[names[0]])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for k in range(n):
            w.writerow(
                [str(int(columns[c][k])) if c in int_columns else repr(float(columns[c][k])) for c in names]
            )


def read_csv(path: Path) -> dict[str, np.ndarray]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise RuntimeError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows or tuple(rows[0]) != COLUMNS:
        raise RuntimeError(f"{path}: unexpected header, expected {','.join(COLUMNS)}")
    try:
        data = np.array(rows[1:], dtype=float).reshape(-1, len(COLUMNS))
    except ValueError as exc:
        raise RuntimeError(f"{path}: malformed numeric data") from exc
    return {c: data[:, i] for i, c in enumerate(COLUMNS)}


def run_file_name(seed: int) -> str:
    return f"run_{seed:06d}.csv"


def _aggregate_columns(agg) -> tuple[dict[str, np.ndarray], list[str]]:
    cols, names = {}, []
    for c in COLUMNS:
        cols[c] = agg.mean[c]
        names.append(c)
    for c in COLUMNS[2:]:
        cols[c + "_se"] = agg.stderr[c]
        names.append(c + "_se")
    return cols, names


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    n_runs = args.runs if args.runs is not None else cfg.run.n_runs
    seed = args.seed if args.seed is not None else cfg.run.seed
    if n_runs < 1:
        print("config error: --runs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_RUNTIME

    records, agg = monte_carlo(cfg, n_runs, seed, args.birth_model, workers=args.workers)
    try:
        for r in records:
            write_csv(out / run_file_name(r.seed), r.columns, COLUMNS)
        cols, names = _aggregate_columns(agg)
        write_csv(out / "aggregate.csv", cols, names, {"step"})
        (out / "resolved_config.yaml").write_text(dump_config(cfg), encoding="utf-8")
        manifest = {
            "version": __version__,
            "kernel_backend": BACKEND,
            "birth_model": args.birth_model,
            "seeds": [r.seed for r in records],
            "n_runs": n_runs,
            "run_files": [run_file_name(r.seed) for r in records],
            "columns": list(COLUMNS),
            "config": cfg.model_dump(mode="json"),
        }
        if args.birth_model == "gm":
            gm = build_gm_birth(cfg)
            manifest["gm_birth"] = {
                "n_components": len(gm),
                "weights": gm.weights.tolist(),
                "means": gm.means.tolist(),
                "covs": gm.covs.tolist(),
            }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"error: writing results failed: {exc.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    m = agg.mean
    print(
        f"{n_runs} run(s), birth={args.birth_model}: mean GOSPA {m['gospa_total'].mean():.3f}, "
        f"t_track {m['t_track_s'].mean() * 1e3:.2f} ms, t_undet {m['t_undet_s'].mean() * 1e3:.2f} ms"
    )
    return EXIT_OK


def load_results(directory: Path) -> list[RunRecord]:
    if not directory.is_dir():
        raise RuntimeError(f"{directory} is not a directory")
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            files = manifest["run_files"]
            birth = manifest.get("birth_model", "?")
        except (ValueError, KeyError) as exc:
            raise RuntimeError(f"{manifest_path}: corrupt manifest") from exc
    else:
        files = sorted(p.name for p in directory.glob("run_*.csv"))
        birth = "?"
    if not files:
        raise RuntimeError(f"no run files found in {directory}")
    records = []
    for name in files:
        cols = read_csv(directory / name)
        seed = int(name.removeprefix("run_").removesuffix(".csv")) if name.startswith("run_") else 0
        records.append(RunRecord(seed, birth, cols))
    n = {r.n_steps for r in records}
    if len(n) != 1:
        raise RuntimeError("run files have different lengths")
    return records


def cmd_report(args) -> int:
    directory = Path(args.inp)
    try:
        records = load_results(directory)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    agg = aggregate(records)
    m = agg.mean
    lines = [
        f"runs: {agg.n_runs}   steps: {len(m['step'])}   birth model: {records[0].birth_model}",
        f"mean GOSPA:            {m['gospa_total'].mean():.4f}",
        f"mean localisation:     {m['gospa_loc'].mean():.4f}",
        f"mean missed targets:   {m['n_missed'].mean():.4f}",
        f"mean false targets:    {m['n_false'].mean():.4f}",
        f"mean t_track [ms]:     {m['t_track_s'].mean() * 1e3:.3f}",
        f"mean t_undet [ms]:     {m['t_undet_s'].mean() * 1e3:.3f}",
    ]
    print("\n".join(lines))
    cols, names = _aggregate_columns(agg)
    try:
        write_csv(directory / "report.csv", cols, names, {"step"})
    except OSError as exc:
        print(f"warning: could not write report.csv: {exc.strerror}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridpmbm", description="Grid-birth PMBM search-and-track simulations")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run Monte Carlo simulations")
    r.add_argument("--config", required=True, help="YAML scenario file or bundled scenario name")
    r.add_argument("--runs", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--birth-model", choices=("grid", "gm"), default="grid")
    r.add_argument("--out", required=True)
    r.add_argument("--workers", type=int, default=None, help="process count (default: PMBM_THREADS or 1)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="summarise a results directory")
    s.add_argument("--in", dest="inp", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
