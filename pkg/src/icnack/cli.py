"""Command line: run, sweep, plot, validate (and bloom-table).

Output goes to ``--out`` or, if absent, to ``$ICNACK_OUTPUT`` (default
``./runs``). Scenario arguments are file paths or bundled names such as
``fig2``.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from .plotting import SchemaError, bloom_fp_table, plot, write_bloom_table
from .scenario import BUNDLED, Scenario, ScenarioError, bundled_path, manifest_text, run

OUTPUT_ENV = "ICNACK_OUTPUT"


def _resolve(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    if arg in BUNDLED:
        return bundled_path(arg)
    raise ScenarioError(f"{arg}: no such scenario file or bundled name ({', '.join(BUNDLED)})")


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ScenarioError(f"--set {item!r}: expected section.key=value")
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["run.seed"] = str(args.seed)
    if args.duration is not None:
        out["run.duration"] = str(args.duration)
    return out


def _outdir(args) -> Path:
    d = Path(args.out or os.environ.get(OUTPUT_ENV, "runs"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _slug(value: str) -> str:
    return "".join(ch if ch.isalnum() or ch in ".-" else "_" for ch in value)


def _run_one(text: str, source: str, seed: int) -> str:
    return run(Scenario.parse(text, source), seed).to_csv()


def cmd_validate(args) -> int:
    for arg in args.scenario:
        sc = Scenario.load(_resolve(arg), _overrides(args))
        print(f"{sc.source}: ok")
    return 0


def cmd_run(args) -> int:
    path = _resolve(args.scenario)
    sc = Scenario.load(path, _overrides(args))
    seed = sc["run"]["seed"]
    out = _outdir(args)
    stem = path.stem
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(run(sc, seed).to_csv())
    (out / f"{stem}.manifest.scn").write_text(manifest_text(sc, seed))
    print(csv_path)
    return 0


def cmd_sweep(args) -> int:
    path = _resolve(args.scenario)
    sc = Scenario.load(path, _overrides(args))
    axis = args.axis or sc["sweep"]["axis"]
    values = args.values.split(",") if args.values is not None else sc["sweep"]["values"]
    values = [v.strip() for v in values if v.strip()]
    if not values:
        raise ScenarioError("sweep needs at least one value")
    seed = sc["run"]["seed"]
    points = [sc.with_overrides({axis: v}) for v in values]
    out = _outdir(args)
    stem = path.stem
    if args.jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one, p.to_ini(), p.source, seed) for p in points]
            texts = [f.result() for f in futures]
    else:
        texts = [run(p, seed).to_csv() for p in points]
    merged = io.StringIO()
    w = csv.writer(merged, lineterminator="\n")
    w.writerow(("point", "time", "node", "metric", "value"))
    for value, point, text in zip(values, points, texts):
        name = f"{stem}_{_slug(axis)}={_slug(value)}"
        (out / f"{name}.csv").write_text(text)
        (out / f"{name}.manifest.scn").write_text(manifest_text(point, seed))
        for row in list(csv.reader(io.StringIO(text)))[1:]:
            w.writerow((value, *row))
    combined = out / f"{stem}_sweep.csv"
    combined.write_text(merged.getvalue())
    print(combined)
    return 0


def cmd_plot(args) -> int:
    dest = plot(args.csv, args.kind, args.output)
    print(dest)
    return 0


def cmd_bloom_table(args) -> int:
    out = _outdir(args)
    rows = bloom_fp_table(n=args.n, samples=args.samples, seed=args.seed or 0)
    path = out / "bloom_fp.csv"
    write_bloom_table(path, rows)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icnack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, multi=False):
        if multi:
            p.add_argument("scenario", nargs="+")
        else:
            p.add_argument("scenario")
        p.add_argument("--seed", type=int)
        p.add_argument("--duration", type=float)
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./runs)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one scenario value (repeatable)")

    p = sub.add_parser("run", help="run one scenario, write CSV + manifest")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one scenario per axis value, merge CSVs")
    common(p)
    p.add_argument("--axis", help="section.key to vary (default: [sweep] axis)")
    p.add_argument("--values", help="comma-separated values (default: [sweep] values)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="parse and check scenario files")
    common(p, multi=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plot", help="render a figure from a CSV")
    p.add_argument("csv")
    p.add_argument("--kind", required=True, choices=["fig2", "fig3", "fig5", "fig6", "bloom_fp"])
    p.add_argument("-o", "--output", help="image path (default: next to the CSV)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("bloom-table", help="write the bloom_fp CSV (closed forms + Monte-Carlo)")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bloom_table)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
