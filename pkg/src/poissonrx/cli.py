"""Command-line entry point: ``poissonrx {eval,de,simulate,admit,sweep,verify}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ScenarioConfig, load_config
from .core import CapacityError, ValidationError
from .experiments import (
    REGISTRY, AdmissionError, Table, admission_table, de_admission, de_table, eval_table, fmt,
    mc_protected_error, run_figure, simulate_table,
)
from .oracle import CORPUS, frequency_check
from .simulator import GENERATOR, worker_count

EXIT_CODES = {"validation": 2, "capacity": 3, "admission": 4, "monotonicity": 5, "verification": 6}


def render_csv(t: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(t.header)
    for row in t.rows:
        w.writerow([fmt(v) for v in row])
    for line in t.footer:
        buf.write(f"# {line}\n")
    return buf.getvalue()


def _emit(t: Table, out: str | None, meta: dict, meta_path: str | None = None) -> None:
    text = render_csv(t)
    if out is None or out == "-":
        sys.stdout.write(text)
        if meta_path:
            Path(meta_path).write_text(json.dumps(meta, indent=2, default=str) + "\n", encoding="utf-8")
        return
    Path(out).write_text(text, encoding="utf-8")
    Path(meta_path or f"{out}.json").write_text(json.dumps(meta, indent=2, default=str) + "\n", encoding="utf-8")


def _metadata(command: str, argv, cfg: ScenarioConfig | None, started: float, **extra) -> dict:
    meta = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "generator": GENERATOR,
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_seconds": round(time.time() - started, 6),
    }
    if cfg is not None:
        meta["config"] = cfg.raw
    meta.update(extra)
    return meta


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if getattr(args, "max_iters", None) is not None or getattr(args, "tol", None) is not None:
        if args.max_iters is not None and args.max_iters < 1:
            raise ValidationError("must be at least 1", "--max-iters")
        cfg.pipeline = cfg.pipeline.with_iters(args.max_iters, args.tol)
    return cfg


def _out(args, cfg: ScenarioConfig | None):
    out = args.output
    if out is None and cfg is not None:
        out = cfg.output.get("csv")
    meta = args.metadata
    if meta is None and cfg is not None:
        meta = cfg.output.get("metadata")
    return out, meta


def cmd_eval(args) -> int:
    started = time.time()
    cfg = _load(args)
    out, meta = _out(args, cfg)
    _emit(eval_table(cfg.pipeline, cfg.grid), out, _metadata("eval", args.argv, cfg, started), meta)
    return 0


def cmd_de(args) -> int:
    started = time.time()
    cfg = _load(args)
    out, meta = _out(args, cfg)
    _emit(de_table(cfg.pipeline, cfg.grid), out,
          _metadata("de", args.argv, cfg, started, max_iters=cfg.pipeline.max_iters, tol=cfg.pipeline.tol), meta)
    return 0


def _sim_overrides(args, sim):
    runs = args.runs if args.runs is not None else sim.runs
    seed = args.seed if args.seed is not None else sim.seed
    if runs < 1:
        raise ValidationError("must be at least 1", "--runs")
    if getattr(args, "max_iters", None) is not None:
        sim.max_sic_iters = args.max_iters
    return runs, seed


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    if cfg.simulation is None:
        raise ValidationError("missing simulation block", "simulation")
    runs, seed = _sim_overrides(args, cfg.simulation)
    out, meta = _out(args, cfg)
    t = simulate_table(cfg.simulation, cfg.grid, runs, seed)
    _emit(t, out, _metadata("simulate", args.argv, cfg, started, runs=runs, seed=seed,
                            workers=worker_count()), meta)
    return 0


def cmd_admit(args) -> int:
    started = time.time()
    cfg = _load(args)
    if cfg.admission is None:
        raise ValidationError("missing admission block", "admission")
    res = de_admission(cfg.pipeline, cfg.admission)
    extra = {"evaluated": {str(k): v for k, v in sorted(res.evaluated.items())}}
    mc = None
    if args.montecarlo:
        if cfg.simulation is None:
            raise ValidationError("--montecarlo needs a simulation block", "simulation")
        runs, seed = _sim_overrides(args, cfg.simulation)
        mc = {n: mc_protected_error(cfg.simulation, cfg.admission, n, runs, seed) for n in (res.N, res.N + 1)}
        extra.update(runs=runs, seed=seed)
    label = Path(args.config).stem
    out, meta = _out(args, cfg)
    _emit(admission_table(label, res, mc), out, _metadata("admit", args.argv, cfg, started, **extra), meta)
    return 0


def cmd_sweep(args) -> int:
    if args.list or args.figure is None:
        for name in sorted(REGISTRY):
            print(f"{name}\t{REGISTRY[name].description}")
        return 0
    started = time.time()
    tables = run_figure(args.figure, args.simulate, args.runs, args.seed if args.seed is not None else 1)
    meta = _metadata("sweep", args.argv, None, started, figure=args.figure, simulate=args.simulate,
                     runs=args.runs, seed=args.seed, tables=[t.name for t in tables])
    if args.outdir is None:
        for t in tables:
            sys.stdout.write(f"# table: {t.name}\n")
            sys.stdout.write(render_csv(t))
        return 0
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for t in tables:
        (outdir / f"{t.name}.csv").write_text(render_csv(t), encoding="utf-8")
    (outdir / f"{args.figure}.json").write_text(json.dumps(meta, indent=2, default=str) + "\n", encoding="utf-8")
    return 0


def cmd_verify(args) -> int:
    started = time.time()
    names = args.system or sorted(CORPUS)
    unknown = [n for n in names if n not in CORPUS]
    if unknown:
        raise ValidationError(f"unknown systems {unknown}; corpus: {', '.join(sorted(CORPUS))}", "--system")
    seed = args.seed if args.seed is not None else 1
    t = Table("verify", ["system", "class", "exact", "frequency", "sigma", "z", "trials", "agrees"])
    ok = True
    for name in names:
        fc = frequency_check(CORPUS[name], args.trials, seed)
        good = fc.agrees(args.nsigma)
        ok &= good
        for k in range(len(fc.exact)):
            t.rows.append([name, k + 1, fc.exact[k], fc.frequency[k], fc.sigma[k], fc.z[k], args.trials,
                           bool(abs(fc.z[k]) <= args.nsigma)])
    _emit(t, args.output, _metadata("verify", args.argv, None, started, trials=args.trials, seed=seed),
          args.metadata)
    if not ok:
        print(f"error[verification]: simulator frequencies disagree with exact enumeration beyond "
              f"{args.nsigma} sigma", file=sys.stderr)
        return EXIT_CODES["verification"]
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poissonrx", description="Poisson-receiver analysis and simulation.")
    ap.add_argument("--version", action="version", version=f"poissonrx {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="scenario file (YAML or JSON)")
        p.add_argument("-o", "--output", help="CSV path (default: config output.csv or stdout)")
        p.add_argument("--metadata", help="JSON metadata path (default: <output>.json)")

    def iters(p):
        p.add_argument("--max-iters", type=int, help="override DE / SIC iteration limit")

    def sim(p):
        p.add_argument("--runs", type=int)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("eval", help="evaluate the analytic receiver on the load grid")
    common(p)
    iters(p)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("de", help="emit full density-evolution traces")
    common(p)
    iters(p)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_de)

    p = sub.add_parser("simulate", help="Monte Carlo SIC simulation on the load grid")
    common(p)
    iters(p)
    sim(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("admit", help="largest admissible population of the searched class")
    common(p)
    iters(p)
    sim(p)
    p.add_argument("--tol", type=float)
    p.add_argument("--montecarlo", action="store_true", help="also estimate the error at N and N+1 by simulation")
    p.set_defaults(func=cmd_admit)

    p = sub.add_parser("sweep", help="reproduce a registered figure or table")
    p.add_argument("figure", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("--simulate", action="store_true", help="add simulation overlays")
    p.add_argument("--outdir", help="write one CSV per table plus a JSON sidecar here (default: stdout)")
    sim(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="compare simulator frequencies with exact enumeration")
    common(p, config=False)
    p.add_argument("--trials", type=int, default=100000)
    p.add_argument("--seed", type=int)
    p.add_argument("--nsigma", type=float, default=3.0)
    p.add_argument("--system", action="append", help="corpus entry (repeatable; default all)")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, CapacityError, AdmissionError) as e:
        path = getattr(e, "path", "") or "-"
        msg = str(e)
        if path != "-" and msg.startswith(f"{path}: "):
            msg = msg[len(path) + 2:]
        print(f"error[{e.category}]: {path}: {msg}", file=sys.stderr)
        return EXIT_CODES[e.category]


if __name__ == "__main__":
    sys.exit(main())
