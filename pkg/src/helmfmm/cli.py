"""``helmfmm`` command line: gen, verify, eval, scale, report, predict."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import report
from .complexity import ComplexityParams, predict_costs
from .kernel import generate_geometry, read_particles, write_particles
from .runtime import SCHEDULERS
from .traversal import RunConfig, run_evaluation
from .tree import ALIGNMENT_POLICIES


def _buffer(text: str):
    return None if text.lower() in ("none", "inf", "unbounded") else int(text)


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ranks", type=int, default=1)
    p.add_argument("--digits", type=float, default=3.0)
    p.add_argument("--buffer-bytes", type=_buffer, default=None,
                   help="cap on one M2L message in bytes (default unbounded)")
    p.add_argument("--alignment", choices=ALIGNMENT_POLICIES, default="aligned")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scheduler", choices=SCHEDULERS, default="deterministic")


def _config(args) -> RunConfig:
    return RunConfig(digits=args.digits, n_ranks=args.ranks, buffer_bytes=args.buffer_bytes,
                     alignment=args.alignment, seed=args.seed, scheduler=args.scheduler)


def cmd_gen(args) -> int:
    spec = report.parse_geometry(args.geometry)
    particles = generate_geometry(spec, intensity_rule=args.intensities, seed=args.seed)
    header = [f"geometry {report.geometry_label(spec)}", f"count {len(particles)}",
              f"intensities {args.intensities} seed {args.seed}"]
    write_particles(args.output, particles, header)
    print(f"wrote {len(particles)} particles to {args.output}")
    return 0


def cmd_verify(args) -> int:
    particles = read_particles(args.particles)
    try:
        res = report.verify(particles, _config(args), limit=args.limit, force=args.force)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"N_s {res['N_s']}  digits {res['digits']:g}  N_p {res['N_p']}")
    print(f"relative RMS error {res['relative_rms']:.3e}")
    print(f"relative max error {res['relative_max']:.3e}")
    return 0


def cmd_eval(args) -> int:
    particles = read_particles(args.particles)
    res = run_evaluation(particles, _config(args))
    if args.output:
        np.savetxt(args.output, np.column_stack([res.potentials.real, res.potentials.imag]),
                   fmt="%.17g", header="re im")
    if args.ledger:
        Path(args.ledger).write_text(res.ledger.dumps() + "\n", encoding="utf-8")
    sys.stdout.write(res.ledger.to_csv(args.run_id))
    return 0


def cmd_scale(args) -> int:
    if args.study:
        study = report.StudySpec.load(args.study)
    elif args.geometry:
        study = report.StudySpec(geometries=args.geometry, ranks=args.ranks or [1, 2, 4, 8])
    else:
        print("error: give a study file or at least one --geometry", file=sys.stderr)
        return 2
    study = report.with_overrides(
        study, geometries=args.geometry if args.study else None, ranks=args.ranks,
        digits=args.digits, buffer_bytes=args.buffer_bytes, seed=args.seed,
        scheduler=args.scheduler, output=args.output,
        alignments=[args.alignment] if args.alignment else None)
    records = report.run_study(study)
    failed = sum("error" in r for r in records)
    print(f"{len(records)} cells, {failed} failed; reports in {study.output}")
    return 1 if failed else 0


def cmd_report(args) -> int:
    records = report.load_records(args.directory)
    report.write_reports(records, args.directory)
    print(f"regenerated reports for {len(records)} cells in {args.directory}")
    return 0


def cmd_predict(args) -> int:
    params = ComplexityParams(args.n_s, args.p, args.d, args.c_k,
                              float("inf") if args.m_s is None else args.m_s)
    print(predict_costs(params, args.levels).dumps())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="helmfmm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a test geometry as a particle file")
    p.add_argument("--geometry", required=True, help="kind:extent[:spacing], in wavelengths")
    p.add_argument("--intensities", choices=("unit", "random-seeded"), default="unit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("verify", help="compare against the direct sum")
    p.add_argument("particles")
    _run_flags(p)
    p.add_argument("--limit", type=int, default=50_000)
    p.add_argument("--force", action="store_true", help="ignore the direct-sum size guard")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="evaluate potentials and print per-phase costs")
    p.add_argument("particles")
    _run_flags(p)
    p.add_argument("--output", help="potential file (re im per line)")
    p.add_argument("--ledger", help="ledger JSON path")
    p.add_argument("--run-id", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scale", help="run a scaling study")
    p.add_argument("study", nargs="?", help="study JSON")
    p.add_argument("--geometry", action="append")
    p.add_argument("--ranks", type=int, nargs="+")
    p.add_argument("--digits", type=float)
    p.add_argument("--buffer-bytes", type=_buffer)
    p.add_argument("--alignment", choices=ALIGNMENT_POLICIES)
    p.add_argument("--seed", type=int)
    p.add_argument("--scheduler", choices=SCHEDULERS)
    p.add_argument("--output")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("report", help="regenerate tables from stored cell records")
    p.add_argument("directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("predict", help="closed-form cost estimates as JSON")
    p.add_argument("--n-s", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--d", type=int, choices=(2, 3), required=True)
    p.add_argument("--c-k", type=float, default=1.0)
    p.add_argument("--m-s", type=float)
    p.add_argument("--levels", type=int, required=True)
    p.set_defaults(func=cmd_predict)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
