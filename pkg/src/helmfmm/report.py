"""Scaling studies and the tables derived from their ledgers.

A study runs every (geometry, alignment, rank count) cell, stores one JSON
record per cell and then renders CSV tables from those records only, so the
tables can be regenerated byte for byte from the stored files.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import traceback
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .complexity import fit_affine, fit_and_compare
from .kernel import GeometrySpec, direct_potential, generate_geometry
from .ledger import MEMORY_CLASSES, PHASES, CostLedger
from .traversal import RunConfig, run_evaluation

log = logging.getLogger(__name__)


def efficiency(base: tuple[int, float], target: tuple[int, float]) -> float:
    """Strong-scaling efficiency (N_p T_p) / (N_q T_q) of ``target`` against ``base``."""
    (n_p, t_p), (n_q, t_q) = base, target
    if min(n_p, n_q) <= 0 or min(t_p, t_q) <= 0:
        raise ValueError("rank counts and times must be positive")
    return (n_p * t_p) / (n_q * t_q)


def relative_errors(approx: np.ndarray, exact: np.ndarray) -> tuple[float, float]:
    """(relative RMS, relative max); both zero when the reference vanishes
    and the approximation agrees."""
    diff = np.abs(approx - exact)
    ref_rms = float(np.sqrt(np.mean(np.abs(exact) ** 2))) if len(exact) else 0.0
    ref_max = float(np.abs(exact).max()) if len(exact) else 0.0
    rms = float(np.sqrt(np.mean(diff ** 2))) if len(exact) else 0.0
    mx = float(diff.max()) if len(exact) else 0.0
    if ref_rms == 0:
        return (0.0, 0.0) if mx == 0 else (math.inf, math.inf)
    return rms / ref_rms, mx / ref_max


def parse_geometry(text: str) -> GeometrySpec:
    """``kind:extent[:spacing]``, e.g. ``planar-grid:8`` (spacing 0.25)."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"geometry {text!r} is not kind:extent[:spacing]")
    spacing = float(parts[2]) if len(parts) == 3 else 0.25
    return GeometrySpec(parts[0], float(parts[1]), spacing)


def geometry_label(spec: GeometrySpec) -> str:
    return f"{spec.kind.value}:{spec.extent:g}:{spec.spacing:g}"


# ------------------------------------------------------------------ study

@dataclass
class StudySpec:
    geometries: list[str]
    ranks: list[int]
    digits: float = 3.0
    buffer_bytes: int | None = None
    alignments: list[str] = field(default_factory=lambda: ["aligned", "rank-ordered"])
    seed: int = 0
    scheduler: str = "deterministic"
    stop_after: str | None = None
    output: str = "study-out"

    def __post_init__(self):
        if not self.geometries or not self.ranks or not self.alignments:
            raise ValueError("study sweeps must be nonempty")
        if any(int(p) < 1 for p in self.ranks):
            raise ValueError("rank counts must be >= 1")
        for g in self.geometries:
            parse_geometry(g)

    @classmethod
    def from_json(cls, data: dict) -> "StudySpec":
        return cls(**data)

    @classmethod
    def load(cls, path) -> "StudySpec":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def cells(self):
        for g in self.geometries:
            for a in self.alignments:
                for p in sorted(set(int(r) for r in self.ranks)):
                    yield g, a, p


def run_id(geometry: str, alignment: str, n_ranks: int) -> str:
    return f"{geometry.replace(':', '_')}__{alignment}__p{n_ranks}"


def run_cell(study: StudySpec, geometry: str, alignment: str, n_ranks: int) -> dict:
    spec = parse_geometry(geometry)
    particles = generate_geometry(spec, seed=study.seed)
    config = RunConfig(digits=study.digits, n_ranks=n_ranks, buffer_bytes=study.buffer_bytes,
                       alignment=alignment, seed=study.seed, scheduler=study.scheduler,
                       stop_after=study.stop_after)
    res = run_evaluation(particles, config)
    tree = res.setup.tree
    return {"run_id": run_id(geometry, alignment, n_ranks), "geometry": geometry,
            "alignment": alignment, "N_p": n_ranks, "N_s": len(particles),
            "d": tree.config.d, "levels": tree.config.L, "digits": study.digits,
            "buffer_bytes": study.buffer_bytes, "scheduler": study.scheduler,
            "ledger": res.ledger.to_json()}


def run_study(study: StudySpec, out_dir=None) -> list[dict]:
    """Run all cells, write ``cells/<run_id>.json`` and the report tables.
    A failing cell is recorded with its error and the study continues."""
    out = Path(out_dir or study.output)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    (out / "study.json").write_text(json.dumps(asdict(study), indent=1, sort_keys=True) + "\n")
    records = []
    for g, a, p in study.cells():
        rid = run_id(g, a, p)
        log.info("cell %s", rid)
        try:
            rec = run_cell(study, g, a, p)
        except Exception as exc:  # noqa: BLE001 - recorded, study goes on
            rec = {"run_id": rid, "geometry": g, "alignment": a, "N_p": p,
                   "error": f"{exc!r}", "traceback": traceback.format_exc()}
        (out / "cells" / f"{rid}.json").write_text(json.dumps(rec, indent=1, sort_keys=True) + "\n")
        records.append(rec)
    write_reports(records, out)
    return records


def load_records(out_dir) -> list[dict]:
    cells = sorted(Path(out_dir, "cells").glob("*.json"))
    return [json.loads(p.read_text(encoding="utf-8")) for p in cells]


# ---------------------------------------------------------------- tables

def _csv(header: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, header, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _ok(records):
    good = [r for r in records if "ledger" in r]
    return sorted(good, key=lambda r: (r["geometry"], r["alignment"], r["N_p"]))


def _ledger(rec) -> CostLedger:
    return CostLedger.from_json(rec["ledger"])


def phase_table(records) -> str:
    rows = []
    for rec in _ok(records):
        rows.extend(_ledger(rec).csv_rows(rec["run_id"]))
    return _csv(["run_id", "N_p", "phase", "seconds", "flops", "messages", "bytes"], rows)


def scaling_table(records) -> str:
    """Total time, speedup and efficiency against the smallest rank count of
    each (geometry, alignment) series."""
    rows = []
    series: dict = {}
    for rec in _ok(records):
        series.setdefault((rec["geometry"], rec["alignment"]), []).append(rec)
    for (g, a), recs in sorted(series.items()):
        base = recs[0]
        led0 = _ledger(base)
        t0 = led0.total_seconds()
        for rec in recs:
            led = _ledger(rec)
            t = led.total_seconds()
            eff = efficiency((base["N_p"], t0), (rec["N_p"], t)) if t > 0 and t0 > 0 else ""
            rows.append({"run_id": rec["run_id"], "geometry": g, "alignment": a,
                         "N_p": rec["N_p"], "clock": led.clock, "seconds": f"{t:.6g}",
                         "speedup": f"{t0 / t:.4f}" if t > 0 else "",
                         "efficiency": f"{eff:.4f}" if eff != "" else ""})
    return _csv(["run_id", "geometry", "alignment", "N_p", "clock", "seconds", "speedup",
                 "efficiency"], rows)


def aggregation_traffic(led: CostLedger) -> tuple[int, int]:
    """(messages, bytes) of the upward aggregation plus the whole downward pass."""
    agg, down = led.total("m2m.agg"), led.total("l2l")
    return agg.messages + down.messages, agg.bytes + down.bytes


def alignment_table(records) -> str:
    """Aligned minus rank-ordered aggregation+L2L traffic per (geometry, N_p)."""
    by = {}
    for rec in _ok(records):
        by[(rec["geometry"], rec["N_p"], rec["alignment"])] = rec
    rows = []
    for (g, p, a), rec in sorted(by.items()):
        if a != "aligned" or (g, p, "rank-ordered") not in by:
            continue
        ma, ba = aggregation_traffic(_ledger(rec))
        mr, br = aggregation_traffic(_ledger(by[(g, p, "rank-ordered")]))
        rows.append({"geometry": g, "N_p": p, "aligned_messages": ma, "rank_ordered_messages": mr,
                     "delta_messages": ma - mr, "aligned_bytes": ba, "rank_ordered_bytes": br,
                     "delta_bytes": ba - br})
    return _csv(["geometry", "N_p", "aligned_messages", "rank_ordered_messages", "delta_messages",
                 "aligned_bytes", "rank_ordered_bytes", "delta_bytes"], rows)


def memory_table(records) -> str:
    rows = []
    for rec in _ok(records):
        tot = _ledger(rec).memory_totals()
        rows.append({"run_id": rec["run_id"], "N_p": rec["N_p"], **tot})
    return _csv(["run_id", "N_p", *MEMORY_CLASSES], rows)


SIZE_MODELS = {2: {"c2m": "N", "m2m": "N log^2 N", "m2l": "N log N", "l2l": "N log^2 N",
                   "l2o": "N", "near": "N"},
               3: {p: "N" for p in PHASES}}


def fit_table(records) -> str:
    """Flops against problem size per phase (one series per geometry kind,
    alignment and rank count, at least three sizes), and M2M/L2L message
    counts against a + b P^2 per geometry."""
    rows = []
    groups: dict = {}
    for rec in _ok(records):
        kind = rec["geometry"].split(":")[0]
        groups.setdefault((kind, rec["d"], rec["alignment"], rec["N_p"]), []).append(rec)
    for (kind, d, a, p), recs in sorted(groups.items()):
        recs = sorted(recs, key=lambda r: r["N_s"])
        if len({r["N_s"] for r in recs}) < 3:
            continue
        n = [r["N_s"] for r in recs]
        for phase in PHASES:
            y = [_ledger(r).total(phase).flops for r in recs]
            if not any(y):
                continue
            model = SIZE_MODELS[d][phase]
            scale, r2 = fit_and_compare(n, y, model)
            rows.append({"series": f"{kind}/{a}/p{p}", "phase": phase, "quantity": "flops",
                         "model": model, "params": f"{scale:.6g}", "r_squared": f"{r2:.6f}"})
    by_geom: dict = {}
    for rec in _ok(records):
        by_geom.setdefault((rec["geometry"], rec["alignment"]), []).append(rec)
    for (g, a), recs in sorted(by_geom.items()):
        recs = sorted(recs, key=lambda r: r["N_p"])
        if len(recs) < 3:
            continue
        ps = [r["N_p"] for r in recs]
        for phase in ("m2m", "l2l"):
            y = [_ledger(r).total(phase).messages for r in recs]
            if len(set(y)) < 2:
                continue
            ia, ib, r2 = fit_affine(ps, y, "P^2")
            rows.append({"series": f"{g}/{a}", "phase": phase, "quantity": "messages",
                         "model": "a + b P^2", "params": f"{ia:.6g} {ib:.6g}",
                         "r_squared": f"{r2:.6f}"})
    return _csv(["series", "phase", "quantity", "model", "params", "r_squared"], rows)


def failure_table(records) -> str:
    rows = [{"run_id": r["run_id"], "error": r["error"]} for r in records if "error" in r]
    return _csv(["run_id", "error"], rows)


REPORTS = {"phases.csv": phase_table, "scaling.csv": scaling_table,
           "alignment.csv": alignment_table, "memory.csv": memory_table,
           "fits.csv": fit_table, "failures.csv": failure_table}


def render_reports(records) -> dict[str, str]:
    return {name: fn(records) for name, fn in REPORTS.items()}


def write_reports(records, out_dir) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    texts = render_reports(records)
    for name, text in texts.items():
        (out / name).write_text(text, encoding="utf-8")
    return texts


def fit_data_file(x, y, scale: float, model) -> str:
    """Whitespace-separated columns (x, measured, fitted) for gnuplot."""
    from .complexity import ASYMPTOTIC_FORMS
    f = ASYMPTOTIC_FORMS[model] if isinstance(model, str) else model
    fitted = scale * np.asarray(f(np.asarray(x, dtype=float)), dtype=float)
    lines = ["# x measured fitted"]
    lines += [f"{a:.10g} {b:.10g} {c:.10g}" for a, b, c in zip(x, y, fitted)]
    return "\n".join(lines) + "\n"


def verify(particles, config: RunConfig, limit: int = 50_000, force: bool = False) -> dict:
    """Fast evaluation against the direct sum."""
    if len(particles) > limit and not force:
        raise ValueError(f"{len(particles)} particles exceed the direct-sum guard of {limit}; "
                         "use force to override")
    pot, ledger = run_evaluation(particles, config).potentials, None
    exact = direct_potential(particles, particles.positions, config.k)
    rms, mx = relative_errors(pot, exact)
    return {"N_s": len(particles), "digits": config.digits, "N_p": config.n_ranks,
            "relative_rms": rms, "relative_max": mx}


def with_overrides(study: StudySpec, **kw) -> StudySpec:
    return replace(study, **{k: v for k, v in kw.items() if v is not None})
