"""Command-line entry point.

Precedence for every setting: built-in defaults < ``--config`` JSON file < flags.
``PDCDECOY_OUTPUT_DIR`` sets the directory for outputs given without ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import experiments
from .adversary import MimicInfeasibleError
from .config import (
    DEFAULT_TRIGGERS,
    FAST_TRIGGERS,
    FIG3_ETA_C,
    TABLE1_POWERS_NW,
    AttackConfig,
    SystemConfig,
)
from .engine import run, sweep
from .estimator import DarkModel, conditional_probs_deconvolved, klyshko
from .output import OutputError, Result, emit, load_counts
from .photonstats import (
    build_convolution_matrix,
    conditional_click_probability,
    poisson_distribution,
)

CONFIG_SCHEMA_VERSION = 1
MODES = (
    "simulate",
    "theory",
    "analyze",
    "attack",
    "reproduce-table1",
    "reproduce-table2",
    "reproduce-fig3",
    "reproduce-fig4",
)
ANALYSIS_COLUMNS = (
    "point", "mean_photons", "eta_C", "n", "p_raw", "p_raw_err", "p_deconv", "err",
    "r", "r_err", "p_theory", "r_theory",
)

log = logging.getLogger("pdcdecoy")


class ValidationError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


@dataclass
class ExperimentSpec:
    mode: str
    system: SystemConfig = field(default_factory=SystemConfig)
    pump_powers: Optional[list] = None  # watts
    eta_C: Optional[list] = None
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(enabled=True))
    alpha: float = 1e-3
    n_honest: int = 0
    counts_file: Optional[str] = None
    out: Optional[str] = None
    format: str = "csv"
    workers: int = 1
    resume: bool = False

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValidationError("mode", f"unknown mode {self.mode!r}")
        if self.format not in ("csv", "json"):
            raise ValidationError("format", "must be csv or json")
        for name in ("pump_powers", "eta_C"):
            vals = getattr(self, name)
            if vals is None:
                continue
            if len(vals) == 0:
                raise ValidationError(name, "sweep list must not be empty")
            if name == "eta_C" and not all(0 < v <= 1 for v in vals):
                raise ValidationError(name, "channel transmissions must lie in (0, 1]")
            if name == "pump_powers" and not all(v >= 0 for v in vals):
                raise ValidationError(name, "pump powers must be >= 0")
        if self.mode == "analyze" and not self.counts_file:
            raise ValidationError("counts_file", "analyze needs a counts file")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha", "must lie in (0, 1)")
        if self.workers < 1:
            raise ValidationError("workers", "must be >= 1")
        if self.n_honest < 0:
            raise ValidationError("n_honest", "must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["system"] = self.system.to_dict()
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d


def _spec_from_file(path: Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError("config", f"cannot load {path}: {exc}") from exc
    version = doc.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ValidationError("schema_version", f"unsupported config version {version}")
    return doc


def resolve_spec(args: argparse.Namespace) -> ExperimentSpec:
    file_doc = _spec_from_file(args.config) if args.config else {}
    system_doc = dict(file_doc.pop("system", {}))
    attack_doc = file_doc.pop("attack", None)
    unknown = set(file_doc) - {f.name for f in fields(ExperimentSpec)}
    if unknown:
        raise ValidationError("config", f"unknown fields {sorted(unknown)}")

    if getattr(args, "fast", False):
        system_doc["n_triggers"] = FAST_TRIGGERS
    for flag, key in (
        ("seed", "rng_seed"),
        ("triggers", "n_triggers"),
        ("mean", "mean_photons"),
        ("eta_t", "eta_T"),
        ("dead_gates", "dead_gates_B"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            system_doc[key] = v
    try:
        system = SystemConfig.from_dict(system_doc)
        attack = AttackConfig(**attack_doc) if attack_doc else AttackConfig(enabled=True)
    except (TypeError, ValueError) as exc:
        raise ValidationError("system", str(exc)) from exc

    spec = ExperimentSpec(mode=args.mode, system=system, attack=attack, **file_doc)
    if getattr(args, "power", None) is not None:
        spec.pump_powers = args.power
    if getattr(args, "eta_c", None) is not None:
        spec.eta_C = args.eta_c
    for flag in ("alpha", "honest", "workers", "format", "out", "counts_file"):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(spec, "n_honest" if flag == "honest" else flag, v)
    if getattr(args, "resume", False):
        spec.resume = True
    spec.validate()
    return spec


# --- mode implementations ------------------------------------------------------


def _grid(spec: ExperimentSpec) -> list[SystemConfig]:
    base = spec.system
    means = [base.mean_photons]
    if spec.pump_powers:
        means = [experiments.mean_from_pump_power(p, experiments.CALIBRATION) for p in spec.pump_powers]
    etas = spec.eta_C or [base.eta_C]
    return [base.with_(mean_photons=m, eta_C=e) for m in means for e in etas]


def _analysis_rows(points, with_theory: bool = True) -> list[dict]:
    rows = []
    for i, (cfg, table) in enumerate(points):
        matrix = build_convolution_matrix(table.bins, 40, cfg.bin_weights)
        stats = conditional_probs_deconvolved(table, matrix)
        pred = experiments.prediction(cfg, matrix) if with_theory else None
        for n in range(table.bins + 1):
            if n not in stats.p_raw and n not in stats.p_deconv:
                continue
            rows.append(
                {
                    "point": i,
                    "mean_photons": cfg.mean_photons,
                    "eta_C": cfg.eta_C,
                    "n": n,
                    "p_raw": stats.p_raw.get(n),
                    "p_raw_err": stats.p_raw_err.get(n),
                    "p_deconv": stats.p_deconv.get(n),
                    "err": stats.p_deconv_err.get(n),
                    "r": stats.r.get(n),
                    "r_err": stats.r_err.get(n),
                    "p_theory": pred.p_deconv.get(n) if pred else None,
                    "r_theory": pred.r.get(n) if pred else None,
                }
            )
    return rows


def _checkpoint(spec: ExperimentSpec, out: Path) -> Optional[Path]:
    path = out.with_name(out.name + ".partial.jsonl")
    if not spec.resume and path.exists():
        path.unlink()
    return path


def mode_simulate(spec: ExperimentSpec, out: Path) -> Result:
    cfgs = _grid(spec)
    tables = sweep(cfgs, workers=spec.workers, checkpoint=_checkpoint(spec, out))
    points = list(zip(cfgs, tables))
    result = Result("counts", (), counts=[(c.to_dict(), t) for c, t in points])
    if spec.format == "json":
        result.columns = ANALYSIS_COLUMNS
        result.rows = _analysis_rows(points)
    return result


def mode_theory(spec: ExperimentSpec, out: Path) -> Result:
    rows = []
    for i, cfg in enumerate(_grid(spec)):
        dist = poisson_distribution(cfg.mean_photons)
        p1 = conditional_click_probability(dist, 1, cfg.eta_T, cfg.eta_B)
        for n in range(0, 5):
            p = conditional_click_probability(dist, n, cfg.eta_T, cfg.eta_B)
            rows.append(
                {
                    "point": i,
                    "mean_photons": cfg.mean_photons,
                    "eta_C": cfg.eta_C,
                    "n": n,
                    "p_theory": p,
                    "r_theory": p / p1 if n >= 1 else None,
                }
            )
    return Result("theory", ("point", "mean_photons", "eta_C", "n", "p_theory", "r_theory"), rows)


def mode_analyze(spec: ExperimentSpec, out: Path) -> Result:
    loaded = load_counts(Path(spec.counts_file))
    points = []
    for cfg_doc, table in loaded:
        known = {k: v for k, v in cfg_doc.items() if v is not None}
        cfg = SystemConfig.from_dict({**spec.system.to_dict(), **known})
        points.append((cfg, table))
    rows = _analysis_rows(points)
    summary = {}
    for i, (cfg, table) in enumerate(points):
        try:
            k = klyshko(table, DarkModel.from_config(cfg))
            summary[f"point_{i}"] = {"eta_T_hat": k.eta_T_hat, "eta_B_hat": k.eta_B_hat, "n_acc": k.n_acc}
        except ValueError as exc:
            summary[f"point_{i}"] = {"error": str(exc)}
    return Result("analysis", ANALYSIS_COLUMNS, rows, counts=[(c.to_dict(), t) for c, t in points], summary=summary)


def mode_attack(spec: ExperimentSpec, out: Path) -> Result:
    eta_c = (spec.eta_C or [0.25])[0]
    study = experiments.attack_study(
        spec.system, eta_C=eta_c, alpha=spec.alpha, attack=spec.attack,
        n_honest=spec.n_honest, workers=spec.workers,
    )
    rows = []
    for n, z in study.verdict.per_n_shift.items():
        rows.append(
            {
                "n": n,
                "r_observed": study.observed.r[n],
                "r_err": study.observed.r_err[n],
                "r_expected": study.expected.r[n],
                "z": z,
            }
        )
    summary = {
        "verdict": study.verdict.verdict,
        "statistic": study.verdict.statistic,
        "threshold": study.verdict.threshold,
        "alpha": spec.alpha,
        "mimic_attenuation": study.attack.mimic_attenuation,
        "honest_click_rate": study.honest_rate,
        "attacked_click_rate": float(study.attacked_counts.n_B / study.attacked_counts.n_trig),
        "rate_z": study.rate_z,
        "honest_runs": len(study.honest_verdicts),
        "false_alarms": study.false_alarms,
    }
    return Result("attack", ("n", "r_observed", "r_err", "r_expected", "z"), rows,
                  counts=[(spec.system.with_(eta_C=eta_c, attack=study.attack).to_dict(), study.attacked_counts)],
                  summary=summary)


def mode_table1(spec: ExperimentSpec, out: Path) -> Result:
    powers_nw = [p * 1e9 for p in spec.pump_powers] if spec.pump_powers else list(TABLE1_POWERS_NW)
    rows_k = experiments.table1(spec.system, powers_nw, workers=spec.workers, checkpoint=_checkpoint(spec, out))
    columns = ("quantity",) + tuple(f"{p:g}nW" for p in powers_nw)
    rows = [
        {"quantity": "eta_B", **{f"{r.power_nw:g}nW": r.estimate.eta_B_hat for r in rows_k}},
        {"quantity": "eta_T", **{f"{r.power_nw:g}nW": r.estimate.eta_T_hat for r in rows_k}},
    ]
    counts = [(spec.system.with_(mean_photons=r.mean).to_dict(), r.counts) for r in rows_k]
    return Result("table1", columns, rows, counts=counts)


def mode_table2(spec: ExperimentSpec, out: Path) -> Result:
    cmp = experiments.table2(spec.system, workers=spec.workers)
    names = ("zero", "one", "two", "three", "four")
    columns = ("row",) + names
    rows = []
    for key, label in (("no_click", "N(no click|n)"), ("click", "N(click|n)"), ("n_T", "N_T(n)")):
        sim, ref, z = cmp.rows[key]
        rows.append({"row": label, **dict(zip(names, (int(round(v)) for v in sim)))})
        rows.append({"row": label + " measured", **dict(zip(names, (int(v) for v in ref)))})
        rows.append({"row": label + " z", **dict(zip(names, (float(v) for v in z)))})
    summary = {"scale_to_measured_triggers": cmp.scale, "p_click_given_n": cmp.p_raw}
    return Result("table2", columns, rows, counts=[(spec.system.to_dict(), cmp.counts)], summary=summary)


def mode_fig3(spec: ExperimentSpec, out: Path) -> Result:
    pts = experiments.fig3(spec.system, spec.eta_C or FIG3_ETA_C, spec.workers, _checkpoint(spec, out))
    points = [(p.config, p.counts) for p in pts]
    return Result("fig3", ANALYSIS_COLUMNS, _analysis_rows(points),
                  counts=[(c.to_dict(), t) for c, t in points])


def mode_fig4(spec: ExperimentSpec, out: Path) -> Result:
    powers_nw = [p * 1e9 for p in spec.pump_powers] if spec.pump_powers else list(TABLE1_POWERS_NW)
    res = experiments.fig4(spec.system, powers_nw, spec.eta_C or FIG3_ETA_C, spec.workers,
                           _checkpoint(spec, out))
    rows = []
    for rp in res:
        for n in sorted(rp.r):
            rows.append({"mean_photons": rp.mean, "power_nW": rp.power_nw, "n": n, "r": rp.r[n],
                         "r_err": rp.r_err[n], "r_theory": rp.r_theory[n]})
    return Result("fig4", ("mean_photons", "power_nW", "n", "r", "r_err", "r_theory"), rows)


DISPATCH = {
    "simulate": mode_simulate,
    "theory": mode_theory,
    "analyze": mode_analyze,
    "attack": mode_attack,
    "reproduce-table1": mode_table1,
    "reproduce-table2": mode_table2,
    "reproduce-fig3": mode_fig3,
    "reproduce-fig4": mode_fig4,
}


def default_out(spec: ExperimentSpec) -> Path:
    if spec.out:
        return Path(spec.out)
    base = Path(os.environ.get("PDCDECOY_OUTPUT_DIR", "."))
    return base / f"{spec.mode}.{spec.format}"


def run_experiment(spec: ExperimentSpec) -> Path:
    spec.validate()
    out = default_out(spec)
    result = DISPATCH[spec.mode](spec, out)
    path = emit(result, spec.to_dict(), out, spec.format)
    ckpt = out.with_name(out.name + ".partial.jsonl")
    if ckpt.exists():
        ckpt.unlink()
    return path


# --- argument parsing ------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="64-bit master seed")
    p.add_argument("--triggers", type=int, help="triggers per sweep point")
    p.add_argument("--out", help="output file")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--fast", action="store_true", help=f"{FAST_TRIGGERS:g} triggers per point")
    p.add_argument("--workers", type=int, help="processes per sweep point")
    p.add_argument("--resume", action="store_true", help="reuse finished sweep points")
    p.add_argument("--mean", type=float, help="mean pair number per pulse")
    p.add_argument("--power", type=float, nargs="+", help="pump powers in W (sweep)")
    p.add_argument("--eta-c", dest="eta_c", type=float, nargs="+", help="channel transmissions (sweep)")
    p.add_argument("--eta-t", dest="eta_t", type=float, help="herald-arm efficiency")
    p.add_argument("--dead-gates", dest="dead_gates", type=int, help="receiver gates blanked after a click")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdcdecoy", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "Monte Carlo count tables"),
        ("theory", "closed-form p(click|n) and r(n)"),
        ("attack", "PNS attack and its detection"),
    ):
        _common(sub.add_parser(name, help=help_))
    a = sub.add_parser("analyze", help="analyse a counts file")
    a.add_argument("counts_file")
    _common(a)
    r = sub.add_parser("reproduce", help="reproduce a table or figure")
    r.add_argument("target", choices=("table1", "table2", "fig3", "fig4"))
    _common(r)
    for p in sub.choices.values():
        if p.prog.endswith("attack"):
            p.add_argument("--alpha", type=float)
            p.add_argument("--honest", type=int, help="honest repetitions for the false-alarm rate")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.mode = f"reproduce-{args.target}" if args.command == "reproduce" else args.command
    if args.triggers is not None and args.triggers < 1:
        return _fail("triggers", "n_triggers must be >= 1")
    try:
        spec = resolve_spec(args)
        path = run_experiment(spec)
    except ValidationError as exc:
        return _fail(exc.field, exc.message)
    except MimicInfeasibleError as exc:
        return _fail("attack", str(exc), kind="infeasible")
    except OutputError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 3
    print(path)
    return 0


def _fail(field_name: str, message: str, kind: str = "validation") -> int:
    print(json.dumps({"error": kind, "field": field_name, "message": message}), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
