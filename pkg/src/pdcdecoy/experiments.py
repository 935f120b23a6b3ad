"""Reproduction experiments: click statistics, Klyshko trend, p(click|n) and r(n) sweeps, PNS study.

Sweeps over the channel transmission give every grid point its own random
streams (stream key = grid index); points at different pump powers with the
same channel setting share streams, so trends along the power axis are not
drowned in independent noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import adversary
from .config import FIG3_ETA_C, MEAN_AT_2UW, TABLE1_POWERS_NW, AttackConfig, SystemConfig
from .engine import CountsTable, expected_counts, run, sweep
from .estimator import (
    ConditionalClickStats,
    DarkModel,
    KlyshkoEstimate,
    conditional_probs_deconvolved,
    conditional_probs_raw,
    klyshko,
)
from .photonstats import PumpCalibration, build_convolution_matrix, mean_from_pump_power
from .reference import MEASURED_COUNTS_2UW

CALIBRATION = PumpCalibration(2e-6, MEAN_AT_2UW)


def _matrix(config: SystemConfig):
    return build_convolution_matrix(config.bins, 40, config.bin_weights)


def prediction(config: SystemConfig, matrix=None) -> ConditionalClickStats:
    """Noiseless analysis of the exact expected counts of ``config``."""
    matrix = matrix or _matrix(config)
    return conditional_probs_deconvolved(expected_counts(config), matrix)


# --- click statistics at 2 uW -------------------------------------------------


@dataclass
class ClickStatsComparison:
    counts: CountsTable
    scale: float
    rows: dict  # row name -> (simulated scaled, measured, z)
    p_raw: dict
    p_raw_err: dict


def table2(base: Optional[SystemConfig] = None, workers: int = 1) -> ClickStatsComparison:
    cfg = base or SystemConfig()
    counts = run(cfg, workers=workers)
    measured = MEASURED_COUNTS_2UW
    total = sum(measured["n_T"])
    scale = total / counts.n_trig
    rows = {}
    for name, sim in (
        ("no_click", counts.joint_noclick),
        ("click", counts.joint_click),
        ("n_T", counts.n_T),
    ):
        ref = np.asarray(measured[name], dtype=float)
        s = sim[: ref.size] * scale
        z = (ref - s) / np.sqrt(np.maximum(s, 1.0))
        rows[name] = (s, ref, z)
    p, err = conditional_probs_raw(counts)
    return ClickStatsComparison(counts, scale, rows, p, err)


# --- Klyshko efficiencies vs pump power --------------------------------------


@dataclass
class KlyshkoRow:
    power_nw: float
    mean: float
    estimate: KlyshkoEstimate
    counts: CountsTable


def table1(
    base: Optional[SystemConfig] = None,
    powers_nw: Sequence[float] = TABLE1_POWERS_NW,
    workers: int = 1,
    correct_singles: bool = True,
    checkpoint=None,
) -> list[KlyshkoRow]:
    base = base or SystemConfig()
    cfgs = [base.with_(mean_photons=mean_from_pump_power(p * 1e-9, CALIBRATION)) for p in powers_nw]
    tables = sweep(cfgs, workers=workers, stream_points=[0] * len(cfgs), checkpoint=checkpoint)
    dark = DarkModel.from_config(base)
    return [
        KlyshkoRow(p, c.mean_photons, klyshko(t, dark, correct_singles), t)
        for p, c, t in zip(powers_nw, cfgs, tables)
    ]


# --- conditional click probabilities vs channel --------------------------------


@dataclass
class ChannelPoint:
    config: SystemConfig
    counts: CountsTable
    stats: ConditionalClickStats
    expected: ConditionalClickStats


def channel_sweep(
    base: SystemConfig, eta_grid: Sequence[float] = FIG3_ETA_C, workers: int = 1, checkpoint=None
) -> list[ChannelPoint]:
    cfgs = [base.with_(eta_C=e) for e in eta_grid]
    tables = sweep(cfgs, workers=workers, checkpoint=checkpoint)
    matrix = _matrix(base)
    return [
        ChannelPoint(c, t, conditional_probs_deconvolved(t, matrix), prediction(c, matrix))
        for c, t in zip(cfgs, tables)
    ]


def fig3(
    base: Optional[SystemConfig] = None, eta_grid=FIG3_ETA_C, workers: int = 1, checkpoint=None
) -> list[ChannelPoint]:
    base = base or SystemConfig()
    mean = mean_from_pump_power(2e-6, CALIBRATION)
    return channel_sweep(base.with_(mean_photons=mean), eta_grid, workers, checkpoint)


@dataclass
class RatioPoint:
    power_nw: float
    mean: float
    r: dict
    r_err: dict
    r_theory: dict
    points: list = field(repr=False, default_factory=list)


def average_ratios(points: Sequence[ChannelPoint]) -> tuple[dict, dict, dict]:
    """Inverse-variance-weighted r(n) over the channel grid, and the prediction with the same weights."""
    r, r_err, r_th = {}, {}, {}
    ns = sorted({n for p in points for n in p.stats.r if n >= 2})
    for n in ns:
        use = [p for p in points if n in p.stats.r and p.stats.r_err.get(n, 0) > 0 and n in p.expected.r]
        if not use:
            continue
        w = np.array([1.0 / p.stats.r_err[n] ** 2 for p in use])
        r[n] = float(np.dot(w, [p.stats.r[n] for p in use]) / w.sum())
        r_th[n] = float(np.dot(w, [p.expected.r[n] for p in use]) / w.sum())
        r_err[n] = float(1.0 / np.sqrt(w.sum()))
    return r, r_err, r_th


def fig4(
    base: Optional[SystemConfig] = None,
    powers_nw: Sequence[float] = TABLE1_POWERS_NW,
    eta_grid: Sequence[float] = FIG3_ETA_C,
    workers: int = 1,
    checkpoint=None,
) -> list[RatioPoint]:
    base = base or SystemConfig()
    out = []
    for p in powers_nw:
        mean = mean_from_pump_power(p * 1e-9, CALIBRATION)
        pts = channel_sweep(base.with_(mean_photons=mean), eta_grid, workers, checkpoint)
        r, r_err, r_th = average_ratios(pts)
        out.append(RatioPoint(p, mean, r, r_err, r_th, pts))
    return out


# --- photon-number-splitting attack ---------------------------------------------


@dataclass
class AttackStudy:
    attack: AttackConfig
    honest_rate: float
    attacked_counts: CountsTable
    rate_z: float
    observed: ConditionalClickStats
    expected: ConditionalClickStats
    verdict: adversary.DetectionVerdict
    honest_verdicts: list = field(default_factory=list)

    @property
    def false_alarms(self) -> int:
        return sum(v.detected for v in self.honest_verdicts)


def attack_study(
    base: Optional[SystemConfig] = None,
    eta_C: float = 0.25,
    alpha: float = 1e-3,
    attack: Optional[AttackConfig] = None,
    n_honest: int = 0,
    workers: int = 1,
) -> AttackStudy:
    """Attack with a mimic-calibrated eavesdropper and test it against the honest prediction.

    ``n_honest`` honest repetitions on fresh streams estimate the false-alarm rate.
    """
    base = base or SystemConfig()
    honest = base.with_(eta_C=eta_C, attack=AttackConfig())
    attack = adversary.calibrate_mimic(honest, attack or AttackConfig(enabled=True))
    attacked = honest.with_(attack=attack)
    matrix = _matrix(honest)
    expected = prediction(honest, matrix)
    counts = run(attacked, workers=workers)
    observed = conditional_probs_deconvolved(counts, matrix)
    verdict = adversary.detect(observed, expected, alpha)
    rate = adversary.receiver_click_rate(honest)
    n = counts.n_trig
    rate_z = float((counts.n_B - n * rate) / np.sqrt(n * rate * (1 - rate)))
    honest_verdicts = []
    if n_honest:
        tables = sweep([honest] * n_honest, workers=workers, stream_points=range(1, n_honest + 1))
        honest_verdicts = [
            adversary.detect(conditional_probs_deconvolved(t, matrix), expected, alpha) for t in tables
        ]
    return AttackStudy(attack, rate, counts, rate_z, observed, expected, verdict, honest_verdicts)
