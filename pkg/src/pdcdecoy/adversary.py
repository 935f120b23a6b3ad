"""Photon-number-splitting attack model and the decoy-ratio test that exposes it."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Union

import numpy as np
from scipy import stats

from .config import AttackConfig, SystemConfig
from .photonstats import poisson_distribution

CONSISTENT = "consistent"
ATTACK_DETECTED = "attack-detected"


class MimicInfeasibleError(ValueError):
    """Eve cannot reach the target click rate even without extra attenuation."""


class InsufficientOverlapError(ValueError):
    pass


def forwarded_photons(m, attack: AttackConfig):
    """Photons Eve re-injects before any channel loss (vectorised over ``m``)."""
    m = np.asarray(m)
    if not attack.enabled:
        return m
    return np.where(m >= attack.steal_threshold, m - attack.steal_count, m)


def receiver_eta(config: SystemConfig) -> float:
    """Per-photon transmission from the source to a receiver click."""
    a = config.attack
    if not a.enabled:
        return config.eta_B
    return a.eve_channel_eta * a.mimic_attenuation * config.eta_OC * config.eta_Det


def apply_attack(m: int, attack: AttackConfig, rng: np.random.Generator) -> int:
    """Number of photons arriving at the receiver station (before its own optics).

    With the attack disabled this is the identity; the honest channel loss is
    applied by the caller.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    if not attack.enabled:
        return m
    kept = int(forwarded_photons(m, attack))
    eta = attack.eve_channel_eta * attack.mimic_attenuation
    if kept == 0 or eta == 1.0:
        return kept
    return int(rng.binomial(kept, eta))


def _rate_from(config: SystemConfig, probs: np.ndarray) -> float:
    m = np.arange(probs.size)
    m_fwd = forwarded_photons(m, config.attack)
    no_click = (1.0 - receiver_eta(config)) ** m_fwd * (1.0 - config.p_dc_B)
    return float(1.0 - np.dot(probs, no_click))


def _source_probs(config: SystemConfig) -> np.ndarray:
    if config.forced_m is not None:
        p = np.zeros(config.forced_m + 1)
        p[-1] = 1.0
        return p
    return poisson_distribution(config.mean_photons).probs


def receiver_click_rate(config: SystemConfig) -> float:
    """Exact per-trigger receiver click probability, attack included."""
    return _rate_from(config, _source_probs(config))


def calibrate_mimic(config: SystemConfig, attack: AttackConfig, rtol: float = 1e-10) -> AttackConfig:
    """Choose Eve's extra attenuation so her receiver click rate equals the honest one."""
    if not attack.enabled:
        return attack
    probs = _source_probs(config)
    honest = config.with_(attack=AttackConfig())
    target = attack.mimic_target_rate
    if target is None:
        target = _rate_from(honest, probs)

    def rate(att: float) -> float:
        return _rate_from(config.with_(attack=replace(attack, mimic_attenuation=att)), probs)

    hi_rate = rate(1.0)
    if hi_rate < target * (1 - 1e-4):
        raise MimicInfeasibleError(
            f"maximum attacked click rate {hi_rate:.6g} is below target {target:.6g}"
        )
    if hi_rate <= target:
        return replace(attack, mimic_attenuation=1.0)
    lo, hi = 0.0, 1.0
    if rate(lo) > target:
        raise MimicInfeasibleError("target rate is below the dark-count floor")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return replace(attack, mimic_attenuation=0.5 * (lo + hi))


@dataclass(frozen=True)
class DetectionVerdict:
    statistic: float
    per_n_shift: dict
    verdict: str
    alpha: float
    threshold: float

    @property
    def detected(self) -> bool:
        return self.verdict == ATTACK_DETECTED


def detect(observed, expected: Union["object", Mapping[int, float]], alpha: float = 1e-3) -> DetectionVerdict:
    """One-sided test for decreased decoy ratios r(n), n >= 2.

    ``observed`` is a ConditionalClickStats; ``expected`` is either another
    ConditionalClickStats (its ``r`` values are used as noiseless references)
    or a mapping n -> expected r(n).  The combined statistic is the
    inverse-variance-weighted mean shift over n >= 2 divided by its standard
    error, using the full covariance of the observed ratios.  Positive values
    mean the ratios dropped.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    exp_r = dict(expected) if isinstance(expected, Mapping) else dict(expected.r)
    ns = [n for n in sorted(observed.r) if n >= 2 and n in exp_r and observed.r_err[n] > 0]
    if 1 not in observed.r or not ns:
        raise InsufficientOverlapError("need r(1) and at least one r(n >= 2) in both inputs")
    delta = np.array([observed.r[n] - exp_r[n] for n in ns])
    sigma = np.array([observed.r_err[n] for n in ns])
    cov = observed.r_cov_for(ns)
    w = 1.0 / sigma**2
    shift = float(np.dot(w, delta) / w.sum())
    var = float(w @ cov @ w) / w.sum() ** 2
    statistic = -shift / np.sqrt(var)
    threshold = float(stats.norm.isf(alpha))
    verdict = ATTACK_DETECTED if statistic > threshold else CONSISTENT
    per_n = {n: float(d / s) for n, d, s in zip(ns, delta, sigma)}
    return DetectionVerdict(float(statistic), per_n, verdict, alpha, threshold)
