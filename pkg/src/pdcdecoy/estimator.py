"""Coincidence-count analysis: conditional click probabilities, Klyshko efficiencies, decoy ratios."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .engine import CountsTable
from .photonstats import ConvolutionMatrix, deconvolve


@dataclass(frozen=True)
class DarkModel:
    p_dc_B: float
    p_dc_T: float
    bins: int = 8

    @classmethod
    def from_config(cls, config) -> "DarkModel":
        return cls(config.p_dc_B, config.p_dc_T, config.bins)


@dataclass(frozen=True)
class KlyshkoEstimate:
    eta_T_hat: float
    eta_B_hat: float
    n_acc: float
    n_dc_B: float
    n_dc_T: float
    eta_T_err: float
    eta_B_err: float
    flags: tuple = ()


@dataclass(frozen=True)
class ConditionalClickStats:
    """Conditional click probabilities keyed by click number (raw) or photon number (deconvolved).

    Photon numbers without usable data are absent from the dicts.  ``r_cov`` is
    the delta-method covariance of the ratios, keyed by (n, n').
    """

    p_raw: dict
    p_raw_err: dict
    p_deconv: dict
    p_deconv_err: dict
    r: dict
    r_err: dict
    r_cov: dict = field(default_factory=dict, repr=False)
    flags: tuple = ()

    def r_cov_for(self, ns: Sequence[int]) -> np.ndarray:
        return np.array([[self.r_cov.get((a, b), 0.0) for b in ns] for a in ns])


def conditional_probs_raw(counts: CountsTable) -> tuple[dict, dict]:
    """p(click|n) = N(click|n) / N_T(n) for every click number with data, plus binomial errors."""
    p, err = {}, {}
    for n, (k, tot) in enumerate(zip(counts.joint_click, counts.n_T)):
        if tot <= 0:
            continue
        v = k / tot
        p[n] = float(v)
        # zero-event cells still get a non-zero error of order 1/N
        err[n] = float(np.sqrt(max(v * (1 - v), 1.0 / tot) / tot))
    return p, err


def accidentals(counts: CountsTable) -> float:
    if counts.n_trig <= 0:
        raise ValueError("accidentals need n_trig > 0")
    return float(counts.n_B * counts.n_herald / counts.n_trig)


def dark_corrected_singles(counts: CountsTable, dark: DarkModel) -> tuple[float, float]:
    """Receiver and herald singles with the expected dark-only events removed.

    Inverts P(click) = 1 - (1 - x)(1 - p_dc) for the photon-induced rate x.
    """
    n = float(counts.n_trig)
    n_B = (float(counts.n_B) - dark.p_dc_B * n) / (1.0 - dark.p_dc_B)
    quiet = (1.0 - dark.p_dc_T) ** dark.bins
    n_T = n - (n - float(counts.n_herald)) / quiet
    return n_B, n_T


def klyshko(counts: CountsTable, dark: DarkModel, correct_singles: bool = True) -> KlyshkoEstimate:
    """Accidental- and dark-corrected Klyshko efficiencies of both arms.

    Coincidences lose the accidentals ``N_B * N_T / N_trig`` and the dark
    coincidences of the respective detector.  With ``correct_singles`` the
    singles in the denominators are also freed of dark-only clicks; without
    it they are used raw, which biases the herald-arm estimate low whenever
    receiver dark clicks are a sizeable share of N_B.
    """
    n_B = float(counts.n_B)
    n_T = float(counts.n_herald)
    if n_B <= 0 or n_T <= 0:
        raise ValueError("Klyshko estimates need receiver clicks and herald events")
    n_acc = accidentals(counts)
    n_dc_B = dark.p_dc_B * n_T
    n_dc_T = dark.bins * dark.p_dc_T * n_B
    if correct_singles:
        den_T, den_B = dark_corrected_singles(counts, dark)
    else:
        den_T, den_B = n_B, n_T
    if den_T <= 0 or den_B <= 0:
        raise ValueError("singles vanish after dark correction")
    net = float(counts.n_coinc) - n_acc
    eta_T = (net - n_dc_T) / den_T
    eta_B = (net - n_dc_B) / den_B
    flags = []
    for name, v in (("eta_T", eta_T), ("eta_B", eta_B)):
        if not 0.0 <= v <= 1.0:
            flags.append(f"{name}_out_of_range")
    err_T = np.sqrt(max(eta_T * (1 - eta_T), 0.0) / den_T)
    err_B = np.sqrt(max(eta_B * (1 - eta_B), 0.0) / den_B)
    return KlyshkoEstimate(eta_T, eta_B, n_acc, n_dc_B, n_dc_T, float(err_T), float(err_B), tuple(flags))


def _cell_gradients(counts: CountsTable, matrix: ConvolutionMatrix):
    """Deconvolved ratios and their gradients with respect to the (click, no-click) cells."""
    inv = matrix.inverse
    num = deconvolve(counts.joint_click, matrix)
    den = deconvolve(counts.n_T, matrix)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = num / den
        # dp_n/dclick_j = inv[n,j](1-p_n)/den_n ; dp_n/dnoclick_j = -inv[n,j] p_n/den_n
        g_click = inv * ((1 - p) / den)[:, None]
        g_noclick = -inv * (p / den)[:, None]
    return num, den, p, g_click, g_noclick


def conditional_probs_deconvolved(
    counts: CountsTable, matrix: ConvolutionMatrix, n_sigma_floor: float = 2.0
) -> ConditionalClickStats:
    """Convolution-corrected p(click|n) and ratios r(n) with delta-method errors.

    The inverse matrix is applied to the click and the total count vectors
    separately and the ratio is taken afterwards.  Photon numbers whose
    deconvolved total is not positive at ``n_sigma_floor`` standard errors are
    dropped and flagged.
    """
    if counts.bins != matrix.bins:
        raise ValueError("counts and matrix disagree on the number of bins")
    p_raw, p_raw_err = conditional_probs_raw(counts)
    num, den, p, g_c, g_n = _cell_gradients(counts, matrix)
    cells_c = np.asarray(counts.joint_click, dtype=float)
    cells_n = np.asarray(counts.joint_noclick, dtype=float)
    den_err = np.sqrt((matrix.inverse**2) @ (cells_c + cells_n))

    flags = []
    valid = []
    for n in range(matrix.bins + 1):
        if den[n] <= 0 or den[n] <= n_sigma_floor * den_err[n]:
            if counts.n_T[n:].sum() > 0:
                flags.append(f"n={n}: deconvolved denominator not significant")
            continue
        if num[n] < 0:
            flags.append(f"n={n}: negative deconvolved click count")
        valid.append(n)

    # cell covariance is diagonal (Poisson); the ratios are scale invariant so
    # the multinomial constraint does not change first-order errors.
    def cov(ga, gb):
        return float(np.sum(ga[0] * gb[0] * cells_c) + np.sum(ga[1] * gb[1] * cells_n))

    grads = {n: (g_c[n], g_n[n]) for n in valid}
    p_dec = {n: float(p[n]) for n in valid}
    p_dec_err = {n: float(np.sqrt(cov(grads[n], grads[n]))) for n in valid}

    r, r_err, r_cov = {}, {}, {}
    if 1 in p_dec and p_dec[1] > 0:
        p1 = p_dec[1]
        rg = {}
        for n in valid:
            if n < 1:
                continue
            r[n] = p_dec[n] / p1
            rg[n] = tuple(grads[n][i] / p1 - p_dec[n] * grads[1][i] / p1**2 for i in range(2))
        r[1] = 1.0
        for a in rg:
            for b in rg:
                r_cov[(a, b)] = cov(rg[a], rg[b])
        r_err = {n: float(np.sqrt(max(r_cov[(n, n)], 0.0))) for n in rg}
    else:
        flags.append("p(click|1) undefined; ratios omitted")
    return ConditionalClickStats(p_raw, p_raw_err, p_dec, p_dec_err, r, r_err, r_cov, tuple(flags))


def ratios(stats: ConditionalClickStats | Sequence[ConditionalClickStats]) -> tuple[dict, dict]:
    """r(n) from one analysis, or the inverse-variance-weighted average over several.

    Returns ``(r, r_err)``.  Photon numbers are kept if at least one input defines them.
    """
    if isinstance(stats, ConditionalClickStats):
        if 1 not in stats.r:
            raise ValueError("r(n) undefined without a one-photon term")
        return dict(stats.r), dict(stats.r_err)
    stats = list(stats)
    if not stats or not any(1 in s.r for s in stats):
        raise ValueError("r(n) undefined without a one-photon term")
    keys = sorted({n for s in stats for n in s.r})
    r, r_err = {}, {}
    for n in keys:
        if n == 1:
            r[1], r_err[1] = 1.0, 0.0
            continue
        vals = [(s.r[n], s.r_err[n]) for s in stats if n in s.r and s.r_err.get(n, 0) > 0]
        if not vals:
            continue
        v = np.array([a for a, _ in vals])
        w = 1.0 / np.array([e for _, e in vals]) ** 2
        r[n] = float(np.dot(w, v) / w.sum())
        r_err[n] = float(1.0 / np.sqrt(w.sum()))
    return r, r_err


def weighted_average(values: Sequence[float], errors: Sequence[float]) -> tuple[float, float]:
    w = 1.0 / np.asarray(errors, dtype=float) ** 2
    return float(np.dot(w, values) / w.sum()), float(1.0 / np.sqrt(w.sum()))
