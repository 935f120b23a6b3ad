"""Photon-number distributions, TMD convolution matrices and closed-form click theory."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

TAIL_BOUND = 1e-9
DEFAULT_M_MAX = 40
MAX_CONDITION = 1e12


class ImpossibleConditionError(ValueError):
    """Raised when the conditioning event of a click probability has zero weight."""


class IllConditionedMatrixError(ValueError):
    pass


@dataclass(frozen=True)
class PhotonNumberDistribution:
    """Truncated probability vector over photon number m = 0..len(probs)-1."""

    probs: np.ndarray
    mean: float

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty 1-d vector")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        total = p.sum()
        if total > 1 + 1e-12 or total < 1 - TAIL_BOUND:
            raise ValueError(f"probability mass {total!r} outside [1 - {TAIL_BOUND}, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def m_max(self) -> int:
        return self.probs.size - 1

    def truncated_mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def thin(self, eta: float) -> np.ndarray:
        """Distribution of surviving photons after independent loss with transmission ``eta``."""
        return thinning_matrix(self.m_max, eta) @ self.probs


def thinning_matrix(m_max: int, eta: float) -> np.ndarray:
    """T[k, m] = P(k survivors | m photons) under binomial loss."""
    m = np.arange(m_max + 1)
    return _binom_pmf(m[:, None], m[None, :], eta)


def _binom_pmf(k, m, eta: float) -> np.ndarray:
    # explicit product form; scipy's pmf overflows for subnormal eta
    k, m = np.broadcast_arrays(k, m)
    valid = k <= m
    kk, mm = np.where(valid, k, 0), np.where(valid, m, 0)
    with np.errstate(under="ignore"):
        out = special.comb(mm, kk) * np.power(eta, kk) * np.power(1.0 - eta, mm - kk)
    return np.where(valid, out, 0.0)


def poisson_distribution(mean: float, m_max: int = DEFAULT_M_MAX) -> PhotonNumberDistribution:
    if mean < 0 or not math.isfinite(mean):
        raise ValueError(f"mean must be finite and >= 0, got {mean!r}")
    if m_max < 0:
        raise ValueError("m_max must be >= 0")
    tail = float(stats.poisson.sf(m_max, mean)) if mean > 0 else 0.0
    if tail >= TAIL_BOUND:
        raise ValueError(
            f"m_max={m_max} leaves tail mass {tail:.3g} >= {TAIL_BOUND} for mean {mean}"
        )
    if mean == 0:
        probs = np.zeros(m_max + 1)
        probs[0] = 1.0
    else:
        probs = stats.poisson.pmf(np.arange(m_max + 1), mean)
    return PhotonNumberDistribution(probs, float(mean))


@dataclass(frozen=True)
class PumpCalibration:
    power_ref: float = 2e-6
    mean_ref: float = 0.84


def mean_from_pump_power(power: float, calibration: PumpCalibration = PumpCalibration()) -> float:
    """Low-gain PDC: mean pair number scales linearly with pump power."""
    if power < 0:
        raise ValueError(f"pump power must be >= 0, got {power!r}")
    if calibration.power_ref <= 0:
        raise ValueError("calibration power_ref must be > 0")
    return calibration.mean_ref * power / calibration.power_ref


def _check_prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class ArmEfficiencies:
    eta_T: float
    eta_C: float = 1.0
    eta_OC: float = 1.0
    eta_Det: float = 1.0

    def __post_init__(self):
        for name in ("eta_T", "eta_C", "eta_OC", "eta_Det"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v!r}")

    @property
    def eta_B(self) -> float:
        return self.eta_C * self.eta_OC * self.eta_Det


def click_probability(m: int, eta_B: float) -> float:
    if m < 0:
        raise ValueError("photon number must be >= 0")
    _check_prob("eta_B", eta_B)
    return 1.0 - (1.0 - eta_B) ** m


def _herald_weights(dist: PhotonNumberDistribution, n: int, eta_T: float) -> np.ndarray:
    m = np.arange(dist.probs.size)
    w = np.zeros(dist.probs.size)
    if n <= dist.m_max:
        w[n:] = dist.probs[n:] * _binom_pmf(n, m[n:], eta_T)
    return w


def conditional_click_probability(
    dist: PhotonNumberDistribution,
    n: int,
    eta_T: float,
    eta_B: float,
    p_dc: float = 0.0,
) -> float:
    """Receiver click probability given ``n`` photons registered in the herald arm.

    Both sums run over the same truncated support of ``dist``.  ``p_dc`` is an
    optional receiver dark-click probability per gate, independent of photons.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    _check_prob("eta_T", eta_T)
    _check_prob("eta_B", eta_B)
    _check_prob("p_dc", p_dc)
    w = _herald_weights(dist, n, eta_T)
    denom = w.sum()
    if not denom > 1e-300:
        raise ImpossibleConditionError(f"herald event n={n} has zero probability")
    m = np.arange(dist.probs.size)
    click = 1.0 - (1.0 - eta_B) ** m * (1.0 - p_dc)
    return float(np.dot(w, click) / denom)


def ratio_r(
    dist: PhotonNumberDistribution,
    n: int,
    eta_T: float,
    eta_B: float,
    p_dc: float = 0.0,
) -> float:
    if n < 1:
        raise ValueError("ratio defined for n >= 1")
    p1 = conditional_click_probability(dist, 1, eta_T, eta_B, p_dc)
    if p1 <= 0:
        raise ImpossibleConditionError("p(click|1) is zero")
    if n == 1:
        return 1.0
    return conditional_click_probability(dist, n, eta_T, eta_B, p_dc) / p1


# --- convolution matrices -------------------------------------------------


@lru_cache(maxsize=None)
def stirling2(n: int, k: int) -> int:
    """Stirling partition number S(n, k)."""
    if n == k:
        return 1
    if k == 0 or k > n:
        return 0
    return k * stirling2(n - 1, k) + stirling2(n - 1, k - 1)


def uniform_occupancy_exact(bins: int, n_max: int) -> list[list[Fraction]]:
    """Exact P(k occupied bins | n photons) for equally likely bins, as [k][n]."""
    out = [[Fraction(0)] * (n_max + 1) for _ in range(bins + 1)]
    for n in range(n_max + 1):
        denom = bins**n
        for k in range(min(n, bins) + 1):
            num = math.comb(bins, k) * math.factorial(k) * stirling2(n, k)
            out[k][n] = Fraction(num, denom)
    return out


def weighted_occupancy(weights: Sequence[float], n_max: int) -> np.ndarray:
    """P(k occupied bins | n photons) for arbitrary bin weights via DP over occupied-bin subsets."""
    w = np.asarray(weights, dtype=float)
    bins = w.size
    if bins > 16:
        raise ValueError("weighted occupancy supports at most 16 bins")
    n_states = 1 << bins
    masks = np.arange(n_states)
    popcount = np.array([bin(s).count("1") for s in range(n_states)])
    state = np.zeros(n_states)
    state[0] = 1.0
    out = np.zeros((bins + 1, n_max + 1))
    out[0, 0] = 1.0
    for n in range(1, n_max + 1):
        nxt = np.zeros(n_states)
        for b in range(bins):
            np.add.at(nxt, masks | (1 << b), state * w[b])
        state = nxt
        out[:, n] = np.bincount(popcount, weights=state, minlength=bins + 1)
    return out


@dataclass(frozen=True)
class ConvolutionMatrix:
    """C[k, n] = P(k clicks | n photons) for a B-bin time-multiplexed detector.

    ``inverse`` is the inverse of the square block over n = 0..B.  For uniform
    bins the block is inverted in exact rational arithmetic.
    """

    bins: int
    entries: np.ndarray
    inverse: np.ndarray
    weights: np.ndarray
    condition: float
    exact: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def n_max(self) -> int:
        return self.entries.shape[1] - 1

    @property
    def block(self) -> np.ndarray:
        return self.entries[:, : self.bins + 1]

    def convolve(self, photon_vector: np.ndarray) -> np.ndarray:
        x = np.asarray(photon_vector, dtype=float)
        if x.size > self.n_max + 1:
            raise ValueError(f"photon vector longer than matrix n_max={self.n_max}")
        return self.entries[:, : x.size] @ x


def _exact_upper_inverse(block: list[list[Fraction]]) -> list[list[Fraction]]:
    size = len(block)
    inv = [[Fraction(0)] * size for _ in range(size)]
    for col in range(size):
        for row in range(size - 1, -1, -1):
            acc = Fraction(1 if row == col else 0)
            for j in range(row + 1, size):
                acc -= block[row][j] * inv[j][col]
            inv[row][col] = acc / block[row][row]
    return inv


def build_convolution_matrix(
    bins: int = 8, n_max: int = DEFAULT_M_MAX, weights: Optional[Sequence[float]] = None
) -> ConvolutionMatrix:
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if n_max < bins:
        raise ValueError("n_max must be >= bins")
    uniform = weights is None
    if not uniform:
        w = np.asarray(weights, dtype=float)
        if w.size != bins or np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be positive, one per bin, summing to 1")
        uniform = bool(np.all(w == w[0]))
    if uniform:
        exact = uniform_occupancy_exact(bins, n_max)
        entries = np.array([[float(v) for v in row] for row in exact])
        block = [row[: bins + 1] for row in exact]
        inv_exact = _exact_upper_inverse(block)
        inverse = np.array([[float(v) for v in row] for row in inv_exact])
        w = np.full(bins, 1.0 / bins)
        exact_pair = (tuple(tuple(r) for r in exact), tuple(tuple(r) for r in inv_exact))
    else:
        entries = weighted_occupancy(w, n_max)
        from scipy.linalg import solve_triangular

        inverse = solve_triangular(entries[:, : bins + 1], np.eye(bins + 1))
        exact_pair = None
    cond = float(np.linalg.cond(entries[:, : bins + 1]))
    for arr in (entries, inverse, w):
        arr.setflags(write=False)
    return ConvolutionMatrix(bins, entries, inverse, w, cond, exact_pair)


def deconvolve(counts_by_click: Sequence[float], matrix: ConvolutionMatrix) -> np.ndarray:
    """Map a click-number vector (k = 0..B) back to photon-number space.

    Negative entries caused by statistical noise are returned unchanged.
    """
    c = np.asarray(counts_by_click, dtype=float)
    if c.shape != (matrix.bins + 1,):
        raise ValueError(f"expected {matrix.bins + 1} click bins, got shape {c.shape}")
    if not matrix.condition <= MAX_CONDITION:
        raise IllConditionedMatrixError(f"condition number {matrix.condition:.3g} too large")
    return matrix.inverse @ c
