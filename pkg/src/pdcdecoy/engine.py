"""Per-trigger Monte Carlo of the heralded pair source, TMD herald arm and binary receiver.

Random streams: trigger ``i`` of sweep point ``p`` belongs to block
``i // block_size``; component ``c`` of that block draws from
``PCG64(SeedSequence(rng_seed, spawn_key=(p, block, c)))``.  Block results
are summed, so counts do not depend on how blocks are spread over workers.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import adversary
from .config import SystemConfig
from .photonstats import build_convolution_matrix, poisson_distribution, thinning_matrix

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 1 << 20


@dataclass(frozen=True)
class PulseRecord:
    herald_bins: tuple
    bob_click: bool

    @property
    def clicks(self) -> int:
        return sum(self.herald_bins)

    @property
    def bitmask(self) -> int:
        return sum(1 << i for i, b in enumerate(self.herald_bins) if b)


@dataclass(frozen=True)
class CountsTable:
    """Aggregated click statistics indexed by herald click number n = 0..B.

    Entries are integers for simulated runs and floats for exact expectations.
    """

    n_trig: float
    joint_click: np.ndarray
    joint_noclick: np.ndarray

    def __post_init__(self):
        jc = np.asarray(self.joint_click)
        jn = np.asarray(self.joint_noclick)
        if jc.shape != jn.shape or jc.ndim != 1:
            raise ValueError("joint vectors must be 1-d with equal length")
        if np.any(jc < 0) or np.any(jn < 0):
            raise ValueError("counts must be non-negative")
        total = jc.sum() + jn.sum()
        if not np.isclose(total, self.n_trig, rtol=1e-12, atol=0):
            raise ValueError(f"cells sum to {total}, expected n_trig={self.n_trig}")
        jc.setflags(write=False)
        jn.setflags(write=False)
        object.__setattr__(self, "joint_click", jc)
        object.__setattr__(self, "joint_noclick", jn)

    @property
    def bins(self) -> int:
        return self.joint_click.size - 1

    @property
    def n_T(self) -> np.ndarray:
        return self.joint_click + self.joint_noclick

    @property
    def n_B(self):
        return self.joint_click.sum()

    @property
    def n_coinc(self):
        return self.joint_click[1:].sum()

    @property
    def n_herald(self):
        """Triggers with at least one herald click."""
        return self.n_T[1:].sum()

    def __add__(self, other: "CountsTable") -> "CountsTable":
        if other.bins != self.bins:
            raise ValueError("cannot merge tables with different bin counts")
        return CountsTable(
            self.n_trig + other.n_trig,
            self.joint_click + other.joint_click,
            self.joint_noclick + other.joint_noclick,
        )

    def scaled(self, factor: float) -> "CountsTable":
        return CountsTable(self.n_trig * factor, self.joint_click * factor, self.joint_noclick * factor)

    @classmethod
    def empty(cls, bins: int) -> "CountsTable":
        z = np.zeros(bins + 1, dtype=np.int64)
        return cls(0, z, z.copy())

    def to_dict(self) -> dict:
        def conv(v):
            return [int(x) if float(x).is_integer() and abs(x) < 2**53 else float(x) for x in v]

        return {
            "n_trig": self.n_trig if isinstance(self.n_trig, int) else float(self.n_trig),
            "joint_click": conv(self.joint_click),
            "joint_noclick": conv(self.joint_noclick),
            "n_T": conv(self.n_T),
            "n_B": conv([self.n_B])[0],
            "n_coinc": conv([self.n_coinc])[0],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CountsTable":
        jc = np.asarray(d["joint_click"])
        jn = np.asarray(d["joint_noclick"])
        if "n_T" in d and not np.array_equal(np.asarray(d["n_T"]), jc + jn):
            raise ValueError("n_T inconsistent with joint click/no-click vectors")
        n_trig = d.get("n_trig", jc.sum() + jn.sum())
        return cls(n_trig, jc, jn)


# --- single pulse reference path ------------------------------------------


def _bin_cdf(config: SystemConfig) -> np.ndarray:
    if config.bin_weights is None:
        return np.arange(1, config.bins + 1) / config.bins
    return np.cumsum(config.bin_weights)


def simulate_pulse(config: SystemConfig, rng: np.random.Generator) -> PulseRecord:
    """One trigger, photon by photon.  Dead time is not modelled here."""
    m = config.forced_m if config.forced_m is not None else int(rng.poisson(config.mean_photons))
    cdf = _bin_cdf(config)
    herald = [False] * config.bins
    for _ in range(m):
        if rng.random() < config.eta_T:
            b = min(int(np.searchsorted(cdf, rng.random(), side="right")), config.bins - 1)
            herald[b] = True
    for b in range(config.bins):
        if rng.random() < config.p_dc_T:
            herald[b] = True
    if config.attack.enabled:
        arriving = adversary.apply_attack(m, config.attack, rng)
        eta_rx = config.eta_OC * config.eta_Det
    else:
        arriving = m
        eta_rx = config.eta_B
    bob = bool(rng.binomial(arriving, eta_rx) > 0) if arriving else False
    if rng.random() < config.p_dc_B:
        bob = True
    return PulseRecord(tuple(herald), bob)


# --- vectorised block engine ----------------------------------------------


@lru_cache(maxsize=64)
def _poisson_cdf(mean: float) -> np.ndarray:
    m_max = int(mean + 20 * np.sqrt(mean) + 40)
    cdf = stats.poisson.cdf(np.arange(m_max + 1), mean)
    cdf[-1] = 1.0  # remaining tail is below double resolution
    return cdf


def _bernoulli_positions(rng: np.random.Generator, p: float, size: int) -> np.ndarray:
    """Indices of successes among ``size`` Bernoulli(p) trials, via geometric gaps."""
    if p <= 0 or size == 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1:
        return np.arange(size, dtype=np.int64)
    out = []
    pos = -1
    while True:
        chunk = int(size * p + 10 * np.sqrt(size * p) + 16)
        # gaps saturate at INT64_MAX for tiny p; clip so the sum cannot wrap
        gaps = np.minimum(rng.geometric(p, size=chunk), size + 1)
        steps = np.cumsum(gaps) + pos
        out.append(steps[steps < size])
        if steps[-1] >= size:
            break
        pos = int(steps[-1])
    return np.concatenate(out)


def _apply_dead_gates(bob: np.ndarray, dead: int) -> np.ndarray:
    """Blank the ``dead`` gates following each registered receiver click."""
    idx = np.flatnonzero(bob)
    keep = np.zeros(idx.size, dtype=bool)
    last = -dead - 1
    for j, i in enumerate(idx.tolist()):
        if i - last > dead:
            keep[j] = True
            last = i
    out = np.zeros_like(bob)
    out[idx[keep]] = True
    return out


_M_STREAM, _BOB_STREAM, _DARK_STREAM, _PHOTON_STREAM = 0, 1, 2, 3

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def counter_uniforms(key: np.uint64, counters: np.ndarray) -> np.ndarray:
    """SplitMix64 evaluated at arbitrary counters: uniforms in [0, 1) by random access."""
    z = key + _GOLDEN * (counters.astype(np.uint64) + np.uint64(1))
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


class BlockStreams:
    """Independent random sources for one block, one per physical component.

    Pair numbers and receiver decisions take one uniform per trigger from
    their own PCG64 streams; herald photon ``j`` of trigger ``i`` takes the
    counter-based uniform at counter ``j * size + i``.  Configs sharing a
    seed therefore see the same randomness trigger by trigger and photon by
    photon (common random numbers).
    """

    def __init__(self, seed: int, point: int, block: int):
        self._key = (point, block)
        self._seed = seed

    def _seq(self, component: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self._seed, spawn_key=self._key + (component,))

    def __call__(self, component: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._seq(component)))

    def photon_key(self) -> np.uint64:
        return self._seq(_PHOTON_STREAM).generate_state(1, np.uint64)[0]


def simulate_block(config: SystemConfig, streams: BlockStreams, size: int):
    """Simulate ``size`` consecutive triggers.

    Returns ``(masks, bob)``: herald bin bitmasks (uint64) and receiver clicks.
    """
    if config.forced_m is not None:
        m = np.full(size, config.forced_m, dtype=np.int64)
    else:
        u_m = streams(_M_STREAM).random(size)
        m = np.searchsorted(_poisson_cdf(config.mean_photons), u_m, side="right")

    m_max = int(m.max()) if size else 0
    m_fwd = adversary.forwarded_photons(np.arange(m_max + 1), config.attack)
    no_click = (1.0 - adversary.receiver_eta(config)) ** m_fwd * (1.0 - config.p_dc_B)
    bob = streams(_BOB_STREAM).random(size) >= no_click[m]

    # each herald photon: one uniform decides survival and, if it survives, its bin
    masks = np.zeros(size, dtype=np.uint64)
    cdf = _bin_cdf(config) * config.eta_T
    key = streams.photon_key()
    active = np.flatnonzero(m)
    j = 0
    while active.size:
        u = counter_uniforms(key, active + j * size)
        hit = u < config.eta_T
        if hit.any():
            b = np.minimum(np.searchsorted(cdf, u[hit], side="right"), config.bins - 1)
            masks[active[hit]] |= np.left_shift(np.uint64(1), b.astype(np.uint64))
        j += 1
        active = active[m[active] > j]

    dark_rng = streams(_DARK_STREAM)
    for b in range(config.bins):
        pos = _bernoulli_positions(dark_rng, config.p_dc_T, size)
        if pos.size:
            masks[pos] |= np.uint64(1) << np.uint64(b)

    if config.dead_gates_B > 0:
        bob = _apply_dead_gates(bob, config.dead_gates_B)
    return masks, bob


def _block_counts(config: SystemConfig, point: int, block: int, size: int) -> np.ndarray:
    masks, bob = simulate_block(config, BlockStreams(config.rng_seed, point, block), size)
    clicks = np.bitwise_count(masks).astype(np.int64)
    return np.bincount(clicks * 2 + bob, minlength=2 * (config.bins + 1))


def _block_plan(n_triggers: int, block_size: int) -> list[tuple[int, int]]:
    n_full, rest = divmod(n_triggers, block_size)
    plan = [(i, block_size) for i in range(n_full)]
    if rest:
        plan.append((n_full, rest))
    return plan


def _run_blocks(config: SystemConfig, point: int, blocks: Sequence[tuple[int, int]]) -> np.ndarray:
    acc = np.zeros(2 * (config.bins + 1), dtype=np.int64)
    for block, size in blocks:
        acc += _block_counts(config, point, block, size)
    return acc


def _cells_to_table(config: SystemConfig, cells: np.ndarray) -> CountsTable:
    cells = cells.reshape(config.bins + 1, 2)
    return CountsTable(int(cells.sum()), cells[:, 1].copy(), cells[:, 0].copy())


def _write_records(config: SystemConfig, point: int, block_size: int, path: Path) -> np.ndarray:
    acc = np.zeros(2 * (config.bins + 1), dtype=np.int64)
    with open(path, "w") as fh:
        for block, size in _block_plan(config.n_triggers, block_size):
            masks, bob = simulate_block(config, BlockStreams(config.rng_seed, point, block), size)
            np.savetxt(fh, np.column_stack([masks, bob.astype(np.uint64)]), fmt="%d")
            clicks = np.bitwise_count(masks).astype(np.int64)
            acc += np.bincount(clicks * 2 + bob, minlength=acc.size)
    return acc


def run(
    config: SystemConfig,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    record_path: Optional[Path] = None,
    _point: int = 0,
) -> CountsTable:
    """Simulate ``config.n_triggers`` triggers and aggregate them.

    ``record_path`` writes one line per trigger: herald bitmask and receiver flag.
    """
    if record_path is not None:
        return _cells_to_table(config, _write_records(config, _point, block_size, Path(record_path)))
    plan = _block_plan(config.n_triggers, block_size)
    if workers <= 1 or len(plan) == 1:
        cells = _run_blocks(config, _point, plan)
    else:
        parts = [plan[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_run_blocks, config, _point, p) for p in parts if p]
            cells = sum(f.result() for f in futures)
    return _cells_to_table(config, cells)


def _checkpoint_key(cfg: SystemConfig, point: int) -> str:
    return json.dumps({"point": point, "config": cfg.to_dict()}, sort_keys=True)


def sweep(
    configs: Sequence[SystemConfig],
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    master_seed: Optional[int] = None,
    stream_points: Optional[Sequence[int]] = None,
    checkpoint: Optional[Path] = None,
) -> list[CountsTable]:
    """Run config ``i`` on the streams keyed by (seed, i, block, component).

    If ``master_seed`` is given it replaces every config's ``rng_seed``.
    ``stream_points`` overrides the stream key of each point; points that
    share a key share their random numbers, which couples them and exposes
    trends smaller than the per-point noise.  With ``checkpoint`` every
    finished point is appended to that JSON-lines file and points already
    present there are loaded instead of re-simulated.
    """
    if not configs:
        raise ValueError("sweep needs at least one config")
    if stream_points is None:
        stream_points = range(len(configs))
    elif len(stream_points) != len(configs):
        raise ValueError("stream_points must give one key per config")
    done = {}
    if checkpoint is not None and Path(checkpoint).exists():
        for line in Path(checkpoint).read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                done[rec["key"]] = CountsTable.from_dict(rec["counts"])
    out = []
    for cfg, point in zip(configs, stream_points):
        if master_seed is not None:
            cfg = cfg.with_(rng_seed=master_seed)
        key = _checkpoint_key(cfg, point)
        if key in done:
            logger.info("sweep point %d restored from checkpoint", point)
            out.append(done[key])
            continue
        logger.debug("sweep point %d: %s", point, cfg)
        table = run(cfg, workers=workers, block_size=block_size, _point=point)
        if checkpoint is not None:
            with open(checkpoint, "a") as fh:
                fh.write(json.dumps({"key": key, "counts": table.to_dict()}) + "\n")
        out.append(table)
    return out


# --- exact expectations -----------------------------------------------------


def herald_click_matrix(config: SystemConfig, m_max: int) -> np.ndarray:
    """P(k herald clicks | m pairs) including loss, bin collisions and dark clicks."""
    n_max = max(m_max, config.bins)
    C = build_convolution_matrix(config.bins, n_max, config.bin_weights).entries[:, : m_max + 1]
    photon_clicks = C @ thinning_matrix(m_max, config.eta_T)
    B = config.bins
    dark = np.zeros((B + 1, B + 1))
    for j in range(B + 1):
        dark[j:, j] = stats.binom.pmf(np.arange(B + 1 - j), B - j, config.p_dc_T)
    return dark @ photon_clicks


def expected_counts(config: SystemConfig, n_trig: Optional[float] = None) -> CountsTable:
    """Exact expected CountsTable of ``run(config)`` (no dead time)."""
    if config.dead_gates_B:
        raise ValueError("exact expectations are not available with dead gates")
    if config.forced_m is not None:
        probs = np.zeros(config.forced_m + 1)
        probs[-1] = 1.0
    else:
        probs = poisson_distribution(config.mean_photons).probs
    m_max = probs.size - 1
    H = herald_click_matrix(config, m_max)
    m_fwd = adversary.forwarded_photons(np.arange(m_max + 1), config.attack)
    no_click = (1.0 - adversary.receiver_eta(config)) ** m_fwd * (1.0 - config.p_dc_B)
    n = float(config.n_triggers if n_trig is None else n_trig)
    noclick = n * (H @ (probs * no_click))
    click = n * (H @ (probs * (1.0 - no_click)))
    total = click.sum() + noclick.sum()
    return CountsTable(total, click, noclick)
