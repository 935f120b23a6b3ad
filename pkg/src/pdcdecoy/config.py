"""System and attack configuration with the experiment's default parameters."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Optional

ETA_SI = 0.55  # herald Si-APD detection efficiency; already folded into ETA_T
ETA_DET = 0.24  # receiver InGaAs-APD efficiency
P_DC_B = 1.75e-4  # receiver dark-click probability per gate
P_DC_T = 1e-6  # herald dark-click probability per bin per gate (not published)
ETA_T = 0.1776  # herald-arm Klyshko efficiency at 20 nW
ETA_B = 0.1075  # receiver-arm Klyshko efficiency at 20 nW, channel fully open
ETA_OC = ETA_B / ETA_DET
REPETITION_RATE = 1e6  # Hz
ACQUISITION_TIME = 60.0  # s
DEFAULT_TRIGGERS = int(REPETITION_RATE * ACQUISITION_TIME)
FAST_TRIGGERS = 1_000_000
MEAN_AT_2UW = 0.84
TABLE1_POWERS_NW = (20, 50, 100, 200, 500, 1000, 2000)
FIG3_ETA_C = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass(frozen=True)
class AttackConfig:
    """Photon-number-splitting eavesdropper on the receiver channel.

    ``mimic_attenuation`` is the extra transmission Eve inserts after her
    replacement channel so that the receiver click rate looks honest.
    """

    enabled: bool = False
    steal_threshold: int = 2
    steal_count: int = 1
    eve_channel_eta: float = 1.0
    mimic_target_rate: Optional[float] = None
    mimic_attenuation: float = 1.0

    def __post_init__(self):
        if self.steal_threshold < 2:
            raise ValueError("steal_threshold must be >= 2")
        if not 1 <= self.steal_count < self.steal_threshold:
            raise ValueError("steal_count must be in [1, steal_threshold)")
        if not 0.0 < self.eve_channel_eta <= 1.0:
            raise ValueError("eve_channel_eta must lie in (0, 1]")
        if not 0.0 <= self.mimic_attenuation <= 1.0:
            raise ValueError("mimic_attenuation must lie in [0, 1]")
        if self.mimic_target_rate is not None and not 0.0 <= self.mimic_target_rate <= 1.0:
            raise ValueError("mimic_target_rate must lie in [0, 1]")


@dataclass(frozen=True)
class SystemConfig:
    mean_photons: float = MEAN_AT_2UW
    eta_T: float = ETA_T
    eta_C: float = 1.0
    eta_OC: float = ETA_OC
    eta_Det: float = ETA_DET
    bins: int = 8
    bin_weights: Optional[tuple] = None
    p_dc_B: float = P_DC_B
    p_dc_T: float = P_DC_T
    dead_gates_B: int = 0
    n_triggers: int = DEFAULT_TRIGGERS
    rng_seed: int = 0
    forced_m: Optional[int] = None  # debug: pin the pair number of every pulse
    attack: AttackConfig = field(default_factory=AttackConfig)

    def __post_init__(self):
        if not self.mean_photons >= 0:
            raise ValueError("mean_photons must be >= 0")
        for name in ("eta_T", "eta_C", "eta_OC", "eta_Det", "p_dc_B", "p_dc_T"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if self.bins < 1 or self.bins > 63:
            raise ValueError("bins must lie in [1, 63]")
        if self.bin_weights is not None:
            if len(self.bin_weights) != self.bins or min(self.bin_weights) <= 0:
                raise ValueError("bin_weights must hold one positive weight per bin")
            if abs(sum(self.bin_weights) - 1.0) > 1e-12:
                raise ValueError("bin_weights must sum to 1")
        if self.dead_gates_B < 0:
            raise ValueError("dead_gates_B must be >= 0")
        if self.n_triggers < 1:
            raise ValueError("n_triggers must be >= 1")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")
        if self.forced_m is not None and self.forced_m < 0:
            raise ValueError("forced_m must be >= 0")

    @property
    def eta_B(self) -> float:
        return self.eta_C * self.eta_OC * self.eta_Det

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["bin_weights"] is not None:
            d["bin_weights"] = list(d["bin_weights"])
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SystemConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SystemConfig fields: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("attack"), dict):
            d["attack"] = AttackConfig(**d["attack"])
        if d.get("bin_weights") is not None:
            d["bin_weights"] = tuple(d["bin_weights"])
        return cls(**d)


def paper_config(**changes) -> SystemConfig:
    return SystemConfig(**changes)
