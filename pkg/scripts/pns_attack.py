"""Mimic-calibrated PNS attack at eta_C=0.25 plus honest repetitions for the false-alarm rate."""
import argparse
import math

from pdcdecoy.config import SystemConfig
from pdcdecoy.experiments import attack_study

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--triggers", type=int, default=60_000_000)
    ap.add_argument("--honest", type=int, default=100)
    ap.add_argument("--eta-c", type=float, default=0.25)
    ap.add_argument("--workers", type=int, default=1)
    a = ap.parse_args()
    s = attack_study(SystemConfig(n_triggers=a.triggers), eta_C=a.eta_c, n_honest=a.honest, workers=a.workers)
    v = s.verdict
    print(f"mimic attenuation {s.attack.mimic_attenuation:.4f}, receiver rate z {s.rate_z:+.2f}")
    print(f"statistic {v.statistic:.2f} vs threshold {v.threshold:.3f}: {v.verdict}")
    for n, z in sorted(v.per_n_shift.items()):
        print(f"  r({n}) shift {z:+.2f} sigma")
    if s.honest_verdicts:
        stats = [h.statistic for h in s.honest_verdicts]
        print(f"honest runs: {s.false_alarms}/{len(stats)} false alarms, max statistic {max(stats):.2f}, "
              f"mean {sum(stats) / len(stats):+.2f}, sd {math.sqrt(sum(x * x for x in stats) / len(stats)):.2f}")
