"""Detection metrics: EER, normalized minimum DCF, DET operating points.

A trial is accepted when ``score >= threshold``. Operating points are taken
at every distinct score value plus +inf (reject everything).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CostParams:
    c_miss: float
    c_fa: float
    p_target: float

    def __post_init__(self):
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("costs must be positive")
        if not 0.0 < self.p_target < 1.0:
            raise ValueError("p_target must be in (0, 1)")


DET08 = CostParams(c_miss=10.0, c_fa=1.0, p_target=0.01)
DET10 = CostParams(c_miss=1.0, c_fa=1.0, p_target=0.001)


def _split(tgt, non):
    tgt = np.sort(np.asarray(tgt, dtype=np.float64).ravel())
    non = np.sort(np.asarray(non, dtype=np.float64).ravel())
    if tgt.size == 0 or non.size == 0:
        raise ValueError("need at least one target and one nontarget score")
    if not (np.all(np.isfinite(tgt)) and np.all(np.isfinite(non))):
        raise ValueError("scores must be finite")
    return tgt, non


def error_rates(tgt, non):
    """(thresholds, p_miss, p_fa) at every distinct score and at +inf."""
    tgt, non = _split(tgt, non)
    thr = np.append(np.unique(np.concatenate([tgt, non])), np.inf)
    p_miss = np.searchsorted(tgt, thr, side="left") / tgt.size
    p_fa = (non.size - np.searchsorted(non, thr, side="left")) / non.size
    return thr, p_miss, p_fa


def det_points(tgt, non) -> list[tuple[float, float]]:
    """(P_fa, P_miss) pairs as the threshold rises; P_fa is non-increasing."""
    _, p_miss, p_fa = error_rates(tgt, non)
    return list(zip(p_fa.tolist(), p_miss.tolist()))


def eer_from_rates(p_miss, p_fa) -> float:
    """Crossing point of a rising P_miss and falling P_fa curve, linearly
    interpolated between the two bracketing operating points."""
    p_miss = np.asarray(p_miss, dtype=np.float64)
    p_fa = np.asarray(p_fa, dtype=np.float64)
    k = int(np.argmax(p_miss >= p_fa))
    # k == 0 only for curves not starting at the accept-all point
    if p_miss[k] == p_fa[k] or k == 0:
        return float(0.5 * (p_miss[k] + p_fa[k]))
    m0, f0, m1, f1 = p_miss[k - 1], p_fa[k - 1], p_miss[k], p_fa[k]
    s = (f0 - m0) / ((m1 - m0) - (f1 - f0))
    return float(m0 + s * (m1 - m0))


def eer(tgt, non) -> float:
    """Equal error rate as a fraction in [0, 1]."""
    _, p_miss, p_fa = error_rates(tgt, non)
    return eer_from_rates(p_miss, p_fa)


def min_dcf(tgt, non, cost: CostParams = DET08) -> float:
    """Minimum detection cost normalized by the better trivial system."""
    _, p_miss, p_fa = error_rates(tgt, non)
    c_miss = cost.c_miss * cost.p_target
    c_fa = cost.c_fa * (1.0 - cost.p_target)
    dcf = c_miss * p_miss + c_fa * p_fa
    return float(np.min(dcf) / min(c_miss, c_fa))


@dataclass
class Summary:
    eer: float
    min_dcf08: float
    min_dcf10: float
    n_tgt: int
    n_non: int

    def line(self) -> str:
        return f"EER% {100 * self.eer:.4f}  minDCF08 {self.min_dcf08:.4f}  minDCF10 {self.min_dcf10:.4f}"


def summarize(tgt, non) -> Summary:
    return Summary(eer(tgt, non), min_dcf(tgt, non, DET08), min_dcf(tgt, non, DET10), len(tgt), len(non))
