"""Per-window feature salience via exhaustive between-group variance splitting.

Given a window's normalized feature values, the split point is the candidate
threshold t maximizing

    sigma_b^2(t) = w0(t) * w1(t) * (mu0(t) - mu1(t))^2

where w0/w1 are the proportions and mu0/mu1 the means of the groups with
values <= t and > t. Candidates are the midpoints between consecutive sorted
unique values; with at most a few dozen features the scan is exhaustive.

The argmax is evaluated in exact integer arithmetic (every float is a dyadic
rational), so ties are resolved deterministically by the documented rule
(smallest threshold wins) instead of by rounding noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SalienceMask", "otsu_threshold", "salience_mask"]

# Threshold reported for constant inputs, where no split exists and the mask
# is all zeros by definition.
DEGENERATE_THRESHOLD = 1.0


@dataclass(frozen=True)
class SalienceMask:
    """Binary activation mask over one window's feature vector."""

    bits: tuple[int, ...]
    threshold: float

    def active_indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)

    @property
    def active_count(self) -> int:
        return sum(self.bits)


def _exact_ints(values: np.ndarray) -> list[int]:
    """Rescale floats to exact integers via their dyadic representations."""
    ratios = [float(v).as_integer_ratio() for v in values]
    # Denominators of finite floats are powers of two, so the lcm is the max.
    den = max(q for _, q in ratios)
    return [p * (den // q) for p, q in ratios]


def otsu_threshold(values: np.ndarray | list[float]) -> float | None:
    """Exhaustive between-group variance maximizer over midpoint candidates.

    Args:
        values: at least two finite values.

    Returns:
        The maximizing midpoint threshold, or None when all values are equal
        (no split exists). Among tied maximizers the smallest threshold wins,
        which marks more features as salient.
    """
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size < 2:
        raise ValueError(f"need at least 2 values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if v[0] == v[-1]:
        return None

    ints = _exact_ints(v)
    n = len(ints)
    total = sum(ints)

    best_num = -1
    best_den = 1
    best_split = -1
    prefix = 0
    for i in range(n - 1):
        prefix += ints[i]
        if v[i] == v[i + 1]:
            continue
        n0 = i + 1
        n1 = n - n0
        # sigma_b^2 = (s0*n1 - s1*n0)^2 / (n^2 * n0 * n1); n^2 is constant.
        a = prefix * n1 - (total - prefix) * n0
        num = a * a
        den = n0 * n1
        if num * best_den > best_num * den:
            best_num, best_den, best_split = num, den, i
    return float((v[best_split] + v[best_split + 1]) / 2.0)


def salience_mask(values: np.ndarray | list[float]) -> SalienceMask:
    """Mark features strictly above the between-group variance split.

    Constant vectors (including single-element ones) have no split and yield
    an all-zero mask with the degenerate threshold, which downstream template
    composition turns into the empty-mask fallback text.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 1:
        raise ValueError("need at least 1 value")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if v.size < 2 or v.min() == v.max():
        return SalienceMask(bits=(0,) * v.size, threshold=DEGENERATE_THRESHOLD)
    t = otsu_threshold(v)
    assert t is not None
    return SalienceMask(bits=tuple(int(x > t) for x in v), threshold=t)
