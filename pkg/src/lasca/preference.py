"""Margin-gated directional preference pairs over consecutive windows.

A transition between temporally adjacent windows of the same (subject, video)
stream becomes a pair when the relative affect change clears the margin:

    |a_next - a_t| / max(|a_t|, eps) > tau

Every gated transition is emitted in both orders with complementary labels,
so any pair set is exactly class-balanced. The model input is the difference
of the two windows' representations, ordered second minus first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoding import FusedRepresentation
from .ingest import FeatureWindow

__all__ = ["PairConfig", "PreferencePair", "gate", "gate_ratio", "delta", "build_pairs"]

DEFAULT_EPSILON = 1e-6

AFFECT_DIMENSIONS = ("valence", "arousal")


@dataclass(frozen=True)
class PairConfig:
    """Gating margin and affect dimension for pair construction."""

    dimension: str
    tau: float = 0.10
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.dimension not in AFFECT_DIMENSIONS:
            raise ValueError(f"unknown affect dimension '{self.dimension}'")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True, eq=False)
class PreferencePair:
    """Ordered pair of window indices with a direction label.

    label is 1 when affect increases from first to second. delta_z is the
    representation difference z[second] - z[first]; it is None when pairs are
    built without representations (audit dumps).
    """

    first: int
    second: int
    dimension: str
    label: int
    delta_z: np.ndarray | None

    def __post_init__(self):
        if self.delta_z is not None:
            self.delta_z.setflags(write=False)


def gate(a_t: float, a_next: float, cfg: PairConfig) -> bool:
    """True iff the relative change strictly exceeds the margin."""
    if not (np.isfinite(a_t) and np.isfinite(a_next)):
        raise ValueError("affect values must be finite")
    return gate_ratio(a_t, a_next, cfg.epsilon) > cfg.tau


def gate_ratio(a_t: float, a_next: float, epsilon: float = DEFAULT_EPSILON) -> float:
    return abs(a_next - a_t) / max(abs(a_t), epsilon)


def _as_vector(z: FusedRepresentation | np.ndarray) -> np.ndarray:
    if isinstance(z, FusedRepresentation):
        return z.z
    return np.asarray(z, dtype=np.float64)


def delta(
    z_a: FusedRepresentation | np.ndarray, z_b: FusedRepresentation | np.ndarray
) -> np.ndarray:
    """Element-wise z_b - z_a (first -> second order)."""
    va, vb = _as_vector(z_a), _as_vector(z_b)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    return vb - va


def build_pairs(
    windows: Sequence[FeatureWindow],
    zs: Sequence[FusedRepresentation | np.ndarray] | None,
    cfg: PairConfig,
) -> list[PreferencePair]:
    """Emit both orders of every gated consecutive transition.

    Args:
        windows: time-ordered within each (subject, video) stream; pairing
            never crosses stream boundaries.
        zs: representation per window, aligned with windows. None skips the
            difference computation (pair indices and labels only).
        cfg: margin configuration.

    Equal consecutive affect values are never gated (zero numerator against a
    strict inequality), and the reversed order reuses the forward gating
    decision rather than being re-gated. Windows separated by a dropped
    window (a time gap) are not adjacent and form no pair.
    """
    if zs is not None and len(zs) != len(windows):
        raise ValueError("windows and representations must align")
    pairs: list[PreferencePair] = []
    for i in range(len(windows) - 1):
        w_t, w_next = windows[i], windows[i + 1]
        if w_t.stream != w_next.stream:
            continue
        if w_next.t_start < w_t.t_start:
            raise ValueError(f"windows out of time order in stream {w_t.stream}")
        if w_next.t_start != w_t.t_end:
            continue
        a_t = w_t.affect(cfg.dimension)
        a_next = w_next.affect(cfg.dimension)
        if not gate(a_t, a_next, cfg):
            continue
        label = 1 if a_next > a_t else 0
        dz = delta(zs[i], zs[i + 1]) if zs is not None else None
        pairs.append(
            PreferencePair(
                first=i, second=i + 1, dimension=cfg.dimension, label=label, delta_z=dz
            )
        )
        pairs.append(
            PreferencePair(
                first=i + 1,
                second=i,
                dimension=cfg.dimension,
                label=1 - label,
                delta_z=None if dz is None else -dz,
            )
        )
    return pairs
