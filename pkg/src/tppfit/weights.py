"""Per-event weight functions h_n and their weak time derivatives.

Every kind vanishes at both endpoints of the event's support, which is
what removes the boundary terms from the implicit weighted objectives:

* ``tent_h0``     distance from t_n to the boundary of [t_{n-1}, T]
* ``product_h1``  (t_n - t_{n-1}) (T - t_n)
* ``sqrt_h2``     sqrt of product_h1
* ``fixed_length`` min(t_n - t_{n-1}, t_{n+1} - t_n), for sequences
  truncated to a common length when T is unknown
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    DomainError,
    EventSequence,
    IndexOutOfRangeError,
    PackedData,
    UnsupportedContextError,
)

WEIGHT_KINDS = ("tent_h0", "product_h1", "sqrt_h2", "fixed_length")
WINDOW_MODES = ("fixed_T", "batch_max_T", "truncate")

# Denominator floor for the sqrt_h2 derivative, which is unbounded at the
# support endpoints.
SQRT_DERIV_CLAMP = 1e-12


@dataclass(frozen=True)
class WeightValues:
    """Per-event weights, weak derivatives, and a clamp flag per event."""

    h: np.ndarray
    dh: np.ndarray
    clamped: np.ndarray


@dataclass(frozen=True)
class WeightFunction:
    kind: str
    window_mode: str = "fixed_T"

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ConfigError(f"unknown weight kind {self.kind!r}")
        if self.window_mode not in WINDOW_MODES:
            raise ConfigError(f"unknown window mode {self.window_mode!r}")
        if self.kind == "fixed_length" and self.window_mode == "batch_max_T":
            raise ConfigError("fixed_length weights do not use a window")
        if self.kind != "fixed_length" and self.window_mode == "truncate":
            raise ConfigError("truncate mode only applies to fixed_length")

    # -- vectorized evaluation over a packed dataset ----------------------

    def per_event(self, packed: PackedData) -> WeightValues:
        if self.kind == "fixed_length":
            return _fixed_length_values(packed, self.window_mode)
        t = packed.times
        prev = packed.prev_times
        t_end = self._window_ends(packed)
        return _windowed_values(self.kind, t, prev, t_end)

    def _window_ends(self, packed: PackedData) -> np.ndarray:
        if self.window_mode == "batch_max_T":
            # T is unknown: use the largest event time in the batch with no
            # margin. Biased for events near that endpoint.
            t_max = packed.times.max() if packed.num_events else 0.0
            return np.full(packed.num_events, t_max)
        return packed.t_ends[packed.seq_index]

    # -- scalar evaluation of a single event ------------------------------

    def weight_and_derivative(self, seq: EventSequence, n: int) -> tuple[float, float]:
        """Weight and weak derivative for the n-th event (1-based)."""
        if not 1 <= n <= len(seq):
            raise IndexOutOfRangeError(f"event index {n} outside 1..{len(seq)}")
        t = float(seq.times[n - 1])
        prev = float(seq.times[n - 2]) if n > 1 else 0.0
        if self.kind == "fixed_length":
            if n == len(seq):
                raise UnsupportedContextError(
                    "fixed_length weight needs the next event time; "
                    "the final event has none unless truncation is applied")
            nxt = float(seq.times[n])
            left, right = t - prev, nxt - t
            return (min(left, right), 1.0 if left < right else -1.0)
        vals = _windowed_values(self.kind, np.array([t]), np.array([prev]),
                                np.array([seq.t_end]))
        return float(vals.h[0]), float(vals.dh[0])


def _windowed_values(kind: str, t, prev, t_end) -> WeightValues:
    gap_left = t - prev
    gap_right = t_end - t
    clamped = np.zeros(t.shape, dtype=bool)
    if kind == "tent_h0":
        mid = 0.5 * (t_end + prev)
        h = 0.5 * (t_end - prev) - np.abs(t - mid)
        # weak derivative: +1 left of the support midpoint, -1 at and right
        # of it (right-limit convention at the kink)
        dh = np.where(t < mid, 1.0, -1.0)
    elif kind == "product_h1":
        h = gap_left * gap_right
        dh = gap_right - gap_left
    elif kind == "sqrt_h2":
        prod = gap_left * gap_right
        h = np.sqrt(np.maximum(prod, 0.0))
        denom = 2.0 * h
        clamped = denom < SQRT_DERIV_CLAMP
        dh = (gap_right - gap_left) / np.maximum(denom, SQRT_DERIV_CLAMP)
    else:  # pragma: no cover - guarded by the constructor
        raise ConfigError(kind)
    h = np.maximum(h, 0.0)
    return WeightValues(h=h, dh=dh, clamped=clamped)


def _fixed_length_values(packed: PackedData, window_mode: str) -> WeightValues:
    t = packed.times
    prev = packed.prev_times
    nxt = packed.next_times
    left = t - prev
    right = nxt - t
    if window_mode == "truncate":
        lengths = np.diff(packed.seq_starts)
        if lengths.size == 0 or lengths.min() < 2:
            raise UnsupportedContextError(
                "truncation needs every sequence to have at least 2 events")
        # Keep the first (min length - 1) events so the first dropped event
        # supplies the successor time of the last kept one; events beyond
        # the cut get zero weight.
        keep = int(lengths.min()) - 1
        active = packed.local_index < keep
    else:
        if np.any(np.isnan(nxt)):
            raise UnsupportedContextError(
                "fixed_length weight needs a successor for every event; "
                "use window_mode='truncate'")
        active = np.ones(t.shape, dtype=bool)
    h = np.where(active, np.minimum(left, right), 0.0)
    dh = np.where(active, np.where(left < right, 1.0, -1.0), 0.0)
    return WeightValues(h=h, dh=dh, clamped=np.zeros(t.shape, dtype=bool))


def poisson_distance_weight(seq: EventSequence) -> tuple[float, np.ndarray]:
    """Distance from the time vector to the boundary of the order polytope
    {0 <= t_1 <= ... <= t_N <= T}, with its weak gradient.

    The distance is shared across coordinates; the gradient is the inward
    normal of the active facet.
    """
    n = len(seq)
    if n == 0:
        raise DomainError("distance weight needs at least one event")
    t = seq.times
    slacks = np.empty(n + 1)
    slacks[0] = t[0]
    if n > 1:
        slacks[1:n] = np.diff(t) / np.sqrt(2.0)
    slacks[n] = seq.t_end - t[-1]
    active = int(np.argmin(slacks))
    grad = np.zeros(n)
    if active == 0:
        grad[0] = 1.0
    elif active == n:
        grad[-1] = -1.0
    else:
        grad[active - 1] = -1.0 / np.sqrt(2.0)
        grad[active] = 1.0 / np.sqrt(2.0)
    return float(slacks[active]), grad
