"""Shared machinery for parametric intensity models.

Evaluation is organised around flat arrays so that the optimizers never
loop over events in Python:

* ``EvalPoints`` - times at which intensities are needed, each carrying
  the number of history events available to it;
* ``PairTable``  - every (evaluation point, earlier event) pair, with the
  lag ``tau`` and a combined bincount key (point index x K + source type);
* ``StateBundle`` - per-point intensities, their first two time
  derivatives, and parameter gradients of all three.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..core import (
    DomainError,
    EventSequence,
    PackedData,
    ParamVector,
)

_CHUNK = 1 << 22  # pair-array chunk size for bounded temporaries


@dataclass(frozen=True)
class EvalPoints:
    """Evaluation times with their per-point history size."""

    times: np.ndarray      # (m,)
    seq_index: np.ndarray  # (m,) int
    n_hist: np.ndarray     # (m,) int, events of the sequence strictly before

    @property
    def num_points(self) -> int:
        return int(self.times.size)


def event_points(packed: PackedData) -> EvalPoints:
    """Evaluation points at the dataset's own events."""
    return EvalPoints(times=packed.times, seq_index=packed.seq_index,
                      n_hist=packed.local_index)


@dataclass(frozen=True)
class PairTable:
    """Flat (evaluation point, history event) pairs."""

    tau: np.ndarray   # (P,) eval time minus history event time
    key: np.ndarray   # (P,) intp, eval_index * num_types + source type
    num_points: int
    num_types: int

    @property
    def num_pairs(self) -> int:
        return int(self.tau.size)


def build_pairs(packed: PackedData, points: EvalPoints) -> PairTable:
    counts = np.asarray(points.n_hist, dtype=np.int64)
    total = int(counts.sum())
    m = points.num_points
    if total == 0:
        return PairTable(tau=np.empty(0), key=np.empty(0, dtype=np.intp),
                         num_points=m, num_types=packed.num_types)
    eval_idx = np.repeat(np.arange(m, dtype=np.int64), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    within = np.arange(total, dtype=np.int64) - np.repeat(offsets[:-1], counts)
    hist_idx = packed.seq_starts[np.asarray(points.seq_index)[eval_idx]] + within
    tau = np.asarray(points.times)[eval_idx] - packed.times[hist_idx]
    key = (eval_idx * packed.num_types + packed.marks[hist_idx]).astype(np.intp)
    return PairTable(tau=tau, key=key, num_points=m,
                     num_types=packed.num_types)


def pair_moments(pairs: PairTable,
                 funcs: Callable[[np.ndarray], Sequence[np.ndarray]],
                 ) -> list[np.ndarray]:
    """Sum per-pair weights into (num_points, K) arrays by source type.

    ``funcs`` maps a chunk of lags to one weight array per requested
    moment; chunking keeps temporaries bounded for large pair tables.
    """
    m, k = pairs.num_points, pairs.num_types
    size = m * k
    n = pairs.num_pairs
    sums: list[np.ndarray] | None = None
    for start in range(0, max(n, 1), _CHUNK):
        stop = min(start + _CHUNK, n)
        if stop <= start:
            break
        weights = funcs(pairs.tau[start:stop])
        key = pairs.key[start:stop]
        if sums is None:
            sums = [np.zeros(size) for _ in weights]
        for acc, w in zip(sums, weights):
            acc += np.bincount(key, weights=w, minlength=size)
    if sums is None:
        sums = [np.zeros(size) for _ in funcs(np.empty(0))]
    return [s.reshape(m, k) for s in sums]


def seq_type_sums(packed: PackedData, weights: np.ndarray) -> np.ndarray:
    """Sum per-event weights into an (M, K) array by (sequence, type)."""
    key = packed.seq_index * packed.num_types + packed.marks
    size = packed.num_sequences * packed.num_types
    return np.bincount(key, weights=weights, minlength=size).reshape(
        packed.num_sequences, packed.num_types)


@dataclass
class StateBundle:
    """Intensities and derivatives at a set of evaluation points.

    Gradients are with respect to the model's parameter vector;
    ``glam_obs`` is the gradient of the observed type's intensity and is
    present only when marks were supplied.
    """

    lam_k: np.ndarray            # (m, K)
    lam: np.ndarray              # (m,) total intensity
    dlam: np.ndarray | None      # (m,) d lambda / dt
    d2lam: np.ndarray | None     # (m,)
    glam: np.ndarray | None = None       # (m, r)
    gdlam: np.ndarray | None = None      # (m, r)
    gd2lam: np.ndarray | None = None     # (m, r)
    glam_obs: np.ndarray | None = None   # (m, r)


def log_derivatives(bundle: StateBundle) -> tuple[np.ndarray, np.ndarray]:
    """First and second time derivatives of log total intensity."""
    dlog = bundle.dlam / bundle.lam
    d2log = bundle.d2lam / bundle.lam - dlog * dlog
    return dlog, d2log


def log_derivative_grads(bundle: StateBundle
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Parameter gradients of dlog lambda/dt and d2log lambda/dt2."""
    lam = bundle.lam[:, None]
    dlog = (bundle.dlam / bundle.lam)[:, None]
    gdlog = bundle.gdlam / lam - dlog * bundle.glam / lam
    gd2log = (bundle.gd2lam / lam
              - (bundle.d2lam / bundle.lam)[:, None] * bundle.glam / lam
              - 2.0 * dlog * gdlog)
    return gdlog, gd2log


def _normalize_history(history) -> tuple[np.ndarray, np.ndarray]:
    """Accept None, an array of times, (times, marks) or an EventSequence.

    Returns float times and 0-based integer marks.
    """
    if history is None:
        return np.empty(0), np.empty(0, dtype=np.int64)
    if isinstance(history, EventSequence):
        times = np.asarray(history.times, dtype=float)
        if history.marks is not None:
            return times, np.asarray(history.marks, dtype=np.int64) - 1
        return times, np.zeros(times.size, dtype=np.int64)
    if isinstance(history, tuple) and len(history) == 2:
        times = np.asarray(history[0], dtype=float)
        marks = np.asarray(history[1], dtype=np.int64) - 1
        return times, marks
    times = np.asarray(history, dtype=float)
    return times, np.zeros(times.size, dtype=np.int64)


class IntensityModel(abc.ABC):
    """Behavioral contract of a parametric conditional-intensity family.

    Subclasses are immutable value objects holding structural choices
    (number of types, fixed hyperparameters); estimated parameters travel
    separately as a :class:`ParamVector`.
    """

    num_types: int = 1

    # -- parameter plumbing ------------------------------------------------

    @property
    @abc.abstractmethod
    def param_names(self) -> tuple[str, ...]: ...

    @property
    @abc.abstractmethod
    def param_positive(self) -> tuple[bool, ...]: ...

    @property
    def num_params(self) -> int:
        return len(self.param_names)

    def make_params(self, values) -> ParamVector:
        return ParamVector(self.param_names, np.asarray(values, dtype=float),
                           self.param_positive)

    @abc.abstractmethod
    def default_init(self) -> ParamVector:
        """Fixed starting point for fits (positive entries 0.5, free 0)."""

    @abc.abstractmethod
    def params_from_dict(self, spec: dict) -> ParamVector:
        """Build a parameter vector from a config-style nested dict."""

    # -- vectorized evaluation ----------------------------------------------

    @abc.abstractmethod
    def state(self, theta: ParamVector, points: EvalPoints, pairs: PairTable,
              *, need_grads: bool = False, need_dt: bool = True,
              obs_marks: np.ndarray | None = None) -> StateBundle: ...

    @abc.abstractmethod
    def compensator_dataset(self, theta: ParamVector, packed: PackedData,
                            *, need_grads: bool = False
                            ) -> tuple[np.ndarray, np.ndarray | None]:
        """Integral of the total intensity over [0, T_s] per sequence."""

    @abc.abstractmethod
    def compensator_interval(self, theta: ParamVector, a: float, b: float,
                             hist_times: np.ndarray, hist_marks: np.ndarray,
                             *, need_grads: bool = False
                             ) -> tuple[float, np.ndarray | None]: ...

    # -- simulation hooks ----------------------------------------------------

    @abc.abstractmethod
    def intensity_vector(self, theta: ParamVector, t: float,
                         hist_times: np.ndarray, hist_marks: np.ndarray
                         ) -> np.ndarray:
        """Per-type intensity at t given strictly earlier events."""

    def thinning_horizon(self, theta: ParamVector) -> float | None:
        """Lookahead over which :meth:`thinning_bound` stays valid.

        None means the total intensity is non-increasing between events,
        so the bound holds until the next accepted event.
        """
        return None

    @abc.abstractmethod
    def thinning_bound(self, theta: ParamVector, t: float,
                       hist_times: np.ndarray, hist_marks: np.ndarray,
                       horizon: float) -> float:
        """Upper bound of the total intensity on (t, t + horizon]."""

    def branching_matrix(self, theta: ParamVector) -> np.ndarray | None:
        """Kernel mass matrix (integral of g_ij); None for Poisson models."""
        return None

    # -- scalar operations built on the vector path ---------------------------

    def _point_bundle(self, theta: ParamVector, t: float, history,
                      *, need_grads: bool = False) -> StateBundle:
        times, marks = _normalize_history(history)
        if times.size and t <= times[-1]:
            raise DomainError(
                f"evaluation time {t} must exceed the last history event")
        points = EvalPoints(times=np.array([float(t)]),
                            seq_index=np.zeros(1, dtype=np.int64),
                            n_hist=np.array([times.size], dtype=np.int64))
        pairs = PairTable(tau=t - times,
                          key=marks.astype(np.intp),
                          num_points=1, num_types=self.num_types)
        return self.state(theta, points, pairs, need_grads=need_grads)

    def intensity(self, theta: ParamVector, t: float, history=None,
                  k: int | None = None) -> float:
        """Intensity at t: type k's (1-based) or the total when k is None."""
        bundle = self._point_bundle(theta, t, history)
        if k is None:
            return float(bundle.lam[0])
        if not 1 <= k <= self.num_types:
            raise DomainError(f"type {k} outside 1..{self.num_types}")
        return float(bundle.lam_k[0, k - 1])

    def dlog_intensity_dt(self, theta: ParamVector, t: float,
                          history=None) -> float:
        bundle = self._point_bundle(theta, t, history)
        return float(bundle.dlam[0] / bundle.lam[0])

    def d2log_intensity_dt2(self, theta: ParamVector, t: float,
                            history=None) -> float:
        bundle = self._point_bundle(theta, t, history)
        dlog = bundle.dlam[0] / bundle.lam[0]
        return float(bundle.d2lam[0] / bundle.lam[0] - dlog * dlog)

    def conditional_score(self, theta: ParamVector, t: float, history=None,
                          *, poisson: bool = False) -> float:
        """d/dt log of the conditional density of the next event time.

        With ``poisson=True`` the compensator term (independent of the
        event position in the joint Poisson density) is omitted, leaving
        only d/dt log lambda.
        """
        bundle = self._point_bundle(theta, t, history)
        score = float(bundle.dlam[0] / bundle.lam[0])
        if not poisson:
            score -= float(bundle.lam[0])
        return score

    def dscore_dt(self, theta: ParamVector, t: float, history=None,
                  *, poisson: bool = False) -> float:
        bundle = self._point_bundle(theta, t, history)
        dlog = bundle.dlam[0] / bundle.lam[0]
        d2log = bundle.d2lam[0] / bundle.lam[0] - dlog * dlog
        if poisson:
            return float(d2log)
        return float(d2log - bundle.dlam[0])

    def compensator(self, theta: ParamVector, a: float, b: float,
                    history=None) -> float:
        """Integral of the total intensity over [a, b] given history < a."""
        times, marks = _normalize_history(history)
        if a > b:
            raise DomainError(f"need a <= b, got [{a}, {b}]")
        if times.size and times[-1] >= a:
            raise DomainError("history events must lie strictly before a")
        value, _ = self.compensator_interval(theta, a, b, times, marks)
        return value

    def param_grads(self, theta: ParamVector, t: float, history=None,
                    k: int | None = None, a: float | None = None,
                    b: float | None = None) -> dict[str, np.ndarray]:
        """Parameter gradients of the per-event quantities.

        Keys: ``log_intensity`` (type k or total), ``dlog_dt``,
        ``d2log_dt2``, ``intensity``, ``dintensity_dt``, and
        ``compensator`` when an interval [a, b] is supplied.
        """
        bundle = self._point_bundle(theta, t, history, need_grads=True)
        gdlog, gd2log = log_derivative_grads(bundle)
        if k is None:
            lam, glam = bundle.lam[0], bundle.glam[0]
        else:
            times, marks = _normalize_history(history)
            obs = self._point_bundle(theta, t, history, need_grads=True)
            lam = obs.lam_k[0, k - 1]
            single = self.state(
                theta,
                EvalPoints(times=np.array([float(t)]),
                           seq_index=np.zeros(1, dtype=np.int64),
                           n_hist=np.array([times.size], dtype=np.int64)),
                PairTable(tau=t - times, key=marks.astype(np.intp),
                          num_points=1, num_types=self.num_types),
                need_grads=True, obs_marks=np.array([k - 1]))
            glam = single.glam_obs[0]
        out = {
            "log_intensity": glam / lam,
            "dlog_dt": gdlog[0],
            "d2log_dt2": gd2log[0],
            "intensity": bundle.glam[0],
            "dintensity_dt": bundle.gdlam[0],
        }
        if a is not None and b is not None:
            times, marks = _normalize_history(history)
            _, gcomp = self.compensator_interval(theta, a, b, times, marks,
                                                 need_grads=True)
            out["compensator"] = gcomp
        return out
