"""Joint SL: several measures driven by one shared Brownian motion."""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .engine import SLState, sl_init, sl_step
from .errors import InvalidInput, NotPSD, NumericalBlowup
from .measures import DiscreteMeasure
from .simulate import Alpha, Extrapolation, JointAlpha, SimConfig, SimResult, simulate

__all__ = [
    "JointAlpha",
    "Extrapolation",
    "JointSLState",
    "CouplingSample",
    "CouplingBatch",
    "DistanceEstimate",
    "joint_init",
    "joint_step",
    "sample_joint",
    "sample_coupling",
    "transport_cost_estimate",
    "write_coupling_csv",
]


@dataclass(frozen=True, eq=False)
class JointSLState:
    t: float
    states: Tuple[SLState, ...]

    def __post_init__(self):
        if len(self.states) < 2:
            raise InvalidInput("a joint state needs at least two measures")
        dims = {s.measure.dim for s in self.states}
        if len(dims) != 1:
            raise InvalidInput("all measures must share one dimension")
        if any(s.t != self.t for s in self.states):
            raise InvalidInput("all marginal states must share the time")


def joint_init(measures: Sequence[DiscreteMeasure]) -> JointSLState:
    return JointSLState(0.0, tuple(sl_init(m) for m in measures))


def _check_policy(policy, k):
    if isinstance(policy, Extrapolation):
        if k != 2:
            raise InvalidInput("the extrapolation policy couples exactly two measures")
    elif not isinstance(policy, Alpha):
        raise InvalidInput(f"unknown joint policy {policy!r}")


def joint_step(j: JointSLState, policy, dw, dt: float) -> JointSLState:
    """Step every marginal with its own control and the same increment ``dw``."""
    _check_policy(policy, len(j.states))
    try:
        controls = policy.controls([s.moments.cov for s in j.states])
    except NotPSD as exc:
        raise NumericalBlowup(f"control evaluation failed at t={j.t:.4g}: {exc}", t=j.t) from exc
    new = []
    for i, (s, c) in enumerate(zip(j.states, controls)):
        try:
            new.append(sl_step(s, c, dw, dt))
        except NumericalBlowup as exc:
            raise NumericalBlowup(str(exc), t=exc.t, control_norm=exc.control_norm,
                                  measure_index=i) from exc
    return JointSLState(new[0].t, tuple(new))


@dataclass(frozen=True)
class CouplingSample:
    """One draw of the coupling: terminal means and heaviest support points."""

    a: np.ndarray
    b: np.ndarray
    a_point: np.ndarray
    b_point: np.ndarray
    localized: Tuple[bool, bool]


class CouplingBatch(Sequence):
    """Array-backed sequence of :class:`CouplingSample`.

    Attributes
    ----------
    a, b : ndarray, shape (M, d)
        Terminal means.
    a_point, b_point : ndarray, shape (M, d)
        Heaviest support points at stop time.
    localized : ndarray, shape (M, 2)
    indices : ndarray, shape (M,)
        Global trajectory indices.
    """

    def __init__(self, a, b, a_point, b_point, localized, indices=None):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.a_point = np.asarray(a_point, dtype=float)
        self.b_point = np.asarray(b_point, dtype=float)
        self.localized = np.asarray(localized, dtype=bool).reshape(-1, 2)
        self.indices = np.arange(len(self.a)) if indices is None else np.asarray(indices)

    @classmethod
    def from_result(cls, r: SimResult, measures, pair=(0, 1)):
        i, j = pair
        pts = r.argmax_points(measures)
        loc = np.stack([r.localized[i], r.localized[j]], axis=1)
        return cls(r.a_final[i], r.a_final[j], pts[i], pts[j], loc, r.indices)

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        return cls(*(np.array([getattr(s, f) for s in samples])
                     for f in ("a", "b", "a_point", "b_point", "localized")))

    def __len__(self):
        return len(self.a)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return CouplingBatch(self.a[i], self.b[i], self.a_point[i], self.b_point[i],
                                 self.localized[i], self.indices[i])
        return CouplingSample(self.a[i], self.b[i], self.a_point[i], self.b_point[i],
                              tuple(bool(x) for x in self.localized[i]))


def sample_joint(measures: Sequence[DiscreteMeasure], policy, cfg: SimConfig, M: int,
                 master_seed: Optional[int] = None, **kw) -> SimResult:
    """Run ``M`` joint trajectories of ``k >= 2`` measures; see :func:`simulate`."""
    measures = list(measures)
    if len(measures) < 2:
        raise InvalidInput("joint runs need at least two measures")
    if M < 1:
        raise InvalidInput("M must be >= 1")
    _check_policy(policy, len(measures))
    return simulate(measures, policy, cfg, M, master_seed, **kw)


def sample_coupling(mu: DiscreteMeasure, nu: DiscreteMeasure, policy, cfg: SimConfig, M: int,
                    master_seed: Optional[int] = None, workers: int = 1) -> CouplingBatch:
    """Draw ``M`` samples of the joint SL coupling of ``mu`` and ``nu``."""
    r = sample_joint([mu, nu], policy, cfg, M, master_seed, workers=workers)
    return CouplingBatch.from_result(r, [mu, nu])


@dataclass(frozen=True)
class DistanceEstimate:
    """Monte Carlo estimate of a mean squared transport cost.

    ``ci95`` is the normal-approximation interval ``mean_sq +- 1.96 std_err``.
    """

    mean_sq: float
    std_err: float
    ci95: Tuple[float, float]
    M: int
    node_means: Optional[np.ndarray] = None
    node_std_err: Optional[np.ndarray] = None

    @property
    def distance(self):
        return float(np.sqrt(max(self.mean_sq, 0.0)))

    @classmethod
    def from_values(cls, values, **kw):
        v = np.asarray(values, dtype=float).reshape(-1)
        if v.size < 2:
            raise InvalidInput("need at least two samples for a standard error")
        mean = float(v.mean())
        se = float(v.std(ddof=1) / np.sqrt(v.size))
        return cls(mean, se, (mean - 1.96 * se, mean + 1.96 * se), int(v.size), **kw)

    def to_dict(self):
        out = {"mean_sq": self.mean_sq, "distance": self.distance, "std_err": self.std_err,
               "ci95": list(self.ci95), "M": self.M}
        if self.node_means is not None:
            out["node_means"] = np.asarray(self.node_means).tolist()
            out["node_std_err"] = np.asarray(self.node_std_err).tolist()
        return out


def transport_cost_estimate(samples, use: str = "mean") -> DistanceEstimate:
    """Mean of ``||a - b||^2`` over coupling samples.

    ``use="mean"`` takes the terminal means, ``use="argmax"`` the heaviest
    support points.
    """
    if not isinstance(samples, CouplingBatch):
        samples = CouplingBatch.from_samples(samples)
    if len(samples) < 2:
        raise InvalidInput("need at least two samples")
    if use == "mean":
        a, b = samples.a, samples.b
    elif use == "argmax":
        a, b = samples.a_point, samples.b_point
    else:
        raise InvalidInput(f"use must be 'mean' or 'argmax', got {use!r}")
    return DistanceEstimate.from_values(np.sum((a - b) ** 2, axis=1))


def write_coupling_csv(samples: CouplingBatch, path):
    """Rows ``trajectory_id, a_1..a_d, b_1..b_d, a_localized, b_localized``."""
    d = samples.a.shape[1]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory_id"] + [f"a_{i + 1}" for i in range(d)]
                   + [f"b_{i + 1}" for i in range(d)] + ["a_localized", "b_localized"])
        for idx, a, b, loc in zip(samples.indices, samples.a, samples.b, samples.localized):
            w.writerow([int(idx)] + [repr(float(x)) for x in a] + [repr(float(x)) for x in b]
                       + [int(loc[0]), int(loc[1])])
