"""Single-measure SL: step-level API, seeded trajectory runs and rate curves,
plus the closed-form Gaussian backend for the identity control."""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidInput, NotPSD, NumericalBlowup
from .linalg import default_clip_tol, symmetrize
from .measures import DiscreteMeasure, GaussianMeasure, MomentSummary, mean_cov
from .simulate import Alpha, BrownianNoise, Identity, SimConfig, SimResult, simulate, tilt

__all__ = [
    "SLState",
    "Trajectory",
    "RateCurve",
    "GaussianAnalyticState",
    "sl_init",
    "sl_step",
    "control_of",
    "run_localization",
    "localization_rate_curve",
    "gaussian_posterior",
    "gaussian_init",
    "gaussian_observation_step",
    "write_trajectory_csv",
    "brownian_increments",
    "Alpha",
    "Identity",
    "SimConfig",
]


@dataclass(frozen=True, eq=False)
class SLState:
    """The evolving measure ``mu_t`` with its cached moments."""

    t: float
    measure: DiscreteMeasure
    moments: MomentSummary


def sl_init(mu: DiscreteMeasure) -> SLState:
    return SLState(0.0, mu, mean_cov(mu))


def sl_step(s: SLState, c, dw, dt: float) -> SLState:
    """Advance ``s`` by one Euler-Maruyama step with control ``c`` and increment ``dw``.

    Support points are kept; only the log-weights change.

    Raises
    ------
    NumericalBlowup
        If a log-weight becomes non-finite.
    """
    m = s.measure
    c = np.asarray(c, dtype=float)
    dw = np.asarray(dw, dtype=float).reshape(-1)
    if c.shape != (m.dim, m.dim) or dw.shape != (m.dim,):
        raise InvalidInput("control must be d x d and the increment length d")
    if not np.all(np.isfinite(dw)):
        raise InvalidInput("Brownian increment must be finite")
    if not dt > 0:
        raise InvalidInput("dt must be positive")
    t_new = s.t + dt
    if m.n == 1:
        return SLState(t_new, m, s.moments)
    xc = (m.points - s.moments.mean)[None]
    with np.errstate(all="ignore"):
        lw = tilt(m.log_weights[None], xc, c[None], dw[None], dt)[0]
    if not np.all(np.isfinite(lw[np.argmax(lw)])) or np.any(np.isnan(lw)):
        raise NumericalBlowup(f"non-finite log-weights at t={t_new:.4g}", t=t_new,
                              control_norm=float(np.linalg.norm(c, 2)))
    new = DiscreteMeasure(m.points, lw, m.source_index)
    return SLState(t_new, new, mean_cov(new))


def control_of(s: SLState, policy) -> np.ndarray:
    """Control matrix of a single-measure policy at state ``s``."""
    if not isinstance(policy, Alpha):
        raise InvalidInput("single-measure runs take an Alpha (or Identity) policy")
    return policy.controls([s.moments.cov])[0]


@dataclass(frozen=True)
class Trajectory:
    """Outcome of one seeded localization run."""

    a_final: np.ndarray
    argmax_point: np.ndarray
    localized: bool
    t_stop: float
    times: np.ndarray
    trace_path: np.ndarray
    means: Optional[np.ndarray] = None


def run_localization(mu: DiscreteMeasure, policy, cfg: SimConfig, index: int = 0,
                     record_means: bool = False) -> Trajectory:
    """Run trajectory ``index`` of the master seed ``cfg.seed``.

    Stops at ``cfg.T`` or as soon as ``tr Sigma_t < loc_tol``.
    """
    r = simulate([mu], policy, cfg, 1, indices=[index], record_means=record_means)
    means = r.means[0, 0] if record_means else None
    return Trajectory(r.a_final[0, 0], mu.points[r.argmax[0, 0]], bool(r.localized[0, 0]),
                      float(r.t_stop[0]), r.times, r.traces[0, 0], means)


@dataclass(frozen=True)
class RateCurve:
    """Monte Carlo estimate of ``E tr Sigma_t`` on the simulation grid."""

    times: np.ndarray
    mean_trace: np.ndarray
    std_err: np.ndarray
    policy: object = None
    M: int = 0


def _curve(times, traces, policy):
    m = traces.shape[0]
    mean = np.maximum(traces.mean(axis=0), 0.0)
    se = traces.std(axis=0, ddof=1) / np.sqrt(m)
    return RateCurve(times, mean, se, policy, m)


def localization_rate_curve(mu: DiscreteMeasure, policies: Sequence, cfg: SimConfig, M: int,
                            workers: int = 1) -> List[RateCurve]:
    """Average ``tr Sigma_t`` over ``M`` trajectories for every policy.

    Trajectory ``i`` uses the same Brownian path under every policy (common
    random numbers).
    """
    if M < 2:
        raise InvalidInput("M must be >= 2")
    out = []
    for pol in policies:
        r = simulate([mu], pol, cfg, M, workers=workers)
        out.append(_curve(r.times, r.traces[0], pol))
    return out


def write_trajectory_csv(result: SimResult, path, measure_index: int = 0):
    """Dump recorded paths as rows ``trajectory_id, t, tr_sigma, a_1..a_d``."""
    if result.means is None:
        raise InvalidInput("trajectory dump needs a run with record_means=True")
    d = result.means.shape[-1]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory_id", "t", "tr_sigma"] + [f"a_{i + 1}" for i in range(d)])
        for row, idx in enumerate(result.indices):
            for j, t in enumerate(result.times):
                a = result.means[measure_index, row, j]
                w.writerow([int(idx), repr(float(t)), repr(float(result.traces[measure_index, row, j]))]
                           + [repr(float(v)) for v in a])


# -- Gaussian backend (identity control, G_t = t I) --------------------------

def _prior_spectrum(prior: GaussianMeasure):
    lam, v = np.linalg.eigh(prior.cov)
    if lam.min() <= default_clip_tol(lam):
        raise NotPSD("the Gaussian backend needs a nonsingular prior covariance")
    return lam, v


def _posterior_from_spectrum(lam, v, mean, theta, t):
    """Posterior moments for one observation or a stack ``theta`` of shape (M, d)."""
    shrink = 1.0 / (1.0 + t * lam)
    cov = symmetrize((v * (lam * shrink)) @ v.T)
    a = (v * shrink) @ (v.T @ mean) + theta @ cov
    return a, cov


def gaussian_posterior(prior: GaussianMeasure, theta, t: float) -> MomentSummary:
    """Posterior of a Gaussian prior after observing ``theta_t = t X + W_t``.

    ``Sigma_t = (Sigma_0^-1 + t I)^-1`` and ``a_t = Sigma_t (Sigma_0^-1 m + theta)``,
    evaluated in the prior's eigenbasis so that no explicit inverse is formed.
    """
    if t < 0:
        raise InvalidInput("t must be nonnegative")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape != prior.mean.shape:
        raise InvalidInput("theta must have the prior's dimension")
    lam, v = _prior_spectrum(prior)
    a, cov = _posterior_from_spectrum(lam, v, prior.mean, theta, t)
    return MomentSummary(a, cov, float(np.trace(cov)))


@dataclass(frozen=True, eq=False)
class GaussianAnalyticState:
    """Observation-process state of the Gaussian backend.

    ``theta`` may hold a single observation ``(d,)`` or a batch ``(M, d)``;
    ``mean`` caches the posterior mean ``a_t`` for it.
    """

    t: float
    prior: GaussianMeasure
    theta: np.ndarray
    running_int_a: np.ndarray
    mean: np.ndarray


def gaussian_init(prior: GaussianMeasure, n_paths: Optional[int] = None) -> GaussianAnalyticState:
    shape = (prior.dim,) if n_paths is None else (int(n_paths), prior.dim)
    _prior_spectrum(prior)
    a = np.broadcast_to(prior.mean, shape).copy()
    return GaussianAnalyticState(0.0, prior, np.zeros(shape), np.zeros(shape), a)


def gaussian_observation_step(s: GaussianAnalyticState, dw, dt: float) -> GaussianAnalyticState:
    """Euler step ``d theta = a_t dt + dW``; ``int a ds`` advances by the trapezoid rule."""
    if not dt > 0:
        raise InvalidInput("dt must be positive")
    dw = np.asarray(dw, dtype=float)
    if dw.shape != s.theta.shape:
        raise InvalidInput(f"increment shape {dw.shape} does not match state {s.theta.shape}")
    lam, v = _prior_spectrum(s.prior)
    theta = s.theta + s.mean * dt + dw
    t = s.t + dt
    a, _ = _posterior_from_spectrum(lam, v, s.prior.mean, theta, t)
    integral = s.running_int_a + 0.5 * dt * (s.mean + a)
    return GaussianAnalyticState(t, s.prior, theta, integral, a)


def brownian_increments(seed, indices, dim, dt, n_steps, transform=None):
    """Materialize the increments used by the engine, shape ``(n_steps, M, d)``."""
    noise = BrownianNoise(seed, indices, dim, dt, transform)
    return np.stack([noise() for _ in range(n_steps)])

