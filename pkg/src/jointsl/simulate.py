"""Vectorized Euler-Maruyama core shared by the single and joint SL engines.

A batch holds ``M`` independent trajectories of ``k`` measures driven by one
Brownian path per trajectory. Trajectory ``i`` always draws its increments
from the generator seeded by ``SeedSequence(seed, spawn_key=(i,))`` and every
array operation acts row by row, so results do not depend on how the
trajectories are split into batches or across worker processes.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInput, NotPSD, NumericalBlowup
from .linalg import extrapolation_control, regularized_control, symmetrize
from .measures import DiscreteMeasure

__all__ = [
    "SimConfig",
    "Alpha",
    "Identity",
    "JointAlpha",
    "Extrapolation",
    "BrownianNoise",
    "SimResult",
    "simulate",
    "default_loc_tol",
    "BLOWUP_LIMIT",
]

# per-step cap on E_mu_t ||C^T (x - a_t)||^2 dt
BLOWUP_LIMIT = 50.0


@dataclass(frozen=True)
class SimConfig:
    """Time stepping and stopping parameters.

    ``loc_tol=None`` means ``1e-8 * max(1, tr Sigma_0)`` for each measure.
    """

    dt: float = 0.05
    T: float = 10.0
    loc_tol: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise InvalidInput("dt and T must be positive")
        if self.dt > self.T * (1 + 1e-12):
            raise InvalidInput("dt must not exceed T")
        if self.loc_tol is not None and not self.loc_tol > 0:
            raise InvalidInput("loc_tol must be positive")
        if int(self.seed) < 0:
            raise InvalidInput("seed must be nonnegative")

    @property
    def n_steps(self):
        return int(np.ceil(self.T / self.dt - 1e-9))

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class Alpha:
    """Regularized Eldan alpha-scheme, ``C = (Sigma + delta**(1/alpha) I)**(-alpha)``.

    Used jointly, every measure gets its own control from its own covariance.
    """

    alpha: float
    delta: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInput(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.delta > 0:
            raise InvalidInput("delta must be positive")

    @property
    def name(self):
        return f"joint-eldan-{self.alpha:g}"

    def controls(self, covs):
        return [regularized_control(c, self.alpha, self.delta) for c in covs]


def Identity():
    """The ``C_t = I`` policy (Eldan's 0-scheme)."""
    return Alpha(0.0, 1.0)


JointAlpha = Alpha


@dataclass(frozen=True)
class Extrapolation:
    """Two-measure extrapolation coupling of Gaussian optimal transport."""

    delta: float = 1e-3
    pseudoinverse: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidInput("delta must be positive")

    @property
    def name(self):
        return "extrapolation"

    def controls(self, covs):
        if len(covs) != 2:
            raise InvalidInput("the extrapolation policy couples exactly two measures")
        c, d = extrapolation_control(covs[0], covs[1], self.delta, self.pseudoinverse)
        return [c, d]


class BrownianNoise:
    """Brownian increments ``N(0, dt I)`` for a set of trajectory indices.

    Parameters
    ----------
    seed : int
        Master seed.
    indices : sequence of int
        Global trajectory indices; index ``i`` always yields the same path.
    dim : int
    dt : float
    transform : array_like, optional
        Matrix ``U`` applied to every increment (``dW -> U dW``).
    block : int
        Number of steps drawn at once per trajectory. Does not affect values.
    """

    def __init__(self, seed, indices, dim, dt, transform=None, block=256):
        self.indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        self._gens = [np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(i),)))
                      for i in self.indices]
        self.dim = int(dim)
        self._scale = np.sqrt(dt)
        self._transform = None if transform is None else np.asarray(transform, dtype=float)
        self._block = int(block)
        self._buf = None
        self._pos = 0

    def __call__(self):
        if self._buf is None or self._pos == self._buf.shape[1]:
            self._buf = np.stack([g.standard_normal((self._block, self.dim)) for g in self._gens])
            self._buf *= self._scale
            if self._transform is not None:
                self._buf = self._buf @ self._transform.T
            self._pos = 0
        out = self._buf[:, self._pos]
        self._pos += 1
        return out


def default_loc_tol(trace0):
    return 1e-8 * max(1.0, float(trace0))


def batch_moments(points, lw):
    """Means ``(M, d)``, covariances ``(M, d, d)`` and centered points ``(M, N, d)``."""
    w = np.exp(lw)
    # stacked matmul works matrix by matrix, so row results ignore the batch size
    a = (w[:, None, :] @ points)[:, 0]
    xc = points[None, :, :] - a[:, None, :]
    cov = symmetrize(np.swapaxes(xc * w[..., None], 1, 2) @ xc)
    return a, cov, xc


def tilt(lw, xc, c, dw, dt):
    """One Euler-Maruyama step of the log-density SDE, then renormalize.

    ``log w(x) += <x - a, C dW> - 0.5 ||C^T (x - a)||^2 dt`` row by row.
    """
    v = (c @ dw[:, :, None])
    lin = (xc @ v)[..., 0]
    y = xc @ c
    quad = np.einsum("mnj,mnj->mn", y, y)
    new = lw + lin - (0.5 * dt) * quad
    new -= logsumexp(new, axis=1, keepdims=True)
    return new


@dataclass
class SimResult:
    """Outcome of a batch of (joint) SL trajectories.

    Arrays carry a leading measure axis of length ``k`` and a trajectory axis
    of length ``M``.
    """

    indices: np.ndarray          # (M,) global trajectory indices
    times: np.ndarray            # (R,) recorded times
    traces: np.ndarray           # (k, M, R) tr Sigma at recorded times
    means: Optional[np.ndarray]  # (k, M, R, d) or None
    a_final: np.ndarray          # (k, M, d)
    argmax: np.ndarray           # (k, M) support index of the heaviest point
    localized: np.ndarray        # (k, M) bool
    t_stop: np.ndarray           # (M,)
    final_log_weights: Optional[list] = None  # k arrays (M, N_i) if kept

    @property
    def n_paths(self):
        return self.indices.size

    def argmax_points(self, measures):
        return np.stack([m.points[idx] for m, idx in zip(measures, self.argmax)])


def _concat(results):
    if len(results) == 1:
        return results[0]
    first = results[0]
    cat = lambda name, axis: np.concatenate([getattr(r, name) for r in results], axis=axis)  # noqa: E731
    means = cat("means", 1) if first.means is not None else None
    flw = None
    if first.final_log_weights is not None:
        flw = [np.concatenate([r.final_log_weights[i] for r in results])
               for i in range(len(first.final_log_weights))]
    return SimResult(cat("indices", 0), first.times, cat("traces", 1), means, cat("a_final", 1),
                     cat("argmax", 1), cat("localized", 1), cat("t_stop", 0), flw)


def _check_measures(measures):
    measures = list(measures)
    if not measures:
        raise InvalidInput("need at least one measure")
    d = measures[0].dim
    for m in measures:
        if not isinstance(m, DiscreteMeasure):
            raise InvalidInput("the discrete engine needs DiscreteMeasure inputs")
        if m.dim != d:
            raise InvalidInput("all measures must share one dimension")
    return measures, d


def _resolve_record_steps(cfg, record_steps):
    n = cfg.n_steps
    if record_steps is None:
        steps = np.arange(n + 1)
    else:
        steps = np.unique(np.asarray(record_steps, dtype=int))
        if steps.size and (steps[0] < 0 or steps[-1] > n):
            raise InvalidInput("record steps outside the simulation horizon")
    return steps


def _simulate_chunk(measures, policy, cfg, seed, indices, record_steps, record_means,
                    transform, keep_weights, stop_on_localization):
    k = len(measures)
    d = measures[0].dim
    m_paths = len(indices)
    n_steps = cfg.n_steps
    dt = cfg.dt
    noise = BrownianNoise(seed, indices, d, dt, transform)

    pts = [m.points for m in measures]
    lw = [np.broadcast_to(m.log_weights, (m_paths, m.n)).copy() for m in measures]
    loc_tol = np.empty(k)
    for i, m in enumerate(measures):
        w = m.weights
        xc0 = m.points - w @ m.points
        tr0 = float(np.einsum("n,ni,ni->", w, xc0, xc0))
        loc_tol[i] = default_loc_tol(tr0) if cfg.loc_tol is None else cfg.loc_tol

    rec_pos = {int(s): j for j, s in enumerate(record_steps)}
    n_rec = len(record_steps)
    traces = np.zeros((k, m_paths, n_rec))
    means = np.zeros((k, m_paths, n_rec, d)) if record_means else None
    a_final = np.zeros((k, m_paths, d))
    argmax = np.zeros((k, m_paths), dtype=np.int64)
    localized = np.zeros((k, m_paths), dtype=bool)
    t_stop = np.full(m_paths, n_steps * dt)
    final_lw = [np.zeros((m_paths, m.n)) for m in measures] if keep_weights else None

    alive = np.arange(m_paths)

    def finish(rows_local, step, tr, a):
        # rows_local index into the alive arrays
        glob = alive[rows_local]
        for i in range(k):
            a_final[i, glob] = a[i][rows_local]
            argmax[i, glob] = np.argmax(lw[i][rows_local], axis=1)
            localized[i, glob] = tr[i][rows_local] < loc_tol[i]
            if keep_weights:
                final_lw[i][glob] = lw[i][rows_local]
        t_stop[glob] = step * dt
        # recorded quantities stay frozen after stopping
        later = [j for s, j in rec_pos.items() if s > step]
        if later:
            later = np.asarray(later)
            for i in range(k):
                traces[i][np.ix_(glob, later)] = tr[i][rows_local, None]
                if record_means:
                    means[i][np.ix_(glob, later)] = a[i][rows_local, None, :]

    for step in range(n_steps + 1):
        mom = [batch_moments(p, l) for p, l in zip(pts, lw)]
        a = [x[0] for x in mom]
        covs = [x[1] for x in mom]
        tr = [np.trace(c, axis1=1, axis2=2) for c in covs]
        if step in rec_pos:
            j = rec_pos[step]
            for i in range(k):
                traces[i, alive, j] = tr[i]
                if record_means:
                    means[i, alive, j] = a[i]
        done_loc = np.all(np.stack([tr[i] < loc_tol[i] for i in range(k)]), axis=0)
        if step == n_steps:
            finish(np.arange(alive.size), step, tr, a)
            alive = alive[:0]
            break
        if stop_on_localization and np.any(done_loc):
            idx = np.flatnonzero(done_loc)
            finish(idx, step, tr, a)
            keep = np.flatnonzero(~done_loc)
            alive = alive[keep]
            lw = [l[keep] for l in lw]
            a = [x[keep] for x in a]
            covs = [c[keep] for c in covs]
            mom = [(None, None, x[2][keep]) for x in mom]
        dw_all = noise()
        if alive.size == 0:
            break
        dw = dw_all[alive]
        try:
            controls = policy.controls(covs)
        except NotPSD as exc:
            raise NumericalBlowup(f"control evaluation failed at t={step * dt:.4g}: {exc}",
                                  t=step * dt) from exc
        for i in range(k):
            c = controls[i]
            xc = mom[i][2]
            energy = np.trace(np.swapaxes(c, 1, 2) @ covs[i] @ c, axis1=1, axis2=2) * dt
            if np.any(~np.isfinite(energy)) or np.any(energy > BLOWUP_LIMIT):
                bad = int(np.argmax(np.where(np.isfinite(energy), energy, np.inf)))
                raise NumericalBlowup(
                    f"step energy {energy[bad]:.3g} exceeds {BLOWUP_LIMIT} at t={step * dt:.4g} "
                    f"(measure {i}, trajectory {int(indices[alive[bad]])}); reduce dt or raise delta",
                    t=step * dt, control_norm=float(np.linalg.norm(c[bad], 2)),
                    measure_index=i, trajectory_index=int(indices[alive[bad]]))
            new = tilt(lw[i], xc, c, dw, dt)
            if not np.all(np.isfinite(new[:, :1])) or np.any(np.isnan(new)):
                bad = int(np.flatnonzero(~np.all(np.isfinite(new[:, :1]), axis=1) |
                                         np.any(np.isnan(new), axis=1))[0])
                raise NumericalBlowup(
                    f"non-finite log-weights at t={(step + 1) * dt:.4g} (measure {i})",
                    t=(step + 1) * dt, control_norm=float(np.linalg.norm(c[bad], 2)),
                    measure_index=i, trajectory_index=int(indices[alive[bad]]))
            lw[i] = new

    return SimResult(np.asarray(indices), np.asarray(record_steps) * dt, traces, means, a_final,
                     argmax, localized, t_stop, final_lw)


def _chunk_worker(args):
    return _simulate_chunk(*args)


def simulate(measures: Sequence[DiscreteMeasure], policy, cfg: SimConfig, n_paths: int,
             seed: Optional[int] = None, *, indices=None, record_steps=None,
             record_means=False, transform=None, keep_weights=False,
             stop_on_localization=True, workers: int = 1) -> SimResult:
    """Run ``n_paths`` (joint) SL trajectories of ``measures`` under ``policy``.

    All measures of one trajectory share the same Brownian increments. A
    trajectory stops once every measure satisfies ``tr Sigma < loc_tol`` or at
    ``cfg.T``.

    Parameters
    ----------
    measures : sequence of DiscreteMeasure
    policy : Alpha or Extrapolation
    cfg : SimConfig
    n_paths : int
    seed : int, optional
        Master seed; defaults to ``cfg.seed``.
    indices : array_like, optional
        Explicit global trajectory indices (default ``arange(n_paths)``).
    record_steps : array_like of int, optional
        Step numbers at which to record traces (and means). Default: all.
    record_means : bool
    transform : array_like, optional
        Matrix applied to every Brownian increment.
    keep_weights : bool
        Keep the final log-weights of every trajectory.
    stop_on_localization : bool
        If False, every trajectory runs to ``cfg.T``.
    workers : int
        Number of processes. Results do not depend on it.
    """
    measures, _ = _check_measures(measures)
    if isinstance(policy, Extrapolation) and len(measures) != 2:
        raise InvalidInput("the extrapolation policy couples exactly two measures")
    seed = cfg.seed if seed is None else int(seed)
    if indices is None:
        if n_paths < 1:
            raise InvalidInput("n_paths must be >= 1")
        indices = np.arange(n_paths)
    indices = np.asarray(indices, dtype=np.int64)
    steps = _resolve_record_steps(cfg, record_steps)
    args = (measures, policy, cfg, seed)
    tail = (steps, record_means, transform, keep_weights, stop_on_localization)
    workers = max(1, int(workers))
    if workers == 1 or indices.size < 2:
        return _simulate_chunk(*args, indices, *tail)
    chunks = [c for c in np.array_split(indices, min(workers, indices.size)) if c.size]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_chunk_worker, [(*args, c, *tail) for c in chunks]))
    return _concat(results)
