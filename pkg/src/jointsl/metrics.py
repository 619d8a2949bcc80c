"""Distance estimators built on joint SL and the exact baselines they are checked against."""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .engine import gaussian_init, gaussian_observation_step
from .errors import InvalidInput, Unsupported
from .joint import CouplingBatch, DistanceEstimate, sample_joint, transport_cost_estimate
from .linalg import as_sym, psd_power
from .measures import DiscreteMeasure, GaussianMeasure, independence_cost
from .simulate import Alpha, BrownianNoise, Extrapolation, SimConfig

__all__ = [
    "DistanceEstimate",
    "WeightMeasure",
    "KLEstimate",
    "BoundRow",
    "BoundTable",
    "sl_distance",
    "weighted_sl_distance",
    "kl_via_sl",
    "gaussian_kl_to_standard",
    "linear_assignment",
    "exact_w2_discrete",
    "gaussian_w2",
    "bound_002",
    "w2_bound_table",
    "policy_label",
]


def sl_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, alpha: float, delta: float,
                cfg: SimConfig, M: int, seed: Optional[int] = None, *, policy=None,
                use: str = "mean", workers: int = 1) -> DistanceEstimate:
    """Monte Carlo alpha-SL distance ``E ||a_T - b_T||^2``.

    ``policy`` overrides the joint alpha-scheme built from ``alpha`` and
    ``delta`` (e.g. to pass an :class:`Extrapolation`).
    """
    pol = Alpha(alpha, delta) if policy is None else policy
    r = sample_joint([mu, nu], pol, cfg, M, seed, workers=workers)
    return transport_cost_estimate(CouplingBatch.from_result(r, [mu, nu]), use=use)


@dataclass(frozen=True)
class WeightMeasure:
    """Discrete weight ``w = sum_i masses[i] delta_{nodes[i]}`` on the time axis."""

    nodes: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float).reshape(-1)
        m = np.asarray(self.masses, dtype=float).reshape(-1)
        if t.size == 0 or t.shape != m.shape:
            raise InvalidInput("nodes and masses must be nonempty and of equal length")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise InvalidInput("nodes must be positive and strictly increasing")
        if np.any(m < 0) or not 0 < m.sum() < np.inf:
            raise InvalidInput("masses must be nonnegative with finite positive total")
        object.__setattr__(self, "nodes", t)
        object.__setattr__(self, "masses", m)

    @classmethod
    def single(cls, t, mass=1.0):
        return cls([t], [mass])

    @classmethod
    def from_density(cls, density, t_max, n):
        """Midpoint quadrature of ``density(t) dt`` on ``(0, t_max]`` with ``n`` nodes."""
        h = t_max / n
        t = (np.arange(n) + 0.5) * h
        return cls(t, density(t) * h)


def weighted_sl_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, alpha: float, delta: float,
                         w: WeightMeasure, cfg: SimConfig, M: int, seed: Optional[int] = None,
                         *, policy=None, workers: int = 1) -> DistanceEstimate:
    """Weighted distance ``sum_i masses[i] E ||a_{t_i} - b_{t_i}||^2``.

    Nodes snap to the nearest step of the ``cfg.dt`` grid and the means are
    recorded there during the run. ``node_means`` of the result holds the
    per-node Monte Carlo means.
    """
    if w.nodes[-1] > cfg.T * (1 + 1e-12):
        raise InvalidInput(f"node {w.nodes[-1]} lies beyond the horizon T={cfg.T}")
    steps = np.rint(w.nodes / cfg.dt).astype(int)
    steps = np.minimum(steps, cfg.n_steps)
    uniq, inv = np.unique(steps, return_inverse=True)
    pol = Alpha(alpha, delta) if policy is None else policy
    r = sample_joint([mu, nu], pol, cfg, M, seed, record_steps=uniq, record_means=True,
                     workers=workers)
    sq = np.sum((r.means[0] - r.means[1]) ** 2, axis=-1)[:, inv]  # (M, n_nodes)
    values = sq @ w.masses
    se = sq.std(axis=0, ddof=1) / np.sqrt(sq.shape[0]) if sq.shape[0] > 1 else np.zeros(sq.shape[1])
    return DistanceEstimate.from_values(values, node_means=sq.mean(axis=0), node_std_err=se)


@dataclass(frozen=True)
class KLEstimate:
    estimate: float
    std_err: float
    tail_mass: float
    M: int
    dt: float
    T_max: float


def gaussian_kl_to_standard(mu: GaussianMeasure) -> float:
    """Closed form ``KL(mu || N(0, I))``."""
    sign, logdet = np.linalg.slogdet(mu.cov)
    if sign <= 0:
        raise InvalidInput("covariance must be nonsingular")
    return float(0.5 * (mu.mean @ mu.mean + np.trace(mu.cov) - mu.dim - logdet))


def kl_via_sl(mu: GaussianMeasure, M: int, dt: float, T_max: float,
              seed: int = 0) -> KLEstimate:
    """KL divergence to the standard Gaussian from the joint identity-control SL.

    Both measures run the Gaussian backend on shared increments. With
    ``I_t = int_0^t (a_s - b_s) ds`` the estimator is the trapezoid rule for
    ``int_0^T_max 0.5 ||(1 + t)(a_t - b_t) - I_t||^2 dt / (1 + t)^2``.
    The weight mass beyond ``T_max``, ``1 / (1 + T_max)``, is reported but not
    added.
    """
    if T_max < 10:
        raise InvalidInput("T_max must be >= 10")
    if M < 2:
        raise InvalidInput("M must be >= 2")
    cfg = SimConfig(dt=dt, T=T_max, seed=seed)
    std = GaussianMeasure(np.zeros(mu.dim), np.eye(mu.dim))
    s_mu = gaussian_init(mu, M)
    s_nu = gaussian_init(std, M)
    noise = BrownianNoise(seed, np.arange(M), mu.dim, dt)

    def integrand(t, a, b, integral):
        r = (1.0 + t) * (a - b) - integral
        return 0.5 * np.sum(r * r, axis=1) / (1.0 + t) ** 2

    n = cfg.n_steps
    prev = integrand(0.0, s_mu.mean, s_nu.mean, s_mu.running_int_a - s_nu.running_int_a)
    total = np.zeros(M)
    for _ in range(n):
        dw = noise()
        s_mu = gaussian_observation_step(s_mu, dw, dt)
        s_nu = gaussian_observation_step(s_nu, dw, dt)
        cur = integrand(s_mu.t, s_mu.mean, s_nu.mean, s_mu.running_int_a - s_nu.running_int_a)
        total += 0.5 * dt * (prev + cur)
        prev = cur
    t_end = n * dt
    return KLEstimate(float(total.mean()), float(total.std(ddof=1) / np.sqrt(M)),
                      1.0 / (1.0 + t_end), M, dt, t_end)


def linear_assignment(cost):
    """Minimum-cost perfect matching of a square cost matrix.

    Shortest augmenting path with dual potentials (Hungarian method), O(n^3).

    Returns
    -------
    ndarray of int
        ``perm[i]`` is the column assigned to row ``i``.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidInput("cost matrix must be square")
    if not np.all(np.isfinite(c)):
        raise InvalidInput("cost matrix must be finite")
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)    # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[p[1:] - 1] = np.arange(n)
    return perm


def exact_w2_discrete(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Squared W2 between two uniform measures with equally many points."""
    if mu.n != nu.n:
        raise Unsupported("exact W2 needs equal support sizes")
    if not (mu.is_uniform() and nu.is_uniform()):
        raise Unsupported("exact W2 needs uniform weights")
    if mu.dim != nu.dim:
        raise InvalidInput("dimension mismatch")
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    perm = linear_assignment(cost)
    return float(np.sum(cost[np.arange(mu.n), perm]) / mu.n)


def gaussian_w2(mu: GaussianMeasure, nu: GaussianMeasure) -> float:
    """Squared W2 between Gaussians (Bures formula)."""
    if mu.dim != nu.dim:
        raise InvalidInput("dimension mismatch")
    root = psd_power(mu.cov, 0.5)
    cross = psd_power(root @ nu.cov @ root, 0.5)
    val = np.sum((mu.mean - nu.mean) ** 2) + np.trace(mu.cov + nu.cov - 2.0 * cross)
    return float(max(val, 0.0))


def bound_002(a0, b0, sigma0, lam0, kappa: float) -> float:
    """``||a0 - b0||^2 + tr(Sigma0 + Lam0) - 2 sqrt(kappa lam_min(Lam0)) tr Sigma0``.

    Upper bound on the extrapolation cost when ``mu`` is ``kappa``-strongly
    log-concave and ``nu`` is Gaussian with covariance ``Lam0``.
    """
    if not kappa > 0:
        raise InvalidInput("kappa must be positive")
    a0 = np.asarray(a0, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    s = as_sym(sigma0)
    l = as_sym(lam0)
    lmin = max(float(np.linalg.eigvalsh(l)[0]), 0.0)
    return float(np.sum((a0 - b0) ** 2) + np.trace(s) + np.trace(l)
                 - 2.0 * np.sqrt(kappa * lmin) * np.trace(s))


def policy_label(policy) -> str:
    if isinstance(policy, Extrapolation):
        return "extrapolation"
    return f"joint-eldan-{policy.alpha:g}"


@dataclass(frozen=True)
class BoundRow:
    coupling: str
    mean_sq: float
    std_err: float
    M: int
    localized_fraction: float = 1.0

    @property
    def bound_w2(self):
        return float(np.sqrt(max(self.mean_sq, 0.0)))

    @property
    def ci(self):
        lo = self.mean_sq - 1.96 * self.std_err
        hi = self.mean_sq + 1.96 * self.std_err
        return float(np.sqrt(max(lo, 0.0))), float(np.sqrt(max(hi, 0.0)))


@dataclass
class BoundTable:
    """Rows of estimated W2 bounds; ``bound_w2`` and the CI are on the W2 scale."""

    rows: List[BoundRow]
    metadata: dict = field(default_factory=dict)

    def row(self, name) -> BoundRow:
        for r in self.rows:
            if r.coupling == name or r.coupling.split(" ")[0] == name:
                return r
        raise KeyError(name)

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["coupling", "bound_w2", "ci_lo", "ci_hi", "M"])
            for r in self.rows:
                lo, hi = r.ci
                w.writerow([r.coupling, repr(r.bound_w2), repr(lo), repr(hi), r.M])

    def to_json(self, path=None, extra=None):
        obj = dict(self.metadata)
        if extra:
            obj.update(extra)
        obj["rows"] = [{"coupling": r.coupling, "bound_w2": r.bound_w2, "ci_lo": r.ci[0],
                        "ci_hi": r.ci[1], "M": r.M, "mean_sq": r.mean_sq, "std_err": r.std_err,
                        "localized_fraction": r.localized_fraction} for r in self.rows]
        text = json.dumps(obj, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text


def w2_bound_table(mu: DiscreteMeasure, nu: DiscreteMeasure, policies: Sequence, cfg: SimConfig,
                   M: int, seed: Optional[int] = None, *, use: str = "mean",
                   workers: int = 1) -> BoundTable:
    """Coupling-cost table: one Monte Carlo row per policy plus exact rows.

    The ``optimal`` row is the exact assignment cost and the ``independence``
    row the closed-form product-coupling cost; both have ``M = 0``. Rows whose
    trajectories did not all localize by ``cfg.T`` are labelled
    ``(partially localized)``.
    """
    seed = cfg.seed if seed is None else int(seed)
    rows = [BoundRow("optimal", exact_w2_discrete(mu, nu), 0.0, 0)]
    for pol in policies:
        r = sample_joint([mu, nu], pol, cfg, M, seed, workers=workers)
        est = transport_cost_estimate(CouplingBatch.from_result(r, [mu, nu]), use=use)
        frac = float(np.mean(np.all(r.localized, axis=0)))
        name = policy_label(pol) + ("" if frac == 1.0 else " (partially localized)")
        rows.append(BoundRow(name, est.mean_sq, est.std_err, est.M, frac))
    rows.append(BoundRow("independence", independence_cost(mu, nu), 0.0, 0))
    meta = {"seed": seed, "dt": cfg.dt, "T": cfg.T, "loc_tol": cfg.loc_tol, "M": M, "use": use,
            "policies": [{"name": policy_label(p), "alpha": getattr(p, "alpha", None),
                          "delta": p.delta} for p in policies]}
    return BoundTable(rows, meta)
