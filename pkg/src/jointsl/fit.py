"""Fitting a pushforward model by minimizing the empirical SL distance.

The model is ``nu(theta) = (1/n) sum_i delta_{f(z_i; theta)}`` over a fixed
latent point set. A joint alpha-scheme couples the data with the model; each
trajectory localizes the model at one latent index ``i_j`` and the loss
``mean_j ||a_j - b_j||^2`` is differentiated with that profile held fixed.
"""
import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import InvalidInput, NumericalBlowup
from .measures import DiscreteMeasure, pca
from .simulate import Alpha, SimConfig, SimResult, simulate

__all__ = [
    "LegendreBasis",
    "ParametricMap",
    "FitConfig",
    "FitReport",
    "legendre_features",
    "model_pushforward",
    "loss_grad_hess",
    "fit",
    "informed_init",
    "random_init",
]


def _legendre_1d(x, degree):
    """L2-normalized Legendre values ``sqrt((2n+1)/2) P_n(x)``, shape (..., degree+1)."""
    out = np.empty(x.shape + (degree + 1,))
    out[..., 0] = 1.0
    if degree >= 1:
        out[..., 1] = x
    for n in range(1, degree):
        out[..., n + 1] = ((2 * n + 1) * x * out[..., n] - n * out[..., n - 1]) / (n + 1)
    return out * np.sqrt((2 * np.arange(degree + 1) + 1) / 2.0)


@dataclass(frozen=True)
class LegendreBasis:
    """Tensor products of normalized Legendre polynomials on ``[-1, 1]^k``.

    Features are ordered by multi-index ``(n_1, ..., n_k)`` with the last
    latent coordinate varying fastest.
    """

    latent_dim: int
    max_degree: Tuple[int, ...]

    def __init__(self, latent_dim: int, max_degree=1):
        if latent_dim < 1:
            raise InvalidInput("latent_dim must be >= 1")
        deg = (max_degree,) * latent_dim if np.isscalar(max_degree) else tuple(max_degree)
        if len(deg) != latent_dim or any(int(g) < 0 for g in deg):
            raise InvalidInput("need one nonnegative degree per latent dimension")
        object.__setattr__(self, "latent_dim", int(latent_dim))
        object.__setattr__(self, "max_degree", tuple(int(g) for g in deg))

    @property
    def n_features(self):
        return int(np.prod([g + 1 for g in self.max_degree]))

    @property
    def multi_indices(self):
        return list(product(*[range(g + 1) for g in self.max_degree]))

    def index_of(self, multi_index):
        return self.multi_indices.index(tuple(multi_index))


def legendre_features(basis: LegendreBasis, z):
    """Feature matrix ``phi(z)``.

    ``z`` may be one point of length ``k`` (returns shape ``(J,)``) or an
    ``(n, k)`` array (returns ``(n, J)``). Points outside the cube are clamped
    with a warning.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != basis.latent_dim:
        raise InvalidInput(f"latent points must have {basis.latent_dim} coordinates")
    if np.any(np.abs(z) > 1):
        warnings.warn("latent points outside [-1, 1]^k were clamped", RuntimeWarning, stacklevel=2)
        z = np.clip(z, -1.0, 1.0)
    phi = np.ones((z.shape[0], 1))
    for i, g in enumerate(basis.max_degree):
        p = _legendre_1d(z[:, i], g)
        phi = (phi[:, :, None] * p[:, None, :]).reshape(z.shape[0], -1)
    return phi[0] if single else phi


@dataclass(frozen=True, eq=False)
class ParametricMap:
    """``f(z; theta) = theta^T phi(z)`` with ``theta`` of shape ``(J, d)``."""

    basis: LegendreBasis
    theta: np.ndarray

    def __post_init__(self):
        th = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if th.shape[0] != self.basis.n_features:
            raise InvalidInput(f"theta needs {self.basis.n_features} rows, got {th.shape[0]}")
        if not np.all(np.isfinite(th)):
            raise InvalidInput("theta must be finite")
        object.__setattr__(self, "theta", th)

    @property
    def out_dim(self):
        return self.theta.shape[1]

    @property
    def n_params(self):
        return self.theta.size

    def with_params(self, flat):
        return ParametricMap(self.basis, np.asarray(flat, dtype=float).reshape(self.theta.shape))

    def evaluate(self, z):
        return legendre_features(self.basis, z) @ self.theta

    def jacobian(self, z):
        """``D_theta f(z)`` for every row of ``z``, shape ``(n, d, J*d)``.

        The parameter ``theta[j, l]`` sits at flat position ``j*d + l``.
        """
        phi = legendre_features(self.basis, np.atleast_2d(z))
        d = self.out_dim
        eye = np.eye(d)
        return np.einsum("nj,lm->nljm", phi, eye).reshape(phi.shape[0], d, -1)

    def second_order(self, z, r):
        """``sum_l r_l D^2_theta f_l(z)``; zero because ``f`` is linear in ``theta``."""
        return None


def model_pushforward(pmap, z) -> DiscreteMeasure:
    """Uniform measure on ``f(z_i; theta)``; coinciding images are merged.

    ``source_index`` of the result maps every support point to the first
    latent row that produced it.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return DiscreteMeasure.from_points(pmap.evaluate(z))


@dataclass(frozen=True)
class FitConfig:
    """Optimizer and simulation settings.

    ``noise="resample"`` draws fresh trajectories at every outer iteration and
    keeps them fixed during that iteration's damping search; ``"frozen"`` uses
    the same trajectories throughout. ``endpoint`` selects the localized
    support points (``"argmax"``) or the terminal means (``"mean"``).
    """

    M: int = 500
    sim: SimConfig = field(default_factory=lambda: SimConfig(dt=0.05, T=10.0))
    alpha: float = 0.5
    delta: float = 1e-3
    max_iter: int = 15
    damping: float = 1e-3
    noise: str = "resample"
    endpoint: str = "argmax"
    seed: int = 0
    grad_tol: float = 1e-10
    step_tol: float = 1e-10
    max_damping_tries: int = 12
    workers: int = 1

    def __post_init__(self):
        if self.M < 1 or self.max_iter < 1:
            raise InvalidInput("M and max_iter must be >= 1")
        if self.noise not in ("frozen", "resample"):
            raise InvalidInput("noise must be 'frozen' or 'resample'")
        if self.endpoint not in ("argmax", "mean"):
            raise InvalidInput("endpoint must be 'argmax' or 'mean'")
        if not self.damping > 0:
            raise InvalidInput("damping must be positive")

    @property
    def policy(self):
        return Alpha(self.alpha, self.delta)

    def iteration_seed(self, iteration):
        if self.noise == "frozen":
            return int(self.seed)
        return int(np.random.SeedSequence([int(self.seed), int(iteration)]).generate_state(1, np.uint64)[0])

    def to_dict(self):
        out = asdict(self)
        out["sim"] = asdict(self.sim)
        return out


class _DataCache:
    """Data-side trajectories per noise seed.

    Under the joint alpha-scheme the data marginal does not depend on
    ``theta``, so it is simulated once per seed.
    """

    def __init__(self, data, cfg: FitConfig):
        self.data = data
        self.cfg = cfg
        self._store: Dict[int, np.ndarray] = {}

    def endpoints(self, seed):
        if seed not in self._store:
            r = simulate([self.data], self.cfg.policy, self.cfg.sim, self.cfg.M, seed,
                         workers=self.cfg.workers)
            self._store[seed] = _endpoints(r, self.data, self.cfg.endpoint)
            while len(self._store) > 4:
                self._store.pop(next(iter(self._store)))
        return self._store[seed]


def _endpoints(r: SimResult, measure, endpoint):
    if endpoint == "mean":
        return r.a_final[0]
    return measure.points[r.argmax[0]]


def _model_run(pmap, z, cfg: FitConfig, seed):
    model = model_pushforward(pmap, z)
    try:
        r = simulate([model], cfg.policy, cfg.sim, cfg.M, seed, workers=cfg.workers)
    except NumericalBlowup as exc:
        raise NumericalBlowup(f"model simulation failed: {exc}", t=exc.t,
                              control_norm=exc.control_norm, measure_index=1,
                              trajectory_index=exc.trajectory_index) from exc
    b = _endpoints(r, model, cfg.endpoint)
    latent_idx = model.source_index[r.argmax[0]]
    return b, latent_idx


def loss_grad_hess(data: DiscreteMeasure, pmap, z, cfg: FitConfig, seed: Optional[int] = None,
                   *, need_derivatives=True, _cache=None):
    """Empirical loss, gradient ``(J, d)`` and Gauss-Newton Hessian ``(Jd, Jd)``.

    Each trajectory ``j`` contributes ``||a_j - b_j||^2``, gradient
    ``2 D_theta f(z_{i_j})^T (b_j - a_j)`` and Hessian
    ``2 D_theta f^T D_theta f`` (plus the second-order term for maps that
    are nonlinear in ``theta``), all averaged over the ``M`` trajectories.
    """
    seed = cfg.seed if seed is None else int(seed)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    cache = _DataCache(data, cfg) if _cache is None else _cache
    a = cache.endpoints(seed)
    b, idx = _model_run(pmap, z, cfg, seed)
    r = b - a
    loss = float(np.mean(np.sum(r * r, axis=1)))
    if not need_derivatives:
        return loss, None, None
    m = r.shape[0]
    if isinstance(pmap, ParametricMap):
        phi = legendre_features(pmap.basis, z[idx])
        grad = 2.0 * (phi.T @ r) / m
        gram = phi.T @ phi
        gram = 0.5 * (gram + gram.T)
        hess = np.kron(2.0 * gram / m, np.eye(pmap.out_dim))
        return loss, grad, hess
    jac = pmap.jacobian(z[idx])  # (M, d, P)
    grad = 2.0 * np.einsum("mlp,ml->p", jac, r) / m
    hess = 2.0 * np.einsum("mlp,mlq->pq", jac, jac) / m
    second = pmap.second_order(z[idx], r)
    if second is not None:
        hess = hess + 2.0 * second.sum(axis=0) / m
    hess = 0.5 * (hess + hess.T)
    return loss, grad.reshape(pmap.theta.shape), hess


@dataclass
class FitReport:
    loss_history: List[float]
    theta_final: np.ndarray
    iterations: int
    converged: bool
    config: dict = field(default_factory=dict)
    seed: int = 0
    damping_history: List[float] = field(default_factory=list)

    def to_dict(self):
        return {"loss_history": [float(x) for x in self.loss_history],
                "theta": np.asarray(self.theta_final).ravel().tolist(),
                "theta_shape": list(np.shape(self.theta_final)),
                "iterations": self.iterations, "converged": self.converged,
                "config": self.config, "seed": self.seed}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    def write_loss_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss"])
            for i, v in enumerate(self.loss_history):
                w.writerow([i, repr(float(v))])


def _solve_damped(hess, grad, lam):
    p = hess.shape[0]
    mat = hess + lam * np.eye(p)
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return None
    y = np.linalg.solve(chol, -grad)
    return np.linalg.solve(chol.T, y)


def fit(data: DiscreteMeasure, init, z, cfg: FitConfig) -> FitReport:
    """Damped Newton (Levenberg) minimization of the empirical SL loss.

    Each iteration solves ``(H + lam I) step = -g`` and accepts the step if
    the loss on the same trajectories decreases; ``lam`` is halved on
    acceptance and tripled on rejection. If the damped system cannot be
    factorized, a backtracking gradient step is tried instead. With
    ``noise="resample"`` an iteration whose line search fails keeps the
    parameters and moves on to the next noise draw; with frozen noise it ends
    the fit.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    cache = _DataCache(data, cfg)
    pmap = init
    lam = cfg.damping
    seed = cfg.iteration_seed(0)
    loss, grad, hess = loss_grad_hess(data, pmap, z, cfg, seed, _cache=cache)
    history = [loss]
    lams = [lam]
    converged = False
    it = 0
    while it < cfg.max_iter:
        if it > 0 and cfg.noise == "resample":
            seed = cfg.iteration_seed(it)
            loss, grad, hess = loss_grad_hess(data, pmap, z, cfg, seed, _cache=cache)
        g = grad.ravel()
        if np.linalg.norm(g) <= cfg.grad_tol * (1.0 + loss):
            converged = True
            break
        theta = pmap.theta.ravel()
        accepted = False
        lam_start = lam
        for _ in range(cfg.max_damping_tries):
            step = _solve_damped(hess, g, lam)
            if step is None:
                step = -g / (lam + np.abs(np.diag(hess)).max())
            if np.linalg.norm(step) <= cfg.step_tol * (1.0 + np.linalg.norm(theta)):
                converged = True
                break
            cand = pmap.with_params(theta + step)
            cand_loss, _, _ = loss_grad_hess(data, cand, z, cfg, seed, need_derivatives=False,
                                             _cache=cache)
            if cand_loss < loss:
                pmap = cand
                lam *= 0.5
                accepted = True
                break
            lam *= 3.0
        if not accepted:
            if converged or cfg.noise == "frozen":
                break
            # the line search failed on this noise draw only; retry on fresh trajectories
            lam = lam_start
        it += 1
        loss, grad, hess = loss_grad_hess(data, pmap, z, cfg, seed, _cache=cache)
        history.append(loss)
        lams.append(lam)
    return FitReport(history, pmap.theta.copy(), it, converged, cfg.to_dict(), cfg.seed, lams)


def informed_init(data: DiscreteMeasure, z, basis: LegendreBasis) -> ParametricMap:
    """Latent points embedded along the top principal directions of ``data``.

    The map is ``f(z) = m + V (z - mean(z))`` where ``V`` holds the leading
    ``k`` principal directions and ``m`` is the data mean, so the model mean
    equals the data mean. No scaling is applied.
    """
    k = basis.latent_dim
    if min(basis.max_degree) < 1:
        raise InvalidInput("informed initialization needs degree >= 1 in every latent coordinate")
    if k > data.dim:
        raise InvalidInput("latent dimension exceeds data dimension")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    comps, mean = pca(data, k)
    c0 = np.sqrt(0.5)
    c1 = np.sqrt(1.5)
    theta = np.zeros((basis.n_features, data.dim))
    theta[basis.index_of((0,) * k)] = (mean - comps @ z.mean(axis=0)) / c0 ** k
    for i in range(k):
        e = [0] * k
        e[i] = 1
        theta[basis.index_of(e)] = comps[:, i] / (c1 * c0 ** (k - 1))
    return ParametricMap(basis, theta)


def random_init(basis: LegendreBasis, out_dim: int, seed=0, var=0.1) -> ParametricMap:
    """``theta ~ N(0, var I)``."""
    rng = np.random.default_rng(seed)
    return ParametricMap(basis, np.sqrt(var) * rng.standard_normal((basis.n_features, out_dim)))
