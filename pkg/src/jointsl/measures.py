"""Measure representations, moments, latent point sets and coupling baselines."""
import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInput, NotPSD
from .linalg import as_sym, spectral_decompose

__all__ = [
    "DiscreteMeasure",
    "GaussianMeasure",
    "MomentSummary",
    "mean_cov",
    "third_moment",
    "discretize_gaussian",
    "low_discrepancy",
    "independence_cost",
    "pca",
    "first_primes",
]


def _merge_rows(points, log_weights):
    """Merge bitwise-identical rows, keeping first-occurrence order.

    Returns the merged points, merged log-weights and, for every merged row,
    the index of its first occurrence in the input.
    """
    _, first, inverse = np.unique(points, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    group = rank[inverse]
    merged_lw = np.full(order.size, -np.inf)
    np.logaddexp.at(merged_lw, group, log_weights)
    return points[first[order]], merged_lw, first[order]


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely supported probability measure.

    Attributes
    ----------
    points : ndarray, shape (N, d)
        Distinct support points.
    log_weights : ndarray, shape (N,)
        Normalized log-weights, ``logsumexp(log_weights) == 0``.
    source_index : ndarray, shape (N,)
        For measures built with duplicate merging, the index of the input row
        that each support point came from. ``arange(N)`` otherwise.
    """

    points: np.ndarray
    log_weights: np.ndarray
    source_index: np.ndarray = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        lw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InvalidInput("a measure needs at least one point in dimension >= 1")
        if lw.shape[0] != pts.shape[0]:
            raise InvalidInput(f"{pts.shape[0]} points but {lw.shape[0]} weights")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("support points must be finite")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise InvalidInput("log-weights must not be NaN or +inf")
        total = logsumexp(lw)
        if not np.isfinite(total):
            raise InvalidInput("weights sum to zero")
        lw = lw - total
        src = (np.arange(pts.shape[0]) if self.source_index is None
               else np.asarray(self.source_index, dtype=int))
        pts.setflags(write=False)
        lw.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "source_index", src)

    @classmethod
    def from_points(cls, points, weights=None, merge=True):
        """Build a measure from support points and (linear) weights.

        Uniform weights are used when ``weights`` is None. Repeated points are
        merged by summing their weights unless ``merge`` is False, in which
        case duplicates raise :class:`InvalidInput`.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.ndim != 2:
            raise InvalidInput("points must be a 2-d array")
        if weights is None:
            lw = np.full(pts.shape[0], -np.log(pts.shape[0]))
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise InvalidInput("weights must be finite and nonnegative")
            with np.errstate(divide="ignore"):
                lw = np.log(w)
        if lw.shape[0] != pts.shape[0]:
            raise InvalidInput(f"{pts.shape[0]} points but {lw.shape[0]} weights")
        merged_pts, merged_lw, first = _merge_rows(pts, lw)
        if merged_pts.shape[0] != pts.shape[0] and not merge:
            raise InvalidInput("support points must be distinct")
        return cls(merged_pts, merged_lw, first)

    @classmethod
    def point_mass(cls, x):
        return cls(np.asarray(x, dtype=float).reshape(1, -1), np.zeros(1))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def is_uniform(self, rtol=1e-12):
        w = self.weights
        return bool(np.allclose(w, 1.0 / self.n, rtol=rtol, atol=0.0))

    def pushforward(self, a=None, c=None):
        """Image under ``x -> A x + c``; weights are carried over unchanged."""
        pts = self.points
        if a is not None:
            pts = pts @ np.asarray(a, dtype=float).T
        if c is not None:
            pts = pts + np.asarray(c, dtype=float)
        return DiscreteMeasure(pts, self.log_weights.copy())

    def to_csv(self, path):
        """Write columns ``x_1..x_d, weight`` (linear weights)."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x_{i + 1}" for i in range(self.dim)] + ["weight"])
            for x, w in zip(self.points, self.weights):
                writer.writerow([repr(float(v)) for v in x] + [repr(float(w))])

    @classmethod
    def from_csv(cls, path):
        """Read a measure written by :meth:`to_csv`; weights are renormalized."""
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[-1].strip() != "weight":
                raise InvalidInput("CSV header must end with a 'weight' column")
            rows = [[float(v) for v in row] for row in reader if row]
        if not rows:
            raise InvalidInput("CSV holds no support points")
        arr = np.asarray(rows)
        return cls.from_points(arr[:, :-1], arr[:, -1])


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float).reshape(-1)
        c = as_sym(np.atleast_2d(self.cov))
        if c.shape != (m.size, m.size):
            raise InvalidInput(f"mean has dim {m.size} but cov is {c.shape}")
        if np.linalg.eigvalsh(c).min() < -1e-10:
            raise NotPSD("Gaussian covariance is not PSD")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)

    @property
    def dim(self):
        return self.mean.size

    def to_json(self):
        return json.dumps({"mean": self.mean.tolist(), "cov": self.cov.tolist()})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        try:
            return cls(obj["mean"], obj["cov"])
        except KeyError as exc:
            raise InvalidInput(f"Gaussian JSON missing key {exc}") from None


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    cov: np.ndarray
    trace_cov: float


def mean_cov(m: DiscreteMeasure) -> MomentSummary:
    """Weighted mean and (centered) covariance of a discrete measure."""
    w = m.weights
    a = w @ m.points
    xc = m.points - a
    cov = (xc * w[:, None]).T @ xc
    cov = 0.5 * (cov + cov.T)
    return MomentSummary(a, cov, float(np.trace(cov)))


def third_moment(m: DiscreteMeasure):
    """Centered third moment tensor ``sum_i w_i (x_i - a)^{(x)3}``."""
    w = m.weights
    xc = m.points - w @ m.points
    return np.einsum("n,ni,nj,nk->ijk", w, xc, xc, xc)


def discretize_gaussian(g: GaussianMeasure, n: int, rng_seed=None, moment_match=False):
    """Equal-weight empirical measure of ``n`` draws from ``g``.

    With ``moment_match=True`` the draws are affinely corrected so that their
    empirical mean and covariance equal those of ``g`` exactly (requires
    ``n > d`` and nonsingular ``g.cov``). This removes the O(n^-1/2) moment
    error of the plain sample while keeping the sample's shape.
    """
    if n < 1:
        raise InvalidInput("n must be >= 1")
    lam = np.linalg.eigvalsh(g.cov)
    if lam.min() < -1e-10:
        raise NotPSD("Gaussian covariance is not PSD")
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((n, g.dim))
    if moment_match:
        if n <= g.dim or lam.min() <= 0:
            raise InvalidInput("moment matching needs n > d and a nonsingular covariance")
        z = z - z.mean(axis=0)
        emp = z.T @ z / n
        z = z @ np.linalg.inv(np.linalg.cholesky(emp)).T
    evals, evecs = np.linalg.eigh(g.cov)
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    pts = g.mean + z @ root.T
    return DiscreteMeasure.from_points(pts)


def first_primes(k):
    primes = []
    cand = 2
    while len(primes) < k:
        if all(cand % p for p in primes if p * p <= cand):
            primes.append(cand)
        cand += 1
    return primes


def _van_der_corput(indices, base):
    out = np.zeros(indices.shape, dtype=float)
    denom = 1.0
    rem = indices.copy()
    while np.any(rem > 0):
        denom *= base
        rem, digit = np.divmod(rem, base)
        out += digit / denom
    return out


def low_discrepancy(n: int, k: int):
    """First ``n`` points of the ``k``-dimensional Halton sequence on ``[-1, 1]^k``.

    Coordinate ``j`` is the van der Corput sequence in the ``j``-th prime base,
    started at index 1 (index 0 would be the corner point).
    """
    if n < 1 or k < 1:
        raise InvalidInput("n and k must be >= 1")
    idx = np.arange(1, n + 1, dtype=np.int64)
    cols = [_van_der_corput(idx, b) for b in first_primes(k)]
    return 2.0 * np.stack(cols, axis=1) - 1.0


Measure = Union[DiscreteMeasure, GaussianMeasure]


def _moments(m: Measure):
    if isinstance(m, GaussianMeasure):
        return m.mean, m.cov
    s = mean_cov(m)
    return s.mean, s.cov


def independence_cost(mu: Measure, nu: Measure) -> float:
    """``E||X - Y||^2`` for independent ``X ~ mu``, ``Y ~ nu`` in closed form."""
    a, s = _moments(mu)
    b, l = _moments(nu)
    if a.shape != b.shape:
        raise InvalidInput(f"dimension mismatch {a.size} vs {b.size}")
    return float(np.sum((a - b) ** 2) + np.trace(s) + np.trace(l))


def pca(m: DiscreteMeasure, k: int):
    """Top-``k`` principal directions (columns, descending variance) and the mean."""
    if not 1 <= k <= m.dim:
        raise InvalidInput(f"k must lie in [1, {m.dim}]")
    s = mean_cov(m)
    dec = spectral_decompose(s.cov)
    return dec.eigenvectors[:, :k].copy(), s.mean
