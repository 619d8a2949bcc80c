"""Built-in test measures used by the experiments and the command line."""
import numpy as np

from .errors import InvalidInput
from .measures import DiscreteMeasure

__all__ = [
    "uniform_square",
    "three_gaussian_mixture",
    "rotated_mixture_pair",
    "annulus_pair",
    "manifold_map",
    "manifold_target",
    "point_mass",
    "MEASURE_PRESETS",
    "PAIR_PRESETS",
    "make_measure",
    "make_pair",
]


def uniform_square(n, seed=0, half_width=1.0):
    """``n`` i.i.d. draws from ``Unif([-h, h]^2)``."""
    rng = np.random.default_rng(seed)
    return DiscreteMeasure.from_points(rng.uniform(-half_width, half_width, (n, 2)))


def _mixture(rng, n, weights, means, var):
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    comp = rng.choice(len(weights), size=n, p=weights / weights.sum())
    return means[comp] + np.sqrt(var) * rng.standard_normal((n, means.shape[1]))


def three_gaussian_mixture(n, seed=0):
    """Weights 1/2, 3/10, 1/5 at (0,0), (1,0), (0,1); covariance 0.1 I."""
    rng = np.random.default_rng(seed)
    pts = _mixture(rng, n, [0.5, 0.3, 0.2], [[0, 0], [1, 0], [0, 1]], 0.1)
    return DiscreteMeasure.from_points(pts)


def _rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotated_mixture_pair(n, seed=0):
    """Four-component mixtures with means ``R^i (4, 0)`` and ``R^i (2 sqrt2, 2 sqrt2)``.

    ``R`` is the rotation by 45 degrees, ``i = 1..4``, equal weights and
    covariance 0.1 I. Both measures get ``n`` points from independent streams.
    """
    r = _rotation(np.pi / 4)
    powers = [np.linalg.matrix_power(r, i) for i in range(1, 5)]
    mu_means = [p @ np.array([4.0, 0.0]) for p in powers]
    nu_means = [p @ np.array([2 * np.sqrt(2), 2 * np.sqrt(2)]) for p in powers]
    ss = np.random.SeedSequence(seed)
    rng_mu, rng_nu = (np.random.default_rng(s) for s in ss.spawn(2))
    mu = _mixture(rng_mu, n, [0.25] * 4, mu_means, 0.1)
    nu = _mixture(rng_nu, n, [0.25] * 4, nu_means, 0.1)
    return DiscreteMeasure.from_points(mu), DiscreteMeasure.from_points(nu)


def _annulus(rng, n, r_in, r_out, center=(0.0, 0.0)):
    radius = np.sqrt(rng.uniform(r_in ** 2, r_out ** 2, n))
    angle = rng.uniform(0.0, 2 * np.pi, n)
    return np.asarray(center) + np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)


def annulus_pair(n, seed=0):
    """``mu`` uniform on ``1.5 <= |x| <= 2``; ``nu`` an even mixture of the
    annuli ``0.5 <= |x| <= 1`` and ``0.2 <= |x + (0, 4)| <= 0.4``."""
    ss = np.random.SeedSequence(seed)
    rng_mu, rng_nu = (np.random.default_rng(s) for s in ss.spawn(2))
    mu = _annulus(rng_mu, n, 1.5, 2.0)
    first = rng_nu.random(n) < 0.5
    nu = np.empty((n, 2))
    nu[first] = _annulus(rng_nu, int(first.sum()), 0.5, 1.0)
    nu[~first] = _annulus(rng_nu, int((~first).sum()), 0.2, 0.4, center=(0.0, -4.0))
    return DiscreteMeasure.from_points(mu), DiscreteMeasure.from_points(nu)


def manifold_map(z):
    """``(x, y) -> (exp(0.5x + y), -exp(x - 0.5y), x + 2y^2)`` applied row-wise."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x, y = z[:, 0], z[:, 1]
    return np.stack([np.exp(0.5 * x + y), -np.exp(x - 0.5 * y), x + 2 * y ** 2], axis=1)


def manifold_target(n, seed=0):
    """Image of ``n`` uniform draws on ``[-1, 1]^2`` under :func:`manifold_map`."""
    rng = np.random.default_rng(seed)
    return DiscreteMeasure.from_points(manifold_map(rng.uniform(-1, 1, (n, 2))))


def point_mass(n=1, seed=0, dim=2):
    return DiscreteMeasure.point_mass(np.zeros(dim))


MEASURE_PRESETS = {
    "uniform-square": uniform_square,
    "fig2-case1": uniform_square,
    "fig2-case2": three_gaussian_mixture,
    "manifold": manifold_target,
    "point-mass": point_mass,
}

PAIR_PRESETS = {
    "fig4-case1": rotated_mixture_pair,
    "fig4-case2": annulus_pair,
}


def make_measure(name, n, seed=0):
    try:
        return MEASURE_PRESETS[name](n, seed)
    except KeyError:
        raise InvalidInput(f"unknown measure preset {name!r}; "
                           f"choose from {sorted(MEASURE_PRESETS)}") from None


def make_pair(name, n, seed=0):
    try:
        return PAIR_PRESETS[name](n, seed)
    except KeyError:
        raise InvalidInput(f"unknown pair preset {name!r}; choose from {sorted(PAIR_PRESETS)}") from None
