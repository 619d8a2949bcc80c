"""How fast the covariance of a localization process collapses.

Runs the alpha-schemes on a 500-point discretization of the uniform square and
prints E tr(Sigma_t) on a coarse time grid, plus the fitted log-slope of the
alpha = 1/2 curve (close to -1, i.e. exponential decay at rate one).
"""
import numpy as np

from jointsl.engine import localization_rate_curve
from jointsl.presets import uniform_square
from jointsl.simulate import Alpha, SimConfig

ALPHAS = [0.0, 0.3, 0.5, 0.8, 1.0]


def main(M=500):
    mu = uniform_square(500, seed=0)
    cfg = SimConfig(dt=0.05, T=6.0, seed=0)
    curves = localization_rate_curve(mu, [Alpha(a, 0.003) for a in ALPHAS], cfg, M)
    t = curves[0].times
    grid = [np.argmin(np.abs(t - s)) for s in (0.0, 1.0, 2.0, 3.0, 4.0, 6.0)]
    print("alpha " + "".join(f"  t={t[i]:<6.1f}" for i in grid))
    for a, c in zip(ALPHAS, curves):
        print(f"{a:5.1f} " + "".join(f"  {c.mean_trace[i]:8.2e}" for i in grid))
    half = curves[ALPHAS.index(0.5)]
    sel = (t >= 0.5) & (t <= 5.0)
    slope = np.polyfit(t[sel], np.log(half.mean_trace[sel]), 1)[0]
    print(f"\nlog-slope of the alpha = 0.5 curve on [0.5, 5]: {slope:.3f}")


if __name__ == "__main__":
    main()
