"""Choosing the penalty weight with a ruggedness-aware BIC score.

For every candidate eta the PPK loss is minimized, its ruggedness is
measured (NLO counts interior local optima, Amp compares the loss range
with its mean excess), and the score log PK(theta_hat) + RI log(n) / n is
recorded.  The smallest score wins.

Run:  python3 demos/choosing_eta.py
"""

from ppkcal.kernels import KernelSpec
from ppkcal.losses import PKObjective
from ppkcal.optimize import OptimizerConfig, calibrate_ls, lambda_from_scale, select_eta, select_lambda_scale
from ppkcal.surrogate import builtin_benchmark, uniform_quadrature


def main():
    sine = builtin_benchmark("sine")
    quad = uniform_quadrature(sine.design_domain, 2000, 0)
    kernel = KernelSpec(0.5, 0.5)
    cfg = OptimizerConfig(n_starts=8, seed=0)
    for n in (15, 100):
        data = sine.simulate(n, seed=0)
        theta0 = calibrate_ls(data, sine.model, cfg).theta
        scale = select_lambda_scale(data, sine.model, kernel, theta0, quad, min(10, n))
        obj = PKObjective(data, sine.model, kernel, lambda_from_scale(scale, n, kernel, 1), quad)
        for index in ("nlo", "amp"):
            eta, trace = select_eta(obj, index, config=cfg)
            print(f"\nn = {n}, index = {index}, CV ridge scale = {scale:g}")
            print(f"   {'eta':>8} {'RI':>8} {'score':>9} {'theta':>7}")
            for c in trace:
                mark = "  <- selected" if c.eta == eta else ""
                print(f"   {c.eta:8.3g} {c.ri:8.3f} {c.bic:9.3f} {c.theta[0]:7.3f}{mark}")


if __name__ == "__main__":
    main()
