"""Convergence table of the probabilistic Euler method on the logistic equation."""

import sys

from taylorpn import kernels
from taylorpn import odesolve as O


def main():
    prob, exact = O.logistic(3.0, 0.1, 3.0)
    config = O.SolverConfig(1, kernels.KernelSpec("exponential", 1.0, 1.0))
    steps = [20, 40, 80, 160, 320, 640]
    table = O.convergence_study(prob, exact, steps, config)
    print(f"{'N':>5} {'mean error':>12} {'max eps':>12}")
    for n, err, eps in zip(steps, table.mean_error, table.max_eps):
        print(f"{n:>5} {err:12.4e} {eps:12.4e}")
    print(f"fitted orders: mean {table.order('mean_error'):.3f}, eps {table.order('max_eps'):.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
