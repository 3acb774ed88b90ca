"""Dense quasi-Newton maximizer with backtracking line search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["BfgsConfig", "BfgsResult", "bfgs_maximize"]


@dataclass(frozen=True)
class BfgsConfig:
    max_iter: int = 200
    grad_tol: float = 1e-6
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 50


@dataclass
class BfgsResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    converged: bool
    line_search_failed: bool
    n_iter: int
    trace: list[tuple[int, float]] = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def bfgs_maximize(objective, gradient, x0, config: BfgsConfig = BfgsConfig()) -> BfgsResult:
    """Maximize a smooth objective by BFGS ascent.

    Maintains a dense inverse-Hessian approximation; steps use Armijo
    backtracking (start 1, shrink by ``backtrack``, at most
    ``max_backtracks`` tries). Stops when the sup-norm of the gradient
    falls below ``grad_tol`` or after ``max_iter`` accepted iterations;
    a failed line search returns the best iterate with a flag.
    """
    x = np.asarray(x0, dtype=float).copy()
    f = float(objective(x))
    g = np.asarray(gradient(x), dtype=float)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise ValueError("objective/gradient not finite at the starting point")

    n = x.size
    H = np.eye(n)
    trace = [(0, f)]
    failed = False
    converged = bool(np.max(np.abs(g)) < config.grad_tol) if n else True
    it = 0

    while not converged and it < config.max_iter:
        p = H @ g  # ascent direction
        slope = float(g @ p)
        if slope <= 0.0:
            H = np.eye(n)
            p = g.copy()
            slope = float(g @ g)
            if slope == 0.0:
                converged = True
                break

        alpha = 1.0
        f_new = -np.inf
        accepted = False
        for _ in range(config.max_backtracks):
            x_new = x + alpha * p
            f_new = float(objective(x_new))
            if np.isfinite(f_new) and f_new >= f + config.armijo_c1 * alpha * slope:
                accepted = True
                break
            alpha *= config.backtrack
        if not accepted:
            failed = True
            break

        g_new = np.asarray(gradient(x_new), dtype=float)
        s = x_new - x
        y = g_new - g
        # curvature of the negated (minimized) problem: -y's = s'(g - g_new) > 0
        sy = -float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            ym = -y  # gradient change of the minimized problem
            Hy = H @ ym
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + rho * (
                rho * float(ym @ Hy) + 1.0
            ) * np.outer(s, s)

        x, f, g = x_new, f_new, g_new
        it += 1
        trace.append((it, f))
        converged = bool(np.max(np.abs(g)) < config.grad_tol)

    return BfgsResult(
        x=x, value=f, grad=g, converged=converged,
        line_search_failed=failed, n_iter=it, trace=trace,
    )
