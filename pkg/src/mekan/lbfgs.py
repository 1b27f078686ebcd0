"""Limited-memory BFGS with a strong-Wolfe line search on flat vectors.

Works against a single callback ``objective(x) -> (loss, grad)``. The default
tolerances are tiny enough that iteration budgets, not convergence tests,
normally end a run.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LbfgsConfig:
    history_size: int = 10
    max_iters: int = 30
    learning_rate: float = 1.0  # initial trial step scale for the line search
    tol_grad: float = 1e-32
    tol_param: float = 1e-32
    tol_curvature: float = 1e-32
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    ls_max_evals: int = 25

    def __post_init__(self):
        if not (0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0):
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.history_size < 1 or self.max_iters < 0:
            raise ValueError("history_size >= 1 and max_iters >= 0 required")


@dataclass
class OptTrace:
    """Per-iteration optimization record."""

    iters: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    func_evals: list = field(default_factory=list)
    iterates: list | None = None
    stop_reason: str = ""
    line_search_failed: bool = False

    def record(self, it, loss, gnorm, step, evals, x=None):
        self.iters.append(it)
        self.losses.append(float(loss))
        self.grad_norms.append(float(gnorm))
        self.step_sizes.append(float(step))
        self.func_evals.append(int(evals))
        if self.iterates is not None and x is not None:
            self.iterates.append(x.copy())

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loss", "grad_norm", "step_size", "func_evals"])
            w.writerows(
                zip(self.iters, self.losses, self.grad_norms,
                    self.step_sizes, self.func_evals)
            )


def _two_loop(g, s_hist, y_hist, rho_hist):
    """L-BFGS search direction: -H g with the stored curvature pairs and
    initial scaling gamma = s.y / y.y from the newest pair."""
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
    r = gamma * q
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s
    return -r


def _quad_interp(a_lo, f_lo, d_lo, a_hi, f_hi):
    denom = f_hi - f_lo - d_lo * (a_hi - a_lo)
    if denom == 0 or not np.isfinite(denom):
        return None
    a = a_lo - 0.5 * d_lo * (a_hi - a_lo) ** 2 / denom
    return a if np.isfinite(a) else None


def _zoom(fd, f0, d0, c1, c2, a_lo, f_lo, d_lo, a_hi, f_hi, budget):
    """Nocedal-Wright zoom: shrink [a_lo, a_hi] onto a strong-Wolfe point.
    a_lo always satisfies sufficient decrease and carries the lower value;
    the bounds are not necessarily ordered."""
    evals = 0
    while evals < budget:
        span = a_hi - a_lo
        a = _quad_interp(a_lo, f_lo, d_lo, a_hi, f_hi)
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        if a is None or not (lo + 0.1 * abs(span) <= a <= hi - 0.1 * abs(span)):
            a = 0.5 * (a_lo + a_hi)
        f, d = fd(a)
        evals += 1
        if not np.isfinite(f) or f > f0 + c1 * a * d0 or f >= f_lo:
            a_hi, f_hi = a, f
        else:
            if abs(d) <= -c2 * d0:
                return a, f, evals
            if d * (a_hi - a_lo) >= 0:
                a_hi, f_hi = a_lo, f_lo
            a_lo, f_lo, d_lo = a, f, d
        if abs(a_hi - a_lo) <= 1e-16 * max(1.0, abs(a_lo)):
            break
    return None


def _wolfe(fd, f0, d0, alpha0, c1, c2, max_evals):
    """Bracketing phase of the strong-Wolfe search on the 1-D restriction.

    ``fd(a)`` returns (value, slope) at step a. Returns (alpha, f, evals) or
    None when no conforming step exists within the evaluation budget.
    """
    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = alpha0
    evals = 0
    first = True
    while evals < max_evals:
        f, d = fd(a)
        evals += 1
        if not np.isfinite(f) or f > f0 + c1 * a * d0 or (not first and f >= f_prev):
            out = _zoom(fd, f0, d0, c1, c2, a_prev, f_prev, d_prev, a, f,
                        max_evals - evals)
            return None if out is None else (out[0], out[1], evals + out[2])
        if abs(d) <= -c2 * d0:
            return a, f, evals
        if d >= 0:
            out = _zoom(fd, f0, d0, c1, c2, a, f, d, a_prev, f_prev,
                        max_evals - evals)
            return None if out is None else (out[0], out[1], evals + out[2])
        a_prev, f_prev, d_prev = a, f, d
        a = 2.0 * a
        first = False
    return None


def line_search_strong_wolfe(phi, dphi, c1=1e-4, c2=0.9, alpha0=1.0, max_evals=25):
    """Find a step satisfying the strong Wolfe conditions for a 1-D function.

    ``phi(a)`` is the value along the ray and ``dphi(a)`` its slope; requires
    phi'(0) < 0. Returns the step, or None when no conforming point was found
    within the evaluation budget.
    """
    f0 = float(phi(0.0))
    d0 = float(dphi(0.0))
    if not d0 < 0:
        raise ValueError("not a descent direction: phi'(0) must be negative")
    out = _wolfe(lambda a: (float(phi(a)), float(dphi(a))),
                 f0, d0, alpha0, c1, c2, max_evals)
    return None if out is None else out[0]


def minimize(objective, x0, cfg: LbfgsConfig | None = None, record_iterates=False):
    """Run L-BFGS from x0; returns (best-seen x, OptTrace).

    Curvature pairs with s.y <= tol_curvature * |s||y| are skipped. A failed
    line search falls back to the steepest-descent direction once; a second
    failure ends the run with the best-seen point and a flag on the trace.
    """
    cfg = cfg or LbfgsConfig()
    x = np.asarray(x0, dtype=float).copy()
    trace = OptTrace(iterates=[] if record_iterates else None)

    nevals = 0
    best = {"f": np.inf, "x": x.copy()}

    def fg(z):
        nonlocal nevals
        f, g = objective(z)
        nevals += 1
        if np.isfinite(f) and f < best["f"]:
            best["f"] = f
            best["x"] = z.copy()
        return f, np.asarray(g, dtype=float)

    f, g = fg(x)
    if not (np.isfinite(f) and np.isfinite(g).all()):
        raise ValueError("objective is not finite at the starting point")

    s_hist, y_hist, rho_hist = deque(), deque(), deque()
    for it in range(cfg.max_iters):
        if (np.abs(g).max() if g.size else 0.0) <= cfg.tol_grad:
            trace.stop_reason = "grad_tol"
            break
        d = _two_loop(g, s_hist, y_hist, rho_hist) if s_hist else -g
        dd = float(g @ d)
        if not np.isfinite(dd) or dd >= 0:
            # stale curvature produced a non-descent direction; start over
            s_hist.clear(); y_hist.clear(); rho_hist.clear()
            d = -g
            dd = float(g @ d)
        first_scale = min(1.0, 1.0 / max(np.abs(g).sum(), 1e-300))
        alpha0 = cfg.learning_rate * (first_scale if it == 0 else 1.0)

        def make_fd(direction):
            grads = {}

            def fd(a):
                fa, ga = fg(x + a * direction)
                grads[a] = ga
                return fa, float(ga @ direction)

            return fd, grads

        fd, cell = make_fd(d)
        res = _wolfe(fd, f, dd, alpha0, cfg.wolfe_c1, cfg.wolfe_c2,
                     cfg.ls_max_evals)
        if res is None and s_hist:
            s_hist.clear(); y_hist.clear(); rho_hist.clear()
            d = -g
            dd = float(g @ d)
            fd, cell = make_fd(d)
            res = _wolfe(fd, f, dd, cfg.learning_rate * first_scale,
                         cfg.wolfe_c1, cfg.wolfe_c2, cfg.ls_max_evals)
        if res is None:
            trace.line_search_failed = True
            trace.stop_reason = "line_search_failed"
            break
        alpha, f_new, _ = res
        g_new = cell[alpha]
        s = alpha * d
        y = g_new - g
        sy = float(s @ y)
        if sy > cfg.tol_curvature * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s); y_hist.append(y); rho_hist.append(1.0 / sy)
            while len(s_hist) > cfg.history_size:
                s_hist.popleft(); y_hist.popleft(); rho_hist.popleft()
        x = x + s
        f, g = f_new, g_new
        trace.record(it, f, np.linalg.norm(g), alpha, nevals, x)
        if np.abs(s).max() <= cfg.tol_param:
            trace.stop_reason = "param_tol"
            break
    if not trace.stop_reason:
        trace.stop_reason = "max_iters"
    return best["x"], trace
