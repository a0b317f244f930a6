"""Scaled conjugate gradient minimization and active-set sparsification.

The SCG routine follows Moller's comparison-free algorithm: curvature is
estimated from a finite gradient difference along the search direction and a
Levenberg-Marquardt scale is adapted from the comparison ratio, so no line
search is needed.  Restricting objective evaluation to a size-M active set
and rotating through ceil(N/M) subsets per epoch keeps one training epoch at
O(N M^2).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError


@dataclass
class OptimTrace:
    """Per-iteration record of one SCG run."""

    objectives: list[float] = field(default_factory=list)
    gradnorms: list[float] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    status: str = "max-iters"

    def accepted_objectives(self) -> list[float]:
        return [o for o, a in zip(self.objectives, self.accepted) if a]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["iteration", "objective", "gradnorm", "accepted"])
        for i, (o, g, a) in enumerate(zip(self.objectives, self.gradnorms, self.accepted)):
            w.writerow([i, repr(o), repr(g), int(a)])
        return buf.getvalue()


def scg_minimize(f, g, x0, opts) -> tuple[np.ndarray, OptimTrace]:
    """Minimize f with gradient g from x0 under OptimOptions opts.

    Deterministic given (x0, opts).  Accepted steps never increase the
    objective.  Raises NumericalError (with .trace attached) if the
    objective or gradient turns non-finite at an accepted point.
    """
    x = np.array(x0, dtype=float).ravel().copy()
    trace = OptimTrace()

    fnow = float(f(x))
    if not np.isfinite(fnow):
        raise NumericalError(f"objective is non-finite at the starting point ({fnow})")
    fold = fnow
    gradnew = np.asarray(g(x), dtype=float).copy()
    _check_finite_grad(gradnew, trace)
    d = -gradnew

    success = True
    nsuccess = 0
    beta = 1.0
    beta_min, beta_max = 1e-15, 1e100
    mu = kappa = theta = 0.0

    for _ in range(opts.max_iters):
        gradnorm = float(np.linalg.norm(gradnew))
        if gradnorm < opts.grad_tol:
            trace.status = "converged-grad"
            break

        if success:
            mu = float(d @ gradnew)
            if mu >= 0:
                d = -gradnew
                mu = float(d @ gradnew)
            kappa = float(d @ d)
            if kappa < np.finfo(float).eps:
                trace.status = "converged-grad"
                break
            sigma = opts.sigma0 / np.sqrt(kappa)
            gplus = np.asarray(g(x + sigma * d), dtype=float)
            theta = float(d @ (gplus - gradnew)) / sigma

        # Levenberg-Marquardt curvature correction keeps the step scale positive
        delta = theta + beta * kappa
        if delta <= 0:
            delta = beta * kappa
            beta = beta - theta / kappa
        alpha = -mu / delta

        fnew = float(f(x + alpha * d))
        if np.isnan(fnew):
            raise _abort(trace, "objective is NaN at a trial point")
        denom = alpha * mu  # negative along a descent direction
        comparison = 2.0 * (fnew - fold) / denom if denom != 0 else -1.0

        if comparison >= 0:
            success = True
            nsuccess += 1
            x = x + alpha * d
            fnow = fnew
        else:
            success = False
            fnow = fold

        trace.objectives.append(fnow)
        trace.gradnorms.append(gradnorm)
        trace.accepted.append(success)

        if success:
            if abs(fnew - fold) < opts.obj_tol * max(1.0, abs(fold)):
                trace.status = "converged-obj"
                fold = fnew
                gradnew = np.asarray(g(x), dtype=float)
                break
            fold = fnew
            gradold = gradnew
            gradnew = np.asarray(g(x), dtype=float).copy()
            _check_finite_grad(gradnew, trace)
            if float(gradnew @ gradnew) == 0.0:
                trace.status = "converged-grad"
                break

        if comparison < 0.25:
            beta = min(4.0 * beta, beta_max)
        if comparison > 0.75:
            beta = max(0.5 * beta, beta_min)

        if nsuccess == x.size:
            d = -gradnew
            nsuccess = 0
        elif success:
            gamma = float((gradold - gradnew) @ gradnew) / mu
            d = gamma * d - gradnew

    return x, trace


def _check_finite_grad(grad, trace):
    if not np.all(np.isfinite(grad)):
        raise _abort(trace, "gradient is non-finite at an accepted point")


def _abort(trace: OptimTrace, message: str) -> NumericalError:
    trace.status = "aborted"
    err = NumericalError(message)
    err.trace = trace
    return err


def check_gradients(f, g, x, h: float = 1e-5) -> tuple[float, int]:
    """Worst relative error between g and central differences of f, with its index."""
    if h <= 0:
        raise DataError("finite-difference step must be > 0")
    x = np.array(x, dtype=float).ravel()
    analytic = np.asarray(g(x), dtype=float).ravel()
    worst = 0.0
    worst_idx = 0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd = (float(f(x + e)) - float(f(x - e))) / (2.0 * h)
        denom = max(abs(fd), abs(analytic[i]), 1e-8)
        err = abs(analytic[i] - fd) / denom
        if err > worst:
            worst, worst_idx = err, i
    return worst, worst_idx


def select_active_set(
    n: int,
    m: int,
    policy: str = "random",
    seed: int = 0,
    coords: np.ndarray | None = None,
) -> np.ndarray:
    """Choose M active indices out of N, deterministically per seed."""
    if not 1 <= m <= n:
        raise DataError(f"active-set size {m} out of range [1, {n}]")
    if m == n:
        return np.arange(n)
    if policy == "random":
        rng = np.random.default_rng(seed)
        return np.sort(rng.choice(n, size=m, replace=False))
    if policy == "farthest-point":
        if coords is None:
            raise DataError("farthest-point policy needs coordinates")
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        center = coords.mean(axis=0)
        chosen = [int(np.argmax(np.sum((coords - center) ** 2, axis=1)))]
        mindist = np.sum((coords - coords[chosen[0]]) ** 2, axis=1)
        while len(chosen) < m:
            nxt = int(np.argmax(mindist))
            chosen.append(nxt)
            mindist = np.minimum(mindist, np.sum((coords - coords[nxt]) ** 2, axis=1))
        return np.sort(np.array(chosen, dtype=np.intp))
    raise DataError(f"unknown active-set policy {policy!r}")


def restrict_rows(a: np.ndarray, indices: np.ndarray) -> np.ndarray:
    return np.asarray(a)[np.asarray(indices, dtype=np.intp)]


def restrict_square(s: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Principal submatrix on the active indices."""
    idx = np.asarray(indices, dtype=np.intp)
    return np.asarray(s)[np.ix_(idx, idx)]


def restrict_pairs(pairs, indices) -> tuple[tuple[int, int], ...]:
    """Keep pairs with both endpoints active, remapped to active-local indices."""
    pos = {int(g): l for l, g in enumerate(np.asarray(indices, dtype=np.intp))}
    kept = []
    for i, j in pairs:
        if i in pos and j in pos:
            kept.append((pos[i], pos[j]))
    return tuple(kept)
