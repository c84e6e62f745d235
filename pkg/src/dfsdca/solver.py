"""Dual-free stochastic dual coordinate ascent with arbitrary mini-batching.

The solver keeps a pseudo-dual scalar alpha_i per example and a dense primal
vector w tied together by w = (1/(lam*n)) sum_i alpha_i A_i. Each iteration
draws a subset S of examples, moves every alpha_i (i in S) toward
-phi_i'(A_i^T w) by the convex-combination weight theta/p_i, and applies the
matching sparse correction to w so the tie-in survives the update.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .losses import LossSpec, SmoothnessConstants, smoothness_constants
from .sampling import SamplingScheme

#: slack on the convex-combination guard theta/p_i <= 1
_GUARD_TOL = 1e-12


class DivergenceError(RuntimeError):
    """Objective blew past the runaway threshold; the stepsize violates the
    theory or the instance breaks the average-convexity precondition."""


@dataclass(eq=False)
class ProblemSpec:
    dataset: Dataset
    loss: LossSpec
    lam: float
    smoothness: SmoothnessConstants

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("regularization lam must be positive")
        if self.loss.n != self.dataset.n:
            raise ValueError("loss and dataset sizes disagree")


def make_problem(dataset: Dataset, loss: LossSpec, lam: float) -> ProblemSpec:
    return ProblemSpec(dataset, loss, lam, smoothness_constants(loss, dataset))


def primal_value(problem: ProblemSpec, w: np.ndarray) -> float:
    margins = problem.dataset.margins(w)
    idx = np.arange(problem.dataset.n)
    return float(
        problem.loss.values(idx, margins).mean()
        + 0.5 * problem.lam * np.dot(w, w)
    )


def primal_gradient(problem: ProblemSpec, w: np.ndarray) -> np.ndarray:
    ds = problem.dataset
    margins = ds.margins(w)
    g = problem.loss.gradients(np.arange(ds.n), margins)
    return ds.combine(g) / ds.n + problem.lam * w


def theta_convex(p, v, l, lam: float, n: int) -> float:
    """Largest stepsize admitted for convex losses:
    min_i p_i * n * lam / (l_i v_i + n lam)."""
    p, v, l = (np.asarray(x, dtype=np.float64) for x in (p, v, l))
    if lam <= 0 or n <= 0 or np.any(p <= 0) or np.any(v <= 0) or np.any(l <= 0):
        raise ValueError("all stepsize inputs must be positive")
    return float(np.min(p * n * lam / (l * v + n * lam)))


def theta_nonconvex(p, v, L_per, lam: float, n: int) -> float:
    """Largest stepsize admitted when only the average loss is convex:
    min_i p_i * n * lam^2 / (L_i^2 v_i + n lam^2)."""
    p, v, L_per = (np.asarray(x, dtype=np.float64) for x in (p, v, L_per))
    if lam <= 0 or n <= 0 or np.any(p <= 0) or np.any(v <= 0) or np.any(L_per <= 0):
        raise ValueError("all stepsize inputs must be positive")
    lam2 = lam * lam
    return float(np.min(p * n * lam2 / (L_per**2 * v + n * lam2)))


def convex_rate_bound(p, v, l, lam: float, n: int) -> float:
    """Iteration-count factor max_i (1/p_i + l_i v_i / (lam p_i n)); equals
    1/theta at the convex stepsize bound."""
    p, v, l = (np.asarray(x, dtype=np.float64) for x in (p, v, l))
    return float(np.max(1.0 / p + l * v / (lam * p * n)))


def nonconvex_rate_bound(p, v, L_per, lam: float, n: int) -> float:
    p, v, L_per = (np.asarray(x, dtype=np.float64) for x in (p, v, L_per))
    return float(np.max(1.0 / p + L_per**2 * v / (lam * lam * p * n)))


@dataclass(eq=False)
class SolverState:
    w: np.ndarray
    alpha: np.ndarray
    t: int = 0
    grad_evals: int = 0

    def copy(self) -> "SolverState":
        return SolverState(self.w.copy(), self.alpha.copy(), self.t, self.grad_evals)


def init_state(problem: ProblemSpec, alpha0=None) -> SolverState:
    n = problem.dataset.n
    if alpha0 is None:
        alpha = np.zeros(n)
    else:
        alpha = np.array(alpha0, dtype=np.float64)
        if alpha.shape != (n,):
            raise ValueError("alpha0 must have length n")
    w = problem.dataset.combine(alpha) / (problem.lam * n)
    return SolverState(w, alpha)


def relation_residual(problem: ProblemSpec, state: SolverState) -> float:
    """|| w - (1/(lam n)) sum_i alpha_i A_i || / (1 + ||w||)."""
    exact = problem.dataset.combine(state.alpha) / (problem.lam * problem.dataset.n)
    return float(
        np.linalg.norm(state.w - exact) / (1.0 + np.linalg.norm(state.w))
    )


def resync(problem: ProblemSpec, state: SolverState) -> None:
    """Recompute w from alpha exactly, clearing accumulated drift."""
    state.w = problem.dataset.combine(state.alpha) / (problem.lam * problem.dataset.n)


def step(
    problem: ProblemSpec,
    state: SolverState,
    subset: np.ndarray,
    p: np.ndarray,
    theta: float,
) -> SolverState:
    """One iteration on the given subset, in place.

    All gradients are evaluated against the pre-update w; the w correction
    touches only the union of the drawn examples' supports.
    """
    subset = np.asarray(subset, dtype=np.int64)
    q = theta / p[subset]
    if np.any(q > 1.0 + _GUARD_TOL):
        bad = int(subset[int(np.argmax(q))])
        raise ValueError(
            f"theta={theta} exceeds p_{bad}={p[bad]}: alpha update would "
            "leave the convex combination"
        )
    ds, loss = problem.dataset, problem.loss
    w, alpha = state.w, state.alpha
    margins = np.array([ds.margin(i, w) for i in subset])
    grads = loss.gradients(subset, margins)
    delta = grads + alpha[subset]
    alpha[subset] -= q * delta
    coef = delta * theta / (ds.n * problem.lam * p[subset])
    for j, i in enumerate(subset):
        ex = ds.examples[i]
        w[ex.indices] -= coef[j] * ex.values
    state.t += 1
    state.grad_evals += int(subset.size)
    return state


@dataclass
class SolverConfig:
    theta: float | str = "auto-convex"
    epochs: int = 10
    seed: int = 0
    resync_period: int | None = None  # default: n iterations
    trace_period: int | None = None   # default: one epoch-equivalent

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def resolve_theta(problem: ProblemSpec, scheme: SamplingScheme, theta) -> float:
    sm = problem.smoothness
    n = problem.dataset.n
    if theta == "auto-convex":
        return theta_convex(scheme.p, scheme.v, sm.l, problem.lam, n)
    if theta == "auto-nonconvex":
        return theta_nonconvex(scheme.p, scheme.v, sm.L_per, problem.lam, n)
    theta = float(theta)
    p_min = float(np.min(scheme.p))
    if not (0.0 < theta <= p_min * (1.0 + _GUARD_TOL)):
        raise ValueError(f"theta must lie in (0, min p_i = {p_min}]")
    return theta


@dataclass
class TraceRecord:
    t: int
    epoch: float
    primal: float
    residual: float
    subopt: float | None = None
    B: float | None = None
    D: float | None = None
    E: float | None = None


@dataclass
class Trace:
    theta: float
    expected_size: float
    records: list[TraceRecord]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)


def run(
    problem: ProblemSpec,
    scheme: SamplingScheme,
    config: SolverConfig,
    reference=None,
    alpha0=None,
) -> tuple[SolverState, Trace]:
    """Run for epochs * n / E|S| iterations, tracing periodically.

    With a reference solution attached each trace record carries the
    suboptimality and the primal/dual distance potentials. Deterministic for
    a fixed seed. Raises DivergenceError if the objective runs away.
    """
    from .diagnostics import potentials  # runtime import, avoids a cycle

    theta = resolve_theta(problem, scheme, config.theta)
    n = problem.dataset.n
    e_size = scheme.expected_size
    total = math.ceil(config.epochs * n / e_size)
    resync_every = config.resync_period if config.resync_period else n
    trace_every = (
        config.trace_period if config.trace_period
        else max(1, round(n / e_size))
    )
    rng = np.random.default_rng(config.seed)
    state = init_state(problem, alpha0)
    trace = Trace(theta=theta, expected_size=e_size, records=[])

    def record():
        primal = primal_value(problem, state.w)
        rec = TraceRecord(
            t=state.t,
            epoch=state.t * e_size / n,
            primal=primal,
            residual=relation_residual(problem, state),
        )
        if reference is not None:
            pot = potentials(state, reference, problem.smoothness, problem.lam)
            rec.subopt = primal - reference.P_star
            rec.B, rec.D, rec.E = pot.B, pot.D, pot.E
        trace.records.append(rec)
        return primal

    runaway = 1e6 * abs(record()) + 1e6
    for t in range(1, total + 1):
        subset = scheme.draw(rng)
        step(problem, state, subset, scheme.p, theta)
        if t % resync_every == 0:
            resync(problem, state)
        if t % trace_every == 0 or t == total:
            primal = record()
            if not math.isfinite(primal) or abs(primal) > runaway:
                raise DivergenceError(
                    f"P(w)={primal:.3e} left the runaway bound {runaway:.3e} "
                    f"at iteration {t}: stepsize inconsistent with the theory "
                    "or average loss not convex"
                )
    return state, trace


def save_state(state: SolverState, path) -> None:
    """Snapshot (w, alpha, t) as JSON for later resumption."""
    payload = {
        "t": state.t,
        "w": state.w.tolist(),
        "alpha": state.alpha.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_state(path) -> SolverState:
    with open(path) as fh:
        payload = json.load(fh)
    return SolverState(
        np.array(payload["w"], dtype=np.float64),
        np.array(payload["alpha"], dtype=np.float64),
        int(payload["t"]),
    )
