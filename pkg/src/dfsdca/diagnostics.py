"""Reference solutions, distance potentials, and executable validators.

The validators turn the method's supporting identities and one-step bounds
into numerical checks: exact subset enumeration replaces expectations for
schemes with small support, so equalities can be asserted to ~1e-10 instead
of statistically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, SparseExample, gen_synthetic
from .losses import (
    LOGISTIC,
    QUADFAM,
    SQUARED,
    LossSpec,
    build_nonconvex_instance,
    logistic_loss,
    squared_loss,
)
from .sampling import (
    SamplingScheme,
    naive_chunks,
    chunked_sampling,
    serial_uniform,
    serial_weighted,
    tau_nice,
    validate_eso,
)
from .solver import (
    ProblemSpec,
    SolverState,
    init_state,
    make_problem,
    primal_gradient,
    primal_value,
    step,
    theta_convex,
    theta_nonconvex,
)


class ReferenceError(RuntimeError):
    """Oracle hit its iteration cap; carries the best gradient norm."""

    def __init__(self, message: str, grad_norm: float):
        super().__init__(message)
        self.grad_norm = grad_norm


@dataclass(eq=False)
class ReferenceSolution:
    """High-precision minimizer w*, matched duals alpha_i* = -phi_i'(A_i^T w*),
    optimal value, and the gradient norm actually achieved."""

    w: np.ndarray
    alpha: np.ndarray
    P_star: float
    grad_norm: float

    def to_json(self) -> dict:
        return {
            "w": self.w.tolist(),
            "alpha": self.alpha.tolist(),
            "P_star": self.P_star,
            "grad_norm": self.grad_norm,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ReferenceSolution":
        return cls(
            np.array(payload["w"], dtype=np.float64),
            np.array(payload["alpha"], dtype=np.float64),
            float(payload["P_star"]),
            float(payload["grad_norm"]),
        )


def _matched_alpha(problem: ProblemSpec, w: np.ndarray) -> np.ndarray:
    # Margins via the same per-example dot products the solver step uses,
    # so the fixed point is exact in floating point, not just to rounding.
    ds = problem.dataset
    margins = np.array([ds.margin(i, w) for i in range(ds.n)])
    return -problem.loss.gradients(np.arange(ds.n), margins)


def _exact_quadratic_solve(problem: ProblemSpec) -> np.ndarray:
    ds, loss = problem.dataset, problem.loss
    d = ds.d
    if loss.kind == SQUARED:
        curv, lin = np.ones(ds.n), -loss.y
    else:
        curv, lin = loss.c, loss.b
    H = np.zeros((d, d))
    for ci, ex in zip(curv, ds.examples):
        if ex.nnz:
            H[np.ix_(ex.indices, ex.indices)] += ci * np.outer(ex.values, ex.values)
    H = H / ds.n + problem.lam * np.eye(d)
    rhs = -ds.combine(lin) / ds.n
    return np.linalg.solve(H, rhs)


def reference_solution(
    problem: ProblemSpec,
    tol: float | None = None,
    method: str = "auto",
    max_iter: int = 500_000,
) -> ReferenceSolution:
    """Deterministic oracle for the regularized optimum.

    Quadratic objectives (squared and quadratic-family losses) admit an
    exact linear solve; otherwise backtracking gradient descent runs until
    ||grad P|| <= tol. The default tolerance is 1e-12 * (1 + |P(0)|),
    additionally tightened so the recovered relation
    w* = (1/(lam n)) sum_i alpha_i* A_i holds to 1e-11 even for small lam.
    """
    d = problem.dataset.d
    p0 = primal_value(problem, np.zeros(d))
    if tol is None:
        tol = 1e-12 * (1.0 + abs(p0))
    target = min(tol, problem.lam * 1e-11)

    quadratic = problem.loss.kind in (SQUARED, QUADFAM)
    if method == "exact" or (method == "auto" and quadratic):
        if not quadratic:
            raise ValueError("exact solve only applies to quadratic losses")
        w = _exact_quadratic_solve(problem)
    elif method in ("gd", "auto"):
        w = _gradient_descent(problem, target, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")

    grad_norm = float(np.linalg.norm(primal_gradient(problem, w)))
    if grad_norm > tol:
        raise ReferenceError(
            f"oracle reached ||grad|| = {grad_norm:.3e} > tol = {tol:.3e}",
            grad_norm,
        )
    alpha = _matched_alpha(problem, w)
    return ReferenceSolution(w, alpha, primal_value(problem, w), grad_norm)


def _gradient_descent(problem: ProblemSpec, target: float, max_iter: int) -> np.ndarray:
    ds = problem.dataset
    # Certified objective smoothness (trace bound on the loss Hessian plus
    # the regularizer): steps of 1/L_up always decrease the objective and
    # contract the gradient norm by (1 - lam/L_up) per iteration.
    L_up = float(np.sum(problem.loss.l * ds.norms**2)) / ds.n + problem.lam
    s_safe = 1.0 / L_up
    w = np.zeros(ds.d)
    f = primal_value(problem, w)
    s = s_safe
    eps_f = 8.0 * np.finfo(float).eps
    polish = False
    for _ in range(max_iter):
        g = primal_gradient(problem, w)
        gnorm_sq = float(np.dot(g, g))
        if math.sqrt(gnorm_sq) <= target:
            return w
        # Armijo can only certify a decrease while it is resolvable in
        # float; past that point adaptive steps at 2/L_up can oscillate, so
        # finish with plain steps at the safe size.
        if not polish and 0.5 * s_safe * gnorm_sq < eps_f * max(1.0, abs(f)):
            polish = True
        if polish:
            w = w - s_safe * g
            continue
        s = max(2.0 * s, s_safe)
        while True:
            w_new = w - s * g
            f_new = primal_value(problem, w_new)
            if f_new <= f - 0.5 * s * gnorm_sq or s <= s_safe:
                break
            s = max(0.5 * s, s_safe)
        w, f = w_new, f_new
    raise ReferenceError(
        "iteration cap reached",
        float(np.linalg.norm(primal_gradient(problem, w))),
    )


@dataclass(frozen=True)
class Potentials:
    """Primal distance B, per-example dual distances C_i, and the two
    Lyapunov combinations driving the convergence statements."""

    B: float
    C: np.ndarray
    D: float
    E: float


def potentials(
    state: SolverState,
    reference: ReferenceSolution,
    smoothness,
    lam: float,
) -> Potentials:
    dw = state.w - reference.w
    B = float(np.dot(dw, dw))
    C = (state.alpha - reference.alpha) ** 2
    n = C.size
    L2 = smoothness.L_per**2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where((L2 == 0.0) & (C == 0.0), 0.0, C / L2)
    D = 0.5 * lam * B + 0.5 * lam / n * float(np.sum(ratio))
    E = 0.5 * lam * B + 0.5 / n * float(np.sum(C / smoothness.l))
    return Potentials(B, C, D, E)


def decay_envelope(X0: float, theta: float, t) -> np.ndarray | float:
    """Theoretical ceiling X0 * exp(-theta * t) on the expected potential."""
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    out = X0 * np.exp(-theta * t)
    return float(out) if out.ndim == 0 else out


def iterations_to_target(
    rate_bound: float, L: float, lam: float, X0: float, eps: float
) -> float:
    """Iterations after which the expected suboptimality is below eps,
    per the complexity statements: rate * log((L + lam) X0 / (lam eps))."""
    return rate_bound * math.log((L + lam) * X0 / (lam * eps))


def _enumerated_states(problem, state, theta, scheme):
    atoms = scheme.atoms()
    if atoms is None:
        raise ValueError("scheme support too large for exact enumeration")
    for subset, prob in atoms:
        nxt = step(problem, state.copy(), np.array(subset, dtype=np.int64),
                   scheme.p, theta)
        yield prob, nxt


def verify_lemma1_C(
    problem: ProblemSpec,
    state: SolverState,
    theta: float,
    scheme: SamplingScheme,
    reference: ReferenceSolution,
) -> float:
    """Exact-expectation check of the dual-distance evolution identity.

    Enumerates the scheme's support, applies one step per outcome, and
    compares E[C_i_old - C_i_new] against
    theta * [ |a_i - a_i*|^2 - |u_i - a_i*|^2 + (1 - theta/p_i) z_i^2 ]
    with u_i = -phi_i'(A_i^T w_old), z_i = a_i - u_i. Returns the worst
    absolute discrepancy over i; this is an equality, so ~1e-10 is expected.
    """
    ds = problem.dataset
    alpha, w = state.alpha, state.w
    u = _matched_alpha(problem, w)
    z = alpha - u
    a_star = reference.alpha
    rhs = theta * (
        (alpha - a_star) ** 2
        - (u - a_star) ** 2
        + (1.0 - theta / scheme.p) * z**2
    )
    C_old = (alpha - a_star) ** 2
    lhs = np.zeros(ds.n)
    for prob, nxt in _enumerated_states(problem, state, theta, scheme):
        lhs += prob * (C_old - (nxt.alpha - a_star) ** 2)
    return float(np.max(np.abs(lhs - rhs)))


def verify_lemma1_B(
    problem: ProblemSpec,
    state: SolverState,
    theta: float,
    scheme: SamplingScheme,
    reference: ReferenceSolution,
) -> float:
    """Exact-expectation slack of the primal-distance evolution bound.

    Valid at states satisfying the w/alpha tie-in. Returns
    E[B_old - B_new] - [(2 theta/lam) (w-w*)^T grad P(w)
    - theta^2/(n lam)^2 * sum_i (v_i/p_i) z_i^2], which must be >= ~-1e-10.
    """
    ds = problem.dataset
    w = state.w
    u = _matched_alpha(problem, w)
    z = state.alpha - u
    dw = w - reference.w
    B_old = float(np.dot(dw, dw))
    lhs = 0.0
    for prob, nxt in _enumerated_states(problem, state, theta, scheme):
        dn = nxt.w - reference.w
        lhs += prob * (B_old - float(np.dot(dn, dn)))
    n, lam = ds.n, problem.lam
    rhs = (
        2.0 * theta / lam * float(np.dot(dw, primal_gradient(problem, w)))
        - theta**2 / (n * lam) ** 2 * float(np.sum(scheme.v / scheme.p * z**2))
    )
    return lhs - rhs


def verify_lemma2(
    problem: ProblemSpec,
    w: np.ndarray,
    reference: ReferenceSolution,
) -> float:
    """Slack of the smoothness-convexity bound
    (1/n) sum (1/l_i) |phi_i'(A_i^T w) - phi_i'(A_i^T w*)|^2
    <= 2 (P(w) - P(w*) - lam/2 ||w - w*||^2); must be >= ~-1e-10, and is
    zero for purely quadratic losses.
    """
    if not problem.loss.convex:
        raise ValueError("bound requires every individual loss to be convex")
    ds = problem.dataset
    idx = np.arange(ds.n)
    g_w = problem.loss.gradients(idx, ds.margins(w))
    g_star = problem.loss.gradients(idx, ds.margins(reference.w))
    lhs = float(np.mean((g_w - g_star) ** 2 / problem.loss.l))
    dw = w - reference.w
    rhs = 2.0 * (
        primal_value(problem, w)
        - reference.P_star
        - 0.5 * problem.lam * float(np.dot(dw, dw))
    )
    return rhs - lhs


def verify_contraction(
    problem: ProblemSpec,
    state: SolverState,
    scheme: SamplingScheme,
    reference: ReferenceSolution,
    potential: str = "E",
) -> float:
    """Slack of the one-step expected contraction at the theoretical
    stepsize: (1 - theta) X_old - E[X_new] for X in {E, D}; must be
    >= ~-1e-10 at states satisfying the w/alpha tie-in."""
    sm, lam, n = problem.smoothness, problem.lam, problem.dataset.n
    if potential == "E":
        if not problem.loss.convex:
            raise ValueError("E-contraction requires convex individual losses")
        theta = theta_convex(scheme.p, scheme.v, sm.l, lam, n)
    elif potential == "D":
        theta = theta_nonconvex(scheme.p, scheme.v, sm.L_per, lam, n)
    else:
        raise ValueError("potential must be 'E' or 'D'")
    x_old = getattr(potentials(state, reference, sm, lam), potential)
    x_new = 0.0
    for prob, nxt in _enumerated_states(problem, state, theta, scheme):
        x_new += prob * getattr(potentials(nxt, reference, sm, lam), potential)
    return (1.0 - theta) * x_old - x_new


def random_relation_state(
    problem: ProblemSpec, rng: np.random.Generator, scale: float = 1.0
) -> SolverState:
    """Random duals with w recomputed from them, so the tie-in relation
    holds exactly at the returned state."""
    return init_state(problem, scale * rng.standard_normal(problem.dataset.n))


@dataclass
class CheckpointRow:
    t: int
    mean: float
    stderr: float
    envelope: float
    passed: bool


@dataclass
class ConvergenceReport:
    potential: str
    theta: float
    rows: list[CheckpointRow]
    theory_T: float
    first_passage_t: float  # nan when the target was never reached
    all_passed: bool = field(init=False)

    def __post_init__(self):
        self.all_passed = all(r.passed for r in self.rows)


def convergence_report(
    traces,
    theta: float,
    potential: str = "E",
    L: float | None = None,
    lam: float | None = None,
    eps: float | None = None,
) -> ConvergenceReport:
    """Compare mean potential trajectories against the exponential envelope.

    A checkpoint passes when mean <= envelope * (1 + 2 * stderr / mean).
    With L, lam and eps given, also reports the theoretical iteration count
    (1/theta) * log((L + lam) X0 / (lam eps)) next to the first checkpoint
    whose mean suboptimality is below eps.
    """
    if len(traces) < 2:
        raise ValueError("need at least 2 seeds to form a mean and stderr")
    ts = traces[0].column("t")
    for tr in traces[1:]:
        if not np.array_equal(tr.column("t"), ts):
            raise ValueError("traces must share their checkpoint grid")
    vals = np.vstack([tr.column(potential) for tr in traces])
    means = vals.mean(axis=0)
    stderrs = vals.std(axis=0, ddof=1) / math.sqrt(vals.shape[0])
    x0 = float(means[0])
    rows = []
    for j, t in enumerate(ts):
        env = decay_envelope(x0, theta, float(t))
        m, se = float(means[j]), float(stderrs[j])
        # the 1e-12 term lets trajectories exactly on the envelope pass
        ok = m <= env * (1.0 + 2.0 * se / m + 1e-12) if m > 0 else True
        rows.append(CheckpointRow(int(t), m, se, env, ok))

    theory_T = math.nan
    first_t = math.nan
    if L is not None and lam is not None and eps is not None:
        theory_T = iterations_to_target(1.0 / theta, L, lam, x0, eps)
        sub = np.vstack([tr.column("subopt") for tr in traces]).mean(axis=0)
        hit = np.nonzero(sub <= eps)[0]
        if hit.size:
            first_t = float(ts[hit[0]])
    return ConvergenceReport(potential, theta, rows, theory_T, first_t)


# ---------------------------------------------------------------------------
# validation suites (driven by the command-line `validate` subcommand)

def _small_problem(rng: np.random.Generator, kind: str):
    n = int(rng.integers(3, 7))
    d = int(rng.integers(2, 6))
    seed = int(rng.integers(0, 2**31))
    if kind == QUADFAM:
        ds, loss = build_nonconvex_instance(n, d, seed)
    else:
        model = "linear-sign" if kind == LOGISTIC else "linear-noise"
        ds = gen_synthetic(n, d, 0.8, model, seed)
        loss = logistic_loss(ds.labels) if kind == LOGISTIC else squared_loss(ds.labels)
    lam = float(rng.uniform(0.5, 2.0))
    return make_problem(ds, loss, lam)


def _small_scheme(rng: np.random.Generator, problem: ProblemSpec) -> SamplingScheme:
    norms = problem.dataset.norms
    n = norms.size
    kind = rng.integers(0, 4)
    if kind == 0:
        return serial_uniform(norms)
    if kind == 1:
        p = rng.dirichlet(np.full(n, 5.0))
        return serial_weighted(norms, p / p.sum())
    if kind == 2:
        return tau_nice(norms, int(rng.integers(2, n + 1)))
    part = naive_chunks(problem.dataset.nnz.tolist())
    return chunked_sampling(norms, part, int(rng.integers(1, part.k + 1)))


def suite_eso(seed: int, datasets: int = 10, trials: int = 5) -> dict:
    rng = np.random.default_rng(seed)
    worst = -math.inf
    count = 0
    for _ in range(datasets):
        ds = gen_synthetic(
            int(rng.integers(5, 30)), int(rng.integers(4, 12)), 0.5,
            "linear-sign", int(rng.integers(0, 2**31)),
        )
        part = naive_chunks(ds.nnz.tolist())
        schemes = [
            serial_uniform(ds.norms),
            tau_nice(ds.norms, min(3, ds.n)),
            chunked_sampling(ds.norms, part, min(2, part.k)),
        ]
        for sc in schemes:
            rep = validate_eso(sc, ds, trials, int(rng.integers(0, 2**31)))
            excess = float(np.max(rep.ratios - 1.0 - 3.0 * rep.stderrs))
            worst = max(worst, excess)
            count += trials
    # An undersized v must be flagged. With identical examples the batch
    # aggregates add coherently, so v_i = |A_i|^2 / tau forces ratio >= 1.8.
    base = SparseExample(np.arange(4), np.ones(4), 4)
    ds = Dataset([base] * 6, np.ones(6))
    sc = tau_nice(ds.norms, 3)
    sc.v = ds.norms**2 / 3.0
    bad = validate_eso(sc, ds, trials, seed)
    detected = bad.max_ratio > 1.0
    return {
        "name": "eso",
        "trials": count,
        "worst": worst,
        "pass": bool(worst <= 1e-12 and detected),
        "extra": {"counterexample_ratio": bad.max_ratio},
    }


def suite_lemma1(seed: int, trials: int = 40, theta_override=None) -> dict:
    rng = np.random.default_rng(seed)
    worst_eq = 0.0
    worst_slack = math.inf
    for _ in range(trials):
        kind = (LOGISTIC, SQUARED)[int(rng.integers(0, 2))]
        problem = _small_problem(rng, kind)
        scheme = _small_scheme(rng, problem)
        ref = reference_solution(problem)
        state = random_relation_state(problem, rng)
        theta = (
            float(theta_override) if theta_override is not None
            else float(rng.uniform(0.1, 1.0) * np.min(scheme.p))
        )
        worst_eq = max(
            worst_eq, verify_lemma1_C(problem, state, theta, scheme, ref)
        )
        worst_slack = min(
            worst_slack, verify_lemma1_B(problem, state, theta, scheme, ref)
        )
    return {
        "name": "lemma1",
        "trials": trials,
        "worst": max(worst_eq, max(0.0, -worst_slack)),
        "pass": bool(worst_eq <= 1e-10 and worst_slack >= -1e-10),
        "extra": {"eq_discrepancy": worst_eq, "min_slack": worst_slack},
    }


def suite_lemma2(seed: int, trials: int = 60) -> dict:
    rng = np.random.default_rng(seed)
    worst = math.inf
    worst_quad = 0.0
    for k in range(trials):
        kind = LOGISTIC if k % 2 else SQUARED
        problem = _small_problem(rng, kind)
        ref = reference_solution(problem)
        w = rng.standard_normal(problem.dataset.d)
        slack = verify_lemma2(problem, w, ref)
        worst = min(worst, slack)
        if kind == SQUARED:
            worst_quad = max(worst_quad, abs(slack))
    return {
        "name": "lemma2",
        "trials": trials,
        "worst": min(worst, -worst_quad),
        "pass": bool(worst >= -1e-10 and worst_quad <= 1e-10),
        "extra": {"min_slack": worst, "quadratic_abs_slack": worst_quad},
    }


def suite_contraction(seed: int, trials: int = 40) -> dict:
    rng = np.random.default_rng(seed)
    worst = math.inf
    for k in range(trials):
        if k % 2:
            problem = _small_problem(rng, QUADFAM)
            potential = "D"
        else:
            problem = _small_problem(rng, LOGISTIC if k % 4 == 0 else SQUARED)
            potential = "E"
        scheme = _small_scheme(rng, problem)
        ref = reference_solution(problem)
        state = random_relation_state(problem, rng)
        worst = min(
            worst, verify_contraction(problem, state, scheme, ref, potential)
        )
    return {
        "name": "contraction",
        "trials": trials,
        "worst": worst,
        "pass": bool(worst >= -1e-10),
    }


def _fd_gradient(f, x: float, h: float = 1e-6) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def suite_gradcheck(seed: int, trials: int = 100) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        y = float(rng.choice((-1.0, 1.0)))
        losses = [
            logistic_loss([y]),
            squared_loss([float(rng.normal())]),
            LossSpec(QUADFAM, c=[float(rng.uniform(0.2, 3.0))],
                     b=[float(rng.normal())]),
        ]
        x = float(rng.normal(scale=3.0))
        for spec in losses:
            g = spec.gradient(0, x)
            fd = _fd_gradient(lambda z: spec.value(0, z), x)
            worst = max(worst, abs(g - fd) / (1.0 + abs(g)))
    # full-objective gradient against central differences
    problem = _small_problem(rng, LOGISTIC)
    for _ in range(5):
        w = rng.standard_normal(problem.dataset.d)
        g = primal_gradient(problem, w)
        for j in range(problem.dataset.d):
            e = np.zeros_like(w)
            e[j] = 1e-6
            fd = (primal_value(problem, w + e) - primal_value(problem, w - e)) / 2e-6
            worst = max(worst, abs(g[j] - fd) / (1.0 + abs(g[j])))
    return {
        "name": "gradcheck",
        "trials": trials,
        "worst": worst,
        "pass": bool(worst <= 1e-5),
    }


def suite_fixedpoint(seed: int, trials: int = 10) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    exact = True
    for k in range(trials):
        problem = _small_problem(rng, (LOGISTIC, SQUARED)[k % 2])
        ref = reference_solution(problem)
        scheme = _small_scheme(rng, problem)
        theta = float(0.5 * np.min(scheme.p))
        state = SolverState(ref.w.copy(), ref.alpha.copy())
        for _ in range(3):
            step(problem, state, scheme.draw(rng), scheme.p, theta)
        exact = exact and np.array_equal(state.w, ref.w) \
            and np.array_equal(state.alpha, ref.alpha)
        ident = problem.dataset.combine(ref.alpha) / (problem.lam * problem.dataset.n)
        worst = max(worst, float(np.linalg.norm(ref.w - ident)))
    return {
        "name": "fixedpoint",
        "trials": trials,
        "worst": worst,
        "pass": bool(exact and worst <= 1e-10),
        "extra": {"exactly_invariant": exact},
    }


ALL_SUITES = {
    "eso": suite_eso,
    "lemma1": suite_lemma1,
    "lemma2": suite_lemma2,
    "contraction": suite_contraction,
    "gradcheck": suite_gradcheck,
    "fixedpoint": suite_fixedpoint,
}
