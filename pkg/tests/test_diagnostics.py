import math

import numpy as np
import pytest

from dfsdca.dataset import Dataset, SparseExample, gen_synthetic
from dfsdca.diagnostics import (
    ReferenceError,
    convergence_report,
    decay_envelope,
    iterations_to_target,
    potentials,
    random_relation_state,
    reference_solution,
    verify_contraction,
    verify_lemma1_B,
    verify_lemma1_C,
    verify_lemma2,
)
from dfsdca.losses import build_nonconvex_instance, logistic_loss, squared_loss
from dfsdca.sampling import (
    chunked_sampling,
    naive_chunks,
    serial_uniform,
    serial_weighted,
    tau_nice,
)
from dfsdca.solver import (
    SolverConfig,
    SolverState,
    Trace,
    TraceRecord,
    make_problem,
    primal_value,
    run,
    theta_convex,
)


def ridge_problem():
    ds = Dataset(
        [SparseExample(np.array([0]), np.array([1.0]), 1) for _ in range(2)],
        np.array([1.0, 3.0]),
    )
    return make_problem(ds, squared_loss(ds.labels), 1.0)


def logistic_problem(n=6, d=4, lam=0.8, seed=11):
    ds = gen_synthetic(n, d, 0.9, "linear-sign", seed)
    return make_problem(ds, logistic_loss(ds.labels), lam)


class TestReferenceSolution:
    def test_ridge_closed_form(self):
        ref = reference_solution(ridge_problem())
        assert abs(ref.w[0] - 1.0) <= 1e-10

    def test_optimality_identity(self):
        for prob in (ridge_problem(), logistic_problem()):
            ref = reference_solution(prob)
            recovered = prob.dataset.combine(ref.alpha) / (prob.lam * prob.dataset.n)
            assert np.linalg.norm(ref.w - recovered) <= 1e-10
            tol = 1e-12 * (1.0 + abs(primal_value(prob, np.zeros(prob.dataset.d))))
            assert ref.grad_norm <= tol

    def test_two_oracles_agree(self):
        ds = gen_synthetic(15, 5, 0.7, "linear-noise", 2)
        prob = make_problem(ds, squared_loss(ds.labels), 0.5)
        exact = reference_solution(prob, method="exact")
        descent = reference_solution(prob, method="gd")
        assert np.linalg.norm(exact.w - descent.w) <= 1e-8

    def test_unreachable_tolerance_reports_progress(self):
        with pytest.raises(ReferenceError) as info:
            reference_solution(logistic_problem(), tol=1e-30, max_iter=60)
        assert info.value.grad_norm > 0

    def test_deterministic(self):
        a = reference_solution(logistic_problem())
        b = reference_solution(logistic_problem())
        assert np.array_equal(a.w, b.w) and a.P_star == b.P_star

    def test_json_round_trip(self):
        from dfsdca.diagnostics import ReferenceSolution

        ref = reference_solution(ridge_problem())
        back = ReferenceSolution.from_json(ref.to_json())
        assert np.array_equal(back.w, ref.w)
        assert np.array_equal(back.alpha, ref.alpha)
        assert back.P_star == ref.P_star


class TestPotentials:
    def test_zero_at_reference(self):
        prob = logistic_problem()
        ref = reference_solution(prob)
        st = SolverState(ref.w.copy(), ref.alpha.copy())
        pot = potentials(st, ref, prob.smoothness, prob.lam)
        assert pot.B == 0.0 and pot.D == 0.0 and pot.E == 0.0
        assert np.all(pot.C == 0.0)

    def test_unit_offsets_hand_value(self):
        # n=1, lam=1, l=1, L=1, w-w* = 1, alpha-alpha* = 1:
        # B=1, C=[1], D = 1/2 + 1/2 = 1, E = 1
        ds = Dataset([SparseExample(np.array([0]), np.array([1.0]), 1)], [0.5])
        prob = make_problem(ds, squared_loss(ds.labels), 1.0)
        ref = reference_solution(prob)
        st = SolverState(ref.w + 1.0, ref.alpha + 1.0)
        pot = potentials(st, ref, prob.smoothness, prob.lam)
        assert pot.B == pytest.approx(1.0, abs=1e-12)
        assert pot.C[0] == pytest.approx(1.0, abs=1e-12)
        assert pot.D == pytest.approx(1.0, abs=1e-12)
        assert pot.E == pytest.approx(1.0, abs=1e-12)

    def test_homogeneity_in_dual_offsets(self):
        prob = logistic_problem()
        ref = reference_solution(prob)
        st1 = SolverState(ref.w.copy(), ref.alpha + 1.0)
        st2 = SolverState(ref.w.copy(), ref.alpha + 2.0)
        p1 = potentials(st1, ref, prob.smoothness, prob.lam)
        p2 = potentials(st2, ref, prob.smoothness, prob.lam)
        assert p2.B == p1.B == 0.0
        assert np.allclose(p2.C, 4.0 * p1.C, rtol=1e-12)
        assert p2.E == pytest.approx(4.0 * p1.E, rel=1e-12)


class TestEnvelope:
    def test_at_zero(self):
        assert decay_envelope(2.5, 0.3, 0) == 2.5

    def test_hand_value(self):
        assert decay_envelope(2.0, 1 / 3, 3) == pytest.approx(2.0 / math.e, rel=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            decay_envelope(1.0, 1.5, 2)
        with pytest.raises(ValueError):
            decay_envelope(1.0, 0.5, -1)

    def test_iteration_bound_bridges_to_suboptimality(self):
        # at T = rate * log((L+lam) X0 / (lam eps)) the envelope value maps
        # through P - P* <= (L+lam)/lam * potential to exactly eps
        theta, L, lam, X0, eps = 0.02, 1.3, 0.4, 5.0, 1e-8
        T = iterations_to_target(1.0 / theta, L, lam, X0, eps)
        env = decay_envelope(X0, theta, T)
        assert env * (L + lam) / lam == pytest.approx(eps, rel=1e-10)

    def test_suboptimality_bridge(self):
        prob = logistic_problem(n=10, d=5)
        ref = reference_solution(prob)
        rng = np.random.default_rng(3)
        L = prob.smoothness.L
        for _ in range(50):
            w = ref.w + rng.standard_normal(prob.dataset.d)
            B = float(np.sum((w - ref.w) ** 2))
            subopt = primal_value(prob, w) - ref.P_star
            assert subopt <= (L + prob.lam) / 2.0 * B + 1e-12


class TestLemma1:
    def test_both_sides_zero_at_optimum(self):
        prob = logistic_problem()
        ref = reference_solution(prob)
        st = SolverState(ref.w.copy(), ref.alpha.copy())
        sc = serial_uniform(prob.dataset.norms)
        assert verify_lemma1_C(prob, st, 0.1, sc, ref) <= 1e-15
        assert abs(verify_lemma1_B(prob, st, 0.1, sc, ref)) <= 1e-15

    def test_dual_identity_serial(self):
        prob = logistic_problem(n=3, d=3, seed=5)
        ref = reference_solution(prob)
        rng = np.random.default_rng(0)
        sc = serial_uniform(prob.dataset.norms)
        for _ in range(25):
            st = random_relation_state(prob, rng)
            assert verify_lemma1_C(prob, st, 0.1, sc, ref) <= 1e-10

    def test_dual_identity_tau_nice(self):
        prob = logistic_problem(n=4, d=3, seed=6)
        ref = reference_solution(prob)
        rng = np.random.default_rng(1)
        sc = tau_nice(prob.dataset.norms, 2)  # 6 atoms
        for _ in range(25):
            st = random_relation_state(prob, rng)
            theta = float(rng.uniform(0.1, 1.0) * np.min(sc.p))
            assert verify_lemma1_C(prob, st, theta, sc, ref) <= 1e-10

    def test_primal_bound_serial_is_tight(self):
        # singleton schemes make the overapproximation an equality, so the
        # slack collapses to rounding noise
        ds = Dataset(
            [SparseExample(np.array([0]), np.array([1.0]), 1) for _ in range(3)],
            np.array([1.0, -1.0, 1.0]),
        )
        prob = make_problem(ds, logistic_loss(ds.labels), 1.0)
        ref = reference_solution(prob)
        rng = np.random.default_rng(2)
        sc = serial_uniform(ds.norms)
        for _ in range(20):
            st = random_relation_state(prob, rng)
            slack = verify_lemma1_B(prob, st, 0.2, sc, ref)
            assert -1e-10 <= slack <= 1e-10

    def test_primal_bound_random_trials(self):
        rng = np.random.default_rng(7)
        for seed in range(10):
            prob = logistic_problem(n=4, d=3, seed=seed)
            ref = reference_solution(prob)
            part = naive_chunks(prob.dataset.nnz.tolist())
            schemes = [
                serial_uniform(prob.dataset.norms),
                tau_nice(prob.dataset.norms, 2),
                chunked_sampling(prob.dataset.norms, part, min(2, part.k)),
            ]
            for sc in schemes:
                for _ in range(4):
                    st = random_relation_state(prob, rng)
                    theta = float(rng.uniform(0.1, 1.0) * np.min(sc.p))
                    assert verify_lemma1_B(prob, st, theta, sc, ref) >= -1e-10


class TestLemma2:
    def test_zero_at_optimum(self):
        prob = logistic_problem()
        ref = reference_solution(prob)
        assert abs(verify_lemma2(prob, ref.w, ref)) <= 1e-12

    def test_quadratic_equality(self):
        ds = gen_synthetic(8, 4, 0.9, "linear-noise", 9)
        prob = make_problem(ds, squared_loss(ds.labels), 1.0)
        ref = reference_solution(prob)
        rng = np.random.default_rng(4)
        for _ in range(30):
            w = rng.standard_normal(4)
            assert abs(verify_lemma2(prob, w, ref)) <= 1e-10

    def test_logistic_random_trials(self):
        rng = np.random.default_rng(5)
        for seed in range(5):
            prob = logistic_problem(n=8, d=4, seed=seed)
            ref = reference_solution(prob)
            for _ in range(20):
                w = rng.standard_normal(4) * 2.0
                assert verify_lemma2(prob, w, ref) >= -1e-10

    def test_requires_convex_losses(self):
        ds, loss = build_nonconvex_instance(4, 2, 0)
        prob = make_problem(ds, loss, 1.0)
        ref = reference_solution(prob)
        with pytest.raises(ValueError, match="convex"):
            verify_lemma2(prob, np.zeros(2), ref)


class TestContraction:
    def test_convex_potential(self):
        rng = np.random.default_rng(6)
        for seed in range(6):
            prob = logistic_problem(n=5, d=4, seed=seed)
            ref = reference_solution(prob)
            schemes = [
                serial_uniform(prob.dataset.norms),
                serial_weighted(
                    prob.dataset.norms,
                    np.array([0.4, 0.2, 0.2, 0.1, 0.1]),
                ),
                tau_nice(prob.dataset.norms, 2),
            ]
            for sc in schemes:
                for _ in range(3):
                    st = random_relation_state(prob, rng)
                    assert verify_contraction(prob, st, sc, ref, "E") >= -1e-10

    def test_nonconvex_potential(self):
        rng = np.random.default_rng(7)
        for seed in range(6):
            ds, loss = build_nonconvex_instance(5, 3, seed)
            prob = make_problem(ds, loss, 1.0)
            ref = reference_solution(prob)
            sc = tau_nice(ds.norms, 2)
            for _ in range(3):
                st = random_relation_state(prob, rng)
                assert verify_contraction(prob, st, sc, ref, "D") >= -1e-10

    def test_convex_guard(self):
        ds, loss = build_nonconvex_instance(4, 2, 3)
        prob = make_problem(ds, loss, 1.0)
        ref = reference_solution(prob)
        st = random_relation_state(prob, np.random.default_rng(0))
        with pytest.raises(ValueError, match="convex"):
            verify_contraction(prob, st, serial_uniform(ds.norms), ref, "E")


def _fake_trace(theta, ts, values, subopts=None):
    records = []
    for j, t in enumerate(ts):
        records.append(TraceRecord(
            t=int(t), epoch=float(t), primal=0.0, residual=0.0,
            subopt=None if subopts is None else float(subopts[j]),
            B=0.0, D=float(values[j]), E=float(values[j]),
        ))
    return Trace(theta=theta, expected_size=1.0, records=records)


class TestConvergenceReport:
    def test_on_theory_trace_passes(self):
        theta = 0.1
        ts = np.arange(0, 50, 10)
        vals = 2.0 * np.exp(-theta * ts) * 0.95
        traces = [_fake_trace(theta, ts, vals) for _ in range(3)]
        rep = convergence_report(traces, theta, potential="E")
        assert rep.all_passed

    def test_violation_flagged_at_right_checkpoint(self):
        theta = 0.1
        ts = np.arange(0, 50, 10)
        vals = 2.0 * np.exp(-theta * ts) * 0.95
        bad = vals.copy()
        bad[3] *= 10.0
        traces = [_fake_trace(theta, ts, bad) for _ in range(3)]
        rep = convergence_report(traces, theta, potential="E")
        assert not rep.all_passed
        assert [r.passed for r in rep.rows] == [True, True, True, False, True]

    def test_ridge_first_passage_within_theory(self):
        prob = ridge_problem()
        theta = theta_convex([0.5, 0.5], prob.dataset.norms**2,
                             prob.smoothness.l, 1.0, 2)
        ref = reference_solution(prob)
        traces = []
        for seed in range(5):
            sc = serial_uniform(prob.dataset.norms)
            cfg = SolverConfig(theta=theta, epochs=50, seed=seed, trace_period=1)
            traces.append(run(prob, sc, cfg, reference=ref)[1])
        eps = 1e-6
        rep = convergence_report(
            traces, theta, potential="E",
            L=prob.smoothness.L, lam=prob.lam, eps=eps,
        )
        assert rep.all_passed
        assert not math.isnan(rep.first_passage_t)
        assert rep.first_passage_t <= rep.theory_T

    def test_needs_two_seeds(self):
        with pytest.raises(ValueError, match="seeds"):
            convergence_report([_fake_trace(0.1, [0, 1], [1.0, 0.5])], 0.1)
