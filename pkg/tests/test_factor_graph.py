import math

import numpy as np
import pytest

from graph_fixtures import to_package, random_problem
from oracles import batch_gauss_newton, dense_covariance, pose_diff, stack_residuals
from priornav import factor_graph as fg
from priornav.factor_graph import (
    BetweenPose,
    FactorGraph,
    GraphStructureError,
    IndeterminateSystemError,
    Namespace,
    PointEquality,
    PoseToPoint,
    PriorPoint,
    PriorPose,
    SolverConfig,
    Values,
    diagonal_covariance,
    dump_graph,
    marginals,
    marginals_for,
    optimize,
    point_var,
    pose_var,
    residual_and_jacobian,
)
from priornav.geometry import Point2, Pose2, retract, retract_point

I3 = np.eye(3)
I2 = np.eye(2)
TIGHT = SolverConfig(abs_decrease=1e-14, rel_decrease=1e-13, max_iterations=200)


def chain_graph():
    g = FactorGraph()
    x0 = g.add_variable(pose_var(Namespace.ROBOT_POSE, 0))
    x1 = g.add_variable(pose_var(Namespace.ROBOT_POSE, 1))
    g.add_factor(PriorPose(x0, Pose2(0, 0, 0), I3))
    g.add_factor(BetweenPose(x0, x1, Pose2(2, 0, 0), I3))
    vals = Values()
    vals.set(x0, Pose2(0.1, -0.1, 0.05))
    vals.set(x1, Pose2(1.5, 0.3, -0.1))
    return g, vals, x0, x1


class TestConstruction:
    def test_duplicate_variable(self):
        g = FactorGraph()
        g.add_variable(pose_var(Namespace.ROBOT_POSE, 0))
        with pytest.raises(GraphStructureError, match="duplicate"):
            g.add_variable(pose_var(Namespace.ROBOT_POSE, 0))

    def test_same_index_different_namespace_ok(self):
        g = FactorGraph()
        g.add_variable(pose_var(Namespace.ROBOT_POSE, 0))
        g.add_variable(pose_var(Namespace.INFERRED_WAYPOINT, 0))
        assert len(g.variables) == 2

    def test_dangling_reference(self):
        g = FactorGraph()
        x0 = g.add_variable(pose_var(Namespace.ROBOT_POSE, 0))
        other = pose_var(Namespace.ROBOT_POSE, 1)
        with pytest.raises(GraphStructureError, match="unknown variable"):
            g.add_factor(BetweenPose(x0, other, Pose2(1, 0, 0), I3))

    def test_add_remove_round_trip(self):
        g, vals, x0, x1 = chain_graph()
        before = list(g.factors)
        f = BetweenPose(x0, x1, Pose2(1, 0, 0), I3)
        g.add_factor(f)
        g.remove_factor(f)
        assert g.factors == before

    def test_remove_missing_factor(self):
        g, vals, x0, x1 = chain_graph()
        with pytest.raises(GraphStructureError, match="not in graph"):
            g.remove_factor(BetweenPose(x0, x1, Pose2(1, 0, 0), I3))

    def test_covariance_must_be_positive_definite(self):
        x0 = pose_var(Namespace.ROBOT_POSE, 0)
        with pytest.raises(GraphStructureError, match="positive definite"):
            PriorPose(x0, Pose2(0, 0, 0), np.diag([1.0, -1.0, 1.0]))
        with pytest.raises(GraphStructureError, match="symmetric"):
            PriorPose(x0, Pose2(0, 0, 0), np.array([[1, 0.5, 0], [0, 1, 0], [0, 0, 1.0]]))
        with pytest.raises(GraphStructureError, match="3x3"):
            PriorPose(x0, Pose2(0, 0, 0), I2)

    def test_kind_mismatch(self):
        p = point_var(Namespace.OBSERVED_LANDMARK, 0)
        with pytest.raises(GraphStructureError, match="POSE"):
            PriorPose(p, Pose2(0, 0, 0), I3)

    def test_values_kind_check(self):
        vals = Values()
        with pytest.raises(GraphStructureError, match="Pose2"):
            vals.set(pose_var(Namespace.ROBOT_POSE, 0), Point2(0, 0))

    def test_diagonal_covariance(self):
        np.testing.assert_allclose(diagonal_covariance([0.1, 0.2]), np.diag([0.01, 0.04]))
        with pytest.raises(GraphStructureError):
            diagonal_covariance([0.1, 0.0])


class TestResiduals:
    def test_prior_at_mean_is_zero(self):
        x0 = pose_var(Namespace.ROBOT_POSE, 0)
        vals = Values()
        vals.set(x0, Pose2(1, 2, 0.3))
        r, _ = residual_and_jacobian(PriorPose(x0, Pose2(1, 2, 0.3), I3), vals)
        np.testing.assert_allclose(r, 0, atol=1e-12)

    def test_between_exact_measurement_zero(self):
        g, vals, x0, x1 = chain_graph()
        v = Values()
        v.set(x0, Pose2(0, 0, 0))
        v.set(x1, Pose2(2, 0, 0))
        r, _ = residual_and_jacobian(BetweenPose(x0, x1, Pose2(2, 0, 0), I3), v)
        np.testing.assert_allclose(r, 0, atol=1e-12)

    def test_residual_wraps_angle(self):
        x0 = pose_var(Namespace.ROBOT_POSE, 0)
        vals = Values()
        vals.set(x0, Pose2(0, 0, math.pi - 0.05))
        r, _ = residual_and_jacobian(PriorPose(x0, Pose2(0, 0, -math.pi + 0.05), I3), vals)
        assert abs(r[2]) == pytest.approx(0.1, abs=1e-12)

    @pytest.mark.parametrize("case", ["prior_pose", "prior_point", "between", "pose_point", "point_eq"])
    def test_jacobians_match_finite_differences(self, case):
        rng = np.random.default_rng(hash(case) % 2**32)
        x0 = pose_var(Namespace.ROBOT_POSE, 0)
        x1 = pose_var(Namespace.ROBOT_POSE, 1)
        l0 = point_var(Namespace.OBSERVED_LANDMARK, 0)
        l1 = point_var(Namespace.OBSERVED_LANDMARK, 1)
        cov3 = np.diag(rng.uniform(0.1, 2.0, 3))
        cov2 = np.diag(rng.uniform(0.1, 2.0, 2))
        for _ in range(10):
            vals = Values()
            vals.set(x0, Pose2(*rng.uniform(-3, 3, 2), rng.uniform(-3, 3)))
            vals.set(x1, Pose2(*rng.uniform(-3, 3, 2), rng.uniform(-3, 3)))
            vals.set(l0, Point2(*rng.uniform(-3, 3, 2)))
            vals.set(l1, Point2(*rng.uniform(-3, 3, 2)))
            factor = {
                "prior_pose": lambda: PriorPose(x0, Pose2(0.5, -1, 0.7), cov3),
                "prior_point": lambda: PriorPoint(l0, Point2(0.3, 0.4), cov2),
                "between": lambda: BetweenPose(x0, x1, Pose2(1, 0, 0.2), cov3),
                "pose_point": lambda: PoseToPoint(x0, l0, Point2(1.5, -0.5), cov2),
                "point_eq": lambda: PointEquality(l0, l1, cov2),
            }[case]()
            r0, jac = residual_and_jacobian(factor, vals)
            for vid, J in jac.items():
                h = 1e-6
                fd = np.zeros_like(J)
                for i in range(vid.dim):
                    d = np.zeros(vid.dim)
                    d[i] = h
                    for sign, store in ((1, "p"), (-1, "m")):
                        v2 = vals.copy()
                        cur = vals.get(vid)
                        if vid.dim == 3:
                            v2.set(vid, retract(cur, sign * d))
                        else:
                            v2.set(vid, retract_point(cur, sign * d))
                        r = residual_and_jacobian(factor, v2)[0]
                        if store == "p":
                            rp = r
                        else:
                            rm = r
                    fd[:, i] = (rp - rm) / (2 * h)
                np.testing.assert_allclose(J, fd, atol=1e-5)


class TestOptimize:
    def test_single_prior_lands_on_mean(self):
        g = FactorGraph()
        x0 = g.add_variable(pose_var(Namespace.ROBOT_POSE, 0))
        g.add_factor(PriorPose(x0, Pose2(1, 2, 0.5), I3))
        vals = Values()
        vals.set(x0, Pose2(-3, 4, -1.0))
        sol, report = optimize(g, vals)
        p = sol.get(x0)
        np.testing.assert_allclose([p.x, p.y, p.theta], [1, 2, 0.5], atol=1e-8)
        assert report.converged
        assert report.final_cost == pytest.approx(0, abs=1e-12)

    def test_exact_chain(self):
        g, vals, x0, x1 = chain_graph()
        sol, report = optimize(g, vals)
        p = sol.get(x1)
        np.testing.assert_allclose([p.x, p.y, p.theta], [2, 0, 0], atol=1e-7)
        assert report.converged
        assert report.final_cost <= report.initial_cost

    def test_overdetermined_chain_closed_form(self):
        # prior x0=(0,0,0), prior x1=(3,0,0), between (2,0,0), all unit sigma:
        # minimizing a^2 + (b-3)^2 + (b-a-2)^2 gives a=1/3, b=8/3, cost 1/3
        g = FactorGraph()
        x0 = g.add_variable(pose_var(Namespace.ROBOT_POSE, 0))
        x1 = g.add_variable(pose_var(Namespace.ROBOT_POSE, 1))
        g.add_factor(PriorPose(x0, Pose2(0, 0, 0), I3))
        g.add_factor(PriorPose(x1, Pose2(3, 0, 0), I3))
        g.add_factor(BetweenPose(x0, x1, Pose2(2, 0, 0), I3))
        vals = Values()
        vals.set(x0, Pose2(0, 0, 0))
        vals.set(x1, Pose2(3, 0, 0))
        sol, report = optimize(g, vals, TIGHT)
        a, b = sol.get(x0), sol.get(x1)
        np.testing.assert_allclose([a.x, a.y, a.theta], [1 / 3, 0, 0], atol=1e-9)
        np.testing.assert_allclose([b.x, b.y, b.theta], [8 / 3, 0, 0], atol=1e-9)
        assert report.final_cost == pytest.approx(1 / 3, abs=1e-9)

    def test_matches_batch_gauss_newton_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(5):
            vars_spec, factors, init, _ = random_problem(rng)
            g, vals, ids = to_package(vars_spec, factors, init)
            sol, report = optimize(g, vals, TIGHT)
            assert report.converged
            oracle_sol, _ = batch_gauss_newton(vars_spec, factors, init)
            for name, kind in vars_spec:
                got = sol.get(ids[name])
                want = oracle_sol[name]
                if kind == "pose":
                    err = np.abs(pose_diff(got.as_array(), want))
                else:
                    err = np.abs(got.as_array() - want)
                assert np.max(err) < 1e-6, f"{name}: {err}"

    def test_pose_chain_recovers_ground_truth(self):
        rng = np.random.default_rng(7)
        vars_spec, factors, init, truth = random_problem(rng, n_poses=30, n_points=0)
        g, vals, ids = to_package(vars_spec, factors, init)
        sol, report = optimize(g, vals, TIGHT)
        assert report.converged
        errs = [
            np.linalg.norm(sol.get(ids[f"x{i}"]).as_array()[:2] - truth[f"x{i}"][:2])
            for i in range(30)
        ]
        rmse = float(np.sqrt(np.mean(np.square(errs))))
        assert rmse < 3 * 0.05 * math.sqrt(30)

    def test_cost_non_increasing_and_report_fields(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            vars_spec, factors, init, _ = random_problem(rng, n_poses=5, n_points=1)
            g, vals, _ = to_package(vars_spec, factors, init)
            sol, report = optimize(g, vals)
            assert report.final_cost <= report.initial_cost + 1e-12
            assert report.iterations <= SolverConfig().max_iterations

    def test_non_convergence_flagged_not_raised(self):
        rng = np.random.default_rng(5)
        vars_spec, factors, init, _ = random_problem(rng, n_poses=8, n_points=2)
        g, vals, _ = to_package(vars_spec, factors, init)
        sol, report = optimize(g, vals, SolverConfig(max_iterations=1))
        assert not report.converged
        assert report.termination == "max_iterations"

    def test_unconstrained_variable_raises_with_name(self):
        g, vals, x0, x1 = chain_graph()
        stray = g.add_variable(pose_var(Namespace.ROBOT_POSE, 9))
        vals.set(stray, Pose2(0, 0, 0))
        with pytest.raises(IndeterminateSystemError, match="ROBOT_POSE/POSE:9") as exc:
            optimize(g, vals)
        assert stray in exc.value.variables

    def test_missing_initial_value(self):
        g, vals, x0, x1 = chain_graph()
        incomplete = Values()
        incomplete.set(x0, Pose2(0, 0, 0))
        with pytest.raises(GraphStructureError, match="missing"):
            optimize(g, incomplete)


class TestMarginals:
    def test_single_prior_marginal_equals_covariance(self):
        g = FactorGraph()
        x0 = g.add_variable(pose_var(Namespace.ROBOT_POSE, 0))
        cov = np.diag([0.5, 0.25, 0.1])
        g.add_factor(PriorPose(x0, Pose2(0, 0, 0), cov))
        vals = Values()
        vals.set(x0, Pose2(0, 0, 0))
        m = marginals(g, vals)
        np.testing.assert_allclose(m[x0], cov, atol=1e-9)

    def test_chain_uncertainty_grows(self):
        g = FactorGraph()
        ids = [g.add_variable(pose_var(Namespace.ROBOT_POSE, i)) for i in range(5)]
        g.add_factor(PriorPose(ids[0], Pose2(0, 0, 0), np.diag([1e-4, 1e-4, 1e-4])))
        vals = Values()
        for i, vid in enumerate(ids):
            vals.set(vid, Pose2(float(i), 0, 0))
            if i:
                g.add_factor(BetweenPose(ids[i - 1], vid, Pose2(1, 0, 0), np.diag([0.01, 0.01, 0.004])))
        m = marginals(g, vals)
        traces = [np.trace(m[vid]) for vid in ids]
        assert all(b > a for a, b in zip(traces, traces[1:]))

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(11)
        vars_spec, factors, init, _ = random_problem(rng, n_poses=2, n_points=1)
        g, vals, ids = to_package(vars_spec, factors, init)
        sol, _ = optimize(g, vals, TIGHT)
        m = marginals(g, sol)
        state = {name: sol.get(ids[name]).as_array() for name, _ in vars_spec}
        oracle = dense_covariance(vars_spec, factors, state)
        for name, _ in vars_spec:
            np.testing.assert_allclose(m[ids[name]], oracle[name], atol=1e-6)

    def test_marginals_symmetric_psd(self):
        rng = np.random.default_rng(13)
        vars_spec, factors, init, _ = random_problem(rng)
        g, vals, _ = to_package(vars_spec, factors, init)
        sol, _ = optimize(g, vals)
        for cov in marginals(g, sol).values():
            np.testing.assert_allclose(cov, cov.T, atol=1e-9)
            assert np.min(np.linalg.eigvalsh(cov)) > -1e-9

    def test_marginals_for_matches_full(self):
        rng = np.random.default_rng(17)
        vars_spec, factors, init, _ = random_problem(rng)
        g, vals, ids = to_package(vars_spec, factors, init)
        sol, _ = optimize(g, vals)
        full = marginals(g, sol)
        subset = [ids["x1"], ids["l0"]]
        sel = marginals_for(g, sol, subset)
        for vid in subset:
            np.testing.assert_allclose(sel[vid], full[vid], atol=1e-10)

    def test_new_observation_shrinks_landmark_marginal(self):
        rng = np.random.default_rng(19)
        vars_spec, factors, init, truth = random_problem(rng, n_poses=4, n_points=1)
        g, vals, ids = to_package(vars_spec, factors, init)
        sol, _ = optimize(g, vals, TIGHT)
        before = np.trace(marginals(g, sol)[ids["l0"]])
        from oracles import mat_transform_to

        meas = mat_transform_to(sol.get(ids["x3"]).as_array(), sol.get(ids["l0"]).as_array())
        g.add_factor(PoseToPoint(ids["x3"], ids["l0"], Point2(*meas), np.diag([0.05**2, 0.05**2])))
        sol2, _ = optimize(g, sol, TIGHT)
        after = np.trace(marginals(g, sol2)[ids["l0"]])
        assert after < before


class TestBackends:
    def test_normal_equations_agree(self):
        from priornav.kernels import get_backend
        from priornav.factor_graph import _Packed

        rng = np.random.default_rng(23)
        vars_spec, factors, init, _ = random_problem(rng, n_poses=7, n_points=3)
        g, vals, _ = to_package(vars_spec, factors, init)
        pk = _Packed(g, vals)
        nb, _ = get_backend("numba")
        npy, _ = get_backend("numpy")
        H1, g1, c1 = nb.normal_equations(*pk.factor_arrays(), pk.dim)
        H2, g2, c2 = npy.normal_equations(*pk.factor_arrays(), pk.dim)
        np.testing.assert_allclose(H1, H2, atol=1e-9)
        np.testing.assert_allclose(g1, g2, atol=1e-9)
        assert c1 == pytest.approx(c2, abs=1e-9)
        assert nb.total_cost(*pk.factor_arrays()) == pytest.approx(c1, abs=1e-12)

    def test_kernel_cost_matches_oracle_residuals(self):
        rng = np.random.default_rng(29)
        vars_spec, factors, init, _ = random_problem(rng)
        g, vals, _ = to_package(vars_spec, factors, init)
        from priornav.factor_graph import total_graph_cost

        state = {name: np.asarray(init[name], float) for name, _ in vars_spec}
        r = stack_residuals(factors, state)
        assert total_graph_cost(g, vals) == pytest.approx(float(r @ r), rel=1e-9)

    def test_dtw_backends_bit_identical(self):
        from priornav.kernels import get_backend
        from oracles import dtw_distance

        rng = np.random.default_rng(31)
        nb, _ = get_backend("numba")
        npy, _ = get_backend("numpy")
        for _ in range(10):
            a = rng.uniform(-5, 5, size=(rng.integers(2, 40), 2))
            b = rng.uniform(-5, 5, size=(rng.integers(2, 40), 2))
            d1 = nb.dtw_accumulate(a, b)
            d2 = npy.dtw_accumulate(a, b)
            d3 = dtw_distance(a, b)
            assert d1 == d2 == d3


class TestDump:
    def test_golden_dump(self):
        g, vals, x0, x1 = chain_graph()
        vals2 = Values()
        vals2.set(x0, Pose2(0, 0, 0))
        vals2.set(x1, Pose2(2, 0, 0))
        expected = (
            "graph 2 variables 2 factors\n"
            "var ROBOT_POSE/POSE:0 = 0 0 0\n"
            "var ROBOT_POSE/POSE:1 = 2 0 0\n"
            "factor PriorPose ROBOT_POSE/POSE:0 meas 0 0 0 cov 1 0 0 0 1 0 0 0 1\n"
            "factor BetweenPose ROBOT_POSE/POSE:0 ROBOT_POSE/POSE:1 meas 2 0 0 cov 1 0 0 0 1 0 0 0 1\n"
        )
        assert dump_graph(g, vals2) == expected

    def test_dump_without_values(self):
        g = FactorGraph()
        g.add_variable(point_var(Namespace.INFERRED_LANDMARK, 3))
        out = dump_graph(g)
        assert "var INFERRED_LANDMARK/POINT:3" in out
