import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapeboost.basis import SplineConfig
from shapeboost.effects import (
    EffectError,
    EffectSpec,
    KronPenalty,
    assemble_normal_eqs,
    assemble_psi_matrix,
    covariate_design,
    curve_gram,
    curve_proj,
    df_of_lambda,
    df_to_lambda,
    pls_solve,
    unvec,
    vec,
)

from conftest import irregular_grid, smooth_curve


class TestCovariateDesign:
    def test_linear_centered(self):
        spec = EffectSpec(name="lin", kind="linear", covariates=("z",))
        D, cmap = covariate_design(spec, {"z": np.array([1.0, 2.0, 3.0])}, 3)
        assert np.allclose(D[:, 0], [-1.0, 0.0, 1.0])
        assert cmap.row({"z": 2.0}) == pytest.approx([0.0])

    def test_categorical_effect_coding(self):
        spec = EffectSpec(name="cat", kind="categorical", covariates=("g",))
        table = {"g": np.array(["a", "b", "c", "a", "b", "c"])}
        D, cmap = covariate_design(spec, table, 6)
        assert D.shape == (6, 2)
        assert np.allclose(cmap.row({"g": "c"}), [-1.0, -1.0])
        assert np.allclose(cmap.row({"g": "a"}), [1.0, 0.0])
        # balanced design: columns sum to zero
        assert np.abs(D.sum(axis=0)).max() <= 1e-12

    def test_smooth_sum_to_zero(self, rng):
        spec = EffectSpec(
            name="sm", kind="smooth", covariates=("z",), covariate_basis=SplineConfig(3, 4),
            penalty_covariate="second_diff",
        )
        z = rng.uniform(-2, 5, 40)
        D, cmap = covariate_design(spec, {"z": z}, 40)
        assert np.abs(D.sum(axis=0)).max() <= 1e-10
        assert cmap.penalty.shape == (D.shape[1],) * 2

    def test_interaction_centered_around_marginals(self, rng):
        spec = EffectSpec(
            name="ia", kind="smooth_interaction", covariates=("a", "b"),
            covariate_basis=SplineConfig(2, 2), centering="around_marginals",
        )
        table = {"a": rng.uniform(0, 1, 30), "b": rng.uniform(0, 1, 30)}
        D, cmap = covariate_design(spec, table, 30)
        assert np.abs(D.sum(axis=0)).max() <= 1e-9
        for j, cov in enumerate(spec.covariates):
            Bm = cmap.margins[j].design(table[cov])
            assert np.abs(Bm.T @ D).max() <= 1e-9

    def test_nested_categorical_projection(self, rng):
        parent_spec = EffectSpec(name="status", kind="categorical", covariates=("s",))
        child_spec = EffectSpec(
            name="breed", kind="categorical", covariates=("b",),
            centering="around_marginals", parents=("status",),
        )
        table = {
            "s": np.array(["w", "w", "d", "d", "d", "d"]),
            "b": np.array(["x", "x", "y", "y", "z", "z"]),
        }
        Dp, _ = covariate_design(parent_spec, table, 6)
        Dc, _ = covariate_design(child_spec, table, 6, parent_designs={"status": Dp})
        assert np.abs(Dp.T @ Dc).max() <= 1e-10
        assert np.abs(Dc.sum(axis=0)).max() <= 1e-10

    def test_missing_covariate_and_unseen_level(self):
        spec = EffectSpec(name="cat", kind="categorical", covariates=("g",))
        with pytest.raises(EffectError):
            covariate_design(spec, {"other": np.array(["a", "b", "a"])}, 3)
        _, cmap = covariate_design(spec, {"g": np.array(["a", "b", "a"])}, 3)
        with pytest.raises(EffectError):
            cmap.row({"g": "zz"})


def _toy_system(rng, n=6, m=3, m0=4, k=12):
    from shapeboost.basis import TangentTransform, build_response_basis, tangent_design
    from shapeboost.geometry import trapezoid_weights

    basis = build_response_basis(SplineConfig(2, m0 - 3), np.linspace(0, 1, 20))
    Z = np.linalg.qr(rng.normal(size=(2 * basis.dim, m)))[0]
    tr = TangentTransform(Z)
    designs, weights, residuals = [], [], []
    for _ in range(n):
        grid = irregular_grid(rng, k)
        w = trapezoid_weights(grid)
        designs.append(tangent_design(grid, tr, basis))
        weights.append(w)
        residuals.append(smooth_curve(rng, grid))
    return designs, weights, residuals


class TestNormalEquations:
    def test_single_curve_constant_effect(self, rng):
        designs, weights, residuals = _toy_system(rng, n=1)
        Psi, psi = assemble_normal_eqs(designs, weights, np.ones((1, 1)), residuals)
        G1 = curve_gram(designs[0], weights[0])
        assert np.allclose(Psi, G1, atol=1e-12)

    def test_psi_vector_matches_direct_sum(self, rng):
        designs, weights, residuals = _toy_system(rng, n=5)
        cov = rng.normal(size=(5, 2))
        _, psi = assemble_normal_eqs(designs, weights, cov, residuals)
        m = designs[0].shape[1]
        direct = np.zeros(2 * m)
        for i in range(5):
            g = curve_proj(designs[i], weights[i], residuals[i])
            for l in range(2):
                for r in range(m):
                    direct[l * m + r] += cov[i, l] * g[r]
        assert np.allclose(psi, direct, atol=1e-12)

    def test_residual_in_first_direction(self, rng):
        # residuals equal to the first tangent direction: psi's first block is sum G_i[:, 0]
        designs, weights, _ = _toy_system(rng, n=4)
        residuals = [D[:, 0] for D in designs]
        Psi, psi = assemble_normal_eqs(designs, weights, np.ones((4, 1)), residuals)
        expected = np.sum([curve_gram(D, w)[:, 0] for D, w in zip(designs, weights)], axis=0)
        assert np.allclose(psi, expected, atol=1e-12)

    def test_psi_psd(self, rng):
        designs, weights, residuals = _toy_system(rng, n=6)
        cov = rng.normal(size=(6, 3))
        Psi, _ = assemble_normal_eqs(designs, weights, cov, residuals)
        assert np.linalg.eigvalsh(Psi).min() >= -1e-8 * np.trace(Psi)

    def test_kron_identity_structure(self, rng):
        # Psi = sum b b^T (x) G_i, verified entry-wise against the definition
        designs, weights, residuals = _toy_system(rng, n=3)
        cov = rng.normal(size=(3, 2))
        Psi, _ = assemble_normal_eqs(designs, weights, cov, residuals)
        m = designs[0].shape[1]
        for (r, l, r2, l2) in [(0, 0, 1, 1), (2, 1, 0, 0), (1, 0, 2, 1)]:
            val = sum(
                cov[i, l] * cov[i, l2] * np.real(
                    np.conj(designs[i][:, r]) @ (weights[i] * designs[i][:, r2])
                )
                for i in range(3)
            )
            assert Psi[l * m + r, l2 * m + r2] == pytest.approx(val, abs=1e-10)


class TestPlsSolve:
    def test_identity_system(self, rng):
        m, mj = 4, 3
        psi = rng.normal(size=m * mj)
        theta = pls_solve(np.eye(m * mj), psi, None, m, mj)
        assert np.allclose(theta, unvec(psi, m, mj))

    def test_ridge_shrink_to_zero(self, rng):
        m, mj = 3, 2
        A = rng.normal(size=(10, m * mj))
        Psi = A.T @ A
        psi = rng.normal(size=m * mj)
        pen = KronPenalty(1e12, 1e12, np.eye(mj), np.eye(m))
        theta = pls_solve(Psi, psi, pen, m, mj)
        assert np.linalg.norm(theta) <= 1e-6 * np.linalg.norm(psi)

    def test_kron_case_vs_dense_oracle(self, rng):
        m, mj = 2, 2
        A = rng.normal(size=(12, m * mj))
        Psi = A.T @ A
        psi = rng.normal(size=m * mj)
        P_cov = np.array([[2.0, -1.0], [-1.0, 2.0]])
        P_tan = np.array([[1.0, 0.3], [0.3, 1.0]])
        pen = KronPenalty(0.7, 1.3, P_cov, P_tan)
        # dense hand-assembled penalty
        R = np.zeros((4, 4))
        for l in range(mj):
            for r in range(m):
                for l2 in range(mj):
                    for r2 in range(m):
                        R[l * m + r, l2 * m + r2] = 0.7 * P_cov[l, l2] * (r == r2) + 1.3 * (l == l2) * P_tan[r, r2]
        assert np.allclose(pen.materialize(), R, atol=1e-14)
        theta = pls_solve(Psi, psi, pen, m, mj)
        oracle = np.linalg.solve(Psi + R, psi)
        assert np.allclose(vec(theta), oracle, atol=1e-10)

    def test_residual_small(self, rng):
        m, mj = 5, 4
        A = rng.normal(size=(40, m * mj))
        Psi = A.T @ A
        psi = rng.normal(size=m * mj)
        pen = KronPenalty(0.1, 0.2, np.eye(mj), np.eye(m))
        theta = pls_solve(Psi, psi, pen, m, mj)
        R = pen.materialize()
        assert np.linalg.norm((Psi + R) @ vec(theta) - psi) <= 1e-8 * np.linalg.norm(psi)

    def test_singular_system_flagged(self, rng):
        Psi = np.zeros((4, 4))
        psi = np.zeros(4)
        with pytest.warns(UserWarning):
            theta = pls_solve(Psi, psi, None, 2, 2)
        assert np.allclose(theta, 0)

    def test_objective_minimized(self, rng):
        # penalized objective never decreases under random perturbations
        designs, weights, residuals = _toy_system(rng, n=6)
        cov = rng.normal(size=(6, 2))
        Psi, psi = assemble_normal_eqs(designs, weights, cov, residuals)
        m = designs[0].shape[1]
        pen = KronPenalty(0.5, 0.5, np.eye(2), np.eye(m))
        theta = pls_solve(Psi, psi, pen, m, 2)
        R = pen.materialize()

        def objective(tv):
            return tv @ (Psi + R) @ tv - 2 * tv @ psi

        base = objective(vec(theta))
        for _ in range(50):
            delta = rng.normal(size=m * 2) * 1e-3
            assert objective(vec(theta) + delta) >= base - 1e-12

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 1000))
    def test_vec_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        m, mj = int(rng.integers(1, 8)), int(rng.integers(1, 7))
        theta = rng.normal(size=(m, mj))
        assert np.array_equal(unvec(vec(theta), m, mj), theta)
        v = vec(theta)
        assert np.array_equal(v[: m], theta[:, 0])  # column-major convention


class TestDfCalibration:
    def test_lambda_zero_gives_rank(self, rng):
        m, mj = 4, 3
        A = rng.normal(size=(30, m * mj))
        Psi = A.T @ A
        lam, _ = df_to_lambda(Psi, np.eye(mj), np.eye(m), float(m * mj))
        assert lam == 0.0

    def test_df_monotone_decreasing(self, rng):
        m, mj = 3, 3
        A = rng.normal(size=(30, m * mj))
        Psi = A.T @ A
        S = np.kron(np.eye(mj), np.eye(m)) + np.kron(np.eye(mj), np.zeros((m, m)))
        vals = [df_of_lambda(Psi, np.kron(np.eye(mj), np.eye(m)) * 2, lam) for lam in [0.0, 0.1, 1.0, 10.0]]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_bisection_hits_target(self, rng):
        m, mj = 5, 4
        A = rng.normal(size=(60, m * mj))
        Psi = A.T @ A
        P_cov = np.eye(mj)
        P_tan = np.eye(m)
        for target in [1.0, 3.5, 10.0]:
            lam, lam2 = df_to_lambda(Psi, P_cov, P_tan, target)
            assert lam == lam2
            S = np.kron(P_cov, np.eye(m)) + np.kron(np.eye(mj), P_tan)
            df = np.trace(np.linalg.solve(Psi + lam * S, Psi))
            assert df == pytest.approx(target, abs=1e-4)

    def test_categorical_ridge_df_one(self, rng):
        # a one-column categorical learner regularized to one degree of freedom
        from shapeboost.geometry import trapezoid_weights

        designs, weights, _ = _toy_system(rng, n=8)
        cov = np.array([[1.0] if i % 2 == 0 else [-1.0] for i in range(8)])
        grams = [curve_gram(D, w) for D, w in zip(designs, weights)]
        Psi = assemble_psi_matrix(cov, grams)
        m = designs[0].shape[1]
        lam, _ = df_to_lambda(Psi, np.eye(1), np.eye(m), 1.0)
        S = np.kron(np.eye(1), np.eye(m)) + np.kron(np.eye(1), np.eye(m))
        df = np.trace(np.linalg.solve(Psi + lam * S, Psi))
        assert df == pytest.approx(1.0, abs=1e-4)

    def test_unreachable_target_clamped(self, rng):
        m, mj = 3, 2
        A = rng.normal(size=(4, m * mj))  # rank 4 < 6
        Psi = A.T @ A
        with pytest.warns(UserWarning):
            lam, _ = df_to_lambda(Psi, np.eye(mj), np.eye(m), 6.0)
        assert lam == 0.0
