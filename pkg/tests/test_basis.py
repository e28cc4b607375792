import numpy as np
import pytest

from shapeboost.basis import (
    PenaltyBlock,
    PoleCoef,
    SplineConfig,
    TangentTransform,
    build_response_basis,
    center_pole,
    constraint_matrix,
    curve_design,
    nullspace_transform,
    tangent_design,
)
from shapeboost.geometry import (
    CurveSample,
    GeometryError,
    GeometryKind,
    empirical_inner,
    uniform_weights,
)

from conftest import irregular_grid, smooth_curve


class TestResponseBasis:
    def test_degree_one_hat_at_knot(self):
        basis = build_response_basis(SplineConfig(degree=1, n_knots=3), np.linspace(0, 1, 10))
        # at an interior knot exactly one hat function equals 1
        row = basis.design(np.array([0.25]))[0]
        assert row.max() == pytest.approx(1.0, abs=1e-12)
        assert np.sum(row > 1e-12) == 1

    def test_cyclic_periodicity(self):
        basis = build_response_basis(SplineConfig(degree=3, n_knots=8, cyclic=True), np.linspace(0, 1, 30))
        r0 = basis.design(np.array([0.0]))
        r1 = basis.design(np.array([1.0]))
        assert np.allclose(r0, r1, atol=1e-12)
        t = np.linspace(0.05, 0.95, 7)
        assert np.allclose(basis.design(t), basis.design(t + 1.0), atol=1e-12)

    @pytest.mark.parametrize("degree", [1, 2, 3, 4])
    @pytest.mark.parametrize("cyclic", [False, True])
    def test_partition_of_unity(self, degree, cyclic):
        if cyclic and degree + 1 > 6:
            pytest.skip("needs enough knots")
        basis = build_response_basis(
            SplineConfig(degree=degree, n_knots=5, cyclic=cyclic), np.linspace(0, 1, 40)
        )
        t = np.linspace(0, 1, 101)
        assert np.abs(basis.design(t).sum(axis=1) - 1.0).max() <= 1e-10

    def test_quantile_rule_needs_distinct_points(self):
        with pytest.raises(GeometryError):
            build_response_basis(SplineConfig(degree=3, n_knots=5, knot_rule="quantile"), np.full(20, 0.5))

    def test_quantile_rule_follows_data(self):
        rng = np.random.default_rng(0)
        t = np.concatenate([rng.uniform(0, 0.2, 200), rng.uniform(0.8, 1.0, 50)])
        basis = build_response_basis(SplineConfig(degree=3, n_knots=4, knot_rule="quantile"), t)
        assert np.sum(basis.interior_knots < 0.3) >= 3

    def test_dimensions(self):
        assert build_response_basis(SplineConfig(3, 27, cyclic=True), np.linspace(0, 1, 99)).dim == 28
        assert build_response_basis(SplineConfig(3, 4, cyclic=False), np.linspace(0, 1, 99)).dim == 8

    def test_penalty_null_spaces(self):
        cyc = build_response_basis(SplineConfig(3, 8, cyclic=True), np.linspace(0, 1, 30))
        assert np.abs(cyc.penalty("second_diff") @ np.ones(cyc.dim)).max() <= 1e-12
        open_ = build_response_basis(SplineConfig(3, 5), np.linspace(0, 1, 30))
        P = open_.penalty("second_diff")
        assert np.abs(P @ np.ones(open_.dim)).max() <= 1e-12
        assert np.allclose(open_.penalty("ridge"), np.eye(open_.dim))
        assert not open_.penalty("none").any()


def _sample_and_pole(rng, n=5, kind=GeometryKind.FORM, m_knots=6):
    basis = build_response_basis(SplineConfig(3, m_knots, cyclic=True), np.linspace(0, 1, 50))
    coef = np.linalg.lstsq(
        basis.design(np.linspace(0, 1, 80, endpoint=False)),
        smooth_curve(rng, np.linspace(0, 1, 80, endpoint=False)),
        rcond=None,
    )[0]
    pole = PoleCoef(coef=coef, basis=basis)
    sample = []
    for i in range(n):
        grid = irregular_grid(rng, int(rng.integers(10, 30)))
        from shapeboost.geometry import trapezoid_weights

        sample.append(CurveSample(f"c{i}", grid, smooth_curve(rng, grid), trapezoid_weights(grid)))
    return basis, pole, sample


class TestConstraints:
    def test_single_landmark_config_matches_hand_sums(self):
        # one landmark configuration with uniform weights: C entries are finite sums
        basis = build_response_basis(SplineConfig(degree=1, n_knots=2), np.linspace(0, 1, 9))
        vals = np.array([1 + 1j, 2 - 1j, -1 + 0.5j, 0.5 - 0.5j])
        curve = CurveSample.from_landmarks("lm", vals)
        coef = np.linalg.lstsq(basis.design(curve.grid), vals, rcond=None)[0]
        pole = PoleCoef(coef=coef, basis=basis)
        C = constraint_matrix([curve], pole, GeometryKind.FORM)
        # oracle: direct sums over the grid
        B = basis.design(curve.grid)
        w = curve.weights
        p = B @ coef
        p_c = p - np.sum(w * p) / np.sum(w)
        p_hat = p_c / np.sqrt(np.sum(w * np.abs(p_c) ** 2))
        ones = np.ones(4) / np.sqrt(np.sum(w))
        zetas = [ones, 1j * ones, 1j * p_hat]
        m0 = basis.dim
        for r, z in enumerate(zetas):
            for l in range(m0):
                entry = np.sum(B[:, l] * w * z)
                assert C[r, l] == pytest.approx(entry.real, abs=1e-12)
                assert C[r, m0 + l] == pytest.approx(entry.imag, abs=1e-12)

    def test_rank_three_form_four_shape(self, rng):
        basis, pole, sample = _sample_and_pole(rng)
        C_form = constraint_matrix(sample, pole, GeometryKind.FORM)
        C_shape = constraint_matrix(sample, pole, GeometryKind.SHAPE)
        assert np.linalg.matrix_rank(C_form, tol=1e-8) == 3
        assert np.linalg.matrix_rank(C_shape, tol=1e-8) == 4

    def test_transform_dimensions(self, rng):
        basis, pole, sample = _sample_and_pole(rng)
        m0 = basis.dim
        for kind, r in [(GeometryKind.FORM, 3), (GeometryKind.SHAPE, 4)]:
            Z = nullspace_transform(constraint_matrix(sample, pole, kind))
            assert Z.m == 2 * m0 - r


class TestNullspaceTransform:
    def test_zero_constraints_identity(self):
        tr = nullspace_transform(np.zeros((2, 8)))
        assert np.allclose(tr.Z, np.eye(8))

    def test_canonical_row(self):
        C = np.zeros((1, 6))
        C[0, 0] = 1.0
        Z = nullspace_transform(C).Z
        assert Z.shape == (6, 5)
        assert np.abs(Z[0]).max() <= 1e-12

    def test_random_constraints(self, rng):
        C = rng.normal(size=(3, 20))
        tr = nullspace_transform(C)
        assert np.abs(C @ tr.Z).max() <= 1e-10
        assert np.allclose(tr.Z.T @ tr.Z, np.eye(tr.m), atol=1e-12)

    def test_rank_deficient_warns(self, rng):
        row = rng.normal(size=10)
        C = np.vstack([row, 2 * row])
        with pytest.warns(UserWarning):
            tr = nullspace_transform(C)
        assert tr.m == 9


class TestTangentDesign:
    def test_unconstrained_columns(self, rng):
        basis = build_response_basis(SplineConfig(2, 4), np.linspace(0, 1, 20))
        m0 = basis.dim
        tr = TangentTransform(np.eye(2 * m0))
        grid = np.linspace(0, 1, 11)
        D = tangent_design(grid, tr, basis)
        B = basis.design(grid)
        assert np.allclose(D[:, :m0], B)
        assert np.allclose(D[:, m0:], 1j * B)

    def test_constraints_hold_on_average(self, rng):
        basis, pole, sample = _sample_and_pole(rng)
        kind = GeometryKind.FORM
        tr = nullspace_transform(constraint_matrix(sample, pole, kind))
        # average <1, d_r> over the per-curve inner products is ~0
        m = tr.m
        acc = np.zeros(m, dtype=complex)
        for c in sample:
            D = tangent_design(c.grid, tr, basis)
            ones = np.ones(c.k) / np.sqrt(np.sum(c.weights))
            acc += np.array([empirical_inner(ones, D[:, r], c.weights) for r in range(m)])
        assert np.abs(acc / len(sample)).max() <= 1e-8

    def test_linearity_in_transform(self, rng):
        basis = build_response_basis(SplineConfig(2, 3), np.linspace(0, 1, 15))
        Z = np.linalg.qr(rng.normal(size=(2 * basis.dim, 4)))[0]
        grid = np.linspace(0, 1, 9)
        D1 = tangent_design(grid, TangentTransform(Z), basis)
        D2 = tangent_design(grid, TangentTransform(2.5 * Z), basis)
        assert np.allclose(D2, 2.5 * D1)

    def test_grid_outside_unit_interval_rejected(self, rng):
        basis = build_response_basis(SplineConfig(2, 3), np.linspace(0, 1, 15))
        tr = TangentTransform(np.eye(2 * basis.dim))
        with pytest.raises(GeometryError):
            tangent_design(np.array([-0.2, 0.5]), tr, basis)


class TestPenaltyBlock:
    def test_transformed_penalty_psd_and_formula(self, rng):
        basis, pole, sample = _sample_and_pole(rng)
        tr = nullspace_transform(constraint_matrix(sample, pole, GeometryKind.SHAPE))
        pb = PenaltyBlock.build(basis, tr, "second_diff")
        m0 = basis.dim
        dense = tr.Z.T @ np.kron(np.eye(2), pb.P0) @ tr.Z
        assert np.allclose(pb.P_perp, dense, atol=1e-12)
        assert np.linalg.eigvalsh(pb.P_perp).min() >= -1e-10

    def test_orthonormal_exactness(self, rng):
        basis, pole, sample = _sample_and_pole(rng)
        tr = nullspace_transform(constraint_matrix(sample, pole, GeometryKind.FORM))
        assert np.abs(tr.Z.T @ tr.Z - np.eye(tr.m)).max() <= 1e-12


class TestPoleCoef:
    def test_centering(self, rng):
        basis, pole, sample = _sample_and_pole(rng)
        designs = [curve_design(basis, c) for c in sample]
        centered = center_pole(pole, sample, designs)
        num = 0.0 + 0.0j
        for c, B in zip(sample, designs):
            ones = np.ones(c.k)
            num += empirical_inner(ones, B @ centered.coef, c.weights)
        assert abs(num / len(sample)) <= 1e-10

    def test_coef_mode_design_is_identity(self, rng):
        basis = build_response_basis(SplineConfig(2, 3), np.linspace(0, 1, 15))
        vals = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
        c = CurveSample("coef", np.arange(basis.dim) / (basis.dim - 1), vals, basis.gram)
        assert np.allclose(curve_design(basis, c, coef_mode=True), np.eye(basis.dim))
        with pytest.raises(GeometryError):
            curve_design(basis, CurveSample("bad", np.linspace(0, 1, 4), vals[:4], uniform_weights(4)), coef_mode=True)
