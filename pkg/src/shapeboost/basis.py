"""Response spline bases, tangent-space constraint transforms, and penalties.

The tangent space at a pole is parameterized through a real function basis
b_0^(1..m0) applied to both the real and the imaginary coordinate.  A real
2*m0 x m transform with orthonormal columns maps unconstrained coefficients
into the tangent space: its columns span the null space of the stacked
(real, imaginary) constraint matrix built from the normal directions of the
quotient geometry.  Closed curves use cyclic B-splines, so periodicity is
structural and never enters the constraint matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

from .geometry import CurveSample, GeometryError, GeometryKind, center, empirical_norm

__all__ = [
    "SplineConfig",
    "BSplineBasis",
    "PoleCoef",
    "TangentTransform",
    "PenaltyBlock",
    "build_response_basis",
    "curve_design",
    "constraint_matrix",
    "nullspace_transform",
    "tangent_design",
    "center_pole",
]

RANK_TOL = 1e-10


@dataclass(frozen=True)
class SplineConfig:
    """B-spline basis configuration.

    ``n_knots`` counts interior knots; the basis dimension is
    n_knots + degree + 1 for open bases and n_knots + 1 for cyclic ones.
    """

    degree: int = 3
    n_knots: int = 10
    cyclic: bool = False
    knot_rule: str = "equidistant"  # "equidistant" | "quantile"

    def __post_init__(self):
        if self.degree < 1:
            raise GeometryError("spline degree must be >= 1")
        if self.n_knots < 0:
            raise GeometryError("n_knots must be nonnegative")
        if self.knot_rule not in ("equidistant", "quantile"):
            raise GeometryError(f"unknown knot rule {self.knot_rule!r}")
        if self.cyclic and self.n_knots + 1 < self.degree + 1:
            raise GeometryError("cyclic basis needs n_knots + 1 >= degree + 1")

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "n_knots": self.n_knots,
            "cyclic": self.cyclic,
            "knot_rule": self.knot_rule,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplineConfig":
        return cls(
            degree=int(d["degree"]),
            n_knots=int(d["n_knots"]),
            cyclic=bool(d["cyclic"]),
            knot_rule=str(d.get("knot_rule", "equidistant")),
        )


class BSplineBasis:
    """Evaluable B-spline basis on [0, 1], optionally periodic.

    Periodic bases are built on periodically extended knots with wrapped
    coefficients, so partition of unity and periodicity hold by construction.
    """

    def __init__(self, cfg: SplineConfig, interior_knots: np.ndarray):
        interior = np.asarray(interior_knots, dtype=float)
        if interior.size != cfg.n_knots:
            raise GeometryError("interior knot count does not match configuration")
        if interior.size and (interior.min() <= 0.0 or interior.max() >= 1.0):
            raise GeometryError("interior knots must lie strictly inside (0, 1)")
        if np.any(np.diff(interior) <= 0):
            raise GeometryError("interior knots must be strictly increasing")
        self.cfg = cfg
        self.interior_knots = interior
        d = cfg.degree
        breaks = np.concatenate(([0.0], interior, [1.0]))
        self.breakpoints = breaks
        if cfg.cyclic:
            left = breaks[-(d + 1) : -1] - 1.0
            right = breaks[1 : d + 1] + 1.0
            self.knots = np.concatenate([left, breaks, right])
            self._n_full = breaks.size - 1 + d  # basis count before wrapping
            self.dim = breaks.size - 1
        else:
            self.knots = np.concatenate([np.zeros(d + 1), interior, np.ones(d + 1)])
            self._n_full = self.knots.size - d - 1
            self.dim = self._n_full

    def design(self, t: np.ndarray) -> np.ndarray:
        """Design matrix of basis evaluations, shape (len(t), dim).

        Cyclic bases evaluate t modulo 1, so rows at t and t + 1 coincide.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.cfg.cyclic:
            t = t - np.floor(t)
        elif t.min() < -1e-12 or t.max() > 1.0 + 1e-12:
            raise GeometryError("evaluation points outside [0, 1]")
        t = np.clip(t, self.knots[0], self.knots[-1])
        full = BSpline.design_matrix(t, self.knots, self.cfg.degree).toarray()
        if not self.cfg.cyclic:
            return full
        folded = np.zeros((t.size, self.dim))
        for i in range(self._n_full):
            folded[:, i % self.dim] += full[:, i]
        return folded

    @cached_property
    def gram(self) -> np.ndarray:
        """Exact L2([0,1]) Gram matrix via per-interval Gauss-Legendre quadrature."""
        d = self.cfg.degree
        nodes, wts = np.polynomial.legendre.leggauss(d + 1)
        G = np.zeros((self.dim, self.dim))
        for a, b in zip(self.breakpoints[:-1], self.breakpoints[1:]):
            x = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            B = self.design(x)
            G += 0.5 * (b - a) * (B.T * wts) @ B
        return G

    def penalty(self, kind: str = "second_diff") -> np.ndarray:
        """Coefficient penalty matrix: ridge, second-order difference, or zero.

        Cyclic bases use circular differences, so constants stay unpenalized.
        """
        m = self.dim
        if kind == "ridge":
            return np.eye(m)
        if kind == "none":
            return np.zeros((m, m))
        if kind != "second_diff":
            raise GeometryError(f"unknown penalty kind {kind!r}")
        if self.cfg.cyclic:
            D = np.zeros((m, m))
            for i in range(m):
                D[i, i] = 1.0
                D[i, (i + 1) % m] = -2.0
                D[i, (i + 2) % m] = 1.0
        else:
            if m < 3:
                return np.eye(m)
            D = np.zeros((m - 2, m))
            for i in range(m - 2):
                D[i, i : i + 3] = (1.0, -2.0, 1.0)
        return D.T @ D

    def to_dict(self) -> dict:
        return {"config": self.cfg.to_dict(), "interior_knots": self.interior_knots.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BSplineBasis":
        return cls(SplineConfig.from_dict(d["config"]), np.asarray(d["interior_knots"], dtype=float))


def build_response_basis(cfg: SplineConfig, all_observed_t: np.ndarray) -> BSplineBasis:
    """Construct the response basis, placing interior knots by the configured rule.

    The quantile rule puts knots at j/(n_knots+1) quantiles of the pooled
    observed evaluation points; it requires enough distinct values to keep the
    knots strictly increasing.
    """
    t = np.asarray(all_observed_t, dtype=float).ravel()
    K = cfg.n_knots
    if K == 0:
        return BSplineBasis(cfg, np.empty(0))
    if cfg.knot_rule == "equidistant":
        interior = np.arange(1, K + 1) / (K + 1)
    else:
        if t.size == 0:
            raise GeometryError("quantile knot rule needs observed evaluation points")
        probs = np.arange(1, K + 1) / (K + 1)
        interior = np.quantile(t, probs)
        interior = np.clip(interior, 1e-9, 1 - 1e-9)
        if np.any(np.diff(interior) <= 0):
            raise GeometryError("too few distinct observations for quantile knots")
    return BSplineBasis(cfg, interior)


def curve_design(basis: BSplineBasis, curve: CurveSample, coef_mode: bool = False) -> np.ndarray:
    """Response design matrix for one curve.

    In coefficient mode (full-Gram weights on coefficient vectors) the curve's
    values already live in the basis, so the design is the identity.
    """
    if coef_mode:
        if curve.k != basis.dim:
            raise GeometryError(
                f"curve {curve.id!r}: coefficient mode needs k == basis dim ({basis.dim}), got {curve.k}"
            )
        return np.eye(basis.dim)
    return basis.design(curve.grid)


@dataclass(frozen=True)
class PoleCoef:
    """Pole as complex coefficients in the response basis, evaluable anywhere."""

    coef: np.ndarray  # (m0,) complex
    basis: BSplineBasis

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=complex)
        if coef.shape != (self.basis.dim,):
            raise GeometryError("pole coefficient length does not match basis dimension")
        object.__setattr__(self, "coef", coef)

    def evaluate(self, grid: np.ndarray) -> np.ndarray:
        return self.basis.design(grid) @ self.coef

    def evaluate_design(self, design: np.ndarray) -> np.ndarray:
        return design @ self.coef


def center_pole(pole: PoleCoef, sample: list[CurveSample], designs: list[np.ndarray]) -> PoleCoef:
    """Recenter pole coefficients so <1, p> = 0 under the product-space inner product.

    Uses partition of unity: subtracting a multiple of the all-ones coefficient
    vector shifts every evaluation by that constant.
    """
    from .geometry import empirical_inner

    num = 0.0 + 0.0j
    den = 0.0
    for curve, B in zip(sample, designs):
        p_evals = B @ pole.coef
        ones = B @ np.ones(pole.basis.dim)
        num += empirical_inner(ones, p_evals, curve.weights)
        den += empirical_inner(ones, ones, curve.weights).real
    shift = num / den
    return PoleCoef(coef=pole.coef - shift * np.ones(pole.basis.dim), basis=pole.basis)


@dataclass(frozen=True)
class TangentTransform:
    """Orthonormal null-space transform Z mapping R^m into tangent coefficients.

    Z has shape (2*m0, m); the first m0 rows address the real part of the
    response coefficients, the remaining rows the imaginary part.
    """

    Z: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim != 2 or Z.shape[0] % 2 != 0:
            raise GeometryError("transform must be a (2*m0, m) matrix")
        object.__setattr__(self, "Z", Z)

    @property
    def m(self) -> int:
        return self.Z.shape[1]

    @property
    def m0(self) -> int:
        return self.Z.shape[0] // 2

    @cached_property
    def complex_columns(self) -> np.ndarray:
        """(m0, m) complex matrix whose columns are the tangent directions' coefficients."""
        m0 = self.m0
        return self.Z[:m0] + 1j * self.Z[m0:]

    def field_coef(self, coefs: np.ndarray) -> np.ndarray:
        """Map tangent coefficients (m,) or (m, ...) to complex basis coefficients."""
        return self.complex_columns @ coefs


def constraint_matrix(
    sample: list[CurveSample],
    pole: PoleCoef,
    kind: GeometryKind,
    designs: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Real constraint matrix (Re C, Im C) of the tangent space at the pole.

    C has one row per normal direction (1, i*1, i*p and, for shapes, p) and
    one column per basis function; entries are inner products averaged over
    the per-curve empirical inner products.  A coefficient vector
    (a, b) in R^{2*m0} representing sum_l (a_l + i b_l) b_0^(l) is tangent iff
    it lies in the null space of the returned matrix.
    """
    kind = GeometryKind.parse(kind)
    if not sample:
        raise GeometryError("constraint matrix needs a nonempty sample")
    m0 = pole.basis.dim
    n_rows = 4 if kind is GeometryKind.SHAPE else 3
    C = np.zeros((n_rows, m0), dtype=complex)
    for idx, curve in enumerate(sample):
        B = designs[idx] if designs is not None else curve_design(pole.basis, curve)
        w = curve.weights
        p_evals = B @ pole.coef
        p_c = center(p_evals, w)
        pn = empirical_norm(p_c, w)
        if pn <= 0:
            raise GeometryError(f"curve {curve.id!r}: pole is degenerate on this grid")
        p_hat = p_c / pn
        ones = np.ones(curve.k)
        one_n = empirical_norm(ones, w)
        zetas = [ones / one_n, 1j * ones / one_n, 1j * p_hat]
        if kind is GeometryKind.SHAPE:
            zetas.append(p_hat)
        if w.ndim == 2:
            WB = w @ B
        else:
            WB = w[:, None] * B
        for r, zeta in enumerate(zetas):
            # <b_l, zeta> = b_l^T W zeta: real basis, no conjugation needed
            C[r] += WB.T @ zeta
    C /= len(sample)
    return np.hstack([C.real, C.imag])


def nullspace_transform(C_real: np.ndarray) -> TangentTransform:
    """Orthonormal basis of the null space of the constraint matrix, via SVD.

    Singular values below RANK_TOL times the largest are treated as rank
    deficiencies; a warning is emitted because that reduces the number of
    constraints actually imposed.
    """
    C_real = np.asarray(C_real, dtype=float)
    n_rows, n_cols = C_real.shape
    if not np.any(C_real):
        return TangentTransform(np.eye(n_cols))
    _, s, Vh = np.linalg.svd(C_real, full_matrices=True)
    rank = int(np.sum(s > RANK_TOL * s[0]))
    if rank < min(n_rows, n_cols):
        warnings.warn(
            f"constraint matrix is rank deficient ({rank} < {min(n_rows, n_cols)}); "
            "reducing the number of imposed constraints",
            stacklevel=2,
        )
    return TangentTransform(Vh[rank:].T.copy())


def tangent_design(grid: np.ndarray, transform: TangentTransform, basis: BSplineBasis) -> np.ndarray:
    """Complex k x m design of the tangent directions evaluated on a grid."""
    B = basis.design(np.asarray(grid, dtype=float))
    return B @ transform.complex_columns


@dataclass(frozen=True)
class PenaltyBlock:
    """Penalty on the untransformed basis and its tangent-space version."""

    P0: np.ndarray
    P_perp: np.ndarray

    @classmethod
    def build(cls, basis: BSplineBasis, transform: TangentTransform, kind: str = "second_diff") -> "PenaltyBlock":
        P0 = basis.penalty(kind)
        Z = transform.Z
        m0 = transform.m0
        # Z^T (I_2 (x) P0) Z without forming the Kronecker product
        top, bot = Z[:m0], Z[m0:]
        P_perp = top.T @ P0 @ top + bot.T @ P0 @ bot
        P_perp = 0.5 * (P_perp + P_perp.T)
        return cls(P0=P0, P_perp=P_perp)
