"""Quotient geometry of planar curves modulo translation, rotation and scale.

Planar curves and landmark configurations are identified with complex-valued
evaluation vectors.  A *form* is the equivalence class of a curve under
translation and rotation, a *shape* additionally quotients out scale.  All
operations work on irregular per-curve grids through empirical inner products

    <a, b>_W = conj(a)^T W b

with a positive weight vector (diagonal W) or a full symmetric
positive-definite weight matrix W.  The inner product is conjugate-linear in
the first argument.

Representatives are centered with respect to the unit-norm constant vector,
rotation aligned to a pole representative, and (for shapes) normalized to the
unit sphere, where the usual spherical exponential/logarithm maps and parallel
transport apply.  Form geometry is flat in the aligned chart except for the
rotation correction of the parallel transport.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

__all__ = [
    "GeometryKind",
    "CurveSample",
    "TangentEvals",
    "AlignedRep",
    "GeometryError",
    "DegenerateAlignment",
    "AntipodalTransport",
    "TangentError",
    "trapezoid_weights",
    "uniform_weights",
    "empirical_inner",
    "empirical_norm",
    "center",
    "tangent_project",
    "representative",
    "geodesic_dist",
    "exp_map",
    "log_map",
    "parallel_transport",
]

TANGENT_TOL = 1e-8
ALIGN_TOL = 1e-12
CUT_LOCUS_TOL = 1e-6
_SMALL_ANGLE = 1e-8


class GeometryError(ValueError):
    """Invalid geometric input (degenerate curve, bad weights, ...)."""


class DegenerateAlignment(GeometryError):
    """Rotation alignment is undefined: the aligned inner product vanishes."""


class AntipodalTransport(GeometryError):
    """Parallel transport undefined between (nearly) antipodal representatives."""


class TangentError(GeometryError):
    """A vector violates the tangent-space constraints beyond tolerance."""


class GeometryKind(enum.Enum):
    """Which group is quotiented out of the curve space."""

    FORM = "form"  # translation x rotation
    SHAPE = "shape"  # translation x rotation x scale

    @classmethod
    def parse(cls, value: "GeometryKind | str") -> "GeometryKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise GeometryError(f"unknown geometry kind {value!r}") from None


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Trapezoidal-rule quadrature weights for a strictly increasing grid in [0,1]."""
    t = np.asarray(grid, dtype=float)
    if t.size < 2:
        raise GeometryError("trapezoid weights need at least two grid points")
    w = np.empty_like(t)
    w[0] = (t[1] - t[0]) / 2.0
    w[-1] = (t[-1] - t[-2]) / 2.0
    if t.size > 2:
        w[1:-1] = (t[2:] - t[:-2]) / 2.0
    return w


def uniform_weights(k: int) -> np.ndarray:
    """Equal weights 1/k, the canonical landmark choice."""
    if k < 1:
        raise GeometryError("need at least one grid point")
    return np.full(k, 1.0 / k)


def _is_full(weights: np.ndarray) -> bool:
    return weights.ndim == 2


def empirical_inner(a: np.ndarray, b: np.ndarray, weights: np.ndarray) -> complex:
    """Empirical inner product conj(a)^T W b; Hermitian, conjugate-linear in ``a``."""
    a = np.asarray(a)
    b = np.asarray(b)
    w = np.asarray(weights)
    if a.shape != b.shape:
        raise GeometryError(f"length mismatch: {a.shape} vs {b.shape}")
    if _is_full(w):
        if w.shape != (a.size, a.size):
            raise GeometryError("weight matrix does not match value length")
        return complex(np.conj(a) @ w @ b)
    if w.shape != a.shape:
        raise GeometryError("weight vector does not match value length")
    return complex(np.sum(np.conj(a) * w * b))


def empirical_norm(a: np.ndarray, weights: np.ndarray) -> float:
    """Norm induced by the real part of the empirical inner product."""
    return float(np.sqrt(max(empirical_inner(a, a, weights).real, 0.0)))


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> complex:
    w = np.asarray(weights)
    if _is_full(w):
        ones = np.ones(values.size)
        return complex((ones @ w @ values) / (ones @ w @ ones))
    return complex(np.sum(w * values) / np.sum(w))


def center(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Centered representative: subtract the weighted centroid."""
    values = np.asarray(values, dtype=complex)
    return values - _weighted_mean(values, weights)


def _validate_weights(weights: np.ndarray, k: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        if w.shape != (k,):
            raise GeometryError("weight vector length does not match grid")
        if not np.all(w > 0):
            raise GeometryError("diagonal weights must be strictly positive")
    elif w.ndim == 2:
        if w.shape != (k, k):
            raise GeometryError("weight matrix shape does not match grid")
        if not np.allclose(w, w.T, rtol=0.0, atol=1e-10 * max(1.0, float(np.abs(w).max()))):
            raise GeometryError("weight matrix must be symmetric")
        try:
            np.linalg.cholesky(w)
        except np.linalg.LinAlgError:
            raise GeometryError("weight matrix is not positive definite") from None
    else:
        raise GeometryError("weights must be a vector or a square matrix")
    return w


@dataclass(frozen=True)
class CurveSample:
    """One observed planar curve or landmark configuration.

    Attributes
    ----------
    id : str
        Identifier used in error messages and file formats.
    grid : ndarray, shape (k,)
        Strictly increasing evaluation points in [0, 1].  Landmark
        configurations map index j to (j-1)/(k-1).
    values : ndarray of complex, shape (k,)
        Curve evaluations, x + i y.
    weights : ndarray, shape (k,) or (k, k)
        Positive quadrature weights or a full SPD weight matrix.
    """

    id: str
    grid: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=complex)
        if grid.ndim != 1 or values.shape != grid.shape:
            raise GeometryError(f"curve {self.id!r}: grid and values must be equal-length vectors")
        k = grid.size
        if k < 3:
            raise GeometryError(f"curve {self.id!r}: need at least 3 evaluation points, got {k}")
        if not np.all(np.diff(grid) > 0):
            raise GeometryError(f"curve {self.id!r}: grid must be strictly increasing")
        if grid[0] < -1e-12 or grid[-1] > 1 + 1e-12:
            raise GeometryError(f"curve {self.id!r}: grid must lie in [0, 1]")
        weights = _validate_weights(self.weights, k)
        centered = values - _weighted_mean(values, weights)
        scale = max(1.0, float(np.abs(values).max()))
        if empirical_norm(centered, weights) <= 1e-14 * scale:
            raise GeometryError(f"curve {self.id!r}: values are all equal (degenerate)")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @property
    def k(self) -> int:
        return self.grid.size

    @cached_property
    def weight_chol(self) -> np.ndarray | None:
        """Lower Cholesky factor of a full weight matrix (None for diagonal weights)."""
        if _is_full(self.weights):
            return np.linalg.cholesky(self.weights)
        return None

    @classmethod
    def from_landmarks(cls, id: str, values: np.ndarray, weights: np.ndarray | None = None) -> "CurveSample":
        """Build a sample from a landmark configuration, mapping index j to (j-1)/(k-1)."""
        values = np.asarray(values, dtype=complex)
        k = values.size
        grid = np.arange(k, dtype=float) / (k - 1)
        if weights is None:
            weights = uniform_weights(k)
        return cls(id=id, grid=grid, values=values, weights=weights)


@dataclass(frozen=True)
class TangentEvals:
    """A tangent vector at a pole, given by evaluations on one curve's grid.

    ``pole_evals`` holds the pole representative on the same grid (centered,
    and unit-norm for shapes); ``values`` satisfies the tangent constraints
    <1, v> = 0 and Im<v, p> = 0 (plus Re<v, p> = 0 for shapes) up to
    ``TANGENT_TOL`` relative to its norm.
    """

    grid: np.ndarray
    values: np.ndarray
    pole_evals: np.ndarray
    kind: GeometryKind
    weights: np.ndarray

    def norm(self) -> float:
        return empirical_norm(self.values, self.weights)

    def constraint_residuals(self) -> np.ndarray:
        """Absolute tangent-constraint residuals [Re<1,v>, Im<1,v>, Im<p̂,v>(, Re<p̂,v>)]."""
        w = self.weights
        ones = np.ones(self.values.size)
        c1 = empirical_inner(ones, self.values, w) / empirical_norm(ones, w)
        p = self.pole_evals
        pn = empirical_norm(p, w)
        cp = empirical_inner(p, self.values, w) / pn if pn > 0 else 0.0
        res = [abs(c1.real), abs(c1.imag), abs(cp.imag)]
        if self.kind is GeometryKind.SHAPE:
            res.append(abs(cp.real))
        return np.array(res)

    def validate(self, tol: float = TANGENT_TOL) -> None:
        scale = max(self.norm(), 1e-300)
        res = self.constraint_residuals()
        if np.any(res > tol * max(1.0, scale)):
            raise TangentError(
                f"tangent constraints violated: residuals {res} exceed {tol} * max(1, {scale:.3g})"
            )


class AlignedRep(NamedTuple):
    """Aligned representative with the rotation/scale applied to reach it."""

    values: np.ndarray
    rotation: complex
    scale: float


def _pole_rep(p_evals: np.ndarray, weights: np.ndarray, kind: GeometryKind) -> np.ndarray:
    """Centered (and for shapes unit-norm) pole representative."""
    p = center(p_evals, weights)
    n = empirical_norm(p, weights)
    if n <= 0:
        raise GeometryError("pole representative is degenerate after centering")
    if kind is GeometryKind.SHAPE:
        p = p / n
    return p


def _align(y_c: np.ndarray, p_c: np.ndarray, weights: np.ndarray, who: str = "curve") -> tuple[np.ndarray, complex]:
    ip = empirical_inner(y_c, p_c, weights)
    ny = empirical_norm(y_c, weights)
    np_ = empirical_norm(p_c, weights)
    if abs(ip) < ALIGN_TOL * ny * np_:
        raise DegenerateAlignment(
            f"{who}: rotation alignment undefined, |<y, p>| = {abs(ip):.3e} below threshold"
        )
    u = ip / abs(ip)
    return u * y_c, complex(u)


def representative(y: CurveSample, p_evals: np.ndarray, kind: GeometryKind) -> AlignedRep:
    """Centered, rotation-aligned (and for shapes normalized) representative of [y].

    Both the curve and the pole evaluations are centered first; the curve is
    rotated by u = <ỹ, p̃>/|<ỹ, p̃>| so that the aligned inner product is real
    and positive.  Returns the representative together with the rotation u and
    the scale factor applied (1 for forms).
    """
    kind = GeometryKind.parse(kind)
    w = y.weights
    y_c = center(y.values, w)
    p_c = center(np.asarray(p_evals, dtype=complex), w)
    aligned, u = _align(y_c, p_c, w, who=f"curve {y.id!r}")
    lam = 1.0
    if kind is GeometryKind.SHAPE:
        n = empirical_norm(aligned, w)
        lam = 1.0 / n
        aligned = aligned * lam
    return AlignedRep(values=aligned, rotation=u, scale=lam)


def geodesic_dist(y: CurveSample, p_evals: np.ndarray, kind: GeometryKind) -> float:
    """Geodesic distance between [y] and [p].

    Forms: ||ỹ - p̃|| of the aligned centered representatives.  Shapes:
    arccos of the (clamped) absolute inner product of the normalized
    representatives, the Procrustes distance.
    """
    kind = GeometryKind.parse(kind)
    w = y.weights
    p_rep = _pole_rep(p_evals, w, kind)
    y_c = center(y.values, w)
    ip = empirical_inner(y_c, p_rep, w)
    # the distance only involves |<y, p>|, so it stays defined where the
    # aligning rotation itself is degenerate
    u = ip / abs(ip) if abs(ip) > 0 else 1.0
    if kind is GeometryKind.FORM:
        return empirical_norm(u * y_c - p_rep, w)
    y_hat = y_c / empirical_norm(y_c, w)
    c = min(abs(ip) / empirical_norm(y_c, w), 1.0)
    # arccos(c) evaluated as atan2(sin, cos); well conditioned near c = 1
    s = empirical_norm(u * y_hat - c * p_rep, w)
    return float(np.arctan2(min(s, 1.0), c))


def exp_map(
    p_evals: np.ndarray,
    beta: TangentEvals,
    kind: GeometryKind,
    check: bool = True,
) -> np.ndarray:
    """Riemannian exponential: representative of Exp_[p](beta) on beta's grid.

    Forms: p̃ + β.  Shapes: cos(||β||) p̃ + sin(||β||) β/||β|| with a series
    guard for ||β|| < 1e-8; values with ||β|| >= π - 1e-6 are rejected, the
    map is undefined at and beyond the cut locus.
    """
    kind = GeometryKind.parse(kind)
    w = beta.weights
    p = _pole_rep(np.asarray(p_evals, dtype=complex), w, kind)
    if check:
        beta.validate()
    if kind is GeometryKind.FORM:
        return p + beta.values
    n = beta.norm()
    if n >= np.pi - CUT_LOCUS_TOL:
        raise GeometryError(f"shape exponential undefined for ||beta|| = {n:.6f} >= pi - {CUT_LOCUS_TOL}")
    if n < _SMALL_ANGLE:
        # sin(x)/x -> 1 - x^2/6, cos(x) -> 1 - x^2/2
        return p * (1.0 - n * n / 2.0) + beta.values * (1.0 - n * n / 6.0)
    return np.cos(n) * p + np.sin(n) * (beta.values / n)


def log_map(p_evals: np.ndarray, y: CurveSample, kind: GeometryKind) -> TangentEvals:
    """Riemannian logarithm Log_[p]([y]) as tangent evaluations at the pole.

    Forms: ỹ - p̃.  Shapes: d * (ỹ - <p̃, ỹ> p̃) / ||ỹ - <p̃, ỹ> p̃|| with the
    geodesic distance d; returns the zero vector when [y] = [p].
    """
    kind = GeometryKind.parse(kind)
    w = y.weights
    p = _pole_rep(np.asarray(p_evals, dtype=complex), w, kind)
    rep = representative(y, p_evals, kind).values
    if kind is GeometryKind.FORM:
        vals = rep - p
    else:
        c = empirical_inner(p, rep, w)
        resid = rep - c * p
        rn = empirical_norm(resid, w)
        d = float(np.arctan2(min(rn, 1.0), min(abs(c), 1.0)))
        vals = np.zeros_like(rep) if rn <= 0.0 else resid * (d / rn)
    return TangentEvals(grid=y.grid, values=vals, pole_evals=p, kind=kind, weights=w)


def parallel_transport(
    from_evals: np.ndarray,
    to_evals: np.ndarray,
    eps: TangentEvals,
    kind: GeometryKind,
    check: bool = True,
) -> TangentEvals:
    """Parallel transport of ``eps`` from T_[y] to T_[p] along the geodesic.

    ``from_evals`` and ``to_evals`` must be mutually aligned centered
    representatives (unit norm for shapes).  Shapes use the spherical
    transport with the complex inner product,

        eps - <p̃, eps> (ỹ + p̃) / (1 + <ỹ, p̃>) ,

    forms only rotate the Im<p̂, eps> coordinate orthogonal to the real
    ŷ-p̂ plane while leaving the rest untouched.
    """
    kind = GeometryKind.parse(kind)
    w = eps.weights
    y = center(np.asarray(from_evals, dtype=complex), w)
    p = center(np.asarray(to_evals, dtype=complex), w)
    if check:
        eps.validate()
    ny = empirical_norm(y, w)
    npole = empirical_norm(p, w)
    if ny <= 0 or npole <= 0:
        raise GeometryError("transport endpoints are degenerate after centering")
    y_hat = y / ny
    p_hat = p / npole
    a = empirical_inner(y_hat, p_hat, w)
    denom = 1.0 + a.real
    if denom < 1e-12:
        raise AntipodalTransport(f"transport undefined: <y, p> = {a.real:.6f} ~ -||y|| ||p||")
    if kind is GeometryKind.SHAPE:
        c = empirical_inner(p_hat, eps.values, w)
        vals = eps.values - c * (y_hat + p_hat) / denom
        pole_rep = p_hat
    else:
        c = empirical_inner(p_hat, eps.values, w).imag
        vals = eps.values - 1j * c * (y_hat + p_hat) / denom
        pole_rep = p
    return TangentEvals(grid=eps.grid, values=vals, pole_evals=pole_rep, kind=kind, weights=w)


def tangent_project(
    values: np.ndarray,
    p_evals: np.ndarray,
    weights: np.ndarray,
    kind: GeometryKind,
    grid: np.ndarray | None = None,
) -> TangentEvals:
    """Orthogonal projection of arbitrary evaluations onto the tangent space at [p].

    Removes the components along the normal directions 1, i*1, i*p̃ (and p̃ for
    shapes) under the empirical inner product.  Mainly a helper for residual
    simulation and for constructing valid test tangents.
    """
    kind = GeometryKind.parse(kind)
    w = np.asarray(weights)
    v = center(np.asarray(values, dtype=complex), w)
    p = _pole_rep(np.asarray(p_evals, dtype=complex), w, kind)
    pn = empirical_norm(p, w)
    p_hat = p / pn
    c = empirical_inner(p_hat, v, w)
    if kind is GeometryKind.SHAPE:
        v = v - c * p_hat
    else:
        v = v - 1j * c.imag * p_hat
    if grid is None:
        grid = np.arange(v.size, dtype=float) / max(v.size - 1, 1)
    return TangentEvals(grid=np.asarray(grid, dtype=float), values=v, pole_evals=p, kind=kind, weights=w)
