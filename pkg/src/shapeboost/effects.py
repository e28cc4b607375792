"""Covariate effect bases, PLS normal equations and degrees-of-freedom control.

Every effect is a tensor product of the tangent directions with a scalar
covariate basis.  Identifiability constraints (sum-to-zero, centering around
marginal or parent effects) are absorbed by reparameterizing the covariate
design into the null space of the constraint rows, so fitted coefficient
matrices are unconstrained.

For coefficients arranged column-major as vec(Theta) the penalized normal
equations have Kronecker structure

    Psi = sum_i b(x_i) b(x_i)^T (x) G_i,      G_i = Re(D_i^H W_i D_i),
    psi = sum_i b(x_i) (x) Re(D_i^H W_i eps_i),

with D_i the complex tangent design of curve i.  Base-learner flexibility is
equalized by calibrating a single penalty scale to a target of effective
degrees of freedom trace[(Psi + R(lambda))^{-1} Psi].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import BSplineBasis, SplineConfig, build_response_basis

__all__ = [
    "EffectError",
    "EffectSpec",
    "CovariateMap",
    "KronPenalty",
    "covariate_design",
    "curve_gram",
    "curve_proj",
    "assemble_psi_matrix",
    "assemble_psi_vector",
    "assemble_normal_eqs",
    "pls_solve",
    "df_to_lambda",
    "vec",
    "unvec",
]

EFFECT_KINDS = ("constant", "linear", "categorical", "smooth", "smooth_interaction")
CENTERINGS = ("none", "sum_to_zero", "around_marginals")
PENALTIES = ("ridge", "second_diff", "none")


class EffectError(ValueError):
    """Invalid effect specification or covariate data."""


@dataclass(frozen=True)
class EffectSpec:
    """Declarative configuration of one covariate effect (base-learner)."""

    name: str
    kind: str
    covariates: tuple[str, ...] = ()
    covariate_basis: SplineConfig | None = None
    df_target: float = 4.0
    penalty_covariate: str = "ridge"
    penalty_tangent: str = "inherit"
    centering: str = "sum_to_zero"
    parents: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "parents", tuple(self.parents))
        if self.kind not in EFFECT_KINDS:
            raise EffectError(f"effect {self.name!r}: unknown kind {self.kind!r}")
        if self.centering not in CENTERINGS:
            raise EffectError(f"effect {self.name!r}: unknown centering {self.centering!r}")
        if self.penalty_covariate not in PENALTIES:
            raise EffectError(f"effect {self.name!r}: unknown penalty {self.penalty_covariate!r}")
        if self.penalty_tangent not in PENALTIES + ("inherit",):
            raise EffectError(f"effect {self.name!r}: unknown tangent penalty {self.penalty_tangent!r}")
        n_cov = {"constant": 0, "linear": 1, "categorical": 1, "smooth": 1, "smooth_interaction": 2}[self.kind]
        if len(self.covariates) != n_cov:
            raise EffectError(
                f"effect {self.name!r}: kind {self.kind!r} needs {n_cov} covariate(s), got {len(self.covariates)}"
            )
        if self.df_target <= 0:
            raise EffectError(f"effect {self.name!r}: df_target must be positive")
        if self.kind in ("smooth", "smooth_interaction") and self.covariate_basis is None:
            object.__setattr__(self, "covariate_basis", SplineConfig(degree=3, n_knots=4))

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "kind": self.kind,
            "covariates": list(self.covariates),
            "df_target": self.df_target,
            "penalty_covariate": self.penalty_covariate,
            "penalty_tangent": self.penalty_tangent,
            "centering": self.centering,
            "parents": list(self.parents),
        }
        if self.covariate_basis is not None:
            d["covariate_basis"] = self.covariate_basis.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EffectSpec":
        basis = d.get("covariate_basis")
        return cls(
            name=str(d["name"]),
            kind=str(d["kind"]),
            covariates=tuple(d.get("covariates", ())),
            covariate_basis=SplineConfig.from_dict(basis) if basis else None,
            df_target=float(d.get("df_target", 4.0)),
            penalty_covariate=str(d.get("penalty_covariate", "ridge")),
            penalty_tangent=str(d.get("penalty_tangent", "inherit")),
            centering=str(d.get("centering", "sum_to_zero")),
            parents=tuple(d.get("parents", ())),
        )


def _get_column(table: dict, name: str, n: int) -> np.ndarray:
    if name not in table:
        raise EffectError(f"missing covariate column {name!r}")
    col = np.asarray(table[name])
    if col.shape != (n,):
        raise EffectError(f"covariate column {name!r} has length {col.size}, expected {n}")
    return col


def _numeric_column(table: dict, name: str, n: int) -> np.ndarray:
    col = _get_column(table, name, n)
    try:
        return col.astype(float)
    except ValueError:
        raise EffectError(f"covariate column {name!r} must be numeric") from None


@dataclass
class _Margin:
    """One marginal scalar basis of a smooth term: spline over a covariate range."""

    basis: BSplineBasis
    lo: float
    hi: float

    def design(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        span = self.hi - self.lo
        t = np.clip((z - self.lo) / span, 0.0, 1.0) if span > 0 else np.zeros_like(z)
        return self.basis.design(t)

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d: dict) -> "_Margin":
        return cls(basis=BSplineBasis.from_dict(d["basis"]), lo=float(d["lo"]), hi=float(d["hi"]))


@dataclass
class CovariateMap:
    """Fitted covariate design of one effect, reusable at prediction time.

    Holds the raw basis (contrasts, centered column, spline margins), the
    constraint reparameterization ``Zc`` (raw dim x m_j, None for identity)
    and the penalty on the reparameterized coefficients.
    """

    spec: EffectSpec
    m_j: int
    penalty: np.ndarray
    Zc: np.ndarray | None = None
    levels: list[str] | None = None
    z_mean: float | None = None
    margins: list[_Margin] = field(default_factory=list)

    def raw_row(self, x: dict) -> np.ndarray:
        spec = self.spec
        if spec.kind == "constant":
            return np.ones(1)
        if spec.kind == "linear":
            z = float(x[spec.covariates[0]])
            return np.array([z - self.z_mean])
        if spec.kind == "categorical":
            level = str(x[spec.covariates[0]])
            if level not in self.levels:
                raise EffectError(
                    f"effect {spec.name!r}: unseen categorical level {level!r} (known: {self.levels})"
                )
            K = len(self.levels)
            idx = self.levels.index(level)
            row = np.zeros(K - 1)
            if idx < K - 1:
                row[idx] = 1.0
            else:
                row[:] = -1.0
            return row
        if spec.kind == "smooth":
            return self.margins[0].design(np.array([float(x[spec.covariates[0]])]))[0]
        rows = [
            margin.design(np.array([float(x[cov])]))[0]
            for margin, cov in zip(self.margins, spec.covariates)
        ]
        return np.kron(rows[0], rows[1])

    def row(self, x: dict) -> np.ndarray:
        raw = self.raw_row(x)
        return raw if self.Zc is None else raw @ self.Zc

    def raw_design(self, table: dict, n: int) -> np.ndarray:
        spec = self.spec
        if spec.kind == "constant":
            return np.ones((n, 1))
        if spec.kind == "linear":
            z = _numeric_column(table, spec.covariates[0], n)
            return (z - self.z_mean)[:, None]
        if spec.kind == "categorical":
            col = _get_column(table, spec.covariates[0], n)
            return np.vstack([self.raw_row({spec.covariates[0]: v}) for v in col])
        if spec.kind == "smooth":
            return self.margins[0].design(_numeric_column(table, spec.covariates[0], n))
        B1 = self.margins[0].design(_numeric_column(table, spec.covariates[0], n))
        B2 = self.margins[1].design(_numeric_column(table, spec.covariates[1], n))
        # row-wise product of the marginal designs
        return (B1[:, :, None] * B2[:, None, :]).reshape(n, -1)

    def design(self, table: dict, n: int) -> np.ndarray:
        raw = self.raw_design(table, n)
        return raw if self.Zc is None else raw @ self.Zc

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "m_j": self.m_j,
            "penalty": self.penalty.tolist(),
            "Zc": None if self.Zc is None else self.Zc.tolist(),
            "levels": self.levels,
            "z_mean": self.z_mean,
            "margins": [m.to_dict() for m in self.margins],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateMap":
        return cls(
            spec=EffectSpec.from_dict(d["spec"]),
            m_j=int(d["m_j"]),
            penalty=np.asarray(d["penalty"], dtype=float),
            Zc=None if d.get("Zc") is None else np.asarray(d["Zc"], dtype=float),
            levels=d.get("levels"),
            z_mean=d.get("z_mean"),
            margins=[_Margin.from_dict(m) for m in d.get("margins", [])],
        )


def _nullspace(C: np.ndarray, abs_tol: float = 0.0) -> np.ndarray:
    if C.size == 0 or not np.any(C):
        return np.eye(C.shape[1])
    _, s, Vh = np.linalg.svd(C, full_matrices=True)
    rank = int(np.sum(s > max(1e-10 * s[0], abs_tol)))
    return Vh[rank:].T.copy()


def _build_margin(cfg: SplineConfig, z: np.ndarray) -> _Margin:
    lo, hi = float(np.min(z)), float(np.max(z))
    if hi <= lo:
        raise EffectError("smooth covariate is constant; cannot build a spline basis")
    t = (z - lo) / (hi - lo)
    basis = build_response_basis(cfg, t)
    return _Margin(basis=basis, lo=lo, hi=hi)


def covariate_design(
    spec: EffectSpec,
    table: dict,
    n: int,
    parent_designs: dict[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, CovariateMap]:
    """Build the n x m_j covariate design of one effect plus its reparameterization.

    Linear effects use a single centered column, categorical effects effect
    coding (K-1 contrast columns, the last level coded -1), smooth effects a
    B-spline design over the observed covariate range, and interactions the
    row-wise product of the marginal designs.  Constraints are imposed by
    reparameterizing into the null space of the constraint rows: sum-to-zero
    uses the intercept row, marginal/parent centering adds the parent design
    columns (projection against the parent design).
    """
    cmap = CovariateMap(spec=spec, m_j=0, penalty=np.zeros((0, 0)))
    if spec.kind == "constant":
        raw = np.ones((n, 1))
        P_raw = np.eye(1) if spec.penalty_covariate == "ridge" else np.zeros((1, 1))
    elif spec.kind == "linear":
        z = _numeric_column(table, spec.covariates[0], n)
        cmap.z_mean = float(np.mean(z)) if spec.centering != "none" else 0.0
        raw = (z - cmap.z_mean)[:, None]
        P_raw = np.eye(1) if spec.penalty_covariate == "ridge" else np.zeros((1, 1))
    elif spec.kind == "categorical":
        col = _get_column(table, spec.covariates[0], n)
        levels = sorted({str(v) for v in col})
        if len(levels) < 2:
            raise EffectError(f"effect {spec.name!r}: categorical covariate needs >= 2 levels")
        cmap.levels = levels
        raw = cmap.raw_design(table, n)
        P_raw = np.eye(len(levels) - 1) if spec.penalty_covariate == "ridge" else np.zeros((len(levels) - 1,) * 2)
    elif spec.kind == "smooth":
        z = _numeric_column(table, spec.covariates[0], n)
        cmap.margins = [_build_margin(spec.covariate_basis, z)]
        raw = cmap.raw_design(table, n)
        P_raw = cmap.margins[0].basis.penalty(spec.penalty_covariate)
    else:  # smooth_interaction
        z1 = _numeric_column(table, spec.covariates[0], n)
        z2 = _numeric_column(table, spec.covariates[1], n)
        cmap.margins = [_build_margin(spec.covariate_basis, z1), _build_margin(spec.covariate_basis, z2)]
        raw = cmap.raw_design(table, n)
        m1 = cmap.margins[0].basis.dim
        m2 = cmap.margins[1].basis.dim
        if spec.penalty_covariate == "ridge":
            P_raw = np.eye(m1 * m2)
        elif spec.penalty_covariate == "none":
            P_raw = np.zeros((m1 * m2, m1 * m2))
        else:
            P1 = cmap.margins[0].basis.penalty("second_diff")
            P2 = cmap.margins[1].basis.penalty("second_diff")
            P_raw = np.kron(P1, np.eye(m2)) + np.kron(np.eye(m1), P2)

    constraints: list[np.ndarray] = []
    # mean subtraction / effect coding already centers linear and categorical terms
    if spec.centering in ("sum_to_zero", "around_marginals") and spec.kind in ("smooth", "smooth_interaction"):
        constraints.append(np.ones((1, n)) @ raw)
    if spec.centering == "around_marginals":
        if spec.kind == "smooth_interaction":
            for margin, cov in zip(cmap.margins, spec.covariates):
                Bm = margin.design(_numeric_column(table, cov, n))
                constraints.append(Bm.T @ raw)
        if spec.parents:
            if parent_designs is None:
                raise EffectError(f"effect {spec.name!r}: parent designs not supplied")
            for parent in spec.parents:
                if parent not in parent_designs:
                    raise EffectError(f"effect {spec.name!r}: unknown parent effect {parent!r}")
                constraints.append(parent_designs[parent].T @ raw)
        if spec.kind not in ("smooth_interaction",) and not spec.parents:
            raise EffectError(
                f"effect {spec.name!r}: around_marginals centering needs parents or an interaction"
            )

    if constraints:
        C = np.vstack(constraints)
        Zc = _nullspace(C, abs_tol=1e-10 * n * max(1.0, float(np.abs(raw).max())))
        if Zc.shape[1] == 0:
            raise EffectError(f"effect {spec.name!r}: constraints leave no free coefficients")
        cmap.Zc = Zc
        design = raw @ Zc
        cmap.penalty = Zc.T @ P_raw @ Zc
    else:
        cmap.Zc = None
        design = raw
        cmap.penalty = P_raw
    cmap.penalty = 0.5 * (cmap.penalty + cmap.penalty.T)
    cmap.m_j = design.shape[1]
    return design, cmap


# ---------------------------------------------------------------------------
# normal equations and PLS


def curve_gram(D: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Tangent Gram block G = Re(D^H W D) of one curve."""
    if weights.ndim == 2:
        G = (np.conj(D.T) @ weights @ D).real
    else:
        G = (np.conj(D.T) * weights) @ D
        G = G.real
    return 0.5 * (G + G.T)


def curve_proj(D: np.ndarray, weights: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Projection Re(D^H W eps) of one curve's residual onto the tangent directions."""
    if weights.ndim == 2:
        return (np.conj(D.T) @ (weights @ eps)).real
    return (np.conj(D.T) @ (weights * eps)).real


def assemble_psi_matrix(cov_design: np.ndarray, grams: list[np.ndarray]) -> np.ndarray:
    """Psi = sum_i b(x_i) b(x_i)^T (x) G_i for column-major vec(Theta)."""
    n, m_j = cov_design.shape
    m = grams[0].shape[0]
    Psi = np.zeros((m * m_j, m * m_j))
    for i in range(n):
        b = cov_design[i]
        Psi += np.kron(np.outer(b, b), grams[i])
    return 0.5 * (Psi + Psi.T)


def assemble_psi_vector(cov_design: np.ndarray, projs: list[np.ndarray] | np.ndarray) -> np.ndarray:
    """psi = sum_i b(x_i) (x) g_i with g_i = Re(D_i^H W_i eps_i)."""
    G = np.asarray(projs)  # (n, m)
    # sum_i kron(b_i, g_i) = vec-major stack of G^T @ cov_design columns
    return (G.T @ cov_design).T.reshape(-1)


def assemble_normal_eqs(
    tangent_designs: list[np.ndarray],
    weights: list[np.ndarray],
    cov_design: np.ndarray,
    residuals: list[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Assemble (Psi_j, psi_j) from per-curve tangent designs and residuals."""
    grams = [curve_gram(D, w) for D, w in zip(tangent_designs, weights)]
    projs = np.array([curve_proj(D, w, e) for D, w, e in zip(tangent_designs, weights, residuals)])
    return assemble_psi_matrix(cov_design, grams), assemble_psi_vector(cov_design, projs)


def vec(theta: np.ndarray) -> np.ndarray:
    """Column-major vectorization (theta^(1,1), ..., theta^(m,1), theta^(1,2), ...)."""
    return theta.reshape(-1, order="F")


def unvec(v: np.ndarray, m: int, m_j: int) -> np.ndarray:
    return v.reshape(m, m_j, order="F")


@dataclass(frozen=True)
class KronPenalty:
    """Kronecker-structured penalty lambda_j (P_j (x) I_m) + lambda_perp (I_mj (x) P_perp)."""

    lam_cov: float
    lam_tan: float
    P_cov: np.ndarray
    P_tan: np.ndarray

    def materialize(self) -> np.ndarray:
        m_j = self.P_cov.shape[0]
        m = self.P_tan.shape[0]
        R = self.lam_cov * np.kron(self.P_cov, np.eye(m)) + self.lam_tan * np.kron(np.eye(m_j), self.P_tan)
        return 0.5 * (R + R.T)


def pls_solve(Psi: np.ndarray, psi: np.ndarray, R: np.ndarray | KronPenalty | None, m: int, m_j: int) -> np.ndarray:
    """Penalized least-squares solve vec(Theta) = (Psi + R)^{-1} psi.

    Falls back to a least-norm pseudo-inverse solution (with a warning) when
    the penalized system is singular.
    """
    A = Psi if R is None else Psi + (R.materialize() if isinstance(R, KronPenalty) else R)
    try:
        c, low = scipy.linalg.cho_factor(A, check_finite=False)
        v = scipy.linalg.cho_solve((c, low), psi, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        warnings.warn("singular PLS system; returning least-norm pseudo-inverse solution", stacklevel=2)
        v = np.linalg.pinv(A, rcond=1e-12) @ psi
    return unvec(v, m, m_j)


def _combined_penalty(P_cov: np.ndarray, P_tan: np.ndarray) -> np.ndarray:
    m_j = P_cov.shape[0]
    m = P_tan.shape[0]
    S = np.kron(P_cov, np.eye(m)) + np.kron(np.eye(m_j), P_tan)
    return 0.5 * (S + S.T)


def df_of_lambda(Psi: np.ndarray, S: np.ndarray, lam: float) -> float:
    """Effective degrees of freedom trace[(Psi + lam*S)^{-1} Psi]."""
    A = Psi + lam * S
    try:
        c, low = scipy.linalg.cho_factor(A, check_finite=False)
        X = scipy.linalg.cho_solve((c, low), Psi, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        X = np.linalg.pinv(A, rcond=1e-12) @ Psi
    return float(np.trace(X))


def df_to_lambda(
    Psi: np.ndarray,
    P_cov: np.ndarray,
    P_tan: np.ndarray,
    df_target: float,
    tol: float = 1e-4,
) -> tuple[float, float]:
    """Calibrate the penalty scale so the base-learner has the requested df.

    One scalar lambda multiplies the combined penalty
    S = P_cov (x) I + I (x) P_perp; a 1e-8 ridge is added to S during
    calibration when S is singular, keeping df finite on penalty null
    spaces.  Solved by bisection on log(lambda) in [-20, 30]; unreachable
    targets are clamped to the nearest attainable value with a warning.
    Returns the shared scale for both penalty directions.
    """
    S = _combined_penalty(P_cov, P_tan)
    eig_min = float(np.linalg.eigvalsh(S).min()) if S.size else 0.0
    s_scale = float(np.abs(S).max()) if S.size else 0.0
    if s_scale == 0.0:
        S = np.eye(S.shape[0])
        eig_min = 1.0
    elif eig_min < 1e-10 * s_scale:
        S = S + 1e-8 * s_scale * np.eye(S.shape[0])

    # generalized eigenvalues of (Psi, S): df(lam) = sum mu_i / (mu_i + lam)
    L = np.linalg.cholesky(S)
    M = scipy.linalg.solve_triangular(L, Psi, lower=True, check_finite=False)
    M = scipy.linalg.solve_triangular(L, M.T, lower=True, check_finite=False)
    mu = np.linalg.eigvalsh(0.5 * (M + M.T))
    mu = np.where(mu > 1e-12 * max(mu.max(), 1e-300), mu, 0.0)
    rank = int(np.sum(mu > 0))

    def df(lam: float) -> float:
        pos = mu[mu > 0]
        return float(np.sum(pos / (pos + lam)))

    if df_target >= rank - tol:
        if df_target > rank + tol:
            warnings.warn(
                f"df target {df_target} exceeds rank {rank}; clamping to the unpenalized fit",
                stacklevel=2,
            )
        return 0.0, 0.0
    lo, hi = -20.0, 30.0
    if df(np.exp(hi)) > df_target + tol:
        warnings.warn(f"df target {df_target} unreachable; clamping at lambda = e^30", stacklevel=2)
        return float(np.exp(hi)), float(np.exp(hi))
    if df(np.exp(lo)) < df_target - tol:
        warnings.warn(f"df target {df_target} unreachable; clamping at lambda = e^-20", stacklevel=2)
        return float(np.exp(lo)), float(np.exp(lo))
    lam = np.exp(0.5 * (lo + hi))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = df(np.exp(mid))
        if abs(val - df_target) <= tol:
            lam = np.exp(mid)
            break
        if val > df_target:
            lo = mid
        else:
            hi = mid
    else:
        lam = np.exp(0.5 * (lo + hi))
    return float(lam), float(lam)
