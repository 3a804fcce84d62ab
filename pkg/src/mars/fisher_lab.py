"""Average-curvature (empirical Fisher) analysis for the linear BT model.

The per-sample Hessian is c(delta) * psi psi^T with the logistic curvature
factor c(delta) = sigmoid(delta) * (1 - sigmoid(delta)); its dataset mean is
the empirical Fisher matrix.  This module computes that matrix, bins a
dataset by |margin| to expose how curvature concentrates on ambiguous
comparisons, and numerically certifies the mixture-domination guarantee

    I_mix >= [alpha + (1 - alpha) * gamma_curv] * I_orig      (Loewner order)
    gamma_curv = beta * c(gamma_aug) / c(gamma_org)

together with the matching lower bound on the smallest eigenvalue.

Eigenvalues come from a cyclic Jacobi sweep: dependency-free, deterministic,
and accurate to ~1e-9 for the dense sizes used here (d <= 64, capped at 256).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .bt_core import (
    Dataset,
    PreferenceTuple,
    RewardParams,
    curvature_factor,
    margin,
    preference_tuple,
    reward_params,
)
from .errors import (
    AssumptionViolationError,
    ConfigError,
    EmptyDatasetError,
    NotSymmetricError,
)

MAX_DENSE_DIM = 256
_SYMMETRY_TOL = 1e-9
_PSD_TOL = 1e-8
_BETA_CERT_TOL = 1e-9


def curvature_weight(delta: float) -> float:
    """c(delta) = sigmoid(delta)*(1 - sigmoid(delta)); even, peaks at 0.25."""
    return float(curvature_factor(delta))


@dataclass(frozen=True)
class FisherMatrix:
    """Symmetric PSD accumulation of curvature-weighted outer products."""

    entries: np.ndarray
    n_samples: int


def _tuple_list(tuples) -> list[PreferenceTuple]:
    if isinstance(tuples, Dataset):
        return list(tuples.tuples)
    return list(tuples)


def empirical_fisher(params: RewardParams, tuples) -> FisherMatrix:
    """Mean of per-sample Hessians over the given tuples."""
    tt = _tuple_list(tuples)
    if not tt:
        raise EmptyDatasetError("empirical_fisher needs at least one tuple")
    psi = np.vstack([t.psi for t in tt])
    if params.dim != psi.shape[1]:
        raise ConfigError(f"theta dim {params.dim} does not match feature dim {psi.shape[1]}")
    deltas = psi @ params.theta
    c = curvature_factor(deltas)
    entries = psi.T @ (psi * c[:, None]) / len(tt)
    entries = 0.5 * (entries + entries.T)  # kill float asymmetry from the matmul
    entries.setflags(write=False)
    return FisherMatrix(entries=entries, n_samples=len(tt))


def min_eigenvalue(matrix: np.ndarray, max_sweeps: int = 100) -> float:
    """Smallest eigenvalue of a symmetric matrix via cyclic Jacobi rotations.

    Sweeps run until the off-diagonal Frobenius norm drops below 1e-12 times
    the input's Frobenius norm (or max_sweeps).  Asymmetry beyond 1e-9 is
    rejected rather than silently symmetrized.
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {a.shape}")
    d = a.shape[0]
    if d > MAX_DENSE_DIM:
        raise ConfigError(f"dense eigensolve capped at {MAX_DENSE_DIM}, got {d}")
    asym = float(np.max(np.abs(a - a.T))) if d > 1 else 0.0
    if asym > _SYMMETRY_TOL:
        raise NotSymmetricError(f"matrix asymmetry {asym:.3e} exceeds {_SYMMETRY_TOL:.0e}")
    if d == 1:
        return float(a[0, 0])
    a = 0.5 * (a + a.T)
    fro = float(np.linalg.norm(a))
    tol = 1e-12 * fro
    for _ in range(max_sweeps):
        off = float(np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0))
        if off <= tol:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
    return float(np.min(np.diag(a)))


@dataclass(frozen=True)
class MarginBin:
    index: int
    tuple_ids: tuple[str, ...]
    abs_margin_range: tuple[float, float]
    mean_curvature_weight: float
    min_eigenvalue: float


def bin_by_margin(params: RewardParams, tuples, n_bins: int) -> list[MarginBin]:
    """Sort by |margin| ascending, split into equal-count contiguous bins.

    Remainder tuples go to the earliest bins.  Each bin reports the mean
    curvature weight and the smallest eigenvalue of its averaged Fisher.
    """
    tt = _tuple_list(tuples)
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    if len(tt) < n_bins:
        raise EmptyDatasetError(f"need at least {n_bins} tuples for {n_bins} bins, got {len(tt)}")
    abs_margins = np.abs(np.asarray([margin(params, t) for t in tt]))
    order = np.argsort(abs_margins, kind="stable")
    n = len(tt)
    base, extra = divmod(n, n_bins)
    bins: list[MarginBin] = []
    start = 0
    for k in range(n_bins):
        size = base + (1 if k < extra else 0)
        members = order[start : start + size]
        start += size
        subset = [tt[i] for i in members]
        sub_abs = abs_margins[members]
        fisher = empirical_fisher(params, subset)
        deltas = np.asarray([margin(params, t) for t in subset])
        bins.append(
            MarginBin(
                index=k,
                tuple_ids=tuple(t.id for t in subset),
                abs_margin_range=(float(sub_abs.min()), float(sub_abs.max())),
                mean_curvature_weight=float(np.mean(curvature_factor(deltas))),
                min_eigenvalue=min_eigenvalue(fisher.entries),
            )
        )
    return bins


@dataclass(frozen=True)
class MixtureSpec:
    """Sizes, margin bounds, and the diversity constant of a P/Q mixture.

    beta stays None until certified against the actual feature second
    moments; alpha must equal n / (n + n_prime).
    """

    n: int
    n_prime: int
    gamma_org: float
    gamma_aug: float
    alpha: float
    beta: float | None = None

    def __post_init__(self):
        if self.n < 1 or self.n_prime < 1:
            raise ConfigError("sample counts must be >= 1")
        if not 0.0 < self.gamma_aug < self.gamma_org:
            raise ConfigError(
                f"need 0 < gamma_aug < gamma_org, got gamma_aug={self.gamma_aug}, gamma_org={self.gamma_org}"
            )
        expected_alpha = self.n / (self.n + self.n_prime)
        if abs(self.alpha - expected_alpha) > 1e-12:
            raise ConfigError(f"alpha must be n/(n+n'), expected {expected_alpha}, got {self.alpha}")
        if self.beta is not None and self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")


def mixture_spec(n: int, n_prime: int, gamma_org: float, gamma_aug: float, beta: float | None = None) -> MixtureSpec:
    return MixtureSpec(
        n=n, n_prime=n_prime, gamma_org=gamma_org, gamma_aug=gamma_aug, alpha=n / (n + n_prime), beta=beta
    )


@dataclass(frozen=True)
class CurvatureReport:
    gamma_curv: float
    beta: float
    gamma_org: float
    gamma_aug: float
    alpha_grid: tuple[float, ...]
    psd_slack: tuple[float, ...]
    eig_bound_slack: tuple[float, ...]
    verdict: str  # "pass" | "fail"

    def to_json_dict(self) -> dict:
        return {
            "gamma_curv": self.gamma_curv,
            "beta": self.beta,
            "gamma_org": self.gamma_org,
            "gamma_aug": self.gamma_aug,
            "alpha_grid": list(self.alpha_grid),
            "psd_slack": list(self.psd_slack),
            "eig_bound_slack": list(self.eig_bound_slack),
            "verdict": self.verdict,
        }


def _second_moment(tuples: list[PreferenceTuple]) -> np.ndarray:
    psi = np.vstack([t.psi for t in tuples])
    s = psi.T @ psi / len(tuples)
    return 0.5 * (s + s.T)


def certify_beta(P_tuples, Q_tuples, iters: int = 80) -> float:
    """Largest beta with E_Q[psi psi^T] - beta * E_P[psi psi^T] still PSD.

    Found by bisection on the smallest eigenvalue; the returned value is the
    last certified-feasible endpoint, so the slack is >= -1e-9 by
    construction.
    """
    p = _tuple_list(P_tuples)
    q = _tuple_list(Q_tuples)
    if not p or not q:
        raise EmptyDatasetError("beta certification needs non-empty P and Q")
    s_p = _second_moment(p)
    s_q = _second_moment(q)

    def feasible(beta: float) -> bool:
        return min_eigenvalue(s_q - beta * s_p) >= -_BETA_CERT_TOL

    if not feasible(0.0):
        raise AssumptionViolationError("E_Q[psi psi^T] is not PSD (numerical)")
    lo, hi = 0.0, 1.0
    growth = 0
    while feasible(hi):
        lo, hi = hi, hi * 2.0
        growth += 1
        if growth > 60:
            raise AssumptionViolationError("feature-diversity beta appears unbounded; is E_P[psi psi^T] singular?")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    if lo <= 0.0:
        raise AssumptionViolationError("no positive beta satisfies E_Q >= beta E_P")
    return lo


def verify_theorem(
    P_tuples,
    Q_tuples,
    params: RewardParams,
    spec: MixtureSpec,
    alpha_grid: Sequence[float],
    tol: float = _PSD_TOL,
) -> CurvatureReport:
    """Check the mixture-domination inequality and its eigenvalue corollary.

    Preconditions are validated, not assumed: every P margin must satisfy
    |delta| >= gamma_org, every Q margin |delta| <= gamma_aug, and spec.beta
    must be certified against the empirical second moments.  Violations name
    the offending tuples and the failing inequality.
    """
    p = _tuple_list(P_tuples)
    q = _tuple_list(Q_tuples)
    if not p or not q:
        raise EmptyDatasetError("verify_theorem needs non-empty P and Q")
    grid = tuple(float(a) for a in alpha_grid)
    if not grid:
        raise ConfigError("alpha_grid must not be empty")
    for a in grid:
        if not 0.0 <= a <= 1.0:
            raise ConfigError(f"alpha values must lie in [0, 1], got {a}")

    bad_p = tuple(t.id for t in p if abs(margin(params, t)) < spec.gamma_org - 1e-12)
    if bad_p:
        raise AssumptionViolationError(f"|margin| >= gamma_org={spec.gamma_org} fails on P", bad_p)
    bad_q = tuple(t.id for t in q if abs(margin(params, t)) > spec.gamma_aug + 1e-12)
    if bad_q:
        raise AssumptionViolationError(f"|margin| <= gamma_aug={spec.gamma_aug} fails on Q", bad_q)
    if spec.beta is None:
        raise ConfigError("spec.beta is not certified; run certify_beta or make_assumption_dataset first")
    cert_slack = min_eigenvalue(_second_moment(q) - spec.beta * _second_moment(p))
    if cert_slack < -_BETA_CERT_TOL:
        raise AssumptionViolationError(
            f"E_Q[psi psi^T] - beta E_P[psi psi^T] has min eigenvalue {cert_slack:.3e} < -{_BETA_CERT_TOL:.0e}"
        )

    gamma_curv = spec.beta * curvature_weight(spec.gamma_aug) / curvature_weight(spec.gamma_org)
    i_p = empirical_fisher(params, p).entries
    i_q = empirical_fisher(params, q).entries
    lam_p = min_eigenvalue(i_p)
    psd_slacks = []
    eig_slacks = []
    for a in grid:
        factor = a + (1.0 - a) * gamma_curv
        i_r = a * i_p + (1.0 - a) * i_q
        psd_slacks.append(min_eigenvalue(i_r - factor * i_p))
        eig_slacks.append(min_eigenvalue(i_r) - factor * lam_p)
    ok = all(s >= -tol for s in psd_slacks) and all(s >= -tol for s in eig_slacks)
    return CurvatureReport(
        gamma_curv=gamma_curv,
        beta=spec.beta,
        gamma_org=spec.gamma_org,
        gamma_aug=spec.gamma_aug,
        alpha_grid=grid,
        psd_slack=tuple(psd_slacks),
        eig_bound_slack=tuple(eig_slacks),
        verdict="pass" if ok else "fail",
    )


def _regime_tuples(
    rng: np.random.Generator,
    theta_hat: np.ndarray,
    lo: float,
    hi: float,
    count: int,
    dim: int,
    prefix: str,
) -> list[PreferenceTuple]:
    # Margins are exact by construction: psi = m * theta_hat + unit vector
    # orthogonal to theta, with signs balanced.
    signs = np.ones(count)
    signs[count // 2 :] = -1.0
    signs = signs[rng.permutation(count)]
    mags = rng.uniform(lo, hi, size=count)
    out = []
    for i in range(count):
        m = float(signs[i] * mags[i])
        v = rng.standard_normal(dim)
        v -= (theta_hat @ v) * theta_hat
        norm = float(np.linalg.norm(v))
        while norm < 1e-9:
            v = rng.standard_normal(dim)
            v -= (theta_hat @ v) * theta_hat
            norm = float(np.linalg.norm(v))
        psi = m * theta_hat + v / norm
        out.append(preference_tuple(f"{prefix}-{i:05d}", psi / 2.0, -psi / 2.0))
    return out


def make_assumption_dataset(
    spec: MixtureSpec,
    dim: int,
    counts: tuple[int, int] | None = None,
    seed: int = 0,
) -> tuple[list[PreferenceTuple], list[PreferenceTuple], RewardParams, MixtureSpec]:
    """Deterministically build (P, Q, params) satisfying both assumptions.

    P margins land in +/-[gamma_org, 2*gamma_org], Q margins in
    +/-[0, gamma_aug] (both sign-balanced, uniform magnitudes), and beta is
    certified empirically by bisection.  Returns the finalized spec with the
    certified beta filled in.
    """
    if dim < 2:
        raise ConfigError(f"dim must be >= 2, got {dim}")
    n_p, n_q = counts if counts is not None else (spec.n, spec.n_prime)
    if n_p < dim or n_q < dim:
        raise ConfigError(f"counts must be >= dim={dim}, got ({n_p}, {n_q})")
    rng = np.random.default_rng(np.random.SeedSequence([seed & ((1 << 64) - 1), dim, n_p, n_q]))
    direction = rng.standard_normal(dim)
    theta_hat = direction / np.linalg.norm(direction)
    params = reward_params(theta_hat)
    p = _regime_tuples(rng, theta_hat, spec.gamma_org, 2.0 * spec.gamma_org, n_p, dim, "p")
    q = _regime_tuples(rng, theta_hat, 0.0, spec.gamma_aug, n_q, dim, "q")
    beta = certify_beta(p, q)
    final = replace(spec, n=n_p, n_prime=n_q, alpha=n_p / (n_p + n_q), beta=beta)
    return p, q, params, final
