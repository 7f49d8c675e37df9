"""Reduced-form effects and population moments of a structural model.

The total effect of the treatment on its descendants is the reduced-form
coefficient vector obtained by eliminating the descendant subsystem,

    tau = (I - A_ss)^(-1) A_sx,

and the implied equilibrium moments of the whole system follow from
eliminating every equation at once:  mean = (I - A)^(-1) intercepts and
covariance = (I - A)^(-1) diag(disturbance variances) (I - A)^(-T).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import SingularBlock, SingularSystem, UnstableModel
from .model import (
    CONDITION_LIMIT,
    STABILITY_TOL,
    StructuralModel,
    VertexPartition,
    spectral_radius,
)


@dataclass(frozen=True)
class MomentSummary:
    """Mean vector and covariance matrix over the model variables.

    ``source`` records where the numbers came from: ``"implied"`` (closed
    form from a model), ``"sample"`` (data or a published matrix), or
    ``"post-plan"`` (implied by a model after surgery).
    """

    variables: tuple[str, ...]
    mean: np.ndarray
    covariance: np.ndarray
    source: str = "implied"
    n_obs: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        p = len(self.variables)
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.covariance, dtype=float)
        if mean.shape != (p,):
            raise ValueError(f"mean must have length {p}, got {mean.shape}")
        if cov.shape != (p, p):
            raise ValueError(f"covariance must be {p}x{p}, got {cov.shape}")
        if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
            raise ValueError("moments must be finite")
        if self.source not in ("implied", "sample", "post-plan"):
            raise ValueError(f"unknown source tag {self.source!r}")
        if p and np.abs(cov - cov.T).max() > 1e-12:
            raise ValueError("covariance is not symmetric within 1e-12")
        if p and np.diag(cov).min() < -1e-12:
            raise ValueError("covariance has a negative diagonal entry")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.variables)}

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValueError(f"unknown variable {name!r}") from None

    def mean_of(self, names: Sequence[str]) -> np.ndarray:
        return self.mean[[self.index(n) for n in names]]

    def cov_block(self, rows: Sequence[str], cols: Sequence[str]) -> np.ndarray:
        r = [self.index(n) for n in rows]
        c = [self.index(n) for n in cols]
        return self.covariance[np.ix_(r, c)]

    def var(self, name: str) -> float:
        i = self.index(name)
        return float(self.covariance[i, i])

    def cov(self, a: str, b: str) -> float:
        return float(self.covariance[self.index(a), self.index(b)])


@dataclass(frozen=True)
class EffectSummary:
    """Total effects of the treatment, in the partition's block order.

    ``to_descendants`` is the reduced-form effect of a unit change in the
    treatment on each descendant; ``from_nondescendants`` is the matrix of
    effects transmitted from each nondescendant into the descendant block.
    """

    partition: VertexPartition
    to_descendants: np.ndarray
    from_nondescendants: np.ndarray

    def __post_init__(self):
        tau = np.array(self.to_descendants, dtype=float)
        tau_t = np.array(self.from_nondescendants, dtype=float)
        n_s = len(self.partition.descendants)
        n_t = len(self.partition.nondescendants)
        if tau.shape != (n_s,):
            raise ValueError(f"to_descendants must have length {n_s}")
        if tau_t.shape != (n_s, n_t):
            raise ValueError(f"from_nondescendants must be {n_s}x{n_t}")
        if not (np.isfinite(tau).all() and np.isfinite(tau_t).all()):
            raise ValueError("total effects must be finite")
        tau.setflags(write=False)
        tau_t.setflags(write=False)
        object.__setattr__(self, "to_descendants", tau)
        object.__setattr__(self, "from_nondescendants", tau_t)

    @property
    def to_controls(self) -> np.ndarray:
        """Effects on the control subset (leading block of the descendants)."""
        return self.to_descendants[: len(self.partition.controls)]

    @property
    def to_free_descendants(self) -> np.ndarray:
        return self.to_descendants[len(self.partition.controls):]

    @property
    def to_response(self) -> float:
        """Total effect on the response (first control)."""
        return float(self.to_descendants[0])

    @property
    def from_covariates(self) -> np.ndarray:
        return self.from_nondescendants[:, : len(self.partition.covariates)]

    @property
    def from_background(self) -> np.ndarray:
        return self.from_nondescendants[:, len(self.partition.covariates):]


def total_effects(
    model: StructuralModel,
    partition: VertexPartition,
    condition_limit: float = CONDITION_LIMIT,
) -> EffectSummary:
    """Reduced-form total effects of the treatment on its descendants."""
    coeff = model.coefficients
    s_names = partition.descendants
    t_names = partition.nondescendants
    a_ss = partition.submatrix(coeff, s_names, s_names)
    a_sx = partition.submatrix(coeff, s_names, (partition.treatment,))[:, 0]
    a_st = partition.submatrix(coeff, s_names, t_names)

    system = np.eye(len(s_names)) - a_ss
    if np.linalg.cond(system) > condition_limit:
        raise SingularSystem(
            "descendant system (I - A_ss) is numerically singular; "
            "the model has no usable reduced form"
        )
    tau_sx = np.linalg.solve(system, a_sx)
    tau_st = np.linalg.solve(system, a_st) if t_names else np.zeros((len(s_names), 0))
    return EffectSummary(partition, tau_sx, tau_st)


def implied_moments(
    model: StructuralModel,
    stability_tol: float = STABILITY_TOL,
    source: str = "implied",
) -> MomentSummary:
    """Equilibrium mean and covariance implied by a stable model."""
    n = model.n_variables
    rho = spectral_radius(model.coefficients)
    if rho >= 1.0 - stability_tol:
        raise UnstableModel(
            f"spectral radius {rho:.6g} is not below 1; equilibrium moments do not exist"
        )
    system = np.eye(n) - model.coefficients
    mean = np.linalg.solve(system, model.intercepts)
    inv = np.linalg.solve(system, np.eye(n))
    cov = (inv * model.disturbance_variances) @ inv.T
    cov = 0.5 * (cov + cov.T)
    return MomentSummary(model.variables, mean, cov, source=source)


def _conditional_cov(
    moments: MomentSummary,
    rows: Sequence[str],
    cols: Sequence[str],
    conditioning: Sequence[str],
    condition_limit: float,
) -> np.ndarray:
    """Schur-complement conditional covariance between two name blocks."""
    sigma_rc = moments.cov_block(rows, cols)
    if not conditioning:
        return sigma_rc
    sigma_zz = moments.cov_block(conditioning, conditioning)
    if np.linalg.cond(sigma_zz) > condition_limit:
        raise SingularBlock(
            f"conditioning covariance for {tuple(conditioning)} is singular"
        )
    sigma_rz = moments.cov_block(rows, conditioning)
    sigma_zc = moments.cov_block(conditioning, cols)
    return sigma_rc - sigma_rz @ np.linalg.solve(sigma_zz, sigma_zc)


def regression_blocks(
    moments: MomentSummary,
    rows: Sequence[str],
    cols: Sequence[str],
    conditioning: Sequence[str] = (),
    condition_limit: float = CONDITION_LIMIT,
) -> np.ndarray:
    """Population regression coefficients of ``rows`` on ``cols``.

    Returns the (len(rows), len(cols)) matrix of conditional covariance of
    rows with cols times the inverse conditional covariance of cols, with
    conditioning handled by Schur complement.  An empty ``cols`` yields an
    empty matrix.
    """
    rows = tuple(rows)
    cols = tuple(cols)
    if not cols:
        return np.zeros((len(rows), 0))
    sigma_rc = _conditional_cov(moments, rows, cols, conditioning, condition_limit)
    sigma_cc = _conditional_cov(moments, cols, cols, conditioning, condition_limit)
    if np.linalg.cond(sigma_cc) > condition_limit:
        raise SingularBlock(f"covariance block for {cols} is singular")
    return np.linalg.solve(sigma_cc.T, sigma_rc.T).T


@dataclass(frozen=True)
class RegressionBlocks:
    """The named regression blocks used by the control-plan formulas.

    All are unconditional population regressions computed from one moment
    summary: controls on treatment, descendants on treatment, controls on
    covariates, treatment on covariates, and background on covariates.
    """

    partition: VertexPartition
    controls_on_treatment: np.ndarray
    descendants_on_treatment: np.ndarray
    controls_on_covariates: np.ndarray
    treatment_on_covariates: np.ndarray
    background_on_covariates: np.ndarray

    @property
    def response_on_treatment(self) -> float:
        return float(self.controls_on_treatment[0])

    @classmethod
    def from_moments(
        cls,
        moments: MomentSummary,
        partition: VertexPartition,
        condition_limit: float = CONDITION_LIMIT,
    ) -> "RegressionBlocks":
        x = (partition.treatment,)
        f = partition.controls
        s = partition.descendants
        w = partition.covariates
        z = partition.background
        return cls(
            partition=partition,
            controls_on_treatment=regression_blocks(moments, f, x, (), condition_limit)[:, 0],
            descendants_on_treatment=regression_blocks(moments, s, x, (), condition_limit)[:, 0],
            controls_on_covariates=regression_blocks(moments, f, w, (), condition_limit),
            treatment_on_covariates=regression_blocks(moments, x, w, (), condition_limit)[0],
            background_on_covariates=regression_blocks(moments, z, w, (), condition_limit),
        )
