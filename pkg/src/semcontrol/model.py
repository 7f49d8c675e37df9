"""Path diagrams, cyclic linear structural models, and stability analysis.

A model couples one linear equation per variable,

    v_i = intercept_i + sum_j A[i, j] * v_j + eps_i,

where ``A[i, j]`` is the coefficient on variable ``j`` in the equation for
variable ``i`` and the disturbances ``eps`` are independent with diagonal
covariance.  Directed cycles are allowed; equilibrium behaviour is governed
by the spectral radius of ``A``.  When every relevant block of ``A`` has
spectral radius below one the repeated-substitution expansion converges and
the model has a unique steady-state mean and covariance.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ControlSetMismatch,
    InputFormatError,
    NonFiniteEntry,
    ResponseNotDescendant,
)

#: Default margin below one at which a spectral radius is still called stable.
STABILITY_TOL = 1e-9

#: Condition-number estimate above which linear solves are declared singular.
CONDITION_LIMIT = 1e12


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PathDiagram:
    """Directed graph of named variables.

    An edge ``(source, target)`` reads "source is a parent of target".
    Cycles are allowed.  Self-loops and duplicate edges can be represented
    so that :func:`validate_model` may report them; they are never valid.
    """

    vertices: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple((s, t) for s, t in self.edges))
        if len(set(self.vertices)) != len(self.vertices):
            raise ValueError("duplicate vertex names")
        known = set(self.vertices)
        for s, t in self.edges:
            if s not in known or t not in known:
                raise ValueError(f"edge ({s!r}, {t!r}) references an unknown vertex")

    @cached_property
    def _index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.vertices)}

    @cached_property
    def _edge_set(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.edges)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValueError(f"unknown vertex {name!r}") from None

    def has_edge(self, source: str, target: str) -> bool:
        return (source, target) in self._edge_set

    def parents(self, name: str) -> tuple[str, ...]:
        return tuple(s for s, t in self.edges if t == name)

    def children(self, name: str) -> tuple[str, ...]:
        return tuple(t for s, t in self.edges if s == name)

    def descendants(self, name: str) -> set[str]:
        """Vertices reachable from ``name`` by directed paths, excluding ``name``."""
        self.index(name)
        children: dict[str, list[str]] = {v: [] for v in self.vertices}
        for s, t in self.edges:
            children[s].append(t)
        seen: set[str] = set()
        queue = deque(children[name])
        while queue:
            v = queue.popleft()
            if v in seen:
                continue
            seen.add(v)
            queue.extend(children[v])
        seen.discard(name)
        return seen


@dataclass(frozen=True)
class StructuralModel:
    """A path diagram together with its linear structural equations.

    ``coefficients[i, j]`` is the coefficient of variable ``j`` in the
    equation for variable ``i``; its support must match the edge set of the
    diagram exactly (an edge carries a nonzero coefficient, a non-edge a
    zero).  ``disturbance_variances`` is the diagonal of the disturbance
    covariance; disturbances are independent, so off-diagonal terms are
    identically zero and never stored.
    """

    diagram: PathDiagram
    coefficients: np.ndarray
    intercepts: np.ndarray
    disturbance_variances: np.ndarray

    def __post_init__(self):
        n = self.diagram.n_vertices
        coeff = _readonly(self.coefficients)
        mu = _readonly(self.intercepts)
        dvar = _readonly(self.disturbance_variances)
        if coeff.shape != (n, n):
            raise ValueError(f"coefficients must be {n}x{n}, got {coeff.shape}")
        if mu.shape != (n,):
            raise ValueError(f"intercepts must have length {n}, got {mu.shape}")
        if dvar.shape != (n,):
            raise ValueError(f"disturbance_variances must have length {n}, got {dvar.shape}")
        object.__setattr__(self, "coefficients", coeff)
        object.__setattr__(self, "intercepts", mu)
        object.__setattr__(self, "disturbance_variances", dvar)

    @property
    def variables(self) -> tuple[str, ...]:
        return self.diagram.vertices

    @property
    def n_variables(self) -> int:
        return self.diagram.n_vertices

    def index(self, name: str) -> int:
        return self.diagram.index(name)

    @classmethod
    def from_edges(
        cls,
        edge_coefficients: Mapping[tuple[str, str], float] | Iterable[tuple[str, str, float]],
        *,
        variables: Sequence[str] | None = None,
        intercepts: Mapping[str, float] | None = None,
        disturbance_variances: Mapping[str, float] | None = None,
    ) -> "StructuralModel":
        """Build a model from ``(source, target) -> coefficient`` entries.

        Variables default to first-appearance order in the edge list;
        intercepts default to 0 and disturbance variances to 1.
        """
        if isinstance(edge_coefficients, Mapping):
            items = [(s, t, c) for (s, t), c in edge_coefficients.items()]
        else:
            items = [(s, t, c) for s, t, c in edge_coefficients]
        if variables is None:
            seen: dict[str, None] = {}
            for s, t, _ in items:
                seen.setdefault(s)
                seen.setdefault(t)
            variables = list(seen)
        diagram = PathDiagram(tuple(variables), tuple((s, t) for s, t, _ in items))
        n = diagram.n_vertices
        coeff = np.zeros((n, n))
        for s, t, c in items:
            coeff[diagram.index(t), diagram.index(s)] = c
        mu = np.zeros(n)
        for name, value in (intercepts or {}).items():
            mu[diagram.index(name)] = value
        dvar = np.ones(n)
        for name, value in (disturbance_variances or {}).items():
            dvar[diagram.index(name)] = value
        return cls(diagram, coeff, mu, dvar)


@dataclass(frozen=True)
class VertexPartition:
    """Split of the variables into descendants, treatment, and nondescendants.

    ``descendants`` holds every vertex reachable from the treatment by a
    directed path (treatment excluded), with the control subset first and the
    response first among the controls.  ``nondescendants`` holds the rest,
    with the covariate subset first.  This ordering is the block convention
    used throughout the control formulas.
    """

    variables: tuple[str, ...]
    treatment: str
    response: str
    descendants: tuple[str, ...]
    nondescendants: tuple[str, ...]
    controls: tuple[str, ...]
    covariates: tuple[str, ...]

    @property
    def free_descendants(self) -> tuple[str, ...]:
        """Descendants not used by the plan (the non-control remainder of S)."""
        return self.descendants[len(self.controls):]

    @property
    def background(self) -> tuple[str, ...]:
        """Nondescendants not used by the plan (the non-covariate remainder of T)."""
        return self.nondescendants[len(self.covariates):]

    @cached_property
    def _index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.variables)}

    def indices(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self._index[n] for n in names], dtype=int)

    def submatrix(self, matrix: np.ndarray, rows: Sequence[str], cols: Sequence[str]) -> np.ndarray:
        """Extract the block of a variables-by-variables matrix by name."""
        return matrix[np.ix_(self.indices(rows), self.indices(cols))]

    def block_order(self) -> tuple[str, ...]:
        """All variables in (descendants, treatment, nondescendants) order."""
        return self.descendants + (self.treatment,) + self.nondescendants


@dataclass(frozen=True)
class StabilityReport:
    """Spectral radii of the two blocks whose convergence makes a model stable."""

    nondescendant_radius: float
    feedback_radius: float
    stable: bool
    margin: float


def spectral_radius(matrix: np.ndarray) -> float:
    """Largest eigenvalue modulus of a square real matrix.

    Raises :class:`NonFiniteEntry` when the matrix contains NaN or infinity.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    if m.size == 0:
        return 0.0
    if not np.isfinite(m).all():
        raise NonFiniteEntry("matrix has non-finite entries")
    return float(np.abs(np.linalg.eigvals(m)).max())


def validate_model(model: StructuralModel, partition: VertexPartition | None = None) -> list[str]:
    """Check every structural invariant and return the violations found.

    An empty list means the model is valid.  With a partition supplied, the
    nondescendant rows are additionally required to carry zero coefficients
    on the treatment and on every descendant (the zero blocks that make the
    nondescendant subsystem autonomous).
    """
    violations: list[str] = []
    diagram = model.diagram
    coeff = model.coefficients

    if not np.isfinite(coeff).all():
        violations.append("coefficients contain non-finite entries")
    if not np.isfinite(model.intercepts).all():
        violations.append("intercepts contain non-finite entries")
    if not np.isfinite(model.disturbance_variances).all():
        violations.append("disturbance variances contain non-finite entries")

    for i, name in enumerate(diagram.vertices):
        if coeff[i, i] != 0.0:
            violations.append(f"self-loop at vertex {name}")
    for s, t in diagram.edges:
        if s == t:
            violations.append(f"self-loop edge {s} -> {t}")
    counts: dict[tuple[str, str], int] = {}
    for e in diagram.edges:
        counts[e] = counts.get(e, 0) + 1
    for (s, t), k in counts.items():
        if k > 1:
            violations.append(f"duplicate edge {s} -> {t}")

    for i, child in enumerate(diagram.vertices):
        for j, parent in enumerate(diagram.vertices):
            if i == j:
                continue
            on_edge = diagram.has_edge(parent, child)
            if on_edge and coeff[i, j] == 0.0:
                violations.append(f"edge {parent} -> {child} has zero coefficient")
            elif not on_edge and coeff[i, j] != 0.0:
                violations.append(f"coefficient without edge {parent} -> {child}")

    for i, name in enumerate(diagram.vertices):
        if model.disturbance_variances[i] < 0.0:
            violations.append(f"negative disturbance variance at {name}")

    if partition is not None:
        forbidden = partition.descendants + (partition.treatment,)
        for t_name in partition.nondescendants:
            for p_name in forbidden:
                value = coeff[model.index(t_name), model.index(p_name)]
                if value != 0.0:
                    violations.append(
                        f"nondescendant block not zero: {t_name} depends on {p_name}"
                    )
    return violations


def partition_vertices(
    model: StructuralModel,
    treatment: str,
    response: str,
    controls: Sequence[str] | None = None,
    covariates: Sequence[str] | None = None,
) -> VertexPartition:
    """Partition the variables around a treatment and response.

    Descendants are recomputed from graph reachability; declared control and
    covariate sets are validated against that partition, never trusted.
    Ordering is deterministic: the response leads the controls, controls lead
    the descendants, covariates lead the nondescendants, and within each
    group the model's variable order is kept.
    """
    diagram = model.diagram
    diagram.index(treatment)
    diagram.index(response)
    if treatment == response:
        raise ValueError("treatment and response must be distinct vertices")

    reachable = diagram.descendants(treatment)
    if response not in reachable:
        raise ResponseNotDescendant(
            f"response {response!r} is not reachable from treatment {treatment!r}"
        )

    control_set = set(controls) if controls is not None else {response}
    control_set.add(response)
    bad = control_set - reachable
    if bad:
        raise ControlSetMismatch(
            f"control set members {sorted(bad)} are not descendants of {treatment!r}"
        )

    nondesc = [v for v in diagram.vertices if v != treatment and v not in reachable]
    covariate_set = set(covariates) if covariates is not None else set()
    bad = covariate_set - set(nondesc)
    if bad:
        raise ControlSetMismatch(
            f"covariate set members {sorted(bad)} are not nondescendants of {treatment!r}"
        )

    order = list(diagram.vertices)
    controls_ordered = (response,) + tuple(
        v for v in order if v in control_set and v != response
    )
    free = tuple(v for v in order if v in reachable and v not in control_set)
    covs_ordered = tuple(v for v in order if v in covariate_set)
    background = tuple(v for v in nondesc if v not in covariate_set)

    return VertexPartition(
        variables=diagram.vertices,
        treatment=treatment,
        response=response,
        descendants=controls_ordered + free,
        nondescendants=covs_ordered + background,
        controls=controls_ordered,
        covariates=covs_ordered,
    )


def check_stability(
    model: StructuralModel,
    partition: VertexPartition,
    stability_tol: float = STABILITY_TOL,
) -> StabilityReport:
    """Stability of the model via its two characteristic-equation factors.

    The characteristic polynomial of the full coefficient matrix factors into
    the nondescendant block and the feedback block (descendants plus
    treatment), so the model is stable exactly when both spectral radii are
    below one.
    """
    coeff = model.coefficients
    t_names = partition.nondescendants
    fb_names = partition.descendants + (partition.treatment,)
    rho_t = spectral_radius(partition.submatrix(coeff, t_names, t_names))
    rho_fb = spectral_radius(partition.submatrix(coeff, fb_names, fb_names))
    worst = max(rho_t, rho_fb)
    return StabilityReport(
        nondescendant_radius=rho_t,
        feedback_radius=rho_fb,
        stable=bool(worst < 1.0 - stability_tol),
        margin=1.0 - worst,
    )


# ---------------------------------------------------------------------------
# Model file format


_MODEL_KEYS = {"variables", "edges", "intercepts", "disturbance_variances"}
_EDGE_KEYS = {"from", "to", "coeff"}


def model_from_dict(payload: dict) -> StructuralModel:
    """Parse the JSON model schema; unknown keys are rejected."""
    if not isinstance(payload, dict):
        raise InputFormatError("model file must contain a JSON object")
    unknown = set(payload) - _MODEL_KEYS
    if unknown:
        raise InputFormatError(f"unknown model keys: {sorted(unknown)}")
    if "variables" not in payload or "edges" not in payload:
        raise InputFormatError("model file requires 'variables' and 'edges'")
    variables = payload["variables"]
    if not isinstance(variables, list) or not all(isinstance(v, str) for v in variables):
        raise InputFormatError("'variables' must be a list of names")

    edges = []
    for entry in payload["edges"]:
        if not isinstance(entry, dict):
            raise InputFormatError("each edge must be an object")
        unknown = set(entry) - _EDGE_KEYS
        if unknown:
            raise InputFormatError(f"unknown edge keys: {sorted(unknown)}")
        try:
            edges.append((entry["from"], entry["to"], float(entry["coeff"])))
        except KeyError as exc:
            raise InputFormatError(f"edge missing key {exc.args[0]!r}") from None

    def named_map(key: str) -> dict[str, float]:
        raw = payload.get(key, {})
        if not isinstance(raw, dict):
            raise InputFormatError(f"'{key}' must be an object of name: value")
        bad = set(raw) - set(variables)
        if bad:
            raise InputFormatError(f"'{key}' names unknown variables: {sorted(bad)}")
        return {k: float(v) for k, v in raw.items()}

    try:
        return StructuralModel.from_edges(
            edges,
            variables=variables,
            intercepts=named_map("intercepts"),
            disturbance_variances=named_map("disturbance_variances"),
        )
    except ValueError as exc:
        raise InputFormatError(str(exc)) from None


def model_to_dict(model: StructuralModel) -> dict:
    return {
        "variables": list(model.variables),
        "edges": [
            {
                "from": s,
                "to": t,
                "coeff": float(model.coefficients[model.index(t), model.index(s)]),
            }
            for s, t in model.diagram.edges
        ],
        "intercepts": {
            v: float(model.intercepts[i]) for i, v in enumerate(model.variables)
        },
        "disturbance_variances": {
            v: float(model.disturbance_variances[i]) for i, v in enumerate(model.variables)
        },
    }


def load_model(path: str | Path) -> StructuralModel:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"invalid JSON in {path}: {exc}") from None
    return model_from_dict(payload)


def save_model(model: StructuralModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def model_hash(model: StructuralModel) -> str:
    """Short content digest of the canonical model serialization."""
    canon = json.dumps(model_to_dict(model), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]
