"""Grid-discretized quasi-measurements on truncated Fock spaces.

A ComplexGrid carries midpoint-rule nodes and weights for the flat reference
measure ``prod_j (1/pi) dRe b_j dIm b_j``. A DiscretePOVM attaches one
decoding vector (elementary, rank-one case) or one general PSD effect to each
node. Completeness of a coherent family on a truncated, bounded grid cannot
be exact, so the checks here restrict to the Fock levels that the grid can
actually resolve and report residuals instead of hiding them.

Node-wise constructions are independent (safe to parallelize); the reductions
in this module keep numpy's fixed summation order for reproducibility.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .fock import FockSpace, annihilation_matrix, coherent_matrix, level_mask

__all__ = [
    "BudgetExceededError",
    "ComplexGrid",
    "DiscretePOVM",
    "make_grid",
    "coherent_povm",
    "general_povm",
    "squeezed_family",
    "offset_family",
    "rescaled_family",
    "completeness_residual",
    "first_moment_residual",
    "reliable_levels",
    "outcome_distribution",
]

DEFAULT_NODE_BUDGET = 5_000_000


class BudgetExceededError(RuntimeError):
    """A requested grid or quadrature would exceed the configured node budget."""


@dataclass(frozen=True)
class ComplexGrid:
    """Midpoint lattice in C^r with uniform weights spacing^(2r) / pi^r."""

    nodes: np.ndarray
    weights: np.ndarray
    radius: float
    spacing: float

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=np.complex128))
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape[0] != weights.shape[0]:
            raise ValueError("nodes and weights must have matching length")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        nodes.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def modes(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return self.nodes.shape[0]


def make_grid(modes: int, radius: float, spacing: float, max_nodes: int = DEFAULT_NODE_BUDGET) -> ComplexGrid:
    """Cartesian midpoint lattice over [-radius, radius]^2 per mode.

    Each node carries the weight (spacing^2 / pi)^modes, the measure of its
    cell under the flat reference measure. Node count is
    (2 floor(radius/spacing) + 1)^(2 modes); exceeding ``max_nodes`` raises
    BudgetExceededError.
    """
    if modes < 1:
        raise ValueError("modes must be >= 1")
    if radius <= 0 or spacing <= 0 or spacing > radius:
        raise ValueError("need 0 < spacing <= radius")
    k = int(radius / spacing + 1e-9)
    axis = spacing * np.arange(-k, k + 1)
    per_axis = axis.size
    count = per_axis ** (2 * modes)
    if count > max_nodes:
        raise BudgetExceededError(f"grid would need {count} nodes (budget {max_nodes})")
    grids = np.meshgrid(*([axis] * (2 * modes)), indexing="ij")
    nodes = np.stack(
        [grids[2 * j].ravel() + 1j * grids[2 * j + 1].ravel() for j in range(modes)],
        axis=1,
    )
    weights = np.full(nodes.shape[0], (spacing**2 / math.pi) ** modes)
    return ComplexGrid(nodes=nodes, weights=weights, radius=float(radius), spacing=float(spacing))


@dataclass(frozen=True)
class DiscretePOVM:
    """Measurement family on a grid: decoding vectors (elementary) or effects.

    ``vectors`` has one row per node for the rank-one case; ``effects`` holds
    one PSD matrix per node for the general case. ``label`` names the family
    (used to pick closed-form shortcuts for the exactly-coherent family).
    """

    grid: ComplexGrid
    space: FockSpace
    kind: str
    vectors: np.ndarray | None = None
    effects: np.ndarray | None = None
    label: str = "coherent"

    def __post_init__(self):
        if self.kind not in ("elementary", "general"):
            raise ValueError("kind must be 'elementary' or 'general'")
        if self.kind == "elementary":
            v = np.asarray(self.vectors, dtype=np.complex128)
            if v.shape != (len(self.grid), self.space.dim):
                raise ValueError(f"vectors shape {v.shape} != ({len(self.grid)}, {self.space.dim})")
            v.flags.writeable = False
            object.__setattr__(self, "vectors", v)
        else:
            e = np.asarray(self.effects, dtype=np.complex128)
            d = self.space.dim
            if e.shape != (len(self.grid), d, d):
                raise ValueError(f"effects shape {e.shape} != ({len(self.grid)}, {d}, {d})")
            herm = np.max(np.abs(e - e.conj().transpose(0, 2, 1)))
            if herm > 1e-10:
                raise ValueError(f"effects must be Hermitian (defect {herm:.2e})")
            min_eig = min(float(np.linalg.eigvalsh(m)[0]) for m in e)
            if min_eig < -1e-12:
                raise ValueError(f"effects must be PSD (eigenvalue {min_eig:.2e})")
            e.flags.writeable = False
            object.__setattr__(self, "effects", e)

    def effect(self, k: int) -> np.ndarray:
        if self.kind == "elementary":
            v = self.vectors[k]
            return np.outer(v, v.conj())
        return self.effects[k]


def coherent_povm(grid: ComplexGrid, space: FockSpace) -> DiscretePOVM:
    """Rank-one family of truncated coherent vectors on the grid nodes."""
    if grid.modes != space.modes:
        raise ValueError(f"grid has {grid.modes} modes, space has {space.modes}")
    return DiscretePOVM(
        grid=grid,
        space=space,
        kind="elementary",
        vectors=coherent_matrix(grid.nodes, space),
        label="coherent",
    )


def general_povm(grid: ComplexGrid, space: FockSpace, effects: np.ndarray, label: str = "general") -> DiscretePOVM:
    return DiscretePOVM(grid=grid, space=space, kind="general", effects=effects, label=label)


def _apply_displacements(grid: ComplexGrid, space: FockSpace, seed_vector: np.ndarray) -> np.ndarray:
    """Rows D(node_k) @ seed_vector for every grid node."""
    from .fock import displacement_matrix

    out = np.empty((len(grid), space.dim), dtype=np.complex128)
    for k in range(len(grid)):
        out[k] = displacement_matrix(grid.nodes[k], space) @ seed_vector
    return out


def squeezed_family(grid: ComplexGrid, space: FockSpace, imbalance: float = 1.5) -> DiscretePOVM:
    """Coherent family with each vector replaced by a squeezed coherent state.

    The quadrature variances become ``imbalance`` and ``1/imbalance`` times
    the coherent value, a control family that breaks decoding optimality.
    """
    if imbalance <= 0:
        raise ValueError("imbalance must be positive")
    z = 0.5 * math.log(imbalance)
    seed = np.ones(1, dtype=np.complex128)
    for cj in space.cutoffs:
        a = annihilation_matrix(FockSpace.single_mode(cj)).entries
        gen = 0.5 * z * (a @ a - a.conj().T @ a.conj().T)
        vac = np.zeros(cj + 1, dtype=np.complex128)
        vac[0] = 1.0
        seed = np.kron(seed, expm(gen) @ vac)
    return DiscretePOVM(
        grid=grid,
        space=space,
        kind="elementary",
        vectors=_apply_displacements(grid, space, seed),
        label=f"squeezed:{imbalance:g}",
    )


def offset_family(grid: ComplexGrid, space: FockSpace, offset: complex = 0.3) -> DiscretePOVM:
    """Coherent vectors displaced off their nominal outcome by a fixed offset."""
    return DiscretePOVM(
        grid=grid,
        space=space,
        kind="elementary",
        vectors=coherent_matrix(grid.nodes + offset, space),
        label=f"offset:{offset:g}",
    )


def rescaled_family(grid: ComplexGrid, space: FockSpace, factor: float = 1.1) -> DiscretePOVM:
    """Coherent vectors with amplitudes rescaled away from the outcome value."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    return DiscretePOVM(
        grid=grid,
        space=space,
        kind="elementary",
        vectors=coherent_matrix(factor * grid.nodes, space),
        label=f"rescaled:{factor:g}",
    )


def _weighted_gram(povm: DiscretePOVM, node_factor: np.ndarray | None = None) -> np.ndarray:
    """sum_k w_k f_k E_k with E_k = phi_k phi_k^dag in the elementary case."""
    w = povm.grid.weights if node_factor is None else povm.grid.weights * node_factor
    if povm.kind == "elementary":
        return (povm.vectors.T * w) @ povm.vectors.conj()
    return np.tensordot(w, povm.effects, axes=(0, 0))


def completeness_residual(povm: DiscretePOVM, max_level: int) -> float:
    """Operator-norm distance of sum_k E_k w_k from the identity on low Fock levels.

    Restricted to basis states whose per-mode occupation stays <= max_level;
    the grid cannot resolve higher levels (see :func:`reliable_levels`).
    """
    mask = level_mask(povm.space, max_level)
    t = _weighted_gram(povm)
    idx = np.where(mask)[0]
    block = t[np.ix_(idx, idx)] - np.eye(idx.size)
    return float(np.linalg.norm(block, 2))


def completeness_per_level(povm: DiscretePOVM, max_level: int) -> np.ndarray:
    """Diagonal deviation |(sum_k E_k w_k)_nn - 1| for each retained basis state."""
    mask = level_mask(povm.space, max_level)
    t = _weighted_gram(povm)
    return np.abs(np.diag(t)[mask] - 1.0)


def first_moment_residual(povm: DiscretePOVM, max_level: int, mode: int = 0) -> float:
    """Distance of sum_k node_k E_k w_k from the mode's ladder matrix on low levels."""
    mask = level_mask(povm.space, max_level)
    t = _weighted_gram(povm, node_factor=povm.grid.nodes[:, mode])
    a = annihilation_matrix(povm.space, mode).entries
    idx = np.where(mask)[0]
    block = t[np.ix_(idx, idx)] - a[np.ix_(idx, idx)]
    return float(np.linalg.norm(block, 2))


def reliable_levels(grid: ComplexGrid, tol: float = 1e-6, max_level: int = 200) -> int:
    """Highest Fock level whose coherent weight beyond the grid boundary stays < tol.

    The mass of level n outside radius R is the regularized Gamma tail
    P[Poisson(R^2) <= n]; levels above the returned value cannot be certified
    by a grid of this extent.
    """
    from scipy.stats import poisson

    r2 = grid.radius**2
    levels = np.arange(max_level + 1)
    tails = poisson.cdf(levels, r2)
    good = np.where(tails < tol)[0]
    return int(good[-1]) if good.size else -1


def outcome_distribution(povm: DiscretePOVM, rho) -> np.ndarray:
    """Outcome density at every node: trace of the effect against the state.

    The state may be a TruncatedOperator or a plain (dim, dim) array. Returned
    densities are real; together with the grid weights they sum to one up to
    the completeness residual and truncation leakage.
    """
    mat = getattr(rho, "entries", rho)
    mat = np.asarray(mat, dtype=np.complex128)
    if mat.shape != (povm.space.dim, povm.space.dim):
        raise ValueError(f"state shape {mat.shape} does not match space dim {povm.space.dim}")
    if povm.kind == "elementary":
        return np.einsum("kd,de,ke->k", povm.vectors.conj(), mat, povm.vectors).real
    return np.einsum("kde,ed->k", povm.effects, mat).real
