"""Truncated Fock-space numerics for multimode bosonic fields.

Coherent vectors, thermal and displaced-thermal density operators, ladder
matrices, and explicit truncation-leakage bookkeeping. Everything is dense
numpy. Constructors are pure functions and the returned objects are frozen
(entry buffers are marked read-only), so values can be shared freely between
concurrent tasks; sums and reductions use numpy's left-to-right order and are
bit-reproducible.

Instead of renormalizing away the probability mass lost to a finite photon
cutoff, every state constructor reports it as a ``leakage`` figure
(``1 - trace`` for operators, ``1 - ||v||^2`` for vectors) so that downstream
verification code can budget errors honestly.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

__all__ = [
    "FockSpace",
    "FockVector",
    "TruncatedOperator",
    "coherent_vector",
    "coherent_matrix",
    "overlap",
    "thermal_state",
    "displaced_thermal",
    "glauber_quadrature_state",
    "displacement_matrix",
    "annihilation_matrix",
    "creation_matrix",
    "number_matrix",
    "husimi",
    "occupations",
    "level_mask",
    "default_cutoff",
]


@dataclass(frozen=True)
class FockSpace:
    """Tensor product of per-mode Fock spaces truncated at photon number ``cutoffs[j]``."""

    cutoffs: tuple[int, ...]

    def __post_init__(self):
        cutoffs = tuple(int(c) for c in np.atleast_1d(self.cutoffs))
        if len(cutoffs) < 1:
            raise ValueError("need at least one mode")
        if any(c < 1 for c in cutoffs):
            raise ValueError(f"every cutoff must be >= 1, got {cutoffs}")
        object.__setattr__(self, "cutoffs", cutoffs)

    @classmethod
    def single_mode(cls, cutoff: int) -> "FockSpace":
        return cls((cutoff,))

    @property
    def modes(self) -> int:
        return len(self.cutoffs)

    @property
    def dims(self) -> tuple[int, ...]:
        """Per-mode dimension, cutoff + 1."""
        return tuple(c + 1 for c in self.cutoffs)

    @property
    def dim(self) -> int:
        """Total dimension, the product of the per-mode dimensions."""
        return int(np.prod(self.dims))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FockVector:
    """Dense column vector on a FockSpace; ``leakage = 1 - ||v||^2`` lost to truncation."""

    space: FockSpace
    entries: np.ndarray
    leakage: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.entries, dtype=np.complex128)
        if v.shape != (self.space.dim,):
            raise ValueError(f"entries shape {v.shape} != ({self.space.dim},)")
        object.__setattr__(self, "entries", _readonly(v))

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries))


@dataclass(frozen=True)
class TruncatedOperator:
    """Dense square operator on a FockSpace; for states ``leakage = 1 - trace``."""

    space: FockSpace
    entries: np.ndarray
    leakage: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=np.complex128)
        d = self.space.dim
        if m.shape != (d, d):
            raise ValueError(f"entries shape {m.shape} != ({d}, {d})")
        object.__setattr__(self, "entries", _readonly(m))

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def dagger(self) -> "TruncatedOperator":
        return TruncatedOperator(self.space, self.entries.conj().T, self.leakage)

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))


def _as_mode_vector(alpha, modes: int) -> np.ndarray:
    a = np.atleast_1d(np.asarray(alpha, dtype=np.complex128))
    if a.shape != (modes,):
        raise ValueError(f"expected a length-{modes} complex vector, got shape {a.shape}")
    return a


def _coherent_column(alpha: complex, cutoff: int) -> np.ndarray:
    """Fock coefficients e^{-|a|^2/2} a^n / sqrt(n!) for n = 0..cutoff.

    Computed in log space (magnitude) plus a separate phase so that large
    |alpha| and large cutoffs neither overflow nor underflow.
    """
    n = np.arange(cutoff + 1)
    if alpha == 0:
        col = np.zeros(cutoff + 1, dtype=np.complex128)
        col[0] = 1.0
        return col
    log_mag = n * math.log(abs(alpha)) - 0.5 * abs(alpha) ** 2 - 0.5 * gammaln(n + 1)
    phase = n * np.angle(alpha)
    return np.exp(log_mag) * np.exp(1j * phase)


def coherent_vector(alpha, space: FockSpace, warn: bool = True) -> FockVector:
    """Truncated coherent vector with per-mode amplitudes ``alpha``.

    Per mode, entry n is e^{-|a_j|^2/2} a_j^n / sqrt(n!); the multimode vector
    is the tensor product. The squared-norm deficit equals the Poisson tail
    beyond the cutoff and is reported as leakage.
    """
    a = _as_mode_vector(alpha, space.modes)
    if warn:
        for j, (aj, cj) in enumerate(zip(a, space.cutoffs)):
            if abs(aj) ** 2 > 0.5 * cj:
                warnings.warn(
                    f"|alpha_{j}|^2 = {abs(aj) ** 2:.2f} is not small against cutoff {cj}; "
                    f"truncation tail may be large",
                    stacklevel=2,
                )
    v = np.ones(1, dtype=np.complex128)
    for aj, cj in zip(a, space.cutoffs):
        v = np.kron(v, _coherent_column(aj, cj))
    leak = 1.0 - float(np.vdot(v, v).real)
    return FockVector(space, v, leakage=leak)


def coherent_matrix(alphas: np.ndarray, space: FockSpace) -> np.ndarray:
    """Stack of truncated coherent vectors, one row per amplitude vector.

    Args:
        alphas: (M, r) or (M,) complex array of per-mode amplitudes.
        space: target space with r modes.

    Returns:
        (M, dim) complex array; row k holds the Fock coefficients of alphas[k].
    """
    a = np.asarray(alphas, dtype=np.complex128)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[1] != space.modes:
        raise ValueError(f"alphas has {a.shape[1]} modes, space has {space.modes}")
    out = np.ones((a.shape[0], 1), dtype=np.complex128)
    for j, cj in enumerate(space.cutoffs):
        n = np.arange(cj + 1)
        col = a[:, j]
        mag = np.abs(col)
        log_mag = np.log(np.where(mag > 0, mag, 1.0))
        log_coeff = n[None, :] * log_mag[:, None] - 0.5 * mag[:, None] ** 2 - 0.5 * gammaln(n + 1)[None, :]
        block = np.exp(log_coeff) * np.exp(1j * n[None, :] * np.angle(col)[:, None])
        block[mag == 0] = 0.0
        block[mag == 0, 0] = 1.0
        out = (out[:, :, None] * block[:, None, :]).reshape(a.shape[0], -1)
    return out


def overlap(beta, alpha) -> complex:
    """Closed-form coherent overlap exp{beta^dag alpha - (|alpha|^2 + |beta|^2)/2}.

    Exact in the untruncated space; truncated inner products of
    :func:`coherent_vector` pairs approach this value as cutoffs grow.
    """
    b = np.atleast_1d(np.asarray(beta, dtype=np.complex128))
    a = np.atleast_1d(np.asarray(alpha, dtype=np.complex128))
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {b.shape} vs {a.shape}")
    return complex(np.exp(np.vdot(b, a) - 0.5 * (np.vdot(a, a).real + np.vdot(b, b).real)))


def _thermal_occupations(noise, modes: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Coerce a noise specification to per-eigenmode occupations.

    Accepts a scalar, a length-r vector, or an (r, r) Hermitian PSD matrix.
    Returns (occupations, rotation) where rotation is None when the input was
    already diagonal (mode order preserved) and otherwise the unitary U with
    N = U diag(n) U^dag; in that case operators are built in the eigenmode
    basis and displacement amplitudes must be rotated by U^dag.
    """
    n = np.asarray(noise, dtype=np.complex128)
    if n.ndim == 0:
        return np.full(modes, float(n.real)), None
    if n.ndim == 1:
        if n.shape != (modes,):
            raise ValueError(f"noise vector length {n.shape[0]} != modes {modes}")
        vals = n.real.astype(float)
    elif n.ndim == 2:
        if n.shape != (modes, modes):
            raise ValueError(f"noise matrix shape {n.shape} != ({modes}, {modes})")
        if np.max(np.abs(n - n.conj().T)) > 1e-12:
            raise ValueError("noise matrix is not Hermitian")
        off = n - np.diag(np.diag(n))
        if np.max(np.abs(off)) > 1e-12:
            vals, u = np.linalg.eigh(n)
            if np.min(vals) < -1e-10:
                raise ValueError(f"noise matrix not PSD: eigenvalue {np.min(vals):.3e}")
            return np.clip(vals.real, 0.0, None), u
        vals = np.diag(n).real.astype(float)
    else:
        raise ValueError("noise must be a scalar, vector, or square matrix")
    if np.min(vals) < -1e-10:
        raise ValueError(f"noise not PSD: entry {np.min(vals):.3e}")
    return np.clip(vals, 0.0, None), None


def _thermal_weights(n: float, cutoff: int) -> np.ndarray:
    """Geometric photon-number weights n^k / (n+1)^(k+1), k = 0..cutoff."""
    k = np.arange(cutoff + 1)
    if n <= 0:
        w = np.zeros(cutoff + 1)
        w[0] = 1.0
        return w
    return np.exp(k * math.log(n) - (k + 1) * math.log(n + 1.0))


def thermal_state(noise, space: FockSpace) -> TruncatedOperator:
    """Thermal (Gaussian, zero-mean) state with mean occupations given by ``noise``.

    A single mode with mean quanta n is diagonal with entries n^k/(n+1)^(k+1);
    multiple modes tensor-factorize over the eigenmodes of the noise matrix.
    For a non-diagonal noise matrix the operator is expressed in the eigenmode
    basis (ascending occupation).
    """
    vals, _ = _thermal_occupations(noise, space.modes)
    diag = np.ones(1)
    for nj, cj in zip(vals, space.cutoffs):
        diag = np.kron(diag, _thermal_weights(nj, cj))
    rho = np.diag(diag.astype(np.complex128))
    return TruncatedOperator(space, rho, leakage=1.0 - float(diag.sum()))


def _ladder_single(cutoff: int) -> np.ndarray:
    a = np.zeros((cutoff + 1, cutoff + 1), dtype=np.complex128)
    n = np.arange(1, cutoff + 1)
    a[n - 1, n] = np.sqrt(n)
    return a


def _displacement_columns(theta: complex, cutoff: int, ncols: int) -> np.ndarray:
    """First ``ncols`` columns of the displacement matrix, untruncated elements.

    Column recurrence D|n+1> = (a^dag - conj(theta)) D|n> / sqrt(n+1); row m of
    column n+1 only needs rows m-1, m of column n, so every entry below the
    cutoff equals the untruncated matrix element.
    """
    dim = cutoff + 1
    d = np.zeros((dim, ncols), dtype=np.complex128)
    d[:, 0] = _coherent_column(theta, cutoff)
    root = np.sqrt(np.arange(1, dim))
    tc = np.conj(theta)
    for n in range(ncols - 1):
        col = d[:, n]
        nxt = -tc * col
        nxt[1:] += root * col[:-1]
        d[:, n + 1] = nxt / math.sqrt(n + 1)
    return d


def _displacement_single(theta: complex, cutoff: int, method: str) -> np.ndarray:
    if method == "exact":
        return _displacement_columns(theta, cutoff, cutoff + 1)
    if method == "unitary":
        # expm of the truncated generator; exactly unitary on the truncated
        # space but its entries deviate from the untruncated ones near the top.
        a = _ladder_single(cutoff)
        gen = theta * a.conj().T - np.conj(theta) * a
        w, v = np.linalg.eigh(1j * gen)
        return (v * np.exp(-1j * w)) @ v.conj().T
    raise ValueError(f"unknown displacement method {method!r}")


def displacement_matrix(theta, space: FockSpace, method: str = "exact") -> np.ndarray:
    """Multimode displacement operator, tensor product of per-mode factors.

    ``method="exact"`` reproduces the untruncated matrix elements on the
    retained block (columns are then slightly sub-normalized, the usual
    truncation leakage); ``method="unitary"`` exponentiates the truncated
    generator and is exactly unitary but distorts entries near the cutoff.
    """
    t = _as_mode_vector(theta, space.modes)
    d = np.ones((1, 1), dtype=np.complex128)
    for tj, cj in zip(t, space.cutoffs):
        d = np.kron(d, _displacement_single(tj, cj, method))
    return d


def displaced_thermal(
    theta,
    noise,
    space: FockSpace,
    warn: bool = True,
    method: str = "exact",
) -> TruncatedOperator:
    """Thermal state displaced by ``theta``: D(theta) rho_thermal D(theta)^dag.

    For a non-diagonal noise matrix both the state and the displacement are
    expressed in the noise eigenmode basis (theta is rotated accordingly).
    """
    t = _as_mode_vector(theta, space.modes)
    vals, rot = _thermal_occupations(noise, space.modes)
    if rot is not None:
        t = rot.conj().T @ t
    if warn:
        for j, (tj, nj, cj) in enumerate(zip(t, vals, space.cutoffs)):
            # photon-number mean and variance of the displaced thermal mode
            mean = abs(tj) ** 2 + nj
            var = abs(tj) ** 2 * (2.0 * nj + 1.0) + nj * (nj + 1.0)
            if cj < mean + 4.0 * math.sqrt(var) + 1.0:
                warnings.warn(
                    f"cutoff {cj} of mode {j} may be small for displacement "
                    f"|theta|={abs(tj):.2f} with occupation {nj:.2f}",
                    stacklevel=2,
                )
    rho = np.ones((1, 1), dtype=np.complex128)
    for tj, nj, cj in zip(t, vals, space.cutoffs):
        d = _displacement_single(tj, cj, method)
        w = _thermal_weights(nj, cj)
        block = (d * w) @ d.conj().T
        rho = np.kron(rho, block)
    return TruncatedOperator(space, rho, leakage=1.0 - float(np.trace(rho).real))


def glauber_quadrature_state(theta, noise, space: FockSpace, nodes, weights) -> TruncatedOperator:
    """Displaced thermal state assembled from its coherent-projector mixture.

    Quadrature of the positive-weight mixture
    ``sum_k p(alpha_k | theta) w_k |alpha_k><alpha_k|`` with the Gaussian
    mixture density p(alpha|theta) = |N|^{-1} exp{-(alpha-theta)^dag N^{-1}
    (alpha-theta)}. Cross-checks the closed construction of
    :func:`displaced_thermal`; requires strictly positive occupations (the
    zero-noise mixture density degenerates to a point mass).
    """
    t = _as_mode_vector(theta, space.modes)
    vals, rot = _thermal_occupations(noise, space.modes)
    if rot is not None:
        t = rot.conj().T @ t
    if np.min(vals) <= 0:
        raise ValueError("mixture construction needs every occupation > 0")
    a = np.asarray(nodes, dtype=np.complex128)
    if a.ndim == 1:
        a = a[:, None]
    w = np.asarray(weights, dtype=float)
    delta = a - t[None, :]
    q = (np.abs(delta) ** 2 / vals[None, :]).sum(axis=1)
    dens = np.exp(-q) / float(np.prod(vals))
    c = coherent_matrix(a, space)
    rho = (c.conj().T * (dens * w)) @ c
    return TruncatedOperator(space, rho, leakage=1.0 - float(np.trace(rho).real))


def _embed(op: np.ndarray, space: FockSpace, mode: int) -> np.ndarray:
    full = np.ones((1, 1), dtype=np.complex128)
    for j, dj in enumerate(space.dims):
        full = np.kron(full, op if j == mode else np.eye(dj))
    return full


def annihilation_matrix(space: FockSpace, mode: int = 0) -> TruncatedOperator:
    """Ladder matrix of one mode, embedded in the full tensor space.

    Entry (n, n+1) = sqrt(n+1) per mode. The commutator [a, a^dag] equals the
    identity except in the top Fock level of the mode, the unavoidable
    truncation defect.
    """
    if not 0 <= mode < space.modes:
        raise ValueError(f"mode {mode} out of range for {space.modes} modes")
    return TruncatedOperator(space, _embed(_ladder_single(space.cutoffs[mode]), space, mode))


def creation_matrix(space: FockSpace, mode: int = 0) -> TruncatedOperator:
    return annihilation_matrix(space, mode).dagger()


def number_matrix(space: FockSpace, mode: int = 0) -> TruncatedOperator:
    a = annihilation_matrix(space, mode).entries
    return TruncatedOperator(space, a.conj().T @ a)


def husimi(rho: TruncatedOperator, beta) -> float:
    """Coherent-state expectation <beta| rho |beta> of a truncated operator."""
    v = coherent_vector(beta, rho.space, warn=False).entries
    return float(np.vdot(v, rho.entries @ v).real)


def occupations(space: FockSpace) -> np.ndarray:
    """(dim, modes) integer array: per-mode photon numbers of each basis index."""
    grids = np.meshgrid(*[np.arange(d) for d in space.dims], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def level_mask(space: FockSpace, max_level: int) -> np.ndarray:
    """Boolean mask of basis states with every mode occupation <= max_level."""
    return (occupations(space) <= max_level).all(axis=1)


def default_cutoff(theta_max: float, n: float) -> int:
    """Cutoff keeping Poisson and geometric tails below ~1e-8 for the given reach."""
    return max(20, math.ceil((abs(theta_max) + 4.0 * math.sqrt(n + 1.0)) ** 2))
