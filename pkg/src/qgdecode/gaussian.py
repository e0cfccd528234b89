"""Closed-form mathematics of the Gaussian classical-quantum channel.

A channel is described by two Hermitian PSD matrices in mean-quanta units:
the signal covariance of the circular complex Gaussian prior and the thermal
noise covariance. Measured outcomes behave like the signal plus circular
Gaussian noise with the effective covariance ``noise + I``.

Complex Gaussian convention used everywhere in this package: a circular
distribution with mean m and covariance ``Sigma = E[(z - m)(z - m)^dag]`` has
density ``det(Sigma)^-1 exp{-(z - m)^dag Sigma^-1 (z - m)}`` with respect to
the reference measure ``prod_j (1/pi) dRe z_j dIm z_j``. Per-quadrature real
variances are therefore ``Sigma_jj / 2``.

All functions are pure; sampling takes an explicit seed or Generator, no
global random state is touched.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelError",
    "SingularSignalError",
    "ChannelModel",
    "ComplexGaussian",
    "prior_density",
    "conditional_density",
    "marginal_density",
    "information_kernel",
    "ag_matrices",
    "analytic_mi",
    "sample",
    "complex_gaussian_integral",
    "complex_gaussian_integral_quadrature",
    "complex_gaussian_integral_mc",
]

HERMITIAN_TOL = 1e-12
PSD_TOL = -1e-10


class ModelError(ValueError):
    """Channel matrices violate a structural requirement (Hermitian PSD).

    Carries the offending eigenvalue in ``eigenvalue`` when applicable.
    """

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class SingularSignalError(ModelError):
    """Raised by operations that need the signal covariance inverted."""


def _check_covariance(m: np.ndarray, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=np.complex128))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ModelError(f"{name} covariance must be square, got shape {m.shape}")
    herm = np.max(np.abs(m - m.conj().T))
    if herm > HERMITIAN_TOL:
        raise ModelError(f"{name} covariance is not Hermitian (defect {herm:.2e})")
    eigs = np.linalg.eigvalsh(m)
    if eigs[0] < PSD_TOL:
        raise ModelError(
            f"{name} covariance is not PSD: eigenvalue {eigs[0]:.6e}",
            eigenvalue=float(eigs[0]),
        )
    m = 0.5 * (m + m.conj().T)
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class ChannelModel:
    """Gaussian channel: ``signal`` and ``noise`` covariances, both r x r, in quanta."""

    signal: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        s = _check_covariance(self.signal, "signal")
        n = _check_covariance(self.noise, "noise")
        if s.shape != n.shape:
            raise ModelError(f"signal {s.shape} and noise {n.shape} shapes differ")
        object.__setattr__(self, "signal", s)
        object.__setattr__(self, "noise", n)

    @classmethod
    def single_mode(cls, s: float, n: float) -> "ChannelModel":
        return cls(np.array([[s]], dtype=complex), np.array([[n]], dtype=complex))

    @classmethod
    def diagonal(cls, s_values, n_values) -> "ChannelModel":
        return cls(np.diag(np.asarray(s_values, dtype=complex)), np.diag(np.asarray(n_values, dtype=complex)))

    @property
    def modes(self) -> int:
        return self.signal.shape[0]

    @property
    def effective_noise(self) -> np.ndarray:
        """Outcome noise covariance: thermal noise plus one vacuum quantum."""
        return self.noise + np.eye(self.modes)

    @property
    def output_covariance(self) -> np.ndarray:
        return self.signal + self.effective_noise

    @property
    def signal_singular(self) -> bool:
        eigs = np.linalg.eigvalsh(self.signal)
        return bool(eigs[0] <= 1e-13 * max(1.0, eigs[-1]))

    def signal_inverse(self) -> np.ndarray:
        if self.signal_singular:
            raise SingularSignalError(
                "signal covariance is singular; restrict the model to its "
                "full-rank signal subspace before using densities or kernels"
            )
        return np.linalg.inv(self.signal)


def _as_points(x, modes: int) -> np.ndarray:
    z = np.asarray(x, dtype=np.complex128)
    if modes == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    if z.shape[-1] != modes:
        raise ValueError(f"points must have last dimension {modes}, got shape {z.shape}")
    return z


def _quadform(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Hermitian form x^dag M x over the last axis, batched; real output."""
    return np.einsum("...i,ij,...j->...", x.conj(), m, x).real


def _gaussian_density(x: np.ndarray, cov: np.ndarray) -> np.ndarray:
    det = float(np.linalg.det(cov).real)
    return np.exp(-_quadform(x, np.linalg.inv(cov))) / det


def prior_density(theta, model: ChannelModel) -> np.ndarray:
    """Input density det(S)^-1 exp{-theta^dag S^-1 theta} wrt the pi-measure."""
    t = _as_points(theta, model.modes)
    model.signal_inverse()  # raises on singular signal
    return _gaussian_density(t, model.signal)


def conditional_density(beta, theta, model: ChannelModel) -> np.ndarray:
    """Outcome density given the input: Gaussian with covariance noise + I."""
    b = _as_points(beta, model.modes)
    t = _as_points(theta, model.modes)
    return _gaussian_density(b - t, model.effective_noise)


def marginal_density(beta, model: ChannelModel) -> np.ndarray:
    """Outcome density averaged over the prior: Gaussian with covariance S + N + I."""
    b = _as_points(beta, model.modes)
    return _gaussian_density(b, model.output_covariance)


def log_conditional_density(beta, theta, model: ChannelModel) -> np.ndarray:
    b = _as_points(beta, model.modes)
    t = _as_points(theta, model.modes)
    cov = model.effective_noise
    return -_quadform(b - t, np.linalg.inv(cov)) - math.log(np.linalg.det(cov).real)


def log_marginal_density(beta, model: ChannelModel) -> np.ndarray:
    b = _as_points(beta, model.modes)
    cov = model.output_covariance
    return -_quadform(b, np.linalg.inv(cov)) - math.log(np.linalg.det(cov).real)


def ag_matrices(model: ChannelModel) -> tuple[np.ndarray, np.ndarray]:
    """Posterior gain and precision of the channel.

    Returns (gain, precision) with gain = S (S + N + I)^-1 (the linear
    estimator mapping an outcome to the posterior signal mean) and
    precision = S^-1 + (N + I)^-1 (the posterior inverse covariance).
    Checks the algebraic identity precision^-1 = gain (N + I) to 1e-10.
    """
    s_inv = model.signal_inverse()
    gain = model.signal @ np.linalg.inv(model.output_covariance)
    precision = s_inv + np.linalg.inv(model.effective_noise)
    defect = np.max(np.abs(np.linalg.inv(precision) - gain @ model.effective_noise))
    if defect > 1e-10:
        raise RuntimeError(f"gain/precision identity violated by {defect:.2e}")
    return gain, precision


def information_kernel(beta, theta, model: ChannelModel) -> np.ndarray:
    """Log-likelihood ratio ln[p(beta|theta) / p(beta)] in closed form.

    Evaluates logdet(I + S (N+I)^-1) + theta^dag S^-1 theta
    - (theta - gain beta)^dag precision (theta - gain beta), which is
    identically the log ratio of the conditional and marginal densities.
    """
    b = _as_points(beta, model.modes)
    t = _as_points(theta, model.modes)
    s_inv = model.signal_inverse()
    gain, precision = ag_matrices(model)
    const = math.log(np.linalg.det(model.output_covariance).real) - math.log(
        np.linalg.det(model.effective_noise).real
    )
    centered = t - b @ gain.T
    return const + _quadform(t, s_inv) - _quadform(centered, precision)


def analytic_mi(model: ChannelModel) -> float:
    """Mutual information trace-log formula, sum of ln(1 + lambda_i).

    The lambda_i are eigenvalues of the Hermitian similarity
    (N+I)^-1/2 S (N+I)^-1/2, a numerically stable stand-in for the
    non-Hermitian product S (N+I)^-1.
    """
    w, v = np.linalg.eigh(model.effective_noise)
    inv_sqrt = (v / np.sqrt(w)) @ v.conj().T
    lam = np.linalg.eigvalsh(inv_sqrt @ model.signal @ inv_sqrt)
    return float(np.log1p(np.clip(lam, 0.0, None)).sum())


@dataclass(frozen=True)
class ComplexGaussian:
    """Circular complex Gaussian with E[(z-m)(z-m)^dag] = covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=np.complex128))
        c = _check_covariance(self.covariance, "sampling")
        if c.shape != (m.size, m.size):
            raise ModelError(f"mean length {m.size} does not match covariance {c.shape}")
        if np.linalg.eigvalsh(c)[0] <= 0:
            raise ModelError("sampling covariance must be positive definite")
        m.flags.writeable = False
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "covariance", c)

    @property
    def modes(self) -> int:
        return self.mean.size

    def density(self, z) -> np.ndarray:
        pts = _as_points(z, self.modes)
        return _gaussian_density(pts - self.mean, self.covariance)


def sample(dist: ComplexGaussian, count: int, seed) -> np.ndarray:
    """Draw ``count`` circular complex Gaussian vectors, deterministically per seed.

    Returns an (count, r) complex array. ``seed`` may be an int, a SeedSequence,
    or a Generator (consumed in place).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chol = np.linalg.cholesky(dist.covariance)
    w = rng.standard_normal((count, dist.modes)) + 1j * rng.standard_normal((count, dist.modes))
    return dist.mean + (w / math.sqrt(2.0)) @ chol.T


_INTEGRAL_KINDS = ("normalization", "first_moment", "conjugate_moment", "quadratic")


def _check_integral_args(kind, q, alpha, beta, h):
    if kind not in _INTEGRAL_KINDS:
        raise ValueError(f"kind must be one of {_INTEGRAL_KINDS}")
    q = np.atleast_2d(np.asarray(q, dtype=np.complex128))
    r = q.shape[0]
    if np.max(np.abs(q - q.conj().T)) > 1e-12 or np.linalg.eigvalsh(q)[0] <= 0:
        raise ValueError("Q must be Hermitian positive definite")
    a = _as_points(alpha, r)
    b = _as_points(beta, r)
    if a.shape != (r,) or b.shape != (r,):
        raise ValueError("alpha and beta must be single r-vectors")
    if kind == "quadratic":
        if h is None:
            raise ValueError("quadratic kind needs the H matrix")
        h = np.atleast_2d(np.asarray(h, dtype=np.complex128))
        if h.shape != q.shape:
            raise ValueError("H must match the shape of Q")
    return q, a, b, h


def complex_gaussian_integral(kind: str, q, alpha, beta, h=None):
    """Closed forms of the weighted complex Gaussian integrals.

    With weight ``exp{-(z-alpha)^dag Q (z-beta)} det(Q)`` against the
    pi-measure: the total mass is 1, the z moment is beta, the conjugate
    moment is conj(alpha), and the bilinear form (z-alpha)^dag H (z-beta)
    averages to trace(Q^-1 H).
    """
    q, a, b, h = _check_integral_args(kind, q, alpha, beta, h)
    if kind == "normalization":
        return 1.0
    if kind == "first_moment":
        return b.copy() if b.size > 1 else complex(b[0])
    if kind == "conjugate_moment":
        return a.conj() if a.size > 1 else complex(a[0].conjugate())
    return complex(np.trace(np.linalg.solve(q, h)))


def _integrand_factor(kind, z, a, b, h):
    if kind == "normalization":
        return np.ones(z.shape[0])
    if kind == "first_moment":
        return z[:, 0] if z.shape[1] == 1 else z
    if kind == "conjugate_moment":
        return z[:, 0].conj() if z.shape[1] == 1 else z.conj()
    return np.einsum("ki,ij,kj->k", (z - a).conj(), h, z - b)


def complex_gaussian_integral_quadrature(
    kind: str,
    q,
    alpha,
    beta,
    h=None,
    spacing: float = 0.1,
    sigmas: float = 6.0,
    max_nodes: int = 4_000_000,
):
    """Brute-force midpoint quadrature of the same integrals (cross-check path).

    The lattice is centered on (alpha + beta)/2 and extends ``sigmas`` standard
    deviations of the Gaussian factor plus the alpha-beta separation. Node
    count grows as (points per axis)^(2r); exceeding ``max_nodes`` raises.
    """
    q, a, b, h = _check_integral_args(kind, q, alpha, beta, h)
    r = q.shape[0]
    center = 0.5 * (a + b)
    halfwidth = float(sigmas / math.sqrt(np.linalg.eigvalsh(q)[0]) + np.max(np.abs(a - b)))
    k = int(halfwidth / spacing) + 1
    axis = spacing * np.arange(-k, k + 1)
    npoints = axis.size
    if npoints ** (2 * r) > max_nodes:
        raise ValueError(f"quadrature grid would need {npoints ** (2 * r)} nodes (> {max_nodes})")
    grids = np.meshgrid(*([axis] * (2 * r)), indexing="ij")
    z = np.stack(
        [grids[2 * j].ravel() + 1j * grids[2 * j + 1].ravel() for j in range(r)], axis=1
    ) + center
    weight = (spacing**2 / math.pi) ** r
    expo = np.einsum("ki,ij,kj->k", (z - a).conj(), q, z - b)
    kernel = np.exp(-expo) * float(np.linalg.det(q).real) * weight
    vals = _integrand_factor(kind, z, a, b, h)
    if kind == "first_moment" and r > 1:
        return kernel @ vals
    if kind == "conjugate_moment" and r > 1:
        return kernel @ vals
    return complex(np.sum(kernel * vals))


def complex_gaussian_integral_mc(kind: str, q, alpha, beta, h=None, count: int = 200_000, seed=0):
    """Monte-Carlo evaluation via importance sampling from CN((alpha+beta)/2, Q^-1).

    The importance weight exp{-(z-alpha)^dag Q (z-beta) + (z-c)^dag Q (z-c)}
    has constant magnitude (the exponent difference is purely imaginary up to
    a constant), so the estimator variance stays bounded.
    """
    q, a, b, h = _check_integral_args(kind, q, alpha, beta, h)
    center = 0.5 * (a + b)
    dist = ComplexGaussian(center, np.linalg.inv(q))
    z = sample(dist, count, seed)
    expo = np.einsum("ki,ij,kj->k", (z - a).conj(), q, z - b)
    ref = np.einsum("ki,ij,kj->k", (z - center).conj(), q, z - center).real
    w = np.exp(-expo + ref)
    vals = _integrand_factor(kind, z, a, b, h)
    if kind in ("first_moment", "conjugate_moment") and q.shape[0] > 1:
        return (w[:, None] * vals).mean(axis=0)
    return complex(np.mean(w * vals))
