"""Executable decoding-optimality checks for the Gaussian channel.

The central objects are the information operator
``I(b) = sum_m i(b, t_m) rho(t_m) P_m w_m`` (a state-weighted average of the
log-likelihood-ratio kernel over the input grid) and the multiplier operator
``L = sum_k I(b_k) phi_k phi_k^dag w_k`` enforcing completeness of the
decoding family. A family is stationary for the information functional when
``(I(b_k) - L) phi_k = 0`` at every node; the coherent family satisfies this
up to quadrature and truncation error, while deliberately perturbed families
(squeezed, offset, rescaled vectors) do not. ``trace(L)`` reproduces the
channel's analytic mutual information within the same error budget.

The per-input channel states are displaced thermal operators; the sweep over
the input grid factorizes them through the (numerically low-rank) thermal
occupation spectrum, which keeps the dense linear algebra tractable without
touching the quantities being verified.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .fock import FockSpace, _displacement_columns, _thermal_occupations, _thermal_weights
from .gaussian import (
    ChannelModel,
    ag_matrices,
    conditional_density,
    marginal_density,
    prior_density,
)
from .povm import BudgetExceededError, ComplexGrid, DiscretePOVM, make_grid

__all__ = [
    "VariationalProblem",
    "FamilyEvaluation",
    "IdentityCheck",
    "evaluate_families",
    "information_operator",
    "lagrange_operator",
    "stationarity_residual",
    "mutual_information_quadrature",
    "verify_identity_15",
]

DEGENERATE_SIGNAL = 1e-12
LOG_FLOOR = 1e-300


def _max_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(m)[-1].real)


@dataclass(frozen=True)
class VariationalProblem:
    """Channel model plus the quadrature grids and Fock space used to verify it.

    ``theta_grid`` discretizes the Gaussian input distribution (its quadrature
    must capture all but <= 1e-3 of the prior mass), ``beta_grid`` the outcome
    measure. A model with exactly zero signal covariance degenerates to a
    single input node with unit weight.
    """

    model: ChannelModel
    space: FockSpace
    theta_grid: ComplexGrid
    beta_grid: ComplexGrid

    def __post_init__(self):
        r = self.model.modes
        if self.space.modes != r or self.theta_grid.modes != r or self.beta_grid.modes != r:
            raise ValueError("model, space, and grids must share the mode count")
        if self.degenerate:
            pw = np.ones(1)
        else:
            pw = prior_density(self.theta_grid.nodes, self.model) * self.theta_grid.weights
            total = float(pw.sum())
            if abs(total - 1.0) > 1e-3:
                raise ValueError(
                    f"input grid captures prior mass {total:.6f}; "
                    "enlarge the radius or refine the spacing"
                )
        pw.flags.writeable = False
        object.__setattr__(self, "_prior_weights", pw)

    @property
    def degenerate(self) -> bool:
        return _max_eig(self.model.signal) <= DEGENERATE_SIGNAL

    @property
    def prior_weights(self) -> np.ndarray:
        return self._prior_weights

    @classmethod
    def for_model(
        cls,
        model: ChannelModel,
        spacing: float = 0.25,
        theta_sigmas: float = 5.0,
        beta_sigmas: float = 5.0,
        cutoff: int | None = None,
        max_nodes: int = 5_000_000,
    ) -> "VariationalProblem":
        """Build default grids and Fock space for a model.

        Radii follow the prior and outcome spreads (``sigmas`` times the
        per-mode standard deviation); the cutoff covers the displaced thermal
        states of all input nodes carrying non-negligible prior mass.
        """
        s_max = _max_eig(model.signal)
        n_max = _max_eig(model.noise)
        r = model.modes
        if cutoff is None:
            reach = 2.5 * math.sqrt(max(s_max, 0.0))
            cutoff = max(30, math.ceil((reach + 4.0 * math.sqrt(n_max + 1.0)) ** 2))
        space = FockSpace(tuple([cutoff] * r))
        beta_radius = beta_sigmas * math.sqrt(s_max + n_max + 1.0)
        beta_grid = make_grid(r, beta_radius, spacing, max_nodes=max_nodes)
        if s_max <= DEGENERATE_SIGNAL:
            theta_grid = ComplexGrid(
                nodes=np.zeros((1, r), dtype=complex),
                weights=np.ones(1),
                radius=spacing,
                spacing=spacing,
            )
        else:
            theta_grid = make_grid(r, theta_sigmas * math.sqrt(s_max), spacing, max_nodes=max_nodes)
        return cls(model=model, space=space, theta_grid=theta_grid, beta_grid=beta_grid)


@dataclass(frozen=True)
class FamilyEvaluation:
    """Stationarity diagnostics of one decoding family.

    ``residuals[k] = ||(I(b_k) - L) phi_k|| / ||phi_k||``; the aggregate is the
    RMS weighted by the family's own outcome density times the node weights,
    so tail nodes carry no spurious influence. ``sup_residual`` is unweighted.
    """

    label: str
    kernel: str
    residuals: np.ndarray
    aggregate_residual: float
    sup_residual: float
    lambda_matrix: np.ndarray
    lambda_trace: float
    marginal: np.ndarray


def _state_factors(model: ChannelModel, space: FockSpace, tail: float = 1e-15):
    """Per-mode thermal data for building displaced states B B^dag with B thin.

    Returns (occupations, kept ranks, sqrt-weight columns); the thermal
    spectrum decays geometrically so ranks stay far below the dimension for
    small occupations.
    """
    occ, rot = _thermal_occupations(model.noise, space.modes)
    if rot is not None:
        raise ValueError("optimality sweeps require a diagonal noise covariance")
    ranks = []
    roots = []
    for nj, cj in zip(occ, space.cutoffs):
        if nj <= 0:
            rj = 1
        else:
            rj = min(cj + 1, math.ceil(math.log(tail) / math.log(nj / (nj + 1.0))))
        ranks.append(rj)
        roots.append(np.sqrt(_thermal_weights(nj, cj)[:rj]))
    return occ, ranks, roots


def _state_factor_at(theta: np.ndarray, space: FockSpace, ranks, roots) -> np.ndarray:
    """Thin factor B with rho(theta) = B B^dag, built from displacement columns."""
    b = None
    for tj, cj, rj, wj in zip(theta, space.cutoffs, ranks, roots):
        cols = _displacement_columns(complex(tj), cj, rj) * wj[None, :]
        b = cols if b is None else np.kron(b, cols)
    return b


class _ClosedKernel:
    """Closed-form log-likelihood-ratio kernel i(b, t) precomputed per family."""

    def __init__(self, model: ChannelModel, beta_nodes: np.ndarray):
        gain, precision = ag_matrices(model)
        self.s_inv = model.signal_inverse()
        self.precision = precision
        self.const = math.log(np.linalg.det(model.output_covariance).real) - math.log(
            np.linalg.det(model.effective_noise).real
        )
        self.gain_beta = beta_nodes @ gain.T

    def column(self, theta: np.ndarray) -> np.ndarray:
        t_term = float(np.einsum("i,ij,j->", theta.conj(), self.s_inv, theta).real)
        diff = theta[None, :] - self.gain_beta
        quad = np.einsum("ki,ij,kj->k", diff.conj(), self.precision, diff).real
        return self.const + t_term - quad


def evaluate_families(
    problem: VariationalProblem,
    povms: list[DiscretePOVM],
    kernel: str = "auto",
) -> list[FamilyEvaluation]:
    """Single sweep over the input grid evaluating several decoding families.

    Every family must be elementary. ``kernel`` selects where the outcome
    densities inside the kernel come from: "closed" uses the channel's
    Gaussian formulas (valid for the exactly-coherent family, where it removes
    compounded truncation error), "trace" evaluates them from the truncated
    operators, "auto" picks "closed" exactly for the coherent family.
    """
    if kernel not in ("auto", "closed", "trace"):
        raise ValueError("kernel must be 'auto', 'closed', or 'trace'")
    for p in povms:
        if p.kind != "elementary":
            raise ValueError("stationarity sweeps need elementary (rank-one) families")
        if p.space != problem.space:
            raise ValueError("family space does not match the problem space")
    space = problem.space
    dim = space.dim
    theta_nodes = problem.theta_grid.nodes
    pw = problem.prior_weights
    n_theta = theta_nodes.shape[0]
    occ, ranks, roots = _state_factors(problem.model, space)

    modes = []
    for p in povms:
        use_closed = kernel == "closed" or (kernel == "auto" and p.label == "coherent")
        modes.append("closed" if use_closed else "trace")

    phits = [p.vectors.T.copy() for p in povms]
    closed_kernels = {}
    if not problem.degenerate:
        for idx, (p, mode) in enumerate(zip(povms, modes)):
            if mode == "closed":
                closed_kernels[idx] = _ClosedKernel(problem.model, p.grid.nodes)

    v_acc = [np.zeros((dim, pt.shape[1]), dtype=np.complex128) for pt in phits]
    marg_acc = [np.zeros(pt.shape[1]) for pt in phits]
    rho_bar = np.zeros((dim, dim), dtype=np.complex128)

    for m in range(n_theta):
        b = _state_factor_at(theta_nodes[m], space, ranks, roots)
        scale = pw[m]
        rho_bar += scale * (b @ b.conj().T)
        for idx, pt in enumerate(phits):
            u = b @ (b.conj().T @ pt)
            if modes[idx] == "closed":
                if problem.degenerate:
                    continue
                v_acc[idx] += u * (scale * closed_kernels[idx].column(theta_nodes[m]))[None, :]
            else:
                h = np.einsum("dk,dk->k", pt.conj(), u).real
                h = np.maximum(h, LOG_FLOOR)
                marg_acc[idx] += scale * h
                v_acc[idx] += u * (scale * np.log(h))[None, :]

    results = []
    for idx, (p, pt) in enumerate(zip(povms, phits)):
        w = p.grid.weights
        if modes[idx] == "closed":
            if problem.degenerate:
                marginal = conditional_density(p.grid.nodes, np.zeros(space.modes), problem.model)
                v = np.zeros_like(v_acc[idx])
            else:
                marginal = marginal_density(p.grid.nodes, problem.model)
                v = v_acc[idx]
        else:
            marginal = marg_acc[idx]
            v = v_acc[idx] - (rho_bar @ pt) * np.log(np.maximum(marginal, LOG_FLOOR))[None, :]
        lam = (v * w[None, :]) @ pt.conj().T
        lam = 0.5 * (lam + lam.conj().T)
        res_cols = v - lam @ pt
        norms = np.linalg.norm(pt, axis=0)
        residuals = np.linalg.norm(res_cols, axis=0) / np.maximum(norms, 1e-30)
        weight = marginal * w
        total = float(weight.sum())
        aggregate = float(np.sqrt((weight * residuals**2).sum() / total)) if total > 0 else 0.0
        results.append(
            FamilyEvaluation(
                label=p.label,
                kernel=modes[idx],
                residuals=residuals,
                aggregate_residual=aggregate,
                sup_residual=float(residuals.max()),
                lambda_matrix=lam,
                lambda_trace=float(np.trace(lam).real),
                marginal=np.asarray(marginal, dtype=float),
            )
        )
    return results


def stationarity_residual(
    problem: VariationalProblem, povm: DiscretePOVM, kernel: str = "auto"
) -> FamilyEvaluation:
    """Stationarity report for a single decoding family (see evaluate_families)."""
    return evaluate_families(problem, [povm], kernel=kernel)[0]


def lagrange_operator(problem: VariationalProblem, povm: DiscretePOVM, kernel: str = "auto"):
    """Completeness multiplier of the family; its trace estimates the channel MI."""
    from .fock import TruncatedOperator

    ev = evaluate_families(problem, [povm], kernel=kernel)[0]
    return TruncatedOperator(problem.space, ev.lambda_matrix)


def information_operator(problem: VariationalProblem, beta, povm: DiscretePOVM | None = None):
    """Information operator I(b): kernel-weighted average of the channel states.

    Uses the closed-form kernel; a degenerate (zero-signal) prior makes the
    kernel vanish identically and the zero operator is returned. ``beta`` must
    lie inside the outcome grid extent.
    """
    from .fock import TruncatedOperator

    space = problem.space
    b = np.atleast_1d(np.asarray(beta, dtype=complex))
    if np.max(np.abs(b.real)) > problem.beta_grid.radius + 1e-9 or np.max(
        np.abs(b.imag)
    ) > problem.beta_grid.radius + 1e-9:
        raise ValueError("beta lies outside the reliable outcome region")
    out = np.zeros((space.dim, space.dim), dtype=np.complex128)
    if problem.degenerate:
        return TruncatedOperator(space, out)
    ck = _ClosedKernel(problem.model, b[None, :])
    occ, ranks, roots = _state_factors(problem.model, space)
    pw = problem.prior_weights
    for m in range(problem.theta_grid.nodes.shape[0]):
        theta = problem.theta_grid.nodes[m]
        factor = _state_factor_at(theta, space, ranks, roots)
        out += (pw[m] * ck.column(theta)[0]) * (factor @ factor.conj().T)
    return TruncatedOperator(space, out)


def mutual_information_quadrature(
    model: ChannelModel,
    beta_grid: ComplexGrid | None = None,
    theta_grid: ComplexGrid | None = None,
    spacing: float = 0.3,
    sigmas: float = 5.0,
    pair_budget: int = 40_000_000,
) -> float:
    """Mutual information by direct double quadrature of the Gaussian densities.

    The integrand is p(b|t) ln[p(b|t)/p(b)] against the prior and the flat
    outcome measure. For one mode the node pairs are enumerated directly (the
    outcome marginal itself comes from the inner input quadrature). When the
    pair count exceeds ``pair_budget`` (several modes), the double sum is
    regrouped exactly over the difference lattice b = t + g, which requires
    both grids to share their spacing; the closed-form outcome marginal is
    used in that branch.
    """
    s_max = _max_eig(model.signal)
    n_max = _max_eig(model.noise)
    if s_max <= DEGENERATE_SIGNAL:
        return 0.0
    r = model.modes
    if theta_grid is None:
        theta_grid = make_grid(r, sigmas * math.sqrt(s_max), spacing)
    if beta_grid is None:
        beta_grid = make_grid(r, sigmas * math.sqrt(s_max) + sigmas * math.sqrt(n_max + 1.0), spacing)
    peak = float(prior_density(np.zeros((1, r), dtype=complex), model)[0])
    edge = np.full(r, theta_grid.radius, dtype=complex)
    if float(prior_density(edge[None, :], model)[0]) > 1e-6 * peak:
        warnings.warn("input grid may not cover the prior support", stacklevel=2)
    if beta_grid.radius - theta_grid.radius < 3.5 * math.sqrt(n_max + 1.0):
        warnings.warn("outcome grid barely covers the conditional spread", stacklevel=2)

    pw = prior_density(theta_grid.nodes, model) * theta_grid.weights
    n_pairs = len(theta_grid) * len(beta_grid)
    if n_pairs <= pair_budget:
        total = 0.0
        chunk = max(1, pair_budget // (20 * len(theta_grid)))
        for start in range(0, len(beta_grid), chunk):
            bn = beta_grid.nodes[start : start + chunk]
            bw = beta_grid.weights[start : start + chunk]
            cond = conditional_density(bn[:, None, :], theta_grid.nodes[None, :, :], model)
            marg = cond @ pw
            log_ratio = np.log(np.maximum(cond, LOG_FLOOR)) - np.log(
                np.maximum(marg, LOG_FLOOR)
            )[:, None]
            total += float((((cond * log_ratio) @ pw) * bw).sum())
        return total

    if abs(beta_grid.spacing - theta_grid.spacing) > 1e-12:
        raise ValueError("difference-lattice path requires equal grid spacings")
    gamma_radius = beta_grid.radius - theta_grid.radius
    if gamma_radius <= 0:
        raise ValueError("outcome grid must extend beyond the input grid")
    gamma = make_grid(r, gamma_radius, beta_grid.spacing)
    cond = conditional_density(gamma.nodes, np.zeros(r, dtype=complex), model)
    gw = gamma.weights
    mass = float((cond * gw).sum())
    with np.errstate(divide="ignore"):
        ent = float((cond * np.log(np.maximum(cond, LOG_FLOOR)) * gw).sum())
    m_inv = np.linalg.inv(model.output_covariance)
    logdet_out = math.log(np.linalg.det(model.output_covariance).real)
    m1 = (cond * gw) @ gamma.nodes
    m2 = float(np.einsum("k,ki,ij,kj->", cond * gw, gamma.nodes.conj(), m_inv, gamma.nodes).real)
    t_quad = np.einsum("ki,ij,kj->k", theta_grid.nodes.conj(), m_inv, theta_grid.nodes).real
    cross = (theta_grid.nodes.conj() @ (m_inv @ m1)).real
    log_marg_avg = -(logdet_out * mass + mass * t_quad + 2.0 * cross + m2)
    return float((pw * (ent - log_marg_avg)).sum())


@dataclass(frozen=True)
class IdentityCheck:
    """Three routes to the same vanishing expression, reported side by side.

    ``numeric`` integrates the full nested identity on grids; ``reduced``
    keeps only the final input-average after the inner integrals are done in
    closed form; ``algebraic`` is the fully reduced matrix expression. All
    three vanish for the true channel gain and detach from zero together when
    the gain is deliberately mis-scaled.
    """

    numeric: complex
    reduced: complex
    algebraic: complex

    @property
    def numeric_abs(self) -> float:
        return abs(self.numeric)

    @property
    def reduced_abs(self) -> float:
        return abs(self.reduced)

    @property
    def algebraic_abs(self) -> float:
        return abs(self.algebraic)


def _overlap_rows(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Coherent overlaps <left_k | right_k> row-wise for (M, r) arrays."""
    dots = np.einsum("ki,ki->k", left.conj(), right)
    norms = 0.5 * (np.abs(left) ** 2 + np.abs(right) ** 2).sum(axis=1)
    return np.exp(dots - norms)


def verify_identity_15(
    model: ChannelModel,
    beta,
    theta_grid: ComplexGrid,
    alpha_grid: ComplexGrid,
    alpha=None,
    gain_scale: float = 1.0,
    mac_budget: float = 4e10,
) -> IdentityCheck:
    """Numerically verify the vanishing identity behind coherent-decoding optimality.

    The identity states that for the coherent family the kernel's quadratic
    part c(z, t) = (z - t)^dag G (z - t), averaged with the coherent overlap
    structure against the channel's coherent-projector mixture and the prior,
    cancels exactly. ``alpha_grid`` supplies the quadrature lattice for the
    mixture variable and the inner decoding variable; ``theta_grid`` for the
    prior. ``gain_scale`` rescales the gain matrix inside c only, providing a
    perturbation control that must break the cancellation. ``alpha`` is the
    free probe amplitude (defaults to the origin).

    Zero noise collapses the mixture to a point mass and the mixture
    quadrature is skipped exactly; otherwise the nested sum costs roughly
    ``len(alpha_grid)^2 * len(theta_grid)`` operations, guarded by
    ``mac_budget``.
    """
    r = model.modes
    b = np.atleast_1d(np.asarray(beta, dtype=complex))
    a_free = np.zeros(r, dtype=complex) if alpha is None else np.atleast_1d(np.asarray(alpha, dtype=complex))
    if b.shape != (r,) or a_free.shape != (r,):
        raise ValueError("beta and alpha must be single r-vectors")
    gain, precision = ag_matrices(model)
    gain_t = gain_scale * gain
    noise = model.noise
    eff = model.effective_noise
    eff_inv = np.linalg.inv(eff)
    noiseless = _max_eig(noise) <= 1e-14

    theta = theta_grid.nodes
    pw = prior_density(theta, model) * theta_grid.weights

    def c_quad(z, t):
        d = z - t
        return np.einsum("...i,ij,...j->...", d.conj(), precision, d)

    # inner decoding-variable sum: J(a_mix, t) over the alpha_grid lattice
    inner = alpha_grid.nodes
    iw = alpha_grid.weights
    z = inner @ gain_t.T
    qz = np.einsum("ki,ij,kj->k", z.conj(), precision, z).real
    qt = np.einsum("mi,ij,mj->m", theta.conj(), precision, theta).real
    p1 = z.conj() @ precision @ theta.T
    c_mat = qz[:, None] + qt[None, :] - 2.0 * p1.real  # c(z_l, t_m), real

    if noiseless:
        # zero-noise mixture is a point mass at the input amplitude;
        # exp{-(l - t)^dag (l - b)} = exp{-|l|^2 + l^dag b + t^dag l - t^dag b}
        base = -(np.abs(inner) ** 2).sum(axis=1) + inner.conj() @ b
        e_lt = np.exp(base[:, None] + (inner @ theta.conj().T) - (theta.conj() @ b)[None, :])
        j_vec = (e_lt * iw[:, None] * c_mat).sum(axis=0)
        cb = c_quad(gain_t @ b, theta)
        amp = _overlap_rows(np.broadcast_to(a_free, theta.shape), theta) * _overlap_rows(
            theta, np.broadcast_to(b, theta.shape)
        )
        numeric = complex((pw * amp * (cb - j_vec)).sum())
    else:
        macs = len(alpha_grid) ** 2 * len(theta_grid)
        if macs > mac_budget:
            raise BudgetExceededError(
                f"identity quadrature needs ~{macs:.2e} operations (budget {mac_budget:.2e})"
            )
        noise_inv = np.linalg.inv(noise)
        det_noise = float(np.linalg.det(noise).real)
        # exp{-(l - a)^dag (l - b)} for inner rows l, mixture rows a
        lin_l = -(np.abs(inner) ** 2).sum(axis=1) + inner.conj() @ b
        e1 = np.exp(lin_l[None, :] + (inner @ alpha_grid.nodes.conj().T).T - (alpha_grid.nodes.conj() @ b)[:, None])
        j_all = (e1 * iw[None, :]) @ c_mat  # (mixture, theta)
        mix = alpha_grid.nodes
        damp = (
            _overlap_rows(np.broadcast_to(a_free, mix.shape), mix)
            * _overlap_rows(mix, np.broadcast_to(b, mix.shape))
            * alpha_grid.weights
        )
        diff = mix[:, None, :] - theta[None, :, :]
        glauber = np.exp(-np.einsum("ami,ij,amj->am", diff.conj(), noise_inv, diff)) / det_noise
        cb = c_quad(gain_t @ b, theta)
        numeric = complex(((damp[:, None] * glauber) * (cb[None, :] - j_all)).sum(axis=0) @ pw)

    # reduced route: inner sums done in closed form, input average on the grid
    mix_mean = (theta + (noise @ a_free)[None, :]) @ eff_inv.T
    atg = gain_t.conj().T @ precision
    left = np.broadcast_to(b, theta.shape) - mix_mean
    right = (gain_t @ b)[None, :] - theta
    bracket = np.einsum("mi,ij,mj->m", left.conj(), atg, right) - np.trace(
        gain_t @ gain_t.conj().T @ precision
    )
    overlap_ab = _overlap_rows(a_free[None, :], b[None, :])[0]
    dd = theta - a_free[None, :]
    de = theta - b[None, :]
    gauss = np.exp(-np.einsum("mi,ij,mj->m", dd.conj(), eff_inv, de)) / float(
        np.linalg.det(eff).real
    )
    reduced = complex(overlap_ab * (pw * bracket * gauss).sum())

    # fully reduced algebra, including the gain-mismatch correction term
    g_inv = np.linalg.inv(precision)
    trace_part = np.trace(
        (g_inv @ eff_inv @ gain_t.conj().T - gain_t @ gain_t.conj().T) @ precision
    )
    u = eff @ b - noise @ a_free
    corr = (gain @ a_free - u).conj() @ eff_inv @ gain_t.conj().T @ precision @ ((gain - gain_t) @ b)
    det_out = float(np.linalg.det(model.output_covariance).real)
    cross_const = np.exp(-a_free.conj() @ ((np.eye(r) - gain.conj().T) @ eff_inv) @ b)
    algebraic = complex(overlap_ab * cross_const / det_out * (trace_part + corr))

    return IdentityCheck(numeric=numeric, reduced=reduced, algebraic=algebraic)
