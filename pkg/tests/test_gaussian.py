import math

import numpy as np
import pytest

from qgdecode.fock import FockSpace, displaced_thermal, husimi
from qgdecode.gaussian import (
    ChannelModel,
    ComplexGaussian,
    ModelError,
    SingularSignalError,
    ag_matrices,
    analytic_mi,
    complex_gaussian_integral,
    complex_gaussian_integral_mc,
    complex_gaussian_integral_quadrature,
    conditional_density,
    information_kernel,
    marginal_density,
    prior_density,
    sample,
)


def grid_points(radius, spacing):
    k = int(radius / spacing + 1e-9)
    axis = spacing * np.arange(-k, k + 1)
    re, im = np.meshgrid(axis, axis, indexing="ij")
    return (re + 1j * im).ravel(), spacing**2 / np.pi


def random_psd(rng, r, scale=1.0):
    m = rng.standard_normal((r, r)) + 1j * rng.standard_normal((r, r))
    return scale * (m @ m.conj().T) / r


def test_model_validation():
    with pytest.raises(ModelError):
        ChannelModel(np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(2))
    err = None
    try:
        ChannelModel(np.array([[-0.5]]), np.array([[0.0]]))
    except ModelError as e:
        err = e
    assert err is not None and err.eigenvalue == pytest.approx(-0.5)
    m = ChannelModel.single_mode(1.0, 0.5)
    assert m.modes == 1
    assert np.allclose(m.effective_noise, [[1.5]])


def test_prior_density_values():
    assert prior_density(0.0, ChannelModel.single_mode(1.0, 0.0)) == pytest.approx(1.0)
    val = prior_density(1.0, ChannelModel.single_mode(2.0, 0.0))
    assert val == pytest.approx(0.5 * math.exp(-0.5), abs=1e-12)


def test_prior_density_normalizes():
    model = ChannelModel.single_mode(1.5, 0.0)
    pts, w = grid_points(6.0 * math.sqrt(1.5), 0.1)
    total = prior_density(pts, model).sum() * w
    assert total == pytest.approx(1.0, abs=1e-4)


def test_prior_density_singular_signal():
    model = ChannelModel.single_mode(0.0, 1.0)
    with pytest.raises(SingularSignalError, match="full-rank"):
        prior_density(0.0, model)


def test_conditional_density_values():
    assert conditional_density(0.3 + 0.1j, 0.3 + 0.1j, ChannelModel.single_mode(1.0, 0.0)) == pytest.approx(1.0)
    val = conditional_density(1.0, 0.0, ChannelModel.single_mode(1.0, 1.0))
    assert val == pytest.approx(0.5 * math.exp(-0.5), abs=1e-12)


def test_conditional_density_matches_fock_husimi():
    # closed form vs <beta| rho(theta) |beta> on the truncated space
    model = ChannelModel.single_mode(1.0, 0.5)
    space = FockSpace.single_mode(30)
    rng = np.random.default_rng(3)
    for _ in range(8):
        theta, beta = (rng.uniform(-1.5, 1.5, 2) + 1j * rng.uniform(-1.5, 1.5, 2)) / math.sqrt(2.0)
        rho = displaced_thermal(theta, 0.5, space, warn=False)
        assert husimi(rho, beta) == pytest.approx(
            float(conditional_density(beta, theta, model)), abs=1e-4
        )


def test_marginal_density_value_and_quadrature():
    model = ChannelModel.single_mode(3.0, 0.0)
    assert marginal_density(0.0, model) == pytest.approx(0.25, abs=1e-14)
    # marginal equals the prior-weighted conditional, by quadrature
    pts, w = grid_points(5.0 * math.sqrt(3.0), 0.15)
    for beta in (0.0, 0.7 - 0.4j, 1.5j):
        mixed = (conditional_density(beta, pts, model) * prior_density(pts, model)).sum() * w
        assert mixed == pytest.approx(float(marginal_density(beta, model)), abs=1e-4)


def test_marginal_density_normalizes():
    model = ChannelModel.single_mode(2.0, 1.0)
    pts, w = grid_points(6.0 * math.sqrt(4.0), 0.15)
    assert marginal_density(pts, model).sum() * w == pytest.approx(1.0, abs=1e-4)


def test_information_kernel_structure():
    model = ChannelModel.single_mode(3.0, 0.0)
    # at beta = theta = 0 only the log-det term survives
    assert information_kernel(0.0, 0.0, model) == pytest.approx(math.log(4.0), abs=1e-12)
    gain, _ = ag_matrices(model)
    beta = 0.8 + 0.3j
    theta = complex(gain[0, 0]) * beta
    expect = math.log(4.0) + abs(theta) ** 2 / 3.0
    assert information_kernel(beta, theta, model) == pytest.approx(expect, abs=1e-12)


def test_information_kernel_is_log_ratio():
    # 1e4 random pairs, identity to 1e-10
    rng = np.random.default_rng(11)
    for model in (
        ChannelModel.single_mode(1.0, 0.5),
        ChannelModel(random_psd(rng, 2) + 0.5 * np.eye(2), random_psd(rng, 2)),
    ):
        r = model.modes
        beta = (rng.standard_normal((10_000, r)) + 1j * rng.standard_normal((10_000, r))) * 1.5
        theta = (rng.standard_normal((10_000, r)) + 1j * rng.standard_normal((10_000, r))) * 1.5
        lhs = information_kernel(beta, theta, model)
        rhs = np.log(conditional_density(beta, theta, model) / marginal_density(beta, model))
        assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_ag_matrices_values():
    gain, precision = ag_matrices(ChannelModel.single_mode(3.0, 0.0))
    assert gain[0, 0] == pytest.approx(0.75)
    assert precision[0, 0] == pytest.approx(4.0 / 3.0)
    gain2, precision2 = ag_matrices(ChannelModel.diagonal([1.0, 3.0], [0.0, 1.0]))
    assert np.allclose(np.diag(gain2).real, [0.5, 0.6])
    assert np.allclose(np.diag(precision2).real, [2.0, 5.0 / 6.0])
    with pytest.raises(SingularSignalError):
        ag_matrices(ChannelModel.single_mode(0.0, 1.0))


def test_gain_vanishes_with_signal():
    gain, _ = ag_matrices(ChannelModel.single_mode(1e-9, 0.5))
    assert abs(gain[0, 0]) < 1e-8


def test_chain_identity_on_random_models():
    # trace cancellation Sp(G^-1 (N+I)^-1 A^dag - A A^dag) G = 0
    rng = np.random.default_rng(5)
    for _ in range(25):
        r = int(rng.integers(1, 4))
        model = ChannelModel(random_psd(rng, r) + 0.1 * np.eye(r), random_psd(rng, r))
        gain, precision = ag_matrices(model)
        g_inv = np.linalg.inv(precision)
        resid = np.trace(
            (g_inv @ np.linalg.inv(model.effective_noise) @ gain.conj().T - gain @ gain.conj().T)
            @ precision
        )
        assert abs(resid) <= 1e-10


def test_analytic_mi_values():
    assert analytic_mi(ChannelModel.single_mode(0.0, 1.0)) == pytest.approx(0.0, abs=1e-15)
    assert analytic_mi(ChannelModel.single_mode(3.0, 0.0)) == pytest.approx(math.log(4.0), abs=1e-14)
    two_mode = analytic_mi(ChannelModel.diagonal([1.0, 3.0], [0.0, 1.0]))
    assert two_mode == pytest.approx(math.log(2.0) + math.log(2.5), abs=1e-14)


def test_analytic_mi_monotonicity():
    rng = np.random.default_rng(17)
    for _ in range(10):
        s = random_psd(rng, 2)
        n = random_psd(rng, 2)
        base = analytic_mi(ChannelModel(s, n))
        assert analytic_mi(ChannelModel(s + 0.1 * np.eye(2), n)) >= base - 1e-12
        assert analytic_mi(ChannelModel(s, n + 0.1 * np.eye(2))) <= base + 1e-12


def test_analytic_mi_unitary_invariance():
    rng = np.random.default_rng(23)
    s = random_psd(rng, 3)
    n = random_psd(rng, 3)
    base = analytic_mi(ChannelModel(s, n))
    for _ in range(5):
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
        rotated = analytic_mi(ChannelModel(q @ s @ q.conj().T, q @ n @ q.conj().T))
        assert rotated == pytest.approx(base, abs=1e-10)


def test_sampling_determinism_and_moments():
    dist = ComplexGaussian(np.array([1.0 + 1.0j, 0.0]), np.eye(2))
    a = sample(dist, 1000, seed=42)
    b = sample(dist, 1000, seed=42)
    assert np.array_equal(a, b)
    big = sample(dist, 100_000, seed=7)
    emp_mean = big.mean(axis=0)
    assert abs(emp_mean[0] - (1.0 + 1.0j)) <= 0.01
    centered = big - dist.mean
    emp_cov = centered.conj().T @ centered / big.shape[0]
    assert np.max(np.abs(emp_cov - np.eye(2))) <= 0.03


def test_sampling_rejects_bad_input():
    with pytest.raises(ModelError):
        ComplexGaussian(np.zeros(2), np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        sample(ComplexGaussian(np.zeros(1), np.eye(1)), 0, seed=1)


def test_integral_closed_forms():
    q = np.array([[1.3]])
    assert complex_gaussian_integral("normalization", q, 0.4j, 0.4j) == 1.0
    assert complex_gaussian_integral("quadratic", np.eye(1), 0.0, 0.0, h=np.eye(1)) == pytest.approx(1.0)
    val = complex_gaussian_integral("first_moment", 2.0 * np.eye(1), 0.0, 1.0 + 1.0j)
    assert val == pytest.approx(1.0 + 1.0j)
    val = complex_gaussian_integral("conjugate_moment", np.eye(2), [1.0j, 0.5], [0.0, 0.0])
    assert np.allclose(val, [-1.0j, 0.5])
    with pytest.raises(ValueError):
        complex_gaussian_integral("quadratic", np.eye(1), 0.0, 0.0)
    with pytest.raises(ValueError):
        complex_gaussian_integral("normalization", -np.eye(1), 0.0, 0.0)


def test_integral_quadrature_matches_closed_forms():
    # grid quadrature agrees with every closed form to 1e-4 (one mode)
    q = np.array([[0.8]])
    h = np.array([[1.7]])
    alpha, beta = 0.3 - 0.2j, 1.0 + 1.0j
    cases = [
        ("normalization", 1.0),
        ("first_moment", beta),
        ("conjugate_moment", np.conj(alpha)),
        ("quadratic", complex_gaussian_integral("quadratic", q, alpha, beta, h=h)),
    ]
    for kind, expected in cases:
        num = complex_gaussian_integral_quadrature(kind, q, alpha, beta, h=h, spacing=0.08)
        assert abs(num - expected) <= 1e-4, (kind, num, expected)


def test_integral_mc_matches_closed_forms_two_modes():
    rng = np.random.default_rng(2)
    q = random_psd(rng, 2) + np.eye(2)
    h = random_psd(rng, 2)
    alpha = np.array([0.5, -0.3j])
    beta = np.array([0.2 + 0.1j, 0.4])
    tr = complex_gaussian_integral("quadratic", q, alpha, beta, h=h)
    est = complex_gaussian_integral_mc("quadratic", q, alpha, beta, h=h, count=400_000, seed=9)
    assert abs(est - tr) <= 0.01 * max(1.0, abs(tr))
    norm = complex_gaussian_integral_mc("normalization", q, alpha, beta, count=400_000, seed=10)
    assert abs(norm - 1.0) <= 0.01
    mom = complex_gaussian_integral_mc("first_moment", q, alpha, beta, count=400_000, seed=11)
    assert np.max(np.abs(mom - beta)) <= 0.01
    cmom = complex_gaussian_integral_mc("conjugate_moment", q, alpha, beta, count=400_000, seed=12)
    assert np.max(np.abs(cmom - alpha.conj())) <= 0.01


def test_integral_quadrature_budget():
    with pytest.raises(ValueError, match="nodes"):
        complex_gaussian_integral_quadrature(
            "normalization", np.eye(2), np.zeros(2), np.zeros(2), spacing=0.05
        )
