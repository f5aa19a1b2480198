import math

import numpy as np
import pytest

from invattn.attention import build_block, make_residual_branch
from invattn.errors import InvariantViolation
from invattn.logdet import (
    LogDetConfig,
    brute_force_logdet,
    brute_force_logdet_from_branch,
    hutchinson_trace_power,
    jvp,
    logdet_series,
    logdet_series_from_branch,
)


def linear_branch(matrix):
    def branch(x):
        return (matrix @ x.ravel()).reshape(x.shape)

    return branch


def dense_jacobian(branch, x, eps=1e-5):
    dim = x.size
    jac = np.empty((dim, dim))
    for j in range(dim):
        direction = np.zeros(dim)
        direction[j] = 1.0
        jac[:, j] = jvp(branch, x, direction.reshape(x.shape), eps).ravel()
    return jac


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"series_terms": 0},
            {"hutchinson_samples": 0},
            {"jvp_epsilon": 0.0},
            {"probe_distribution": "uniform"},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            LogDetConfig(**kwargs)


class TestJvp:
    def test_exact_for_linear_maps(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((12, 12)) * 0.3
        x = rng.standard_normal((12, 1, 1)) * 0.3
        v = rng.standard_normal((12, 1, 1))
        got = jvp(linear_branch(m), x, v, eps=1e-2)
        want = (m @ v.ravel()).reshape(v.shape)
        assert np.abs(got - want).max() <= 1e-12

    def test_constant_map_gives_zero(self):
        got = jvp(lambda x: np.ones_like(x), np.zeros((2, 2, 2)), np.ones((2, 2, 2)))
        assert np.array_equal(got, np.zeros((2, 2, 2)))

    def test_agrees_with_dense_jacobian_on_attention_branch(self):
        rng = np.random.default_rng(1)
        block = build_block("embedded", "invertible", 3, seed=2)
        branch = make_residual_branch(block)
        x = rng.uniform(0, 1, (3, 4, 4))
        jac = dense_jacobian(branch, x)
        for _ in range(5):
            v = rng.standard_normal(x.shape)
            got = jvp(branch, x, v).ravel()
            assert np.abs(got - jac @ v.ravel()).max() <= 1e-6

    def test_shape_and_eps_validation(self):
        with pytest.raises(ValueError):
            jvp(lambda x: x, np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))
        with pytest.raises(ValueError):
            jvp(lambda x: x, np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), eps=0.0)

    def test_nonfinite_branch_output_raises_with_context(self):
        def bad(x):
            return np.full_like(x, np.nan)

        with pytest.raises(FloatingPointError):
            jvp(bad, np.zeros((1, 2, 2)), np.ones((1, 2, 2)))


class TestHutchinsonTracePower:
    def test_isotropic_jacobian_is_exact(self):
        # J = 0.5 I in d = 10: rademacher probes satisfy v'(J^2 v) = 2.5 exactly
        x = np.zeros((10, 1, 1))
        value = hutchinson_trace_power(lambda y: 0.5 * y, x, 2, LogDetConfig(hutchinson_samples=4, seed=1))
        assert abs(value - 2.5) <= 1e-12

    def test_unbiased_for_known_linear_trace(self):
        # quantified 4-standard-error statistical check, fixed seed
        rng = np.random.default_rng(2)
        d = 24
        m = rng.standard_normal((d, d)) * 0.1
        x = np.zeros((d, 1, 1))
        samples = 512
        value = hutchinson_trace_power(
            linear_branch(m), x, 1, LogDetConfig(hutchinson_samples=samples, seed=3)
        )
        sym = (m + m.T) / 2.0
        probe_var = 2.0 * (np.sum(sym**2) - np.sum(np.diag(sym) ** 2))
        standard_error = math.sqrt(probe_var / samples)
        assert abs(value - np.trace(m)) <= 4.0 * standard_error

    def test_cubed_trace_matches_dense_oracle(self):
        block = build_block("embedded", "invertible", 3, seed=28)
        x = np.random.default_rng(1028).uniform(0, 1, (3, 4, 4))  # d = 48
        branch = make_residual_branch(block)
        true_cube = float(np.trace(np.linalg.matrix_power(dense_jacobian(branch, x), 3)))
        est = hutchinson_trace_power(branch, x, 3, LogDetConfig(hutchinson_samples=2048, seed=6))
        assert abs(est - true_cube) / abs(true_cube) <= 0.05

    def test_power_validated(self):
        with pytest.raises(ValueError):
            hutchinson_trace_power(lambda y: y, np.zeros((2, 1, 1)), 0)


class TestLogDetSeries:
    def test_zero_branch_is_exact_zero(self):
        est = logdet_series_from_branch(lambda y: np.zeros_like(y), np.zeros((4, 2, 2)))
        assert est.value == 0.0
        assert not est.divergence_warning

    def test_scalar_contraction_closed_form(self):
        # ln det(1.5 I) over d = 10, series truncated at K = 30
        x = np.zeros((10, 1, 1))
        cfg = LogDetConfig(series_terms=30, hutchinson_samples=4, seed=4)
        est = logdet_series_from_branch(lambda y: 0.5 * y, x, cfg)
        assert abs(est.value - 10.0 * math.log(1.5)) <= 1e-4

    def test_value_is_sum_of_contributions(self):
        block = build_block("concat", "invertible", 3, seed=5)
        x = np.random.default_rng(3).uniform(0, 1, (3, 2, 2))
        est = logdet_series(block, x, LogDetConfig(series_terms=8, hutchinson_samples=8, seed=5))
        assert est.value == sum(est.per_term_contributions)
        assert len(est.per_term_contributions) == 8
        assert est.sample_variance >= 0.0

    def test_block_estimate_tracks_dense_oracle(self):
        block = build_block("gaussian", "invertible", 3, seed=509)  # |logdet| ~ 1.7
        x = np.random.default_rng(99).uniform(0, 1, (3, 4, 4))
        cfg = LogDetConfig(series_terms=20, hutchinson_samples=256, seed=7)
        est = logdet_series(block, x, cfg)
        oracle = brute_force_logdet(block, x)
        standard_error = math.sqrt(est.sample_variance / cfg.hutchinson_samples)
        assert abs(est.value - oracle) <= max(4.0 * standard_error, 0.05 * abs(oracle))

    def test_term_magnitudes_bounded_by_contraction_decay(self):
        from invattn.inversion import estimate_lipschitz

        block = build_block("embedded", "invertible", 3, seed=42)
        x = np.random.default_rng(3).uniform(0, 1, (3, 4, 4))
        est = logdet_series(block, x, LogDetConfig(series_terms=20, hutchinson_samples=64, seed=12))

        def sampler(rng):
            return rng.uniform(0.0, 1.0, (3, 4, 4))

        chat = estimate_lipschitz(
            make_residual_branch(block), sampler, pairs=1000, seed=5, local_probes=8
        ).sup_ratio
        dim = x.size
        for k, term in enumerate(est.per_term_contributions, start=1):
            assert abs(term) <= dim * chat**k / k + 1e-9

    def test_divergence_warning_on_expansive_branch(self):
        x = np.zeros((6, 1, 1))
        cfg = LogDetConfig(series_terms=12, hutchinson_samples=4, seed=6)
        est = logdet_series_from_branch(lambda y: 1.5 * y, x, cfg)
        assert est.divergence_warning

    def test_requires_invertible_variant(self):
        block = build_block("dot", "noninvertible", 3, seed=7)
        with pytest.raises(ValueError):
            logdet_series(block, np.zeros((3, 2, 2)))

    def test_deterministic(self):
        block = build_block("embedded", "invertible", 3, seed=8)
        x = np.random.default_rng(4).uniform(0, 1, (3, 2, 2))
        cfg = LogDetConfig(series_terms=6, hutchinson_samples=16, seed=9)
        a = logdet_series(block, x, cfg)
        b = logdet_series(block, x, cfg)
        assert a == b


class TestBruteForce:
    def test_identity_block(self):
        block = build_block("gaussian", "invertible", 3, seed=10)
        block.focus.weight = np.zeros_like(block.focus.weight)
        block.last.weight = np.zeros_like(block.last.weight)
        x = np.random.default_rng(5).uniform(0, 1, (3, 3, 3))
        assert abs(brute_force_logdet(block, x)) <= 1e-9

    def test_diagonal_branch_closed_form(self):
        diag = np.diag([0.1, 0.2, 0.3])
        got = brute_force_logdet_from_branch(linear_branch(diag), np.zeros((3, 1, 1)))
        assert abs(got - math.log(1.1 * 1.2 * 1.3)) <= 1e-9

    def test_sign_violation_detected(self):
        # an eigenvalue below -1 flips the determinant sign
        flip = np.diag([-2.0, 0.0, 0.0])
        with pytest.raises(InvariantViolation):
            brute_force_logdet_from_branch(linear_branch(flip), np.zeros((3, 1, 1)))

    def test_sign_positive_for_bounded_blocks(self):
        rng = np.random.default_rng(6)
        for seed, kind in enumerate(("gaussian", "embedded", "concat")):
            block = build_block(kind, "invertible", 3, seed=seed)
            brute_force_logdet(block, rng.uniform(0, 1, (3, 3, 3)))  # must not raise

    def test_dimension_budget(self):
        block = build_block("gaussian", "invertible", 3, seed=11)
        with pytest.raises(ValueError):
            brute_force_logdet(block, np.zeros((3, 16, 16)))  # d = 768

    def test_agrees_with_lapack_slogdet(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((20, 20)) * 0.1
        got = brute_force_logdet_from_branch(linear_branch(m), np.zeros((20, 1, 1)))
        want = float(np.linalg.slogdet(np.eye(20) + m)[1])
        assert abs(got - want) <= 1e-7
