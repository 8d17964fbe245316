"""Path norm, the norm-based complexity bound, margin bounds, and
regularized training."""

import math

import numpy as np
import pytest

from pacbound.data import synthetic_blobs
from pacbound.nn import MlpArchitecture, init_weights, raw_outputs
from pacbound.pathnorm import (
    default_l_grid,
    gamma_1_inf,
    margin_bound,
    path_norm,
    path_norm_grad,
    rademacher_upper,
    ramp_error,
    train_pathnorm_regularized,
)
from pacbound.sgd import SgdConfig

from oracles import brute_force_path_norm, central_difference_grad, relative_error


def two_layer_example():
    # first-layer columns (1,-2) and (0,3); output weights (3,-1):
    # phi1 = 3*(1+2) + 1*(0+3) = 12
    arch = MlpArchitecture((2, 2, 1))
    w1 = np.array([[1.0, 0.0], [-2.0, 3.0]])
    w2 = np.array([[3.0], [-1.0]])
    w = arch.pack([(w1, np.zeros(2)), (w2, np.zeros(1))])
    return arch, w


class TestPathNorm:
    def test_hand_worked_example(self):
        arch, w = two_layer_example()
        assert path_norm(arch, w) == 12.0

    def test_zero_weights(self):
        arch = MlpArchitecture((3, 4, 1))
        assert path_norm(arch, np.zeros(arch.param_count)) == 0.0

    def test_matches_brute_force_enumeration(self, rng):
        for widths in [(2, 3, 1), (4, 6, 1), (3, 5, 4, 1), (2, 6, 6, 1)]:
            arch = MlpArchitecture(widths)
            w = rng.normal(size=arch.param_count)
            assert path_norm(arch, w) == pytest.approx(
                brute_force_path_norm(arch.unpack(w)), rel=1e-12
            )

    def test_layer_rescaling_invariance(self, rng):
        arch = MlpArchitecture((3, 4, 1))
        layers = arch.unpack(rng.normal(size=arch.param_count))
        base = path_norm(arch, arch.pack(layers))
        for c in (0.1, 1.0, 10.0):
            rescaled = arch.pack(
                [
                    (layers[0][0] * c, layers[0][1] * c),
                    (layers[1][0] / c, layers[1][1]),
                ]
            )
            assert path_norm(arch, rescaled) == pytest.approx(base, rel=1e-12)

    def test_biases_do_not_contribute(self, rng):
        arch = MlpArchitecture((2, 3, 1))
        layers = arch.unpack(rng.normal(size=arch.param_count))
        with_biases = arch.pack(layers)
        without = arch.pack([(w, np.zeros_like(b)) for w, b in layers])
        assert path_norm(arch, with_biases) == path_norm(arch, without)


class TestGamma:
    def test_hand_worked_example(self):
        arch, w = two_layer_example()
        # max column l1 of layer 1 = max(3, 3) = 3; output column l1 = 4
        assert gamma_1_inf(arch, w) == 12.0

    def test_dominates_path_norm(self, rng):
        for _ in range(25):
            arch = MlpArchitecture((3, 4, 1))
            w = rng.normal(size=arch.param_count)
            assert path_norm(arch, w) <= gamma_1_inf(arch, w) + 1e-12

    def test_balancing_rescale_attains_path_norm(self, rng):
        # per-hidden-unit rescaling c_j = 1 / |col_j(W1)|_1 equalizes the
        # layer norms, where gamma collapses onto phi1; random rescalings
        # never dip below it
        arch = MlpArchitecture((3, 5, 1))
        layers = arch.unpack(rng.normal(size=arch.param_count))
        phi = path_norm(arch, arch.pack(layers))

        def rescaled(unit_scales):
            return arch.pack(
                [
                    (layers[0][0] * unit_scales, layers[0][1] * unit_scales),
                    (layers[1][0] / unit_scales[:, None], layers[1][1]),
                ]
            )

        balanced = 1.0 / np.abs(layers[0][0]).sum(axis=0)
        assert gamma_1_inf(arch, rescaled(balanced)) == pytest.approx(phi, rel=1e-9)
        for _ in range(50):
            random_scales = np.exp(rng.uniform(-2, 2, 5))
            assert gamma_1_inf(arch, rescaled(random_scales)) >= phi - 1e-9
            assert path_norm(arch, rescaled(random_scales)) == pytest.approx(phi, rel=1e-9)

    def test_single_path_product(self):
        arch = MlpArchitecture((1, 1, 1))
        w = arch.pack([(np.array([[2.0]]), np.zeros(1)), (np.array([[-3.0]]), np.zeros(1))])
        assert path_norm(arch, w) == 6.0
        assert gamma_1_inf(arch, w) == 6.0


class TestRademacherUpper:
    def test_frozen_value(self):
        # 2^2 * 9 * sqrt(log(4)/100) * 1, mpmath
        assert rademacher_upper(9.0, 2, 2, 100, 1.0) == pytest.approx(
            4.238676081055709, rel=1e-12
        )

    def test_zero_norm(self):
        assert rademacher_upper(0.0, 3, 10, 50, 1.0) == 0.0

    def test_quadrupling_m_halves(self):
        a = rademacher_upper(2.0, 2, 5, 100, 1.0)
        b = rademacher_upper(2.0, 2, 5, 400, 1.0)
        assert b == pytest.approx(a / 2.0, rel=1e-12)


class TestRampError:
    def test_zero_scale_saturates(self, rng):
        arch = MlpArchitecture((2, 3, 1))
        w = rng.normal(size=arch.param_count)
        data = synthetic_blobs(32, seed=1)
        assert ramp_error(arch, w, data, 0.0) == 1.0

    def test_large_scale_correct_signs(self, rng):
        arch = MlpArchitecture((2, 3, 1))
        w = rng.normal(size=arch.param_count)
        data = synthetic_blobs(32, seed=1)
        outputs = raw_outputs(arch, w, data.features)
        aligned = synthetic_blobs(32, seed=1)
        labels = np.where(outputs >= 1e-9, 1.0, -1.0)
        from pacbound.data import LabeledDataset

        aligned = LabeledDataset(data.features, labels)
        assert ramp_error(arch, w, aligned, 1e9) == pytest.approx(0.0, abs=1e-6)

    def test_single_example_half_margin(self):
        arch = MlpArchitecture((1, 1, 1))
        w = arch.pack([(np.array([[1.0]]), np.zeros(1)), (np.array([[0.5]]), np.zeros(1))])
        from pacbound.data import LabeledDataset

        data = LabeledDataset(np.array([[1.0]]), np.array([1.0]))
        # y*h = 0.5, L = 1 -> ramp = 0.5
        assert ramp_error(arch, w, data, 1.0) == 0.5


class TestMarginBound:
    def test_grid_structure(self):
        grid = default_l_grid()
        assert len(grid) == 39
        assert np.all(np.diff(grid) > 0)

    def test_table_monotonicity(self, rng):
        arch = MlpArchitecture((2, 4, 1))
        w = rng.normal(size=arch.param_count)
        data = synthetic_blobs(64, seed=3)
        result = margin_bound(arch, w, data)
        ramps = [row[1] for row in result.table]
        complexities = [row[2] for row in result.table]
        scales = [row[0] for row in result.table]
        assert all(b <= a + 1e-12 for a, b in zip(ramps, ramps[1:]))
        for (l1, c1), (l2, c2) in zip(
            zip(scales[1:], complexities[1:]), zip(scales[2:], complexities[2:])
        ):
            assert c2 / c1 == pytest.approx(l2 / l1, rel=1e-9)

    def test_fresh_tiny_init_bound_capped_by_chance(self):
        # near-zero path norm: complexity ~0 and the network sits at chance,
        # so the best bound cannot exceed 1 + confidence term (the L=0 row),
        # and the bound carries no information about this chance-level net
        arch = MlpArchitecture((2, 6, 1))
        w = init_weights(arch, 0.0001, seed=1)
        data = synthetic_blobs(128, seed=5)
        from pacbound.nn import zero_one_error

        result = margin_bound(arch, w, data, delta=0.025)
        confidence = math.sqrt(math.log(2 / 0.025) / (2 * data.m))
        assert result.table[0] == (0.0, 1.0, 0.0, 1.0 + confidence)
        assert result.bound <= 1.0 + confidence + 1e-9
        error = zero_one_error(arch, w, data.features, data.labels)
        assert 0.3 <= error <= 0.7  # chance performance at this init

    def test_separated_trained_network_can_be_nonvacuous(self):
        # a wide-margin, small-path-norm solution on a large separable
        # sample: h(x) = 2 relu(x1+x2-1) - 2 relu(1-x1-x2) = 2 (x1+x2-1)
        arch = MlpArchitecture((2, 2, 1))
        w1 = np.array([[1.0, -1.0], [1.0, -1.0]])
        w2 = np.array([[2.0], [-2.0]])
        w = arch.pack([(w1, np.array([-1.0, 1.0])), (w2, np.zeros(1))])
        data = synthetic_blobs(120_000, seed=9, separable=True)
        result = margin_bound(arch, w, data)
        assert result.bound < 1.0
        assert not result.vacuous


class TestPathNormGrad:
    def test_matches_finite_differences_away_from_zeros(self, rng):
        for _ in range(20):
            arch = MlpArchitecture((2, 4, 3, 1)) if rng.random() < 0.5 else MlpArchitecture((3, 5, 1))
            w = rng.normal(size=arch.param_count)
            w[np.abs(w) < 1e-2] += 0.05  # keep clear of the |.| kink
            analytic = path_norm_grad(arch, w)
            numeric = central_difference_grad(lambda v: path_norm(arch, v), w, h=1e-6)
            assert relative_error(analytic, numeric) < 1e-4

    def test_zero_weight_subgradient_is_zero(self):
        arch = MlpArchitecture((2, 2, 1))
        w = np.zeros(arch.param_count)
        assert np.all(path_norm_grad(arch, w) == 0.0)

    def test_bias_entries_get_zero_gradient(self, rng):
        arch = MlpArchitecture((2, 3, 1))
        w = rng.normal(size=arch.param_count)
        grad = path_norm_grad(arch, w)
        for _, bias_grad in arch.unpack(grad):
            assert np.all(bias_grad == 0.0)


class TestRegularizedTraining:
    def test_huge_regularization_collapses_path_norm(self):
        data = synthetic_blobs(100, seed=2)
        arch = MlpArchitecture((2, 3, 1))
        w0 = init_weights(arch, 0.5, seed=1)
        cfg = SgdConfig(learning_rate=0.01, epochs=30, batch_size=20, shuffle_seed=1)
        w, history = train_pathnorm_regularized(arch, w0, data, cfg, reg=10.0)
        assert history[0].phi1 > 0.5
        assert history[-1].phi1 < 1e-3

    def test_zero_reg_history_and_quantiles(self):
        data = synthetic_blobs(200, seed=4)
        test = synthetic_blobs(100, seed=5)
        arch = MlpArchitecture((2, 4, 1))
        w0 = init_weights(arch, 0.0001, seed=2)
        cfg = SgdConfig(learning_rate=0.005, epochs=2, batch_size=20, shuffle_seed=2)
        w, history = train_pathnorm_regularized(
            arch, w0, data, cfg, reg=0.0, test_data=test, eval_every=5
        )
        assert history[0].iteration == 0
        assert history[-1].iteration == 2 * (200 // 20)
        for point in history:
            assert point.margin_quantiles == tuple(sorted(point.margin_quantiles))
            assert 0.0 <= point.train_error <= 1.0
            assert point.phi1 >= 0.0
            assert np.isfinite(point.margin_bound)

    def test_rejects_negative_reg(self):
        data = synthetic_blobs(20, seed=1)
        arch = MlpArchitecture((2, 2, 1))
        with pytest.raises(ValueError):
            train_pathnorm_regularized(
                arch, np.zeros(arch.param_count), data, SgdConfig(epochs=1), reg=-1.0
            )
