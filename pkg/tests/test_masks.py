"""Soft-mask relaxation math: values, limits, gradients, superposition."""

import numpy as np
import pytest
from scipy.special import expit

from ksm.engine import Tensor, backward, lift, use_dtype
from ksm.masks import (
    SIGMA_EPS,
    MaskHyperparams,
    MaskSupportError,
    compose_soft_mask,
    harden,
    keep_probability,
    mask_chain_gradient_check,
    minmax_normalize,
    relax_sigmoid,
    relaxation_parts,
    scaling_tensor,
)


class TestRelaxSigmoid:
    def test_pinned_value(self, f64):
        # logistic(1 * (0.5 - 0)) = 0.62245933...
        hyper = MaskHyperparams(k=1.0, tau=0.0, temperature=1.0)
        out = relax_sigmoid(lift(np.array([0.5])), hyper).data
        assert out[0] == pytest.approx(0.6224593312018546, abs=1e-15)

    def test_threshold_maps_to_half(self, f64):
        hyper = MaskHyperparams(k=20.0, tau=0.3)
        out = relax_sigmoid(lift(np.array([0.3])), hyper).data
        assert out[0] == pytest.approx(0.5, abs=1e-15)

    def test_steepness_sharpens_transition(self, f64):
        m = np.array([0.1])
        lo = relax_sigmoid(lift(m), MaskHyperparams(k=1.0)).data[0]
        hi = relax_sigmoid(lift(m), MaskHyperparams(k=50.0)).data[0]
        assert 0.5 < lo < hi < 1.0

    def test_gradient_is_k_sigma_one_minus_sigma(self, f64):
        hyper = MaskHyperparams(k=20.0, tau=0.1, temperature=1.0)
        m = Tensor(np.array([0.13]), requires_grad=True)
        backward(relax_sigmoid(m, hyper).sum())
        sig = expit(20.0 * (0.13 - 0.1))
        assert m.grad[0] == pytest.approx(20.0 * sig * (1.0 - sig), rel=1e-12)


class TestKeepProbability:
    def test_pinned_value(self, f64):
        # sigma=0.7, T=0.5: q = 0.7^2 / (0.7^2 + 0.3^2) = 0.49/0.58
        q = keep_probability(lift(np.array([0.7])), 0.5).data
        assert q[0] == pytest.approx(0.8448275862068966, abs=1e-15)

    def test_temperature_one_is_identity_bit_exact(self, f64):
        rng = np.random.default_rng(0)
        s = rng.uniform(1e-6, 1.0 - 1e-6, 64)
        q = keep_probability(lift(s), 1.0).data
        clipped = np.clip(s, SIGMA_EPS, 1.0 - SIGMA_EPS)
        np.testing.assert_array_equal(q, clipped)

    def test_matches_two_way_softmax_form(self, f64):
        rng = np.random.default_rng(1)
        s = rng.uniform(0.05, 0.95, 100)
        for t in (0.25, 0.5, 2.0):
            got = keep_probability(lift(s), t).data
            want = s ** (1.0 / t) / (s ** (1.0 / t) + (1.0 - s) ** (1.0 / t))
            np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_cold_limit_approaches_threshold(self, f64):
        s = np.array([0.4999, 0.5001, 0.1, 0.9])
        q = keep_probability(lift(s), 1e-6).data
        np.testing.assert_allclose(q, [0.0, 1.0, 0.0, 1.0], atol=1e-12)

    def test_probability_branches_sum_to_one(self):
        rng = np.random.default_rng(2)
        vals = rng.normal(scale=0.2, size=500)
        parts = relaxation_parts(vals, MaskHyperparams())
        np.testing.assert_allclose(parts.pi0 + parts.pi1, 1.0, rtol=0, atol=1e-15)

    def test_monotone_in_sigma(self, f64):
        s = np.linspace(0.01, 0.99, 200)
        for t in (0.1, 0.5, 1.0, 3.0):
            q = keep_probability(lift(s), t).data
            # non-decreasing everywhere; strict until float64 saturates
            assert np.all(np.diff(q) >= 0)
            interior = (q > 1e-12) & (q < 1.0 - 1e-12)
            assert np.all(np.diff(q[interior]) > 0)

    def test_gradient_closed_form(self, f64):
        rng = np.random.default_rng(3)
        s0 = rng.uniform(0.1, 0.9, 32)
        for t in (0.3, 1.0, 2.0):
            s = Tensor(s0, requires_grad=True)
            q = keep_probability(s, t)
            backward(q.sum())
            want = q.data * (1.0 - q.data) / (t * s0 * (1.0 - s0))
            np.testing.assert_allclose(s.grad, want, rtol=1e-12)

    def test_saturated_sigma_is_clamped_not_infinite(self, f64):
        s = Tensor(np.array([0.0, 1.0]), requires_grad=True)
        q = keep_probability(s, 0.5)
        assert np.all(np.isfinite(q.data))
        backward(q.sum())
        assert np.all(np.isfinite(s.grad))

    def test_logistic_noise_shifts_log_odds(self, f64):
        s = np.array([0.5, 0.5])
        noise = np.array([2.0, -2.0])
        q = keep_probability(lift(s), 1.0, logistic_noise=noise).data
        np.testing.assert_allclose(q, expit(noise), rtol=1e-12)

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            keep_probability(lift(np.array([0.5])), 0.0)


class TestHarden:
    def test_threshold_with_tie_kept(self, f64):
        q = lift(np.array([0.49, 0.5, 0.51]))
        np.testing.assert_array_equal(harden(q).data, [0.0, 1.0, 1.0])

    def test_gradient_passes_straight_through(self, f64):
        q = Tensor(np.array([0.2, 0.8]), requires_grad=True)
        backward((harden(q) * lift(np.array([3.0, 5.0]))).sum())
        np.testing.assert_array_equal(q.grad, [3.0, 5.0])


class TestScalingTensor:
    def test_minmax_normalize_range_and_constants(self):
        v = np.array([2.0, 4.0, 3.0])
        np.testing.assert_allclose(minmax_normalize(v), [0.0, 1.0, 0.5])
        np.testing.assert_array_equal(minmax_normalize(np.full(4, 7.0)), np.full(4, 0.5))

    def test_scales_live_only_on_dropped_entries(self, f64):
        m = np.array([0.0, 1.0, 2.0, 3.0])
        bits = np.array([0.0, 1.0, 0.0, 1.0])
        scales = scaling_tensor(m, bits).data
        np.testing.assert_allclose(scales, [0.0, 0.0, 2.0 / 3.0, 0.0])

    def test_is_a_constant_on_the_tape(self, f64):
        m = Tensor(np.array([0.1, 0.9]), requires_grad=True)
        s = scaling_tensor(m, lift(np.array([0.0, 1.0])))
        assert s.node is None and not s.requires_grad

    def test_shape_mismatch_rejected(self):
        from ksm.engine import ShapeError

        with pytest.raises(ShapeError):
            scaling_tensor(np.ones(3), np.ones(4))


class TestComposeSoftMask:
    def test_superposition_example(self, f64):
        bits = lift(np.array([1.0, 0.0, 1.0]))
        scales = lift(np.array([0.0, 0.25, 0.0]))
        np.testing.assert_array_equal(compose_soft_mask(bits, scales).data, [1.0, 0.25, 1.0])

    def test_overlapping_support_rejected(self, f64):
        bits = lift(np.array([1.0, 0.0]))
        scales = lift(np.array([0.5, 0.5]))
        with pytest.raises(MaskSupportError):
            compose_soft_mask(bits, scales)

    def test_values_stay_in_unit_interval(self, f64):
        rng = np.random.default_rng(4)
        hyper = MaskHyperparams()
        m = rng.normal(scale=0.05, size=(8, 8))
        parts = relaxation_parts(m, hyper)
        bits = (parts.q >= 0.5).astype(np.float64)
        mask = compose_soft_mask(lift(bits), scaling_tensor(m, bits)).data
        assert mask.min() >= 0.0 and mask.max() <= 1.0
        # kept entries are exactly 1
        np.testing.assert_array_equal(mask[bits == 1.0], 1.0)


class TestFullChain:
    def test_end_to_end_gradient_check_grid(self):
        worst = 0.0
        for k in (1.0, 10.0, 20.0):
            for t in (0.5, 1.0, 2.0):
                for seed in (0, 1):
                    hyper = MaskHyperparams(k=k, temperature=t)
                    err = mask_chain_gradient_check(hyper, shape=(4, 3), seed=seed)
                    worst = max(worst, err)
        assert worst < 1e-4

    def test_hard_threshold_recovered_in_cold_limit(self):
        rng = np.random.default_rng(5)
        hyper = MaskHyperparams(k=20.0, tau=0.05, temperature=1e-3)
        m = rng.normal(scale=0.3, size=2000)
        m = m[np.abs(m - hyper.tau) > 10.0 / hyper.k]
        parts = relaxation_parts(m, hyper)
        bits = (parts.q >= 0.5).astype(np.int8)
        np.testing.assert_array_equal(bits, (m >= hyper.tau).astype(np.int8))

    def test_gumbel_flag_only_changes_training_path(self):
        hyper = MaskHyperparams(gumbel=True)
        assert hyper.gumbel
        # the deterministic parts are unaffected by the flag
        parts = relaxation_parts(np.array([0.02]), hyper)
        ref = relaxation_parts(np.array([0.02]), MaskHyperparams(gumbel=False))
        np.testing.assert_array_equal(parts.q, ref.q)


class TestHyperparams:
    def test_defaults(self):
        h = MaskHyperparams()
        assert (h.k, h.tau, h.temperature, h.init_value, h.gumbel) == (20.0, 0.0, 0.5, 0.01, False)

    @pytest.mark.parametrize("kwargs", [{"k": 0.0}, {"k": -1.0}, {"temperature": 0.0}])
    def test_nonpositive_knobs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            MaskHyperparams(**kwargs)
