"""Optimizer updates against textbook references."""

import numpy as np
import pytest

from _oracles import adam_reference
from ksm.engine import ContractError, Optimizer, Tensor, backward


def quadratic_grad(p):
    return 2.0 * p


class TestSGD:
    def test_single_step_is_lr_times_grad(self, f64):
        p = Tensor(np.array([3.0, -1.0]), requires_grad=True)
        opt = Optimizer([p], kind="sgd", lr=0.1)
        backward((p * p).sum())
        opt.step()
        np.testing.assert_allclose(p.data, [3.0 - 0.1 * 6.0, -1.0 + 0.1 * 2.0], rtol=1e-15)

    def test_converges_on_quadratic(self, f64):
        p = Tensor(np.array([5.0]), requires_grad=True)
        opt = Optimizer([p], kind="sgd", lr=0.1)
        for _ in range(100):
            backward((p * p).sum())
            opt.step()
        assert abs(p.data[0]) < 1e-8


class TestAdam:
    def test_matches_scalar_reference_on_quadratic(self, f64):
        p = Tensor(np.array([2.5]), requires_grad=True)
        opt = Optimizer([p], kind="adam", lr=0.05)
        for _ in range(200):
            backward((p * p).sum())
            opt.step()
        want, _ = adam_reference(quadratic_grad, 2.5, lr=0.05, steps=200)
        assert abs(p.data[0] - want) < 1e-10
        assert abs(p.data[0]) < 1e-2

    def test_first_step_size_is_lr(self, f64):
        # bias correction makes the very first Adam step ~lr regardless of scale
        for scale in (1e-3, 1.0, 1e3):
            p = Tensor(np.array([scale]), requires_grad=True)
            opt = Optimizer([p], kind="adam", lr=0.01)
            backward((p * 1.0).sum())
            opt.step()
            assert abs((scale - p.data[0]) - 0.01) < 1e-6

    def test_state_tracks_each_parameter_separately(self, f64):
        a = Tensor(np.array([1.0]), requires_grad=True)
        b = Tensor(np.array([10.0]), requires_grad=True)
        opt = Optimizer([a, b], kind="adam", lr=0.1)
        for _ in range(50):
            backward(((a * a) + (b * b) * 0.5).sum())
            opt.step()
        ra, _ = adam_reference(quadratic_grad, 1.0, lr=0.1, steps=50)
        rb, _ = adam_reference(lambda p: p, 10.0, lr=0.1, steps=50)
        assert abs(a.data[0] - ra) < 1e-10
        assert abs(b.data[0] - rb) < 1e-10


class TestSchedule:
    def test_milestone_decay_counts_passed_milestones(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Optimizer([p], kind="sgd", lr=1.0, milestones=(3, 7), decay=0.1)
        want = {0: 1.0, 2: 1.0, 3: 0.1, 6: 0.1, 7: 0.01, 11: 0.01}
        for epoch, lr in want.items():
            opt.set_epoch(epoch)
            assert opt.lr == pytest.approx(lr, rel=1e-12)

    def test_unsorted_milestones_are_normalized(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Optimizer([p], kind="sgd", milestones=(7, 3))
        assert opt.milestones == (3, 7)


class TestContracts:
    def test_step_without_backward_raises(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Optimizer([p], kind="sgd")
        with pytest.raises(ContractError):
            opt.step()

    def test_step_consumes_gradients(self, f64):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Optimizer([p], kind="sgd", lr=0.1)
        backward((p * p).sum())
        opt.step()
        with pytest.raises(ContractError):
            opt.step()

    def test_partial_gradients_rejected(self, f64):
        a = Tensor(np.array([1.0]), requires_grad=True)
        b = Tensor(np.array([1.0]), requires_grad=True)
        opt = Optimizer([a, b], kind="sgd")
        backward((a * a).sum())  # b untouched
        with pytest.raises(ContractError):
            opt.step()

    def test_frozen_parameter_rejected_at_construction(self):
        with pytest.raises(ContractError):
            Optimizer([Tensor(np.array([1.0]))], kind="sgd")

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Optimizer([Tensor(np.array([1.0]), requires_grad=True)], kind="rmsprop")
