import numpy as np
import pytest
from oracles import numerical_gradient, silog_two_pass, softmax_ce_reference

from mtdepth import autodiff as ad
from mtdepth.depthspace import DepthMap
from mtdepth.losses import LossBreakdown, TaskWeights, combine, silog, sparse_mse, sparse_softmax_ce


class TestSparseMse:
    def test_perfect_prediction_is_zero(self, rng):
        t = rng.uniform(0, 1, size=(2, 4, 4))
        assert sparse_mse(ad.tensor(t), t, np.ones_like(t, dtype=bool)).item() == 0.0

    def test_single_valid_pixel(self):
        pred = ad.tensor([[0.5, 100.0]])
        target = np.array([[0.0, 0.0]])
        valid = np.array([[True, False]])
        assert sparse_mse(pred, target, valid).item() == pytest.approx(0.25, abs=1e-15)

    def test_matches_two_pass_accumulation(self, rng):
        pred = rng.uniform(0, 1, size=(3, 5, 5))
        target = rng.uniform(0, 1, size=(3, 5, 5))
        valid = rng.random((3, 5, 5)) < 0.3
        valid[0, 0, 0] = True
        got = sparse_mse(ad.tensor(pred), target, valid).item()
        # Independent accumulation: explicit pixel loop, count first.
        count = 0
        acc = 0.0
        for idx in np.ndindex(pred.shape):
            if valid[idx]:
                count += 1
                acc += (pred[idx] - target[idx]) ** 2
        assert got == pytest.approx(acc / count, rel=1e-13)

    def test_invariant_to_invalid_values(self, rng):
        pred = rng.uniform(0, 1, size=(4, 4))
        target = rng.uniform(0, 1, size=(4, 4))
        valid = rng.random((4, 4)) < 0.5
        valid[1, 1] = True
        poisoned = target.copy()
        poisoned[~valid] = -1e9
        a = sparse_mse(ad.tensor(pred), target, valid).item()
        b = sparse_mse(ad.tensor(pred), poisoned, valid).item()
        assert a == b

    def test_empty_mask_raises(self):
        with pytest.raises(ad.EmptyReductionError):
            sparse_mse(ad.tensor([[1.0]]), np.array([[1.0]]), np.array([[False]]))

    def test_differentiable(self, rng):
        from conftest import gradcheck
        target = rng.uniform(0, 1, size=(2, 3, 3))
        valid = rng.random((2, 3, 3)) < 0.6
        valid[0, 1, 1] = True
        pred = rng.uniform(0, 1, size=(2, 3, 3))
        gradcheck(lambda p: sparse_mse(p, target, valid), [pred])


class TestSparseSoftmaxCe:
    def test_uniform_logits_two_classes(self):
        logits = ad.tensor(np.zeros((1, 2, 2, 2)))
        labels = np.zeros((1, 2, 2), dtype=np.int64)
        valid = np.ones((1, 2, 2), dtype=bool)
        got = sparse_softmax_ce(logits, labels, valid).item()
        assert got == pytest.approx(np.log(2.0), abs=1e-15)

    def test_saturated_margin(self, rng):
        labels = rng.integers(0, 4, size=(1, 3, 3))
        z = np.zeros((1, 4, 3, 3))
        for (n, i, j), lab in np.ndenumerate(labels):
            z[n, lab, i, j] = 30.0
        got = sparse_softmax_ce(ad.tensor(z), labels, np.ones((1, 3, 3), dtype=bool)).item()
        assert 0 < got < 1e-9

    def test_matches_high_precision_oracle(self, rng):
        logits = rng.normal(size=(2, 5, 3, 3)) * 3.0
        labels = rng.integers(0, 5, size=(2, 3, 3))
        valid = rng.random((2, 3, 3)) < 0.7
        valid[0, 0, 0] = True
        got = sparse_softmax_ce(ad.tensor(logits), labels, valid).item()
        ref = softmax_ce_reference(logits, labels, valid)
        assert got == pytest.approx(ref, abs=1e-12)

    def test_invariant_to_invalid_labels(self, rng):
        logits = rng.normal(size=(1, 3, 4, 4))
        labels = rng.integers(0, 3, size=(1, 4, 4))
        valid = rng.random((1, 4, 4)) < 0.5
        valid[0, 2, 2] = True
        poisoned = labels.copy()
        poisoned[~valid] = 0
        a = sparse_softmax_ce(ad.tensor(logits), labels, valid).item()
        b = sparse_softmax_ce(ad.tensor(logits), poisoned, valid).item()
        assert a == b

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ad.DomainError):
            sparse_softmax_ce(ad.tensor(np.zeros((1, 2, 1, 1))),
                              np.array([[[2]]]), np.array([[[True]]]))

    def test_empty_mask_rejected(self):
        with pytest.raises(ad.EmptyReductionError):
            sparse_softmax_ce(ad.tensor(np.zeros((1, 2, 1, 1))),
                              np.array([[[0]]]), np.array([[[False]]]))


class TestSilog:
    def as_maps(self, pred, gt, valid=None):
        valid = np.ones_like(pred, dtype=bool) if valid is None else valid
        return (DepthMap(np.where(valid, pred, 0), valid),
                DepthMap(np.where(valid, gt, 0), valid))

    def test_perfect_prediction(self, rng):
        d = rng.uniform(2, 100, size=(5, 5))
        p, g = self.as_maps(d, d)
        res = silog(p, g)
        assert res.raw == 0.0 and res.scaled == 0.0

    def test_global_scale_invariance(self, rng):
        gt = rng.uniform(2, 100, size=(6, 6))
        pred = gt * rng.uniform(0.5, 2.0, size=(6, 6))
        p, g = self.as_maps(pred, gt)
        base = silog(p, g).raw
        for k in (0.1, 1.0, 7.3):
            pk, gk = self.as_maps(pred * k, gt)
            assert abs(silog(pk, gk).raw - base) < 1e-10

    def test_hand_case(self):
        # gt = (e, e), pred = (1, e^2): log diffs (-1, +1), mean 0, var 1.
        p, g = self.as_maps(np.array([[1.0, np.e ** 2]]), np.array([[np.e, np.e]]))
        res = silog(p, g)
        assert res.raw == pytest.approx(1.0, abs=1e-12)
        assert res.scaled == pytest.approx(100.0, abs=1e-10)

    def test_matches_two_pass_reference(self, rng):
        for _ in range(50):
            gt = rng.uniform(2, 120, size=(8, 8))
            pred = gt * np.exp(rng.normal(scale=0.3, size=(8, 8)))
            valid = rng.random((8, 8)) < 0.4
            valid[0, 0] = True
            p, g = self.as_maps(pred, gt, valid)
            res = silog(p, g)
            assert res.raw == pytest.approx(silog_two_pass(pred, gt, valid), abs=1e-12)
            assert res.raw >= 0.0

    def test_joint_mask_intersection(self):
        pred = DepthMap(np.array([[1.0, 2.0]]), np.array([[True, True]]))
        gt = DepthMap(np.array([[3.0, 0.0]]), np.array([[True, False]]))
        assert silog(pred, gt).n == 1

    def test_empty_intersection_rejected(self):
        pred = DepthMap(np.array([[1.0]]), np.array([[True]]))
        gt = DepthMap(np.array([[0.0]]), np.array([[False]]))
        with pytest.raises(ad.EmptyReductionError):
            silog(pred, gt)


class TestTaskWeights:
    def test_learned_derivations(self):
        w = TaskWeights.learned(s_init=1.0)
        assert float(w.s_reg.data) == 1.0 and float(w.s_cls.data) == 1.0
        assert w.sigma_sq("reg") == pytest.approx(np.e)
        assert [n for n, _ in w.parameters()] == ["s_reg", "s_cls"]

    def test_fixed_modes_have_no_parameters(self):
        assert TaskWeights.equal().parameters() == []
        assert TaskWeights.manual_pair(5.0, 1.0).parameters() == []

    def test_nonpositive_manual_rejected(self):
        with pytest.raises(ValueError):
            TaskWeights.manual_pair(0.0, 1.0)


class TestCombine:
    def loss_pair(self, l_reg=2.0, l_cls=4.0):
        return ad.tensor(l_reg), ad.tensor(l_cls)

    def test_learned_at_s_zero(self):
        w = TaskWeights.learned(s_init=0.0)
        l_reg, l_cls = self.loss_pair()
        bd = combine(l_reg, l_cls, w)
        assert bd.l_mt == pytest.approx(5.0, abs=1e-15)
        assert bd.w_reg == pytest.approx(0.5) and bd.w_cls == pytest.approx(1.0)
        assert bd.r_reg == 0.0 and bd.r_cls == 0.0

    def test_equal_mode_is_plain_sum(self):
        bd = combine(*self.loss_pair(), TaskWeights.equal())
        assert bd.l_mt == 6.0
        assert (bd.w_reg, bd.w_cls, bd.r_reg, bd.r_cls) == (1.0, 1.0, 0.0, 0.0)

    def test_manual_mode(self):
        bd = combine(*self.loss_pair(), TaskWeights.manual_pair(5.0, 1.0))
        assert bd.l_mt == pytest.approx(5.0 * 2.0 + 4.0)

    def test_breakdown_identity(self, rng):
        w = TaskWeights.learned(s_init=float(rng.normal()))
        bd = combine(*self.loss_pair(rng.uniform(0.1, 3), rng.uniform(0.1, 3)), w)
        recomposed = bd.w_reg * bd.l_reg + bd.r_reg + bd.w_cls * bd.l_cls + bd.r_cls
        assert bd.l_mt == pytest.approx(recomposed, abs=1e-12)

    def test_single_task_passthrough(self):
        l_reg = ad.tensor(2.0)
        bd = combine(l_reg, None, TaskWeights.equal())
        assert bd.l_mt == 2.0 and bd.w_cls == 0.0 and bd.total is l_reg

    def test_weights_strictly_positive(self):
        for s in (-5.0, 0.0, 5.0):
            bd = combine(*self.loss_pair(), TaskWeights.learned(s_init=s))
            assert bd.w_reg > 0 and bd.w_cls > 0

    def test_gradient_wrt_s_matches_finite_differences(self):
        l_reg_v, l_cls_v = 2.0, 4.0
        w = TaskWeights.learned(s_init=1.0)
        bd = combine(ad.tensor(l_reg_v), ad.tensor(l_cls_v), w)
        ad.backward(bd.total)

        def f_reg(s):
            return 0.5 * np.exp(-s[0]) * l_reg_v + 0.5 * s[0]

        def f_cls(s):
            return np.exp(-s[0]) * l_cls_v + 0.5 * s[0]

        num_reg = numerical_gradient(f_reg, np.array([1.0]))[0]
        num_cls = numerical_gradient(f_cls, np.array([1.0]))[0]
        assert float(w.s_reg.grad) == pytest.approx(num_reg, rel=1e-6)
        assert float(w.s_cls.grad) == pytest.approx(num_cls, rel=1e-6)

    def test_gradient_flows_to_losses(self):
        w = TaskWeights.learned(s_init=0.0)
        l_reg = ad.tensor(2.0, requires_grad=True)
        l_cls = ad.tensor(4.0, requires_grad=True)
        ad.backward(combine(l_reg, l_cls, w).total)
        assert float(l_reg.grad) == pytest.approx(0.5)
        assert float(l_cls.grad) == pytest.approx(1.0)

    def test_objective_convex_in_s_with_finite_minimizer(self):
        # For fixed positive L, s -> w(s) L + 0.5 s is strictly convex and
        # grows at both ends: no trivial solution at w -> 0 (s -> +inf).
        s_grid = np.linspace(-6, 10, 401)
        for c, L in ((0.5, 2.0), (1.0, 4.0)):
            f = c * np.exp(-s_grid) * L + 0.5 * s_grid
            d2 = np.diff(f, 2)
            assert np.all(d2 > 0)
            assert np.argmin(f) not in (0, len(f) - 1)

    def test_gradient_descent_on_s_reaches_closed_form(self):
        # argmin_s of c*exp(-s)*L + 0.5*s is s* = ln(2cL).
        w = TaskWeights.learned(s_init=1.0)
        for _ in range(2000):
            bd = combine(ad.tensor(2.0), ad.tensor(4.0), w)
            ad.backward(bd.total)
            for _, s in w.parameters():
                s.data = s.data - 0.1 * s.grad
            ad.zero_grads([s for _, s in w.parameters()])
        assert float(w.s_reg.data) == pytest.approx(np.log(2 * 0.5 * 2.0), abs=1e-4)
        assert float(w.s_cls.data) == pytest.approx(np.log(2 * 1.0 * 4.0), abs=1e-4)
