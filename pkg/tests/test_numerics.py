import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from lgsum.numerics import (
    AdamState,
    DegenerateAttentionError,
    GradientOverflowError,
    LrSchedule,
    Tape,
    adam_step,
    cross_entropy,
    ffn,
    ffn_forward,
    finite_diff_check,
    layer_norm,
    lr_at_step,
    softmax_rows,
)

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


class TestSoftmaxRows:
    def test_symmetric_row(self):
        assert_array_equal(softmax_rows([[0.0, 0.0]]), [[0.5, 0.5]])

    def test_two_values(self):
        e = math.e
        assert_allclose(softmax_rows([[1.0, 0.0]]), [[e / (e + 1), 1 / (e + 1)]], atol=1e-12)
        assert_allclose(softmax_rows([[1.0, 0.0]]), [[0.73106, 0.26894]], atol=1e-4)

    def test_masked_entries_are_exact_zero(self):
        out = softmax_rows([[5.0, 5.0, 5.0]], mask=[[True, True, False]])
        assert_array_equal(out, [[0.5, 0.5, 0.0]])

    def test_fully_masked_row_raises(self):
        with pytest.raises(DegenerateAttentionError, match="degenerate attention row"):
            softmax_rows([[1.0, 2.0], [0.0, 1.0]], mask=[[True, True], [False, False]])

    def test_large_values_are_stable(self):
        out = softmax_rows([[1000.0, 999.0, -1000.0]])
        assert np.all(np.isfinite(out))
        assert_allclose(out.sum(), 1.0, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=finite))
    def test_rows_sum_to_one(self, m):
        assert_allclose(softmax_rows(m).sum(axis=-1), 1.0, atol=1e-9)


class TestLayerNorm:
    def test_constant_input(self):
        assert_array_equal(layer_norm([4.0, 4.0, 4.0], np.ones(3), np.zeros(3)), [0, 0, 0])

    def test_already_standardized(self):
        assert_allclose(layer_norm([1.0, -1.0], np.ones(2), np.zeros(2), eps=1e-12),
                        [1.0, -1.0], atol=1e-6)

    def test_gain_and_bias(self):
        assert_allclose(layer_norm([1.0, -1.0], np.full(2, 2.0), np.full(2, 3.0), eps=1e-12),
                        [5.0, 1.0], atol=1e-6)

    def test_default_eps_is_small_perturbation(self):
        # sqrt(1 + 1e-5) shrinks the output by about 5e-6
        assert_allclose(layer_norm([1.0, -1.0], np.ones(2), np.zeros(2)), [1, -1], atol=1e-5)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(2, 12), elements=finite), finite)
    def test_moments_and_shift_invariance(self, x, c):
        if np.ptp(x) < 1e-3:
            return
        g, b = np.ones(x.size), np.zeros(x.size)
        out = layer_norm(x, g, b, eps=1e-12)
        assert abs(out.mean()) < 1e-9
        assert abs(out.var() - 1.0) < 1e-6
        assert np.max(np.abs(layer_norm(x, g, b) - layer_norm(x + c, g, b))) < 1e-9


class TestFfnForward:
    def test_zero_weights(self):
        z = np.zeros((3, 3))
        assert_array_equal(ffn_forward(np.ones(3), z, np.zeros(3), z, np.zeros(3)), np.zeros(3))

    def test_relu_clips(self):
        args = ([[1.0]], [-2.0], [[3.0]], [0.0])
        assert_array_equal(ffn_forward([1.0], *args), [0.0])
        assert_array_equal(ffn_forward([5.0], *args), [9.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ffn_forward(np.ones(2), np.ones((3, 3)), np.zeros(3), np.ones((3, 3)), np.zeros(3))

    def test_matches_tape_form(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=4)
        w1, b1, w2, b2 = rng.normal(size=(6, 4)), rng.normal(size=6), rng.normal(size=(4, 6)), rng.normal(size=4)
        t = Tape(record=False)
        out = ffn(t, t.const(x[None]), t.const(w1.T), t.const(b1), t.const(w2.T), t.const(b2))
        assert_allclose(out.value[0], ffn_forward(x, w1, b1, w2, b2), atol=1e-12)


class TestCrossEntropy:
    def test_uniform(self):
        assert_allclose(cross_entropy(np.zeros((3, 4)), [0, 1, 2]), math.log(4), atol=1e-12)

    def test_saturated(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 1000.0
        assert cross_entropy(logits, [2]) < 1e-12

    def test_two_class(self):
        assert_allclose(cross_entropy([[1.0, 0.0]], [0]), -math.log(math.e / (math.e + 1)), atol=1e-12)
        assert_allclose(cross_entropy([[1.0, 0.0]], [0]), 0.3133, atol=1e-4)

    def test_padding_ignored(self):
        logits = np.array([[1.0, 0.0], [5.0, -3.0]])
        assert cross_entropy(logits, [0, 1], pad_index=1) == cross_entropy(logits[:1], [0])

    def test_all_padding_raises(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros((2, 3)), [0, 0], pad_index=0)


class TestAdam:
    def test_zero_grads_identity(self):
        p = {"w": np.array([1.0, -2.0])}
        st_ = AdamState()
        adam_step(p, {"w": np.zeros(2)}, st_, 0.1)
        assert_array_equal(p["w"], [1.0, -2.0])
        assert_array_equal(st_.m["w"], 0.0)
        assert_array_equal(st_.v["w"], 0.0)
        assert st_.step == 1

    def test_zero_grads_identity_after_history(self):
        p = {"w": np.array([1.0, -2.0])}
        st_ = AdamState()
        adam_step(p, {"w": np.array([0.3, -0.1])}, st_, 0.1)
        before = p["w"].copy()
        adam_step(p, {"w": np.zeros(2)}, st_, 0.1)
        assert_array_equal(p["w"], before)

    def test_first_step(self):
        p = {"w": np.array([5.0])}
        adam_step(p, {"w": np.array([1.0])}, AdamState(), 0.1)
        assert_allclose(p["w"], [4.9], atol=1e-6)

    def test_identical_params_identical_updates(self):
        p = {"a": np.array([1.0, 2.0]), "b": np.array([1.0, 2.0])}
        g = np.array([0.5, -0.25])
        st_ = AdamState()
        for _ in range(3):
            adam_step(p, {"a": g, "b": g.copy()}, st_, 0.01)
        assert_array_equal(p["a"], p["b"])

    def test_betas(self):
        st_ = AdamState()
        assert (st_.beta1, st_.beta2) == (0.9, 0.998)

    def test_non_finite_gradient(self):
        with pytest.raises(GradientOverflowError, match="gradient overflow"):
            adam_step({"w": np.zeros(2)}, {"w": np.array([np.inf, 0.0])}, AdamState(), 0.1)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.1)


class TestLrSchedule:
    def test_endpoints(self):
        s = LrSchedule(1e-3, 8000)
        assert lr_at_step(s, 0) == 0.0
        assert lr_at_step(s, 8000) == 1e-3
        assert lr_at_step(s, 20000) == 1e-3

    def test_milestone(self):
        s = LrSchedule(1e-3, 10, [(100, 0.5)])
        assert_allclose(lr_at_step(s, 150), 5e-4, rtol=1e-12)
        assert lr_at_step(s, 99) == 1e-3

    @given(st.integers(1, 50), st.lists(st.tuples(st.integers(1, 200), st.floats(0.1, 1.0)), max_size=3))
    def test_monotone_during_warmup(self, warmup, milestones):
        s = LrSchedule(1e-3, warmup, sorted(milestones))
        lrs = [lr_at_step(s, k) for k in range(0, 300)]
        assert all(v >= 0 for v in lrs)
        ramp = [lr_at_step(LrSchedule(1e-3, warmup), k) for k in range(warmup + 1)]
        assert all(a <= b for a, b in zip(ramp, ramp[1:]))
        assert lrs == [lr_at_step(s, k) for k in range(0, 300)]


def total(t, x):
    """Scalar sum of every entry."""
    return t.reshape(t.sum_last(t.reshape(x, (1, -1))), ())


def _fd(f, params, **kw):
    return finite_diff_check(f, {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}, **kw)


class TestFiniteDiff:
    def test_square(self):
        assert _fd(lambda t, w: t.square(w["x"]), {"x": np.array(3.0)}) < 1e-6

    def test_constant(self):
        assert _fd(lambda t, w: t.const(np.array(2.0)), {"x": np.array([1.0, 2.0])}) == 0.0

    def test_affine_cross_entropy(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 3))

        def f(t, w):
            logits = t.add(t.matmul(t.const(x), w["W"]), w["b"])
            return t.cross_entropy_sum(logits, np.array([0, 1, 3, 2, 1]), -1)[0]
        assert _fd(f, {"W": rng.normal(size=(3, 4)), "b": rng.normal(size=4)}) < 1e-4


class TestPrimitiveGradients:
    """Central differences against the tape for every differentiable primitive."""

    rng = np.random.default_rng(42)
    A = rng.normal(size=(2, 3, 4))
    B = rng.normal(size=(2, 4, 3))
    C = rng.normal(size=(2, 3, 4))
    G = rng.uniform(0.5, 1.5, size=(2, 3, 4))
    R = rng.normal(size=(2, 3, 4))

    def check(self, build, **params):
        def f(t, w):
            return total(t, t.mul(build(t, w), t.const(self.R)))
        assert _fd(f, params) < 1e-4

    def test_add_sub_mul_div(self):
        self.check(lambda t, w: t.add(w["a"], w["c"]), a=self.A, c=self.C)
        self.check(lambda t, w: t.sub(w["a"], w["c"]), a=self.A, c=self.C)
        self.check(lambda t, w: t.mul(w["a"], w["c"]), a=self.A, c=self.C)
        self.check(lambda t, w: t.div(w["a"], w["g"]), a=self.A, g=self.G)

    def test_broadcast_add(self):
        self.check(lambda t, w: t.add(w["a"], w["b"]), a=self.A, b=self.C[0, 0])

    def test_elementwise(self):
        self.check(lambda t, w: t.scale(w["a"], 1.7), a=self.A)
        self.check(lambda t, w: t.affine(w["a"], -0.5, 2.0), a=self.A)
        self.check(lambda t, w: t.square(w["a"]), a=self.A)
        self.check(lambda t, w: t.relu(w["a"]), a=self.A)

    def test_structural(self):
        def build(t, w):
            flipped = t.transpose(t.mul(w["a"], w["c"]), (0, 2, 1))
            return t.reshape(t.transpose(t.reshape(flipped, (2, 4, 3)), (0, 2, 1)), (2, 3, 4))
        self.check(build, a=self.A, c=self.C)

    def test_matmul(self):
        def f(t, w):
            return total(t, t.square(t.matmul(w["a"], w["b"])))
        assert _fd(f, {"a": self.A, "b": self.B}) < 1e-4

    def test_take_rows(self):
        idx = np.array([[0, 2, 2], [1, 0, 3]])
        self.check(lambda t, w: t.take_rows(w["e"], idx), e=self.rng.normal(size=(4, 4)))

    def test_softmax(self):
        mask = np.ones((2, 3, 4), dtype=bool)
        mask[0, :, 3] = False
        self.check(lambda t, w: t.softmax(w["a"], mask), a=self.A)

    def test_normalize_last(self):
        self.check(lambda t, w: t.normalize_last(w["g"]), g=self.G)

    def test_sum_last(self):
        def f(t, w):
            return total(t, t.square(t.sum_last(w["a"])))
        assert _fd(f, {"a": self.A}) < 1e-4

    def test_layer_norm(self):
        self.check(lambda t, w: t.layer_norm(w["a"], w["g"], w["b"]),
                   a=self.A, g=self.rng.normal(size=4), b=self.rng.normal(size=4))

    def test_dropout_fixed_mask(self):
        def build(t, w):
            return t.dropout(w["a"], 0.3, np.random.default_rng(5))
        self.check(build, a=self.A)

    def test_cross_entropy_with_smoothing(self):
        targets = np.array([[0, 3, 1], [2, 0, 0]])

        def f(t, w):
            return t.cross_entropy_sum(w["a"], targets, 0, 0.1)[0]
        assert _fd(f, {"a": self.A}) < 1e-4


class TestTape:
    def test_untouched_params_get_zero_grads(self):
        t = Tape()
        w = t.params({"used": np.ones(2), "unused": np.ones(3)})
        g = t.backward(total(t, t.square(w["used"])))
        assert_array_equal(g["used"], [2.0, 2.0])
        assert_array_equal(g["unused"], np.zeros(3))

    def test_replay_matches_no_record(self):
        x = np.random.default_rng(0).normal(size=(3, 5))
        a, b = Tape(), Tape(record=False)
        assert_array_equal(a.softmax(a.const(x)).value, b.softmax(b.const(x)).value)

    def test_take_rows_out_of_range(self):
        t = Tape()
        with pytest.raises(IndexError):
            t.take_rows(t.const(np.zeros((3, 2))), np.array([3]))

    def test_dropout_inverted_scaling(self):
        t = Tape()
        out = t.dropout(t.const(np.ones(10000)), 0.25, np.random.default_rng(0)).value
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
        assert abs(out.mean() - 1.0) < 0.05

    def test_dropout_disabled_is_exact(self):
        t = Tape()
        x = t.const(np.arange(4.0))
        assert t.dropout(x, 0.5, None) is x or np.array_equal(t.dropout(x, 0.5, None).value, x.value)
