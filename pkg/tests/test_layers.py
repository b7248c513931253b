#!/usr/bin/env python3

from gcnnhtr import tensor as T
from gcnnhtr.tensor import Tensor, Parameter, ParameterRegistry, grad_check
from gcnnhtr.layers import (ConvSpec, GateSpec, NormState, conv2d, depthwise_separable_conv2d, maxpool2d,
                            normalize, gate_block_gate, lstm_step, dense, dropout, Conv2d, Dense, Gate, LSTM, BLSTM,
                            LSTMWeights, MaxPool2d)
from gcnnhtr.exc import LayerConfigError, NormStateCorrupted, ShapeMismatch

import os
import unittest

import numpy as np

# the full suite runs 50 seeds per layer
SEEDS = range(50) if os.environ.get("GCNNHTR_SLOW") else range(3)
TOLERANCE = 1e-4


def param(shape, seed, share_id="p", scale=1.0):
    return Parameter(scale * np.random.default_rng(seed).normal(size=shape), share_id)


def weighted_sum(y, seed):
    """Scalar loss with non-uniform output weights"""
    r = np.random.default_rng(seed + 1000).normal(size=y.shape)
    return T.sum(y * r)


def naive_conv(x, w, b):
    _, _, kh, kw = w.shape
    pad = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    out = np.zeros((x.shape[0], w.shape[0], x.shape[2], x.shape[3]))
    for i in range(x.shape[2]):
        for j in range(x.shape[3]):
            patch = pad[:, :, i:i + kh, j:j + kw]
            out[:, :, i, j] = np.einsum("bcij,ocij->bo", patch, w) + b
    return out


class TestConvolution(unittest.TestCase):

    def testParamCounts(self):
        standard = ConvSpec(32, 64)
        separable = ConvSpec(32, 64, separable=True)
        self.assertEqual(standard.param_count(), 18496)
        self.assertEqual(separable.param_count(), 2400)
        self.assertEqual(standard.param_count() - separable.param_count(), 16096)
        self.assertEqual(ConvSpec(640, 512, kernel=1).param_count(), 328192)

    def testInvalidSpec(self):
        self.assertRaises(LayerConfigError, ConvSpec, 0, 4)
        self.assertRaises(LayerConfigError, ConvSpec, 4, 4, padding="full")
        self.assertRaises(LayerConfigError, ConvSpec, 4, 4, kernel=0)

    def testCrossCorrelation(self):
        rng = np.random.default_rng(0)
        x, w, b = rng.normal(size=(2, 3, 5, 6)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        np.testing.assert_allclose(conv2d(x, w, b).data, naive_conv(x, w, b), atol=1e-12)

    def testSeparableEqualsFactorization(self):
        rng = np.random.default_rng(1)
        x, d, p = rng.normal(size=(1, 3, 4, 4)), rng.normal(size=(3, 3, 3)), rng.normal(size=(5, 3))
        full = np.einsum("oc,cij->ocij", p, d)
        np.testing.assert_allclose(depthwise_separable_conv2d(x, d, p).data,
                                   naive_conv(x, full, np.zeros(5)), atol=1e-12)

    def testSamePaddingStride(self):
        x = Tensor(np.ones((1, 1, 5, 5)))
        y = conv2d(x, np.ones((1, 1, 3, 3)), stride=2)
        self.assertEqual(y.shape, (1, 1, 3, 3))
        self.assertEqual(ConvSpec(1, 1, stride=2).output_extent(5, 5), (3, 3))
        self.assertRaises(LayerConfigError, conv2d, Tensor(np.ones((1, 1, 2, 2))), np.ones((1, 1, 3, 3)),
                          None, 1, "valid")

    def testChannelMismatch(self):
        self.assertRaises(LayerConfigError, conv2d, np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)))
        self.assertRaises(ShapeMismatch, conv2d, np.ones((2, 4, 4)), np.ones((1, 2, 3, 3)))

    def testConvGradient(self):
        for seed in SEEDS:
            x = param((2, 2, 5, 4), seed, "x")
            w = param((3, 2, 3, 3), seed + 1, "w")
            b = param((3,), seed + 2, "b")
            stride = (1, 1) if seed % 2 else (2, 2)
            err = grad_check(lambda: weighted_sum(conv2d(x, w, b, stride), seed), [x, w, b])
            self.assertLess(err, TOLERANCE, "seed {}".format(seed))

    def testSeparableGradient(self):
        for seed in SEEDS:
            x = param((2, 3, 4, 4), seed, "x")
            d = param((3, 3, 3), seed + 1, "d")
            p = param((2, 3), seed + 2, "p")
            b = param((2,), seed + 3, "b")
            err = grad_check(lambda: weighted_sum(depthwise_separable_conv2d(x, d, p, b), seed), [x, d, p, b])
            self.assertLess(err, TOLERANCE, "seed {}".format(seed))

    def testSharedConvLayers(self):
        registry = ParameterRegistry(seed=0)
        first = Conv2d("c7", ConvSpec(4, 4, share_id="c7"), registry)
        second = Conv2d("c7b", ConvSpec(4, 4, share_id="c7"), registry)
        self.assertIs(first.weight, second.weight)
        self.assertEqual(registry.count(), first.param_count())
        self.assertEqual(second.share_id(), "c7")


class TestPooling(unittest.TestCase):

    def testTrailingDropped(self):
        x = np.arange(25.0).reshape(1, 1, 5, 5)
        y = maxpool2d(x)
        self.assertEqual(y.shape, (1, 1, 2, 2))
        np.testing.assert_array_equal(y.data[0, 0], [[6.0, 8.0], [16.0, 18.0]])
        self.assertEqual(MaxPool2d("p").output_shape((1, 3, 5, 5)), (1, 3, 2, 2))

    def testTiesRouteToFirst(self):
        x = Parameter(np.ones((1, 1, 2, 2)), "x")
        with T.Tape() as tape:
            tape.backward(T.sum(maxpool2d(x)))
        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def testOverlappingRejected(self):
        self.assertRaises(LayerConfigError, maxpool2d, np.ones((1, 1, 4, 4)), (3, 3), (2, 2))

    def testPoolGradient(self):
        for seed in SEEDS:
            x = param((2, 2, 5, 4), seed, "x")
            self.assertLess(grad_check(lambda: weighted_sum(maxpool2d(x), seed), [x]), TOLERANCE)


class TestNormalization(unittest.TestCase):

    def state(self, channels, kind, seed):
        registry = ParameterRegistry(seed)
        state = NormState.create(registry, "n", channels, kind)
        state.gamma.data[...] = np.random.default_rng(seed).uniform(0.5, 1.5, channels)
        state.beta.data[...] = np.random.default_rng(seed + 1).normal(size=channels)
        return state

    def testBatchNormStatistics(self):
        state = self.state(3, "batch", 0)
        state.gamma.data[...] = 1.0
        state.beta.data[...] = 0.0
        x = np.random.default_rng(0).normal(3.0, 2.0, size=(4, 3, 5, 5))
        y = normalize(x, state).data
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
        np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))

    def testBatchNormEval(self):
        state = self.state(2, "batch", 1)
        state.mode = "eval"
        state.running_mean[...] = [1.0, -1.0]
        state.running_var[...] = [4.0, 1.0]
        x = np.ones((1, 2, 1, 1))
        expected = (x - np.array([1.0, -1.0])[None, :, None, None]) / np.sqrt(
            np.array([4.0, 1.0]) + state.epsilon)[None, :, None, None]
        expected = expected * state.gamma.data[None, :, None, None] + state.beta.data[None, :, None, None]
        np.testing.assert_allclose(normalize(x, state).data, expected)

    def testCorruptedState(self):
        state = self.state(2, "batch", 2)
        state.running_var[0] = -1.0
        self.assertRaises(NormStateCorrupted, normalize, np.ones((2, 2, 2, 2)), state)

    def testSingleValueBatch(self):
        state = self.state(2, "batch", 3)
        self.assertRaises(LayerConfigError, normalize, np.ones((1, 2, 1, 1)), state)

    def testTrainModeStandardizes(self):
        state = NormState.create(ParameterRegistry(), "n", 1, "batch")
        x = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
        np.testing.assert_allclose(normalize(x, state).data.ravel(), [-1.0, 1.0], atol=1e-5)

    def testNormGradients(self):
        for seed in SEEDS:
            for kind in ("batch", "layer"):
                state = self.state(3, kind, seed)
                x = param((3, 3, 2, 2), seed + 2, "x")
                err = grad_check(lambda: weighted_sum(normalize(x, state), seed), [x, state.gamma, state.beta])
                self.assertLess(err, TOLERANCE, "{} seed {}".format(kind, seed))


class TestGate(unittest.TestCase):

    def testOddChannels(self):
        with self.assertRaises(LayerConfigError) as ctx:
            GateSpec(5)
        self.assertIn("2-part", str(ctx.exception))

    def testBranches(self):
        self.assertEqual(GateSpec(4).branch_kinds(), ("batch", "layer"))
        self.assertEqual(GateSpec(4, "layer").branch_kinds(), ("layer", "layer"))
        self.assertRaises(LayerConfigError, GateSpec, 4, "group")

    def testOutputHalvesChannels(self):
        registry = ParameterRegistry()
        gate = Gate("g", GateSpec(8), registry)
        y = gate(np.random.default_rng(0).normal(size=(2, 8, 3, 3)), train=True)
        self.assertEqual(y.shape, (2, 4, 3, 3))
        self.assertEqual(gate.output_shape((2, 8, 3, 3)), (2, 4, 3, 3))
        self.assertEqual(gate.param_count(), 16)

    def identity_norms(self, half):
        registry = ParameterRegistry()
        norms = [NormState.create(registry, name, half, "batch") for name in ("g", "f")]
        for state in norms:
            state.mode = "eval"
        return norms

    def testScalarExample(self):
        gate_norm, feature_norm = self.identity_norms(1)
        x = np.array([0.5, 0.0]).reshape(1, 2, 1, 1)
        y = gate_block_gate(x, GateSpec(2), gate_norm, feature_norm)
        self.assertAlmostEqual(y.data.item(), 0.23106, places=5)
        x[0, 0] = 0.0
        self.assertEqual(gate_block_gate(x, GateSpec(2), gate_norm, feature_norm).data.item(), 0.0)

    def testBoundedWithIdentityNorms(self):
        gate_norm, feature_norm = self.identity_norms(4)
        for seed in SEEDS:
            x = np.random.default_rng(seed).normal(scale=10.0, size=(2, 8, 4, 4))
            y = gate_block_gate(x, GateSpec(8), gate_norm, feature_norm).data
            self.assertEqual(y.shape, (2, 4, 4, 4))
            self.assertLessEqual(np.abs(y).max(), 1.0)

    def testGateGradient(self):
        for seed in SEEDS:
            for swap in (False, True):
                registry = ParameterRegistry(seed)
                spec = GateSpec(4, swap_activations=swap)
                gate_norm = NormState.create(registry, "g", 2, "batch")
                feature_norm = NormState.create(registry, "f", 2, "layer")
                x = param((2, 4, 3, 3), seed, "x")
                params = [x, gate_norm.gamma, feature_norm.beta]
                err = grad_check(lambda: weighted_sum(gate_block_gate(x, spec, gate_norm, feature_norm), seed),
                                 params)
                self.assertLess(err, TOLERANCE, "seed {}".format(seed))


class TestRecurrent(unittest.TestCase):

    def weights(self, in_units, units, bias):
        """Zero kernel, per-gate biases in (i, f, g, o) order"""
        return LSTMWeights(Parameter(np.zeros((in_units + units, 4 * units)), "k"),
                           Parameter(np.repeat(np.asarray(bias, dtype=float), units), "b"))

    def testZeroWeights(self):
        h, c = lstm_step(np.ones((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)), self.weights(3, 4, [0, 0, 0, 0]))
        np.testing.assert_array_equal(h.data, 0.0)
        np.testing.assert_array_equal(c.data, 0.0)

    def testSaturation(self):
        zeros = np.zeros((1, 2))
        h, c = lstm_step(np.zeros((1, 3)), zeros, zeros, self.weights(3, 2, [20, 20, 20, 20]))
        np.testing.assert_allclose(c.data, 1.0, atol=1e-8)
        np.testing.assert_allclose(h.data, np.tanh(1.0), atol=1e-8)

    def testForgetGateKeepsCell(self):
        c = np.random.default_rng(0).uniform(-1.0, 1.0, size=(3, 5))
        _, c_next = lstm_step(np.zeros((3, 2)), np.zeros((3, 5)), c, self.weights(2, 5, [-20, 20, 0, 0]))
        np.testing.assert_allclose(c_next.data, c, rtol=0.0, atol=1e-8)

    def testLSTMGradient(self):
        for seed in SEEDS:
            registry = ParameterRegistry(seed)
            lstm = LSTM("l", 2, 3, registry)
            x = param((4, 2, 2), seed, "x")
            params = [x, lstm.weights.kernel, lstm.weights.bias]
            self.assertLess(grad_check(lambda: weighted_sum(lstm(x), seed), params), TOLERANCE)

    def testBLSTMShapeAndCount(self):
        registry = ParameterRegistry()
        layer = BLSTM("b", 256, 256, registry)
        self.assertEqual(layer.param_count(), 1050624)
        small = BLSTM("s", 3, 2, registry)
        y = small(np.ones((5, 1, 3)))
        self.assertEqual(y.shape, (5, 1, 4))
        self.assertEqual(small.output_shape((5, 1, 3)), (5, 1, 4))

    def testBackwardDirectionSeesFuture(self):
        registry = ParameterRegistry(4)
        layer = BLSTM("b", 1, 2, registry)
        a = np.zeros((4, 1, 1))
        b = a.copy()
        b[3] = 5.0
        ya, yb = layer(a).data, layer(b).data
        # the forward half at t=0 cannot see t=3, the backward half can
        np.testing.assert_array_equal(ya[0, 0, :2], yb[0, 0, :2])
        self.assertFalse(np.allclose(ya[0, 0, 2:], yb[0, 0, 2:]))

    def testBackwardHalfIsReversedForward(self):
        layer = BLSTM("b", 2, 3, ParameterRegistry(5))
        s = np.random.default_rng(5).normal(size=(4, 2, 2))
        y = layer(s).data
        reversed_pass = layer.backward(s[::-1].copy()).data
        np.testing.assert_array_equal(y[:, :, 3:], reversed_pass[::-1])
        np.testing.assert_array_equal(y[:, :, :3], layer.forward(s).data)

    def testEmptySequence(self):
        registry = ParameterRegistry()
        self.assertRaises(ShapeMismatch, LSTM("l", 2, 2, registry), np.ones((0, 1, 2)))


class TestDense(unittest.TestCase):

    def testCount(self):
        self.assertEqual(Dense("d", 10, 5, ParameterRegistry()).param_count(), 55)

    def testDenseGradient(self):
        for seed in SEEDS:
            x, w, b = param((3, 4), seed, "x"), param((4, 2), seed + 1, "w"), param((2,), seed + 2, "b")
            self.assertLess(grad_check(lambda: weighted_sum(dense(x, w, b), seed), [x, w, b]), TOLERANCE)

    def testSequenceInput(self):
        layer = Dense("d", 3, 2, ParameterRegistry())
        self.assertEqual(layer(np.ones((5, 1, 3))).shape, (5, 1, 2))

    def testDropout(self):
        rng = np.random.default_rng(0)
        x = Tensor(np.ones((100, 100)))
        self.assertIs(dropout(x, 0.5, False, rng), x)
        y = dropout(x, 0.5, True, rng).data
        self.assertTrue(set(np.unique(y)) <= {0.0, 2.0})
        self.assertAlmostEqual(y.mean(), 1.0, delta=0.05)
        self.assertRaises(LayerConfigError, dropout, x, 1.0, True, rng)


if __name__ == "__main__":
    unittest.main()
