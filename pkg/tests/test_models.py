#!/usr/bin/env python3

from gcnnhtr import tensor as T
from gcnnhtr.tensor import Tape, grad_check
from gcnnhtr.layers import Conv2d, ConvSpec, Dense
from gcnnhtr.tensor import ParameterRegistry
from gcnnhtr.models import (ModelConfig, apply_ablation, build_model, count_params, load_architectures,
                            REFERENCE_VOCAB_SIZE, VARIANTS, ABLATIONS)
from gcnnhtr.preprocess import FrameSequence
from gcnnhtr.exc import ModelConfigError, ShapeMismatch

import os
import csv
import tempfile
import unittest

import numpy as np

TINY = dict(vocab_size=5, channel_scale=0.125, blstm_units=8)


def total(variant="gcnn", ablation="none"):
    return count_params(build_model(ModelConfig(variant=variant, ablation=ablation))).total_params


def frames(steps, seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(steps, 1, 32, 32))


class TestConfig(unittest.TestCase):

    def testDefaults(self):
        cfg = ModelConfig()
        self.assertEqual(cfg.vocab_size, REFERENCE_VOCAB_SIZE)
        self.assertEqual(cfg.classes, REFERENCE_VOCAB_SIZE + 1)
        self.assertEqual(cfg.width("$max"), 512)
        self.assertEqual(cfg.width("$classes"), 101)
        self.assertEqual(ModelConfig(channel_scale=0.125).width(32), 4)
        self.assertEqual(ModelConfig(channel_scale=0.1).width(5), 2)

    def testInvalid(self):
        self.assertRaises(ModelConfigError, ModelConfig, variant="mdlstm")
        self.assertRaises(ModelConfigError, ModelConfig, variant="baseline", ablation="a1")
        self.assertRaises(ModelConfigError, ModelConfig, dropout=1.0)
        self.assertRaises(ModelConfigError, ModelConfig, norm_kind="group")
        self.assertRaises(ModelConfigError, apply_ablation, ModelConfig(variant="cnn_dense"), "a3")
        self.assertRaises(ModelConfigError, apply_ablation, ModelConfig(), "a6")
        self.assertRaises(ModelConfigError, ModelConfig().width, "$unknown")

    def testDictRoundTrip(self):
        cfg = apply_ablation(ModelConfig(vocab_size=7), "a4")
        self.assertEqual(ModelConfig.from_dict(cfg.to_dict()), cfg)
        self.assertRaises(ModelConfigError, ModelConfig.from_dict, {"layers": 3})

    def testAblationSwitches(self):
        base = ModelConfig()
        self.assertFalse(apply_ablation(base, "a1").separable)
        self.assertTrue(apply_ablation(base, "a2").early_pools)
        self.assertFalse(apply_ablation(base, "a3").share_weights)
        self.assertEqual(apply_ablation(base, "a4").gate_mid_convs, 2)
        self.assertEqual(apply_ablation(base, "a5").gate_blocks, 0)
        self.assertIs(apply_ablation(base, "none"), base)
        self.assertEqual(base.ablation, "none")

    def testArchitectureFile(self):
        arch = load_architectures()
        self.assertEqual(set(arch["variants"]), set(VARIANTS))
        self.assertEqual(arch["frame"], [1, 32, 32])


class TestParameterCounts(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.counts = {v: total(v) for v in VARIANTS}
        cls.counts.update({a: total("gcnn", a) for a in ABLATIONS if a != "none"})

    def testExactTotals(self):
        self.assertEqual(self.counts["baseline"], 4111429)
        self.assertEqual(self.counts["cnn_dense"], 1460037)
        self.assertEqual(self.counts["gcnn"], 6579109)

    def testAblationDeltas(self):
        gcnn = self.counts["gcnn"]
        self.assertEqual(self.counts["a1"] - gcnn, 2643264)
        self.assertEqual(self.counts["a2"], gcnn)
        self.assertEqual(self.counts["a3"] - gcnn, 891520)
        self.assertEqual(self.counts["a4"] - gcnn, 17664)
        self.assertEqual(self.counts["a5"] - gcnn, -626560)

    def testReferenceTotals(self):
        for name, reference in [("baseline", 4.1e6), ("cnn_dense", 1.5e6), ("gcnn", 6.9e6)]:
            self.assertLess(abs(self.counts[name] - reference), 0.25 * reference, name)

    def testDirectionalOrdering(self):
        c = self.counts
        self.assertGreater(c["a1"], c["gcnn"])
        self.assertGreater(c["a3"], c["gcnn"])
        self.assertGreater(c["a4"], c["gcnn"])
        self.assertLess(c["a5"], c["gcnn"])
        self.assertLess(c["cnn_dense"], 0.5 * c["baseline"])
        self.assertGreater(c["gcnn"], c["baseline"])
        self.assertTrue(1.5e6 <= c["a1"] - c["gcnn"] <= 2.7e6)
        self.assertTrue(0.5e6 <= c["a3"] - c["gcnn"] <= 1.1e6)

    def testLayerFormulas(self):
        registry = ParameterRegistry()
        dense = Dense("d", 10, 5, registry)
        self.assertEqual(count_params(dense).total_params, 55)
        standard = Conv2d("s", ConvSpec(32, 64), registry)
        separable = Conv2d("p", ConvSpec(32, 64, separable=True), registry)
        self.assertEqual(count_params(standard).total_params - count_params(separable).total_params, 16096)

    def testSharedCountedOnce(self):
        registry = ParameterRegistry()
        spec = ConvSpec(4, 4, share_id="shared")
        once = Conv2d("a", spec, registry)
        twice = [once, Conv2d("b", spec, registry)]
        self.assertEqual(count_params(twice).total_params, count_params(once).total_params)


class TestSummary(unittest.TestCase):

    def testGcnnRows(self):
        summary = count_params(build_model(ModelConfig()))
        self.assertEqual(len(summary.of_kind("gate")), 4)
        self.assertEqual(summary.of_kind("fusion")[0].shape, (1, 512, 2, 2))
        self.assertEqual(summary.rows[-1].shape, (1, 1, 101))
        groups = summary.share_groups()
        self.assertEqual(groups["c7"], ["c7", "c7b"])
        self.assertEqual(groups["d1"], ["d1", "d1b"])
        self.assertEqual(groups["gate_mid"], ["gb1.mid", "gb2.mid"])
        # GateBlocks sit in the first half of the stack
        names = [row.name for row in summary.rows]
        self.assertLess(names.index("gb2.gate2"), len(names) // 2)

    def testAblationRows(self):
        a5 = count_params(build_model(ModelConfig(ablation="a5")))
        self.assertEqual(a5.of_kind("gate"), [])
        a3 = count_params(build_model(ModelConfig(ablation="a3")))
        self.assertEqual(a3.share_groups(), {})
        a4 = count_params(build_model(ModelConfig(ablation="a4")))
        self.assertEqual(a4.share_groups()["gate_mid_extra"], ["gb1.extra", "gb2.extra"])

    def testPoolPlacement(self):
        late = count_params(build_model(ModelConfig(**TINY)))
        early = count_params(build_model(ModelConfig(ablation="a2", **TINY)))
        self.assertEqual([r.name for r in late.of_kind("pool")], ["pool_c9", "pool_d1b", "pool_d2", "pool_d3"])
        self.assertEqual([r.name for r in early.of_kind("pool")], ["pool_c2", "pool_c5", "pool_c7", "pool_c8"])
        shapes = {r.name: r.shape for r in early.rows}
        self.assertEqual(shapes["c3"][2:], (16, 16))

    def testRecurrentFree(self):
        summary = count_params(build_model(ModelConfig(variant="cnn_dense")))
        self.assertEqual(summary.of_kind("blstm"), [])
        baseline = count_params(build_model(ModelConfig(variant="baseline")))
        self.assertEqual(len(baseline.of_kind("blstm")), 2)

    def testCsv(self):
        summary = count_params(build_model(ModelConfig(**TINY)))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "summary.csv")
            summary.to_csv(path)
            with open(path, newline="", encoding="utf-8") as fp:
                rows = list(csv.reader(fp))
        self.assertEqual(rows[0], ["layer", "name", "shape", "params", "share_id"])
        self.assertEqual(len(rows), len(summary.rows) + 1)
        self.assertEqual(rows[1][:2], ["conv", "c1"])
        self.assertEqual(rows[1][2], "1x4x32x32")
        self.assertIn("total parameters", str(summary))


class TestForward(unittest.TestCase):

    def testShapesAllVariants(self):
        for variant in VARIANTS:
            model = build_model(ModelConfig(variant=variant, **TINY), seed=1)
            probs = model(frames(9))
            self.assertEqual(probs.shape, (9, 6), variant)
            np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-9)
            self.assertTrue(np.all(probs.data >= 0.0))

    def testAblationsForward(self):
        for ablation in ABLATIONS:
            model = build_model(ModelConfig(ablation=ablation, **TINY), seed=2)
            self.assertEqual(model.forward(FrameSequence(frames(3), 40)).shape, (3, 6), ablation)

    def testBatchMatchesSingle(self):
        model = build_model(ModelConfig(variant="baseline", **TINY), seed=3)
        a, b = frames(3, 1), frames(5, 2)
        batched = model.forward_batch([a, b])
        np.testing.assert_allclose(batched[0].data, model(a).data, atol=1e-10)
        np.testing.assert_allclose(batched[1].data, model(b).data, atol=1e-10)
        self.assertEqual(model.forward_batch([]), [])

    def testBadFrames(self):
        model = build_model(ModelConfig(**TINY))
        self.assertRaises(ShapeMismatch, model, np.zeros((2, 1, 32, 30)))
        self.assertRaises(ShapeMismatch, model, np.zeros((0, 1, 32, 32)))

    def testDeterministicInit(self):
        a = build_model(ModelConfig(**TINY), seed=4)
        b = build_model(ModelConfig(**TINY), seed=4)
        x = frames(2)
        np.testing.assert_array_equal(a(x).data, b(x).data)


class TestSharedWeights(unittest.TestCase):

    def testSingleStorage(self):
        model = build_model(ModelConfig(**TINY))
        self.assertIs(model.registry.params["c7.weight"], model.features[[l.name for l in model.features].index("c7b")].weight)
        self.assertEqual(model.registry.uses["c7.weight"], 2)
        self.assertEqual(sum(p.size for p in model.parameters()), model.registry.count())

    def testSharedGradient(self):
        model = build_model(ModelConfig(**TINY), seed=5)
        x = frames(1, 6)
        bias = model.registry.params["c7.bias"]
        bias.data = np.random.default_rng(7).normal(0.0, 0.1, size=bias.shape)
        err = grad_check(lambda: T.sum(T.log(model(x)) * np.arange(6.0)), [bias])
        self.assertLess(err, 1e-4)

    def testGradientReachesSharedLayers(self):
        model = build_model(ModelConfig(**TINY), seed=6)
        with Tape() as tape:
            tape.backward(T.sum(T.log(model(frames(2)))))
        for name in ("c7.weight", "d1.pointwise", "gate_mid.depthwise"):
            grad = model.registry.params[name].grad
            self.assertIsNotNone(grad, name)
            self.assertGreater(np.abs(grad).sum(), 0.0, name)


if __name__ == "__main__":
    unittest.main()
