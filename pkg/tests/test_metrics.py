#!/usr/bin/env python3

from gcnnhtr.metrics import edit_distance, corpus_cer, RunRecord, time_to_threshold
from gcnnhtr.exc import ConfigError

import os
import tempfile
import unittest

from hypothesis import given, strategies as st

HOUR = 3600.0
texts = st.text(alphabet="abcé ", max_size=12)


class TestEditDistance(unittest.TestCase):

    def testKnownValues(self):
        self.assertEqual(edit_distance("kitten", "kitten"), 0)
        self.assertEqual(edit_distance("kitten", "sitting"), 3)
        self.assertEqual(edit_distance("", "abc"), 3)
        self.assertEqual(edit_distance("é", "e"), 1)

    @given(texts, texts, texts)
    def testMetric(self, a, b, c):
        self.assertGreaterEqual(edit_distance(a, b), 0)
        self.assertEqual(edit_distance(a, b) == 0, a == b)
        self.assertEqual(edit_distance(a, b), edit_distance(b, a))
        self.assertLessEqual(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c))


class TestCER(unittest.TestCase):

    def testKnownValues(self):
        self.assertEqual(corpus_cer([("abc", "abc"), ("de", "de")]), 0.0)
        self.assertAlmostEqual(corpus_cer([("abc", "axc"), ("de", "de")]), 20.0)
        self.assertEqual(corpus_cer([("a", "")]), 100.0)

    def testNotClamped(self):
        self.assertEqual(corpus_cer([("a", "bcd")]), 300.0)

    def testMicroAverage(self):
        # per-line mean would be (100 + 0) / 2
        self.assertAlmostEqual(corpus_cer([("a", "b"), ("abcd", "abcd")]), 20.0)

    @given(st.lists(st.tuples(texts.filter(bool), texts), min_size=1, max_size=6))
    def testOrderInvariant(self, pairs):
        self.assertAlmostEqual(corpus_cer(pairs), corpus_cer(list(reversed(pairs))))

    def testEmptyReferences(self):
        self.assertRaises(ConfigError, corpus_cer, [("", "abc")])
        self.assertRaises(ConfigError, corpus_cer, [])


class TestRunRecord(unittest.TestCase):

    def testInvariants(self):
        run = RunRecord()
        run.append(1.0, 3.0, 50.0)
        self.assertRaises(ConfigError, run.append, 1.0, 2.0, 40.0)
        self.assertRaises(ConfigError, run.append, 2.0, 2.0, -1.0)
        self.assertEqual(len(run), 1)
        self.assertEqual(run.epochs[0].epoch, 1)

    def testCsvRoundTrip(self):
        run = RunRecord.from_series([0.5, 1.25, 2.0], [40.0, 12.5, 13.0], [4.0, 2.0, 1.0 / 3.0])
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.csv")
            run.to_csv(path)
            with open(path, encoding="utf-8") as fp:
                self.assertEqual(fp.readline().strip(), "epoch,cum_seconds,train_loss,val_cer")
            self.assertEqual(RunRecord.from_csv(path), run)

    def testBadCsv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.csv")
            with open(path, "w", encoding="utf-8") as fp:
                fp.write("epoch,seconds\n1,2\n")
            self.assertRaises(ConfigError, RunRecord.from_csv, path)


class TestTimeToThreshold(unittest.TestCase):

    def testPlateau(self):
        run = RunRecord.from_series([HOUR, 2 * HOUR, 3 * HOUR, 4 * HOUR], [10, 8, 7, 7.1])
        self.assertEqual(time_to_threshold(run), 3 * HOUR)

    def testConstant(self):
        self.assertEqual(time_to_threshold(RunRecord.from_series([1, 2, 3], [5, 5, 5])), 1)

    def testOnlyLastQualifies(self):
        run = RunRecord.from_series([1, 2, 3, 4, 5], [10, 9, 8, 7.5, 7.0])
        self.assertEqual(time_to_threshold(run), 5)

    def testZeroMinimum(self):
        run = RunRecord.from_series([1, 2, 3], [3.0, 0.0, 0.0])
        self.assertEqual(time_to_threshold(run), 2)

    def testNeverAfterBest(self):
        run = RunRecord.from_series([1, 2, 3, 4], [4.0, 4.1, 3.95, 9.0])
        self.assertLessEqual(time_to_threshold(run), run.best().cum_seconds)
        self.assertEqual(time_to_threshold(run), 1)

    def testEmpty(self):
        self.assertRaises(ConfigError, time_to_threshold, RunRecord())


if __name__ == "__main__":
    unittest.main()
