"""Confusion counting, ratio metrics, and the paired signed-rank test."""

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import rankdata

from bcpflood.errors import ContractError, GeometryError, ParameterError
from bcpflood.geotiff import GeoReference
from bcpflood.metrics import (
    CSV_COLUMNS,
    ConfusionCounts,
    MetricsRecord,
    confusion,
    metrics,
    paired_significance,
    write_metrics_csv,
)
from bcpflood.postproc import FloodMask
from bcpflood.raster import ReferenceMap


def make_pair(pred_mask, labels, pred_nodata=None):
    labels = np.asarray(labels, dtype=np.uint8)
    pred_mask = np.asarray(pred_mask, dtype=bool)
    if pred_nodata is None:
        pred_nodata = np.zeros(labels.shape, dtype=bool)
    flood = FloodMask(mask=pred_mask, nodata=pred_nodata, georef=GeoReference())
    return flood, ReferenceMap(labels=labels, georef=GeoReference())


def confusion_oracle(pred_mask, pred_nodata, labels, scope, other_neg):
    positive_labels = {"overall": (1, 2), "open": (1,), "urban": (2,)}[scope]
    ignored_label = {"overall": None, "open": 2, "urban": 1}[scope]
    tp = fp = fn = tn = 0
    for r in range(labels.shape[0]):
        for c in range(labels.shape[1]):
            if labels[r, c] == 255 or pred_nodata[r, c]:
                continue
            if not other_neg and ignored_label is not None and labels[r, c] == ignored_label:
                continue
            positive = labels[r, c] in positive_labels
            predicted = bool(pred_mask[r, c])
            if predicted and positive:
                tp += 1
            elif predicted:
                fp += 1
            elif positive:
                fn += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


class TestConfusionCounts:
    def test_total_and_add(self):
        a = ConfusionCounts(1, 2, 3, 4)
        b = ConfusionCounts(10, 20, 30, 40)
        assert a.total == 10
        assert a + b == ConfusionCounts(11, 22, 33, 44)

    @pytest.mark.parametrize("kwargs", [{"tp": -1}, {"fp": 1.5}, {"tn": "3"}])
    def test_rejects_bad_counts(self, kwargs):
        with pytest.raises(ParameterError):
            ConfusionCounts(**kwargs)


class TestMetricsFunction:
    def test_hand_case(self):
        assert metrics(ConfusionCounts(2, 1, 1, 5)) == (2 / 3, 2 / 3, 2 / 3, 1 / 2)

    def test_zero_over_zero_is_zero(self):
        assert metrics(ConfusionCounts(0, 0, 0, 9)) == (0.0, 0.0, 0.0, 0.0)
        assert metrics(ConfusionCounts(0, 3, 0, 0))[1] == 0.0
        assert metrics(ConfusionCounts(0, 0, 3, 0))[0] == 0.0

    def test_perfect(self):
        assert metrics(ConfusionCounts(7, 0, 0, 2)) == (1.0, 1.0, 1.0, 1.0)

    @given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
    def test_f1_is_dice_of_iou(self, tp, fp, fn):
        _, _, f1, iou = metrics(ConfusionCounts(tp, fp, fn, 0))
        assert abs(f1 - 2.0 * iou / (1.0 + iou)) <= 1e-12

    def test_more_true_positives_never_hurt(self):
        base = metrics(ConfusionCounts(5, 3, 4, 0))
        better = metrics(ConfusionCounts(6, 3, 4, 0))
        assert all(x >= y for x, y in zip(better, base))


class TestMetricsRecord:
    def test_from_counts(self):
        record = MetricsRecord.from_counts(
            ConfusionCounts(2, 1, 1, 5),
            site="lab",
            method="bcp",
            scope="overall",
            threshold=0.2,
            window=9,
        )
        assert record.precision == 2 / 3
        assert record.iou == 1 / 2
        assert record.threshold == 0.2 and record.window == 9

    def test_scope_validated(self):
        with pytest.raises(ParameterError, match="scope"):
            MetricsRecord.from_counts(
                ConfusionCounts(), site="s", method="m", scope="water"
            )

    def test_scores_validated(self):
        with pytest.raises(ContractError, match="outside"):
            MetricsRecord(
                site="s",
                method="m",
                scope="overall",
                threshold=None,
                window=None,
                counts=ConfusionCounts(),
                precision=1.5,
                recall=0.0,
                f1=0.0,
                iou=0.0,
            )

    def test_csv_row_blank_optionals(self):
        record = MetricsRecord.from_counts(
            ConfusionCounts(1, 0, 0, 0), site="s", method="m", scope="open"
        )
        row = record.csv_row()
        assert row[:5] == ["s", "m", "open", "", ""]
        assert row[5:9] == ["1", "0", "0", "0"]
        assert row[9] == repr(1.0)


class TestConfusion:
    def test_identity_prediction(self):
        labels = np.zeros((6, 6), dtype=np.uint8)
        labels[:, :3] = 1
        flood, ref = make_pair(labels == 1, labels)
        counts = confusion(flood, ref, "overall")
        assert counts == ConfusionCounts(tp=18, fp=0, fn=0, tn=18)

    def test_empty_prediction(self):
        labels = np.zeros((4, 4), dtype=np.uint8)
        labels[0] = 1
        flood, ref = make_pair(np.zeros((4, 4), dtype=bool), labels)
        assert confusion(flood, ref) == ConfusionCounts(tp=0, fp=0, fn=4, tn=12)

    @pytest.mark.parametrize("scope", ["overall", "open", "urban"])
    @pytest.mark.parametrize("other_neg", [False, True])
    def test_matches_per_pixel_oracle(self, scope, other_neg):
        rng = np.random.default_rng(31)
        labels = rng.choice(
            np.array([0, 1, 2, 255], dtype=np.uint8), size=(16, 16), p=[0.5, 0.2, 0.2, 0.1]
        )
        pred_mask = rng.random((16, 16)) > 0.5
        pred_nodata = rng.random((16, 16)) > 0.9
        flood, ref = make_pair(pred_mask, labels, pred_nodata)
        counts = confusion(flood, ref, scope, other_flood_as_negative=other_neg)
        assert counts == confusion_oracle(pred_mask & ~pred_nodata, pred_nodata, labels, scope, other_neg)

    def test_scope_partition_properties(self):
        rng = np.random.default_rng(37)
        labels = rng.choice(np.array([0, 1, 2], dtype=np.uint8), size=(20, 20))
        pred_mask = rng.random((20, 20)) > 0.4
        flood, ref = make_pair(pred_mask, labels)
        overall = confusion(flood, ref, "overall")
        open_ = confusion(flood, ref, "open")
        urban = confusion(flood, ref, "urban")
        # Each one-class scope drops exactly the other flood class from the
        # assessed set, and the two positive sets split the overall one.
        assert open_.total == overall.total - int((labels == 2).sum())
        assert urban.total == overall.total - int((labels == 1).sum())
        assert (open_.tp + open_.fn) + (urban.tp + urban.fn) == overall.tp + overall.fn
        for scope in ("open", "urban"):
            kept = confusion(flood, ref, scope, other_flood_as_negative=True)
            assert kept.total == overall.total

    def test_nodata_never_assessed(self):
        labels = np.full((3, 3), 1, dtype=np.uint8)
        labels[0, 0] = 255
        pred_nodata = np.zeros((3, 3), dtype=bool)
        pred_nodata[1, 1] = True
        flood, ref = make_pair(np.ones((3, 3), dtype=bool), labels, pred_nodata)
        assert confusion(flood, ref) == ConfusionCounts(tp=7, fp=0, fn=0, tn=0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(41)
        labels = rng.choice(np.array([0, 1, 2], dtype=np.uint8), size=(12, 12))
        pred_mask = rng.random((12, 12)) > 0.5
        order = rng.permutation(144)
        flood_a, ref_a = make_pair(pred_mask, labels)
        flood_b, ref_b = make_pair(
            pred_mask.ravel()[order].reshape(12, 12), labels.ravel()[order].reshape(12, 12)
        )
        for scope in ("overall", "open", "urban"):
            assert confusion(flood_a, ref_a, scope) == confusion(flood_b, ref_b, scope)

    def test_geometry_mismatches_rejected(self):
        flood, _ = make_pair(np.zeros((4, 4), dtype=bool), np.zeros((4, 4), dtype=np.uint8))
        ref_small = ReferenceMap(np.zeros((3, 3), dtype=np.uint8), GeoReference())
        with pytest.raises(GeometryError, match="does not match"):
            confusion(flood, ref_small)
        ref_shifted = ReferenceMap(
            np.zeros((4, 4), dtype=np.uint8), GeoReference(origin_x=5.0)
        )
        with pytest.raises(GeometryError, match="georeference"):
            confusion(flood, ref_shifted)

    def test_unknown_scope_rejected(self):
        flood, ref = make_pair(np.zeros((2, 2), dtype=bool), np.zeros((2, 2), dtype=np.uint8))
        with pytest.raises(ParameterError, match="scope"):
            confusion(flood, ref, "everything")


def brute_force_signed_rank_p(a, b):
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    diff = diff[diff != 0.0]
    ranks = rankdata(np.abs(diff))
    observed = float(ranks[diff > 0.0].sum())
    total = float(ranks.sum())
    lower = min(observed, total - observed)
    n = diff.size
    hits = 0
    for bits in range(2**n):
        s = sum(ranks[i] for i in range(n) if bits >> i & 1)
        if s <= lower + 1e-9 or s >= total - lower - 1e-9:
            hits += 1
    return hits / 2**n


class TestPairedSignificance:
    def test_identical_vectors(self):
        scores = [0.5, 0.6, 0.7, 0.8, 0.9]
        assert paired_significance(scores, scores) == 1.0

    def test_uniform_dominance_n10(self):
        a = np.linspace(0.5, 0.9, 10)
        b = a - np.linspace(0.01, 0.1, 10)
        assert paired_significance(a, b) == 2.0 / 2.0**10

    def test_exact_matches_sign_enumeration(self):
        rng = np.random.default_rng(43)
        for trial in range(5):
            a = rng.random(8)
            b = rng.random(8)
            assert paired_significance(a, b) == brute_force_signed_rank_p(a, b)

    def test_exact_with_tied_magnitudes(self):
        a = np.array([0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5])
        b = a + np.array([0.3, -0.3, 0.5, 0.7, 0.7, -0.2, 0.1, 0.9])
        assert paired_significance(a, b) == brute_force_signed_rank_p(a, b)

    def test_matches_scipy_exact_without_ties(self):
        rng = np.random.default_rng(47)
        a = rng.random(12)
        b = rng.random(12)
        expected = scipy.stats.wilcoxon(a, b, alternative="two-sided", method="exact").pvalue
        assert paired_significance(a, b) == pytest.approx(expected, abs=1e-12)

    def test_matches_scipy_normal_approximation(self):
        rng = np.random.default_rng(53)
        a = rng.random(30)
        b = a + rng.normal(0.0, 0.05, 30)
        expected = scipy.stats.wilcoxon(
            a, b, alternative="two-sided", method="approx", correction=True
        ).pvalue
        assert paired_significance(a, b) == pytest.approx(expected, abs=1e-12)

    def test_zero_differences_dropped(self):
        a = np.array([0.5, 0.6, 0.7, 0.8, 0.9, 0.4, 0.3, 0.2])
        b = a.copy()
        b[:5] += np.array([0.01, -0.02, 0.03, 0.04, 0.05])
        trimmed = paired_significance(a[:5], b[:5])
        assert paired_significance(a, b) == trimmed

    @pytest.mark.parametrize(
        "a, b, match",
        [
            ([0.1] * 4, [0.2] * 4, "at least 5"),
            ([0.1] * 6, [0.2] * 5, "differ in length"),
            ([0.1, 0.2, np.nan, 0.4, 0.5], [0.2] * 5, "finite"),
        ],
    )
    def test_rejects_bad_inputs(self, a, b, match):
        with pytest.raises(ParameterError, match=match):
            paired_significance(a, b)

    def test_rejects_2d(self):
        with pytest.raises(ParameterError, match="1-D"):
            paired_significance(np.zeros((3, 2)), np.zeros((3, 2)))


class TestMetricsCsv:
    def test_round_trip_format(self, tmp_path):
        records = [
            MetricsRecord.from_counts(
                ConfusionCounts(2, 1, 1, 5),
                site="scene",
                method="bcp",
                scope=scope,
                threshold=0.2,
                window=9,
            )
            for scope in ("overall", "open", "urban")
        ]
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, records)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 4
        cells = lines[1].split(",")
        assert cells[2] == "overall"
        assert float(cells[3]) == 0.2
        assert float(cells[9]) == 2 / 3
