"""Thresholding baseline: Lee filter, equalization, Otsu split, full chain."""

import dataclasses

import numpy as np
import pytest

from bcpflood.errors import DataError, DegenerateHistogramError, ParameterError
from bcpflood.metrics import confusion, metrics
from bcpflood.otsu import (
    OtsuConfig,
    histogram_equalization,
    lee_filter,
    otsu_flood_mask,
    otsu_threshold,
)
from bcpflood.raster import RasterStack
from bcpflood.synth import SceneSpec, synth_scene

CRITERION_SCENE = dict(
    flood_polygon=((0.0, 0.0), (16.0, 0.0), (16.0, 64.0), (0.0, 64.0)),
    water_polygon=((48.0, 0.0), (64.0, 0.0), (64.0, 64.0), (48.0, 64.0)),
    seed=7,
)


def otsu_oracle(values, bins):
    """Definitional within-class variance scan over histogram splits.

    Sums use fsum so splits that differ only by empty bins score exactly
    equal, and the first minimum (the smaller edge) wins, matching the
    documented tie rule.
    """
    import math

    lo, hi = float(values.min()), float(values.max())
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    best_k, best_score = 0, np.inf
    for k in range(bins - 1):
        score = 0.0
        for lo_bin, hi_bin in ((0, k + 1), (k + 1, bins)):
            n = counts[lo_bin:hi_bin].sum()
            if n == 0:
                continue
            m = math.fsum(counts[lo_bin:hi_bin] * centers[lo_bin:hi_bin]) / n
            score += math.fsum(counts[lo_bin:hi_bin] * (centers[lo_bin:hi_bin] - m) ** 2)
        if score < best_score:
            best_k, best_score = k, score
    return float(edges[best_k + 1])


class TestOtsuConfig:
    def test_defaults(self):
        config = OtsuConfig()
        assert (config.bins, config.lee_window, config.equalize, config.channel) == (
            256,
            7,
            True,
            "VV",
        )

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"bins": 1},
            {"bins": True},
            {"lee_window": 4},
            {"lee_window": 0},
            {"lee_window": True},
            {"channel": "HH"},
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ParameterError):
            OtsuConfig(**kwargs)


class TestLeeFilter:
    def test_constant_image_unchanged(self):
        out = lee_filter(np.full((12, 12), -12.0), 7)
        assert np.abs(out + 12.0).max() <= 1e-12

    def test_flattens_stationary_noise(self):
        for seed in range(4):
            rng = np.random.default_rng(seed)
            image = rng.normal(-12.0, 1.0, size=(32, 32))
            out = lee_filter(image, 7)
            assert out.var() < image.var()

    def test_retains_strong_edges(self):
        rng = np.random.default_rng(5)
        image = rng.normal(0.0, 0.5, size=(32, 32))
        image[:, 16:] += 10.0
        out = lee_filter(image, 7)
        assert out[:, 16:].mean() - out[:, :16].mean() >= 8.0

    def test_nan_cells_stay_nan(self):
        image = np.full((8, 8), 3.0)
        image[2, 2] = np.nan
        out = lee_filter(image, 3)
        assert np.isnan(out[2, 2])
        mask = np.ones((8, 8), dtype=bool)
        mask[2, 2] = False
        assert np.isfinite(out[mask]).all()

    def test_all_nan_passthrough(self):
        out = lee_filter(np.full((4, 4), np.nan), 3)
        assert np.isnan(out).all()

    def test_rejects_even_window_and_bad_shape(self):
        with pytest.raises(ParameterError):
            lee_filter(np.zeros((4, 4)), 4)
        with pytest.raises(ParameterError, match="2-D"):
            lee_filter(np.zeros(16), 3)


class TestHistogramEqualization:
    def test_two_mass_image(self):
        image = np.full((10, 10), 3.0)
        image[:4] = -5.0
        out = histogram_equalization(image)
        np.testing.assert_allclose(out[:4], 0.4, atol=1e-12)
        np.testing.assert_allclose(out[4:], 1.0, atol=1e-12)

    def test_constant_maps_to_one(self):
        out = histogram_equalization(np.full((5, 5), 2.5))
        np.testing.assert_array_equal(out, 1.0)

    def test_nan_preserved(self):
        image = np.array([[1.0, np.nan], [2.0, 3.0]])
        out = histogram_equalization(image)
        assert np.isnan(out[0, 1])
        assert np.isfinite(out[np.isfinite(image)]).all()

    def test_monotone_in_value(self):
        rng = np.random.default_rng(9)
        image = rng.normal(size=(40, 40))
        out = histogram_equalization(image)
        order = np.argsort(image.ravel())
        ranked = out.ravel()[order]
        assert np.all(np.diff(ranked) >= 0.0)

    def test_output_tracks_empirical_ranks(self):
        rng = np.random.default_rng(10)
        image = rng.random((250, 400))
        out = np.sort(histogram_equalization(image).ravel())
        grid = np.arange(1, out.size + 1) / out.size
        assert np.abs(out - grid).max() < 0.02

    def test_rejects_bad_bins(self):
        with pytest.raises(ParameterError):
            histogram_equalization(np.zeros((3, 3)), bins=1)


class TestOtsuThreshold:
    def test_matches_definitional_scan(self):
        rng = np.random.default_rng(21)
        for bins in (8, 64, 256):
            for _ in range(7):
                n0 = rng.integers(100, 400)
                n1 = rng.integers(100, 400)
                values = np.concatenate(
                    [rng.normal(0.0, 1.0, n0), rng.normal(rng.uniform(2, 8), 1.5, n1)]
                )
                assert otsu_threshold(values, bins) == otsu_oracle(values, bins)

    def test_bimodal_threshold_lands_between_modes(self):
        rng = np.random.default_rng(23)
        values = np.concatenate(
            [rng.normal(0.0, 1.0, 2000), rng.normal(10.0, 1.0, 2000)]
        )
        assert 2.0 < otsu_threshold(values) < 8.0

    def test_two_point_histogram_splits_midway(self):
        values = np.array([0.0] * 50 + [10.0] * 50)
        assert otsu_threshold(values, bins=2) == 5.0

    def test_ties_break_toward_smaller_edge(self):
        # Both masses are single bins, so every split between them has zero
        # within-class variance; the first candidate edge must win.
        values = np.array([0.0] * 30 + [4.0] * 30)
        assert otsu_threshold(values, bins=4) == 1.0

    def test_affine_invariance(self):
        rng = np.random.default_rng(25)
        values = np.concatenate([rng.normal(0, 1, 500), rng.normal(6, 1, 500)])
        base = otsu_threshold(values)
        scaled = otsu_threshold(2.5 * values - 7.0)
        assert scaled == pytest.approx(2.5 * base - 7.0, rel=1e-6)

    def test_degenerate_inputs_rejected(self):
        with pytest.raises(DegenerateHistogramError, match="identical"):
            otsu_threshold(np.full((4, 4), 1.0))
        with pytest.raises(DegenerateHistogramError, match="no valid"):
            otsu_threshold(np.full((4, 4), np.nan))
        with pytest.raises(DegenerateHistogramError, match="no valid"):
            otsu_threshold(np.array([]))


class TestOtsuFloodMask:
    def test_marks_flood_on_clean_event(self):
        stack, ref = synth_scene(SceneSpec(**CRITERION_SCENE))
        flood = otsu_flood_mask(stack)
        counts = confusion(flood, ref, "overall")
        _, recall, _, _ = metrics(counts)
        assert recall >= 0.9
        assert flood.provenance["method"] == "otsu-vv"
        assert "otsu_threshold" in flood.provenance

    def test_unequalized_variant_also_works(self):
        stack, ref = synth_scene(SceneSpec(**CRITERION_SCENE))
        flood = otsu_flood_mask(stack, OtsuConfig(equalize=False))
        _, recall, _, _ = metrics(confusion(flood, ref, "overall"))
        assert recall >= 0.9

    def test_permanent_water_swept_in(self):
        spec = SceneSpec(**CRITERION_SCENE)
        stack, _ref = synth_scene(spec)
        flood = otsu_flood_mask(stack)
        water = np.zeros((64, 64), dtype=bool)
        water[:, 48:] = True
        assert flood.mask[water].mean() > 0.5

    def test_splits_even_without_any_flood(self):
        # The baseline always produces a threshold, so an unchanged scene
        # still gets a sizeable "flood" class.
        stack, _ref = synth_scene(SceneSpec(flood_drop_dB=0.0, seed=4))
        flood = otsu_flood_mask(stack)
        assert flood.flood_count / flood.mask.size > 0.05

    def test_channel_selection_changes_result(self):
        stack, _ref = synth_scene(SceneSpec(**CRITERION_SCENE))
        vv = otsu_flood_mask(stack, OtsuConfig(channel="VV"))
        vh = otsu_flood_mask(stack, OtsuConfig(channel="VH"))
        assert vh.provenance["method"] == "otsu-vh"
        assert not np.array_equal(vv.mask, vh.mask)

    def test_missing_channel_rejected(self):
        spec = SceneSpec(channels=("VV",), mean_level_dB=(-12.0,), seed=2)
        stack, _ref = synth_scene(spec)
        with pytest.raises(DataError, match="VH"):
            otsu_flood_mask(stack, OtsuConfig(channel="VH"))

    def test_nodata_border_changes_little(self):
        stack, _ref = synth_scene(SceneSpec(**CRITERION_SCENE))
        pad = 3
        t, c, h, w = stack.data.shape
        data = np.zeros((t, c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
        data[:, :, pad:-pad, pad:-pad] = stack.data
        nodata = np.ones((t, h + 2 * pad, w + 2 * pad), dtype=bool)
        nodata[:, pad:-pad, pad:-pad] = False
        padded = RasterStack(
            data=data,
            nodata_mask=nodata,
            dates=stack.dates,
            channels=stack.channels,
            georef=stack.georef,
            resolution_m=stack.resolution_m,
        )
        base = otsu_flood_mask(stack)
        framed = otsu_flood_mask(padded)
        assert framed.nodata[:pad].all() and framed.nodata[:, :pad].all()
        assert not framed.mask[framed.nodata].any()
        interior = framed.mask[pad:-pad, pad:-pad]
        assert (interior == base.mask).mean() >= 0.995
