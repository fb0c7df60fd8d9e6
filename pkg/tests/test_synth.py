"""Synthetic scenes: polygon rasterization, signal model, spec validation."""

import dataclasses
import datetime
import json
import math

import numpy as np
import pytest

from bcpflood import SceneSpec, rasterize_polygon, stack_digest, synth_scene
from bcpflood.errors import SceneSpecError
from bcpflood.synth import _acquisition_dates

UNIT_SQUARE = ((0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0))


def zero_noise_spec(**overrides) -> SceneSpec:
    base = dict(
        height=8,
        width=8,
        n_dates=4,
        seasonal_amplitude_dB=0.0,
        speckle_sigma_dB=0.0,
        flood_polygon=((0.0, 0.0), (4.0, 0.0), (4.0, 8.0), (0.0, 8.0)),
    )
    base.update(overrides)
    return SceneSpec(**base)


class TestRasterizePolygon:
    def test_axis_aligned_square(self):
        mask = rasterize_polygon(UNIT_SQUARE, 4, 4)
        expected = np.zeros((4, 4), dtype=bool)
        expected[:2, :2] = True
        assert mask.dtype == bool
        np.testing.assert_array_equal(mask, expected)

    def test_right_triangle(self):
        # Hypotenuse x + y = 4; a center (x+.5, y+.5) is inside iff the
        # rightward ray crosses it, i.e. strictly left of the crossing.
        mask = rasterize_polygon(((0.0, 0.0), (4.0, 0.0), (0.0, 4.0)), 4, 4)
        expected = np.zeros((4, 4), dtype=bool)
        expected[0, :3] = True
        expected[1, :2] = True
        expected[2, 0] = True
        np.testing.assert_array_equal(mask, expected)

    def test_boundary_centers_excluded_on_right_edge(self):
        mask = rasterize_polygon(UNIT_SQUARE, 4, 4)
        assert not mask[:, 2].any()

    def test_vertex_order_irrelevant(self):
        clockwise = tuple(reversed(UNIT_SQUARE))
        np.testing.assert_array_equal(
            rasterize_polygon(UNIT_SQUARE, 5, 5), rasterize_polygon(clockwise, 5, 5)
        )

    def test_default_flood_band_pixel_count(self):
        spec = SceneSpec()
        mask = rasterize_polygon(spec.flood_polygon, spec.height, spec.width)
        assert mask.sum() == 32 * 64
        assert mask[:, :32].all()
        assert not mask[:, 32:].any()

    def test_nonconvex_l_shape(self):
        polygon = ((0.0, 0.0), (4.0, 0.0), (4.0, 2.0), (2.0, 2.0), (2.0, 4.0), (0.0, 4.0))
        mask = rasterize_polygon(polygon, 4, 4)
        expected = np.zeros((4, 4), dtype=bool)
        expected[:2, :4] = True
        expected[2:, :2] = True
        np.testing.assert_array_equal(mask, expected)


class TestAcquisitionDates:
    def test_last_is_event_and_span_is_one_year(self):
        dates = _acquisition_dates("2022-10-05", 12)
        assert len(dates) == 12
        assert dates[-1] == "2022-10-05"
        first = datetime.date.fromisoformat(dates[0])
        assert (datetime.date(2022, 10, 5) - first).days == 365

    def test_strictly_increasing_iso(self):
        for n in (2, 3, 7, 12, 30):
            dates = _acquisition_dates("2021-03-14", n)
            parsed = [datetime.date.fromisoformat(d) for d in dates]
            assert all(a < b for a, b in zip(parsed, parsed[1:]))

    def test_two_dates(self):
        assert _acquisition_dates("2022-10-05", 2) == ("2021-10-05", "2022-10-05")

    def test_stack_carries_the_dates(self):
        spec = zero_noise_spec()
        stack, _ = synth_scene(spec)
        assert stack.dates == _acquisition_dates(spec.event_date, spec.n_dates)


class TestSignalModel:
    def test_zero_noise_levels_exact(self):
        spec = zero_noise_spec()
        stack, reference = synth_scene(spec)
        data = stack.data
        assert data.dtype == np.float32
        # Background: the per-channel mean, every date.
        np.testing.assert_array_equal(data[:, 0, :, 4:], np.float32(-12.0))
        np.testing.assert_array_equal(data[:, 1, :, 4:], np.float32(-18.0))
        # Flood band: mean until the event, mean + drop at the event.
        np.testing.assert_array_equal(data[:-1, 0, :, :4], np.float32(-12.0))
        np.testing.assert_array_equal(data[-1, 0, :, :4], np.float32(-20.0))
        np.testing.assert_array_equal(data[-1, 1, :, :4], np.float32(-26.0))
        np.testing.assert_array_equal(reference.labels[:, :4], 1)
        np.testing.assert_array_equal(reference.labels[:, 4:], 0)

    def test_water_dark_at_every_date(self):
        spec = zero_noise_spec(water_polygon=((6.0, 0.0), (8.0, 0.0), (8.0, 8.0), (6.0, 8.0)))
        stack, reference = synth_scene(spec)
        np.testing.assert_array_equal(stack.data[:, 0, :, 6:], np.float32(-18.0))
        np.testing.assert_array_equal(stack.data[:, 1, :, 6:], np.float32(-24.0))
        # Permanent water is not a flood label.
        np.testing.assert_array_equal(reference.labels[:, 6:], 0)

    def test_urban_labelled_two_and_flooded(self):
        spec = zero_noise_spec(urban_polygon=((5.0, 5.0), (7.0, 5.0), (7.0, 7.0), (5.0, 7.0)))
        stack, reference = synth_scene(spec)
        np.testing.assert_array_equal(reference.labels[5:7, 5:7], 2)
        np.testing.assert_array_equal(stack.data[:-1, 0, 5:7, 5:7], np.float32(-12.0))
        np.testing.assert_array_equal(stack.data[-1, 0, 5:7, 5:7], np.float32(-20.0))

    def test_seasonal_sinusoid_keyed_to_day_of_year(self):
        spec = zero_noise_spec(seasonal_amplitude_dB=2.0, n_dates=5)
        stack, _ = synth_scene(spec)
        doy = np.array(
            [datetime.date.fromisoformat(d).timetuple().tm_yday for d in stack.dates],
            dtype=float,
        )
        seasonal = 2.0 * np.sin(2.0 * math.pi * doy / 365.25)
        for k in range(5):
            expected = np.float32(seasonal[k] + -12.0)
            np.testing.assert_array_equal(stack.data[k, 0, :, 4:], expected)

    def test_no_nodata_and_georef_from_spec(self):
        spec = zero_noise_spec(resolution_m=10.0, origin_x=1000.0, origin_y=2000.0, epsg=32601)
        stack, reference = synth_scene(spec)
        assert not stack.nodata_mask.any()
        assert stack.resolution_m == 10.0
        assert stack.georef.pixel_size == 10.0
        assert stack.georef.origin_x == 1000.0
        assert stack.georef.origin_y == 2000.0
        assert stack.georef.epsg == 32601
        assert reference.georef == stack.georef
        assert reference.labels.dtype == np.uint8

    def test_noise_scale(self):
        spec = zero_noise_spec(
            height=64, width=64, speckle_sigma_dB=1.0, flood_polygon=SceneSpec().flood_polygon
        )
        stack, _ = synth_scene(spec)
        background = stack.data[:-1, 0, :, 40:].astype(np.float64)
        assert abs(background.std() - 1.0) < 0.02
        assert abs(background.mean() + 12.0) < 0.05


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        spec = SceneSpec(seed=11)
        stack_a, ref_a = synth_scene(spec)
        stack_b, ref_b = synth_scene(spec)
        np.testing.assert_array_equal(stack_a.data, stack_b.data)
        np.testing.assert_array_equal(ref_a.labels, ref_b.labels)
        assert stack_digest(stack_a) == stack_digest(stack_b)

    def test_seed_changes_data_not_labels(self):
        stack_a, ref_a = synth_scene(SceneSpec(seed=0))
        stack_b, ref_b = synth_scene(SceneSpec(seed=1))
        assert stack_digest(stack_a) != stack_digest(stack_b)
        np.testing.assert_array_equal(ref_a.labels, ref_b.labels)


class TestSpecValidation:
    def test_defaults_valid(self):
        SceneSpec()

    @pytest.mark.parametrize(
        "overrides, match",
        [
            ({"height": 1}, "at least 2x2"),
            ({"n_dates": 1}, "at least 2 dates"),
            ({"speckle_sigma_dB": -0.5}, "must be >= 0"),
            ({"channels": ("VV", "VH", "HH"), "mean_level_dB": (-12.0, -18.0, -20.0)}, "channels"),
            ({"mean_level_dB": (-12.0,)}, "mean levels"),
            ({"seed": -1}, "seed"),
            ({"event_date": "2022-13-01"}, "event_date"),
            ({"flood_polygon": ((0.0, 0.0), (4.0, 4.0))}, "at least 3 vertices"),
            ({"flood_polygon": ((0.0, 0.0), (2.0, 0.0), (4.0, 0.0))}, "zero area"),
            ({"flood_polygon": ((0.0, 0.0), (65.0, 0.0), (0.0, 65.0))}, "outside"),
        ],
    )
    def test_rejects(self, overrides, match):
        with pytest.raises(SceneSpecError, match=match):
            SceneSpec(**overrides)

    def test_water_polygon_validated_too(self):
        with pytest.raises(SceneSpecError, match="water_polygon"):
            SceneSpec(water_polygon=((0.0, 0.0), (1.0, 0.0), (2.0, 0.0)))


class TestSpecIO:
    def test_from_mapping_accepts_json_style_lists(self):
        spec = SceneSpec.from_mapping(
            {
                "height": 16,
                "width": 16,
                "flood_polygon": [[0, 0], [8, 0], [8, 16], [0, 16]],
                "channels": ["VV"],
                "mean_level_dB": [-12.0],
            }
        )
        assert spec.flood_polygon == ((0.0, 0.0), (8.0, 0.0), (8.0, 16.0), (0.0, 16.0))
        assert spec.channels == ("VV",)

    def test_from_mapping_rejects_unknown_fields(self):
        with pytest.raises(SceneSpecError, match="wdith"):
            SceneSpec.from_mapping({"wdith": 32})

    def test_json_round_trip(self, tmp_path):
        spec = SceneSpec(
            height=16,
            width=16,
            n_dates=6,
            seed=5,
            flood_polygon=((0.0, 0.0), (8.0, 0.0), (8.0, 16.0), (0.0, 16.0)),
            water_polygon=((12.0, 0.0), (16.0, 0.0), (16.0, 16.0), (12.0, 16.0)),
        )
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(dataclasses.asdict(spec)))
        assert SceneSpec.from_json(path) == spec

    def test_from_json_errors(self, tmp_path):
        with pytest.raises(SceneSpecError, match="not found"):
            SceneSpec.from_json(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(SceneSpecError, match="not valid JSON"):
            SceneSpec.from_json(bad)
        listdoc = tmp_path / "list.json"
        listdoc.write_text("[1, 2]")
        with pytest.raises(SceneSpecError, match="JSON object"):
            SceneSpec.from_json(listdoc)
