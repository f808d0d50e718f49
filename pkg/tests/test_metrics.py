from __future__ import annotations

import numpy as np
import pytest

from deptharb import (
    AttentionField,
    OcclusionPair,
    SceneObject,
    SceneSpec,
    derive_occlusion_pairs,
    focr,
    layout_miou,
    mask_iou,
    rasterize_mask,
)

from conftest import dyadic_field


def box_indicator_field(scene: SceneSpec, amplitudes=None) -> AttentionField:
    maps = []
    for k, obj in enumerate(scene.objects):
        amp = 1.0 if amplitudes is None else amplitudes[k]
        maps.append(amp * rasterize_mask(obj.bbox, scene.grid_height, scene.grid_width))
    return AttentionField.from_maps(maps)


class TestMaskIou:
    def test_identical(self):
        m = rasterize_mask((0.2, 0.2, 0.8, 0.8), 16, 16)
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = rasterize_mask((0.0, 0.0, 0.4, 0.4), 16, 16)
        b = rasterize_mask((0.6, 0.6, 1.0, 1.0), 16, 16)
        assert mask_iou(a, b) == 0.0

    def test_half_overlap_counted(self):
        # left half of a full-width box: intersection/union counted by hand
        box = rasterize_mask((0.0, 0.25, 1.0, 0.75), 16, 16)
        left = rasterize_mask((0.0, 0.25, 0.5, 0.75), 16, 16)
        inter = int(np.sum((box > 0) & (left > 0)))
        union = int(np.sum((box > 0) | (left > 0)))
        assert mask_iou(left, box) == inter / union == 0.5

    def test_two_empty_masks_defined_as_zero(self):
        assert mask_iou(np.zeros((4, 4)), np.zeros((4, 4))) == 0.0


class TestLayoutMiou:
    def test_exact_box_maps_score_one(self, two_object_scene):
        field = box_indicator_field(two_object_scene)
        result = layout_miou(field, two_object_scene, 0.5)
        assert result.per_object == {0: 1.0, 1: 1.0}
        assert result.all == 1.0
        assert result.fg == 1.0 and result.bg == 1.0

    def test_disjoint_mass_scores_zero(self):
        scene = SceneSpec(
            grid_height=16,
            grid_width=16,
            objects=(SceneObject(id=0, label="", bbox=(0.5, 0.5, 1.0, 1.0), depth=0.5),),
        )
        values = rasterize_mask((0.0, 0.0, 0.4, 0.4), 16, 16)
        result = layout_miou(AttentionField.from_maps([values]), scene, 0.5)
        assert result.per_object[0] == 0.0

    def test_half_coverage(self):
        scene = SceneSpec(
            grid_height=16,
            grid_width=16,
            objects=(SceneObject(id=0, label="", bbox=(0.0, 0.25, 1.0, 0.75), depth=0.5),),
        )
        # attention covers only the left half of the box
        values = rasterize_mask((0.0, 0.25, 0.5, 0.75), 16, 16)
        result = layout_miou(AttentionField.from_maps([values]), scene, 0.5)
        box = rasterize_mask(scene.objects[0].bbox, 16, 16)
        expected = np.sum((values > 0) & (box > 0)) / np.sum((values > 0) | (box > 0))
        assert result.per_object[0] == expected == 0.5

    def test_fg_bg_split_uses_pair_roles(self):
        scene = SceneSpec(
            grid_height=16,
            grid_width=16,
            objects=(
                SceneObject(id=0, label="", bbox=(0.1, 0.1, 0.5, 0.5), depth=0.1),
                SceneObject(id=1, label="", bbox=(0.3, 0.3, 0.7, 0.7), depth=0.5),
                SceneObject(id=2, label="", bbox=(0.55, 0.55, 0.95, 0.95), depth=0.9),
            ),
        )
        pairs = derive_occlusion_pairs(scene)
        # object 1 is background to 0 and foreground to 2: foreground wins
        assert OcclusionPair(0, 1) in pairs and OcclusionPair(1, 2) in pairs
        field = box_indicator_field(scene)
        result = layout_miou(field, scene, 0.5)
        assert result.fg == 1.0  # objects 0 and 1
        assert result.bg == 1.0  # object 2
        assert result.all == 1.0

    def test_no_pairs_means_no_fg_aggregate(self):
        scene = SceneSpec(
            grid_height=16,
            grid_width=16,
            objects=(SceneObject(id=0, label="", bbox=(0.1, 0.1, 0.9, 0.9), depth=0.5),),
        )
        result = layout_miou(box_indicator_field(scene), scene, 0.5)
        assert result.fg is None
        assert result.bg == result.all

    def test_tiny_threshold_predicts_everything(self):
        scene = SceneSpec(
            grid_height=16,
            grid_width=16,
            objects=(SceneObject(id=0, label="", bbox=(0.25, 0.25, 0.75, 0.75), depth=0.5),),
        )
        rng = np.random.default_rng(13)
        values = rng.uniform(0.5, 2.0, size=(16, 16))  # strictly positive
        result = layout_miou(AttentionField.from_maps([values]), scene, 1e-9)
        box = rasterize_mask(scene.objects[0].bbox, 16, 16)
        assert result.per_object[0] == box.sum() / (16 * 16)

    def test_aggregates_are_means(self, two_object_scene):
        rng = np.random.default_rng(15)
        field = AttentionField(maps=rng.uniform(0, 2, (2, 16, 16)))
        result = layout_miou(field, two_object_scene, 0.5)
        values = list(result.per_object.values())
        assert result.all == pytest.approx(np.mean(values), abs=1e-15)
        assert 0.0 <= result.all <= 1.0


class TestFocr:
    def test_foreground_dominant_everywhere(self, two_object_scene):
        field = box_indicator_field(two_object_scene, amplitudes=[2.0, 1.0])
        result = focr(field, two_object_scene, derive_occlusion_pairs(two_object_scene))
        assert result.per_pair[0].focr == 1.0
        assert result.mean == 1.0

    def test_background_dominant_everywhere(self, two_object_scene):
        field = box_indicator_field(two_object_scene, amplitudes=[1.0, 3.0])
        result = focr(field, two_object_scene, derive_occlusion_pairs(two_object_scene))
        assert result.per_pair[0].focr == 0.0
        assert result.mean == 0.0

    def test_exact_tie_goes_to_closer_object(self, two_object_scene):
        # equal attention in the intersection: depth 0.2 object wins every pixel
        field = box_indicator_field(two_object_scene, amplitudes=[1.0, 1.0])
        result = focr(field, two_object_scene, derive_occlusion_pairs(two_object_scene))
        assert result.per_pair[0].focr == 1.0

    def test_empty_pairs_reports_absent_mean(self, two_object_scene):
        field = box_indicator_field(two_object_scene)
        result = focr(field, two_object_scene, [])
        assert result.per_pair == ()
        assert result.mean is None

    def test_values_in_unit_interval(self, two_object_scene):
        rng = np.random.default_rng(29)
        pairs = derive_occlusion_pairs(two_object_scene)
        for _ in range(10):
            field = AttentionField(maps=rng.uniform(0, 2, (2, 16, 16)))
            result = focr(field, two_object_scene, pairs)
            assert 0.0 <= result.per_pair[0].focr <= 1.0

    def test_monotone_in_foreground_scale(self, two_object_scene):
        rng = np.random.default_rng(33)
        maps = rng.uniform(0, 2, (2, 16, 16))
        pairs = derive_occlusion_pairs(two_object_scene)
        values = []
        for c in (1.0, 2.0, 4.0, 8.0):
            scaled = maps.copy()
            scaled[0] *= c
            values.append(focr(AttentionField(maps=scaled), two_object_scene, pairs).per_pair[0].focr)
        assert all(b >= a for a, b in zip(values, values[1:]))


class TestMetricReport:
    def test_report_dict_invariants(self, two_object_scene):
        from deptharb import GuidanceConfig, build_metric_report

        rng = np.random.default_rng(85)
        field = AttentionField(maps=rng.uniform(0, 2, (2, 16, 16)))
        report = build_metric_report(
            field, two_object_scene, GuidanceConfig(), stage=1,
            rel_threshold=0.5, config_echo={"mode": "raster"}, seed=4,
        )
        doc = report.to_json_dict()
        assert set(doc.keys()) == {
            "losses", "per_object", "per_pair", "metrics", "config", "seed",
        }
        ious = [obj["iou"] for obj in doc["per_object"]]
        assert all(0.0 <= v <= 1.0 for v in ious)
        assert doc["metrics"]["miou_all"] == pytest.approx(np.mean(ious), abs=1e-15)
        focrs = [p["focr"] for p in doc["per_pair"] if p["focr"] is not None]
        assert all(0.0 <= v <= 1.0 for v in focrs)
        if focrs:
            assert doc["metrics"]["focr_mean"] == pytest.approx(np.mean(focrs), abs=1e-15)
        assert doc["metrics"]["bor"] is None and doc["metrics"]["fbs"] is None
        assert doc["seed"] == 4


class TestScalingInvariance:
    def test_metrics_unchanged_under_common_scaling(self, two_object_scene):
        field = dyadic_field((2, 16, 16), seed=77)
        pairs = derive_occlusion_pairs(two_object_scene)
        base_focr = focr(field, two_object_scene, pairs)
        base_miou = layout_miou(field, two_object_scene, 0.5)
        for c in (2.0, 3.0):
            scaled = field.scaled(c)
            assert focr(scaled, two_object_scene, pairs) == base_focr
            assert layout_miou(scaled, two_object_scene, 0.5) == base_miou
