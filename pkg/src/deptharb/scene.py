"""Scene specifications: layout parsing, box rasterization, occlusion pairing.

A scene is a pixel grid plus an ordered list of objects, each carrying a
normalized bounding box and a relative depth in [0, 1] (smaller depth means
closer to the camera).  Everything downstream consumes the binary box masks
produced here and the foreground/background pairs derived from depth order
and box overlap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

GUIDANCE_CONFIG_KEYS = (
    "lambda0",
    "alpha",
    "tau",
    "lambda_ortho",
    "lambda_compact",
    "epsilon",
    "eta0",
    "eta_decay",
    "stage1_fraction",
    "total_steps",
)


class SceneError(ValueError):
    """Raised for malformed or invalid scene input."""


@dataclass(frozen=True)
class SceneObject:
    """One layout object: id, text label, normalized bbox, relative depth."""

    id: int
    label: str
    bbox: tuple[float, float, float, float]  # (x_min, y_min, x_max, y_max)
    depth: float

    def __post_init__(self) -> None:
        x0, y0, x1, y1 = self.bbox
        if self.id < 0:
            raise SceneError(f"object id must be non-negative, got {self.id}")
        if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
            raise SceneError(f"invalid normalized bbox {self.bbox}")
        if not 0.0 <= self.depth <= 1.0:
            raise SceneError(f"depth {self.depth} outside [0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    """Validated scene: grid dimensions plus objects in file order."""

    grid_height: int
    grid_width: int
    objects: tuple[SceneObject, ...]

    def __post_init__(self) -> None:
        if self.grid_height < 2 or self.grid_width < 2:
            raise SceneError(
                f"grid must be at least 2x2, got {self.grid_height}x{self.grid_width}"
            )
        if not self.objects:
            raise SceneError("scene needs at least one object")
        ids = [obj.id for obj in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError(f"object ids are not unique: {ids}")

    def __len__(self) -> int:
        return len(self.objects)

    def index_of(self, object_id: int) -> int:
        for k, obj in enumerate(self.objects):
            if obj.id == object_id:
                return k
        raise SceneError(f"unknown object id {object_id}")

    def depths(self) -> np.ndarray:
        return np.array([obj.depth for obj in self.objects], dtype=np.float64)


@dataclass(frozen=True, order=True)
class OcclusionPair:
    """Ordered (foreground, background) object-id pair with strict depth order."""

    foreground_id: int
    background_id: int


def _require(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise SceneError(f"{where}: {message}")


def _as_number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _parse_object(raw: Any, index: int) -> SceneObject:
    where = f"objects[{index}]"
    _require(isinstance(raw, dict), where, "expected an object")
    _require("id" in raw, f"{where}.id", "missing")
    oid = raw["id"]
    _require(
        isinstance(oid, int) and not isinstance(oid, bool) and oid >= 0,
        f"{where}.id",
        f"expected a non-negative integer, got {oid!r}",
    )
    label = raw.get("label", "")
    _require(isinstance(label, str), f"{where}.label", "expected a string")

    _require("bbox" in raw, f"{where}.bbox", "missing")
    bbox_raw = raw["bbox"]
    _require(
        isinstance(bbox_raw, (list, tuple)) and len(bbox_raw) == 4,
        f"{where}.bbox",
        "expected [x_min, y_min, x_max, y_max]",
    )
    bbox = tuple(_as_number(v, f"{where}.bbox") for v in bbox_raw)
    x0, y0, x1, y1 = bbox
    for coord in bbox:
        _require(0.0 <= coord <= 1.0, f"{where}.bbox", f"coordinate {coord} outside [0, 1]")
    _require(x0 < x1, f"{where}.bbox", f"x_min {x0} must be < x_max {x1}")
    _require(y0 < y1, f"{where}.bbox", f"y_min {y0} must be < y_max {y1}")

    _require("depth" in raw, f"{where}.depth", "missing")
    depth = _as_number(raw["depth"], f"{where}.depth")
    _require(0.0 <= depth <= 1.0, f"{where}.depth", f"depth {depth} outside [0, 1]")

    return SceneObject(id=oid, label=label, bbox=bbox, depth=depth)


def parse_scene_with_config(text: str) -> tuple[SceneSpec, dict[str, float]]:
    """Parse a scene file, returning the scene and any config overrides it carries."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"malformed scene JSON: {exc}") from exc
    _require(isinstance(doc, dict), "scene", "top level must be a JSON object")

    _require("grid" in doc, "grid", "missing")
    grid = doc["grid"]
    _require(isinstance(grid, dict), "grid", "expected an object")
    for key in ("height", "width"):
        _require(key in grid, f"grid.{key}", "missing")
        value = grid[key]
        _require(
            isinstance(value, int) and not isinstance(value, bool) and value >= 2,
            f"grid.{key}",
            f"expected an integer >= 2, got {value!r}",
        )
    height, width = grid["height"], grid["width"]

    _require("objects" in doc, "objects", "missing")
    raw_objects = doc["objects"]
    _require(isinstance(raw_objects, list) and len(raw_objects) >= 1, "objects", "need at least one object")
    objects = tuple(_parse_object(raw, i) for i, raw in enumerate(raw_objects))

    seen: set[int] = set()
    for i, obj in enumerate(objects):
        _require(obj.id not in seen, f"objects[{i}].id", f"duplicate id {obj.id}")
        seen.add(obj.id)

    overrides: dict[str, float] = {}
    if "config" in doc:
        raw_cfg = doc["config"]
        _require(isinstance(raw_cfg, dict), "config", "expected an object")
        for key, value in raw_cfg.items():
            _require(key in GUIDANCE_CONFIG_KEYS, f"config.{key}", "unknown config key")
            if key == "total_steps":
                _require(
                    isinstance(value, int) and not isinstance(value, bool),
                    f"config.{key}",
                    f"expected an integer, got {value!r}",
                )
                overrides[key] = value
            else:
                overrides[key] = _as_number(value, f"config.{key}")

    return SceneSpec(grid_height=height, grid_width=width, objects=objects), overrides


def parse_scene(text: str) -> SceneSpec:
    """Parse and validate a scene file (see the README for the schema)."""
    return parse_scene_with_config(text)[0]


def read_scene(path: str) -> tuple[SceneSpec, dict[str, float]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scene_with_config(fh.read())


def rasterize_mask(
    bbox: tuple[float, float, float, float], height: int, width: int
) -> np.ndarray:
    """Rasterize a normalized box to a binary (height, width) float64 mask.

    A pixel is inside iff its center ((x+0.5)/W, (y+0.5)/H) satisfies
    x_min <= cx < x_max and y_min <= cy < y_max.  Half-open intervals keep
    shared box edges from being claimed twice.
    """
    x0, y0, x1, y1 = bbox
    cx = (np.arange(width, dtype=np.float64) + 0.5) / width
    cy = (np.arange(height, dtype=np.float64) + 0.5) / height
    cols = (cx >= x0) & (cx < x1)
    rows = (cy >= y0) & (cy < y1)
    return (rows[:, None] & cols[None, :]).astype(np.float64)


def scene_masks(scene: SceneSpec) -> np.ndarray:
    """Stack of per-object rasterized box masks, shape (K, H, W)."""
    return np.stack(
        [rasterize_mask(obj.bbox, scene.grid_height, scene.grid_width) for obj in scene.objects]
    )


def _boxes_overlap(a: tuple[float, ...], b: tuple[float, ...]) -> bool:
    # strict inequalities: touching edges do not count as overlap
    return (
        min(a[2], b[2]) - max(a[0], b[0]) > 0.0
        and min(a[3], b[3]) - max(a[1], b[1]) > 0.0
    )


def derive_occlusion_pairs(scene: SceneSpec) -> list[OcclusionPair]:
    """Foreground/background pairs from box overlap and strict depth order.

    One pair per unordered object pair whose boxes overlap with positive area
    and whose depths differ strictly; the smaller-depth object is the
    foreground.  Equal-depth overlaps yield no pair.  Output is sorted by
    (foreground_id, background_id).
    """
    pairs: list[OcclusionPair] = []
    objs = scene.objects
    for a in range(len(objs)):
        for b in range(a + 1, len(objs)):
            if not _boxes_overlap(objs[a].bbox, objs[b].bbox):
                continue
            if objs[a].depth == objs[b].depth:
                continue
            fg, bg = (objs[a], objs[b]) if objs[a].depth < objs[b].depth else (objs[b], objs[a])
            pairs.append(OcclusionPair(foreground_id=fg.id, background_id=bg.id))
    pairs.sort()
    return pairs


def canonical_scene() -> SceneSpec:
    """The two-object overlapping scene used throughout the test suite."""
    return SceneSpec(
        grid_height=64,
        grid_width=64,
        objects=(
            SceneObject(id=0, label="foreground", bbox=(0.15, 0.25, 0.65, 0.85), depth=0.2),
            SceneObject(id=1, label="background", bbox=(0.35, 0.15, 0.90, 0.80), depth=0.8),
        ),
    )
