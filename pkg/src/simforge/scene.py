"""Scene comprehension: RGB-D observation + masks -> robot-frame 3D boxes.

A scene bundle is a directory of sensor data:

    image.png    8-bit RGB
    depth.f32    row-major float32, depth units per meta depth_scale
    meta.json    {width, height, fx, fy, cx, cy, depth_scale, calib: 4x4}
    masks.json   [{crop_id, rle: [[start, len], ...], bbox2d: [u0, v0, u1, v1]}]
    truth.json   optional ground-truth labels {crop_id: asset_id | "NO_OBJECT"}

This module turns the bundle into a SceneDescription: one object per mask,
each with a fitted axis-aligned bounding box in the robot frame and a tight
masked crop image for downstream description and matching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionMismatchError, EmptyProjectionError, SchemaError

# Distinguished outcome for crops that match no catalog asset.
NO_OBJECT = "NO_OBJECT"

# Gray value behind masked-out pixels in exported crops.
CROP_BACKGROUND = 128

DEFAULT_CLIP_FRACTION = 0.01


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the depth unit scale."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 1.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise SchemaError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise SchemaError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )
        if self.depth_scale <= 0:
            raise SchemaError(f"depth_scale must be positive, got {self.depth_scale}")


class RigidTransform:
    """4x4 homogeneous transform, row-major, meters."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise SchemaError(f"transform must be 4x4, got shape {m.shape}")
        if not np.allclose(m[3], (0.0, 0.0, 0.0, 1.0), atol=1e-9):
            raise SchemaError("transform bottom row must be (0, 0, 0, 1)")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise SchemaError("transform rotation block is not orthonormal")
        self.matrix = m

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) point array."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:3, :3].T + self.matrix[:3, 3]

    def __eq__(self, other):
        return isinstance(other, RigidTransform) and np.array_equal(self.matrix, other.matrix)


@dataclass(frozen=True)
class SegmentMask:
    """Run-length encoded pixel membership over the full image.

    Runs index row-major flattened pixels: start = v * width + u.
    """

    crop_id: str
    rle: tuple[tuple[int, int], ...]
    crop_bbox_2d: tuple[int, int, int, int]

    def pixel_indices(self, width: int, height: int) -> np.ndarray:
        """Flat pixel indices covered by the mask, validated against bounds."""
        total = width * height
        if not self.rle:
            raise SchemaError(f"mask {self.crop_id!r} has no runs")
        chunks = []
        for start, length in self.rle:
            if length <= 0 or start < 0 or start + length > total:
                raise SchemaError(
                    f"mask {self.crop_id!r} run ({start}, {length}) outside {width}x{height} image"
                )
            chunks.append(np.arange(start, start + length, dtype=np.int64))
        return np.concatenate(chunks)


@dataclass(frozen=True)
class Bbox3D:
    """Axis-aligned box in the robot frame, meters."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.min_corner, self.max_corner)):
            raise SchemaError(f"bbox min {self.min_corner} exceeds max {self.max_corner}")

    @property
    def size(self) -> tuple[float, float, float]:
        return tuple(hi - lo for lo, hi in zip(self.min_corner, self.max_corner))

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple((lo + hi) / 2.0 for lo, hi in zip(self.min_corner, self.max_corner))

    def contains(self, point) -> bool:
        return all(lo <= p <= hi for p, lo, hi in zip(point, self.min_corner, self.max_corner))

    def to_json(self) -> dict:
        return {"min": list(self.min_corner), "max": list(self.max_corner)}

    @classmethod
    def from_json(cls, data: dict) -> "Bbox3D":
        return cls(tuple(data["min"]), tuple(data["max"]))


@dataclass
class SceneObject:
    """One segmented candidate object."""

    crop_id: str
    bbox: Bbox3D | None
    crop_image_ref: str
    description: str | None = None
    matched_asset: str | None = None  # catalog asset id or NO_OBJECT
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        data = {
            "crop_id": self.crop_id,
            "bbox": self.bbox.to_json() if self.bbox is not None else None,
            "crop_image": self.crop_image_ref,
        }
        if self.description is not None:
            data["description"] = self.description
        if self.matched_asset is not None:
            data["matched_asset"] = self.matched_asset
        if self.flags:
            data["flags"] = list(self.flags)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "SceneObject":
        bbox = Bbox3D.from_json(data["bbox"]) if data.get("bbox") is not None else None
        return cls(
            crop_id=data["crop_id"],
            bbox=bbox,
            crop_image_ref=data["crop_image"],
            description=data.get("description"),
            matched_asset=data.get("matched_asset"),
            flags=list(data.get("flags", [])),
        )


@dataclass
class SceneDescription:
    """All observed objects of one scene, the bridge from pixels to simulation."""

    scene_id: str
    image_ref: str
    objects: list[SceneObject]

    def matched_assets(self) -> list[str]:
        """Asset ids matched to real objects, in object order, deduplicated."""
        seen: list[str] = []
        for obj in self.objects:
            a = obj.matched_asset
            if a is not None and a != NO_OBJECT and a not in seen:
                seen.append(a)
        return seen

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "image": self.image_ref,
            "objects": [o.to_json() for o in self.objects],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SceneDescription":
        return cls(
            scene_id=data["scene_id"],
            image_ref=data["image"],
            objects=[SceneObject.from_json(o) for o in data["objects"]],
        )

    def save(self, path: Path | str):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "SceneDescription":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SceneBundle:
    """In-memory view of a scene bundle directory."""

    scene_id: str
    root: Path
    image: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float32, meters after depth_scale
    cam: CameraModel
    calib: RigidTransform
    masks: list[SegmentMask]
    truth: dict[str, str] | None = None

    @property
    def image_path(self) -> Path:
        return self.root / "image.png"


def load_bundle(bundle_dir: Path | str) -> SceneBundle:
    """Read and validate a scene bundle directory."""
    root = Path(bundle_dir)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise SchemaError(f"bundle {root} has no meta.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    try:
        cam = CameraModel(
            fx=float(meta["fx"]),
            fy=float(meta["fy"]),
            cx=float(meta["cx"]),
            cy=float(meta["cy"]),
            width=int(meta["width"]),
            height=int(meta["height"]),
            depth_scale=float(meta.get("depth_scale", 1.0)),
        )
        calib = RigidTransform(meta["calib"])
    except KeyError as exc:
        raise SchemaError(f"meta.json missing key {exc}", field=str(exc)) from exc

    raw = np.fromfile(root / "depth.f32", dtype=np.float32)
    if raw.size != cam.width * cam.height:
        raise DimensionMismatchError(
            f"depth.f32 has {raw.size} values, expected {cam.width * cam.height}"
        )
    depth = raw.reshape(cam.height, cam.width) * cam.depth_scale

    image = np.asarray(Image.open(root / "image.png").convert("RGB"))
    if image.shape[:2] != (cam.height, cam.width):
        raise DimensionMismatchError(
            f"image.png is {image.shape[1]}x{image.shape[0]}, meta says {cam.width}x{cam.height}"
        )

    masks_data = json.loads((root / "masks.json").read_text(encoding="utf-8"))
    masks = []
    seen_ids = set()
    for entry in masks_data:
        crop_id = str(entry["crop_id"])
        if crop_id in seen_ids:
            raise SchemaError(f"duplicate crop_id {crop_id!r} in masks.json")
        seen_ids.add(crop_id)
        rle = tuple((int(s), int(n)) for s, n in entry["rle"])
        bbox2d = tuple(int(v) for v in entry["bbox2d"])
        masks.append(SegmentMask(crop_id=crop_id, rle=rle, crop_bbox_2d=bbox2d))
    if not masks:
        raise SchemaError(f"bundle {root} has no masks")

    truth = None
    truth_path = root / "truth.json"
    if truth_path.exists():
        truth = {str(k): str(v) for k, v in json.loads(truth_path.read_text(encoding="utf-8")).items()}

    return SceneBundle(
        scene_id=root.name,
        root=root,
        image=image,
        depth=depth,
        cam=cam,
        calib=calib,
        masks=masks,
        truth=truth,
    )


def project_mask_to_points(
    mask: SegmentMask,
    depth: np.ndarray,
    cam: CameraModel,
    calib: RigidTransform,
) -> np.ndarray:
    """Back-project the masked pixels with valid depth into the robot frame.

    Camera-frame coordinates follow the pinhole model
    X = (u - cx) * d / fx, Y = (v - cy) * d / fy, Z = d; the calibrated
    transform then maps them into the robot frame. Pixels with zero,
    negative, or non-finite depth are dropped.
    """
    if depth.shape != (cam.height, cam.width):
        raise DimensionMismatchError(
            f"depth is {depth.shape}, camera expects ({cam.height}, {cam.width})"
        )
    idx = mask.pixel_indices(cam.width, cam.height)
    u = (idx % cam.width).astype(np.float64)
    v = (idx // cam.width).astype(np.float64)
    d = depth.reshape(-1)[idx].astype(np.float64)

    valid = np.isfinite(d) & (d > 0)
    if not valid.any():
        raise EmptyProjectionError(f"mask {mask.crop_id!r} has no pixels with valid depth")
    u, v, d = u[valid], v[valid], d[valid]

    cam_pts = np.stack(
        [(u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d],
        axis=1,
    )
    return calib.apply(cam_pts)


def fit_bbox(points: np.ndarray, clip_fraction: float = DEFAULT_CLIP_FRACTION) -> Bbox3D:
    """Fit an axis-aligned box at symmetric per-axis quantiles.

    clip_fraction 0 gives the exact min/max box; a small positive fraction
    discards depth-noise outliers deterministically and distribution-free.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionMismatchError(f"expected (N, 3) points, got {pts.shape}")
    if pts.shape[0] == 0:
        raise EmptyProjectionError("cannot fit a box to an empty point set")
    if not (0 <= clip_fraction < 0.5):
        raise ValueError(f"clip_fraction must be in [0, 0.5), got {clip_fraction}")
    if clip_fraction == 0:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
    else:
        lo, hi = np.quantile(pts, [clip_fraction, 1.0 - clip_fraction], axis=0)
    return Bbox3D(tuple(map(float, lo)), tuple(map(float, hi)))


def extract_crop(image: np.ndarray, mask: SegmentMask, cam: CameraModel) -> np.ndarray:
    """Tight sub-image of the mask with non-mask pixels painted neutral gray."""
    u0, v0, u1, v1 = mask.crop_bbox_2d
    u0, v0 = max(0, u0), max(0, v0)
    u1, v1 = min(cam.width - 1, u1), min(cam.height - 1, v1)
    if u1 < u0 or v1 < v0:
        raise SchemaError(f"mask {mask.crop_id!r} has an empty 2D bbox")
    member = np.zeros(cam.height * cam.width, dtype=bool)
    member[mask.pixel_indices(cam.width, cam.height)] = True
    member = member.reshape(cam.height, cam.width)

    crop = np.full((v1 - v0 + 1, u1 - u0 + 1, 3), CROP_BACKGROUND, dtype=np.uint8)
    window = member[v0 : v1 + 1, u0 : u1 + 1]
    crop[window] = image[v0 : v1 + 1, u0 : u1 + 1][window]
    return crop


def build_scene_description(
    bundle: SceneBundle,
    out_dir: Path | str,
    clip_fraction: float = DEFAULT_CLIP_FRACTION,
) -> SceneDescription:
    """One SceneObject per mask: fitted robot-frame box plus exported crop.

    Masks whose projection is empty (all pixels invalid depth) are kept and
    flagged `projection_empty` rather than silently dropped.
    """
    out = Path(out_dir)
    crops_dir = out / "crops"
    crops_dir.mkdir(parents=True, exist_ok=True)

    objects = []
    for mask in bundle.masks:
        crop = extract_crop(bundle.image, mask, bundle.cam)
        crop_path = crops_dir / f"{mask.crop_id}.png"
        Image.fromarray(crop).save(crop_path)

        flags: list[str] = []
        bbox = None
        try:
            points = project_mask_to_points(mask, bundle.depth, bundle.cam, bundle.calib)
            bbox = fit_bbox(points, clip_fraction)
        except EmptyProjectionError:
            flags.append("projection_empty")
        objects.append(
            SceneObject(
                crop_id=mask.crop_id,
                bbox=bbox,
                crop_image_ref=str(crop_path),
                flags=flags,
            )
        )

    return SceneDescription(
        scene_id=bundle.scene_id,
        image_ref=str(bundle.image_path),
        objects=objects,
    )
