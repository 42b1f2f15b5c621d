"""Dataset ingestion and synthetic test scenes.

Covers three things: loading Blender-format pose/image bundles
(``transforms_*.json`` + PNGs), generating analytic sphere scenes that serve
as exact ground truth for the renderer, and checkpoint persistence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

MISS = float("inf")

CHECKPOINT_VERSION = 1

# De-facto bounds for the Blender synthetic scenes.
DEFAULT_NEAR = 2.0
DEFAULT_FAR = 6.0

POSE_ORTHO_TOL = 1e-5


class DatasetError(ValueError):
    """Raised for missing files or invalid poses during dataset loading."""


@dataclass
class CameraFrame:
    """One posed image: H x W x 3 floats in [0, 1] plus camera-to-world pose."""

    image: np.ndarray
    pose: np.ndarray
    focal: float

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=np.float32)
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DatasetError(f"image must be HxWx3, got {self.image.shape}")
        if self.pose.shape != (4, 4):
            raise DatasetError(f"pose must be 4x4, got {self.pose.shape}")
        rot = self.pose[:3, :3]
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > POSE_ORTHO_TOL:
            raise DatasetError(f"pose rotation not orthonormal (max |R^T R - I| = {err:.2e})")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise DatasetError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=np.float64)
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        if self.radius <= 0:
            raise ValueError("sphere radius must be > 0")
        if self.albedo.min() < 0 or self.albedo.max() > 1:
            raise ValueError("albedo must be in [0, 1]")


@dataclass
class SyntheticScene:
    """Lambertian spheres under one directional light, used as an exact oracle."""

    spheres: list[Sphere] = field(default_factory=list)
    light_dir: np.ndarray = None
    background: np.ndarray = None

    def __post_init__(self) -> None:
        if self.light_dir is None:
            self.light_dir = np.array([1.0, 1.0, 1.0])
        self.light_dir = np.asarray(self.light_dir, dtype=np.float64)
        self.light_dir = self.light_dir / np.linalg.norm(self.light_dir)
        if self.background is None:
            self.background = np.ones(3)
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.background.min() < 0 or self.background.max() > 1:
            raise ValueError("background must be in [0, 1]")

    def bounding_radius(self) -> float:
        if not self.spheres:
            return 1.0
        return max(float(np.linalg.norm(s.center)) + s.radius for s in self.spheres)


def default_sphere_scene() -> SyntheticScene:
    return SyntheticScene(
        spheres=[Sphere(np.zeros(3), 1.0, np.array([0.85, 0.30, 0.25]))],
        light_dir=np.array([0.5, 1.0, 0.8]),
        background=np.ones(3),
    )


def composite_background(rgba: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """Alpha-composite an RGBA image over a constant background color."""
    rgba = np.asarray(rgba, dtype=np.float32)
    if rgba.ndim != 3 or rgba.shape[2] != 4:
        raise ValueError(f"expected HxWx4, got {rgba.shape}")
    rgb, alpha = rgba[..., :3], rgba[..., 3:4]
    return rgb * alpha + np.asarray(bg, dtype=np.float32) * (1.0 - alpha)


def load_blender_dataset(root: str | Path, split: str,
                         background: np.ndarray | None = None,
                         ) -> tuple[list[CameraFrame], float, float]:
    """Load one split of a Blender-format dataset.

    Returns (frames, near, far).  Near/far come from optional top-level keys
    in the transforms file, falling back to the conventional 2.0 / 6.0.
    """
    root = Path(root)
    meta_path = root / f"transforms_{split}.json"
    if not meta_path.exists():
        raise DatasetError(f"missing transforms file: {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    bg = np.ones(3, dtype=np.float32) if background is None else np.asarray(background, np.float32)

    frames: list[CameraFrame] = []
    for entry in meta["frames"]:
        img_path = root / entry["file_path"]
        if img_path.suffix == "":
            img_path = img_path.with_suffix(".png")
        if not img_path.exists():
            raise DatasetError(f"missing image file: {img_path}")
        raw = np.asarray(Image.open(img_path), dtype=np.float32) / 255.0
        if raw.ndim == 2:
            raw = np.repeat(raw[..., None], 3, axis=2)
        image = composite_background(raw, bg) if raw.shape[2] == 4 else raw[..., :3]
        pose = np.asarray(entry["transform_matrix"], dtype=np.float64)
        focal = 0.5 * image.shape[1] / math.tan(0.5 * float(meta["camera_angle_x"]))
        frames.append(CameraFrame(image=image, pose=pose, focal=focal))

    near = float(meta.get("near", DEFAULT_NEAR))
    far = float(meta.get("far", DEFAULT_FAR))
    return frames, near, far


# -- analytic scene oracle ------------------------------------------------

def _sphere_hits(sphere: Sphere, origin: np.ndarray, direction: np.ndarray) -> list[float]:
    """All positive ray parameters where the ray meets the sphere surface."""
    oc = origin - sphere.center
    b = 2.0 * float(np.dot(oc, direction))
    c = float(np.dot(oc, oc)) - sphere.radius ** 2
    disc = b * b - 4.0 * c
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    return [t for t in ((-b - sq) / 2.0, (-b + sq) / 2.0) if t > 1e-9]


def analytic_ray_color(scene: SyntheticScene, origin: np.ndarray, direction: np.ndarray,
                       ) -> tuple[np.ndarray, float]:
    """Exact color and depth of the first surface a ray meets.

    Shading is Lambertian under the scene's single directional light, no
    shadows.  A ray that meets nothing returns (background, MISS).
    """
    best_t, best_sphere = MISS, None
    for sphere in scene.spheres:
        for t in _sphere_hits(sphere, origin, direction):
            if t < best_t:
                best_t, best_sphere = t, sphere
    if best_sphere is None:
        return scene.background.copy(), MISS
    point = origin + best_t * direction
    normal = (point - best_sphere.center) / best_sphere.radius
    shade = max(0.0, float(np.dot(normal, scene.light_dir)))
    return best_sphere.albedo * shade, best_t


def render_scene_image(scene: SyntheticScene, pose: np.ndarray, focal: float,
                       height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Render a full analytic image and depth map for one camera (vectorized)."""
    u, v = np.meshgrid(np.arange(width), np.arange(height))
    dirs_cam = np.stack([(u + 0.5 - width / 2) / focal,
                         -(v + 0.5 - height / 2) / focal,
                         -np.ones_like(u, dtype=np.float64)], axis=-1)
    dirs = dirs_cam @ pose[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origin = pose[:3, 3]

    image = np.broadcast_to(scene.background, (height, width, 3)).astype(np.float64).copy()
    depth = np.full((height, width), MISS)
    flat_dirs = dirs.reshape(-1, 3)
    best_t = np.full(flat_dirs.shape[0], np.inf)
    best_i = np.full(flat_dirs.shape[0], -1, dtype=np.int64)
    for i, sphere in enumerate(scene.spheres):
        oc = origin - sphere.center
        b = 2.0 * flat_dirs @ oc
        c = float(oc @ oc) - sphere.radius ** 2
        disc = b * b - 4.0 * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - sq) / 2.0
        t1 = (-b + sq) / 2.0
        t = np.where(t0 > 1e-9, t0, t1)
        hit = ok & (t > 1e-9) & (t < best_t)
        best_t[hit] = t[hit]
        best_i[hit] = i
    for i, sphere in enumerate(scene.spheres):
        mask = best_i == i
        if not mask.any():
            continue
        pts = origin + best_t[mask, None] * flat_dirs[mask]
        normals = (pts - sphere.center) / sphere.radius
        shade = np.maximum(0.0, normals @ scene.light_dir)
        image.reshape(-1, 3)[mask] = sphere.albedo * shade[:, None]
        depth.reshape(-1)[mask] = best_t[mask]
    return image.astype(np.float32), depth


def look_at_pose(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose looking from eye to target, camera looking down -z."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = true_up
    pose[:3, 2] = -forward
    pose[:3, 3] = eye
    return pose


def orbit_poses(n_views: int, radius: float, target: np.ndarray,
                elevation_deg: float = 30.0, azimuth_offset: float = 0.0,
                ) -> list[np.ndarray]:
    """Evenly spaced poses on a circle at fixed elevation, looking at target."""
    poses = []
    elev = math.radians(elevation_deg)
    for k in range(n_views):
        az = azimuth_offset + 2.0 * math.pi * k / n_views
        eye = target + radius * np.array([math.cos(elev) * math.cos(az),
                                          math.cos(elev) * math.sin(az),
                                          math.sin(elev)])
        poses.append(look_at_pose(eye, target))
    return poses


def scene_bounds(scene: SyntheticScene, orbit_radius: float) -> tuple[float, float]:
    """Near/far derived from the scene bounding sphere and the camera orbit."""
    bound = scene.bounding_radius()
    near = max(0.05, orbit_radius - 2.0 * bound)
    far = orbit_radius + 2.0 * bound
    return near, far


def render_synthetic_views(scene: SyntheticScene, n_views: int, height: int, width: int,
                           orbit_radius: float = 4.0, camera_angle_x: float = 0.6911,
                           azimuth_offset: float = 0.0,
                           ) -> list[CameraFrame]:
    """Analytic frames on a camera orbit around the scene centroid."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    if scene.spheres:
        target = np.mean([s.center for s in scene.spheres], axis=0)
    else:
        target = np.zeros(3)
    focal = 0.5 * width / math.tan(0.5 * camera_angle_x)
    frames = []
    for pose in orbit_poses(n_views, orbit_radius, target, azimuth_offset=azimuth_offset):
        image, _ = render_scene_image(scene, pose, focal, height, width)
        frames.append(CameraFrame(image=np.clip(image, 0.0, 1.0), pose=pose, focal=focal))
    return frames


def write_blender_dataset(scene: SyntheticScene, out_dir: str | Path,
                          splits: dict[str, int], height: int, width: int,
                          orbit_radius: float = 4.0, camera_angle_x: float = 0.6911,
                          write_depth: bool = True) -> None:
    """Write an analytic scene to disk in the Blender dataset layout.

    Azimuths are offset per split so the train/val/test pose sets are disjoint.
    """
    from .renderer import save_depth_png  # local import, avoids a cycle

    out_dir = Path(out_dir)
    near, far = scene_bounds(scene, orbit_radius)
    focal = 0.5 * width / math.tan(0.5 * camera_angle_x)
    offsets = {"train": 0.0, "val": 0.013, "test": 0.029}
    for split, n_views in splits.items():
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        target = (np.mean([s.center for s in scene.spheres], axis=0)
                  if scene.spheres else np.zeros(3))
        poses = orbit_poses(n_views, orbit_radius, target,
                            azimuth_offset=offsets.get(split, 0.0))
        frames_meta = []
        for k, pose in enumerate(poses):
            image, depth = render_scene_image(scene, pose, focal, height, width)
            name = f"r_{k}"
            Image.fromarray((np.clip(image, 0, 1) * 255).round().astype(np.uint8)).save(
                split_dir / f"{name}.png")
            if write_depth:
                save_depth_png(np.where(np.isinf(depth), far, depth),
                               split_dir / f"{name}_depth.png")
            frames_meta.append({"file_path": f"{split}/{name}",
                                "transform_matrix": pose.tolist()})
        meta = {"camera_angle_x": camera_angle_x, "near": near, "far": far,
                "frames": frames_meta}
        (out_dir / f"transforms_{split}.json").write_text(json.dumps(meta, indent=2))


# -- checkpoints ----------------------------------------------------------

class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be read back."""


def save_checkpoint(params: dict, config, step: int, path: str | Path) -> None:
    """Persist parameters + config + step; writes a plain-text sidecar too."""
    import torch

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"version": CHECKPOINT_VERSION,
                "params": params,
                "config": config.to_dict(),
                "step": int(step)}, path)
    sidecar = [f"step: {step}",
               f"encoder: {config.encoder.grammar}",
               f"ablation: {config.train.ablation.tag()}",
               "config: " + json.dumps(config.to_dict())]
    path.with_suffix(path.suffix + ".meta.txt").write_text("\n".join(sidecar) + "\n")


def load_checkpoint(path: str | Path):
    """Load (params, config, step); refuses truncated or mismatched files."""
    import torch
    from .config import RunConfig

    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint {path}: unsupported or missing version")
    return blob["params"], RunConfig.from_dict(blob["config"]), blob["step"]
