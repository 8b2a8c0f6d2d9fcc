"""Synthetic scene generation, dataset persistence, and external ingestion.

A scene is one object floating in front of a pinhole camera. Generation
draws a category shape, metric extents, and a pose; keeps the camera-facing
part of the surface as the clean cloud; and derives the coarse observation
from it by a depth-style corruption (per-sample ray bias, optional jitter
and a contiguous angular dropout). Everything is a pure function of the
seed, so a dataset can be regenerated bit-identically from its manifest.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (ChecksumMismatchError, CorruptManifestError,
                     DimensionMismatchError, InvalidConfigError,
                     UnknownCategoryError)
from .geom import Intrinsics, PointCloud, Pose9D, backproject, downsample, project
from .shapes import CATEGORIES, SYMMETRIC, sample_category_surface, sample_size

DIFFICULTIES = ("easy", "realistic")

# flat albedo per category, arbitrary but fixed
_ALBEDO = {
    "bottle": (0.30, 0.65, 0.30),
    "bowl":   (0.70, 0.55, 0.25),
    "camera": (0.35, 0.35, 0.40),
    "can":    (0.65, 0.25, 0.25),
    "laptop": (0.45, 0.45, 0.50),
    "mug":    (0.30, 0.45, 0.70),
}
_BACKGROUND = 0.08


@dataclass
class SceneSample:
    """One observation: clouds in camera frame, meters; image in [0, 1].

    image is either an (H, W, 3) raster or a precomputed 1-d feature
    vector; mask may be None when only a feature vector is carried.
    """

    sample_id: str
    category: str
    gt_pose: Pose9D | None
    clean_cloud: PointCloud
    coarse_cloud: PointCloud
    image: np.ndarray
    intrinsics: Intrinsics
    mask: np.ndarray | None = None


def default_intrinsics(size: int = 32) -> Intrinsics:
    return Intrinsics(fx=1.2 * size, fy=1.2 * size,
                      cx=size / 2.0, cy=size / 2.0, width=size, height=size)


def random_rotation(rng) -> np.ndarray:
    """Uniform rotation from a random unit quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def visible_mask(points: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Back-face culling for a camera at the origin: keep camera-facing."""
    return np.einsum("ij,ij->i", points, normals) < 0.0


def corrupt_cloud(rng, points: np.ndarray, difficulty: str):
    """Depth-sensor-style corruption of a camera-frame cloud.

    easy       one per-sample bias in [-0.02, 0.02] m along each viewing ray
    realistic  per-sample ray bias of 0.10-0.20 m magnitude with random
               sign, per-point jitter sigma 0.01 m, and a contiguous
               azimuthal dropout of 10-50% of the points
    """
    if difficulty not in DIFFICULTIES:
        raise InvalidConfigError(f"unknown difficulty {difficulty!r}")
    rays = points / np.linalg.norm(points, axis=1, keepdims=True)
    if difficulty == "easy":
        bias = rng.uniform(-0.02, 0.02)
        return points + bias * rays
    bias = rng.uniform(0.10, 0.20) * rng.choice([-1.0, 1.0])
    out = points + bias * rays + rng.normal(0.0, 0.01, size=points.shape)
    center = points.mean(axis=0)
    ang = np.arctan2(points[:, 1] - center[1], points[:, 0] - center[0])
    start = rng.uniform(0.0, 2 * np.pi)
    width = rng.uniform(0.1, 0.5) * 2 * np.pi
    gap = np.mod(ang - start, 2 * np.pi) < width
    keep = out[~gap]
    return keep if len(keep) >= 8 else out


def render_silhouette(points: np.ndarray, normals: np.ndarray,
                      albedo, K: Intrinsics):
    """Flat-shaded point-splat silhouette with a nearest-depth buffer.

    Returns (image, mask) where mask marks the covered pixels.
    """
    img = np.full((K.height, K.width, 3), _BACKGROUND, dtype=np.float32)
    mask = np.zeros((K.height, K.width), dtype=bool)
    uv = np.rint(project(points, K)).astype(int)
    ok = ((uv[:, 0] >= 0) & (uv[:, 0] < K.width) &
          (uv[:, 1] >= 0) & (uv[:, 1] < K.height))
    if not np.any(ok):
        return img, mask
    uv, pts, nrm = uv[ok], points[ok], normals[ok]
    order = np.argsort(-pts[:, 2])  # nearest last wins the splat
    uv, pts, nrm = uv[order], pts[order], nrm[order]
    facing = -np.einsum("ij,ij->i", pts / np.linalg.norm(pts, axis=1,
                                                         keepdims=True), nrm)
    shade = 0.4 + 0.6 * np.clip(facing, 0.0, 1.0)
    img[uv[:, 1], uv[:, 0]] = np.asarray(albedo, dtype=np.float32) * \
        shade[:, None].astype(np.float32)
    mask[uv[:, 1], uv[:, 0]] = True
    return img, mask


def gen_synthetic(category: str, seed: int, difficulty: str = "easy",
                  point_count: int = 1024, image_size: int = 32,
                  surface_points: int = 4096) -> SceneSample:
    """Generate one synthetic scene, deterministic in all arguments."""
    if category not in CATEGORIES:
        raise UnknownCategoryError(f"unknown category {category!r}")
    if difficulty not in DIFFICULTIES:
        raise InvalidConfigError(f"unknown difficulty {difficulty!r}")
    K = default_intrinsics(image_size)
    rng = np.random.default_rng(
        [seed, CATEGORIES.index(category), DIFFICULTIES.index(difficulty)])

    pts, nrm = sample_category_surface(rng, category, surface_points)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    s = sample_size(rng, category)
    scale = s / (hi - lo)
    pts = (pts - (lo + hi) / 2.0) * scale
    nrm = nrm / scale
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)

    R = random_rotation(rng)
    z = rng.uniform(0.35, 1.4)
    u = rng.uniform(0.3 * K.width, 0.7 * K.width)
    v = rng.uniform(0.3 * K.height, 0.7 * K.height)
    t = np.array([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z])

    world = pts @ R.T + t
    nrm_w = nrm @ R.T
    vis = visible_mask(world, nrm_w)
    if vis.sum() < 64:  # pathological pose; reject nothing, just keep all
        vis[:] = True
    clean = world[vis].astype(np.float32)

    coarse = corrupt_cloud(rng, world[vis], difficulty)
    coarse = downsample(PointCloud(coarse.astype(np.float32)), point_count,
                        seed=int(rng.integers(2 ** 31)))
    image, mask = render_silhouette(world[vis], nrm_w[vis],
                                    _ALBEDO[category], K)

    return SceneSample(
        sample_id=f"{category}-{difficulty}-{seed:08d}",
        category=category,
        gt_pose=Pose9D(t, R, s),
        clean_cloud=PointCloud(clean),
        coarse_cloud=coarse,
        image=image,
        intrinsics=K,
        mask=mask,
    )


def gen_dataset(categories, count: int, seed0: int,
                difficulty: str = "easy", **kw) -> list[SceneSample]:
    """count samples cycling through categories, seeds seed0..seed0+count-1."""
    cats = list(categories)
    return [gen_synthetic(cats[i % len(cats)], seed0 + i, difficulty, **kw)
            for i in range(count)]


# --- persistence ------------------------------------------------------------

_FORMAT = "pose9d-dataset-v1"


def _write_blob(path: Path, data: bytes) -> dict:
    path.write_bytes(data)
    return {"path": path.name, "bytes": len(data),
            "crc32": zlib.crc32(data) & 0xFFFFFFFF}


def _read_blob(root: Path, entry: dict) -> bytes:
    path = root / entry["path"]
    if not path.exists():
        raise ChecksumMismatchError(f"missing file {path.name}")
    data = path.read_bytes()
    if len(data) != entry["bytes"]:
        raise ChecksumMismatchError(
            f"{path.name}: {len(data)} bytes, manifest says {entry['bytes']}")
    if (zlib.crc32(data) & 0xFFFFFFFF) != entry["crc32"]:
        raise ChecksumMismatchError(f"{path.name}: crc32 mismatch")
    return data


def save_dataset(root, samples, metadata: dict | None = None,
                 split: str = "train") -> Path:
    """Write samples plus a manifest under root; returns the manifest path.

    Clouds are little-endian float32 triples, poses 16 little-endian
    float64 (t, row-major R, s, validity; zeros with validity 0 when the
    sample has no ground truth), images float32 rasters, masks uint8.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for smp in samples:
        sid = smp.sample_id
        pose = (smp.gt_pose.to_flat() if smp.gt_pose is not None
                else np.zeros(16))
        img = np.ascontiguousarray(smp.image, dtype="<f4")
        files = {
            "clean": _write_blob(root / f"{sid}.clean.f32",
                                 np.ascontiguousarray(
                                     smp.clean_cloud.points,
                                     dtype="<f4").tobytes()),
            "coarse": _write_blob(root / f"{sid}.coarse.f32",
                                  np.ascontiguousarray(
                                      smp.coarse_cloud.points,
                                      dtype="<f4").tobytes()),
            "image": _write_blob(root / f"{sid}.rgb.f32", img.tobytes()),
            "pose": _write_blob(root / f"{sid}.pose.f64",
                                np.ascontiguousarray(
                                    pose, dtype="<f8").tobytes()),
        }
        if smp.mask is not None:
            files["mask"] = _write_blob(
                root / f"{sid}.mask.u8",
                np.ascontiguousarray(smp.mask.astype(np.uint8)).tobytes())
        records.append({
            "id": sid,
            "category": smp.category,
            "split": split,
            "symmetric": smp.category in SYMMETRIC,
            "clean_count": len(smp.clean_cloud),
            "coarse_count": len(smp.coarse_cloud),
            "image_shape": list(smp.image.shape),
            "intrinsics": smp.intrinsics.to_dict(),
            "files": files,
        })
    manifest = {"format": _FORMAT, "units": "m", "count": len(records),
                "metadata": metadata or {}, "samples": records}
    out = root / "manifest.json"
    out.write_text(json.dumps(manifest, indent=1))
    return out


def load_dataset(root):
    """Read a dataset directory back; returns (samples, metadata).

    Every file must exist and match its declared byte length and crc32.
    """
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError:
        raise CorruptManifestError(f"no manifest.json under {root}")
    except json.JSONDecodeError as e:
        raise CorruptManifestError(f"manifest.json is not valid JSON: {e}")
    if manifest.get("format") != _FORMAT:
        raise CorruptManifestError(
            f"unsupported format {manifest.get('format')!r}")
    ids = [rec["id"] for rec in manifest["samples"]]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise CorruptManifestError(f"duplicate sample ids: {dup}")
    samples = []
    for rec in manifest["samples"]:
        files = rec["files"]
        clean = np.frombuffer(_read_blob(root, files["clean"]),
                              dtype="<f4").reshape(rec["clean_count"], 3)
        coarse = np.frombuffer(_read_blob(root, files["coarse"]),
                               dtype="<f4").reshape(rec["coarse_count"], 3)
        image = np.frombuffer(_read_blob(root, files["image"]),
                              dtype="<f4").reshape(rec["image_shape"])
        pose = np.frombuffer(_read_blob(root, files["pose"]), dtype="<f8")
        if pose.shape != (16,):
            raise CorruptManifestError(f"{rec['id']}: pose record malformed")
        mask = None
        if "mask" in files:
            h, w = rec["image_shape"][:2]
            mask = np.frombuffer(_read_blob(root, files["mask"]),
                                 dtype=np.uint8).reshape(h, w).astype(bool)
        samples.append(SceneSample(
            sample_id=rec["id"],
            category=rec["category"],
            gt_pose=Pose9D.from_flat(pose),
            clean_cloud=PointCloud(clean),
            coarse_cloud=PointCloud(coarse),
            image=image,
            intrinsics=Intrinsics.from_dict(rec["intrinsics"]),
            mask=mask,
        ))
    return samples, manifest.get("metadata", {})


# --- rasters and external ingestion -----------------------------------------

def save_depth_raster(path, depth: np.ndarray) -> None:
    """Float32 depth grid in meters with a JSON shape sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(depth, dtype="<f4")
    path.write_bytes(arr.tobytes())
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(
        {"height": arr.shape[0], "width": arr.shape[1], "units": "m"}))


def load_depth_raster(path) -> np.ndarray:
    path = Path(path)
    try:
        head = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    except FileNotFoundError:
        raise CorruptManifestError(f"missing sidecar for {path.name}")
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != head["height"] * head["width"]:
        raise ChecksumMismatchError(
            f"{path.name}: {raw.size} values, sidecar says "
            f"{head['height']}x{head['width']}")
    return raw.reshape(head["height"], head["width"])


def save_mask_raster(path, mask: np.ndarray) -> None:
    path = Path(path)
    arr = np.ascontiguousarray(mask.astype(np.uint8))
    path.write_bytes(arr.tobytes())
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(
        {"height": arr.shape[0], "width": arr.shape[1]}))


def load_mask_raster(path) -> np.ndarray:
    path = Path(path)
    try:
        head = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    except FileNotFoundError:
        raise CorruptManifestError(f"missing sidecar for {path.name}")
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size != head["height"] * head["width"]:
        raise ChecksumMismatchError(
            f"{path.name}: {raw.size} values, sidecar says "
            f"{head['height']}x{head['width']}")
    return raw.reshape(head["height"], head["width"]).astype(bool)


def ingest_external(depth_path, mask_path, K: Intrinsics,
                    feature_path=None, category: str = "unknown",
                    point_count: int = 1024, seed: int = 0) -> SceneSample:
    """Build a pose-free sample from a depth raster and a binary mask.

    The coarse cloud is the masked back-projection resampled to
    point_count. The image is either a flat silhouette lifted from the
    mask or, when feature_path is given, a precomputed float32 feature
    vector that downstream encoders pass through unchanged.
    """
    depth = load_depth_raster(depth_path)
    mask = load_mask_raster(mask_path)
    if depth.shape != (K.height, K.width):
        raise DimensionMismatchError(
            f"depth {depth.shape} does not match intrinsics "
            f"{(K.height, K.width)}")
    cloud = backproject(depth, mask, K)
    coarse = downsample(PointCloud(cloud.points.astype(np.float32)),
                        point_count, seed=seed)
    if feature_path is not None:
        image = np.frombuffer(Path(feature_path).read_bytes(),
                              dtype="<f4").copy()
    else:
        image = np.full((K.height, K.width, 3), _BACKGROUND, dtype=np.float32)
        image[mask] = 0.8
    return SceneSample(
        sample_id=Path(depth_path).stem,
        category=category,
        gt_pose=None,
        clean_cloud=PointCloud(cloud.points.astype(np.float32)),
        coarse_cloud=coarse,
        image=image,
        intrinsics=K,
        mask=mask,
    )
