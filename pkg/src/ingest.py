# -*- coding: utf-8 -*-
"""
Input files: pose records, retargeted pose files, object assets and
affordance masks.

Pose record (JSON, one object class per file):
  {"object_class": "mug",
   "frames": [{"source_id": "vid12_f0301", "confidence": 0.93,
               "joints": {"wrist": [x, y, z], "thumb_knuckle": [...], ...}}]}

  Frames that fail the schema, fall under the confidence threshold or fail
  keypoint validation are dropped one by one with a [warn] line; the file
  itself is only rejected when it cannot be parsed (ParseError) or holds no
  usable frame (EmptyFile).

Asset descriptor (YAML, paths relative to the descriptor):
  object_class: cube
  mesh: cube.obj
  mass: 1.0                 # kg, default 1
  scale: 0.05               # applied to mesh and affordance points
  upright: [0, 0, 0]        # rotation vector or 3x3 matrix
  affordance_points: cube_affordance.txt   # "x y z" per line, mesh units
  # or
  affordance_image:
    mask: mask.npy
    depth: depth.npy
    intrinsics: camera.yaml  # fx fy cx cy width height
    camera_to_object: [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]
    sample_count: 20
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import trimesh
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.spatial.transform import Rotation

from .errors import BadMesh, DexPriorError, EmptyFile, MissingAffordance, NoValidPixels, ParseError
from .handmodel import HumanHandKeypoints, RobotJointVector, validate_keypoints
from .poseprior import PoseEntry, PoseSet
from .utils import log

AFFORDANCE_TOL = 1e-3
RETARGETED_FORMAT_VERSION = 1

PathLike = Union[str, Path]


# ── Pose records ─────────────────────────────────────────────────────────────

class _FrameModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    source_id: str
    confidence: float = Field(ge=0.0, le=1.0)
    joints: Dict[str, List[float]]


class _PoseFileModel(BaseModel):
    model_config = ConfigDict(extra="ignore")
    object_class: str = Field(min_length=1)
    frames: List[dict]


@dataclass(frozen=True)
class PoseRecord:
    source_id: str
    confidence: float
    keypoints: HumanHandKeypoints


@dataclass(frozen=True)
class PoseRecordFile:
    object_class: str
    records: Tuple[PoseRecord, ...]
    dropped: Tuple[Tuple[str, str], ...] = ()   # (source_id or #index, reason)

    def __len__(self) -> int:
        return len(self.records)


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise ParseError(f"file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise EmptyFile(f"{path} is empty")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e


def load_pose_records(path: PathLike, confidence_threshold: float = 0.5) -> PoseRecordFile:
    p = Path(path)
    raw = _read_json(p)
    try:
        doc = _PoseFileModel.model_validate(raw)
    except ValidationError as e:
        raise ParseError(f"{p}: {e.errors()[0]['msg']} at {e.errors()[0]['loc']}") from e
    if not doc.frames:
        raise EmptyFile(f"{p}: no frames")

    records: List[PoseRecord] = []
    dropped: List[Tuple[str, str]] = []
    for i, fr in enumerate(doc.frames):
        sid = str(fr.get("source_id", f"#{i}")) if isinstance(fr, dict) else f"#{i}"
        try:
            frame = _FrameModel.model_validate(fr)
        except ValidationError as e:
            dropped.append((sid, f"schema: {e.errors()[0]['msg']}"))
            continue
        if frame.confidence < confidence_threshold:
            dropped.append((sid, f"confidence {frame.confidence:.2f} < {confidence_threshold:.2f}"))
            continue
        try:
            kp = validate_keypoints(frame.joints)
        except DexPriorError as e:
            dropped.append((sid, f"{type(e).__name__}: {e}"))
            continue
        records.append(PoseRecord(frame.source_id, frame.confidence, kp))

    for sid, why in dropped:
        log("warn", f"{p.name}: dropped frame {sid} ({why})")
    if not records:
        raise EmptyFile(f"{p}: none of {len(doc.frames)} frames is usable")
    log("ingest", f"{p.name}: {doc.object_class} {len(records)} frame(s) kept, {len(dropped)} dropped")
    return PoseRecordFile(doc.object_class, tuple(records), tuple(dropped))


# ── Retargeted pose files (output of `retarget`, input of `cluster`) ─────────

def write_retargeted(path: PathLike, object_class: str,
                     entries: Sequence[Tuple[PoseRecord, RobotJointVector]],
                     dropped: Sequence[Tuple[str, str]] = (), config_hash: str = "") -> None:
    doc = {
        "format_version": RETARGETED_FORMAT_VERSION,
        "config_hash": config_hash,
        "object_class": object_class,
        "poses": [
            {"source_id": rec.source_id, "confidence": rec.confidence,
             "joints": robot.as_dict(), "keypoints": rec.keypoints.as_dict()}
            for rec, robot in entries
        ],
        "dropped": [{"source_id": s, "reason": r} for s, r in dropped],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def load_retargeted(path: PathLike) -> PoseSet:
    p = Path(path)
    doc = _read_json(p)
    if doc.get("format_version") != RETARGETED_FORMAT_VERSION:
        raise ParseError(f"{p}: unsupported format_version {doc.get('format_version')!r}")
    poses = doc.get("poses") or []
    if not poses:
        raise EmptyFile(f"{p}: no retargeted poses")
    entries = []
    for e in poses:
        try:
            robot = RobotJointVector.from_dict(e["joints"])
            kp = validate_keypoints(e["keypoints"]) if e.get("keypoints") else None
        except (KeyError, ValueError, DexPriorError) as err:
            raise ParseError(f"{p}: bad pose {e.get('source_id')!r}: {err}") from err
        entries.append(PoseEntry(str(e["source_id"]), robot, kp))
    return PoseSet(str(doc["object_class"]), tuple(entries))


def group_pose_sets(sets: Sequence[PoseSet]) -> Dict[str, PoseSet]:
    """Merge several files of the same class into one PoseSet per class."""
    by_class: Dict[str, List[PoseEntry]] = {}
    for s in sets:
        by_class.setdefault(s.object_class, []).extend(s.poses)
    return {c: PoseSet(c, tuple(v)) for c, v in by_class.items()}


# ── Camera / back-projection ─────────────────────────────────────────────────

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ParseError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ParseError("principal point lies outside the image")

    @classmethod
    def from_yaml(cls, path: PathLike) -> "CameraIntrinsics":
        d = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}: bad intrinsics ({e})") from e


def backproject_affordance(mask: np.ndarray, depth: np.ndarray, intr: CameraIntrinsics,
                           sample_count: int, seed: int = 0) -> np.ndarray:
    """Masked pixels with depth > 0 -> camera-frame points, uniformly subsampled."""
    mask = np.asarray(mask).astype(bool)
    depth = np.asarray(depth, dtype=float)
    if mask.shape != depth.shape:
        raise ValueError(f"mask {mask.shape} and depth {depth.shape} differ in size")
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")

    valid = mask & np.isfinite(depth) & (depth > 0)
    v, u = np.nonzero(valid)
    if len(u) == 0:
        raise NoValidPixels("no masked pixel has a valid depth")
    z = depth[v, u]
    pts = np.column_stack([(u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z])
    if len(pts) > sample_count:
        rng = np.random.default_rng(seed)
        pts = pts[np.sort(rng.choice(len(pts), size=sample_count, replace=False))]
    return pts


def project_points(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame points -> (u, v) pixel coordinates."""
    P = np.asarray(points, dtype=float)
    return np.column_stack([intr.fx * P[:, 0] / P[:, 2] + intr.cx,
                            intr.fy * P[:, 1] / P[:, 2] + intr.cy])


# ── Object assets ────────────────────────────────────────────────────────────

class _AffordanceImageModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    mask: str
    depth: str
    intrinsics: str
    camera_to_object: List[List[float]] = Field(default_factory=lambda: np.eye(4).tolist())
    sample_count: int = Field(20, ge=1)
    seed: int = 0


class _AssetModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    object_class: str = Field(min_length=1)
    mesh: str
    mass: float = Field(1.0, gt=0)
    scale: float = Field(1.0, gt=0)
    upright: Optional[List] = None
    affordance_points: Optional[str] = None
    affordance_image: Optional[_AffordanceImageModel] = None
    surface_samples: int = Field(256, ge=1)


@dataclass(frozen=True, eq=False)
class ObjectAsset:
    object_class: str
    mesh: trimesh.Trimesh          # metres, object frame (scale and upright applied)
    surface_points: np.ndarray
    affordance_points: np.ndarray
    mass: float = 1.0
    scale: float = 1.0
    upright: np.ndarray = field(default_factory=lambda: np.eye(3))
    flagged: bool = False
    source: str = ""

    @property
    def center_of_mass(self) -> np.ndarray:
        if self.mesh.is_watertight:
            return np.asarray(self.mesh.center_mass, dtype=float)
        return self.surface_points.mean(axis=0)

    def surface_query(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Signed distance to the surface (negative inside) and the outward normal of the closest face."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        tris = self.mesh.triangles
        F = len(tris)
        q = trimesh.triangles.closest_point(np.tile(tris, (len(P), 1, 1)), np.repeat(P, F, axis=0))
        q = q.reshape(len(P), F, 3)
        d = np.linalg.norm(P[:, None, :] - q, axis=-1)
        face = np.argmin(d, axis=1)
        rows = np.arange(len(P))
        dist = d[rows, face]
        normals = np.asarray(self.mesh.face_normals)[face]
        side = np.einsum("ij,ij->i", P - q[rows, face], normals)
        return np.where(side < 0, -dist, dist), normals

    def rescaled(self, factor: float) -> "ObjectAsset":
        mesh = self.mesh.copy()
        mesh.apply_scale(factor)
        return replace(self, mesh=mesh, surface_points=self.surface_points * factor,
                       affordance_points=self.affordance_points * factor, scale=self.scale * factor)

    def with_mass(self, mass: float) -> "ObjectAsset":
        if mass <= 0:
            raise ValueError("mass must be positive")
        return replace(self, mass=float(mass))


def _upright_matrix(raw: Optional[list]) -> np.ndarray:
    if raw is None:
        return np.eye(3)
    a = np.asarray(raw, dtype=float)
    if a.shape == (3,):
        return Rotation.from_rotvec(a).as_matrix()
    if a.shape == (3, 3):
        return Rotation.from_matrix(a).as_matrix()
    raise ParseError(f"upright must be a rotation vector or a 3x3 matrix, got shape {a.shape}")


def _load_mesh(path: Path) -> trimesh.Trimesh:
    try:
        mesh = trimesh.load(str(path), force="mesh", process=False)
    except Exception as e:  # trimesh raises a variety of loader errors
        raise BadMesh(f"{path}: {e}") from e
    if not isinstance(mesh, trimesh.Trimesh) or len(mesh.faces) == 0:
        raise BadMesh(f"{path}: no triangles")
    if not np.all(np.isfinite(mesh.vertices)):
        raise BadMesh(f"{path}: non-finite vertices")
    return mesh


def _affordance_from_image(img: _AffordanceImageModel, base: Path) -> np.ndarray:
    mask = np.load(base / img.mask)
    depth = np.load(base / img.depth)
    intr = CameraIntrinsics.from_yaml(base / img.intrinsics)
    cam = backproject_affordance(mask, depth, intr, img.sample_count, img.seed)
    T = np.asarray(img.camera_to_object, dtype=float)
    if T.shape != (4, 4):
        raise ParseError("camera_to_object must be 4x4")
    return cam @ T[:3, :3].T + T[:3, 3]


def load_object_asset(path: PathLike, seed: int = 0) -> ObjectAsset:
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        desc = _AssetModel.model_validate(raw)
    except (OSError, yaml.YAMLError, ValidationError) as e:
        raise ParseError(f"{p}: {e}") from e
    base = p.parent

    mesh = _load_mesh(base / desc.mesh)
    R = _upright_matrix(desc.upright)

    if desc.affordance_points:
        try:
            aff = np.loadtxt(base / desc.affordance_points, dtype=float, ndmin=2)
        except (OSError, ValueError) as e:
            raise MissingAffordance(f"{p}: {e}") from e
    elif desc.affordance_image is not None:
        aff = _affordance_from_image(desc.affordance_image, base)
    else:
        raise MissingAffordance(f"{p}: neither affordance_points nor affordance_image given")
    if aff.ndim != 2 or aff.shape[1] != 3 or len(aff) == 0:
        raise MissingAffordance(f"{p}: affordance points must be a non-empty N x 3 table")

    T = np.eye(4)
    T[:3, :3] = desc.scale * R
    mesh.apply_transform(T)
    aff = desc.scale * (aff @ R.T)

    flagged = not mesh.is_watertight
    if flagged:
        log("warn", f"{p.name}: mesh is not watertight, loaded as flagged")

    samples, _ = trimesh.sample.sample_surface(mesh, desc.surface_samples, seed=seed)
    asset = ObjectAsset(desc.object_class, mesh, np.asarray(samples, dtype=float), aff,
                        desc.mass, desc.scale, R, flagged, str(p))

    dist, _ = asset.surface_query(aff)
    worst = float(np.max(np.abs(dist)))
    if worst > AFFORDANCE_TOL:
        raise MissingAffordance(f"{p}: affordance point {worst * 1000:.1f} mm off the surface")
    return asset


def load_assets(paths: Sequence[PathLike], seed: int = 0) -> List[ObjectAsset]:
    return [load_object_asset(x, seed) for x in paths]
