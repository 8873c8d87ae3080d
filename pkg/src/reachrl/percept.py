"""Depth + bounding-box target estimation.

Turns supplied detections (no detector runs here) and 16-bit depth frames into
3D targets in the robot base frame, with a size filter on the boxes and a
displacement gate on re-publication.

File formats
------------
Depth frames: binary PGM (``P5``), maxval 65535, big-endian 16-bit samples in
millimeters; 0 marks an invalid pixel. Frame ``<id>`` lives at ``<dir>/<id>.pgm``.

Detections: comma-separated text, one record per line, ``#`` comments allowed::

    frame_id,class,x_min,y_min,x_max,y_max,confidence

Published targets: comma-separated text with header
``frame_id,class,x,y,z,timestamp`` (meters, base frame; seconds).
"""
import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .chain import RigidTransform, forward_kinematics, transform_point

CLASSES = ("hand", "arm")

# optical frame (z forward, x right, y down) -> body frame (x forward, y left, z up)
OPTICAL_TO_BODY = np.array([[0.0, 0.0, 1.0],
                            [-1.0, 0.0, 0.0],
                            [0.0, -1.0, 0.0]])


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
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_doc(cls, doc):
        return cls(float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]),
                   int(doc["width"]), int(doc["height"]))


@dataclass(frozen=True)
class DetectionBox:
    cls: str
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float = 1.0
    frame_id: int = 0

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"unknown detection class {self.cls!r}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("box needs x_min < x_max and y_min < y_max")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")

    @property
    def center(self):
        return 0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)

    def inside(self, width, height):
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height


@dataclass(frozen=True)
class TargetEstimate:
    point_base: np.ndarray
    source_class: str
    timestamp: float
    frame_id: int = 0


def filter_detection(box, image_height, min_fraction=0.1, max_fraction=0.8):
    """``"keep"``, ``"too_small"`` or ``"too_big"`` from the box-height fraction."""
    frac = (box.y_max - box.y_min) / float(image_height)
    if frac < min_fraction:
        return "too_small"
    if frac > max_fraction:
        return "too_big"
    return "keep"


def select_detection(boxes, image_height, min_fraction=0.1, max_fraction=0.8):
    """Best surviving box: any hand beats any arm, then highest confidence."""
    kept = [b for b in boxes if filter_detection(b, image_height, min_fraction, max_fraction) == "keep"]
    if not kept:
        return None
    # stable: first box wins ties
    return min(kept, key=lambda b: (CLASSES.index(b.cls), -b.confidence))


def central_window(box, width, height):
    """Inclusive pixel ranges ``(u0, u1, v0, v1)`` of the box's central third."""
    w = box.x_max - box.x_min
    h = box.y_max - box.y_min
    u0 = math.ceil(box.x_min + w / 3.0)
    u1 = math.floor(box.x_max - w / 3.0)
    v0 = math.ceil(box.y_min + h / 3.0)
    v1 = math.floor(box.y_max - h / 3.0)
    uc, vc = (int(round(c)) for c in box.center)
    if u1 < u0:
        u0 = u1 = uc
    if v1 < v0:
        v0 = v1 = vc
    u0, u1 = max(0, u0), min(width - 1, u1)
    v0, v1 = max(0, v0), min(height - 1, v1)
    return u0, u1, v0, v1


def estimate_target(depth_mm, box, intrinsics, rng, n=10):
    """Camera-frame (optical) 3D point in meters, or ``None`` if no valid depth.

    Draws pixels one at a time, ``u`` then ``v``, uniformly from the central
    third of the box, skipping zero depth, until ``n`` valid samples or ``10n``
    draws. Depth is the mean of the valid samples; x/y back-project the box
    center through the pinhole model.
    """
    depth_mm = np.asarray(depth_mm)
    if depth_mm.shape != (intrinsics.height, intrinsics.width):
        raise ValueError(f"depth image {depth_mm.shape} does not match intrinsics "
                         f"{(intrinsics.height, intrinsics.width)}")
    u0, u1, v0, v1 = central_window(box, intrinsics.width, intrinsics.height)
    samples = []
    for _ in range(10 * n):
        u = int(rng.integers(u0, u1 + 1))
        v = int(rng.integers(v0, v1 + 1))
        d = int(depth_mm[v, u])
        if d > 0:
            samples.append(d)
            if len(samples) == n:
                break
    if not samples:
        return None
    z = float(np.mean(samples)) / 1000.0
    u, v = box.center
    return np.array([(u - intrinsics.cx) * z / intrinsics.fx, (v - intrinsics.cy) * z / intrinsics.fy, z])


def project(point_cam, intrinsics):
    """Pixel ``(u, v)`` of an optical-frame point."""
    x, y, z = point_cam
    return intrinsics.cx + intrinsics.fx * x / z, intrinsics.cy + intrinsics.fy * y / z


def to_base_frame(point_cam, camera_pose):
    """Optical-frame point -> base frame, given the camera body-frame pose in base."""
    return transform_point(camera_pose, OPTICAL_TO_BODY @ np.asarray(point_cam, dtype=float))


def from_base_frame(point_base, camera_pose):
    return OPTICAL_TO_BODY.T @ transform_point(camera_pose.inverse(), point_base)


def camera_pose(chain, q, mount, head_frame="head"):
    """Camera body frame in base coordinates: head pose composed with the mount."""
    return forward_kinematics(chain, q)[head_frame] @ mount


def should_publish(candidate, last_published, threshold=0.2):
    if last_published is None:
        return True
    return float(np.linalg.norm(np.asarray(candidate) - np.asarray(last_published))) > threshold


class TargetPipeline:
    """Per-camera-stream state: the last published point and the sampling RNG."""

    def __init__(self, intrinsics, rng, n_samples=10, threshold=0.2, min_fraction=0.1, max_fraction=0.8,
                 fps=30.0):
        self.intrinsics = intrinsics
        self.rng = rng
        self.n_samples = n_samples
        self.threshold = threshold
        self.min_fraction = min_fraction
        self.max_fraction = max_fraction
        self.fps = fps
        self.last_published = None

    @classmethod
    def from_config(cls, doc, rng):
        cam = doc["camera"] if "camera" in doc else doc
        return cls(CameraIntrinsics.from_doc(cam["intrinsics"]), rng, int(cam.get("samples", 10)),
                   float(cam.get("publish_threshold", 0.2)), float(cam.get("min_height_fraction", 0.1)),
                   float(cam.get("max_height_fraction", 0.8)), float(cam.get("fps", 30.0)))

    def process(self, frame_id, depth_mm, boxes, cam_pose) -> Optional[TargetEstimate]:
        """Return a TargetEstimate if this frame publishes one, else ``None``."""
        box = select_detection([b for b in boxes if b.inside(self.intrinsics.width, self.intrinsics.height)],
                               self.intrinsics.height, self.min_fraction, self.max_fraction)
        if box is None:
            return None
        p_cam = estimate_target(depth_mm, box, self.intrinsics, self.rng, self.n_samples)
        if p_cam is None:
            return None
        p_base = to_base_frame(p_cam, cam_pose)
        if not should_publish(p_base, self.last_published, self.threshold):
            return None
        self.last_published = p_base
        return TargetEstimate(p_base, box.cls, frame_id / self.fps, frame_id)


def mount_from_doc(doc):
    cam = doc["camera"] if "camera" in doc else doc
    m = cam.get("mount") or {}
    return RigidTransform.from_xyz_rpy(m.get("xyz", (0, 0, 0)), m.get("rpy", (0, 0, 0)))


# --- file formats ---------------------------------------------------------


def read_pgm16(path):
    """Read a binary 16-bit PGM into a ``uint16`` array (rows = image v)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval < 256:
        raise ValueError(f"{path}: expected a 16-bit PGM, maxval={maxval}")
    raw = np.frombuffer(data, dtype=">u2", count=width * height, offset=pos)
    return raw.reshape(height, width).astype(np.uint16)


def write_pgm16(path, depth_mm):
    depth = np.asarray(depth_mm)
    if depth.ndim != 2 or depth.min(initial=0) < 0 or depth.max(initial=0) > 65535:
        raise ValueError("depth must be a 2-D array of values in [0, 65535]")
    h, w = depth.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (w, h))
        fh.write(depth.astype(">u2").tobytes())
    os.replace(tmp, path)


def read_detections(path):
    """Map ``frame_id -> [DetectionBox]`` from a detections file."""
    frames = {}
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("frame_id"):
                continue
            rec = [f.strip() for f in line.split(",")]
            if len(rec) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 fields, got {len(rec)}")
            try:
                box = DetectionBox(rec[1], float(rec[2]), float(rec[3]), float(rec[4]), float(rec[5]),
                                   float(rec[6]), int(rec[0]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            frames.setdefault(box.frame_id, []).append(box)
    return frames


def write_detections(path, boxes):
    with open(path, "w", newline="") as fh:
        fh.write("frame_id,class,x_min,y_min,x_max,y_max,confidence\n")
        for b in boxes:
            fh.write(f"{b.frame_id},{b.cls},{b.x_min!r},{b.y_min!r},{b.x_max!r},{b.y_max!r},{b.confidence!r}\n")


TARGET_HEADER = ("frame_id", "class", "x", "y", "z", "timestamp")


def write_targets(path, estimates):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TARGET_HEADER)
        for e in estimates:
            w.writerow([e.frame_id, e.source_class, *(repr(float(v)) for v in e.point_base), repr(e.timestamp)])
    os.replace(tmp, path)


def frame_ids(depth_dir):
    """Sorted integer ids of ``<id>.pgm`` files in ``depth_dir``."""
    ids = []
    for p in Path(depth_dir).glob("*.pgm"):
        try:
            ids.append(int(p.stem))
        except ValueError:
            continue
    return sorted(ids)
