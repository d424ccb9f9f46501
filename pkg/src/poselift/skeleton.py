"""Skeleton layout, root/relative decomposition and height normalization.

Poses are (J, 3) arrays of camera-frame millimeter coordinates.  The
default layout has 17 joints, rooted at the hip (pelvis), with a
14-joint subset of reliably visible joints used for depth supervision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_JOINT_NAMES = (
    "head_top",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "hip",
    "spine",
    "head",
)

# Shoulders, elbows, wrists, hips, knees, ankles plus neck and head top.
# The pelvis, spine and mid-head are detector interpolations rather than
# observable surface points, so their sensor depths are unreliable.
DEFAULT_DEPTH_SUBSET = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13)

# Parent of each joint in the kinematic tree; the root has parent -1.
DEFAULT_PARENTS = (16, 15, 1, 2, 3, 1, 5, 6, 14, 8, 9, 14, 11, 12, -1, 14, 1)


class DegeneratePoseError(ValueError):
    """Raised when a pose has no usable knee-to-neck extent."""


@dataclass(frozen=True)
class SkeletonSpec:
    """Names and role indices of the joints making up a pose."""

    joint_names: tuple[str, ...] = DEFAULT_JOINT_NAMES
    root: int = 14
    neck: int = 1
    knees: tuple[int, int] = (9, 12)
    depth_subset: tuple[int, ...] = DEFAULT_DEPTH_SUBSET
    parents: tuple[int, ...] = DEFAULT_PARENTS

    def __post_init__(self) -> None:
        j = len(self.joint_names)
        if j < 2:
            raise ValueError("a skeleton needs at least two joints")
        if len(set(self.joint_names)) != j:
            raise ValueError("joint names must be distinct")
        for name, idx in (("root", self.root), ("neck", self.neck)):
            if not 0 <= idx < j:
                raise ValueError(f"{name} index {idx} out of range for {j} joints")
        if len(self.knees) != 2 or not all(0 <= k < j for k in self.knees):
            raise ValueError(f"knee indices {self.knees} out of range for {j} joints")
        if len(set(self.depth_subset)) != len(self.depth_subset):
            raise ValueError("depth subset indices must be distinct")
        if not all(0 <= k < j for k in self.depth_subset):
            raise ValueError("depth subset indices out of range")
        if len(self.parents) != j:
            raise ValueError("parents must list one entry per joint")
        if self.parents[self.root] != -1:
            raise ValueError("the root joint must have parent -1")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def bones(self) -> list[tuple[int, int]]:
        """(parent, child) pairs of the kinematic tree, excluding the root."""
        return [(p, c) for c, p in enumerate(self.parents) if p >= 0]

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "root": self.root,
            "neck": self.neck,
            "knees": list(self.knees),
            "depth_subset": list(self.depth_subset),
            "parents": list(self.parents),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonSpec":
        return cls(
            joint_names=tuple(d["joint_names"]),
            root=int(d["root"]),
            neck=int(d["neck"]),
            knees=(int(d["knees"][0]), int(d["knees"][1])),
            depth_subset=tuple(int(i) for i in d["depth_subset"]),
            parents=tuple(int(i) for i in d["parents"]),
        )


def default_skeleton() -> SkeletonSpec:
    return SkeletonSpec()


def save_skeleton(path: str | Path, spec: SkeletonSpec) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def load_skeleton(path: str | Path) -> SkeletonSpec:
    return SkeletonSpec.from_dict(json.loads(Path(path).read_text()))


def _check_pose(pose: np.ndarray, spec: SkeletonSpec) -> np.ndarray:
    arr = np.asarray(pose, dtype=np.float64)
    if arr.shape != (spec.num_joints, 3):
        raise ValueError(f"pose must have shape ({spec.num_joints}, 3), got {arr.shape}")
    return arr


@dataclass
class PoseDecomposition:
    """Absolute root position plus root-relative offsets of the other joints."""

    root: np.ndarray
    relative: np.ndarray


def decompose(pose: np.ndarray, spec: SkeletonSpec) -> PoseDecomposition:
    """Split a pose into the root joint and J-1 root-relative offsets."""
    arr = _check_pose(pose, spec)
    root = arr[spec.root].copy()
    rest = np.delete(arr, spec.root, axis=0)
    return PoseDecomposition(root=root, relative=rest - root)


def compose(parts: PoseDecomposition, spec: SkeletonSpec) -> np.ndarray:
    """Inverse of :func:`decompose`; round trips agree to rounding error."""
    relative = np.asarray(parts.relative, dtype=np.float64)
    if relative.shape != (spec.num_joints - 1, 3):
        raise ValueError(
            f"relative part must have shape ({spec.num_joints - 1}, 3), got {relative.shape}"
        )
    root = np.asarray(parts.root, dtype=np.float64).reshape(3)
    joints = relative + root
    return np.insert(joints, spec.root, root, axis=0)


def pose_to_vector(pose: np.ndarray, spec: SkeletonSpec) -> np.ndarray:
    """Flatten a pose to [root, relative offsets], the network output layout."""
    parts = decompose(pose, spec)
    return np.concatenate([parts.root, parts.relative.ravel()])


def vector_to_pose(vec: np.ndarray, spec: SkeletonSpec) -> np.ndarray:
    """Inverse of :func:`pose_to_vector`."""
    arr = np.asarray(vec, dtype=np.float64).ravel()
    if arr.size != 3 * spec.num_joints:
        raise ValueError(f"expected {3 * spec.num_joints} values, got {arr.size}")
    parts = PoseDecomposition(root=arr[:3], relative=arr[3:].reshape(-1, 3))
    return compose(parts, spec)


def knee_neck_distance(pose: np.ndarray, spec: SkeletonSpec) -> float:
    """Distance from the neck to the midpoint of the two knees, in mm."""
    arr = _check_pose(pose, spec)
    mid_knee = 0.5 * (arr[spec.knees[0]] + arr[spec.knees[1]])
    return float(np.linalg.norm(arr[spec.neck] - mid_knee))


def height_normalize(pose: np.ndarray, spec: SkeletonSpec, target_length: float = 920.0) -> np.ndarray:
    """Rescale a pose about its hip so the knee-to-neck extent hits a target.

    The hip stays exactly where it is, which preserves the absolute
    location while removing body-size variation; useful when comparing
    skeletons of people with different heights.
    """
    if target_length <= 0:
        raise ValueError(f"target_length must be > 0, got {target_length}")
    arr = _check_pose(pose, spec)
    current = knee_neck_distance(arr, spec)
    if current <= 0.0 or not np.isfinite(current):
        raise DegeneratePoseError(f"knee-to-neck distance is {current}, cannot normalize")
    root = arr[spec.root]
    return root + (arr - root) * (target_length / current)
