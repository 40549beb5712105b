"""Procedural stick-figure pose dataset.

Figures are drawn facing the camera, so the person's left side lands on the
image right; horizontal flips swap left/right labels through the skeleton's
mirror pairs. Joint coordinates are in heatmap pixels; image pixels are
``stride`` times finer, with pixel centres aligned so that map pixel ``c``
covers image pixels ``stride*c .. stride*c + stride - 1``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError, FormatError

MAGIC = b"PGND"
VERSION = 1
_HEADER = struct.Struct("<4s7I")


@dataclass(frozen=True)
class Skeleton:
    joint_names: Tuple[str, ...]
    parent: Tuple[int, ...]
    # canonical (dx, dy) of each joint relative to its parent, map px; root entry unused
    offsets: Tuple[Tuple[float, float], ...]
    mirror_pairs: Tuple[Tuple[int, int], ...]

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def bone_lengths(self) -> np.ndarray:
        return np.array([math.hypot(*o) if p >= 0 else 0.0 for o, p in zip(self.offsets, self.parent)])

    def index(self, name: str) -> int:
        return self.joint_names.index(name)

    def mirror_permutation(self) -> np.ndarray:
        perm = np.arange(self.num_joints)
        for a, b in self.mirror_pairs:
            perm[a], perm[b] = b, a
        return perm

    def children(self, j: int) -> List[int]:
        return [c for c, p in enumerate(self.parent) if p == j]

    def root(self) -> int:
        return self.parent.index(-1)

    def topological_order(self) -> List[int]:
        order, stack = [], [self.root()]
        while stack:
            j = stack.pop(0)
            order.append(j)
            stack.extend(self.children(j))
        return order


def lsp_skeleton() -> Skeleton:
    """14-joint skeleton rooted at the neck."""
    names = (
        "head_top", "neck",
        "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
        "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
    )
    parent = (1, -1, 1, 1, 2, 3, 4, 5, 1, 1, 8, 9, 10, 11)
    offsets = (
        (0.0, -4.0), (0.0, 0.0),
        (3.0, 0.5), (-3.0, 0.5), (1.0, 4.4), (-1.0, 4.4), (0.5, 4.0), (-0.5, 4.0),
        (2.0, 8.5), (-2.0, 8.5), (0.3, 5.5), (-0.3, 5.5), (0.0, 5.5), (0.0, 5.5),
    )
    mirror = ((2, 3), (4, 5), (6, 7), (8, 9), (10, 11), (12, 13))
    return Skeleton(names, parent, offsets, mirror)


# per-joint angular range (degrees) of the bone ending at that joint, relative to its parent bone
_DEFAULT_ANGLE_RANGES = (20.0, 0.0, 10.0, 10.0, 60.0, 60.0, 75.0, 75.0, 8.0, 8.0, 30.0, 30.0, 35.0, 35.0)


@dataclass(frozen=True)
class Difficulty:
    angle_ranges: Tuple[float, ...] = _DEFAULT_ANGLE_RANGES
    angle_scale: float = 1.0
    global_rotation: float = 10.0
    figure_scale: float = 0.85
    length_jitter: float = 0.08
    thickness: Tuple[float, float] = (1.6, 2.6)
    limb_intensity: Tuple[float, float] = (0.45, 1.0)
    noise_std: float = 0.06
    clutter_lines: int = 2
    occluder_prob: float = 0.3
    max_occluders: int = 2
    occluder_size: Tuple[float, float] = (8.0, 18.0)


@dataclass(frozen=True)
class AugmentConfig:
    scale: Tuple[float, float] = (0.75, 1.25)
    rotation: Tuple[float, float] = (-30.0, 30.0)
    flip_prob: float = 0.5
    gain: Tuple[float, float] = (0.7, 1.3)


IDENTITY_AUGMENT = AugmentConfig(scale=(1.0, 1.0), rotation=(0.0, 0.0), flip_prob=0.0, gain=(1.0, 1.0))


@dataclass
class Sample:
    image: np.ndarray  # (1, H_img, W_img) in [0, 1]
    joints: np.ndarray  # (K, 2) as (x, y) in heatmap px
    visible: np.ndarray  # (K,) bool, joint inside the heatmap
    gt_heatmaps: np.ndarray  # (K, H, W)
    head_len: float
    torso_len: float

    @property
    def map_size(self) -> Tuple[int, int]:
        return self.gt_heatmaps.shape[1], self.gt_heatmaps.shape[2]

    def equals(self, other: "Sample") -> bool:
        return (
            np.array_equal(self.image, other.image)
            and np.array_equal(self.joints, other.joints)
            and np.array_equal(self.visible, other.visible)
            and np.array_equal(self.gt_heatmaps, other.gt_heatmaps)
            and self.head_len == other.head_len
            and self.torso_len == other.torso_len
        )


@dataclass
class SampleBatch:
    """Column-stacked samples, the layout training and evaluation consume."""

    images: np.ndarray  # (N, 1, H_img, W_img)
    joints: np.ndarray  # (N, K, 2)
    visible: np.ndarray  # (N, K)
    heatmaps: np.ndarray  # (N, K, H, W)
    head_len: np.ndarray  # (N,)
    torso_len: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "SampleBatch":
        return SampleBatch(*(a[idx] for a in (self.images, self.joints, self.visible,
                                               self.heatmaps, self.head_len, self.torso_len)))


def stack_samples(samples: Sequence[Sample], dtype=np.float64) -> SampleBatch:
    return SampleBatch(
        images=np.stack([s.image for s in samples]).astype(dtype),
        joints=np.stack([s.joints for s in samples]).astype(np.float64),
        visible=np.stack([s.visible for s in samples]).astype(bool),
        heatmaps=np.stack([s.gt_heatmaps for s in samples]).astype(dtype),
        head_len=np.array([s.head_len for s in samples], dtype=np.float64),
        torso_len=np.array([s.torso_len for s in samples], dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# rendering


def render_gaussian(joint: Tuple[float, float], sigma: float, H: int, W: int) -> np.ndarray:
    """Unnormalised Gaussian bump with peak 1 at ``joint = (x, y)``."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    x, y = joint
    cols = np.arange(W, dtype=np.float64)
    rows = np.arange(H, dtype=np.float64)
    gx = np.exp(-((cols - x) ** 2) / (2 * sigma * sigma))
    gy = np.exp(-((rows - y) ** 2) / (2 * sigma * sigma))
    return np.outer(gy, gx)


def round_half_up(v):
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5)


def render_heatmaps(joints: np.ndarray, sigma: float, H: int, W: int) -> np.ndarray:
    # centred on the rounded joint so the peak value is exactly 1 at the labelled pixel
    return np.stack([render_gaussian(tuple(round_half_up(j)), sigma, H, W) for j in joints])


def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    ll = dx * dx + dy * dy
    if ll == 0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / ll, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _draw_segment(img, a, b, thickness, intensity):
    H, W = img.shape
    py, px = np.mgrid[0:H, 0:W].astype(np.float64)
    cover = np.clip(thickness / 2 + 0.5 - _segment_distance(px, py, a, b), 0.0, 1.0)
    np.maximum(img, cover * intensity, out=img)


def _draw_disc(img, centre, radius, intensity):
    H, W = img.shape
    py, px = np.mgrid[0:H, 0:W].astype(np.float64)
    cover = np.clip(radius + 0.5 - np.hypot(px - centre[0], py - centre[1]), 0.0, 1.0)
    np.maximum(img, cover * intensity, out=img)


def map_to_image(p: np.ndarray, stride: int) -> np.ndarray:
    return np.asarray(p, dtype=np.float64) * stride + (stride - 1) / 2.0


# ---------------------------------------------------------------------------
# sampling


def _pose_joints(skel: Skeleton, rng: np.random.Generator, diff: Difficulty) -> np.ndarray:
    K = skel.num_joints
    if len(diff.angle_ranges) != K:
        raise ConfigError(f"angle_ranges has {len(diff.angle_ranges)} entries, skeleton has {K} joints")
    lengths = skel.bone_lengths * diff.figure_scale
    if np.any(lengths[np.array(skel.parent) >= 0] <= 0) or diff.figure_scale <= 0:
        raise ConfigError("degenerate skeleton: zero bone length")
    # draw every random number up front so the stream layout is independent of the values
    ranges = np.radians(np.asarray(diff.angle_ranges) * diff.angle_scale)
    local = rng.uniform(-1.0, 1.0, size=K) * ranges
    jitter = 1.0 + rng.uniform(-1.0, 1.0, size=K) * diff.length_jitter
    glob = math.radians(rng.uniform(-1.0, 1.0) * diff.global_rotation)

    joints = np.zeros((K, 2))
    accumulated = np.zeros(K)  # rotation accumulated along the chain
    for j in skel.topological_order():
        p = skel.parent[j]
        if p < 0:
            accumulated[j] = glob
            continue
        rot = accumulated[p] + local[j]
        accumulated[j] = rot
        dx, dy = skel.offsets[j]
        base = math.atan2(dy, dx) + rot
        L = lengths[j] * jitter[j]
        joints[j] = joints[p] + L * np.array([math.cos(base), math.sin(base)])
    return joints


def _place(joints, rng, H, W, margin=1.0):
    lo, hi = joints.min(axis=0), joints.max(axis=0)
    size = np.array([W - 1, H - 1], dtype=np.float64)
    low = margin - lo
    high = size - margin - hi
    u = rng.uniform(0.0, 1.0, size=2)
    shift = np.where(high >= low, low + u * (high - low), (size - (lo + hi)) / 2.0)
    return joints + shift


def _in_bounds(joints, H, W):
    return (joints[:, 0] >= 0) & (joints[:, 0] <= W - 1) & (joints[:, 1] >= 0) & (joints[:, 1] <= H - 1)


def _norm_lengths(skel: Skeleton, joints: np.ndarray) -> Tuple[float, float]:
    head = float(np.linalg.norm(joints[skel.index("head_top")] - joints[skel.index("neck")]))
    sh = (joints[skel.index("l_shoulder")] + joints[skel.index("r_shoulder")]) / 2
    hp = (joints[skel.index("l_hip")] + joints[skel.index("r_hip")]) / 2
    return head, float(np.linalg.norm(sh - hp))


def limb_segments(skel: Skeleton) -> List[Tuple[int, int]]:
    segs = [(p, j) for j, p in enumerate(skel.parent) if p >= 0 and skel.joint_names[j] != "head_top"]
    segs.append((skel.index("l_hip"), skel.index("r_hip")))
    return segs


def sample_pose(
    skeleton: Skeleton,
    rng_seed: int,
    difficulty: Difficulty = Difficulty(),
    map_size: Tuple[int, int] = (32, 32),
    stride: int = 2,
    sigma: float = 1.0,
) -> Sample:
    """Draw one figure, render it and its ground truth; deterministic in ``rng_seed``."""
    H, W = map_size
    rng = np.random.default_rng(rng_seed)
    joints = _place(_pose_joints(skeleton, rng, difficulty), rng, H, W)

    Hi, Wi = H * stride, W * stride
    img = np.zeros((Hi, Wi))
    jimg = map_to_image(joints, stride)
    segs = limb_segments(skeleton)
    thick = rng.uniform(*difficulty.thickness, size=len(segs) + 1) * stride / 2
    inten = rng.uniform(*difficulty.limb_intensity, size=len(segs) + 1)
    for (a, b), t, v in zip(segs, thick, inten):
        _draw_segment(img, jimg[a], jimg[b], t, v)
    head, neck = jimg[skeleton.index("head_top")], jimg[skeleton.index("neck")]
    _draw_disc(img, (head + neck) / 2, np.linalg.norm(head - neck) / 2, inten[-1])

    # clutter strokes, then occluders; draws are unconditional to keep the stream stable
    clutter = rng.uniform(0, 1, size=(max(difficulty.clutter_lines, 0), 6))
    for c in clutter:
        a = c[:2] * [Wi - 1, Hi - 1]
        ang = c[2] * 2 * math.pi
        L = (0.15 + 0.25 * c[3]) * Wi
        b = a + L * np.array([math.cos(ang), math.sin(ang)])
        _draw_segment(img, a, b, stride * (0.6 + 0.6 * c[4]), 0.3 + 0.6 * c[5])
    n_occ = int(rng.integers(1, max(difficulty.max_occluders, 1) + 1))
    occ_on = rng.uniform() < difficulty.occluder_prob
    occ = rng.uniform(0, 1, size=(max(difficulty.max_occluders, 1), 5))
    if occ_on:
        lo, hi = difficulty.occluder_size
        for o in occ[:n_occ]:
            w, h = (lo + (hi - lo) * o[2]) * stride / 2, (lo + (hi - lo) * o[3]) * stride / 2
            # centre on the figure so the occluder actually hides something
            cx = jimg[:, 0].min() + o[0] * np.ptp(jimg[:, 0])
            cy = jimg[:, 1].min() + o[1] * np.ptp(jimg[:, 1])
            r0, r1 = int(max(cy - h / 2, 0)), int(min(cy + h / 2, Hi))
            c0, c1 = int(max(cx - w / 2, 0)), int(min(cx + w / 2, Wi))
            img[r0:r1, c0:c1] = 0.15 + 0.3 * o[4]
    noise = rng.normal(0.0, 1.0, size=img.shape) * difficulty.noise_std
    img = np.clip(img + noise, 0.0, 1.0)

    head_len, torso_len = _norm_lengths(skeleton, joints)
    return Sample(
        image=img[None].astype(np.float32),
        joints=joints,
        visible=_in_bounds(joints, H, W),
        gt_heatmaps=render_heatmaps(joints, sigma, H, W).astype(np.float32),
        head_len=head_len,
        torso_len=torso_len,
    )


def generate(
    count: int,
    seed: int,
    skeleton: Optional[Skeleton] = None,
    difficulty: Difficulty = Difficulty(),
    map_size: Tuple[int, int] = (32, 32),
    stride: int = 2,
    sigma: float = 1.0,
) -> List[Sample]:
    skeleton = skeleton or lsp_skeleton()
    seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32)
    return [sample_pose(skeleton, int(s), difficulty, map_size, stride, sigma) for s in seeds]


# ---------------------------------------------------------------------------
# augmentation


def apply_transform(
    sample: Sample,
    skeleton: Skeleton,
    scale: float = 1.0,
    rotation_deg: float = 0.0,
    flip: bool = False,
    gain: float = 1.0,
    sigma: float = 1.0,
) -> Sample:
    """Scale/rotate about the map centre, optionally mirror, then apply an intensity gain."""
    K, H, W = sample.gt_heatmaps.shape
    _, Hi, Wi = sample.image.shape
    th = math.radians(rotation_deg)
    A = scale * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    if flip:
        A = A @ np.diag([-1.0, 1.0])

    identity = np.array_equal(A, np.eye(2))
    centre = np.array([(W - 1) / 2.0, (H - 1) / 2.0])
    joints = sample.joints.copy() if identity else (sample.joints - centre) @ A.T + centre
    if flip:
        joints = joints[skeleton.mirror_permutation()]
    visible = _in_bounds(joints, H, W)

    img = sample.image[0].astype(np.float64)
    if not identity:
        ci = np.array([(Wi - 1) / 2.0, (Hi - 1) / 2.0])
        inv = np.linalg.inv(A)
        # affine_transform works in (row, col); swap the xy matrix accordingly
        m = inv[::-1, ::-1]
        offset = ci[::-1] - m @ ci[::-1]
        img = ndimage.affine_transform(img, m, offset=offset, order=1, mode="constant", cval=0.0)
    if gain != 1.0:
        img = img * gain
    img = np.clip(img, 0.0, 1.0)

    return Sample(
        image=img[None].astype(sample.image.dtype),
        joints=joints,
        visible=visible,
        gt_heatmaps=render_heatmaps(joints, sigma, H, W).astype(sample.gt_heatmaps.dtype),
        head_len=float(sample.head_len * scale),
        torso_len=float(sample.torso_len * scale),
    )


def augment(
    sample: Sample,
    rng_seed: int,
    cfg: AugmentConfig = AugmentConfig(),
    skeleton: Optional[Skeleton] = None,
    sigma: float = 1.0,
) -> Sample:
    rng = np.random.default_rng(rng_seed)
    u = rng.uniform(0.0, 1.0, size=4)
    scale = float(cfg.scale[0] + u[0] * (cfg.scale[1] - cfg.scale[0]))
    rot = float(cfg.rotation[0] + u[1] * (cfg.rotation[1] - cfg.rotation[0]))
    flip = bool(u[2] < cfg.flip_prob)
    gain = float(cfg.gain[0] + u[3] * (cfg.gain[1] - cfg.gain[0]))
    return apply_transform(sample, skeleton or lsp_skeleton(), scale, rot, flip, gain, sigma)


# ---------------------------------------------------------------------------
# on-disk format


def record_size(K: int, H: int, W: int, Hi: int, Wi: int) -> int:
    return 4 * (Hi * Wi + 2 * K + K + K * H * W + 2)


def write_dataset(samples: Sequence[Sample], path) -> None:
    if not samples:
        raise FormatError("refusing to write an empty dataset")
    K, H, W = samples[0].gt_heatmaps.shape
    _, Hi, Wi = samples[0].image.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(samples), K, H, W, Hi, Wi))
        for s in samples:
            if s.gt_heatmaps.shape != (K, H, W) or s.image.shape != (1, Hi, Wi):
                raise FormatError("all samples must share dimensions")
            parts = (
                s.image.reshape(-1), s.joints.reshape(-1), s.visible.astype(np.float32),
                s.gt_heatmaps.reshape(-1), np.array([s.head_len, s.torso_len]),
            )
            fh.write(np.concatenate([np.asarray(p, dtype="<f4") for p in parts]).tobytes())


def read_dataset(path) -> List[Sample]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, count, K, H, W, Hi, Wi = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    rec = record_size(K, H, W, Hi, Wi)
    expected = _HEADER.size + count * rec
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated payload ({len(raw)} bytes, header implies {expected})")
    if len(raw) != expected:
        raise FormatError(f"{path}: dimension mismatch ({len(raw)} bytes, header implies {expected})")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, rec // 4)
    out = []
    for row in data:
        o = 0

        def take(n):
            nonlocal o
            seg = row[o:o + n]
            o += n
            return seg

        image = take(Hi * Wi).reshape(1, Hi, Wi).astype(np.float32)
        joints = take(2 * K).reshape(K, 2).astype(np.float64)
        visible = take(K) > 0.5
        hm = take(K * H * W).reshape(K, H, W).astype(np.float32)
        head, torso = take(2)
        out.append(Sample(image, joints, visible, hm, float(head), float(torso)))
    return out


def to_float32(sample: Sample) -> Sample:
    """The exact values a round-trip through the file format yields."""
    return replace(
        sample,
        image=sample.image.astype(np.float32),
        joints=sample.joints.astype(np.float32).astype(np.float64),
        gt_heatmaps=sample.gt_heatmaps.astype(np.float32),
        head_len=float(np.float32(sample.head_len)),
        torso_len=float(np.float32(sample.torso_len)),
    )
