"""Synthetic clip datasets from latent linear dynamical systems.

Each clip follows ``z_{t+1} = A z_t`` with ``A`` block-diagonal over identity
blocks (static content), 2x2 rotation blocks (oscillation), and scalar decay
blocks.  Frames are observed as ``x_t = W z_t + b + noise``.  Labels encode
either the first rotation block's angle (``by_rotation_angle``) or the static
offset ``b`` (``by_static_offset``); the other attribute is randomized per
clip so it acts as a nuisance.

All randomness derives from per-clip child seeds, so generation is
order-independent and reproducible.

Dataset file layout (little-endian):
  magic ``BDDS``, u32 version, u32 header length + UTF-8 config echo
  (flat key-value text), u32 clip count, then per clip:
  u32 video id, u32 label, u32 T, u32 obs dim, f64[T*D] frames (row-major,
  time outermost), u8 ground-truth flag; when set: u32 latent dim,
  f64[d*d] transition matrix, u32 block count, and per block u8 kind
  (0 identity / 1 rotation / 2 decay), u32 size, f64 parameter.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import configio
from .errors import InvalidInputError

_MAGIC = b"BDDS"
_VERSION = 1

BLOCK_IDENTITY = "identity"
BLOCK_ROTATION = "rotation"
BLOCK_DECAY = "decay"

_BLOCK_CODES = {BLOCK_IDENTITY: 0, BLOCK_ROTATION: 1, BLOCK_DECAY: 2}
_BLOCK_NAMES = {v: k for k, v in _BLOCK_CODES.items()}

LABEL_MODES = ("by_rotation_angle", "by_static_offset")
OBSERVATION_STYLES = ("random_linear", "identity")


@dataclass(frozen=True)
class Block:
    """One diagonal block of the latent transition matrix."""

    kind: str
    size: int
    param: float  # 0 for identity, angle for rotation, rate for decay


@dataclass(frozen=True)
class GroundTruth:
    transition: np.ndarray
    blocks: tuple[Block, ...]


@dataclass
class Clip:
    frames: np.ndarray  # (T, obs_dim), one frame per row
    video_id: int
    label: int
    ground_truth: GroundTruth | None = None

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class View:
    """One augmented temporal crop of a clip."""

    frames: np.ndarray  # (L, obs_dim)
    video_id: int
    view_id: int
    start: int


@dataclass
class ViewBatch:
    video_id: int
    views: list[View]


@dataclass
class GeneratorConfig:
    num_videos: int = 500
    frames: int = 32
    obs_dim: int = 16
    static_blocks: int = 2
    rotation_ranges: tuple[tuple[float, float], ...] = ((0.2, 1.4), (0.2, 1.4))
    decay_ranges: tuple[tuple[float, float], ...] = ((0.3, 0.7), (0.3, 0.7))
    rotation_radius: tuple[float, float] = (0.9, 1.1)
    observation: str = "random_linear"
    obs_nonlinearity: str = "none"  # "tanh" squashes observations elementwise
    noise_std: float = 0.01
    label_mode: str = "by_rotation_angle"
    num_classes: int = 4
    angle_jitter: float = 0.03
    static_offset_scale: float = 1.0
    seed: int = 0

    @property
    def latent_dim(self) -> int:
        return self.static_blocks + 2 * len(self.rotation_ranges) + len(self.decay_ranges)

    def validate(self) -> None:
        if self.num_videos < 1 or self.frames < 1 or self.obs_dim < 1:
            raise InvalidInputError("num_videos, frames, and obs_dim must be positive")
        if self.static_blocks < 0:
            raise InvalidInputError("static_blocks must be nonnegative")
        for lo, hi in self.rotation_ranges:
            if not (0.0 < lo <= hi < np.pi):
                raise InvalidInputError("rotation angles must satisfy 0 < lo <= hi < pi")
        for lo, hi in self.decay_ranges:
            if not (0.0 < lo <= hi < 1.0):
                raise InvalidInputError("decay rates must satisfy 0 < lo <= hi < 1")
        if self.latent_dim < 1:
            raise InvalidInputError("latent dimension must be positive")
        if self.observation not in OBSERVATION_STYLES:
            raise InvalidInputError(f"unknown observation style {self.observation!r}")
        if self.obs_nonlinearity not in ("none", "tanh"):
            raise InvalidInputError(f"unknown obs_nonlinearity {self.obs_nonlinearity!r}")
        if self.observation == "identity" and self.obs_dim != self.latent_dim:
            raise InvalidInputError("identity observation requires obs_dim == latent_dim")
        if self.label_mode not in LABEL_MODES:
            raise InvalidInputError(f"unknown label_mode {self.label_mode!r}")
        if self.num_classes < 2:
            raise InvalidInputError("num_classes must be at least 2")
        if self.label_mode == "by_rotation_angle" and not self.rotation_ranges:
            raise InvalidInputError("by_rotation_angle labels need a rotation block")
        if self.noise_std < 0 or self.angle_jitter < 0:
            raise InvalidInputError("noise_std and angle_jitter must be nonnegative")

    def to_text(self) -> str:
        return configio.dumps(
            {
                "num_videos": str(self.num_videos),
                "frames": str(self.frames),
                "obs_dim": str(self.obs_dim),
                "static_blocks": str(self.static_blocks),
                "rotation_ranges": configio.format_range_list(self.rotation_ranges),
                "decay_ranges": configio.format_range_list(self.decay_ranges),
                "rotation_radius": configio.format_range_list([self.rotation_radius]),
                "observation": self.observation,
                "obs_nonlinearity": self.obs_nonlinearity,
                "noise_std": repr(self.noise_std),
                "label_mode": self.label_mode,
                "num_classes": str(self.num_classes),
                "angle_jitter": repr(self.angle_jitter),
                "static_offset_scale": repr(self.static_offset_scale),
                "seed": str(self.seed),
            }
        )

    @classmethod
    def from_text(cls, text: str) -> "GeneratorConfig":
        pairs = configio.loads(text)
        cfg = cls()
        known = {
            "num_videos": lambda v: configio.parse_int("num_videos", v),
            "frames": lambda v: configio.parse_int("frames", v),
            "obs_dim": lambda v: configio.parse_int("obs_dim", v),
            "static_blocks": lambda v: configio.parse_int("static_blocks", v),
            "rotation_ranges": lambda v: configio.parse_range_list("rotation_ranges", v),
            "decay_ranges": lambda v: configio.parse_range_list("decay_ranges", v),
            "rotation_radius": lambda v: _single_range("rotation_radius", v),
            "observation": lambda v: v,
            "obs_nonlinearity": lambda v: v,
            "noise_std": lambda v: configio.parse_float("noise_std", v),
            "label_mode": lambda v: v,
            "num_classes": lambda v: configio.parse_int("num_classes", v),
            "angle_jitter": lambda v: configio.parse_float("angle_jitter", v),
            "static_offset_scale": lambda v: configio.parse_float("static_offset_scale", v),
            "seed": lambda v: configio.parse_int("seed", v),
        }
        values = {}
        for key, raw in pairs.items():
            if key not in known:
                raise InvalidInputError(f"unknown generator config key '{key}'")
            values[key] = known[key](raw)
        cfg = replace(cfg, **values)
        cfg.validate()
        return cfg


def _single_range(key: str, raw: str) -> tuple[float, float]:
    ranges = configio.parse_range_list(key, raw)
    if len(ranges) != 1:
        raise InvalidInputError(f"config key '{key}' expects exactly one 'lo:hi' pair")
    return ranges[0]


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def _build_transition(blocks: list[Block]) -> np.ndarray:
    dim = sum(b.size for b in blocks)
    a = np.zeros((dim, dim))
    pos = 0
    for b in blocks:
        if b.kind == BLOCK_IDENTITY:
            a[pos, pos] = 1.0
        elif b.kind == BLOCK_ROTATION:
            a[pos : pos + 2, pos : pos + 2] = rotation_matrix(b.param)
        else:
            a[pos, pos] = b.param
        pos += b.size
    return a


def class_angles(config: GeneratorConfig) -> np.ndarray:
    """Per-class base angles: evenly spaced across the first rotation range."""
    lo, hi = config.rotation_ranges[0]
    return np.linspace(lo, hi, config.num_classes)


def _class_offsets(config: GeneratorConfig) -> np.ndarray:
    rng = np.random.default_rng([config.seed, 7_654_321])
    return rng.normal(0.0, config.static_offset_scale, size=(config.num_classes, config.obs_dim))


def generate_clip(config: GeneratorConfig, index: int) -> Clip:
    """Deterministically generate clip ``index`` of the configured dataset."""
    rng = np.random.default_rng([config.seed, 1_000_003, index])
    label = index % config.num_classes

    blocks: list[Block] = []
    for _ in range(config.static_blocks):
        blocks.append(Block(BLOCK_IDENTITY, 1, 0.0))
    for j, (lo, hi) in enumerate(config.rotation_ranges):
        if j == 0 and config.label_mode == "by_rotation_angle":
            base = class_angles(config)[label]
            jitter = rng.uniform(-config.angle_jitter, config.angle_jitter)
            angle = float(np.clip(base + jitter, 1e-3, np.pi - 1e-3))
        else:
            angle = float(rng.uniform(lo, hi))
        blocks.append(Block(BLOCK_ROTATION, 2, angle))
    for lo, hi in config.decay_ranges:
        blocks.append(Block(BLOCK_DECAY, 1, float(rng.uniform(lo, hi))))

    a = _build_transition(blocks)
    d = config.latent_dim

    z = np.zeros(d)
    pos = 0
    for b in blocks:
        if b.kind == BLOCK_ROTATION:
            radius = rng.uniform(*config.rotation_radius)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            z[pos] = radius * np.cos(phase)
            z[pos + 1] = radius * np.sin(phase)
        else:
            z[pos] = rng.normal()
        pos += b.size

    if config.observation == "identity":
        w = np.eye(config.obs_dim)
    else:
        w = rng.normal(0.0, 1.0 / np.sqrt(d), size=(config.obs_dim, d))

    if config.label_mode == "by_static_offset":
        offset = _class_offsets(config)[label] + rng.normal(
            0.0, 0.1 * config.static_offset_scale, size=config.obs_dim
        )
    else:
        offset = rng.normal(0.0, config.static_offset_scale, size=config.obs_dim)

    latents = np.empty((config.frames, d))
    latents[0] = z
    for t in range(1, config.frames):
        latents[t] = a @ latents[t - 1]
    frames = latents @ w.T + offset
    if config.obs_nonlinearity == "tanh":
        frames = np.tanh(frames)
    if config.noise_std > 0:
        frames = frames + rng.normal(0.0, config.noise_std, size=frames.shape)

    return Clip(
        frames=frames,
        video_id=index,
        label=label,
        ground_truth=GroundTruth(transition=a, blocks=tuple(blocks)),
    )


def generate_dataset(config: GeneratorConfig) -> list[Clip]:
    config.validate()
    return [generate_clip(config, i) for i in range(config.num_videos)]


# -- view sampling and clip surgeries ----------------------------------------

def sample_views(clip: Clip, rho: int, length: int, delta: int, aug_std: float, seed) -> ViewBatch:
    """Sample ``rho`` strided temporal crops with a per-view constant offset.

    The offset is drawn once per view and added to every frame, so the
    perturbation is identical across a view's frames.
    """
    if rho < 1 or length < 1 or delta < 1:
        raise InvalidInputError("rho, length, and delta must be positive")
    span = 1 + (length - 1) * delta
    if clip.num_frames < span:
        raise InvalidInputError(
            f"clip has {clip.num_frames} frames; L={length}, delta={delta} needs {span}"
        )
    rng = np.random.default_rng(seed)
    views = []
    for v in range(rho):
        start = int(rng.integers(0, clip.num_frames - span + 1))
        idx = start + delta * np.arange(length)
        frames = clip.frames[idx].copy()
        if aug_std > 0:
            frames += rng.normal(0.0, aug_std, size=clip.obs_dim)
        views.append(View(frames=frames, video_id=clip.video_id, view_id=v, start=start))
    return ViewBatch(video_id=clip.video_id, views=views)


def make_static_clip(clip: Clip) -> Clip:
    """Replace every frame with the first one; label and id are preserved."""
    if clip.num_frames < 1:
        raise InvalidInputError("clip has no frames")
    frames = np.tile(clip.frames[0], (clip.num_frames, 1))
    return Clip(
        frames=frames,
        video_id=clip.video_id,
        label=clip.label,
        ground_truth=clip.ground_truth,
    )


def shuffle_clip(clip: Clip, seed) -> tuple[Clip, np.ndarray]:
    """Permute frames by a uniformly random non-identity permutation."""
    if clip.num_frames < 2:
        raise InvalidInputError("need at least two frames to shuffle")
    rng = np.random.default_rng(seed)
    identity = np.arange(clip.num_frames)
    while True:
        perm = rng.permutation(clip.num_frames)
        if not np.array_equal(perm, identity):
            break
    shuffled = Clip(
        frames=clip.frames[perm].copy(),
        video_id=clip.video_id,
        label=clip.label,
        ground_truth=clip.ground_truth,
    )
    return shuffled, perm


# -- dataset file I/O ---------------------------------------------------------

def write_dataset(path, clips: list[Clip], config: GeneratorConfig) -> None:
    header = config.to_text()
    header += f"config_hash = {configio.config_hash(header)}\n"
    header_bytes = header.encode("utf-8")
    parts = [_MAGIC, struct.pack("<I", _VERSION)]
    parts.append(struct.pack("<I", len(header_bytes)))
    parts.append(header_bytes)
    parts.append(struct.pack("<I", len(clips)))
    for clip in clips:
        t, dim = clip.frames.shape
        parts.append(struct.pack("<IIII", clip.video_id, clip.label, t, dim))
        parts.append(np.ascontiguousarray(clip.frames, dtype="<f8").tobytes())
        gt = clip.ground_truth
        if gt is None:
            parts.append(struct.pack("<B", 0))
        else:
            parts.append(struct.pack("<B", 1))
            d = gt.transition.shape[0]
            parts.append(struct.pack("<I", d))
            parts.append(np.ascontiguousarray(gt.transition, dtype="<f8").tobytes())
            parts.append(struct.pack("<I", len(gt.blocks)))
            for b in gt.blocks:
                parts.append(struct.pack("<BId", _BLOCK_CODES[b.kind], b.size, b.param))
    Path(path).write_bytes(b"".join(parts))


def read_dataset(path) -> tuple[list[Clip], GeneratorConfig]:
    blob = Path(path).read_bytes()
    if blob[:4] != _MAGIC:
        raise InvalidInputError(f"{path} is not a dataset file")
    pos = 4
    (version,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if version != _VERSION:
        raise InvalidInputError(f"unsupported dataset version {version}")
    (header_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    header = blob[pos : pos + header_len].decode("utf-8")
    pos += header_len
    pairs = configio.loads(header)
    pairs.pop("config_hash", None)
    config = GeneratorConfig.from_text(configio.dumps(pairs))
    (n_clips,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    clips = []
    for _ in range(n_clips):
        vid, label, t, dim = struct.unpack_from("<IIII", blob, pos)
        pos += 16
        frames = np.frombuffer(blob, dtype="<f8", count=t * dim, offset=pos).reshape(t, dim).copy()
        pos += t * dim * 8
        (has_gt,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        gt = None
        if has_gt:
            (d,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            a = np.frombuffer(blob, dtype="<f8", count=d * d, offset=pos).reshape(d, d).copy()
            pos += d * d * 8
            (n_blocks,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            blocks = []
            for _ in range(n_blocks):
                code, size, param = struct.unpack_from("<BId", blob, pos)
                pos += struct.calcsize("<BId")
                blocks.append(Block(_BLOCK_NAMES[code], size, param))
            gt = GroundTruth(transition=a, blocks=tuple(blocks))
        clips.append(Clip(frames=frames, video_id=vid, label=label, ground_truth=gt))
    return clips, config
