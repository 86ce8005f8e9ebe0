"""Per-frame MLP encoder, projection head, and parameter plumbing.

The encoder maps a frame ``x`` (``obs_dim`` reals) through dense layers with
tanh between them (final layer linear) to an ``embed_dim`` vector ``u``.  The
clip embedding is the projection head applied to the temporal mean of the
per-frame embeddings, unit-normalized when a cosine objective is active.
A momentum-trained variant may carry a predictor head (one tanh hidden layer).

Every forward function is generic: passing plain ndarrays computes values,
passing ``autodiff.Var`` parameters builds a differentiable graph.  ``grad``
wraps that machinery into "gradient of a scalar loss w.r.t. flattened
parameters".

Checkpoint format (little-endian):
  magic ``BDCK``, u32 version, u64 seed, u16 hash length + config-hash bytes,
  u32 frame-layer count + (u32 out, u32 in) per layer, u32 proj out/in,
  u8 predictor flag (+ layer dims as above), u8 momentum-copy flag,
  u64 parameter count, f64 flattened parameters (then the momentum copy).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Var, grad_and_value, norm2, scalar_of, tanh, value_of
from .errors import InvalidInputError

_MAGIC = b"BDCK"
_VERSION = 1


@dataclass
class EncoderParams:
    """Weights for the frame encoder, projection head, and optional predictor.

    Layers are ``(weight, bias)`` pairs with weight shape ``(out, in)``.
    Fields hold ndarrays normally and ``Var`` nodes while differentiating.
    """

    frame_layers: list[tuple]
    proj: tuple
    predictor: list[tuple] | None = None

    @property
    def obs_dim(self) -> int:
        return self.frame_layers[0][0].shape[1]

    @property
    def embed_dim(self) -> int:
        return self.frame_layers[-1][0].shape[0]

    @property
    def proj_dim(self) -> int:
        return self.proj[0].shape[0]


def init_params(
    rng: np.random.Generator,
    obs_dim: int,
    embed_dim: int,
    hidden_dims: tuple[int, ...] = (64,),
    proj_dim: int | None = None,
    predictor: bool = False,
    embed_gain: float = 1.0,
) -> EncoderParams:
    """Random initialization: W ~ N(0, 1/fan_in), zero biases.

    ``embed_gain`` scales the frame-embedding output layer, setting the
    natural magnitude of per-frame embeddings (and with it the relative
    weight of embedding-space prediction losses against normalized
    similarity losses).
    """
    if proj_dim is None:
        proj_dim = embed_dim

    def layer(n_out, n_in, gain=1.0):
        w = gain * rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))
        return w, np.zeros(n_out)

    dims = [obs_dim, *hidden_dims, embed_dim]
    frame_layers = [
        layer(dims[i + 1], dims[i], gain=embed_gain if i == len(dims) - 2 else 1.0)
        for i in range(len(dims) - 1)
    ]
    proj = layer(proj_dim, embed_dim)
    pred = None
    if predictor:
        pred = [layer(4 * embed_dim, proj_dim), layer(proj_dim, 4 * embed_dim)]
    return EncoderParams(frame_layers=frame_layers, proj=proj, predictor=pred)


def identity_params(dim: int) -> EncoderParams:
    """Linear identity encoder (obs_dim == embed_dim == proj_dim)."""
    eye = np.eye(dim)
    zero = np.zeros(dim)
    return EncoderParams(frame_layers=[(eye.copy(), zero.copy())], proj=(eye.copy(), zero.copy()))


# -- flatten / unflatten ------------------------------------------------------

def _layer_arrays(params: EncoderParams):
    for w, b in params.frame_layers:
        yield w
        yield b
    yield params.proj[0]
    yield params.proj[1]
    if params.predictor is not None:
        for w, b in params.predictor:
            yield w
            yield b


def num_params(params: EncoderParams) -> int:
    return sum(value_of(a).size for a in _layer_arrays(params))


def flatten_params(params: EncoderParams) -> np.ndarray:
    return np.concatenate([value_of(a).ravel() for a in _layer_arrays(params)])


def unflatten_params(template: EncoderParams, flat) -> EncoderParams:
    """Rebuild an EncoderParams with ``template``'s shapes from a flat vector.

    ``flat`` may be a plain vector or a ``Var``; in the latter case the result
    holds differentiable slices of it.
    """
    if not isinstance(flat, Var):
        flat = np.asarray(flat, dtype=float)
    if value_of(flat).size != num_params(template):
        raise InvalidInputError(
            f"flat vector has {value_of(flat).size} entries, template needs {num_params(template)}"
        )
    pos = 0

    def take(ref):
        nonlocal pos
        ref = value_of(ref)
        chunk = flat[pos : pos + ref.size].reshape(ref.shape)
        pos += ref.size
        return chunk

    frame_layers = [(take(w), take(b)) for w, b in template.frame_layers]
    proj = (take(template.proj[0]), take(template.proj[1]))
    pred = None
    if template.predictor is not None:
        pred = [(take(w), take(b)) for w, b in template.predictor]
    return EncoderParams(frame_layers=frame_layers, proj=proj, predictor=pred)




# -- forward passes -----------------------------------------------------------

def _mlp(layers, x):
    h = x
    for i, (w, b) in enumerate(layers):
        h = w @ h + b.reshape((b.shape[0], 1))
        if i < len(layers) - 1:
            h = tanh(h)
    return h


def embed_frames(params: EncoderParams, frames):
    """Per-frame embeddings: columns of the result follow the frame order.

    ``frames`` has one frame per row (shape ``L x obs_dim``); the result has
    shape ``embed_dim x L``.
    """
    x = frames.T if isinstance(frames, Var) else np.asarray(frames, dtype=float).T
    if x.shape[0] != params.obs_dim:
        raise InvalidInputError(
            f"frames have dim {x.shape[0]}, encoder expects {params.obs_dim}"
        )
    return _mlp(params.frame_layers, x)


def pool_frames(u):
    """Temporal mean of per-frame embeddings (columns of ``u``)."""
    return u.mean(axis=1)


def project_pooled(params: EncoderParams, pooled, normalize: bool = True):
    w, b = params.proj
    z = w @ pooled + b
    if normalize:
        n = norm2(z)
        if scalar_of(n) == 0.0:
            raise InvalidInputError("cannot normalize a zero clip embedding")
        z = z / n
    return z


def embed_clip(params: EncoderParams, frames, normalize: bool = True):
    """Clip embedding: projection of the temporal mean of frame embeddings."""
    u = embed_frames(params, frames)
    return project_pooled(params, pool_frames(u), normalize=normalize)


def predictor_forward(params: EncoderParams, z):
    if params.predictor is None:
        raise InvalidInputError("encoder has no predictor head")
    h = z
    for i, (w, b) in enumerate(params.predictor):
        h = w @ h + b
        if i < len(params.predictor) - 1:
            h = tanh(h)
    return h


# -- gradients ----------------------------------------------------------------

def grad(params: EncoderParams, loss_fn) -> np.ndarray:
    """Reverse-mode gradient of ``loss_fn(params)`` w.r.t. flattened params."""
    _, g = grad_and_value(lambda flat: loss_fn(unflatten_params(params, flat)), flatten_params(params))
    return g


# -- checkpoints --------------------------------------------------------------

@dataclass
class Checkpoint:
    params: EncoderParams
    seed: int
    config_hash: str = ""
    momentum_params: EncoderParams | None = None


def _pack_dims(params: EncoderParams) -> bytes:
    out = struct.pack("<I", len(params.frame_layers))
    for w, _ in params.frame_layers:
        out += struct.pack("<II", w.shape[0], w.shape[1])
    out += struct.pack("<II", params.proj[0].shape[0], params.proj[0].shape[1])
    if params.predictor is None:
        out += struct.pack("<B", 0)
    else:
        out += struct.pack("<B", 1)
        out += struct.pack("<I", len(params.predictor))
        for w, _ in params.predictor:
            out += struct.pack("<II", w.shape[0], w.shape[1])
    return out


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    params = checkpoint.params
    flat = flatten_params(params)
    blob = _MAGIC + struct.pack("<I", _VERSION)
    blob += struct.pack("<Q", checkpoint.seed & 0xFFFFFFFFFFFFFFFF)
    hash_bytes = checkpoint.config_hash.encode("utf-8")
    blob += struct.pack("<H", len(hash_bytes)) + hash_bytes
    blob += _pack_dims(params)
    blob += struct.pack("<B", 0 if checkpoint.momentum_params is None else 1)
    blob += struct.pack("<Q", flat.size)
    blob += flat.astype("<f8").tobytes()
    if checkpoint.momentum_params is not None:
        mflat = flatten_params(checkpoint.momentum_params)
        if mflat.size != flat.size:
            raise InvalidInputError("momentum parameters must match the online shapes")
        blob += mflat.astype("<f8").tobytes()
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:4] != _MAGIC:
        raise InvalidInputError(f"{path} is not an encoder checkpoint")
    pos = 4
    (version,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if version != _VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    (seed,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    (hash_len,) = struct.unpack_from("<H", blob, pos)
    pos += 2
    config_hash = blob[pos : pos + hash_len].decode("utf-8")
    pos += hash_len

    (n_frame,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    frame_dims = []
    for _ in range(n_frame):
        o, i = struct.unpack_from("<II", blob, pos)
        pos += 8
        frame_dims.append((o, i))
    proj_o, proj_i = struct.unpack_from("<II", blob, pos)
    pos += 8
    (has_pred,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    pred_dims = None
    if has_pred:
        (n_pred,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        pred_dims = []
        for _ in range(n_pred):
            o, i = struct.unpack_from("<II", blob, pos)
            pos += 8
            pred_dims.append((o, i))
    (has_m,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    (count,) = struct.unpack_from("<Q", blob, pos)
    pos += 8

    template = EncoderParams(
        frame_layers=[(np.zeros((o, i)), np.zeros(o)) for o, i in frame_dims],
        proj=(np.zeros((proj_o, proj_i)), np.zeros(proj_o)),
        predictor=None
        if pred_dims is None
        else [(np.zeros((o, i)), np.zeros(o)) for o, i in pred_dims],
    )
    if count != num_params(template):
        raise InvalidInputError("checkpoint parameter count does not match its dims")
    flat = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(float)
    pos += count * 8
    params = unflatten_params(template, flat)
    momentum = None
    if has_m:
        mflat = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(float)
        momentum = unflatten_params(template, mflat)
    return Checkpoint(params=params, seed=int(seed), config_hash=config_hash, momentum_params=momentum)


def copy_params(params: EncoderParams) -> EncoderParams:
    return unflatten_params(params, flatten_params(params))
