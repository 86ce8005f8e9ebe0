"""Standard contrastive objectives and momentum bookkeeping.

Three variants are supported: ``simclr`` (in-batch negatives), ``moco``
(momentum-encoded keys with queued negatives), and ``byol`` (positive-only,
predictor against momentum targets).  Embedding inputs to softmax-based terms
are expected unit-normalized; similarities are plain inner products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var, exp, log, norm2, scalar_of, sqrt, stack_rows, value_of
from .batch import BatchEmbeddings
from .encoder import EncoderParams, flatten_params, num_params, unflatten_params
from .errors import InvalidInputError

VARIANTS = ("simclr", "moco", "byol")


@dataclass(frozen=True)
class SimilarityConfig:
    alpha: float = 0.1
    similarity: str = "cosine"
    variant: str = "simclr"

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidInputError("temperature alpha must be positive")
        if self.similarity != "cosine":
            raise InvalidInputError(f"unsupported similarity {self.similarity!r}")
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {self.variant!r}; expected {VARIANTS}")


def _as_rows(vectors):
    """Normalize a sequence-of-vectors / matrix argument to a 2-D node."""
    if isinstance(vectors, Var):
        return vectors if vectors.value.ndim == 2 else stack_rows([vectors])
    if isinstance(vectors, (list, tuple)):
        if len(vectors) == 0:
            return None
        if any(isinstance(v, Var) for v in vectors):
            return stack_rows(vectors)
        return np.stack([np.asarray(v, dtype=float) for v in vectors])
    arr = np.asarray(vectors, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr if arr.shape[0] else None


def info_nce(anchor, positives, negatives, alpha: float):
    """Softmax contrast of positives against positives-plus-negatives.

    ``-log [ sum_pos exp(sim/alpha) / sum_{pos+neg} exp(sim/alpha) ]`` with
    ``sim`` the inner product of the (unit-normalized) embeddings.
    """
    if not alpha > 0:
        raise InvalidInputError("temperature alpha must be positive")
    pos = _as_rows(positives)
    neg = _as_rows(negatives)
    if pos is None or value_of(pos).shape[0] == 0:
        raise InvalidInputError("info_nce needs at least one positive")
    if neg is None or value_of(neg).shape[0] == 0:
        raise InvalidInputError("info_nce needs at least one negative")
    pos_sims = (pos @ anchor) / alpha
    neg_sims = (neg @ anchor) / alpha
    shift = max(float(np.max(value_of(pos_sims))), float(np.max(value_of(neg_sims))))
    pos_sum = exp(pos_sims - shift).sum()
    neg_sum = exp(neg_sims - shift).sum()
    return log(pos_sum + neg_sum) - log(pos_sum)


def byol_loss(prediction, targets):
    """Positive-only alignment: ``sum_targets (2 - 2 cos(prediction, target))``."""
    rows = _as_rows(targets)
    if rows is None or value_of(rows).shape[0] == 0:
        raise InvalidInputError("byol_loss needs at least one target")
    p_norm = norm2(prediction)
    if scalar_of(p_norm) == 0.0:
        raise InvalidInputError("prediction has zero norm")
    t_norms = sqrt((rows * rows).sum(axis=1))
    if np.any(value_of(t_norms) == 0.0):
        raise InvalidInputError("a target has zero norm")
    cos = (rows @ prediction) / (t_norms * p_norm)
    return (2.0 - 2.0 * cos).sum()


def momentum_update(theta_m: EncoderParams, theta: EncoderParams, gamma_ema: float) -> EncoderParams:
    """Exponential moving average: ``theta_m <- gamma * theta_m + (1-gamma) * theta``."""
    if not 0.0 <= gamma_ema <= 1.0:
        raise InvalidInputError("gamma_ema must lie in [0, 1]")
    if num_params(theta_m) != num_params(theta):
        raise InvalidInputError("parameter sets have different sizes")
    for (wm, bm), (w, b) in zip(theta_m.frame_layers, theta.frame_layers):
        if value_of(wm).shape != value_of(w).shape or value_of(bm).shape != value_of(b).shape:
            raise InvalidInputError("parameter sets have mismatched shapes")
    blended = gamma_ema * flatten_params(theta_m) + (1.0 - gamma_ema) * flatten_params(theta)
    return unflatten_params(theta_m, blended)


def batch_contrastive_loss(batch: BatchEmbeddings, config: SimilarityConfig):
    """Mean of per-anchor variant losses over every view in the batch."""
    n = batch.n_views
    terms = []
    for t in range(n):
        pos_idx = batch.positive_indices(t)
        if not pos_idx:
            raise InvalidInputError(f"view {t} has no positive in the batch")
        if config.variant == "simclr":
            neg_idx = batch.negative_indices(t)
            term = info_nce(
                batch.row(t),
                batch.views[np.asarray(pos_idx)],
                batch.views[np.asarray(neg_idx)],
                config.alpha,
            )
        elif config.variant == "moco":
            if batch.targets is None:
                raise InvalidInputError("moco batches need momentum-encoded targets")
            negatives = batch.queue
            if negatives is None or negatives.shape[0] == 0:
                # Cold queue: fall back to in-batch momentum keys of other videos.
                negatives = batch.targets[np.asarray(batch.negative_indices(t))]
            term = info_nce(
                batch.row(t), batch.targets[np.asarray(pos_idx)], negatives, config.alpha
            )
        else:  # byol
            if batch.targets is None or batch.predictions is None:
                raise InvalidInputError("byol batches need targets and predictions")
            term = byol_loss(batch.predictions[t], batch.targets[np.asarray(pos_idx)])
        terms.append(term)
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total / float(n)
