"""One-step linear operator estimation over frame-embedding trajectories.

Given per-frame embeddings ``U`` (columns ordered in time), the operator is
the least-squares solution of ``U_target ~= K @ U_history`` where
``U_history`` holds frames 1..L-1 and ``U_target`` frames 2..L, computed via
the truncated-SVD pseudoinverse.  The estimate is treated as a constant when
differentiating the prediction loss; only the embeddings carry gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var, value_of
from .encoder import EncoderParams, embed_frames
from .errors import InvalidInputError
from .linalg import pinv_with_rank


@dataclass(frozen=True)
class KoopmanEstimate:
    """Estimated one-step operator with diagnostics of the fit."""

    matrix: np.ndarray
    history_rank: int
    condition_hint: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def estimate_koopman(u) -> KoopmanEstimate:
    """Least-squares one-step operator from an embedding trajectory.

    ``u`` has shape ``(M, L)`` with one column per frame; requires ``L >= 2``.
    """
    u = value_of(u)
    if u.ndim != 2:
        raise InvalidInputError(f"embedding trajectory must be 2-D, got shape {u.shape}")
    if u.shape[1] < 2:
        raise InvalidInputError("need at least two frames to estimate the operator")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("embedding trajectory contains non-finite entries")
    history = u[:, :-1]
    target = u[:, 1:]
    inv, rank, cond = pinv_with_rank(history)
    k = target @ inv
    return KoopmanEstimate(matrix=k, history_rank=rank, condition_hint=cond)


def prediction_loss(u, estimate: KoopmanEstimate):
    """Mean squared one-step prediction error of ``estimate`` on trajectory ``u``.

    Mean over all ``M * (L-1)`` residual entries.  Generic over Var/ndarray;
    the operator matrix never receives gradient.
    """
    m = value_of(u).shape[0]
    if estimate.matrix.shape != (m, m):
        raise InvalidInputError(
            f"operator is {estimate.matrix.shape}, embeddings have dim {m}"
        )
    residual = u[:, 1:] - estimate.matrix @ u[:, :-1]
    return (residual * residual).mean()


def dynamic_loss(params: EncoderParams, frames, estimate: KoopmanEstimate):
    """Embed a clip and score one-step predictability under a fixed operator."""
    if estimate.matrix.shape[0] != params.embed_dim:
        raise InvalidInputError(
            f"operator dim {estimate.matrix.shape[0]} != embedding dim {params.embed_dim}"
        )
    u = embed_frames(params, frames)
    return prediction_loss(u, estimate)
