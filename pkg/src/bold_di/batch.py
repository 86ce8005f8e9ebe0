"""Batch bookkeeping shared by the contrastive and backdoor objectives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var, value_of
from .errors import InvalidInputError


@dataclass
class BatchEmbeddings:
    """Clip embeddings of one mini-batch plus the (video, view) index.

    ``views`` holds one embedding per row (a ``Var`` during differentiation).
    ``targets`` are momentum-encoder embeddings (constants), ``predictions``
    are predictor outputs aligned with ``views``, and ``queue`` holds stored
    negatives; all three are only present for the variants that use them.
    """

    views: object
    video_ids: np.ndarray
    view_ids: np.ndarray
    targets: np.ndarray | None = None
    predictions: object = None
    queue: np.ndarray | None = None

    def __post_init__(self):
        self.video_ids = np.asarray(self.video_ids, dtype=int)
        self.view_ids = np.asarray(self.view_ids, dtype=int)
        n = value_of(self.views).shape[0]
        if len(self.video_ids) != n or len(self.view_ids) != n:
            raise InvalidInputError("index arrays must match the number of view embeddings")

    @property
    def n_views(self) -> int:
        return int(value_of(self.views).shape[0])

    @property
    def dim(self) -> int:
        return int(value_of(self.views).shape[1])

    def row(self, t: int):
        return self.views[t]

    def positive_indices(self, t: int) -> list[int]:
        vid = self.video_ids[t]
        return [s for s in range(self.n_views) if s != t and self.video_ids[s] == vid]

    def negative_indices(self, t: int) -> list[int]:
        vid = self.video_ids[t]
        return [s for s in range(self.n_views) if self.video_ids[s] != vid]

    def anchor_positive_pairs(self) -> list[tuple[int, int]]:
        """All ordered (anchor, positive) index pairs from the same video."""
        pairs = []
        for a in range(self.n_views):
            pos = self.positive_indices(a)
            if not pos:
                raise InvalidInputError(
                    f"view {a} (video {self.video_ids[a]}) has no positive in the batch"
                )
            pairs.extend((a, p) for p in pos)
        return pairs

    def index_of(self, vector) -> int:
        """Locate a view embedding in the batch by value."""
        target = value_of(vector)
        rows = value_of(self.views)
        exact = np.flatnonzero(np.all(rows == target, axis=1))
        if exact.size:
            return int(exact[0])
        close = np.flatnonzero(np.all(np.abs(rows - target) <= 1e-12, axis=1))
        if close.size:
            return int(close[0])
        raise InvalidInputError("vector is not one of the batch view embeddings")
