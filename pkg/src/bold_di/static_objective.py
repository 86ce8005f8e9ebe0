"""Backdoor-adjusted contrastive similarity over dynamic eigenmode projections.

For a dynamic mode ``phi``, each embedding ``Z`` is projected to the complex
scalar ``Z . phi`` (plain dot product, no conjugation) and compared to the
positive by the modulus of the difference:

    d(Z) = | Z . phi - Z_pos . phi |

The mode-conditional term is the softmax-style expression

    - log [ exp(d(anchor)/alpha) / sum_{t != positive} exp(d(Z_t)/alpha) ]

where the denominator runs over every view embedding in the batch except the
positive (the anchor itself included).  The adjusted loss averages the term
uniformly over the given dynamic modes and over all (anchor, positive) pairs.

The distance-flavored orientation of the term is implemented exactly as
stated; ``negate_distance`` flips the sign inside the softmax, and
``exclude_anchor_in_denominator`` switches to the conventional contrastive
denominator.  Mode vectors are constants: gradients flow only through the
embeddings.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Var, logsumexp, sqrt, value_of
from .batch import BatchEmbeddings
from .errors import InvalidInputError


def _mode_matrix(phis) -> tuple[np.ndarray, np.ndarray]:
    """Stack complex mode vectors into constant (dim, J) real/imag matrices."""
    cols = [np.asarray(p, dtype=complex).reshape(-1) for p in phis]
    stacked = np.stack(cols, axis=1)
    return np.ascontiguousarray(stacked.real), np.ascontiguousarray(stacked.imag)


def _modal_scores(views, positive, phi_re, phi_im, alpha, negate):
    """(n, J) matrix of d(Z_t)/alpha values against one positive embedding."""
    pos_re = positive @ phi_re
    pos_im = positive @ phi_im
    diff_re = views @ phi_re - pos_re
    diff_im = views @ phi_im - pos_im
    d = sqrt(diff_re * diff_re + diff_im * diff_im)
    scale = -1.0 / alpha if negate else 1.0 / alpha
    return d * scale


def _denominator_mask(n, positive_index, anchor_index, exclude_anchor):
    mask = np.ones((n, 1))
    mask[positive_index, 0] = 0.0
    if exclude_anchor:
        mask[anchor_index, 0] = 0.0
    if mask.sum() < 1:
        raise InvalidInputError("denominator set is empty")
    return mask


def mode_conditional_similarity(
    anchor,
    positive,
    batch: BatchEmbeddings,
    phi,
    alpha: float,
    *,
    exclude_anchor_in_denominator: bool = False,
    negate_distance: bool = False,
):
    """One mode's adjusted similarity term for a given anchor/positive pair."""
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    phi = np.asarray(phi, dtype=complex).reshape(-1)
    if phi.shape[0] != batch.dim:
        raise InvalidInputError(
            f"mode vector has dim {phi.shape[0]}, embeddings have dim {batch.dim}"
        )
    positive_index = batch.index_of(positive)
    anchor_index = batch.index_of(anchor) if exclude_anchor_in_denominator else -1
    phi_re, phi_im = _mode_matrix([phi])
    scores = _modal_scores(batch.views, positive, phi_re, phi_im, alpha, negate_distance)
    anchor_scores = _modal_scores(anchor, positive, phi_re, phi_im, alpha, negate_distance)
    mask = _denominator_mask(batch.n_views, positive_index, anchor_index, exclude_anchor_in_denominator)
    lse = logsumexp(scores, axis=0, weights=mask)
    return (lse - anchor_scores).sum()


def backdoor_loss(
    batch: BatchEmbeddings,
    phis,
    alpha: float,
    *,
    exclude_anchor_in_denominator: bool = False,
    negate_distance: bool = False,
):
    """Uniform average of mode-conditional terms over modes and anchor/positive pairs."""
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    phis = list(phis)
    if len(phis) == 0:
        raise InvalidInputError("backdoor adjustment needs at least one dynamic mode")
    phi_re, phi_im = _mode_matrix(phis)
    if phi_re.shape[0] != batch.dim:
        raise InvalidInputError(
            f"mode vectors have dim {phi_re.shape[0]}, embeddings have dim {batch.dim}"
        )
    pairs = batch.anchor_positive_pairs()
    scale = -1.0 / alpha if negate_distance else 1.0 / alpha

    views = batch.views
    proj_re = views @ phi_re
    proj_im = views @ phi_im

    total = None
    for a, p in pairs:
        diff_re = proj_re - proj_re[p]
        diff_im = proj_im - proj_im[p]
        d = sqrt(diff_re * diff_re + diff_im * diff_im) * scale
        mask = _denominator_mask(batch.n_views, p, a, exclude_anchor_in_denominator)
        lse = logsumexp(d, axis=0, weights=mask)
        term = (lse - d[a]).mean()
        total = term if total is None else total + term
    return total / float(len(pairs))
