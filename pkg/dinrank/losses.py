'''Listwise losses over (labels, scores, mask); both return a scalar Matrix to minimize.'''

from typing import Literal

import numpy as np
from pydantic import Field

from dinrank.errors import DataError, ShapeError
from dinrank.metrics import gains, ideal_dcg
from dinrank.numeric import (add, as_matrix, div, log, log_softmax_rows, mul, pairwise_diff,
                             reduce_sum, reshape, scale, sigmoid)
from dinrank.util import ConfigModel

LOSSES= ('softmax', 'approx_ndcg')


class LossSpec(ConfigModel):
    kind: Literal['softmax', 'approx_ndcg']= 'approx_ndcg'
    eta: float= Field(0.1, gt=0.0)


def _batched(labels, scores, mask):

    scores= as_matrix(scores)
    labels= np.asarray(labels, dtype=np.float64)
    mask= np.ones(labels.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if labels.shape != scores.shape or mask.shape != scores.shape:
        raise ShapeError(f'labels {labels.shape}, scores {scores.shape} and mask {mask.shape} must agree')

    if scores.ndim == 1:
        scores, labels, mask= reshape(scores, (1,) + scores.shape), labels[None], mask[None]
    labels= np.where(mask, labels, 0)

    if not (labels > 0).any(axis=1).all():
        raise DataError('every list needs a relevant document, filter lists without one first')

    return labels, scores, mask


def softmax_ce_loss(labels, scores, mask=None):
    '''Cross entropy between the label distribution y / sum(y) and softmax(scores),
    averaged over lists.'''

    labels, scores, mask= _batched(labels, scores, mask)
    target= (labels / labels.sum(axis=1, keepdims=True)).astype(scores.dtype)

    per_list= reduce_sum(mul(log_softmax_rows(scores, mask), target), axis=-1)
    return scale(reduce_sum(per_list), -1.0 / labels.shape[0])


def approx_rank(scores, mask=None, eta=0.1):
    '''Smooth rank of every document: 1 + sum over the other valid documents j of
    sigmoid(eta * (s_j - s_i)). Approaches the true 1-based rank as eta grows.'''

    if eta <= 0:
        raise ValueError(f'eta must be > 0, got {eta}')

    scores= as_matrix(scores)
    mask= np.ones(scores.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)

    n= scores.shape[-1]
    pairs= mask[..., :, None] & mask[..., None, :] & ~np.eye(n, dtype=bool)

    beats= mul(sigmoid(scale(pairwise_diff(scores), eta)), pairs.astype(scores.dtype))
    return add(reduce_sum(beats, axis=-1), np.ones((), dtype=scores.dtype))


def ndcg_from_ranks(labels, ranks, mask=None):
    '''Full-list NDCG of every list computed from (possibly fractional) ranks.'''

    labels, ranks, mask= _batched(labels, ranks, mask)

    ideal= np.array([ideal_dcg(y[m]) for y, m in zip(labels, mask)])
    weighted= (np.where(mask, gains(labels), 0) * np.log(2.0)).astype(ranks.dtype)

    # gain / log2(1 + rank)
    dcg= reduce_sum(div(weighted, log(add(ranks, np.ones((), dtype=ranks.dtype)))), axis=-1)
    return mul(dcg, (1.0 / ideal).astype(ranks.dtype))


def approx_ndcg_loss(labels, scores, mask=None, eta=0.1):

    labels, scores, mask= _batched(labels, scores, mask)
    per_list= ndcg_from_ranks(labels, approx_rank(scores, mask, eta), mask)
    return scale(reduce_sum(per_list), -1.0 / labels.shape[0])


def compute_loss(spec, labels, scores, mask=None):

    # accepts a ScoreVector or a bare score Matrix
    values= getattr(scores, 'scores', scores)

    if spec.kind == 'softmax':
        return softmax_ce_loss(labels, values, mask)
    return approx_ndcg_loss(labels, values, mask, spec.eta)
