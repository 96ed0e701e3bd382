'''Scoring families behind one interface: (query context, documents, mask) -> one score per document.

univariate  score each document on its own
gsf         groupwise scoring: a sub-network g over ordered groups of m documents,
            a document's score averages g's outputs at its positions
attn_din    stacked self-attention over the list produces interaction embeddings
            that a per-document feed-forward head consumes with the raw features
'''

import warnings
from dataclasses import dataclass
from itertools import permutations
from math import perm
from typing import Literal

import numpy as np
from pydantic import Field, model_validator

from dinrank.errors import BudgetExceededError, ShapeError
from dinrank.layers import (AttentionBlockSpec, DenseBlockSpec, attention_stack, dense_block,
                            init_attention_stack, init_dense_block)
from dinrank.numeric import (Matrix, ParamStore, as_matrix, concat_cols, mul, reshape, segment_sum,
                             take_rows)
from dinrank.util import ConfigModel, make_rng

FAMILIES= ('univariate', 'gsf', 'attn_din')

PRESETS= {
    'web30k': dict(width=100, heads=1, layers=1),
    'gmail': dict(width=100, heads=4, layers=5),
    'quick_access': dict(width=100, heads=5, layers=3),
}


class ScorerSpec(ConfigModel):
    family: Literal['univariate', 'gsf', 'attn_din']= 'attn_din'
    n_features: int= Field(136, ge=1)
    context_features: int= Field(0, ge=0)
    dense: DenseBlockSpec= Field(default_factory=DenseBlockSpec)
    attention: AttentionBlockSpec= Field(default_factory=AttentionBlockSpec)
    group_size: int= Field(1, ge=1)
    gsf_mode: Literal['exact', 'subsample']= 'exact'
    gsf_stride: int= Field(1, ge=1)
    group_budget: int= Field(100000, ge=1)

    @model_validator(mode='after')
    def _stride(self):
        if self.gsf_stride > self.group_size:
            raise ValueError(f'gsf_stride {self.gsf_stride} leaves documents uncovered by groups of {self.group_size}')
        return self

    @property
    def equivariant(self):
        return self.family != 'gsf' or self.gsf_mode == 'exact' or self.group_size == 1

    @property
    def input_width(self):
        return self.context_features + self.n_features

    @classmethod
    def preset(cls, name, n_features=136, **changes):
        if name not in PRESETS:
            raise ValueError(f'Unknown preset {name}, use one of {list(PRESETS)}')
        return cls(family='attn_din', n_features=n_features, attention=AttentionBlockSpec(**PRESETS[name]), **changes)


@dataclass
class ScoreVector:
    '''Scores of a (batch of) list(s); padded slots hold 0 in the differentiable
    matrix and a sentinel that sorts last in values.'''

    scores: Matrix
    mask: np.ndarray

    @property
    def values(self):
        sentinel= np.finfo(self.scores.dtype).min
        return np.where(self.mask, self.scores.data, sentinel)


def init_params(spec, seed=0, dtype='float32'):

    params= ParamStore(dtype)
    rng= make_rng(seed, 'init', spec.family)

    if spec.family == 'univariate':
        init_dense_block(params, 'score', spec.input_width, 1, spec.dense, rng)
    elif spec.family == 'gsf':
        width= spec.context_features + spec.group_size * spec.n_features
        init_dense_block(params, 'score', width, spec.group_size, spec.dense, rng)
    else:
        init_attention_stack(params, 'interaction', spec.input_width, spec.attention, rng)
        init_dense_block(params, 'score', spec.input_width + spec.attention.width, 1, spec.dense, rng)

    return params


def _dense_count(in_width, out_width, spec):
    count= 2 * in_width if spec.input_batch_norm else 0
    width= in_width
    for hidden in spec.widths:
        count+= width * hidden + hidden + 2 * hidden
        width= hidden
    return count + width * out_width + out_width


def param_count(spec, params=None):
    '''Number of trainable scalars; counted from params when given, else from the ScorerSpec alone.'''

    if params is not None:
        return params.size

    if spec.family == 'univariate':
        return _dense_count(spec.input_width, 1, spec.dense)
    if spec.family == 'gsf':
        return _dense_count(spec.context_features + spec.group_size * spec.n_features, spec.group_size, spec.dense)

    k= spec.attention.width
    attention= spec.input_width * k + k + spec.attention.layers * (4 * k * k + 2 * k)
    return attention + _dense_count(spec.input_width + k, 1, spec.dense)


# ---------------------------------------------------------------- inputs

def _weights(params, tape=None):
    return params.bind(tape) if isinstance(params, ParamStore) else params


def _prepare(spec, weights, docs, mask, context):

    docs= np.asarray(docs.data if isinstance(docs, Matrix) else docs)
    single= docs.ndim == 2
    if single:
        docs= docs[None]
    if docs.ndim != 3 or docs.shape[-1] != spec.n_features:
        raise ShapeError(f'expected documents with {spec.n_features} features, got {docs.shape}')

    mask= np.ones(docs.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if single and mask.ndim == 1:
        mask= mask[None]
    if mask.shape != docs.shape[:2]:
        raise ShapeError(f'mask {mask.shape} does not fit documents {docs.shape}')
    if not mask.any(axis=1).all():
        raise ShapeError('every list needs at least one valid document')

    docs= np.where(mask[..., None], docs, 0).astype(weights.dtype)

    if spec.context_features:
        if context is None:
            raise ShapeError(f'scorer expects {spec.context_features} context features, none given')
        context= np.asarray(context, dtype=weights.dtype).reshape(docs.shape[0], spec.context_features)
    else:
        context= None

    return docs, mask, context, single


def _rows_with_context(docs, context):
    X= as_matrix(docs)
    if context is None:
        return X
    tiled= np.broadcast_to(context[:, None, :], docs.shape[:2] + context.shape[-1:])
    return concat_cols(as_matrix(np.ascontiguousarray(tiled)), X)


def _finish(scores, mask, single):
    scores= mul(scores, mask.astype(scores.dtype))
    if single:
        return ScoreVector(reshape(scores, scores.shape[1:]), mask[0])
    return ScoreVector(scores, mask)


# ---------------------------------------------------------------- families

def score_univariate(docs, mask, params, spec, mode='infer', seed=0, context=None, tape=None):

    weights= _weights(params, tape)
    docs, mask, context, single= _prepare(spec, weights, docs, mask, context)

    out= dense_block(_rows_with_context(docs, context), weights, 'score', spec.dense, mode, seed, mask)
    return _finish(reshape(out, mask.shape), mask, single)


def group_count(n, m):
    '''Ordered groups of m distinct documents out of n.'''
    return perm(n, m)


def exact_groups(n, m, budget=None):
    '''All ordered groups of m distinct documents out of n. A list shorter than m
    enumerates the orderings of its n documents instead, each repeated cyclically
    to fill m positions.'''
    size= min(n, m)
    count= group_count(n, size)
    if budget is not None and count > budget:
        raise BudgetExceededError(count, budget)
    if budget is not None and count > 0.8 * budget:
        warnings.warn(f'{count} groups is close to the budget of {budget}')

    groups= np.array(list(permutations(range(n), size)), dtype=np.intp).reshape(count, size)
    return groups[:, np.arange(m) % size]


def rolling_groups(n, m, stride, rng):
    '''Windows of m consecutive documents over a shuffled list, wrapping around.
    Windows longer than the list visit its documents more than once.'''

    order= rng.permutation(n)
    starts= np.arange(0, n, stride)
    return order[(starts[:, None] + np.arange(m)[None, :]) % n]


def score_gsf(docs, mask, params, spec, mode='infer', seed=0, context=None, tape=None):

    weights= _weights(params, tape)
    docs, mask, context, single= _prepare(spec, weights, docs, mask, context)
    batch, length, features= docs.shape
    m= spec.group_size

    members, owners= [], []
    for b in range(batch):
        valid= np.flatnonzero(mask[b])
        if spec.gsf_mode == 'exact':
            local= exact_groups(len(valid), m, spec.group_budget)
        else:
            local= rolling_groups(len(valid), m, spec.gsf_stride, make_rng(seed, 'gsf', b))
        members.append(b * length + valid[local])
        owners.append(np.full(len(local), b))

    members= np.concatenate(members)
    owners= np.concatenate(owners)
    slots= members.reshape(-1)

    flat= as_matrix(docs.reshape(batch * length, features))
    X= reshape(take_rows(flat, slots), (len(members), m * features))
    if context is not None:
        X= concat_cols(as_matrix(context[owners]), X)

    out= dense_block(X, weights, 'score', spec.dense, mode, seed)
    totals= segment_sum(reshape(out, (len(slots),)), slots, batch * length)

    counts= np.bincount(slots, minlength=batch * length)
    average= (1.0 / np.maximum(counts, 1)).astype(weights.dtype)

    return _finish(reshape(mul(totals, average), mask.shape), mask, single)


def score_attn_din(docs, mask, params, spec, mode='infer', seed=0, context=None, tape=None):

    weights= _weights(params, tape)
    docs, mask, context, single= _prepare(spec, weights, docs, mask, context)

    X= _rows_with_context(docs, context)
    embeddings= attention_stack(X, weights, 'interaction', spec.attention, mask)
    out= dense_block(concat_cols(X, embeddings), weights, 'score', spec.dense, mode, seed, mask)

    return _finish(reshape(out, mask.shape), mask, single)


SCORERS= {
    'univariate': score_univariate,
    'gsf': score_gsf,
    'attn_din': score_attn_din,
}


def score(spec, params, docs, mask=None, mode='infer', seed=0, context=None, tape=None):
    return SCORERS[spec.family](docs, mask, params, spec, mode=mode, seed=seed, context=context, tape=tape)


def score_batch(spec, params, batch, mode='infer', seed=0, tape=None):
    return score(spec, params, batch.features, batch.mask, mode=mode, seed=seed, context=batch.context, tape=tape)

