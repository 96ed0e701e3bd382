from typing import List

import numpy as np
from pydantic import Field, field_validator, model_validator

from dinrank.errors import ConfigError, ShapeError
from dinrank.numeric import (add, as_matrix, batch_norm, concat_cols, dropout, layer_norm_rows,
                             matmul, mul, relu, scale, softmax_rows, transpose)
from dinrank.util import ConfigModel, make_rng

# hidden widths of the feed-forward stack used on Web30k
DEFAULT_WIDTHS= [1024, 512, 256, 128, 64, 32, 16]


class DenseBlockSpec(ConfigModel):
    widths: List[int]= Field(default_factory=lambda: list(DEFAULT_WIDTHS))
    dropout: float= Field(0.0, ge=0.0, lt=1.0)
    input_batch_norm: bool= True
    batch_norm_momentum: float= Field(0.1, gt=0.0, le=1.0)

    @field_validator('widths')
    @classmethod
    def _positive(cls, widths):
        if any(w < 1 for w in widths):
            raise ValueError(f'layer widths must be >= 1, got {widths}')
        return widths


class AttentionBlockSpec(ConfigModel):
    width: int= Field(100, ge=1)
    heads: int= Field(1, ge=1)
    layers: int= Field(1, ge=1)

    @model_validator(mode='after')
    def _divisible(self):
        if self.width % self.heads:
            raise ValueError(f'attention width {self.width} is not divisible by {self.heads} heads')
        return self

    @property
    def head_width(self):
        return self.width // self.heads


def glorot_uniform(rng, fan_in, fan_out):
    limit= np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _mask_rows(x, mask):
    if mask is None:
        return x
    return mul(x, np.asarray(mask, dtype=x.dtype)[..., None])


# ---------------------------------------------------------------- feed-forward

def init_dense_block(params, prefix, in_width, out_width, spec, rng):

    if spec.input_batch_norm:
        params.add_batch_norm(f'{prefix}/input_bn', in_width)

    width= in_width
    for i, hidden in enumerate(spec.widths):
        params.add(f'{prefix}/fc{i}/kernel', glorot_uniform(rng, width, hidden))
        params.add(f'{prefix}/fc{i}/bias', np.zeros(hidden))
        params.add_batch_norm(f'{prefix}/fc{i}/bn', hidden)
        width= hidden

    params.add(f'{prefix}/output/kernel', glorot_uniform(rng, width, out_width))
    params.add(f'{prefix}/output/bias', np.zeros(out_width))


def _batch_norm(x, weights, name, spec, mode, mask):
    return batch_norm(x, weights[f'{name}/gain'], weights[f'{name}/bias'], weights.states[name],
                      mode=mode, momentum=spec.batch_norm_momentum, mask=mask)


def dense_block(X, weights, prefix, spec, mode='infer', seed=0, mask=None):
    '''FC-BN-ReLU stack applied row-wise, ending in a linear projection.

    Each hidden layer runs dropout -> linear -> batch-norm -> ReLU; the final
    projection has no activation. mask flags the valid rows of X for the
    batch-norm statistics.
    '''

    h= as_matrix(X)
    kernel= weights[f'{prefix}/fc0/kernel'] if spec.widths else weights[f'{prefix}/output/kernel']
    if h.cols != kernel.rows:
        raise ShapeError(f'dense_block {prefix}: input has {h.cols} columns, first layer expects {kernel.rows}')

    if spec.input_batch_norm:
        h= _batch_norm(h, weights, f'{prefix}/input_bn', spec, mode, mask)

    for i in range(len(spec.widths)):
        h= dropout(h, spec.dropout, mode, make_rng(seed, prefix, i))
        h= add(matmul(h, weights[f'{prefix}/fc{i}/kernel']), weights[f'{prefix}/fc{i}/bias'])
        h= _batch_norm(h, weights, f'{prefix}/fc{i}/bn', spec, mode, mask)
        h= relu(h)

    return add(matmul(h, weights[f'{prefix}/output/kernel']), weights[f'{prefix}/output/bias'])


# ---------------------------------------------------------------- self-attention

def init_attention_stack(params, prefix, in_width, spec, rng):

    params.add(f'{prefix}/input/kernel', glorot_uniform(rng, in_width, spec.width))
    params.add(f'{prefix}/input/bias', np.zeros(spec.width))

    for layer in range(spec.layers):
        block= f'{prefix}/layer{layer}'
        for head in range(spec.heads):
            for role in ('query', 'key', 'value'):
                params.add(f'{block}/head{head}/{role}', glorot_uniform(rng, spec.width, spec.head_width))
        params.add(f'{block}/output', glorot_uniform(rng, spec.width, spec.width))
        params.add(f'{block}/norm/gain', np.ones(spec.width))
        params.add(f'{block}/norm/bias', np.zeros(spec.width))


def scaled_dot_attention(Q, K, V, mask=None):
    '''softmax(Q K^T / sqrt(k)) V with invalid key rows masked out.'''

    Q, K, V= as_matrix(Q), as_matrix(K), as_matrix(V)
    if Q.cols != K.cols:
        raise ShapeError(f'queries {Q.shape} and keys {K.shape} have different widths')
    if K.rows != V.rows:
        raise ShapeError(f'keys {K.shape} and values {V.shape} have different row counts')

    logits= scale(matmul(Q, transpose(K)), 1.0 / np.sqrt(Q.cols))
    return matmul(softmax_rows(logits, mask), V)


def multi_head_self_attention(X, weights, prefix, spec, mask=None):

    X= as_matrix(X)
    if spec.width % spec.heads:
        raise ConfigError(f'attention width {spec.width} is not divisible by {spec.heads} heads')
    if X.cols != spec.width:
        raise ShapeError(f'self-attention {prefix} expects width {spec.width}, got {X.shape}')

    heads= None
    for head in range(spec.heads):
        name= f'{prefix}/head{head}'
        out= scaled_dot_attention(matmul(X, weights[f'{name}/query']),
                                  matmul(X, weights[f'{name}/key']),
                                  matmul(X, weights[f'{name}/value']), mask)
        heads= out if heads is None else concat_cols(heads, out)

    return matmul(heads, weights[f'{prefix}/output'])


def attention_block(X, weights, prefix, spec, mask=None):
    '''layer_norm(X + MultiHead(X, X, X)); rows of padded documents are zeroed.'''

    X= as_matrix(X)
    out= layer_norm_rows(add(X, multi_head_self_attention(X, weights, prefix, spec, mask)),
                         weights[f'{prefix}/norm/gain'], weights[f'{prefix}/norm/bias'])
    return _mask_rows(out, mask)


def attention_stack(X, weights, prefix, spec, mask=None):
    '''Affine projection of the document rows to the model width followed by
    spec.layers stacked attention blocks.'''

    h= add(matmul(as_matrix(X), weights[f'{prefix}/input/kernel']), weights[f'{prefix}/input/bias'])
    h= _mask_rows(h, mask)
    for layer in range(spec.layers):
        h= attention_block(h, weights, f'{prefix}/layer{layer}', spec, mask)
    return h
