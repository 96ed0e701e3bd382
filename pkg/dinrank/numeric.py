'''Dense arrays with reverse-mode differentiation.

Every layer and loss of the package is composed from the functions below, each of
which computes its forward value with numpy/scipy and, when any input lives on a
Tape, records a vector-Jacobian product for the backward sweep.
'''

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, log_softmax, softmax

from dinrank.errors import ShapeError, DegenerateRowError, UninitializedStatisticsError
from dinrank.util import resolve_dtype

MODES= ('train', 'infer')

# fill value for masked logits, exp() of it underflows to exactly 0
MASK_FILL= -1e9


class Matrix:
    '''A 2-D array (rows x cols), optionally stacked along leading batch axes.

    A Matrix without a tape is a constant; one with a tape is a node of that tape
    and gradients can flow back to it.
    '''

    __slots__= ('data', 'tape', 'node', 'name')

    def __init__(self, data, tape=None, node=None, name=None):
        self.data= np.asarray(data)
        self.tape= tape
        self.node= node
        self.name= name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def rows(self):
        return self.data.shape[-2]

    @property
    def cols(self):
        return self.data.shape[-1]

    def numpy(self):
        return self.data

    def __repr__(self):
        tracked= 'tracked' if self.tape is not None else 'constant'
        return f'Matrix(shape={self.shape}, dtype={self.dtype}, {tracked})'

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


@dataclass
class _Node:
    op: str
    inputs: tuple
    vjp: Optional[object]
    name: Optional[str]= None


class Tape:
    '''Append-only record of operations; nodes are stored in creation order, which
    is a topological order since an op can only consume existing nodes.'''

    def __init__(self):
        self.nodes= []
        self.adjoints= {}

    def __len__(self):
        return len(self.nodes)

    def leaf(self, data, name=None):
        self.nodes.append(_Node('leaf', (), None, name))
        return Matrix(data, self, len(self.nodes) - 1, name)

    def record(self, op, inputs, value, vjp):
        refs= tuple(x.node if x.tape is self else None for x in inputs)
        self.nodes.append(_Node(op, refs, vjp))
        return Matrix(value, self, len(self.nodes) - 1)

    def grad(self, x):
        '''Adjoint of a leaf after backward(); zeros when x did not influence the outputs.'''
        if x.tape is not self:
            raise ValueError('Matrix is not a node of this tape')
        return self.adjoints.get(x.node, np.zeros_like(x.data))


def backward(tape, outputs, params=None):
    '''Reverse sweep from scalar outputs; named leaves accumulate into params.grads.'''

    if isinstance(outputs, Matrix):
        outputs= [outputs]

    adjoints= {}
    for out in outputs:
        if out.data.size != 1:
            raise ValueError(f'backward needs scalar outputs, got shape {out.shape}')
        if out.tape is None:
            continue
        if out.tape is not tape:
            raise ValueError('output was recorded on a different tape')
        seed= np.ones_like(out.data)
        adjoints[out.node]= seed if out.node not in adjoints else adjoints[out.node] + seed

    leaves= {}
    for index in range(len(tape.nodes) - 1, -1, -1):
        g= adjoints.pop(index, None)
        if g is None:
            continue

        node= tape.nodes[index]
        if node.vjp is None:
            leaves[index]= g
            if params is not None and node.name is not None:
                params.accumulate(node.name, g)
            continue

        for ref, g_in in zip(node.inputs, node.vjp(g)):
            if ref is None or g_in is None:
                continue
            adjoints[ref]= g_in if ref not in adjoints else adjoints[ref] + g_in

    tape.adjoints= leaves
    return leaves


def as_matrix(x, dtype=None):
    if isinstance(x, Matrix):
        return x
    return Matrix(np.asarray(x, dtype=dtype))


def _record(op, inputs, value, vjp):

    tape= None
    for x in inputs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ValueError(f'{op}: inputs belong to different tapes')
            tape= x.tape

    if tape is None:
        return Matrix(value)

    return tape.record(op, inputs, value, vjp)


def _unbroadcast(g, shape):
    '''Sum a broadcast gradient back to the shape of the input it came from.'''

    while g.ndim > len(shape):
        g= g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g= g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f'{op}: shapes {a.shape} and {b.shape} do not match') from None


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f'mode must be one of {MODES}, got {mode}')


def _row_mask(mask, x):
    '''Broadcast a per-column validity mask (..., cols) against x (..., rows, cols).'''

    mask= np.asarray(mask, dtype=bool)
    if mask.ndim == x.ndim - 1:
        mask= mask[..., None, :]
    try:
        return np.broadcast_to(mask, x.shape)
    except ValueError:
        raise ShapeError(f'mask of shape {mask.shape} does not fit {x.shape}') from None


def _swap(a):
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):

    a, b= as_matrix(a), as_matrix(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f'matmul: shapes {a.shape} and {b.shape} are not aligned')

    value= a.data @ b.data

    def vjp(g):
        return _unbroadcast(g @ _swap(b.data), a.shape), _unbroadcast(_swap(a.data) @ g, b.shape)

    return _record('matmul', (a, b), value, vjp)


def transpose(a):
    a= as_matrix(a)
    return _record('transpose', (a,), _swap(a.data), lambda g: (_swap(g),))


def reshape(a, shape):
    a= as_matrix(a)
    return _record('reshape', (a,), a.data.reshape(shape), lambda g: (g.reshape(a.shape),))


def concat_cols(a, b):

    a, b= as_matrix(a), as_matrix(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f'concat_cols: shapes {a.shape} and {b.shape} differ outside the last axis')

    split= a.shape[-1]
    value= np.concatenate([a.data, b.data], axis=-1)

    return _record('concat_cols', (a, b), value, lambda g: (g[..., :split], g[..., split:]))


def take_rows(a, index):
    '''Gather rows of a 2-D matrix; repeated indices are allowed.'''

    a= as_matrix(a)
    index= np.asarray(index, dtype=np.intp)
    if a.ndim != 2:
        raise ShapeError(f'take_rows needs a 2-D matrix, got {a.shape}')

    def vjp(g):
        g_in= np.zeros_like(a.data)
        np.add.at(g_in, index, g)
        return (g_in,)

    return _record('take_rows', (a,), a.data[index], vjp)


def segment_sum(a, segments, n):
    '''out[k] = sum of a[i] over i with segments[i] == k, for a 1-D a.'''

    a= as_matrix(a)
    segments= np.asarray(segments, dtype=np.intp)
    if a.ndim != 1 or a.shape[0] != segments.shape[0]:
        raise ShapeError(f'segment_sum: values {a.shape} and segments {segments.shape} do not match')

    value= np.bincount(segments, weights=a.data, minlength=n).astype(a.dtype)

    return _record('segment_sum', (a,), value, lambda g: (g[segments],))


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b= as_matrix(a), as_matrix(b)
    _broadcast_shape('add', a, b)
    return _record('add', (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b= as_matrix(a), as_matrix(b)
    _broadcast_shape('sub', a, b)
    return _record('sub', (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b= as_matrix(a), as_matrix(b)
    _broadcast_shape('mul', a, b)
    return _record('mul', (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b= as_matrix(a), as_matrix(b)
    _broadcast_shape('div', a, b)
    value= a.data / b.data

    def vjp(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * value / b.data, b.shape)

    return _record('div', (a, b), value, vjp)


def scale(a, factor):
    a= as_matrix(a)
    value= (a.data * factor).astype(a.dtype, copy=False)
    return _record('scale', (a,), value, lambda g: ((g * factor).astype(g.dtype, copy=False),))


def exp(a):
    a= as_matrix(a)
    value= np.exp(a.data)
    return _record('exp', (a,), value, lambda g: (g * value,))


def log(a):
    a= as_matrix(a)
    return _record('log', (a,), np.log(a.data), lambda g: (g / a.data,))


def sigmoid(a):
    a= as_matrix(a)
    value= expit(a.data)
    return _record('sigmoid', (a,), value, lambda g: (g * value * (1 - value),))


def relu(x):
    x= as_matrix(x)
    active= x.data > 0
    return _record('relu', (x,), np.where(active, x.data, 0).astype(x.dtype), lambda g: (g * active,))


def reduce_sum(a, axis=None, keepdims=False):

    a= as_matrix(a)
    value= np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g= np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record('reduce_sum', (a,), value, vjp)


def pairwise_diff(s):
    '''out[..., i, j] = s[..., j] - s[..., i] for a score vector s of shape (..., n).'''

    s= as_matrix(s)
    value= s.data[..., None, :] - s.data[..., :, None]

    return _record('pairwise_diff', (s,), value, lambda g: (g.sum(axis=-2) - g.sum(axis=-1),))


# ---------------------------------------------------------------- normalization

def softmax_rows(x, mask=None):
    '''Row softmax over valid columns; masked columns come out as exactly 0.'''

    x= as_matrix(x)
    valid= np.ones(x.shape, dtype=bool) if mask is None else _row_mask(mask, x)
    if not valid.any(axis=-1).all():
        raise DegenerateRowError('softmax_rows: a row has no valid column')

    # softmax subtracts the row max before exponentiating
    value= np.where(valid, softmax(np.where(valid, x.data, MASK_FILL), axis=-1), 0).astype(x.dtype)

    def vjp(g):
        return (value * (g - (g * value).sum(axis=-1, keepdims=True)),)

    return _record('softmax_rows', (x,), value, vjp)


def log_softmax_rows(x, mask=None):
    '''Row log-softmax over valid columns; masked columns are set to 0.'''

    x= as_matrix(x)
    valid= np.ones(x.shape, dtype=bool) if mask is None else _row_mask(mask, x)
    if not valid.any(axis=-1).all():
        raise DegenerateRowError('log_softmax_rows: a row has no valid column')

    value= np.where(valid, log_softmax(np.where(valid, x.data, MASK_FILL), axis=-1), 0).astype(x.dtype)
    probs= np.where(valid, np.exp(value), 0)

    def vjp(g):
        g= np.where(valid, g, 0)
        return (np.where(valid, g - probs * g.sum(axis=-1, keepdims=True), 0),)

    return _record('log_softmax_rows', (x,), value, vjp)


def layer_norm_rows(x, gain, bias, epsilon=1e-6):

    x, gain, bias= as_matrix(x), as_matrix(gain), as_matrix(bias)
    if gain.shape != (x.cols,) or bias.shape != (x.cols,):
        raise ShapeError(f'layer_norm_rows: gain {gain.shape} / bias {bias.shape} do not fit {x.shape}')

    mean= x.data.mean(axis=-1, keepdims=True)
    centered= x.data - mean
    inv= 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + epsilon)
    normed= centered * inv
    value= normed * gain.data + bias.data

    def vjp(g):
        g_normed= g * gain.data
        g_x= inv * (g_normed - g_normed.mean(axis=-1, keepdims=True)
                    - normed * (g_normed * normed).mean(axis=-1, keepdims=True))
        axes= tuple(range(g.ndim - 1))
        return g_x, (g * normed).sum(axis=axes), g.sum(axis=axes)

    return _record('layer_norm_rows', (x, gain, bias), value, vjp)


@dataclass
class BatchNormState:
    '''Running per-column statistics of a batch-norm layer; empty until populated.'''

    mean: Optional[np.ndarray]= None
    var: Optional[np.ndarray]= None

    @property
    def initialized(self):
        return self.mean is not None and self.var is not None

    def update(self, mean, var, momentum):
        if not self.initialized:
            self.mean, self.var= mean.copy(), var.copy()
        else:
            self.mean= ((1 - momentum) * self.mean + momentum * mean).astype(self.mean.dtype)
            self.var= ((1 - momentum) * self.var + momentum * var).astype(self.var.dtype)


def batch_norm(x, gain, bias, state, mode='train', momentum=0.1, epsilon=1e-5, mask=None):
    '''Per-column normalization over every valid row of x (all leading axes pooled).

    In train mode the batch statistics are used and folded into state with the given
    momentum (weight of the new batch); in infer mode only the running statistics are
    used. Rows flagged invalid by mask are excluded from the statistics and output 0.
    '''

    _check_mode(mode)
    x, gain, bias= as_matrix(x), as_matrix(gain), as_matrix(bias)
    cols= x.cols if x.ndim >= 2 else x.shape[-1]
    if gain.shape != (cols,) or bias.shape != (cols,):
        raise ShapeError(f'batch_norm: gain {gain.shape} / bias {bias.shape} do not fit {x.shape}')

    flat= x.data.reshape(-1, cols)
    valid= np.ones(flat.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    if valid.shape[0] != flat.shape[0]:
        raise ShapeError(f'batch_norm: mask {np.shape(mask)} does not fit {x.shape}')
    keep= valid[:, None]

    if mode == 'train':
        rows= flat[valid]
        if rows.shape[0] == 0:
            raise DegenerateRowError('batch_norm: no valid row in the batch')
        mean, var= rows.mean(axis=0), rows.var(axis=0)
        state.update(mean, var, momentum)
    else:
        if not state.initialized:
            raise UninitializedStatisticsError('batch_norm: running statistics are not populated')
        mean, var= state.mean, state.var

    inv= (1.0 / np.sqrt(var + epsilon)).astype(x.dtype)
    normed= (flat - mean) * inv
    value= np.where(keep, normed * gain.data + bias.data, 0).astype(x.dtype).reshape(x.shape)

    def vjp(g):
        g= np.where(keep, g.reshape(-1, cols), 0)
        g_normed= g * gain.data
        if mode == 'train':
            count= valid.sum()
            g_x= inv / count * (count * g_normed - g_normed.sum(axis=0)
                                - normed * (g_normed * normed).sum(axis=0, where=keep))
            g_x= np.where(keep, g_x, 0)
        else:
            g_x= g_normed * inv
        g_gain= (g * normed).sum(axis=0, where=keep)
        return g_x.reshape(x.shape), g_gain, g.sum(axis=0)

    return _record('batch_norm', (x, gain, bias), value, vjp)


def dropout(x, rate, mode='train', rng=None):
    '''Inverted dropout: survivors are scaled by 1/(1-rate) at train time.'''

    _check_mode(mode)
    if not 0 <= rate < 1:
        raise ValueError(f'dropout rate must be in [0, 1), got {rate}')

    x= as_matrix(x)
    if mode == 'infer' or rate == 0:
        return x
    if rng is None:
        raise ValueError('dropout in train mode needs a random generator')

    factor= x.dtype.type(1.0 / (1.0 - rate))
    keep= (rng.random(x.shape) >= rate) * factor

    return _record('dropout', (x,), (x.data * keep).astype(x.dtype), lambda g: (g * keep,))


# ---------------------------------------------------------------- parameters

class ParamStore:
    '''Named trainable matrices, their gradient accumulators and the (non-trainable)
    batch-norm running statistics.'''

    def __init__(self, dtype='float32'):
        self.dtype= resolve_dtype(dtype)
        self.params= {}
        self.grads= {}
        self.states= {}

    def __len__(self):
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name):
        return self.params[name]

    def names(self):
        return list(self.params)

    @property
    def size(self):
        return int(sum(p.size for p in self.params.values()))

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f'parameter {name} already exists')
        value= np.array(value, dtype=self.dtype)
        self.params[name]= value
        self.grads[name]= np.zeros_like(value)
        return value

    def add_batch_norm(self, name, width):
        self.add(f'{name}/gain', np.ones(width))
        self.add(f'{name}/bias', np.zeros(width))
        self.states[name]= BatchNormState(np.zeros(width, self.dtype), np.ones(width, self.dtype))

    def accumulate(self, name, g):
        if g.shape != self.grads[name].shape:
            raise ShapeError(f'gradient for {name} has shape {g.shape}, parameter has {self.grads[name].shape}')
        self.grads[name]+= g

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def bind(self, tape=None):
        return BoundParams(self, tape)

    def copy(self):
        return self.astype(self.dtype)

    def astype(self, dtype):
        clone= ParamStore(dtype)
        for name, value in self.params.items():
            clone.add(name, value)
        for name, state in self.states.items():
            clone.states[name]= BatchNormState(
                None if state.mean is None else state.mean.astype(clone.dtype),
                None if state.var is None else state.var.astype(clone.dtype))
        return clone


class BoundParams(Mapping):
    '''Read view of a ParamStore for one forward pass: each parameter becomes a leaf
    of the tape (or a constant when there is no tape) the first time it is used.'''

    def __init__(self, store, tape=None):
        self.store= store
        self.tape= tape
        self._leaves= {}

    @property
    def states(self):
        return self.store.states

    @property
    def dtype(self):
        return self.store.dtype

    def __getitem__(self, name):
        if name not in self._leaves:
            value= self.store.params[name]
            self._leaves[name]= Matrix(value) if self.tape is None else self.tape.leaf(value, name)
        return self._leaves[name]

    def __iter__(self):
        return iter(self.store.params)

    def __len__(self):
        return len(self.store.params)
