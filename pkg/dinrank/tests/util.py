import unittest
from tempfile import mkdtemp
outdir= mkdtemp(prefix='dinrank_tests_')
from os.path import join as pjoin, dirname

import numpy as np

from dinrank.util import make_rng

TEST_DATA_DIR= pjoin(dirname(__file__), 'data')

SAMPLE_RANKING= pjoin(TEST_DATA_DIR, 'sample_ranking.txt')
TINY_CONFIG= pjoin(TEST_DATA_DIR, 'tiny.ini')

# gradient checks
STEP= 1e-5
TOLERANCE= 1e-4


def finite_difference(f, x, step=STEP):
    '''Central differences of the scalar function f at every entry of x (modified in place, restored).'''

    grad= np.zeros_like(x, dtype=np.float64)
    for index in np.ndindex(x.shape):
        saved= x[index]
        x[index]= saved + step
        up= f()
        x[index]= saved - step
        down= f()
        x[index]= saved
        grad[index]= (up - down) / (2 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-4):
    '''max |a - n| / max(|a|, |n|, floor): entries near zero are compared absolutely.'''

    analytic, numeric= np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale= np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def random_lists(seed, batch, length, n_features, low=-2.0, high=2.0, ragged=True):
    '''Random padded documents and a mask; every list keeps at least one document.'''

    rng= make_rng(seed, 'fixture')
    docs= rng.uniform(low, high, size=(batch, length, n_features))
    mask= np.ones((batch, length), dtype=bool)
    if ragged:
        sizes= rng.integers(1, length + 1, size=batch)
        mask= np.arange(length)[None, :] < sizes[:, None]
    return docs, mask


def random_labels(seed, mask, grades=3):
    '''Graded labels with at least one relevant document per list.'''

    rng= make_rng(seed, 'labels')
    labels= rng.integers(0, grades, size=mask.shape) * mask
    for b in range(mask.shape[0]):
        if not labels[b].any():
            labels[b, 0]= 1
    return labels


def jitter_biases(params, seed, scale=0.5):
    '''Replace every bias with uniform noise so that no ReLU input sits exactly on its kink at 0.'''

    rng= make_rng(seed, 'biases')
    for name, value in params.params.items():
        if name.endswith('/bias'):
            value[...]= rng.uniform(-scale, scale, size=value.shape)
    return params


def memorizable_queries(n_queries=10, list_size=6, n_features=4, seed=0):
    '''Small queries whose relevant document is the argmax of a fixed linear projection.'''

    from dinrank.data import RankedQuery

    rng= make_rng(seed, 'memorizable')
    direction= rng.normal(size=n_features)
    queries= []
    for i in range(n_queries):
        features= rng.normal(size=(list_size, n_features))
        labels= np.zeros(list_size, dtype=np.int64)
        labels[np.argmax(features @ direction)]= 1
        queries.append(RankedQuery(f'm{i}', labels, features))
    return queries
