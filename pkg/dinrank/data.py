'''Ranking data in the LibSVM-with-qid layout used by the MSLR/LETOR collections:

    <grade> qid:<id> <index>:<value> ... [# comment]

Feature indices are 1-based. A query's documents need not be contiguous in the file.
'''

import os
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from os.path import join as pjoin
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from dinrank.errors import DataError, RankingParseError, ShapeError, UninitializedStatisticsError
from dinrank.util import make_rng, num2str, resolve_dtype

STATS_MAGIC= 'DINRANK_STATS0001'


@dataclass
class RankedQuery:
    qid: str
    labels: np.ndarray
    features: np.ndarray
    context: Optional[np.ndarray]= None

    def __post_init__(self):
        self.labels= np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.features= np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != len(self.labels):
            raise ShapeError(f'query {self.qid}: {len(self.labels)} labels for features {self.features.shape}')
        if (self.labels < 0).any():
            raise DataError(f'query {self.qid}: relevance grades must be >= 0, got {self.labels.min()}')
        if self.context is not None:
            self.context= np.asarray(self.context, dtype=np.float64).reshape(-1)

    @property
    def n_docs(self):
        return len(self.labels)

    @property
    def n_features(self):
        return self.features.shape[1]

    def replace(self, labels=None, features=None):
        return RankedQuery(self.qid, self.labels if labels is None else labels,
                           self.features if features is None else features, self.context)


@dataclass
class ListBatch:
    features: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    qids: List[str]
    context: Optional[np.ndarray]= None

    def __len__(self):
        return len(self.qids)


@dataclass
class FeatureStats:
    mean: Optional[np.ndarray]= None
    std: Optional[np.ndarray]= None
    constant: np.ndarray= field(init=False)

    def __post_init__(self):
        if self.fitted:
            self.mean= np.asarray(self.mean, dtype=np.float64)
            self.std= np.asarray(self.std, dtype=np.float64)
            if (self.std < 0).any():
                raise ValueError('feature standard deviations must be >= 0')
            self.constant= self.std == 0
        else:
            self.constant= np.zeros(0, dtype=bool)

    @property
    def fitted(self):
        return self.mean is not None and self.std is not None


# ---------------------------------------------------------------- text format

def _parse_line(text, path, number):

    tokens= text.split()
    if len(tokens) < 2:
        raise RankingParseError(path, number, 'expected a grade and a qid')

    try:
        grade= float(tokens[0])
    except ValueError:
        raise RankingParseError(path, number, f'grade {tokens[0]!r} is not a number') from None
    if not grade.is_integer() or grade < 0:
        raise RankingParseError(path, number, f'grade {tokens[0]} is not a non-negative integer')

    key, _, qid= tokens[1].partition(':')
    if key != 'qid' or not qid:
        raise RankingParseError(path, number, f'expected qid:<id>, got {tokens[1]!r}')

    values= {}
    for token in tokens[2:]:
        index, sep, value= token.partition(':')
        try:
            index, value= int(index), float(value)
        except ValueError:
            raise RankingParseError(path, number, f'malformed feature {token!r}') from None
        if not sep or index < 1:
            raise RankingParseError(path, number, f'feature index must be >= 1, got {token!r}')
        values[index]= value

    return int(grade), qid, values


def parse_ranking_file(path, n_features=None, context_features=0, verbose=False):
    '''Read a ranking file into one RankedQuery per distinct qid, in order of first appearance.

    Missing feature indices are 0. Without n_features the width is the largest index
    seen in the file. The first context_features columns, when requested, are taken
    as the query context (read from the query's first document) and dropped from
    the document features.
    '''

    if not os.path.isfile(path):
        raise FileNotFoundError(f'{path} does not exist')

    grouped= OrderedDict()
    width= 0
    with open(path) as f:
        lines= tqdm(f, desc=f'Reading {os.path.basename(path)}', unit=' lines', disable=not verbose)
        for number, line in enumerate(lines, start=1):
            text= line.split('#', 1)[0].strip()
            if not text:
                continue
            grade, qid, values= _parse_line(text, path, number)
            if values:
                top= max(values)
                if n_features is not None and top > n_features + context_features:
                    raise RankingParseError(path, number, f'feature index {top} exceeds {n_features + context_features}')
                width= max(width, top)
            grouped.setdefault(qid, []).append((grade, values))

    if n_features is not None:
        width= n_features + context_features
    if width < context_features:
        raise ShapeError(f'{path}: {width} feature columns cannot hold {context_features} context features')

    queries= []
    for qid, docs in grouped.items():
        features= np.zeros((len(docs), width))
        for row, (_, values) in enumerate(docs):
            for index, value in values.items():
                features[row, index - 1]= value
        labels= [grade for grade, _ in docs]
        context= features[0, :context_features] if context_features else None
        queries.append(RankedQuery(qid, labels, features[:, context_features:], context))

    return queries


def write_ranking_file(path, queries):
    '''Inverse of parse_ranking_file; every feature is written, zeros included.
    Query context, when present, leads each line so it can be read back with
    context_features.'''

    with open(path, 'w') as f:
        for query in queries:
            for label, row in zip(query.labels, query.features):
                if query.context is not None:
                    row= np.concatenate([query.context, row])
                values= (' ').join(f'{i}:{num2str(v)}' for i, v in enumerate(row, start=1))
                f.write(f'{label} qid:{query.qid} {values}\n')


def fold_paths(directory):
    '''train/vali/test files of one MSLR fold directory.'''

    paths= {split: pjoin(directory, f'{split}.txt') for split in ('train', 'vali', 'test')}
    for split, path in paths.items():
        if not os.path.isfile(path):
            raise FileNotFoundError(f'{split} file {path} not found in fold {directory}')
    return paths


# ---------------------------------------------------------------- query filters

def filter_no_relevant(queries):
    return [q for q in queries if (q.labels > 0).any()]


def truncate_lists(queries, max_docs):
    '''Keep the first max_docs documents of every query, in file order.'''

    if max_docs < 1:
        raise ValueError(f'max_docs must be >= 1, got {max_docs}')
    return [q if q.n_docs <= max_docs else q.replace(q.labels[:max_docs], q.features[:max_docs])
            for q in queries]


# ---------------------------------------------------------------- normalization

def fit_feature_stats(queries):
    '''Per-feature mean and population standard deviation over every training document.'''

    if not queries:
        raise DataError('cannot fit feature statistics on an empty split')

    rows= np.concatenate([q.features for q in queries])
    stats= FeatureStats(rows.mean(axis=0), rows.std(axis=0))
    if stats.constant.any():
        warnings.warn(f'{int(stats.constant.sum())} constant feature(s) will be normalized to 0: '
                      f'{np.flatnonzero(stats.constant).tolist()}')
    return stats


def apply_normalization(queries, stats):
    '''z-score every feature with the given statistics; constant features map to 0.'''

    if stats is None or not stats.fitted:
        raise UninitializedStatisticsError('feature statistics must be fitted before normalization')

    scale= np.where(stats.constant, 0.0, 1.0 / np.where(stats.constant, 1.0, stats.std))
    normalized= []
    for q in queries:
        if q.n_features != len(stats.mean):
            raise ShapeError(f'query {q.qid} has {q.n_features} features, statistics cover {len(stats.mean)}')
        normalized.append(q.replace(features=(q.features - stats.mean) * scale))

    return normalized


def write_feature_stats(path, stats):
    '''Self-describing text sidecar: magic line, comments, then key: value fields.'''

    if not stats.fitted:
        raise UninitializedStatisticsError('feature statistics are not fitted')

    with open(path, 'w') as f:
        f.write(f'{STATS_MAGIC}\n')
        f.write('# per-feature z-score statistics fitted on the training split\n')
        f.write(f'features: {len(stats.mean)}\n')
        f.write('mean: {}\n'.format((' ').join(num2str(x) for x in stats.mean)))
        f.write('std: {}\n'.format((' ').join(num2str(x) for x in stats.std)))


def read_feature_stats(path):

    with open(path) as f:
        lines= f.read().splitlines()

    if not lines or lines[0].strip() != STATS_MAGIC:
        raise DataError(f'{path} is not a feature statistics file')

    fields= {}
    for line in lines[1:]:
        if not line.strip() or line.startswith('#'):
            continue
        key, _, value= line.partition(':')
        fields[key.strip()]= value.split()

    try:
        count= int(fields['features'][0])
        mean= np.array(fields['mean'], dtype=np.float64)
        std= np.array(fields['std'], dtype=np.float64)
    except (KeyError, IndexError, ValueError) as e:
        raise DataError(f'{path}: incomplete feature statistics ({e})') from None

    if len(mean) != count or len(std) != count:
        raise ShapeError(f'{path}: expected {count} features, got {len(mean)} means and {len(std)} deviations')

    return FeatureStats(mean, std)


# ---------------------------------------------------------------- batching

def pad_queries(queries, dtype='float64'):
    '''Stack queries into one ListBatch padded to the longest list.'''

    if not queries:
        raise DataError('cannot batch an empty list of queries')

    dtype= resolve_dtype(dtype)
    length= max(q.n_docs for q in queries)
    width= queries[0].n_features

    features= np.zeros((len(queries), length, width), dtype=dtype)
    labels= np.zeros((len(queries), length), dtype=np.int64)
    mask= np.zeros((len(queries), length), dtype=bool)

    for b, q in enumerate(queries):
        if q.n_features != width:
            raise ShapeError(f'query {q.qid} has {q.n_features} features, batch has {width}')
        if q.n_docs == 0:
            raise ShapeError(f'query {q.qid} has no documents')
        features[b, :q.n_docs]= q.features
        labels[b, :q.n_docs]= q.labels
        mask[b, :q.n_docs]= True

    context= None
    if any(q.context is not None for q in queries):
        if any(q.context is None for q in queries):
            raise ShapeError('either every query of a batch carries context or none does')
        context= np.stack([q.context for q in queries]).astype(dtype)

    return ListBatch(features, labels, mask, [q.qid for q in queries], context)


def make_batches(queries, batch_size, seed=0, shuffle=False, dtype='float64'):
    '''Split queries into padded batches; shuffle permutes query order only.'''

    if batch_size < 1:
        raise ValueError(f'batch_size must be >= 1, got {batch_size}')

    order= np.arange(len(queries))
    if shuffle:
        order= make_rng(seed, 'batches').permutation(len(queries))

    return [pad_queries([queries[i] for i in order[start:start + batch_size]], dtype)
            for start in range(0, len(queries), batch_size)]
