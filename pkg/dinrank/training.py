import json
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Literal, Optional

import numpy as np
from pydantic import Field, field_validator
from tqdm import tqdm

from dinrank.checkpoint import Checkpoint
from dinrank.data import (RankedQuery, apply_normalization, filter_no_relevant, fit_feature_stats,
                          make_batches, truncate_lists)
from dinrank.errors import DataError, DivergenceError, ShapeError
from dinrank.losses import LossSpec, compute_loss
from dinrank.metrics import DEFAULT_METRICS, evaluate_lists, parse_metric
from dinrank.numeric import Tape, backward
from dinrank.scorers import ScorerSpec, init_params, score_batch
from dinrank.util import ConfigModel, make_rng

EPSILON= 1e-8


class TrainConfig(ConfigModel):
    scorer: ScorerSpec= Field(default_factory=ScorerSpec)
    loss: LossSpec= Field(default_factory=LossSpec)
    learning_rate: float= Field(0.005, gt=0.0)
    batch_size: int= Field(128, ge=1)
    max_steps: int= Field(1000, ge=0)
    eval_every: int= Field(0, ge=0)
    seed: int= 0
    max_docs: int= Field(200, ge=1)
    precision: Literal['float32', 'float64']= 'float32'
    normalize: bool= True
    clip_norm: Optional[float]= Field(None, gt=0.0)
    selection_metric: str= 'ndcg@5'
    validation: Literal['selection', 'monitor']= 'selection'
    metrics: List[str]= Field(default_factory=lambda: list(DEFAULT_METRICS))

    @field_validator('selection_metric')
    @classmethod
    def _known_metric(cls, name):
        parse_metric(name)
        return name

    @field_validator('metrics')
    @classmethod
    def _known_metrics(cls, names):
        for name in names:
            parse_metric(name)
        return names


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    history: List[dict]= field(default_factory=list)
    evaluations: List[dict]= field(default_factory=list)


def adagrad_step(params, grads, lr, accumulators, epsilon=EPSILON):
    '''In-place Adagrad update: accum += g^2; param -= lr * g / (sqrt(accum) + epsilon).'''

    for name, g in grads.items():
        p= params[name]
        if p.shape != g.shape or accumulators[name].shape != g.shape:
            raise ShapeError(f'{name}: parameter {p.shape}, gradient {g.shape}, '
                             f'accumulator {accumulators[name].shape}')
        accumulators[name]+= g * g
        p-= (lr * g / (np.sqrt(accumulators[name]) + epsilon)).astype(p.dtype)

    return params


def clip_gradients(grads, max_norm):
    '''Rescale every gradient so the global L2 norm is at most max_norm.
    Returns the norm before clipping and whether it was applied.'''

    norm= float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    clipped= max_norm is not None and norm > max_norm
    if clipped:
        factor= max_norm / norm
        for g in grads.values():
            g*= g.dtype.type(factor)

    return norm, clipped


def _better(metric, value, best):
    if best is None:
        return True
    # lower is better for average relevance position
    if parse_metric(metric)[0] == 'arp':
        return value < best
    return value > best


def _check_width(spec, queries):
    for q in queries:
        if q.n_features != spec.n_features:
            raise ShapeError(f'query {q.qid} has {q.n_features} features, scorer expects {spec.n_features}')
        if spec.context_features and (q.context is None or len(q.context) != spec.context_features):
            raise ShapeError(f'query {q.qid} lacks the {spec.context_features} context features the scorer expects')


def _score_queries(checkpoint, queries, batch_size=128, seed=0):
    '''Infer-mode scores of every query, padded slots dropped.'''

    _check_width(checkpoint.spec, queries)
    if checkpoint.stats is not None:
        queries= apply_normalization(queries, checkpoint.stats)

    scored= []
    for index, batch in enumerate(make_batches(queries, batch_size, dtype=checkpoint.dtype)):
        values= score_batch(checkpoint.spec, checkpoint.params, batch, mode='infer', seed=(seed, 'eval', index)).values
        for b in range(len(batch)):
            scored.append(values[b][batch.mask[b]].astype(np.float64))

    return scored


def evaluate(checkpoint, queries, metrics=DEFAULT_METRICS, seed=0, batch_size=128, n_resamples=1000):
    '''Infer-mode metrics over every document of every query; lists are not truncated.'''

    if not queries:
        raise DataError('cannot evaluate on an empty split')

    scores= _score_queries(checkpoint, queries, batch_size, seed)
    return evaluate_lists([q.labels for q in queries], scores, [q.qid for q in queries],
                          metrics=metrics, n_resamples=n_resamples, seed=seed)


def predict(checkpoint, queries, batch_size=128, seed=0):
    '''(query, scores) per query, scores in document order.'''

    return list(zip(queries, _score_queries(checkpoint, queries, batch_size, seed)))


def train(config, train_queries, eval_queries=None, verbose=False, run_log=None):
    '''Adagrad over shuffled list batches.

    Every eval_every steps (and after the last step) the model is evaluated on
    eval_queries; with validation=selection the best checkpoint by selection_metric
    is kept. run_log, when given, receives one JSON record per step and per evaluation.
    '''

    spec= config.scorer
    queries= truncate_lists(filter_no_relevant(train_queries), config.max_docs)
    if not queries:
        raise DataError('no training query has a relevant document')
    _check_width(spec, queries)

    stats= None
    if config.normalize:
        stats= fit_feature_stats(queries)
        queries= apply_normalization(queries, stats)

    params= init_params(spec, config.seed, config.precision)
    accumulators= {name: np.zeros_like(p) for name, p in params.params.items()}
    current= Checkpoint(spec, params, 0, config.seed, stats, accumulators)

    history, evaluations= [], []
    best, best_value= None, None
    log= open(run_log, 'w') if run_log else None

    def record(entry):
        if log is not None:
            log.write(json.dumps(entry) + '\n')
            log.flush()

    def checkpoint_eval(step):
        nonlocal best, best_value
        if not eval_queries:
            return
        current.step= step
        names= list(config.metrics)
        if config.selection_metric not in names:
            names.append(config.selection_metric)
        report= evaluate(current, eval_queries, names, seed=config.seed)
        means= {name: s.mean for name, s in report.summary.items()}
        entry= dict(step=step, split='vali', metrics=means)
        evaluations.append(entry)
        record(entry)
        if verbose:
            print(f'step {step}: ' + (', ').join(f'{k}={v:.4f}' for k, v in means.items()))

        value= means[config.selection_metric]
        if config.validation == 'selection' and not np.isnan(value) and _better(config.selection_metric, value, best_value):
            best, best_value= current.snapshot(), value

    start= time.time()
    last_loss= None
    step= 0
    try:
        checkpoint_eval(0)
        progress= tqdm(total=config.max_steps, desc='Training', disable=not verbose)
        epoch= 0
        while step < config.max_steps:
            for batch in make_batches(queries, config.batch_size, seed=(config.seed, 'epoch', epoch),
                                      shuffle=True, dtype=config.precision):
                if step >= config.max_steps:
                    break
                step+= 1

                tape= Tape()
                scores= score_batch(spec, params, batch, mode='train', seed=(config.seed, 'step', step), tape=tape)
                loss= compute_loss(config.loss, batch.labels, scores, batch.mask)
                value= float(loss.data)
                if not np.isfinite(value):
                    raise DivergenceError(step, last_loss)

                params.zero_grad()
                backward(tape, loss, params)

                entry= dict(step=step, loss=value, lr=config.learning_rate, wall_time=time.time() - start)
                if config.clip_norm is not None:
                    norm, clipped= clip_gradients(params.grads, config.clip_norm)
                    entry.update(grad_norm=norm, clipped=clipped)
                    if clipped:
                        warnings.warn(f'step {step}: gradient norm {norm:.4g} clipped to {config.clip_norm}')

                adagrad_step(params.params, params.grads, config.learning_rate, accumulators)
                last_loss= value

                history.append(entry)
                record(entry)
                progress.update(1)
                progress.set_postfix(loss=f'{value:.4f}')

                if config.eval_every and step % config.eval_every == 0 and step < config.max_steps:
                    checkpoint_eval(step)
            epoch+= 1

        progress.close()
        if step > 0:
            checkpoint_eval(step)
    finally:
        if log is not None:
            log.close()

    current.step= step
    final= current.snapshot()
    if best is None:
        best= final

    return TrainResult(best, final, history, evaluations)


def make_synthetic_max_task(n_queries, list_size, n_features, seed=0, gap=0.25):
    '''Lists where relevance depends on the rest of the list.

    Features are i.i.d. uniform on [0, 1), except feature 0, which is shifted by a
    per-list offset drawn from [-4, 4) and has one document pushed at least gap
    beyond the spread of the others. The single relevant document is the one whose
    feature 0 deviates most from the list mean, so no fixed per-document threshold
    can find it. The plain largest value of feature 0 would be learnable by a
    univariate scorer; this task keeps the univariate scorer near chance (NDCG@1
    of at most 0.35) while a scorer that attends across the list solves it.
    '''

    if list_size < 2:
        raise ValueError(f'list_size must be >= 2, got {list_size}')
    if n_features < 1:
        raise ValueError(f'n_features must be >= 1, got {n_features}')

    rng= make_rng(seed, 'synthetic')
    queries= []
    for i in range(n_queries):
        features= rng.uniform(0.0, 1.0, size=(list_size, n_features))
        offset= rng.uniform(-4.0, 4.0)
        outlier= rng.integers(list_size)
        side= rng.choice([-1.0, 1.0])
        features[outlier, 0]= 0.5 + side * (0.5 + gap * (1.0 + rng.uniform()))
        features[:, 0]+= offset

        deviation= np.abs(features[:, 0] - features[:, 0].mean())
        labels= np.zeros(list_size, dtype=np.int64)
        labels[np.argmax(deviation)]= 1
        queries.append(RankedQuery(str(i), labels, features))

    return queries

