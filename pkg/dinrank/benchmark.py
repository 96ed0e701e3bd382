'''Inference latency and model size of matched scorers.

Scorers are "matched" when they share the dense block: the univariate scorer, an
exact groupwise scorer of group size m and attn-DIN differ only in what feeds it.
'''

import json
import time

import numpy as np
from tqdm import tqdm

from dinrank.errors import BudgetExceededError
from dinrank.scorers import group_count, init_params, param_count, score
from dinrank.util import make_rng


def matched_scorers(base, families=('univariate', 'gsf', 'attn_din'), group_size=2):
    '''One spec per family sharing base's features, dense block and attention block.'''

    specs= {}
    for family in families:
        changes= dict(family=family)
        if family == 'gsf':
            changes.update(group_size=group_size, gsf_mode='exact', gsf_stride=1)
            name= f'gsf_m{group_size}'
        else:
            name= family
        specs[name]= base.model_copy(update=changes)
    return specs


def subnetwork_evaluations(spec, list_size):
    '''Forward passes of the per-row network needed to score one list.'''

    if spec.family == 'gsf':
        if spec.gsf_mode == 'exact':
            return group_count(list_size, min(list_size, spec.group_size))
        return len(range(0, list_size, spec.gsf_stride))
    # attention is one pass over the list, the head one row per document
    return list_size


def time_scorer(spec, params, list_size, repetitions=50, warmup=20, seed=0):
    '''Per-query infer-mode latency in milliseconds: (median, p95) over repetitions,
    after warmup untimed calls.'''

    rng= make_rng(seed, 'benchmark', spec.family, list_size)
    docs= rng.uniform(-2.0, 2.0, size=(list_size, spec.n_features)).astype(params.dtype)
    context= rng.uniform(-2.0, 2.0, size=spec.context_features) if spec.context_features else None

    for _ in range(warmup):
        score(spec, params, docs, context=context)

    elapsed= np.empty(repetitions)
    for r in range(repetitions):
        start= time.perf_counter()
        score(spec, params, docs, context=context)
        elapsed[r]= (time.perf_counter() - start) * 1000.0

    return float(np.median(elapsed)), float(np.percentile(elapsed, 95))


def run_benchmark(base, config, seed=0, verbose=False, out=None):
    '''Time every matched scorer at every list size.

    Exact groupwise scoring is refused, not timed, when its group count exceeds the
    scorer's group_budget. out, when given, receives one JSON record per measurement.
    '''

    specs= matched_scorers(base, config.families)
    records= []

    jobs= [(name, size) for name in specs for size in config.list_sizes]
    for name, size in tqdm(jobs, desc='Benchmark', disable=not verbose):
        spec= specs[name]
        params= init_params(spec, seed)
        record= dict(scorer=name, list_size=size, median_ms=None, p95_ms=None, params=param_count(spec, params),
                     evaluations=subnetwork_evaluations(spec, size), refused=False)

        try:
            if spec.family == 'gsf' and record['evaluations'] > spec.group_budget:
                raise BudgetExceededError(record['evaluations'], spec.group_budget)
            record['median_ms'], record['p95_ms']= time_scorer(spec, params, size, config.repetitions,
                                                               config.warmup, seed)
        except BudgetExceededError as e:
            record.update(refused=True, reason=str(e))

        records.append(record)

    _add_ratios(records)

    if out is not None:
        with open(out, 'w') as f:
            for record in records:
                f.write(json.dumps(record) + '\n')

    return records


def _add_ratios(records, reference='attn_din'):
    '''Latency of each scorer relative to the reference scorer at the same list size.'''

    timed= {r['list_size']: r['median_ms'] for r in records if r['scorer'] == reference and r['median_ms']}
    for r in records:
        base= timed.get(r['list_size'])
        r['ratio']= r['median_ms'] / base if base and r['median_ms'] is not None else None


def format_table(records):

    lines= [f'{"scorer":<12}{"docs":>6}{"median ms":>12}{"p95 ms":>10}{"vs attn":>9}{"evals":>10}{"params":>12}']
    for r in records:
        if r['refused']:
            lines.append(f'{r["scorer"]:<12}{r["list_size"]:>6}  refused: {r["reason"]}')
            continue
        ratio= f'{r["ratio"]:.2f}x' if r.get('ratio') is not None else '-'
        lines.append(f'{r["scorer"]:<12}{r["list_size"]:>6}{r["median_ms"]:>12.3f}{r["p95_ms"]:>10.3f}'
                     f'{ratio:>9}{r["evaluations"]:>10}{r["params"]:>12}')
    return '\n'.join(lines)


def param_table(base, group_sizes=(1, 2, 4, 8, 16, 32, 64, 128)):
    '''Parameter counts of the matched scorers, groupwise over a sweep of group sizes,
    with the increase over the univariate scorer.'''

    univariate= param_count(base.model_copy(update=dict(family='univariate')))
    rows= [dict(scorer='univariate', group_size=1, params=univariate, increase=0)]

    for m in group_sizes:
        spec= base.model_copy(update=dict(family='gsf', group_size=m, gsf_stride=1))
        count= param_count(spec)
        rows.append(dict(scorer=f'gsf_m{m}', group_size=m, params=count, increase=count - univariate))

    count= param_count(base.model_copy(update=dict(family='attn_din')))
    rows.append(dict(scorer='attn_din', group_size=None, params=count, increase=count - univariate))

    return rows


def format_param_table(rows):
    lines= [f'{"scorer":<12}{"params":>12}{"increase":>12}']
    lines+= [f'{r["scorer"]:<12}{r["params"]:>12}{r["increase"]:>12}' for r in rows]
    return '\n'.join(lines)
