import json
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy.stats import bootstrap, ttest_rel

from dinrank.util import make_rng

DEFAULT_METRICS= ('ndcg@1', 'ndcg@5', 'ndcg@10', 'mrr', 'arp')


def parse_metric(name):
    '''ndcg@5 -> ('ndcg', 5); mrr -> ('mrr', None)'''

    kind, _, cutoff= name.lower().partition('@')
    if kind not in ('ndcg', 'mrr', 'arp'):
        raise ValueError(f'Unknown metric {name}')
    if kind == 'ndcg':
        if not cutoff.isdigit() or int(cutoff) < 1:
            raise ValueError(f'ndcg needs a cutoff k >= 1, got {name}')
        return kind, int(cutoff)
    if cutoff:
        raise ValueError(f'{kind} takes no cutoff, got {name}')
    return kind, None


def _valid(labels, scores, mask):
    labels= np.asarray(labels)
    scores= np.asarray(scores, dtype=np.float64)
    mask= np.ones(labels.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return labels, scores, mask


def rank_order(scores, mask=None):
    '''Indices of the valid documents sorted by descending score; ties keep document order.'''

    scores= np.asarray(scores, dtype=np.float64)
    valid= np.flatnonzero(np.ones(scores.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool))
    return valid[np.argsort(-scores[valid], kind='stable')]


def rank_positions(scores, mask=None):
    '''1-based rank of every document under rank_order; padded slots get 0.'''

    order= rank_order(scores, mask)
    ranks= np.zeros(np.shape(scores), dtype=np.int64)
    ranks[order]= np.arange(1, len(order) + 1)
    return ranks


def gains(labels):
    return np.power(2.0, np.asarray(labels, dtype=np.float64)) - 1.0


def discounts(n):
    return 1.0 / np.log2(np.arange(2, n + 2, dtype=np.float64))


def dcg(ordered_labels, k=None):
    ordered_labels= np.asarray(ordered_labels)[:k]
    return float(np.sum(gains(ordered_labels) * discounts(len(ordered_labels))))


def ideal_dcg(labels, k=None):
    return dcg(np.sort(np.asarray(labels))[::-1], k)


def ndcg_at_k(labels, scores, mask=None, k=10):
    '''NDCG@k of one list; nan when the list has no relevant document.'''

    if k < 1:
        raise ValueError(f'k must be >= 1, got {k}')

    labels, scores, mask= _valid(labels, scores, mask)
    ideal= ideal_dcg(labels[mask], k)
    if ideal <= 0:
        return np.nan

    return dcg(labels[rank_order(scores, mask)], k) / ideal


def _relevant_ranks(labels, scores, mask):
    labels, scores, mask= _valid(labels, scores, mask)
    order= rank_order(scores, mask)
    return np.flatnonzero(labels[order] > 0) + 1


def reciprocal_rank(labels, scores, mask=None):
    '''1 / rank of the first relevant document (grades > 0 count as relevant).'''

    ranks= _relevant_ranks(labels, scores, mask)
    return 1.0 / ranks[0] if len(ranks) else np.nan


def average_relevance_position(labels, scores, mask=None):
    ranks= _relevant_ranks(labels, scores, mask)
    return float(ranks.mean()) if len(ranks) else np.nan


def _lists(labels_list, scores_list, masks):
    if masks is None:
        masks= [None] * len(labels_list)
    return zip(labels_list, scores_list, masks)


def mrr(labels_list, scores_list, masks=None):
    values= [reciprocal_rank(y, s, m) for y, s, m in _lists(labels_list, scores_list, masks)]
    return float(np.nanmean(values)) if not np.all(np.isnan(values)) else np.nan


def arp(labels_list, scores_list, masks=None):
    # macro average: per query first, then over queries
    values= [average_relevance_position(y, s, m) for y, s, m in _lists(labels_list, scores_list, masks)]
    return float(np.nanmean(values)) if not np.all(np.isnan(values)) else np.nan


def metric_value(name, labels, scores, mask=None):
    kind, k= parse_metric(name)
    if kind == 'ndcg':
        return ndcg_at_k(labels, scores, mask, k)
    if kind == 'mrr':
        return reciprocal_rank(labels, scores, mask)
    return average_relevance_position(labels, scores, mask)


def bootstrap_ci(values, n_resamples=1000, confidence=0.95, seed=0):
    '''Percentile bootstrap interval of the mean over queries (nan entries dropped).'''

    values= np.asarray(values, dtype=np.float64)
    values= values[~np.isnan(values)]
    if len(values) == 0:
        return np.nan, np.nan
    if len(values) < 2 or np.all(values == values[0]):
        return float(values[0]), float(values[0])

    result= bootstrap((values,), np.mean, n_resamples=n_resamples, confidence_level=confidence,
                      method='percentile', rng=make_rng(seed, 'bootstrap'))
    return float(result.confidence_interval.low), float(result.confidence_interval.high)


@dataclass
class MetricSummary:
    mean: float
    ci_low: float
    ci_high: float
    n: int


@dataclass
class MetricReport:
    qids: List[str]
    per_query: Dict[str, np.ndarray]
    summary: Dict[str, MetricSummary]= field(default_factory=dict)

    def records(self):
        rows= []
        for name, s in self.summary.items():
            kind, k= parse_metric(name)
            rows.append(dict(metric=kind, k=k, mean=s.mean, ci_low=s.ci_low, ci_high=s.ci_high, n=s.n))
        return rows

    def table(self):
        lines= [f'{"metric":<10}{"mean":>10}{"95% CI":>22}{"queries":>9}']
        for name, s in self.summary.items():
            # NDCG is reported on a 0-100 scale
            factor= 100.0 if name.startswith('ndcg') else 1.0
            interval= f'[{s.ci_low * factor:.2f}, {s.ci_high * factor:.2f}]'
            lines.append(f'{name:<10}{s.mean * factor:>10.2f}{interval:>22}{s.n:>9}')
        return '\n'.join(lines)

    def write(self, prefix):
        with open(prefix + '.txt', 'w') as f:
            f.write(self.table() + '\n')
        with open(prefix + '.jsonl', 'w') as f:
            for row in self.records():
                f.write(json.dumps(row) + '\n')


def evaluate_lists(labels_list, scores_list, qids=None, masks=None, metrics=DEFAULT_METRICS,
                   n_resamples=1000, seed=0):

    if qids is None:
        qids= [str(i) for i in range(len(labels_list))]

    per_query= {}
    summary= {}
    for name in metrics:
        values= np.array([metric_value(name, y, s, m) for y, s, m in _lists(labels_list, scores_list, masks)],
                         dtype=np.float64)
        per_query[name]= values
        kept= values[~np.isnan(values)]
        low, high= bootstrap_ci(kept, n_resamples=n_resamples, seed=seed)
        summary[name]= MetricSummary(float(kept.mean()) if len(kept) else np.nan, low, high, int(len(kept)))

    return MetricReport(list(qids), per_query, summary)


def compare_reports(baseline, candidate):
    '''Paired comparison over the queries both reports scored.

    Returns one row per shared metric with the mean difference, the relative change
    in percent and a paired t-test.
    '''

    index= {qid: i for i, qid in enumerate(baseline.qids)}
    shared= [(index[qid], j) for j, qid in enumerate(candidate.qids) if qid in index]
    if not shared:
        raise ValueError('reports have no query in common')
    left, right= (np.array(side) for side in zip(*shared))

    rows= []
    for name in candidate.per_query:
        if name not in baseline.per_query:
            continue
        a= baseline.per_query[name][left]
        b= candidate.per_query[name][right]
        keep= ~(np.isnan(a) | np.isnan(b))
        a, b= a[keep], b[keep]
        if len(a) == 0:
            continue
        delta= float(np.mean(b - a))
        relative= 100.0 * delta / np.mean(a) if np.mean(a) else np.nan
        if len(a) > 1 and np.any(a != b):
            test= ttest_rel(b, a)
            statistic, p_value= float(test.statistic), float(test.pvalue)
        else:
            statistic, p_value= 0.0, 1.0
        rows.append(dict(metric=name, baseline=float(np.mean(a)), candidate=float(np.mean(b)), delta=delta,
                         relative=float(relative), t=statistic, p_value=p_value, n=int(len(a))))

    return rows
