#!/usr/bin/env python

import functools
import json
import os
import sys
from os.path import join as pjoin

from plumbum import cli
from pydantic import ValidationError

from dinrank._version import __version__
from dinrank.benchmark import format_param_table, format_table, param_table, run_benchmark
from dinrank.checkpoint import load_checkpoint, save_checkpoint
from dinrank.config import load_run_config, write_run_config
from dinrank.data import parse_ranking_file, write_feature_stats
from dinrank.errors import (BudgetExceededError, CheckpointError, ConfigError, DataError, DegenerateRowError,
                            DivergenceError, RankingParseError, ShapeError, UninitializedStatisticsError)
from dinrank.metrics import DEFAULT_METRICS, compare_reports, parse_metric, rank_positions
from dinrank.training import evaluate, predict, train

EXIT_USAGE= 2
EXIT_DATA= 3
EXIT_DIVERGENCE= 4

EXIT_CODES= (
    (DivergenceError, EXIT_DIVERGENCE),
    ((ConfigError, ValidationError, BudgetExceededError), EXIT_USAGE),
    ((RankingParseError, ShapeError, DegenerateRowError, FileNotFoundError, UninitializedStatisticsError,
      CheckpointError, DataError), EXIT_DATA),
)


def _guarded(main):
    '''Turn the package's errors into a one-line diagnostic and an exit code.'''

    @functools.wraps(main)
    def wrapper(self, *args):
        try:
            return main(self, *args)
        except Exception as e:
            for kinds, code in EXIT_CODES:
                if isinstance(e, kinds):
                    print(f'{self.PROGNAME}: {e}', file=sys.stderr)
                    return code
            raise

    return wrapper


class DinRank(cli.Application):
    '''Learning-to-rank with self-attentive document interaction networks'''

    PROGNAME= 'dinrank'
    VERSION= __version__

    def main(self, *args):
        if args:
            print(f'Unknown command {args[0]!r}', file=sys.stderr)
            return EXIT_USAGE
        if not self.nested_command:
            print('No command given, see --help', file=sys.stderr)
            return EXIT_USAGE


class _Command(cli.Application):

    config= cli.SwitchAttr(['-c', '--config'], cli.ExistingFile, help='INI run configuration')

    override= cli.SwitchAttr(['--override'], str, list=True,
                             help='key=value on top of the configuration, e.g. loss.kind=softmax (repeatable)')

    out_dir= cli.SwitchAttr(['-o', '--out-dir'], help='output directory')

    seed= cli.SwitchAttr(['--seed'], int, default=None, help='overrides train.seed')

    verbose= cli.Flag(['-v', '--verbose'], help='progress bars and status messages', default=False)

    def run_config(self):
        return load_run_config(str(self.config) if self.config else None, self.override, self.seed)

    def output(self, name):
        if not self.out_dir:
            return None
        os.makedirs(self.out_dir, exist_ok=True)
        return pjoin(str(self.out_dir), name)


def _load_queries(config, checkpoint, data=None):
    '''Queries of --data, else of the configured test split.'''

    spec= checkpoint.spec
    if data is not None:
        return parse_ranking_file(str(data), spec.n_features, spec.context_features)

    splits= config.data.load(spec.n_features, config.seed, splits=('test',))
    if 'test' not in splits:
        raise ConfigError('no evaluation data: pass --data or configure data.test')
    return splits['test']


@DinRank.subcommand('train')
class Train(_Command):
    '''Train a scorer; writes checkpoints, run log, config echo and metric report to the output directory'''

    @_guarded
    def main(self):

        if not self.out_dir:
            raise ConfigError('train needs --out-dir')
        config= self.run_config()
        write_run_config(self.output('config.ini'), config)

        splits= config.data.load(config.scorer.n_features, config.seed, verbose=self.verbose)
        if 'train' not in splits:
            raise ConfigError('no training data: configure data.train, data.fold or data.kind=synthetic')

        print(f'Training {config.scorer.family} on {len(splits["train"])} queries')
        result= train(config.train_config(), splits['train'], splits.get('vali'), verbose=self.verbose,
                      run_log=self.output('run_log.jsonl'))

        save_checkpoint(self.output('best.ckpt'), result.best)
        save_checkpoint(self.output('final.ckpt'), result.final)
        if result.best.stats is not None:
            write_feature_stats(self.output('feature_stats.txt'), result.best.stats)

        split= next(s for s in ('test', 'vali', 'train') if s in splits)
        report= evaluate(result.best, splits[split], config.metrics, seed=config.seed)
        report.write(self.output('metrics'))

        print(f'Best checkpoint at step {result.best.step}, {split} metrics:')
        print(report.table())


@DinRank.subcommand('evaluate')
class Evaluate(_Command):
    '''Metric report of a checkpoint on a ranking file'''

    checkpoint= cli.SwitchAttr(['--checkpoint'], cli.ExistingFile, help='checkpoint file', mandatory=True)

    data= cli.SwitchAttr(['-d', '--data'], cli.ExistingFile, help='ranking file, default: configured test split')

    metrics= cli.SwitchAttr(['--metrics'], str, default=(',').join(DEFAULT_METRICS), help='comma separated metrics')

    @_guarded
    def main(self):

        config= self.run_config()
        checkpoint= load_checkpoint(str(self.checkpoint))
        queries= _load_queries(config, checkpoint, self.data)

        metrics= [m.strip() for m in self.metrics.split(',') if m.strip()]
        try:
            for name in metrics:
                parse_metric(name)
        except ValueError as e:
            raise ConfigError(f'--metrics: {e}') from None

        report= evaluate(checkpoint, queries, metrics, seed=config.seed)
        print(report.table())

        prefix= self.output('metrics')
        if prefix:
            report.write(prefix)
            for row in report.records():
                print(json.dumps(row))


@DinRank.subcommand('predict')
class Predict(_Command):
    '''Per-document scores and ranks: qid, document index, score, rank'''

    checkpoint= cli.SwitchAttr(['--checkpoint'], cli.ExistingFile, help='checkpoint file', mandatory=True)

    data= cli.SwitchAttr(['-d', '--data'], cli.ExistingFile, help='ranking file, default: configured test split')

    @_guarded
    def main(self):

        config= self.run_config()
        checkpoint= load_checkpoint(str(self.checkpoint))
        queries= _load_queries(config, checkpoint, self.data)

        lines= []
        for query, scores in predict(checkpoint, queries, seed=config.seed):
            ranks= rank_positions(scores)
            lines+= [f'{query.qid}\t{i}\t{s!r}\t{r}' for i, (s, r) in enumerate(zip(scores.tolist(), ranks))]

        path= self.output('predictions.tsv')
        if path:
            with open(path, 'w') as f:
                f.write('\n'.join(lines) + '\n')
            print(f'Wrote {len(lines)} predictions to {path}')
        else:
            print('\n'.join(lines))


@DinRank.subcommand('benchmark')
class Benchmark(_Command):
    '''Per-query inference latency of matched scorers over list sizes'''

    @_guarded
    def main(self):

        config= self.run_config()
        records= run_benchmark(config.scorer, config.benchmark, seed=config.seed, verbose=self.verbose,
                               out=self.output('benchmark.jsonl'))
        print(format_table(records))


@DinRank.subcommand('params')
class Params(_Command):
    '''Parameter counts of matched scorers, groupwise over a sweep of group sizes'''

    group_sizes= cli.SwitchAttr(['--group-sizes'], str, default=None,
                                help='comma separated group sizes, default: benchmark.group_sizes')

    @_guarded
    def main(self):

        config= self.run_config()
        sizes= config.benchmark.group_sizes
        if self.group_sizes:
            try:
                sizes= [int(m) for m in self.group_sizes.split(',') if m.strip()]
            except ValueError:
                raise ConfigError(f'--group-sizes expects integers, got {self.group_sizes}') from None

        rows= param_table(config.scorer, sizes)
        print(format_param_table(rows))

        path= self.output('params.jsonl')
        if path:
            with open(path, 'w') as f:
                f.write(''.join(json.dumps(row) + '\n' for row in rows))


@DinRank.subcommand('compare')
class Compare(_Command):
    '''Paired per-query comparison of two checkpoints on the same data'''

    baseline= cli.SwitchAttr(['--baseline'], cli.ExistingFile, help='baseline checkpoint', mandatory=True)

    candidate= cli.SwitchAttr(['--candidate'], cli.ExistingFile, help='candidate checkpoint', mandatory=True)

    data= cli.SwitchAttr(['-d', '--data'], cli.ExistingFile, help='ranking file, default: configured test split')

    @_guarded
    def main(self):

        config= self.run_config()
        reports= []
        for path in (self.baseline, self.candidate):
            checkpoint= load_checkpoint(str(path))
            reports.append(evaluate(checkpoint, _load_queries(config, checkpoint, self.data), config.metrics,
                                    seed=config.seed))

        rows= compare_reports(*reports)
        print(f'{"metric":<10}{"baseline":>10}{"candidate":>11}{"change %":>10}{"p":>9}')
        for row in rows:
            print(f'{row["metric"]:<10}{row["baseline"]:>10.4f}{row["candidate"]:>11.4f}'
                  f'{row["relative"]:>10.2f}{row["p_value"]:>9.3g}')

        path= self.output('compare.jsonl')
        if path:
            with open(path, 'w') as f:
                f.write(''.join(json.dumps(row) + '\n' for row in rows))


def main():
    DinRank.run()


if __name__ == '__main__':
    main()
