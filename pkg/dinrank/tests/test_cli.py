import io
import json
import os
from contextlib import redirect_stdout
from configparser import ConfigParser
from unittest import mock

from dinrank.tests.util import *
from dinrank.checkpoint import load_checkpoint
from dinrank.cli import DinRank
from dinrank.errors import DivergenceError


def run(*args):
    '''Run the command line in process; returns the exit code.'''

    _, code= DinRank.run(['dinrank', *args], exit=False)
    return code


def train_run(name, *extra):
    out= pjoin(outdir, name)
    code= run('train', '--config', TINY_CONFIG, '--override', f'data.train={SAMPLE_RANKING}', '-o', out, *extra)
    return code, out


class TestTrain(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.code, cls.out= train_run('cli_train', '--override', 'loss.kind=approx_ndcg')

    def test_artifacts(self):
        self.assertEqual(self.code, 0)
        for name in ('config.ini', 'run_log.jsonl', 'best.ckpt', 'final.ckpt', 'feature_stats.txt',
                     'metrics.txt', 'metrics.jsonl'):
            self.assertTrue(os.path.isfile(pjoin(self.out, name)), name)

        with open(pjoin(self.out, 'run_log.jsonl')) as f:
            steps= [json.loads(line)['step'] for line in f]
        self.assertEqual(steps, [1, 2, 3, 4, 5, 6])
        self.assertEqual(load_checkpoint(pjoin(self.out, 'final.ckpt')).step, 6)

    def test_config_echo(self):
        parser= ConfigParser(interpolation=None)
        parser.read(pjoin(self.out, 'config.ini'))
        self.assertEqual(parser['loss']['kind'], 'approx_ndcg')
        self.assertEqual(parser['data']['train'], SAMPLE_RANKING)
        self.assertEqual(parser['train']['seed'], '1')

    def test_evaluate(self):
        out= pjoin(outdir, 'cli_evaluate')
        code= run('evaluate', '--checkpoint', pjoin(self.out, 'best.ckpt'), '-d', SAMPLE_RANKING,
                  '--metrics', 'ndcg@3,mrr', '-o', out)
        self.assertEqual(code, 0)
        with open(pjoin(out, 'metrics.jsonl')) as f:
            rows= [json.loads(line) for line in f]
        self.assertEqual([(r['metric'], r['k'], r['n']) for r in rows], [('ndcg', 3, 3), ('mrr', None, 3)])

        self.assertEqual(run('evaluate', '--checkpoint', pjoin(self.out, 'best.ckpt'), '-d', SAMPLE_RANKING,
                             '--metrics', 'ndcg'), 2)

    def test_predict(self):
        stdout= io.StringIO()
        with redirect_stdout(stdout):
            code= run('predict', '--checkpoint', pjoin(self.out, 'best.ckpt'), '-d', SAMPLE_RANKING)
        self.assertEqual(code, 0)

        rows= [line.split('\t') for line in stdout.getvalue().splitlines()]
        self.assertEqual(len(rows), 12)
        self.assertEqual([r[0] for r in rows[:4]], ['10'] * 4)
        self.assertEqual(sorted(int(r[3]) for r in rows[4:8]), [1, 2, 3, 4])

        out= pjoin(outdir, 'cli_predict')
        self.assertEqual(run('predict', '--checkpoint', pjoin(self.out, 'best.ckpt'), '-d', SAMPLE_RANKING,
                             '-o', out), 0)
        with open(pjoin(out, 'predictions.tsv')) as f:
            self.assertEqual(f.read().splitlines(), stdout.getvalue().splitlines())

    def test_compare(self):
        out= pjoin(outdir, 'cli_compare')
        code= run('compare', '--config', TINY_CONFIG, '--baseline', pjoin(self.out, 'best.ckpt'),
                  '--candidate', pjoin(self.out, 'final.ckpt'), '-d', SAMPLE_RANKING, '-o', out)
        self.assertEqual(code, 0)
        with open(pjoin(out, 'compare.jsonl')) as f:
            rows= [json.loads(line) for line in f]
        self.assertEqual([r['metric'] for r in rows], ['ndcg@1', 'ndcg@5', 'mrr', 'arp'])
        # one run, no validation split: best is final
        self.assertTrue(all(r['delta'] == 0 and r['p_value'] == 1.0 for r in rows))

    def test_data_errors(self):
        bad= pjoin(outdir, 'cli_bad.txt')
        with open(bad, 'w') as f:
            f.write('1 qid:1 1:0.5\n1 qid:1 1:oops\n')
        self.assertEqual(run('evaluate', '--checkpoint', pjoin(self.out, 'best.ckpt'), '-d', bad), 3)
        self.assertEqual(run('evaluate', '--checkpoint', SAMPLE_RANKING, '-d', SAMPLE_RANKING), 3)

        empty= pjoin(outdir, 'cli_empty.txt')
        with open(empty, 'w') as f:
            f.write('# no documents\n')
        self.assertEqual(run('evaluate', '--checkpoint', pjoin(self.out, 'best.ckpt'), '-d', empty), 3)


class TestUsage(unittest.TestCase):

    def test_missing_data(self):
        out= pjoin(outdir, 'cli_missing')
        code= run('train', '--config', TINY_CONFIG, '--override', 'data.train=/nonexistent/train.txt', '-o', out)
        self.assertEqual(code, 2)
        self.assertFalse(os.path.exists(pjoin(out, 'final.ckpt')))

    def test_bad_configuration(self):
        self.assertEqual(train_run('cli_bad_key', '--override', 'scorer.colour=red')[0], 2)
        self.assertEqual(train_run('cli_bad_value', '--override', 'learning_rate=-1')[0], 2)
        self.assertEqual(run('train', '--config', TINY_CONFIG, '--override', f'data.train={SAMPLE_RANKING}'), 2)
        self.assertEqual(run('frobnicate'), 2)

    def test_no_relevant_documents(self):
        unlabeled= pjoin(outdir, 'cli_unlabeled.txt')
        with open(unlabeled, 'w') as f:
            f.write('0 qid:1 1:0.5 2:1 3:0 4:0 5:2\n0 qid:1 1:0.1 2:0 3:1 4:0 5:1\n')
        out= pjoin(outdir, 'cli_unlabeled')
        code= run('train', '--config', TINY_CONFIG, '--override', f'data.train={unlabeled}', '-o', out)
        self.assertEqual(code, 3)
        self.assertFalse(os.path.exists(pjoin(out, 'final.ckpt')))

    def test_divergence(self):
        with mock.patch('dinrank.cli.train', side_effect=DivergenceError(4, 0.7)):
            self.assertEqual(train_run('cli_diverged')[0], 4)

    def test_seed_override(self):
        code, out= train_run('cli_seed', '--seed', '5', '--override', 'max_steps=2')
        self.assertEqual(code, 0)
        self.assertEqual(load_checkpoint(pjoin(out, 'final.ckpt')).seed, 5)


class TestModelSize(unittest.TestCase):

    def test_params(self):
        out= pjoin(outdir, 'cli_params')
        self.assertEqual(run('params', '--config', TINY_CONFIG, '--group-sizes', '1,2', '-o', out), 0)
        with open(pjoin(out, 'params.jsonl')) as f:
            rows= [json.loads(line) for line in f]
        self.assertEqual([r['scorer'] for r in rows], ['univariate', 'gsf_m1', 'gsf_m2', 'attn_din'])
        self.assertEqual(rows[1]['increase'], 0)

        self.assertEqual(run('params', '--config', TINY_CONFIG, '--group-sizes', 'two'), 2)

    def test_benchmark(self):
        out= pjoin(outdir, 'cli_benchmark')
        self.assertEqual(run('benchmark', '--config', TINY_CONFIG, '-o', out), 0)
        with open(pjoin(out, 'benchmark.jsonl')) as f:
            records= [json.loads(line) for line in f]
        self.assertEqual(len(records), 6)
        self.assertTrue(all(r['median_ms'] > 0 and not r['refused'] for r in records))


if __name__ == '__main__':
    unittest.main()
