import warnings
from os import makedirs

import numpy as np
from numpy import testing

from dinrank.tests.util import *
from dinrank.data import (FeatureStats, RankedQuery, apply_normalization, filter_no_relevant, fit_feature_stats,
                          fold_paths, make_batches, pad_queries, parse_ranking_file, read_feature_stats,
                          truncate_lists, write_feature_stats, write_ranking_file)
from dinrank.errors import RankingParseError, ShapeError, UninitializedStatisticsError


def _write(name, text):
    path= pjoin(outdir, name)
    with open(path, 'w') as f:
        f.write(text)
    return path


class TestParse(unittest.TestCase):

    def test_two_lines(self):
        path= _write('two.txt', '2 qid:7 1:0.5 3:1.0\n0 qid:7 2:-1.0\n')
        query,= parse_ranking_file(path, n_features=3)

        self.assertEqual(query.qid, '7')
        testing.assert_array_equal(query.labels, [2, 0])
        testing.assert_array_equal(query.features, [[0.5, 0.0, 1.0], [0.0, -1.0, 0.0]])

    def test_sample(self):
        queries= parse_ranking_file(SAMPLE_RANKING)

        self.assertEqual([q.qid for q in queries], ['10', '20', '30'])
        self.assertEqual(queries[0].features.shape, (4, 5))
        testing.assert_array_equal(queries[2].labels, [0, 0, 1, 4])
        testing.assert_array_equal(queries[0].features[0], [0.5, 1.25, -0.75, 0.0, 3.0])

    def test_interleaved_queries_keep_first_appearance(self):
        path= _write('interleaved.txt', '1 qid:b 1:1\n0 qid:a 1:2\n0 qid:b 1:3\n')
        queries= parse_ranking_file(path)
        self.assertEqual([q.qid for q in queries], ['b', 'a'])
        testing.assert_array_equal(queries[0].features[:, 0], [1.0, 3.0])

    def test_empty_file(self):
        self.assertEqual(parse_ranking_file(_write('empty.txt', '# nothing here\n\n')), [])

    def test_errors_carry_line_number(self):
        for text, line in (('1 qid:1 1:0\nx qid:1 1:0\n', 2),
                           ('1 qid:1 1:0\n1 query:1 1:0\n', 2),
                           ('1 qid:1 0:2.0\n', 1),
                           ('1 qid:1 1:abc\n', 1),
                           ('1.5 qid:1 1:0\n', 1),
                           ('\n\n1\n', 3)):
            with self.assertRaises(RankingParseError) as raised:
                parse_ranking_file(_write('bad.txt', text))
            self.assertEqual(raised.exception.line, line, text)
            self.assertIn(f'bad.txt:{line}:', str(raised.exception))

        with self.assertRaises(RankingParseError):
            parse_ranking_file(SAMPLE_RANKING, n_features=4)
        with self.assertRaises(FileNotFoundError):
            parse_ranking_file(pjoin(outdir, 'missing.txt'))

    def test_context_columns(self):
        queries= parse_ranking_file(SAMPLE_RANKING, context_features=2)
        testing.assert_array_equal(queries[0].context, [0.5, 1.25])
        self.assertEqual(queries[0].n_features, 3)

    def test_write_and_read_back(self):
        queries= parse_ranking_file(SAMPLE_RANKING)
        path= pjoin(outdir, 'copy.txt')
        write_ranking_file(path, queries)

        for a, b in zip(queries, parse_ranking_file(path)):
            self.assertEqual(a.qid, b.qid)
            testing.assert_array_equal(a.labels, b.labels)
            testing.assert_array_equal(a.features, b.features)

    def test_fold_paths(self):
        fold= pjoin(outdir, 'Fold1')
        makedirs(fold, exist_ok=True)
        for split in ('train', 'vali'):
            _write(pjoin('Fold1', f'{split}.txt'), '')
        with self.assertRaises(FileNotFoundError):
            fold_paths(fold)

        _write(pjoin('Fold1', 'test.txt'), '')
        self.assertEqual(fold_paths(fold)['vali'], pjoin(fold, 'vali.txt'))


class TestQueries(unittest.TestCase):

    def test_validation(self):
        with self.assertRaises(ShapeError):
            RankedQuery('q', [1, 0], np.zeros((3, 2)))
        with self.assertRaises(ValueError):
            RankedQuery('q', [-1], np.zeros((1, 2)))

    def test_filter_and_truncate(self):
        queries= [RankedQuery('a', [0, 0], np.zeros((2, 1))), RankedQuery('b', [0, 2, 1], np.arange(3.0)[:, None])]
        kept= filter_no_relevant(queries)
        self.assertEqual([q.qid for q in kept], ['b'])

        short,= truncate_lists(kept, 2)
        testing.assert_array_equal(short.labels, [0, 2])
        testing.assert_array_equal(short.features[:, 0], [0.0, 1.0])
        with self.assertRaises(ValueError):
            truncate_lists(kept, 0)


class TestNormalization(unittest.TestCase):

    def test_z_scores(self):
        queries= [RankedQuery('a', [1, 0], [[1.0, 5.0], [3.0, 5.0]]), RankedQuery('b', [1], [[5.0, 5.0]])]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            stats= fit_feature_stats(queries)
        self.assertEqual(len(caught), 1)

        testing.assert_allclose(stats.mean, [3.0, 5.0])
        testing.assert_array_equal(stats.constant, [False, True])

        a, b= apply_normalization(queries, stats)
        std= np.sqrt(8 / 3)
        testing.assert_allclose(a.features, [[-2 / std, 0.0], [0.0, 0.0]])
        testing.assert_allclose(b.features, [[2 / std, 0.0]])

    def test_needs_fitted_statistics(self):
        queries= parse_ranking_file(SAMPLE_RANKING)
        with self.assertRaises(UninitializedStatisticsError):
            apply_normalization(queries, FeatureStats())
        with self.assertRaises(ShapeError):
            apply_normalization(queries, FeatureStats(np.zeros(3), np.ones(3)))

    def test_sidecar(self):
        stats= fit_feature_stats(parse_ranking_file(SAMPLE_RANKING))
        path= pjoin(outdir, 'stats.txt')
        write_feature_stats(path, stats)

        loaded= read_feature_stats(path)
        testing.assert_array_equal(loaded.mean, stats.mean)
        testing.assert_array_equal(loaded.std, stats.std)

        with self.assertRaises(ValueError):
            read_feature_stats(SAMPLE_RANKING)


class TestBatches(unittest.TestCase):

    def test_padding(self):
        queries= parse_ranking_file(SAMPLE_RANKING)
        queries[1]= truncate_lists([queries[1]], 2)[0]
        batch= pad_queries(queries)

        self.assertEqual(batch.features.shape, (3, 4, 5))
        testing.assert_array_equal(batch.mask.sum(axis=1), [4, 2, 4])
        testing.assert_array_equal(batch.features[1, 2:], 0)
        testing.assert_array_equal(batch.labels[1], [0, 3, 0, 0])

        with self.assertRaises(ShapeError):
            pad_queries([queries[0], RankedQuery('x', [1], np.zeros((1, 2)))])

    def test_sizes_and_shuffle(self):
        queries= parse_ranking_file(SAMPLE_RANKING)
        batches= make_batches(queries, 2)
        self.assertEqual([len(b) for b in batches], [2, 1])
        self.assertEqual(batches[0].qids, ['10', '20'])

        for seed in range(5):
            shuffled= make_batches(queries, 2, seed=seed, shuffle=True)
            self.assertEqual(sorted(q for b in shuffled for q in b.qids), ['10', '20', '30'])
            self.assertEqual([b.qids for b in shuffled],
                             [b.qids for b in make_batches(queries, 2, seed=seed, shuffle=True)])

        self.assertEqual(make_batches(queries, 2, dtype='float32')[0].features.dtype, np.float32)
        with self.assertRaises(ValueError):
            make_batches(queries, 0)


if __name__ == '__main__':
    unittest.main()
