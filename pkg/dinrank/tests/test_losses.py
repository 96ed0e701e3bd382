import numpy as np
from numpy import testing
from pydantic import ValidationError

from dinrank.tests.util import *
from dinrank.layers import AttentionBlockSpec, DenseBlockSpec
from dinrank.losses import LossSpec, approx_ndcg_loss, approx_rank, compute_loss, ndcg_from_ranks, softmax_ce_loss
from dinrank.metrics import ndcg_at_k, rank_positions
from dinrank.numeric import Tape, backward
from dinrank.scorers import ScorerSpec, init_params, score


class TestSoftmax(unittest.TestCase):

    def test_uniform_scores(self):
        for n in (2, 5, 9):
            labels= np.zeros(n)
            labels[n // 2]= 1
            self.assertAlmostEqual(float(softmax_ce_loss(labels, np.full(n, 0.3)).data), np.log(n))

    def test_single_document(self):
        self.assertAlmostEqual(float(softmax_ce_loss([1], [2.5]).data), 0.0)

    def test_direct_formula(self):
        loss= float(softmax_ce_loss([1, 0], [2.0, 0.0]).data)
        self.assertAlmostEqual(loss, -np.log(np.exp(2) / (np.exp(2) + 1)))

    def test_graded_labels_and_padding(self):
        labels= np.array([[2, 1, 0, 0], [0, 1, 0, 0]])
        scores= np.array([[0.5, -1.0, 2.0, 9.0], [1.0, 0.0, -1.0, 0.0]])
        mask= np.array([[True, True, True, False], [True, True, True, False]])

        def list_loss(y, s):
            p= y / y.sum()
            return -np.sum(p * (s - np.log(np.sum(np.exp(s)))))

        expected= (list_loss(labels[0, :3], scores[0, :3]) + list_loss(labels[1, :3], scores[1, :3])) / 2
        self.assertAlmostEqual(float(softmax_ce_loss(labels, scores, mask).data), expected)

    def test_shift_invariance(self):
        labels= np.array([1, 0, 2, 0])
        scores= make_rng(0).uniform(-2, 2, size=4)
        testing.assert_allclose(float(softmax_ce_loss(labels, scores + 7.0).data),
                                float(softmax_ce_loss(labels, scores).data))

    def test_needs_relevant_document(self):
        with self.assertRaises(ValueError):
            softmax_ce_loss([0, 0], [1.0, 2.0])


class TestApproxRank(unittest.TestCase):

    def test_examples(self):
        testing.assert_allclose(approx_rank([0.7, 0.7], eta=3.0).data, [1.5, 1.5])
        testing.assert_allclose(approx_rank([4.2], eta=0.1).data, [1.0])

        ranks= approx_rank([2.0, 1.0], eta=1.0).data
        self.assertAlmostEqual(ranks[0], 1 + 1 / (1 + np.e))
        testing.assert_allclose(approx_rank([2.0, 1.0], eta=50.0).data, [1.0, 2.0], atol=1e-6)

    def test_sum_and_range(self):
        scores, mask= random_lists(1, 4, 7, 1)
        scores= scores[..., 0]
        ranks= approx_rank(scores, mask, eta=0.7).data
        for b in range(4):
            n= mask[b].sum()
            self.assertAlmostEqual(ranks[b][mask[b]].sum(), n * (n + 1) / 2)
            self.assertTrue(((ranks[b][mask[b]] >= 1) & (ranks[b][mask[b]] <= n)).all())

    def test_converges_to_ranks(self):
        scores= make_rng(2).permutation(8) * 0.5
        true_ranks= rank_positions(scores)
        errors= [np.max(np.abs(approx_rank(scores, eta=eta).data - true_ranks)) for eta in (0.1, 1, 10, 50)]
        self.assertTrue(all(a >= b for a, b in zip(errors, errors[1:])))
        self.assertLess(errors[-1], 1e-3)

    def test_eta_positive(self):
        with self.assertRaises(ValueError):
            approx_rank([1.0, 2.0], eta=0.0)
        with self.assertRaises(ValidationError):
            LossSpec(eta=-1)


class TestApproxNdcg(unittest.TestCase):

    def test_single_relevant_document(self):
        self.assertAlmostEqual(float(approx_ndcg_loss([1], [0.2]).data), -1.0)

    def test_exact_ranks_give_ndcg(self):
        for seed in range(20):
            rng= make_rng(seed, 'exact')
            n= int(rng.integers(2, 9))
            labels= rng.integers(0, 4, size=n)
            labels[0]= max(labels[0], 1)
            scores= rng.permutation(n).astype(np.float64)

            gain= float(ndcg_from_ranks(labels, rank_positions(scores).astype(np.float64)).data[0])
            self.assertAlmostEqual(gain, ndcg_at_k(labels, scores, k=n), delta=1e-9)

    def test_bounded_by_one(self):
        labels= random_labels(3, np.ones((5, 6), dtype=bool))
        for eta in (0.1, 1.0, 10.0):
            scores= make_rng(4).uniform(-3, 3, size=(5, 6))
            self.assertGreaterEqual(float(approx_ndcg_loss(labels, scores, eta=eta).data), -1.0 - 1e-12)

    def test_permutation_invariance(self):
        labels= np.array([2, 0, 1, 0, 3])
        scores= make_rng(5).uniform(-2, 2, size=5)
        order= np.array([3, 0, 4, 2, 1])
        for kind in ('softmax', 'approx_ndcg'):
            spec= LossSpec(kind=kind, eta=0.5)
            testing.assert_allclose(float(compute_loss(spec, labels[order], scores[order]).data),
                                    float(compute_loss(spec, labels, scores).data), rtol=1e-12)


class TestLossGradients(unittest.TestCase):
    '''End to end: loss -> attn-DIN scorer -> every parameter, against central differences.'''

    def check(self, loss_spec, seed):

        rng= make_rng(seed, 'instance')
        n, features= int(rng.integers(3, 6)), 3
        spec= ScorerSpec(family='attn_din', n_features=features,
                         dense=DenseBlockSpec(widths=[4], input_batch_norm=False),
                         attention=AttentionBlockSpec(width=4, heads=2, layers=1))
        params= init_params(spec, seed=seed, dtype='float64')
        docs= rng.uniform(-2, 2, size=(n, features))
        labels= rng.integers(0, 3, size=n)
        labels[rng.integers(n)]= 2

        def loss(tape=None):
            return compute_loss(loss_spec, labels, score(spec, params, docs, mode='infer', tape=tape))

        tape= Tape()
        backward(tape, loss(tape), params)

        for name in params:
            numeric= finite_difference(lambda: float(loss().data), params.params[name])
            self.assertLess(relative_error(params.grads[name], numeric), TOLERANCE, (loss_spec.kind, seed, name))

    def test_softmax(self):
        for seed in range(3):
            self.check(LossSpec(kind='softmax'), seed)

    def test_approx_ndcg(self):
        for seed in range(3):
            self.check(LossSpec(kind='approx_ndcg', eta=1.0), seed)


if __name__ == '__main__':
    unittest.main()
