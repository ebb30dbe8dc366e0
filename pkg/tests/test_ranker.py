import math

import numpy as np
import pytest

from currank import towers
from currank.curriculum import TrainingBatch
from currank.ranker import (
    RankerParams,
    init_ranker,
    loss_and_grad,
    rank_score,
    rank_slate,
)
from currank.sessions import Document, SearchContext
from currank.towers import Vocab, init_params

from oracles import central_difference_grad, max_relative_error


def make_context(tokens):
    return SearchContext(
        session_id="s", position=1, context_tokens=tuple(tokens),
        positive_doc_id="p", negative_pool=("n",),
    )


def zero_ranker(vocab_size, d_emb=4, hidden=3, tau=1.0):
    params = init_ranker(vocab_size, d_emb, hidden, np.random.default_rng(0), tau=tau)
    for arr in towers.param_arrays(params.encoder):
        arr[...] = 0.0
    return params


@pytest.fixture
def small_setup(rng):
    vocab = Vocab([f"t{i}" for i in range(8)])
    documents = {f"d{j}": Document(f"d{j}", (f"t{j % 8}",)) for j in range(10)}
    params = init_ranker(len(vocab), 4, 4, rng)
    return vocab, documents, params


class TestRankScore:
    def test_zero_params(self):
        vocab = Vocab(["a"])
        params = zero_ranker(len(vocab))
        assert rank_score(params, vocab, ["a"], ["a"]) == 0.0

    def test_temperature_scales_scores_not_order(self, small_setup):
        vocab, documents, params = small_setup
        ctx = make_context(["t0", "t1"])
        base = [rank_score(params, vocab, ctx.context_tokens, documents[d].title_tokens)
                for d in sorted(documents)]
        hot = RankerParams(encoder=params.encoder, tau=3.0)
        scaled = [rank_score(hot, vocab, ctx.context_tokens, documents[d].title_tokens)
                  for d in sorted(documents)]
        assert np.allclose(np.array(scaled) * 3.0, base, atol=1e-12)
        assert np.argsort(base).tolist() == np.argsort(scaled).tolist()

    def test_hand_computed_value(self):
        vocab = Vocab(["a", "b"])
        params = zero_ranker(len(vocab), d_emb=2, hidden=2, tau=2.0)
        ia, ib = vocab.encode(["a", "b"])
        params.encoder.emb[ia] = [1.0, 0.0]
        params.encoder.emb[ib] = [0.0, 1.0]
        for t in (params.encoder.ctx_tower, params.encoder.doc_tower):
            t.w1[...] = np.eye(2)
            t.w2[...] = np.eye(2)
        c = np.tanh([1.0, 0.0])
        d = np.tanh([0.0, 1.0])
        expected = float(c @ d) / 2.0
        assert rank_score(params, vocab, ["a"], ["b"]) == pytest.approx(
            expected, abs=1e-12
        )

    def test_tau_must_be_positive(self):
        vocab = Vocab(["a"])
        with pytest.raises(ValueError):
            RankerParams(encoder=init_params(len(vocab), 2, 2,
                                             np.random.default_rng(0)), tau=0.0)


class TestLossAndGrad:
    def _batch(self, n_items, m, documents):
        items = []
        doc_ids = sorted(documents)
        for i in range(n_items):
            pos = doc_ids[i % len(doc_ids)]
            negs = tuple(
                d for d in doc_ids if d != pos
            )[:m]
            items.append((make_context([f"t{i % 8}", f"t{(i + 3) % 8}"]), pos, negs))
        return TrainingBatch(items=items)

    def test_uniform_scores_loss_is_ln_m_plus_1(self, small_setup):
        vocab, documents, _ = small_setup
        params = zero_ranker(len(vocab))
        m = 4
        batch = self._batch(3, m, documents)
        report = loss_and_grad(params, vocab, batch, documents)
        assert report.loss == pytest.approx(math.log(m + 1), abs=1e-12)

    def test_saturated_positive_loss_near_zero(self):
        # identity towers: context "a" aligns with doc "a" and is orthogonal
        # to doc "b"; a tiny temperature saturates the softmax
        vocab = Vocab(["a", "b"])
        params = zero_ranker(len(vocab), d_emb=2, hidden=2, tau=1e-3)
        ia, ib = vocab.encode(["a", "b"])
        params.encoder.emb[ia] = [5.0, 0.0]
        params.encoder.emb[ib] = [0.0, 5.0]
        for t in (params.encoder.ctx_tower, params.encoder.doc_tower):
            t.w1[...] = np.eye(2)
            t.w2[...] = np.eye(2)
        docs = {"pos": Document("pos", ("a",)), "neg": Document("neg", ("b",))}
        ctx = make_context(["a"])
        batch = TrainingBatch(items=[(ctx, "pos", ("neg", "neg"))])
        report = loss_and_grad(params, vocab, batch, docs)
        assert np.isfinite(report.loss)
        assert report.loss < 1e-12

    def test_translation_invariance_via_shared_shift(self, small_setup):
        # adding a constant to every doc-tower output bias shifts all slate
        # scores of an item equally and must not change the loss
        vocab, documents, params = small_setup
        batch = self._batch(3, 4, documents)
        base = loss_and_grad(params, vocab, batch, documents).loss
        # shifting dot products directly: emulate by adding c to scores via
        # a doc-tower bias change has no such guarantee, so check the
        # softmax shift invariance on the math level instead
        scores = np.random.default_rng(0).normal(size=(3, 5))
        def ce(s):
            sh = s - s.max(axis=1, keepdims=True)
            p = np.exp(sh) / np.exp(sh).sum(axis=1, keepdims=True)
            return float(-np.mean(np.log(p[:, 0])))
        assert ce(scores) == pytest.approx(ce(scores + 7.3), abs=1e-9)
        assert np.isfinite(base)

    def test_gradients_match_finite_differences(self, small_setup):
        vocab, documents, _ = small_setup
        rng = np.random.default_rng(77)
        params = init_ranker(len(vocab), 4, 4, rng, tau=1.3)
        batch = self._batch(3, 4, documents)
        report = loss_and_grad(params, vocab, batch, documents)

        def f(vec):
            probe = init_ranker(len(vocab), 4, 4, np.random.default_rng(0), tau=1.3)
            towers.unpack_into(vec, probe.encoder)
            return loss_and_grad(probe, vocab, batch, documents).loss

        numeric = central_difference_grad(f, towers.pack(params.encoder))
        assert max_relative_error(towers.pack(report.grads), numeric) < 1e-4

    def test_tau_gradient_matches_finite_differences(self, small_setup):
        vocab, documents, _ = small_setup
        params = init_ranker(len(vocab), 4, 4, np.random.default_rng(3), tau=0.8)
        batch = self._batch(3, 4, documents)
        report = loss_and_grad(params, vocab, batch, documents)
        eps = 1e-6
        up = loss_and_grad(
            RankerParams(params.encoder, tau=0.8 + eps), vocab, batch, documents
        ).loss
        down = loss_and_grad(
            RankerParams(params.encoder, tau=0.8 - eps), vocab, batch, documents
        ).loss
        assert report.grad_tau == pytest.approx((up - down) / (2 * eps), rel=1e-4)

    def test_positive_rank_reported(self, small_setup):
        vocab, documents, params = small_setup
        batch = self._batch(3, 4, documents)
        report = loss_and_grad(params, vocab, batch, documents)
        assert len(report.positive_ranks) == 3
        assert all(1 <= r <= 5 for r in report.positive_ranks)

    def test_mismatched_negative_counts_rejected(self, small_setup):
        vocab, documents, params = small_setup
        items = [
            (make_context(["t0"]), "d0", ("d1", "d2")),
            (make_context(["t1"]), "d1", ("d2",)),
        ]
        with pytest.raises(ValueError):
            loss_and_grad(params, vocab, TrainingBatch(items=items), documents)


class TestRankSlate:
    def test_single_candidate(self, small_setup):
        vocab, documents, params = small_setup
        ctx = make_context(["t0"])
        out = rank_slate(params, vocab, ctx, ["d3"], documents)
        assert out == [("d3", pytest.approx(out[0][1]))]

    def test_permutation_invariant_output(self, small_setup):
        vocab, documents, params = small_setup
        ctx = make_context(["t0", "t1"])
        ids = sorted(documents)
        a = rank_slate(params, vocab, ctx, ids, documents)
        b = rank_slate(params, vocab, ctx, ids[::-1], documents)
        assert a == b

    def test_zero_params_orders_by_doc_id(self, small_setup):
        vocab, documents, _ = small_setup
        params = zero_ranker(len(vocab))
        ctx = make_context(["t0"])
        ids = ["d3", "d1", "d2"]
        out = rank_slate(params, vocab, ctx, ids, documents)
        assert [d for d, _ in out] == ["d1", "d2", "d3"]
        assert all(s == 0.0 for _, s in out)

    def test_scores_sorted_descending(self, small_setup):
        vocab, documents, params = small_setup
        ctx = make_context(["t0", "t4"])
        out = rank_slate(params, vocab, ctx, sorted(documents), documents)
        scores = [s for _, s in out]
        assert scores == sorted(scores, reverse=True)
