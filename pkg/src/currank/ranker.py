"""Trainable context-aware ranking model.

Same two-tower family as the dense scorer but independently
parameterized, with a temperature on the dot product and a listwise
softmax cross-entropy loss over one positive and m sampled negatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import towers
from .curriculum import TrainingBatch
from .sessions import Document, SearchContext
from .towers import DualEncoderParams, Vocab


@dataclass
class RankerParams:
    encoder: DualEncoderParams
    tau: float = 1.0  # temperature; fixed during training

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass
class LossReport:
    loss: float
    grads: DualEncoderParams  # congruent with encoder parameters
    grad_tau: float
    positive_ranks: list[int]  # 1-based rank of d+ within each item's slate


def init_ranker(
    vocab_size: int,
    d_emb: int,
    hidden: int,
    rng: np.random.Generator,
    tau: float = 1.0,
) -> RankerParams:
    return RankerParams(
        encoder=towers.init_params(vocab_size, d_emb, hidden, rng), tau=tau
    )


def rank_score(
    params: RankerParams,
    vocab: Vocab,
    context_tokens: Sequence[str],
    doc_tokens: Sequence[str],
) -> float:
    c = towers.encode(params.encoder, vocab.encode(context_tokens), "context")
    d = towers.encode(params.encoder, vocab.encode(doc_tokens), "document")
    return float(c @ d) / params.tau


def loss_and_grad(
    params: RankerParams,
    vocab: Vocab,
    batch: TrainingBatch,
    documents: dict[str, Document],
) -> LossReport:
    """Mean listwise cross-entropy over the batch with exact gradients.

    Each item's slate is its positive followed by its m negatives; the
    softmax is computed with max-subtraction for stability.
    """
    if not batch.items:
        raise ValueError("empty batch")
    m = len(batch.items[0][2])
    for _, _, negs in batch.items:
        if len(negs) != m:
            raise ValueError("all batch items must carry the same number of negatives")

    ctx_ids = [vocab.encode(ctx.context_tokens) for ctx, _, _ in batch.items]
    slate_doc_ids = []
    for _, pos_id, negs in batch.items:
        for doc_id in (pos_id, *negs):
            slate_doc_ids.append(vocab.encode(documents[doc_id].title_tokens))

    n = len(batch.items)
    width = m + 1
    c_enc, c_cache = towers.encode_batch(params.encoder, ctx_ids, "context")
    d_enc, d_cache = towers.encode_batch(params.encoder, slate_doc_ids, "document")
    d_enc3 = d_enc.reshape(n, width, -1)
    dots = np.einsum("nd,nwd->nw", c_enc, d_enc3)
    scores = dots / params.tau
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite ranker scores")
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(probs[:, 0])))
    positive_ranks = [
        1 + int(np.count_nonzero(scores[i, 1:] > scores[i, 0]))
        for i in range(n)
    ]

    dscores = probs.copy()
    dscores[:, 0] -= 1.0
    dscores /= n
    ddots = dscores / params.tau
    grad_tau = float(-(dscores * dots).sum() / params.tau**2)
    grads = towers.zero_grads(params.encoder)
    gc = np.einsum("nw,nwd->nd", ddots, d_enc3)
    gd = (ddots[:, :, None] * c_enc[:, None, :]).reshape(n * width, -1)
    towers.backward_batch(params.encoder, c_cache, gc, grads)
    towers.backward_batch(params.encoder, d_cache, gd, grads)
    return LossReport(
        loss=loss, grads=grads, grad_tau=grad_tau, positive_ranks=positive_ranks
    )


def rank_slate(
    params: RankerParams,
    vocab: Vocab,
    context: SearchContext,
    candidate_doc_ids: Sequence[str],
    documents: dict[str, Document],
) -> list[tuple[str, float]]:
    """Rank a candidate slate: score descending, ties by doc id ascending."""
    if not candidate_doc_ids:
        raise ValueError("candidate list must be non-empty")
    c = towers.encode(
        params.encoder, vocab.encode(context.context_tokens), "context"
    )
    doc_ids = [vocab.encode(documents[d].title_tokens) for d in candidate_doc_ids]
    d_enc, _ = towers.encode_batch(params.encoder, doc_ids, "document")
    scores = (d_enc @ c) / params.tau
    order = sorted(
        range(len(candidate_doc_ids)),
        key=lambda i: (-scores[i], candidate_doc_ids[i]),
    )
    return [(candidate_doc_ids[i], float(scores[i])) for i in order]
