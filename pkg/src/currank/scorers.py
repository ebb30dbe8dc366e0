"""Frozen relevance scorers that feed the difficulty functions.

Both scorers expose the same surface: score one (context, document)
pair, or score a context against the whole corpus (needed to rank the
positive document). The corpus ordering is the sorted doc-id order.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np

from . import bm25, towers
from .sessions import Document
from .towers import DualEncoderParams, Vocab


class ScoreSource(Protocol):
    doc_ids: list[str]

    def score(self, context_tokens: Sequence[str], doc_id: str) -> float: ...

    def score_corpus(self, context_tokens: Sequence[str]) -> np.ndarray: ...

    def digest(self) -> str: ...


class Bm25Scorer:
    def __init__(self, index: bm25.LexicalIndex, params: bm25.Bm25Params):
        self.index = index
        self.params = params
        self.doc_ids = index.doc_ids

    def score(self, context_tokens: Sequence[str], doc_id: str) -> float:
        return bm25.score(self.index, self.params, context_tokens, doc_id)

    def score_corpus(self, context_tokens: Sequence[str]) -> np.ndarray:
        return bm25.score_all(self.index, self.params, context_tokens)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"bm25:k1={self.params.k1!r}:b={self.params.b!r}:".encode())
        h.update(self.index.digest().encode())
        return h.hexdigest()


class DenseScorer:
    def __init__(
        self,
        params: DualEncoderParams,
        vocab: Vocab,
        documents: dict[str, Document],
    ):
        self.params = params
        self.vocab = vocab
        self.doc_ids = sorted(documents)
        doc_token_ids = [
            vocab.encode(documents[d].title_tokens) for d in self.doc_ids
        ]
        self._doc_enc, _ = towers.encode_batch(params, doc_token_ids, "document")
        self._doc_pos = {d: i for i, d in enumerate(self.doc_ids)}

    def score(self, context_tokens: Sequence[str], doc_id: str) -> float:
        if doc_id not in self._doc_pos:
            raise KeyError(f"unknown doc_id {doc_id!r}")
        c = towers.encode(
            self.params, self.vocab.encode(context_tokens), "context"
        )
        return float(self._doc_enc[self._doc_pos[doc_id]] @ c)

    def score_corpus(self, context_tokens: Sequence[str]) -> np.ndarray:
        c = towers.encode(
            self.params, self.vocab.encode(context_tokens), "context"
        )
        return self._doc_enc @ c

    def digest(self) -> str:
        h = hashlib.sha256(b"dense:")
        for arr in towers.param_arrays(self.params):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for tok in self.vocab.tokens:
            h.update(tok.encode())
            h.update(b"\x00")
        return h.hexdigest()
