"""Versioned binary checkpoint files.

Layout: magic, a length-prefixed JSON header (kind tag, dims, vocab,
array manifest, arbitrary metadata), then raw little-endian float64
array bytes in manifest order. The byte stream is fully deterministic,
so identical parameters always produce identical file digests.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .towers import DualEncoderParams, Tower, Vocab

MAGIC = b"CURRANK1"
FORMAT_VERSION = 1

_ARRAY_NAMES = [
    "emb",
    "ctx.w1", "ctx.b1", "ctx.w2", "ctx.b2",
    "doc.w1", "doc.b1", "doc.w2", "doc.b2",
]


def _collect(params: DualEncoderParams) -> dict[str, np.ndarray]:
    return {
        "emb": params.emb,
        "ctx.w1": params.ctx_tower.w1, "ctx.b1": params.ctx_tower.b1,
        "ctx.w2": params.ctx_tower.w2, "ctx.b2": params.ctx_tower.b2,
        "doc.w1": params.doc_tower.w1, "doc.b1": params.doc_tower.b1,
        "doc.w2": params.doc_tower.w2, "doc.b2": params.doc_tower.b2,
    }


def save_checkpoint(
    path: str | Path,
    kind: str,
    params: DualEncoderParams,
    vocab: Vocab,
    extra_arrays: dict[str, np.ndarray] | None = None,
    meta: dict | None = None,
) -> None:
    arrays = dict(_collect(params))
    for name, arr in (extra_arrays or {}).items():
        if name in arrays:
            raise ValueError(f"reserved array name {name!r}")
        arrays[name] = arr
    order = _ARRAY_NAMES + sorted(set(arrays) - set(_ARRAY_NAMES))
    header = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "vocab": vocab.tokens,
        "arrays": [[name, list(arrays[name].shape)] for name in order],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fp:
        fp.write(MAGIC)
        fp.write(struct.pack("<I", len(blob)))
        fp.write(blob)
        for name in order:
            fp.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_checkpoint(
    path: str | Path, expect_kind: str | None = None
) -> tuple[DualEncoderParams, Vocab, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fp:
        if fp.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fp.read(4))
        header = json.loads(fp.read(hlen))
        if header["version"] != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {header['version']}")
        if expect_kind is not None and header["kind"] != expect_kind:
            raise ValueError(
                f"{path}: checkpoint kind {header['kind']!r}, expected {expect_kind!r}"
            )
        arrays: dict[str, np.ndarray] = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fp.read(count * 8)
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    params = DualEncoderParams(
        emb=arrays.pop("emb"),
        ctx_tower=Tower(
            arrays.pop("ctx.w1"), arrays.pop("ctx.b1"),
            arrays.pop("ctx.w2"), arrays.pop("ctx.b2"),
        ),
        doc_tower=Tower(
            arrays.pop("doc.w1"), arrays.pop("doc.b1"),
            arrays.pop("doc.w2"), arrays.pop("doc.b2"),
        ),
    )
    vocab = Vocab.__new__(Vocab)
    vocab.tokens = list(header["vocab"])
    vocab.index = {t: i for i, t in enumerate(vocab.tokens)}
    return params, vocab, arrays, header["meta"]


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
