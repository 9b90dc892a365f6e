"""Exemplar retrieval: exact Euclidean top-k over semantic vectors followed by
token-level edit-distance re-ranking, plus the reverse and nngen variants.

All ranking is deterministic: ties break toward the smaller sample id.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

from .metrics import sentence_bleu

RETRIEVAL_MODES = ("standard", "reverse", "nngen")

_INDEX_MAGIC = b"BXI1"


class RetrievalError(ValueError):
    """Empty repositories, dimension mismatches, or bad queries."""


@dataclass(frozen=True)
class RetrievalResult:
    """Chosen exemplar with its selection evidence."""

    sample_id: int
    semantic_distance: float
    lexical_sim: float


class CodeIndex:
    """Immutable exact-search index over the repository's semantic vectors."""

    def __init__(self, vectors: np.ndarray, sample_ids: Sequence[int]):
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise RetrievalError("index requires a non-empty 2-D vector array")
        if len(sample_ids) != vectors.shape[0]:
            raise RetrievalError("sample_ids and vectors differ in length")
        if len(set(sample_ids)) != len(sample_ids):
            raise RetrievalError("duplicate sample ids in index")
        self.vectors = vectors
        self.sample_ids = np.asarray(sample_ids, dtype=np.int64)
        self.dim = vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def subset(self, keep_ids: Sequence[int]) -> "CodeIndex":
        """New index restricted to the given sample ids."""
        keep = set(int(i) for i in keep_ids)
        mask = np.array([int(i) in keep for i in self.sample_ids])
        if not mask.any():
            raise RetrievalError("subset removes every index entry")
        return CodeIndex(self.vectors[mask], [int(i) for i in self.sample_ids[mask]])

    def save(self, path: str | Path) -> None:
        """Binary layout: magic, header JSON (dim, n), float32 LE vectors, int64 LE ids."""
        header = json.dumps({"format_version": 1, "dim": int(self.dim), "n": len(self)}).encode()
        with Path(path).open("wb") as fh:
            fh.write(_INDEX_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.vectors, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(self.sample_ids, dtype="<i8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "CodeIndex":
        raw = Path(path).read_bytes()
        if raw[:4] != _INDEX_MAGIC:
            raise RetrievalError(f"not an index file: {path}")
        (header_len,) = struct.unpack("<I", raw[4:8])
        header = json.loads(raw[8 : 8 + header_len])
        dim, n = header["dim"], header["n"]
        offset = 8 + header_len
        vectors = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=offset).reshape(n, dim)
        ids = np.frombuffer(raw, dtype="<i8", count=n, offset=offset + n * dim * 4)
        return cls(vectors.copy(), [int(i) for i in ids])


def build_index(repository: Sequence[tuple[int, np.ndarray]]) -> CodeIndex:
    """Index a list of (sample_id, vector) pairs; all vectors must share a dimension."""
    if not repository:
        raise RetrievalError("cannot index an empty repository")
    ids = [int(i) for i, _ in repository]
    vecs = [np.asarray(v).reshape(-1) for _, v in repository]
    dims = {v.shape[0] for v in vecs}
    if len(dims) != 1:
        raise RetrievalError(f"mixed vector dimensions: {sorted(dims)}")
    return CodeIndex(np.stack(vecs), ids)


def _distances(index: CodeIndex, query: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=index.vectors.dtype).reshape(-1)
    if query.shape[0] != index.dim:
        raise RetrievalError(f"query dimension {query.shape[0]} != index dimension {index.dim}")
    diff = index.vectors - query
    return np.sqrt((diff * diff).sum(axis=1))


def semantic_topk(
    index: CodeIndex,
    query: np.ndarray,
    k: int,
    exclude_id: int | None = None,
) -> list[tuple[int, float]]:
    """k smallest Euclidean distances as (sample_id, distance), ascending."""
    if k < 1:
        raise RetrievalError("k must be at least 1")
    dists = _distances(index, query)
    entries = [
        (float(d), int(i))
        for d, i in zip(dists, index.sample_ids)
        if exclude_id is None or int(i) != exclude_id
    ]
    if not entries:
        raise RetrievalError("index is empty after exclusion")
    entries.sort()
    return [(i, d) for d, i in entries[:k]]


def token_edit_distance(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Token-level Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[len(b)]


def lexical_similarity(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """1 - editdistance(a, b) / max(|a|, |b|), in [0, 1]."""
    if not a or not b:
        raise RetrievalError("lexical similarity of an empty token sequence")
    return 1.0 - token_edit_distance(a, b) / max(len(a), len(b))


def _cosine(index: CodeIndex, query: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=index.vectors.dtype).reshape(-1)
    if query.shape[0] != index.dim:
        raise RetrievalError(f"query dimension {query.shape[0]} != index dimension {index.dim}")
    norms = np.linalg.norm(index.vectors, axis=1) * max(float(np.linalg.norm(query)), 1e-12)
    norms = np.maximum(norms, 1e-12)
    return (index.vectors @ query) / norms


def retrieve(
    index: CodeIndex,
    codes: Mapping[int, Sequence[Hashable]],
    query_code: Sequence[Hashable],
    query_vec: np.ndarray,
    k: int = 8,
    mode: str = "standard",
    exclude_id: int | None = None,
) -> RetrievalResult:
    """Pick the exemplar for a query.

    standard: Euclidean top-k, then argmax lexical similarity among them.
    reverse:  top-k lexical similarity over the whole repository, then argmin
              Euclidean distance among them.
    nngen:    cosine top-k, then argmax smoothed sentence BLEU-4 between the
              query code tokens and the candidate code tokens.

    codes maps sample_id -> surface token sequence for every indexed sample.
    The reported distances always describe the chosen exemplar (Euclidean
    distance and lexical similarity), whatever the mode used to select it.
    """
    if mode not in RETRIEVAL_MODES:
        raise RetrievalError(f"unknown retrieval mode {mode!r}")
    if k < 1:
        raise RetrievalError("k must be at least 1")
    if mode == "standard":
        candidates = [i for i, _ in semantic_topk(index, query_vec, k, exclude_id)]
        best = max(candidates, key=lambda i: (lexical_similarity(query_code, codes[i]), -i))
    elif mode == "reverse":
        pool = [int(i) for i in index.sample_ids if exclude_id is None or int(i) != exclude_id]
        if not pool:
            raise RetrievalError("index is empty after exclusion")
        pool.sort(key=lambda i: (-lexical_similarity(query_code, codes[i]), i))
        candidates = pool[:k]
        dist_by_id = dict(zip((int(i) for i in index.sample_ids), _distances(index, query_vec)))
        best = min(candidates, key=lambda i: (dist_by_id[i], i))
    else:  # nngen
        sims = _cosine(index, query_vec)
        pool = [
            (float(-s), int(i))
            for s, i in zip(sims, index.sample_ids)
            if exclude_id is None or int(i) != exclude_id
        ]
        if not pool:
            raise RetrievalError("index is empty after exclusion")
        pool.sort()
        candidates = [i for _, i in pool[:k]]
        best = max(
            candidates,
            key=lambda i: (sentence_bleu(query_code, codes[i], n=4, smoothing=True), -i),
        )
    distance = float(_distances(index, query_vec)[list(index.sample_ids).index(best)])
    return RetrievalResult(
        sample_id=best,
        semantic_distance=distance,
        lexical_sim=lexical_similarity(query_code, codes[best]),
    )
