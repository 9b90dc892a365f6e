"""Corpus ingestion, deduplication, splitting, tokenization, and length statistics.

The corpus file format is JSON lines: one object per line with string fields
"code" and "comment" (and, once split, a "split" field in {train, valid, test}).
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

SPLIT_LABELS = ("train", "valid", "test")

# Characters peeled off the edges of whitespace-separated pieces. Bash-significant
# characters (- * $ / ~ | > < & = + % @ #) are deliberately absent so flags,
# globs, and paths survive as single tokens.
_LEAD_PUNCT = set("\"'`([{,")
_TRAIL_PUNCT = set("\"'`)]},;.!?:")


class CorpusError(ValueError):
    """Unreadable, malformed, or empty corpus data."""


@dataclass(frozen=True)
class Sample:
    """One <code, comment> pair with a corpus-stable integer id."""

    id: int
    code: str
    comment: str


@dataclass
class Corpus:
    """Ordered samples plus an optional per-sample split label."""

    samples: list[Sample]
    split: list[str] | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, label: str) -> list[Sample]:
        if self.split is None:
            raise CorpusError("corpus has no split labels; call split_corpus first")
        if label not in SPLIT_LABELS:
            raise CorpusError(f"unknown split label {label!r}")
        return [s for s, lab in zip(self.samples, self.split) if lab == label]

    def by_id(self) -> dict[int, Sample]:
        return {s.id: s for s in self.samples}


@dataclass(frozen=True)
class TokenSequence:
    """Vocabulary ids with an explicit non-PAD length; PAD only as a suffix."""

    ids: tuple[int, ...]
    length: int

    def __post_init__(self):
        if any(i == PAD_ID for i in self.ids[: self.length]):
            raise ValueError("PAD inside the non-PAD prefix")
        if any(i != PAD_ID for i in self.ids[self.length :]):
            raise ValueError("non-PAD token in the PAD suffix")

    def pad_to(self, n: int) -> "TokenSequence":
        if n < self.length:
            raise ValueError(f"cannot pad length {self.length} down to {n}")
        return TokenSequence(self.ids[: self.length] + (PAD_ID,) * (n - self.length), self.length)

    def content(self) -> tuple[int, ...]:
        """Ids without PAD/BOS/EOS."""
        return tuple(i for i in self.ids[: self.length] if i not in (PAD_ID, BOS_ID, EOS_ID))


class Vocabulary:
    """Token-to-id map with reserved specials PAD=0, BOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            tokens = list(SPECIAL_TOKENS) + [t for t in tokens if t not in SPECIAL_TOKENS]
        self.id_to_token: list[str] = list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode_id(self, idx: int) -> str:
        return self.id_to_token[idx]

    def sha256(self) -> str:
        h = hashlib.sha256()
        for t in self.id_to_token:
            h.update(t.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"tokens": self.id_to_token}, ensure_ascii=False), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["tokens"])


@dataclass(frozen=True)
class LengthStats:
    """Token-count statistics; cdfN is the fraction of sequences shorter than N."""

    average: float
    mode: int
    median: float
    cdf16: float
    cdf32: float
    cdf48: float

    def to_dict(self) -> dict:
        return {
            "average": self.average,
            "mode": self.mode,
            "median": self.median,
            "cdf16": self.cdf16,
            "cdf32": self.cdf32,
            "cdf48": self.cdf48,
        }


def surface_tokens(text: str) -> list[str]:
    """Split on whitespace, then peel leading/trailing punctuation into own tokens.

    A piece consisting entirely of punctuation (e.g. ".") is kept whole.
    """
    tokens: list[str] = []
    for piece in text.split():
        lead: list[str] = []
        trail: list[str] = []
        while len(piece) > 1 and piece[0] in _LEAD_PUNCT:
            lead.append(piece[0])
            piece = piece[1:]
        while len(piece) > 1 and piece[-1] in _TRAIL_PUNCT:
            trail.append(piece[-1])
            piece = piece[:-1]
        tokens.extend(lead)
        tokens.append(piece)
        tokens.extend(reversed(trail))
    return tokens


def _normalize(text: str) -> str:
    return " ".join(text.split())


def load_corpus(path: str | Path) -> Corpus:
    """Read a JSON-lines corpus, dropping exact (code, comment) duplicates.

    First occurrences win and define the id order. Raises CorpusError with the
    offending line number for malformed records.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    samples: list[Sample] = []
    split: list[str] = []
    seen: set[tuple[str, str]] = set()
    has_split = False
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            code = record.get("code")
            comment = record.get("comment")
            if not isinstance(code, str) or not code.strip():
                raise CorpusError(f"line {lineno}: missing or empty 'code' field")
            if not isinstance(comment, str) or not comment.strip():
                raise CorpusError(f"line {lineno}: missing or empty 'comment' field")
            key = (_normalize(code), _normalize(comment))
            if key in seen:
                continue
            seen.add(key)
            label = record.get("split")
            if label is not None:
                if label not in SPLIT_LABELS:
                    raise CorpusError(f"line {lineno}: unknown split label {label!r}")
                has_split = True
            samples.append(Sample(id=len(samples), code=code.strip(), comment=comment.strip()))
            split.append(label if label is not None else "")
    if not samples:
        raise CorpusError(f"no samples in {path}")
    if has_split and any(lab == "" for lab in split):
        raise CorpusError("some records carry a 'split' field and some do not")
    return Corpus(samples=samples, split=split if has_split else None)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus back out as JSON lines, including split labels if set."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, sample in enumerate(corpus.samples):
            record: dict = {"code": sample.code, "comment": sample.comment}
            if corpus.split is not None:
                record["split"] = corpus.split[i]
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def split_counts(n: int) -> tuple[int, int, int]:
    """train = floor(0.8N), valid = floor(0.1N), test = remainder."""
    n_train = int(n * 8 // 10)
    n_valid = int(n // 10)
    return n_train, n_valid, n - n_train - n_valid


def split_corpus(corpus: Corpus, seed: int) -> Corpus:
    """Assign train/valid/test labels by a seeded random permutation."""
    n = len(corpus.samples)
    if n < 3:
        raise CorpusError(f"corpus of {n} samples is too small to split three ways")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    n_train, n_valid, _ = split_counts(n)
    labels = [""] * n
    for rank, idx in enumerate(order):
        if rank < n_train:
            labels[idx] = "train"
        elif rank < n_train + n_valid:
            labels[idx] = "valid"
        else:
            labels[idx] = "test"
    return Corpus(samples=list(corpus.samples), split=labels)


def build_vocabulary(corpus: Corpus, min_freq: int = 1) -> Vocabulary:
    """Build the shared code+comment vocabulary from the training split only."""
    counts: Counter[str] = Counter()
    for sample in corpus.subset("train"):
        counts.update(surface_tokens(sample.code))
        counts.update(surface_tokens(sample.comment))
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(list(SPECIAL_TOKENS) + kept)


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Map text to [BOS] ids... [EOS], truncating to max_len with EOS retained."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2 to hold BOS and EOS")
    ids = [BOS_ID] + [vocab.encode_token(t) for t in surface_tokens(text)] + [EOS_ID]
    if len(ids) > max_len:
        ids = ids[: max_len - 1] + [EOS_ID]
    return TokenSequence(tuple(ids), len(ids))


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> list[str]:
    """Ids back to surface tokens, dropping PAD/BOS/EOS."""
    return [vocab.decode_id(i) for i in ids if i not in (PAD_ID, BOS_ID, EOS_ID)]


def _length_stats(counts: Sequence[int]) -> LengthStats:
    if not counts:
        raise CorpusError("cannot compute statistics of an empty corpus")
    n = len(counts)
    freq = Counter(counts)
    top = max(freq.values())
    mode = min(v for v, c in freq.items() if c == top)
    ordered = sorted(counts)
    mid = n // 2
    median = float(ordered[mid]) if n % 2 else (ordered[mid - 1] + ordered[mid]) / 2.0
    return LengthStats(
        average=sum(counts) / n,
        mode=mode,
        median=median,
        cdf16=sum(1 for c in counts if c < 16) / n,
        cdf32=sum(1 for c in counts if c < 32) / n,
        cdf48=sum(1 for c in counts if c < 48) / n,
    )


def compute_stats(corpus: Corpus) -> tuple[LengthStats, LengthStats]:
    """Surface-token length statistics for the code side and the comment side."""
    code_counts = [len(surface_tokens(s.code)) for s in corpus.samples]
    comment_counts = [len(surface_tokens(s.comment)) for s in corpus.samples]
    return _length_stats(code_counts), _length_stats(comment_counts)
