"""Tokenized classification corpora: JSON-lines loading, pre-trained
embedding ingestion, and cross-validation folds.

Corpora arrive pre-tokenized as integer index sequences; index 0 is
reserved for padding.  A dataset file may carry a sidecar manifest
(``<file>.manifest.json``) declaring vocab_size / num_classes /
max_length; otherwise they are inferred from the records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataFormatError

PAD_INDEX = 0


@dataclass(frozen=True)
class Document:
    tokens: tuple[int, ...]
    label: int


@dataclass(frozen=True)
class Dataset:
    documents: tuple[Document, ...]
    num_classes: int
    max_length: int
    vocab_size: int
    split: str | None = None

    def __len__(self) -> int:
        return len(self.documents)

    def subset(self, indices: Sequence[int], split: str | None = None) -> "Dataset":
        docs = tuple(self.documents[i] for i in indices)
        return replace(self, documents=docs, split=split)


@dataclass(frozen=True)
class Fold:
    """One cross-validation fold: the 10% validation carve-out is split
    off the train part explicitly."""

    train: Dataset
    validation: Dataset
    test: Dataset


@dataclass(frozen=True)
class EmbeddingMatrix:
    vectors: np.ndarray  # [vocab_size, dim]
    dim: int


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def load_dataset(path: str | Path, max_length: int | None = None) -> Dataset:
    """Read a JSON-lines corpus: one ``{"tokens": [...], "label": n}``
    object per line.

    Declared sizes come from the sidecar manifest when present; otherwise
    vocab_size/num_classes/max_length are inferred from the records
    (``max_length`` can also be overridden by argument).
    """
    path = Path(path)
    declared: dict = {}
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        try:
            declared = json.loads(sidecar.read_text())
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{sidecar}: invalid manifest JSON ({exc})") from None

    documents: list[Document] = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read dataset {path}: {exc}") from None

    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            tokens = record["tokens"]
            label = record["label"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataFormatError(f"{path}:{lineno}: malformed record ({exc})") from None
        if not isinstance(tokens, list) or not all(
            isinstance(t, int) and t >= 0 for t in tokens
        ):
            raise DataFormatError(f"{path}:{lineno}: tokens must be non-negative integers")
        if not isinstance(label, int) or label < 0:
            raise DataFormatError(f"{path}:{lineno}: label must be a non-negative integer")
        documents.append(Document(tuple(tokens), label))

    if not documents:
        raise DataFormatError(f"{path}: dataset has no documents")

    vocab_size = declared.get("vocab_size", max(max(d.tokens, default=0) for d in documents) + 1)
    num_classes = declared.get("num_classes", max(d.label for d in documents) + 1)
    num_classes = max(num_classes, 2)
    if max_length is None:
        max_length = declared.get("max_length", max(len(d.tokens) for d in documents))

    for lineno, doc in enumerate(documents, start=1):
        bad = [t for t in doc.tokens if t >= vocab_size]
        if bad:
            raise DataFormatError(
                f"{path}: document {lineno}: token {bad[0]} outside vocabulary of size {vocab_size}"
            )
        if doc.label >= num_classes:
            raise DataFormatError(
                f"{path}: document {lineno}: label {doc.label} >= num_classes {num_classes}"
            )
        if len(doc.tokens) > max_length:
            raise DataFormatError(
                f"{path}: document {lineno}: length {len(doc.tokens)} exceeds max_length {max_length}"
            )

    return Dataset(
        documents=tuple(documents),
        num_classes=int(num_classes),
        max_length=int(max_length),
        vocab_size=int(vocab_size),
        split=declared.get("split"),
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write JSON-lines plus the sidecar manifest; inverse of load_dataset."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for doc in dataset.documents:
            fh.write(json.dumps({"tokens": list(doc.tokens), "label": doc.label}) + "\n")
    manifest = {
        "vocab_size": dataset.vocab_size,
        "num_classes": dataset.num_classes,
        "max_length": dataset.max_length,
    }
    if dataset.split is not None:
        manifest["split"] = dataset.split
    _sidecar_path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_embeddings(
    path: str | Path,
    vocab: Mapping[str, int],
    seed: int = 0,
    unknown_range: float = 0.25,
) -> EmbeddingMatrix:
    """Read plain-text embeddings ("token v1 ... vD" per line) for a vocab.

    Vocabulary words absent from the file get seeded uniform rows in
    [-unknown_range, +unknown_range]; the padding row (index 0) is forced
    to zeros.  Deterministic for a fixed seed.
    """
    path = Path(path)
    vocab_size = max(vocab.values()) + 1 if vocab else 1
    dim: int | None = None

    rows: dict[int, np.ndarray] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise DataFormatError(f"{path}:{lineno}: no vector values")
            elif len(values) != dim:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}"
                )
            if token not in vocab:
                continue
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: unreadable decimal ({exc})") from None
            rows[vocab[token]] = vec

    if dim is None:
        raise DataFormatError(f"{path}: embedding file is empty")

    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-unknown_range, unknown_range, size=(vocab_size, dim))
    for index, vec in rows.items():
        matrix[index] = vec
    matrix[PAD_INDEX] = 0.0
    if not np.isfinite(matrix).all():
        raise DataFormatError(f"{path}: non-finite embedding values")
    return EmbeddingMatrix(vectors=matrix, dim=dim)


def make_folds(dataset: Dataset, k: int, seed: int = 0) -> list[Fold]:
    """Split into k disjoint test folds with a seeded 10% validation
    carve-out inside each train part.

    Fold membership comes from one seeded permutation dealt round-robin,
    so fold sizes differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    n = len(dataset.documents)
    if k > n:
        raise ValueError(f"k={k} larger than document count {n}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds: list[Fold] = []
    for j in range(k):
        test_idx = sorted(int(i) for i in order[j::k])
        test_set = set(test_idx)
        train_idx = [i for i in range(n) if i not in test_set]
        val_rng = np.random.default_rng([seed, j])
        n_val = max(1, round(0.1 * len(train_idx)))
        val_pick = set(
            int(train_idx[i]) for i in val_rng.choice(len(train_idx), size=n_val, replace=False)
        )
        folds.append(
            Fold(
                train=dataset.subset([i for i in train_idx if i not in val_pick], "train"),
                validation=dataset.subset(sorted(val_pick), "validation"),
                test=dataset.subset(test_idx, "test"),
            )
        )
    return folds
