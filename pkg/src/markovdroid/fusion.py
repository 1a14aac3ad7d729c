"""Permission vocabulary and the fused Markov + permission feature vector."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .bundle import AppBundle
from .markov import N_FEATURES, feature_matrix, feature_names

COMBINATORS = ("or", "and")
DEFAULT_THRESHOLD = 0.10


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class PermissionVocabulary:
    permissions: tuple[str, ...]
    threshold: float
    combinator: str
    corpus_hash: str
    benign_freq: dict
    malicious_freq: dict

    def __len__(self) -> int:
        return len(self.permissions)

    def index(self, name: str) -> int:
        return self.permissions.index(name)


def permission_corpus_hash(bundles: Sequence[AppBundle], labels: Sequence[int]) -> str:
    h = hashlib.sha256()
    for b, y in zip(bundles, labels):
        h.update(f"{int(y)}:{','.join(sorted(b.manifest.permissions))}\n".encode())
    return h.hexdigest()[:16]


def build_permission_vocab(bundles: Sequence[AppBundle], labels: Sequence[int],
                           threshold: float = DEFAULT_THRESHOLD, combinator: str = "or") -> PermissionVocabulary:
    """Keep permissions requested by more than ``threshold`` of benign apps or of malicious apps.

    ``combinator="and"`` requires both classes to pass instead. A class with no
    apps contributes frequency 0.
    """
    if not 0.0 < threshold < 1.0:
        raise VocabularyError("threshold must lie strictly between 0 and 1")
    if combinator not in COMBINATORS:
        raise VocabularyError(f"combinator must be one of {COMBINATORS}")
    labels = [int(y) for y in labels]
    if not bundles or len(bundles) != len(labels):
        raise VocabularyError("need a nonempty corpus with one label per app")
    counts = ({}, {})
    totals = [0, 0]
    for b, y in zip(bundles, labels):
        totals[y] += 1
        for perm in b.manifest.permissions:
            counts[y][perm] = counts[y].get(perm, 0) + 1
    names = sorted(set(counts[0]) | set(counts[1]))
    freq = [{n: (counts[c].get(n, 0) / totals[c] if totals[c] else 0.0) for n in names} for c in (0, 1)]
    keep = []
    for n in names:
        hits = (freq[0][n] > threshold, freq[1][n] > threshold)
        if (any(hits) if combinator == "or" else all(hits)):
            keep.append(n)
    return PermissionVocabulary(tuple(keep), threshold, combinator, permission_corpus_hash(bundles, labels),
                                freq[0], freq[1])


def write_vocab(vocab: PermissionVocabulary, path) -> None:
    head = f"# threshold={vocab.threshold!r} combinator={vocab.combinator} corpus={vocab.corpus_hash}"
    Path(path).write_text("\n".join([head, *vocab.permissions]) + "\n", encoding="utf-8")


def read_vocab(path) -> PermissionVocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise VocabularyError(f"{path}: missing header line")
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
    perms = tuple(l.strip() for l in lines[1:] if l.strip())
    return PermissionVocabulary(perms, float(meta["threshold"]), meta.get("combinator", "or"),
                                meta.get("corpus", ""), {}, {})


def extract_permission_features(bundle: AppBundle, vocab: PermissionVocabulary) -> np.ndarray:
    requested = bundle.manifest.permissions
    return np.array([1.0 if p in requested else 0.0 for p in vocab.permissions])


def permission_matrix(bundles: Sequence[AppBundle], vocab: PermissionVocabulary) -> np.ndarray:
    if not bundles:
        return np.zeros((0, len(vocab)))
    return np.vstack([extract_permission_features(b, vocab) for b in bundles])


def merge_features(markov: np.ndarray, perms: np.ndarray, n_perms: int | None = None) -> np.ndarray:
    """Concatenate the Markov block (first) with the permission block. Works row-wise on 2-D input."""
    markov = np.asarray(markov, dtype=np.float64)
    perms = np.asarray(perms, dtype=np.float64)
    if markov.shape[-1] != N_FEATURES:
        raise ValueError(f"Markov block must have {N_FEATURES} columns, got {markov.shape[-1]}")
    if n_perms is not None and perms.shape[-1] != n_perms:
        raise ValueError(f"permission block must have {n_perms} columns, got {perms.shape[-1]}")
    if markov.shape[:-1] != perms.shape[:-1]:
        raise ValueError("Markov and permission blocks disagree on the number of rows")
    return np.concatenate([markov, perms], axis=-1)


def split_features(fused: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    fused = np.asarray(fused)
    return fused[..., :N_FEATURES], fused[..., N_FEATURES:]


def fused_feature_names(vocab: PermissionVocabulary) -> list[str]:
    return feature_names() + list(vocab.permissions)


def fused_matrix(bundles: Sequence[AppBundle], vocab: PermissionVocabulary) -> np.ndarray:
    return merge_features(feature_matrix(bundles), permission_matrix(bundles, vocab), len(vocab))


def jaccard(a: PermissionVocabulary, b: PermissionVocabulary) -> float:
    sa, sb = set(a.permissions), set(b.permissions)
    return len(sa & sb) / len(sa | sb) if sa | sb else 1.0
