"""Per-app Markov chain over families, flattened into the feature vector."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .abstraction import FAMILIES, FAMILY_INDEX, N_FAMILIES, Family, extract_call_sequences
from .bundle import AppBundle

N_FEATURES = N_FAMILIES * N_FAMILIES
CSV_DIGITS = 9


def feature_names() -> list[str]:
    return [f"{src.value}To{dst.value}" for src in FAMILIES for dst in FAMILIES]


def feature_index(src: Family, dst: Family) -> int:
    return FAMILY_INDEX[src] * N_FAMILIES + FAMILY_INDEX[dst]


def build_transition_matrix(sequences: Iterable[Sequence[Family]]) -> np.ndarray:
    """Row-normalized counts of adjacent family pairs.

    Rows of families that never appear as a transition source stay all-zero.
    """
    counts = np.zeros((N_FAMILIES, N_FAMILIES), dtype=np.float64)
    for seq in sequences:
        idx = [FAMILY_INDEX[f] for f in seq]
        for a, b in zip(idx, idx[1:]):
            counts[a, b] += 1.0
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def matrix_to_features(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (N_FAMILIES, N_FAMILIES):
        raise ValueError(f"expected a {N_FAMILIES}x{N_FAMILIES} matrix, got {matrix.shape}")
    return matrix.reshape(-1).copy()


def features_to_matrix(vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (N_FEATURES,):
        raise ValueError(f"expected {N_FEATURES} features, got {vector.shape}")
    return vector.reshape(N_FAMILIES, N_FAMILIES).copy()


def bundle_features(bundle: AppBundle) -> np.ndarray:
    return matrix_to_features(build_transition_matrix(extract_call_sequences(bundle)))


def feature_matrix(bundles: Iterable[AppBundle]) -> np.ndarray:
    rows = [bundle_features(b) for b in bundles]
    if not rows:
        return np.zeros((0, N_FEATURES))
    return np.vstack(rows)


def _fmt(value: float) -> str:
    return format(float(value), f".{CSV_DIGITS}g")


def write_feature_csv(path, app_ids: Sequence[str], labels: Sequence[int], X: np.ndarray,
                      names: Sequence[str] | None = None) -> None:
    names = list(names) if names is not None else feature_names()
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != len(names) or X.shape[0] != len(app_ids):
        raise ValueError("feature matrix does not match ids/header")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["app_id", "label", *names])
        for app_id, label, row in zip(app_ids, labels, X):
            writer.writerow([app_id, int(label), *(_fmt(v) for v in row)])


def read_feature_csv(path) -> tuple[list[str], np.ndarray, np.ndarray, list[str]]:
    """Returns (app_ids, labels, X, feature names)."""
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["app_id", "label"]:
            raise ValueError(f"{path}: header must start with app_id,label")
        ids, labels, rows = [], [], []
        for row in reader:
            ids.append(row[0])
            labels.append(int(row[1]))
            rows.append([float(v) for v in row[2:]])
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 2)
    return ids, np.array(labels, dtype=np.int64), X, header[2:]
