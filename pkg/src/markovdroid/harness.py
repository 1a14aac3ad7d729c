"""k-fold benign-ratio sweeps over models, attacks and feature modes."""

from __future__ import annotations

import logging
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attack as atk
from .bundle import AppBundle
from .corpus import CorpusSpec, app_ids_for, corpus_digest, generate_corpus, read_corpus
from .fusion import DEFAULT_THRESHOLD, build_permission_vocab, merge_features, permission_matrix
from .markov import feature_matrix
from .metrics import EvaluationReport, EvaluationSet, average_reports, write_metrics_csv
from .models import KINDS, fit

log = logging.getLogger(__name__)

CLEAN = "none"
ATTACKS = (CLEAN, *atk.VARIANTS, "permission_perturb")
FEATURE_MODES = ("base", "ext", "perm")
DEFAULT_RATIOS = tuple(round(0.1 * i, 1) for i in range(1, 11))
# attacks whose outcome depends on the (subsampled) training set
TRAIN_DEPENDENT = ("full_statistical", "permission_perturb")


class PlanError(ValueError):
    pass


class CellError(RuntimeError):
    """A module error raised inside one (fold, ratio, model, attack) cell."""

    def __init__(self, cell: str, cause: BaseException):
        super().__init__(f"[{cell}] {type(cause).__name__}: {cause}")
        self.cell = cell


@dataclass(frozen=True)
class ExperimentPlan:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    corpus_path: str | None = None  # read an on-disk corpus instead of generating one
    models: tuple[str, ...] = KINDS
    attacks: tuple[str, ...] = (CLEAN, *atk.VARIANTS)
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    folds: int = 5
    feature_mode: str = "base"
    seed: int = 0
    out_dir: str | None = None
    vocab_threshold: float = DEFAULT_THRESHOLD
    vocab_combinator: str = "or"
    random_elements: int = atk.DEFAULT_RANDOM_ELEMENTS
    workers: int = 1
    attack_reports: bool = True

    def __post_init__(self):
        bad = [m for m in self.models if m not in KINDS]
        if bad or not self.models:
            raise PlanError(f"unknown or missing models {bad}; choose from {KINDS}")
        bad = [a for a in self.attacks if a not in ATTACKS]
        if bad or not self.attacks:
            raise PlanError(f"unknown or missing attacks {bad}; choose from {ATTACKS}")
        if not self.ratios or any(not 0.0 < r <= 1.0 for r in self.ratios):
            raise PlanError("ratios must lie in (0, 1]")
        if self.folds < 2:
            raise PlanError("need at least 2 folds")
        if self.feature_mode not in FEATURE_MODES:
            raise PlanError(f"feature_mode must be one of {FEATURE_MODES}")
        if self.workers < 1:
            raise PlanError("workers must be >= 1")

    def to_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            if f.name == "corpus":
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out.append(f"{f.name} = {'' if value is None else value}")
        out += [f"corpus.{line}" for line in self.corpus.to_lines()]
        return out

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "ExperimentPlan":
        kwargs: dict = {}
        corpus_keys = {k[len("corpus."):]: v for k, v in values.items() if k.startswith("corpus.")}
        if corpus_keys:
            kwargs["corpus"] = CorpusSpec.from_mapping(corpus_keys)
        for key, raw in values.items():
            if key.startswith("corpus."):
                continue
            raw = str(raw).strip()
            if key in ("models", "attacks"):
                kwargs[key] = tuple(v.strip() for v in raw.split(",") if v.strip())
            elif key == "ratios":
                kwargs[key] = tuple(float(v) for v in raw.split(",") if v.strip())
            elif key in ("folds", "seed", "workers", "random_elements"):
                kwargs[key] = int(raw)
            elif key == "vocab_threshold":
                kwargs[key] = float(raw)
            elif key == "attack_reports":
                kwargs[key] = raw.lower() in ("1", "true", "yes")
            elif key in ("corpus_path", "out_dir"):
                kwargs[key] = raw or None
            elif key in ("feature_mode", "vocab_combinator"):
                kwargs[key] = raw
            else:
                raise PlanError(f"unknown plan key {key!r}")
        return cls(**kwargs)


def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PlanError(f"{path}:{n}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_plan(path, **overrides) -> ExperimentPlan:
    plan = ExperimentPlan.from_mapping(read_config(path))
    return replace(plan, **{k: v for k, v in overrides.items() if v is not None})


# --------------------------------------------------------------------------
# folds and subsampling


def cell_seed(*keys: int) -> int:
    """Independent integer seed for a cell of the grid."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def kfold_split(labels: Sequence[int], k: int, seed: int) -> np.ndarray:
    """Stratified fold index per sample: each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if k < 2:
        raise PlanError("k must be >= 2")
    if k > counts.min():
        raise PlanError(f"k={k} exceeds the smallest class count {counts.min()}")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    for c in classes:
        idx = rng.permutation(np.nonzero(labels == c)[0])
        folds[idx] = np.arange(len(idx)) % k
    return folds


def subsample_benign(train_idx: Sequence[int], labels: Sequence[int], ratio: float, seed: int) -> np.ndarray:
    """Keep every malicious sample and the first floor(ratio * n_benign) of a seeded benign permutation.

    For one seed, smaller ratios keep a prefix of what larger ratios keep.
    """
    if not 0.0 < ratio <= 1.0:
        raise PlanError("ratio must lie in (0, 1]")
    train_idx = np.asarray(train_idx)
    labels = np.asarray(labels)
    benign = train_idx[labels[train_idx] == 0]
    malicious = train_idx[labels[train_idx] == 1]
    n_keep = math.floor(round(ratio * len(benign), 9))
    if n_keep == 0:
        raise PlanError(f"ratio {ratio} leaves no benign training samples")
    kept = np.random.default_rng(seed).permutation(benign)[:n_keep]
    return np.sort(np.concatenate([kept, malicious]))


# --------------------------------------------------------------------------
# experiment


@dataclass
class ExperimentResult:
    reports: list[EvaluationReport]  # fold-averaged, one per (model, ratio, attack)
    per_fold: list[tuple[int, EvaluationReport]]
    attack_rows: dict[str, list[list[str]]]  # report file name -> rows


@dataclass
class _Shared:
    plan: ExperimentPlan
    ids: list[str]
    bundles: list[AppBundle]
    labels: np.ndarray
    X: np.ndarray  # base features of the clean corpus
    folds: np.ndarray


_SHARED: _Shared | None = None


def _features(shared: _Shared, bundles: Sequence[AppBundle], vocab, base: np.ndarray | None = None) -> np.ndarray:
    mode = shared.plan.feature_mode
    if mode == "perm":
        return permission_matrix(bundles, vocab)
    X = base if base is not None else feature_matrix(bundles)
    if mode == "base":
        return X
    return merge_features(X, permission_matrix(bundles, vocab), len(vocab))


def _attack_set(shared: _Shared, attack: str, fold: int, train: np.ndarray, test_mal: np.ndarray):
    """Attacked malicious test bundles, their base features, and report rows."""
    plan, bundles, X, y = shared.plan, shared.bundles, shared.X, shared.labels
    a_idx = ATTACKS.index(attack)
    if attack == CLEAN:
        return [bundles[i] for i in test_mal], X[test_mal], []
    if attack == "permission_perturb":
        profile = atk.PermissionProfile.from_corpus([bundles[i] for i in train], y[train])
        out = [atk.permission_perturb(bundles[i], profile, seed=cell_seed(plan.seed, 2, fold, i)) for i in test_mal]
        # manifest-only edit: Markov features are unchanged
        return out, X[test_mal], []
    stats = atk.AttackStatistics(X[train][y[train] == 0], X[train][y[train] == 1], X[test_mal])
    cfg = atk.make_variant_config(attack, stats, seed=cell_seed(plan.seed, 3, fold, a_idx), k=plan.random_elements)
    out, rows = [], []
    for i in test_mal:
        rng = np.random.default_rng(cell_seed(plan.seed, 4, fold, a_idx, i))
        attacked, rmap = atk.structure_break(bundles[i], cfg, rng)
        out.append(attacked)
        rows += atk.report_rows(shared.ids[i], attack, rmap)
    return out, feature_matrix(out), rows


def _run_fold(fold: int) -> tuple[list[tuple[int, EvaluationReport]], dict[str, list[list[str]]]]:
    shared = _SHARED
    plan, y = shared.plan, shared.labels
    test = np.nonzero(shared.folds == fold)[0]
    train_all = np.nonzero(shared.folds != fold)[0]
    test_mal = test[y[test] == 1]
    test_ben = test[y[test] == 0]
    sub_seed = cell_seed(plan.seed, 1, fold)
    results, reports = [], {}
    cache: dict[str, tuple] = {}
    for r_idx, ratio in enumerate(plan.ratios):
        train = subsample_benign(train_all, y, ratio, sub_seed)
        vocab = None
        if plan.feature_mode != "base":
            vocab = build_permission_vocab([shared.bundles[i] for i in train], y[train],
                                           plan.vocab_threshold, plan.vocab_combinator)
        X_train = _features(shared, [shared.bundles[i] for i in train], vocab, shared.X[train])
        X_ben = _features(shared, [shared.bundles[i] for i in test_ben], vocab, shared.X[test_ben])
        test_sets = {}
        for attack in plan.attacks:
            cell = f"fold={fold} ratio={ratio} attack={attack}"
            per_ratio = attack in TRAIN_DEPENDENT
            if per_ratio or attack not in cache:
                try:
                    cache[attack] = _attack_set(shared, attack, fold, train, test_mal)
                except Exception as exc:  # noqa: BLE001 - re-raised with the cell attached
                    raise CellError(cell, exc) from exc
                rows = cache[attack][2]
                if rows and plan.attack_reports:
                    name = f"{attack}_fold{fold}" + (f"_ratio{ratio:g}" if per_ratio else "")
                    reports[name + ".csv"] = rows
            attacked, base, _ = cache[attack]
            test_sets[attack] = _features(shared, attacked, vocab, base)
        for m_idx, kind in enumerate(plan.models):
            cell = f"fold={fold} ratio={ratio} model={kind}"
            try:
                model = fit(kind, X_train, y[train], seed=cell_seed(plan.seed, 5, fold, r_idx, m_idx))
                p_ben = model.predict_proba(X_ben)
                for attack in plan.attacks:
                    p_mal = model.predict_proba(test_sets[attack])
                    mal = EvaluationSet(np.ones(len(p_mal), dtype=np.int64), p_mal)
                    mixed = EvaluationSet(np.concatenate([np.zeros(len(p_ben), dtype=np.int64), mal.y_true]),
                                          np.concatenate([p_ben, p_mal]))
                    results.append((fold, EvaluationReport.from_sets(kind, ratio, attack, mal, mixed)))
            except CellError:
                raise
            except Exception as exc:  # noqa: BLE001
                raise CellError(cell, exc) from exc
        log.debug("fold %d ratio %s done", fold, ratio)
    return results, reports


def _init_worker(shared: _Shared) -> None:
    global _SHARED
    _SHARED = shared


def load_corpus(plan: ExperimentPlan) -> tuple[list[str], list[tuple[AppBundle, int]]]:
    if plan.corpus_path:
        return read_corpus(plan.corpus_path)
    corpus = generate_corpus(plan.corpus)
    return app_ids_for(corpus), corpus


def run_experiment(plan: ExperimentPlan, corpus: Sequence[tuple[AppBundle, int]] | None = None,
                   ids: Sequence[str] | None = None, base_features: np.ndarray | None = None) -> ExperimentResult:
    """Run every (fold, ratio, model, attack) cell; write CSVs when ``plan.out_dir`` is set.

    Models always train on clean data. ER, DRR and reliability are measured on the
    malicious test fold (clean or attacked); recall and F1 on the clean benign test
    fold plus the same malicious set.
    """
    global _SHARED
    if corpus is None:
        ids, corpus = load_corpus(plan)
    elif ids is None:
        ids = app_ids_for(corpus)
    bundles = [b for b, _ in corpus]
    labels = np.array([l for _, l in corpus], dtype=np.int64)
    X = base_features if base_features is not None else feature_matrix(bundles)
    folds = kfold_split(labels, plan.folds, cell_seed(plan.seed, 0))
    shared = _Shared(plan, list(ids), bundles, labels, X, folds)

    fold_ids = list(range(plan.folds))
    if plan.workers > 1:
        ctx = multiprocessing.get_context("fork") if "fork" in multiprocessing.get_all_start_methods() else None
        with ProcessPoolExecutor(plan.workers, mp_context=ctx, initializer=_init_worker,
                                 initargs=(shared,)) as pool:
            outputs = list(pool.map(_run_fold, fold_ids))
    else:
        _SHARED = shared
        try:
            outputs = [_run_fold(f) for f in fold_ids]
        finally:
            _SHARED = None

    per_fold = [item for out, _ in outputs for item in out]
    attack_rows: dict[str, list[list[str]]] = {}
    for _, rows in outputs:
        attack_rows.update(rows)
    reports = []
    for kind in plan.models:
        for ratio in plan.ratios:
            for attack in plan.attacks:
                cell = [r for _, r in per_fold if (r.model, r.ratio, r.attack) == (kind, ratio, attack)]
                reports.append(average_reports(cell))
    result = ExperimentResult(reports, per_fold, attack_rows)
    if plan.out_dir:
        write_outputs(result, plan, corpus)
    return result


def write_outputs(result: ExperimentResult, plan: ExperimentPlan, corpus) -> None:
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", result.reports)
    order = sorted(range(len(result.per_fold)), key=lambda i: (
        plan.models.index(result.per_fold[i][1].model), plan.ratios.index(result.per_fold[i][1].ratio),
        plan.attacks.index(result.per_fold[i][1].attack), result.per_fold[i][0]))
    write_metrics_csv(out / "metrics_per_fold.csv", [result.per_fold[i][1] for i in order],
                      extra=("fold",), extra_values=[(result.per_fold[i][0],) for i in order])
    if result.attack_rows:
        (out / "attacks").mkdir(exist_ok=True)
        for name in sorted(result.attack_rows):
            atk.write_attack_report(out / "attacks" / name, result.attack_rows[name])
    lines = [l for l in plan.to_lines() if not l.startswith(("out_dir", "workers"))]
    lines.append(f"corpus_digest = {corpus_digest(corpus)}")
    (out / "plan.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
