"""Command line entry point: ``markovdroid <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attack as atk
from .corpus import BENIGN, MALICIOUS, CorpusSpec, generate_corpus, read_corpus, write_corpus
from .fusion import COMBINATORS, DEFAULT_THRESHOLD, build_permission_vocab, fused_feature_names, fused_matrix, \
    read_vocab, write_vocab
from .harness import ATTACKS, ExperimentPlan, cell_seed, read_config, run_experiment
from .markov import feature_matrix, read_feature_csv, write_feature_csv
from .metrics import EvaluationReport, EvaluationSet, write_metrics_csv
from .models import KINDS, dump_model, fit, load_model

log = logging.getLogger("markovdroid")


def _out_dir(args) -> Path:
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> dict[str, str]:
    return read_config(args.config) if args.config else {}


def cmd_generate_corpus(args) -> int:
    values = {k.removeprefix("corpus."): v for k, v in _config(args).items()}
    spec = CorpusSpec.from_mapping(values)
    overrides = {k: v for k, v in (("seed", args.seed), ("benign", args.benign), ("malicious", args.malicious))
                 if v is not None}
    spec = replace(spec, **overrides)
    out = Path(args.out_dir or "corpus")
    if out.exists() and any(out.iterdir()):
        log.error("%s is not empty", out)
        return 2
    ids = write_corpus(generate_corpus(spec), out)
    (out / "corpus.txt").write_text("\n".join(spec.to_lines()) + "\n", encoding="utf-8")
    print(f"wrote {len(ids)} apps to {out}")
    return 0


def _load(args):
    ids, corpus = read_corpus(args.corpus)
    return ids, [b for b, _ in corpus], np.array([l for _, l in corpus], dtype=np.int64)


def cmd_extract_features(args) -> int:
    ids, bundles, labels = _load(args)
    out = _out_dir(args) / "features.csv"
    if args.vocab:
        vocab = read_vocab(args.vocab)
        write_feature_csv(out, ids, labels, fused_matrix(bundles, vocab), fused_feature_names(vocab))
    else:
        write_feature_csv(out, ids, labels, feature_matrix(bundles))
    print(f"wrote {out}")
    return 0


def cmd_fuse_vocab(args) -> int:
    ids, bundles, labels = _load(args)
    vocab = build_permission_vocab(bundles, labels, args.threshold, args.combinator)
    out = _out_dir(args) / "vocab.txt"
    write_vocab(vocab, out)
    print(f"wrote {len(vocab)} permissions to {out}")
    return 0


def cmd_attack(args) -> int:
    """Attack every malicious app of a corpus; benign apps are copied unchanged.

    The corpus itself supplies the attacker's statistics: both classes for
    full_statistical and the permission profile, the malicious apps for black_hole.
    """
    ids, bundles, labels = _load(args)
    seed = args.seed or 0
    out = _out_dir(args)
    mal = np.nonzero(labels == MALICIOUS)[0]
    attacked = list(bundles)
    rows = []
    if args.variant == "permission_perturb":
        profile = atk.PermissionProfile.from_corpus(bundles, labels)
        for i in mal:
            attacked[i] = atk.permission_perturb(bundles[i], profile, seed=cell_seed(seed, int(i)))
    else:
        X = feature_matrix(bundles)
        stats = atk.AttackStatistics(X[labels == BENIGN], X[labels == MALICIOUS], X[labels == MALICIOUS])
        cfg = atk.make_variant_config(args.variant, stats, seed=seed)
        for i in mal:
            attacked[i], rmap = atk.structure_break(bundles[i], cfg, np.random.default_rng(cell_seed(seed, int(i))))
            rows += atk.report_rows(ids[i], args.variant, rmap)
    target = out / "corpus"
    if target.exists() and any(target.iterdir()):
        log.error("%s is not empty", target)
        return 2
    write_corpus(list(zip(attacked, labels.tolist())), target, ids)
    atk.write_attack_report(out / "attack_report.csv", rows)
    print(f"attacked {len(mal)} malicious apps; corpus in {target}")
    return 0


def cmd_train(args) -> int:
    _, labels, X, _ = read_feature_csv(args.features)
    model = fit(args.model, X, labels, seed=args.seed or 0)
    out = _out_dir(args) / f"model_{args.model}.txt"
    dump_model(model, out)
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args) -> int:
    _, labels, X, _ = read_feature_csv(args.features)
    model = load_model(args.model)
    p = model.predict_proba(X)
    mixed = EvaluationSet(labels, p)
    mal = EvaluationSet(labels[labels == MALICIOUS], p[labels == MALICIOUS])
    report = EvaluationReport.from_sets(model.kind, args.ratio, args.attack, mal, mixed)
    out = _out_dir(args) / "metrics.csv"
    write_metrics_csv(out, [report])
    print(out.read_text(encoding="utf-8"), end="")
    return 0


def cmd_sweep(args) -> int:
    plan = ExperimentPlan.from_mapping(_config(args))
    overrides = {k: v for k, v in (("seed", args.seed), ("out_dir", args.out_dir), ("workers", args.workers))
                 if v is not None}
    plan = replace(plan, **overrides)
    if plan.out_dir is None:
        plan = replace(plan, out_dir="results")
    result = run_experiment(plan)
    print(f"{len(result.reports)} cells written to {plan.out_dir}/metrics.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="markovdroid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-corpus", parents=[common], help="write a seeded synthetic corpus")
    p.add_argument("--benign", type=int)
    p.add_argument("--malicious", type=int)
    p.set_defaults(func=cmd_generate_corpus)

    p = sub.add_parser("extract-features", parents=[common], help="Markov (or fused) feature CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", help="append permission indicators from this vocabulary")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("fuse-vocab", parents=[common], help="build the permission vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--combinator", choices=COMBINATORS, default="or")
    p.set_defaults(func=cmd_fuse_vocab)

    p = sub.add_parser("attack", parents=[common], help="attack the malicious apps of a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--variant", required=True, choices=[a for a in ATTACKS if a != "none"])
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("train", parents=[common], help="fit a model on a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True, choices=KINDS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a model dump on a feature CSV")
    p.add_argument("--model", required=True, help="model dump written by 'train'")
    p.add_argument("--features", required=True)
    p.add_argument("--ratio", type=float, default=1.0, help="label for the metrics row")
    p.add_argument("--attack", default="none", help="label for the metrics row")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="run the k-fold benign-ratio sweep")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
