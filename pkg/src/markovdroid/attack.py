"""Structure Break (StB) attacks and the permission-perturbation adversary.

A structure break re-roots directories of an app's code tree under a new root
named after a library family ``f`` and rewrites every reference to the moved
code. The moved code then abstracts to ``f`` instead of self-defined, which
shifts transition mass in the Markov features without touching behaviour.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .abstraction import FAMILY_INDEX, KNOWN_FAMILIES, N_FAMILIES, Family, family_by_name
from .bundle import AppBundle, CodeUnit, DirNode, DirTree, LayoutFile, ManifestInfo, iter_references

VARIANTS = ("random", "full_statistical", "black_hole")
DEFAULT_RANDOM_ELEMENTS = 3


class AttackError(ValueError):
    pass


# --------------------------------------------------------------------------
# level / ratio policies (L_func, P_func)


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, lo, hi, rng: np.random.Generator):
        return min(max(self.value, lo), hi)

    def __str__(self):
        return f"constant({self.value:g})"


@dataclass(frozen=True)
class UniformInt:
    def __call__(self, lo: int, hi: int, rng: np.random.Generator) -> int:
        return int(rng.integers(lo, hi + 1))

    def __str__(self):
        return "uniform-int"


@dataclass(frozen=True)
class UniformReal:
    def __call__(self, lo: float, hi: float, rng: np.random.Generator) -> float:
        return float(rng.uniform(lo, hi))

    def __str__(self):
        return "uniform"


Policy = Callable[[float, float, np.random.Generator], float]


@dataclass(frozen=True)
class AttackConfig:
    mode_elements: tuple[Family, ...]
    level_policy: Policy
    ratio_policy: Policy
    variant: str = "random"
    seed: int = 0

    def __post_init__(self):
        elements = tuple(family_by_name(e) if isinstance(e, str) else e for e in self.mode_elements)
        object.__setattr__(self, "mode_elements", elements)
        if not elements:
            raise AttackError("mode_elements must be nonempty")
        bad = [e for e in elements if not e.is_known]
        if bad:
            raise AttackError(f"mode elements must be known families, got {bad}")
        if self.variant not in VARIANTS:
            raise AttackError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class RewriteMap:
    """Qualified-prefix renames applied by one attack, plus the draws that produced them."""

    entries: tuple[tuple[str, str], ...] = ()
    element: Family | None = None
    level: int | None = None
    ratio: float | None = None

    def apply(self, name: str) -> str:
        for old, new in self.entries:
            if name == old or name.startswith(old + "."):
                return new + name[len(old):]
        return name

    def __len__(self):
        return len(self.entries)


# --------------------------------------------------------------------------
# mode-element selection


def family_mass(X: np.ndarray) -> np.ndarray:
    """Per-app mass of each family: sum of features with it as source or destination."""
    M = np.asarray(X, dtype=np.float64).reshape(-1, N_FAMILIES, N_FAMILIES)
    return M.sum(axis=2) + M.sum(axis=1) - np.diagonal(M, axis1=1, axis2=2)


def _known_columns() -> np.ndarray:
    return np.array([FAMILY_INDEX[f] for f in KNOWN_FAMILIES])


def select_elements_random(families: Iterable[Family] = KNOWN_FAMILIES, k: int = DEFAULT_RANDOM_ELEMENTS,
                           seed: int = 0) -> list[Family]:
    pool = [f for f in families if f.is_known]
    if not 1 <= k <= len(pool):
        raise AttackError(f"k must be in [1, {len(pool)}], got {k}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in sorted(picked)]


def select_elements_train_stats(benign: np.ndarray, malicious: np.ndarray) -> list[Family]:
    """Family with the largest mean-mass surplus in benign over malicious training data."""
    benign = np.asarray(benign)
    malicious = np.asarray(malicious)
    if len(benign) == 0 or len(malicious) == 0:
        raise AttackError("training statistics need benign and malicious samples")
    cols = _known_columns()
    score = family_mass(benign).mean(axis=0)[cols] - family_mass(malicious).mean(axis=0)[cols]
    return [KNOWN_FAMILIES[int(np.argmax(score))]]


def select_elements_blackhole(test_malicious: np.ndarray) -> list[Family]:
    """Least popular family in the (malicious-only) test data."""
    test_malicious = np.asarray(test_malicious)
    if len(test_malicious) == 0:
        raise AttackError("black-hole selection needs test samples")
    mass = family_mass(test_malicious).mean(axis=0)[_known_columns()]
    return [KNOWN_FAMILIES[int(np.argmin(mass))]]


@dataclass
class AttackStatistics:
    train_benign: np.ndarray | None = None
    train_malicious: np.ndarray | None = None
    test_malicious: np.ndarray | None = None


def make_variant_config(variant: str, stats: AttackStatistics | None = None, seed: int = 0,
                        k: int = DEFAULT_RANDOM_ELEMENTS) -> AttackConfig:
    if variant == "random":
        elements = select_elements_random(KNOWN_FAMILIES, k, seed)
        return AttackConfig(tuple(elements), UniformInt(), UniformReal(), variant, seed)
    if variant == "full_statistical":
        if stats is None or stats.train_benign is None or stats.train_malicious is None:
            raise AttackError("full_statistical needs training statistics")
        elements = select_elements_train_stats(stats.train_benign, stats.train_malicious)
    elif variant == "black_hole":
        if stats is None or stats.test_malicious is None:
            raise AttackError("black_hole needs test statistics")
        elements = select_elements_blackhole(stats.test_malicious)
    else:
        raise AttackError(f"unknown variant {variant!r}")
    # whole tree (level 0), every directory (ratio 1)
    return AttackConfig(tuple(elements), Constant(0), Constant(1.0), variant, seed)


# --------------------------------------------------------------------------
# rewriting


def _prefix_pattern(prefix: str) -> re.Pattern:
    # whole dotted-name match: no name character or dot before, and the
    # prefix must end at '.', '-', whitespace or end of line
    return re.compile(r"(?<![A-Za-z0-9_$.])" + re.escape(prefix) + r"(?=[.\-\s]|$)")


def change_occurrences(lines: Sequence[str], r: str, r_new: str) -> list[str]:
    if not r:
        raise AttackError("prefix to replace must be nonempty")
    pattern = _prefix_pattern(r)
    return [pattern.sub(lambda _m: r_new, line) for line in lines]


def _rewrite(lines: Sequence[str], entries: Sequence[tuple[str, str]]) -> list[str]:
    out = list(lines)
    for old, new in entries:
        out = change_occurrences(out, old, new)
    return out


def _rewrite_unit(unit: CodeUnit, entries) -> CodeUnit:
    return CodeUnit.from_lines(_rewrite(unit.to_lines(), entries), source=unit.qualified_name)


def _rewrite_node(node: DirNode, entries, name: str | None = None) -> DirNode:
    return DirNode(
        name if name is not None else node.name,
        tuple(_rewrite_node(c, entries) for c in node.children),
        tuple(_rewrite_unit(u, entries) for u in node.units),
    )


def _prune(node: DirNode, path: tuple[str, ...], cut: set[tuple[str, ...]]) -> DirNode:
    kept = tuple(_prune(c, path + (c.name,), cut) for c in node.children if path + (c.name,) not in cut)
    return DirNode(node.name, kept, node.units)


def _external_children(bundle: AppBundle, f: str) -> set[str]:
    """Names directly under package ``f`` used by references to code outside the bundle."""
    units = bundle.code_tree.unit_names
    out = set()
    for _, ref in iter_references(bundle):
        parts = ref.split(".")
        if ref not in units and len(parts) > 2 and parts[0] == f:
            out.add(parts[1])
    return out


def structure_break(bundle: AppBundle, cfg: AttackConfig,
                    rng: np.random.Generator | None = None) -> tuple[AppBundle, RewriteMap]:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    tree = bundle.code_tree
    level = int(cfg.level_policy(0, tree.height, rng))
    ratio = float(cfg.ratio_policy(0.0, 1.0, rng))
    element = cfg.mode_elements[int(rng.integers(len(cfg.mode_elements)))]
    f = element.value

    candidates = sorted(tree.dirs_at_level(level))
    # round before ceil so 0.3 * 10 does not become 4
    n_pick = math.ceil(round(min(max(ratio, 0.0), 1.0) * len(candidates), 9))
    unchanged = (bundle, RewriteMap((), element, level, ratio))
    if n_pick == 0:
        return unchanged
    picked = [candidates[i] for i in sorted(rng.choice(len(candidates), size=n_pick, replace=False))]
    # directories already under an existing root named f stay where they are
    picked = [p for p in picked if p[0] != f]
    if not picked:
        return unchanged

    f_root = tree.find((f,))
    taken = set()
    if f_root is not None:
        taken = {c.name for c in f_root.children} | {u.name for u in f_root.units}
    # a moved directory must not shadow a library package the app references (io -> java.io)
    taken |= _external_children(bundle, f)
    moves = []
    for path in picked:
        base = new = path[-1]
        suffix = 1
        while new in taken:
            new = f"{base}_{suffix}"
            suffix += 1
        taken.add(new)
        moves.append((path, new))
    entries = tuple((".".join(path), f"{f}.{new}") for path, new in moves)

    cut = {path for path, _ in moves}
    moved_nodes = [(tree.find(path), new) for path, new in moves]
    roots = [_prune(r, (r.name,), cut) for r in tree.roots if (r.name,) not in cut]
    roots = [_rewrite_node(r, entries) for r in roots]
    moved = [_rewrite_node(node, entries, name=new) for node, new in moved_nodes]

    existing = next((r for r in roots if r.name == f), None)
    if existing is None:
        roots.append(DirNode(f, tuple(moved)))
    else:
        roots = [r for r in roots if r.name != f]
        roots.append(DirNode(f, existing.children + tuple(moved), existing.units))

    # permission names are not code references (custom ones can share the app prefix)
    components = tuple(_rewrite(bundle.manifest.components, entries))
    manifest = ManifestInfo(bundle.manifest.permissions, components)
    layouts = tuple(LayoutFile.from_lines(l.name, _rewrite(l.to_lines(), entries)) for l in bundle.layouts)
    attacked = AppBundle(manifest, DirTree(tuple(roots)), layouts)
    return attacked, RewriteMap(entries, element, level, ratio)


# --------------------------------------------------------------------------
# permission perturbation (stand-in adversary against permission features)


@dataclass(frozen=True)
class PermissionProfile:
    benign_freq: dict[str, float] = field(default_factory=dict)
    malicious_freq: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_corpus(cls, bundles: Sequence[AppBundle], labels: Sequence[int]) -> "PermissionProfile":
        ben = [b for b, y in zip(bundles, labels) if y == 0]
        mal = [b for b, y in zip(bundles, labels) if y == 1]

        def freq(group):
            counts: dict[str, int] = {}
            for b in group:
                for p in b.manifest.permissions:
                    counts[p] = counts.get(p, 0) + 1
            return {p: c / len(group) for p, c in sorted(counts.items())} if group else {}

        return cls(freq(ben), freq(mal))

    @property
    def modal(self) -> frozenset[str]:
        """Permissions requested by most benign apps."""
        return frozenset(p for p, v in self.benign_freq.items() if v > 0.5)


def permission_perturb(bundle: AppBundle, profile: PermissionProfile, seed: int = 0,
                       budget: int | None = None) -> AppBundle:
    """Edit the manifest permissions toward the benign modal profile.

    Candidate edits are dropping non-modal permissions (most malicious-typical
    first) and adding missing modal ones (most benign-typical first); at most
    ``budget`` edits are applied, all of them when ``budget`` is None.
    """
    if not profile.benign_freq:
        raise AttackError("benign permission profile is empty")
    modal = profile.modal
    perms = bundle.manifest.permissions
    ben, mal = profile.benign_freq, profile.malicious_freq
    edits = [(mal.get(p, 0.0) - ben.get(p, 0.0), "drop", p) for p in sorted(perms - modal)]
    edits += [(ben.get(p, 0.0) - mal.get(p, 0.0), "add", p) for p in sorted(modal - perms)]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(edits))
    edits = [edits[i] for i in order]
    edits.sort(key=lambda e: -e[0])
    if budget is not None:
        edits = edits[: max(budget, 0)]
    new_perms = set(perms)
    for _, op, p in edits:
        if op == "drop":
            new_perms.discard(p)
        else:
            new_perms.add(p)
    if new_perms == set(perms):
        return bundle
    manifest = ManifestInfo(frozenset(new_perms), bundle.manifest.components)
    return AppBundle(manifest, bundle.code_tree, bundle.layouts)


# --------------------------------------------------------------------------
# reports

REPORT_HEADER = ["app_id", "variant", "element", "level", "ratio", "old_prefix", "new_prefix"]


def report_rows(app_id: str, variant: str, rmap: RewriteMap) -> list[list[str]]:
    element = rmap.element.value if rmap.element is not None else ""
    level = "" if rmap.level is None else str(rmap.level)
    ratio = "" if rmap.ratio is None else format(rmap.ratio, ".9g")
    if not rmap.entries:
        return [[app_id, variant, element, level, ratio, "", ""]]
    return [[app_id, variant, element, level, ratio, old, new] for old, new in rmap.entries]


def write_attack_report(path, rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        writer.writerows(rows)
