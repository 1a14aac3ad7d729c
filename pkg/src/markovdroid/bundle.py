"""Normalized app bundles: the unpacked-APK stand-in.

On-disk layout (UTF-8, line oriented)::

    <bundle>/manifest.txt            permission: <NAME> / component: <qualified.Name>
    <bundle>/layout/<name>.txt       ref: <qualified.Name>
    <bundle>/code/<seg>/.../<U>.unit class <qualified.Name>
                                     method <name>
                                         call <qualified.Callee>-><method>
                                     endmethod

Bundles are immutable. Directory children and units are kept sorted by name so
that structural equality does not depend on construction order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .abstraction import Family, abstract_name, is_valid_name

UNIT_SUFFIX = ".unit"
LAYOUT_SUFFIX = ".txt"


class BundleError(ValueError):
    pass


class BundleFormatError(BundleError):
    def __init__(self, file, line: int | None, message: str):
        self.file = str(file)
        self.line = line
        where = self.file if line is None else f"{self.file}:{line}"
        super().__init__(f"{where}: {message}")


class DuplicateNameError(BundleError):
    pass


class DanglingReferenceError(BundleError):
    def __init__(self, violations: Sequence["Violation"]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class Call:
    callee: str
    method: str

    def to_line(self) -> str:
        return f"call {self.callee}->{self.method}"


@dataclass(frozen=True)
class Method:
    name: str
    calls: tuple[Call, ...] = ()


@dataclass(frozen=True)
class CodeUnit:
    qualified_name: str
    methods: tuple[Method, ...] = ()

    @property
    def name(self) -> str:
        return self.qualified_name.rsplit(".", 1)[-1]

    @property
    def package(self) -> str:
        head, _, _ = self.qualified_name.rpartition(".")
        return head

    @property
    def n_calls(self) -> int:
        return sum(len(m.calls) for m in self.methods)

    def to_lines(self) -> list[str]:
        lines = [f"class {self.qualified_name}"]
        for m in self.methods:
            lines.append(f"method {m.name}")
            lines.extend("    " + c.to_line() for c in m.calls)
            lines.append("endmethod")
        return lines

    @classmethod
    def from_lines(cls, lines: Sequence[str], source="<unit>") -> "CodeUnit":
        if not lines or not lines[0].startswith("class "):
            raise BundleFormatError(source, 1, "first line must be 'class <qualified.Name>'")
        qname = lines[0][len("class "):].strip()
        if not is_valid_name(qname):
            raise BundleFormatError(source, 1, f"invalid class name {qname!r}")
        methods: list[Method] = []
        current: str | None = None
        calls: list[Call] = []
        for lineno, raw in enumerate(lines[1:], start=2):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("method "):
                if current is not None:
                    raise BundleFormatError(source, lineno, "nested method (missing endmethod)")
                current = line[len("method "):].strip()
                if not current:
                    raise BundleFormatError(source, lineno, "empty method name")
                calls = []
            elif line == "endmethod":
                if current is None:
                    raise BundleFormatError(source, lineno, "endmethod outside method")
                methods.append(Method(current, tuple(calls)))
                current = None
            elif line.startswith("call "):
                if current is None:
                    raise BundleFormatError(source, lineno, "call outside method")
                target = line[len("call "):].strip()
                callee, sep, mname = target.partition("->")
                if not sep or not mname or not is_valid_name(callee):
                    raise BundleFormatError(source, lineno, f"malformed call {target!r}")
                calls.append(Call(callee, mname))
            else:
                raise BundleFormatError(source, lineno, f"unrecognized line {line!r}")
        if current is not None:
            raise BundleFormatError(source, len(lines), f"method {current!r} not terminated")
        return cls(qname, tuple(methods))


@dataclass(frozen=True)
class DirNode:
    name: str
    children: tuple["DirNode", ...] = ()
    units: tuple[CodeUnit, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(sorted(self.children, key=lambda d: d.name)))
        object.__setattr__(self, "units", tuple(sorted(self.units, key=lambda u: u.name)))

    @property
    def depth_below(self) -> int:
        """Number of directory levels in this subtree, this node included."""
        return 1 + max((c.depth_below for c in self.children), default=0)


@dataclass(frozen=True)
class DirTree:
    roots: tuple[DirNode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "roots", tuple(sorted(self.roots, key=lambda d: d.name)))

    @cached_property
    def height(self) -> int:
        return max((r.depth_below for r in self.roots), default=0)

    def iter_dirs(self) -> Iterator[tuple[tuple[str, ...], DirNode]]:
        """Preorder walk yielding (path, node); roots sit at level 0."""
        stack = [((r.name,), r) for r in reversed(self.roots)]
        while stack:
            path, node = stack.pop()
            yield path, node
            stack.extend((path + (c.name,), c) for c in reversed(node.children))

    def iter_units(self) -> Iterator[CodeUnit]:
        for _, node in self.iter_dirs():
            yield from node.units

    def dirs_at_level(self, level: int) -> list[tuple[str, ...]]:
        return [p for p, _ in self.iter_dirs() if len(p) == level + 1]

    def find(self, path: Sequence[str]) -> DirNode | None:
        nodes = self.roots
        found = None
        for seg in path:
            found = next((n for n in nodes if n.name == seg), None)
            if found is None:
                return None
            nodes = found.children
        return found

    @cached_property
    def dir_paths(self) -> frozenset[str]:
        return frozenset(".".join(p) for p, _ in self.iter_dirs())

    @cached_property
    def unit_names(self) -> frozenset[str]:
        return frozenset(u.qualified_name for u in self.iter_units())

    @property
    def n_units(self) -> int:
        return sum(1 for _ in self.iter_units())


@dataclass(frozen=True)
class ManifestInfo:
    permissions: frozenset[str] = frozenset()
    components: tuple[str, ...] = ()

    def to_lines(self) -> list[str]:
        lines = [f"permission: {p}" for p in sorted(self.permissions)]
        lines.extend(f"component: {c}" for c in self.components)
        return lines

    @classmethod
    def from_lines(cls, lines: Sequence[str], source="manifest.txt") -> "ManifestInfo":
        perms: list[str] = []
        comps: list[str] = []
        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line:
                continue
            key, sep, value = line.partition(":")
            value = value.strip()
            if not sep or not value or any(ch.isspace() for ch in value):
                raise BundleFormatError(source, lineno, f"malformed manifest line {line!r}")
            if key == "permission":
                if value in perms:
                    raise DuplicateNameError(f"{source}:{lineno}: duplicate permission {value!r}")
                perms.append(value)
            elif key == "component":
                if not is_valid_name(value):
                    raise BundleFormatError(source, lineno, f"invalid component name {value!r}")
                comps.append(value)
            else:
                raise BundleFormatError(source, lineno, f"unknown manifest key {key!r}")
        return cls(frozenset(perms), tuple(comps))


@dataclass(frozen=True)
class LayoutFile:
    name: str
    refs: tuple[str, ...] = ()

    def to_lines(self) -> list[str]:
        return [f"ref: {r}" for r in self.refs]

    @classmethod
    def from_lines(cls, name: str, lines: Sequence[str], source="<layout>") -> "LayoutFile":
        refs = []
        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line:
                continue
            if not line.startswith("ref:"):
                raise BundleFormatError(source, lineno, f"malformed layout line {line!r}")
            ref = line[len("ref:"):].strip()
            if not is_valid_name(ref):
                raise BundleFormatError(source, lineno, f"invalid reference {ref!r}")
            refs.append(ref)
        return cls(name, tuple(refs))


@dataclass(frozen=True)
class AppBundle:
    manifest: ManifestInfo = field(default_factory=ManifestInfo)
    code_tree: DirTree = field(default_factory=DirTree)
    layouts: tuple[LayoutFile, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layouts", tuple(sorted(self.layouts, key=lambda l: l.name)))

    @property
    def height(self) -> int:
        return self.code_tree.height


# --------------------------------------------------------------------------
# integrity


@dataclass(frozen=True)
class Violation:
    kind: str
    source: str
    reference: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.reference!r} in {self.source}"


_APP_FAMILIES = (Family.SELF_DEFINED, Family.OBFUSCATED)


def _is_app_owned(name: str, tree: DirTree, root_names: frozenset[str]) -> bool:
    package, _, _ = name.rpartition(".")
    if not package:
        return False
    if package in tree.dir_paths:
        return True
    # Library names under an app root (com.google.* beside com.vendor.*) are
    # external; anything else under an app root that abstracts to an
    # app-level family must exist.
    return name.split(".", 1)[0] in root_names and abstract_name(name) in _APP_FAMILIES


def iter_references(bundle: AppBundle) -> Iterator[tuple[str, str]]:
    """Yield (source, qualified name) for every name reference in the bundle."""
    for comp in bundle.manifest.components:
        yield "manifest", comp
    for layout in bundle.layouts:
        for ref in layout.refs:
            yield f"layout/{layout.name}", ref
    for unit in bundle.code_tree.iter_units():
        for m in unit.methods:
            for c in m.calls:
                yield f"{unit.qualified_name}.{m.name}", c.callee


def check_integrity(bundle: AppBundle) -> list[Violation]:
    violations: list[Violation] = []
    tree = bundle.code_tree
    for path, node in tree.iter_dirs():
        where = "/".join(path)
        if not node.name or "/" in node.name or os.sep in node.name or not is_valid_name(node.name):
            violations.append(Violation("bad-directory-name", where, node.name))
        names = [c.name for c in node.children] + [u.name for u in node.units]
        for dup in sorted({n for n in names if names.count(n) > 1}):
            violations.append(Violation("duplicate-name", where, dup))
        expected = ".".join(path)
        for unit in node.units:
            if unit.package != expected:
                violations.append(Violation("misplaced-unit", where, unit.qualified_name))
    root_names = [r.name for r in tree.roots]
    for dup in sorted({n for n in root_names if root_names.count(n) > 1}):
        violations.append(Violation("duplicate-name", "code", dup))

    units = tree.unit_names
    roots = frozenset(root_names)
    for source, ref in iter_references(bundle):
        if not is_valid_name(ref):
            violations.append(Violation("malformed-reference", source, ref))
        elif ref not in units and _is_app_owned(ref, tree, roots):
            violations.append(Violation("dangling-reference", source, ref))
    return violations


# --------------------------------------------------------------------------
# disk format


def _read_lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()


def _parse_dir(path: Path, segments: tuple[str, ...]) -> DirNode:
    children = []
    units = []
    seen: set[str] = set()
    for entry in sorted(path.iterdir()):
        if entry.is_dir():
            name = entry.name
            children.append(_parse_dir(entry, segments + (name,)))
        elif entry.name.endswith(UNIT_SUFFIX):
            name = entry.name[: -len(UNIT_SUFFIX)]
            unit = CodeUnit.from_lines(_read_lines(entry), source=entry)
            expected = ".".join(segments + (name,))
            if unit.qualified_name != expected:
                raise BundleFormatError(entry, 1, f"class {unit.qualified_name!r} does not match path ({expected!r})")
            units.append(unit)
        else:
            raise BundleFormatError(entry, None, "unexpected file in code tree")
        if name in seen:
            raise DuplicateNameError(f"{path}: {name!r} is both a directory and a unit")
        seen.add(name)
    return DirNode(segments[-1], tuple(children), tuple(units))


def parse_bundle(path) -> AppBundle:
    root = Path(path)
    manifest_path = root / "manifest.txt"
    if not manifest_path.is_file():
        raise BundleFormatError(manifest_path, None, "missing manifest")
    manifest = ManifestInfo.from_lines(_read_lines(manifest_path), source=manifest_path)

    layouts = []
    layout_dir = root / "layout"
    if layout_dir.is_dir():
        for entry in sorted(layout_dir.iterdir()):
            if not entry.name.endswith(LAYOUT_SUFFIX):
                raise BundleFormatError(entry, None, "layout files must end in .txt")
            name = entry.name[: -len(LAYOUT_SUFFIX)]
            layouts.append(LayoutFile.from_lines(name, _read_lines(entry), source=entry))

    roots = []
    code_dir = root / "code"
    if code_dir.is_dir():
        for entry in sorted(code_dir.iterdir()):
            if not entry.is_dir():
                raise BundleFormatError(entry, None, "code units must live inside a directory")
            roots.append(_parse_dir(entry, (entry.name,)))

    bundle = AppBundle(manifest, DirTree(tuple(roots)), tuple(layouts))
    problems = check_integrity(bundle)
    dangling = [v for v in problems if v.kind == "dangling-reference"]
    if dangling:
        raise DanglingReferenceError(dangling)
    if problems:
        raise BundleError("; ".join(str(v) for v in problems))
    return bundle


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    path.write_text(text, encoding="utf-8")


def write_bundle(bundle: AppBundle, path) -> None:
    root = Path(path)
    if root.exists() and any(root.iterdir()):
        raise FileExistsError(f"{root} exists and is not empty")
    root.mkdir(parents=True, exist_ok=True)
    _write_lines(root / "manifest.txt", bundle.manifest.to_lines())
    if bundle.layouts:
        (root / "layout").mkdir()
        for layout in bundle.layouts:
            _write_lines(root / "layout" / f"{layout.name}{LAYOUT_SUFFIX}", layout.to_lines())
    code = root / "code"
    code.mkdir()
    for dir_path, node in bundle.code_tree.iter_dirs():
        d = code.joinpath(*dir_path)
        d.mkdir()
        for unit in node.units:
            _write_lines(d / f"{unit.name}{UNIT_SUFFIX}", unit.to_lines())
