"""Family-mode abstraction of qualified API names.

Every call target is mapped to one of eleven families. The index order below
is part of the feature CSV contract and must not change:

    0 android   1 google   2 java   3 javax   4 xml   5 apache
    6 junit     7 json     8 dom    9 self-defined    10 obfuscated
"""

from __future__ import annotations

import re
from enum import Enum
from typing import TYPE_CHECKING, Mapping

if TYPE_CHECKING:
    from .bundle import AppBundle


class Family(str, Enum):
    ANDROID = "android"
    GOOGLE = "google"
    JAVA = "java"
    JAVAX = "javax"
    XML = "xml"
    APACHE = "apache"
    JUNIT = "junit"
    JSON = "json"
    DOM = "dom"
    SELF_DEFINED = "self-defined"
    OBFUSCATED = "obfuscated"

    @property
    def index(self) -> int:
        return FAMILY_INDEX[self]

    @property
    def is_known(self) -> bool:
        return self not in (Family.SELF_DEFINED, Family.OBFUSCATED)

    def __str__(self) -> str:
        return self.value


FAMILIES: tuple[Family, ...] = tuple(Family)
FAMILY_INDEX: dict[Family, int] = {f: i for i, f in enumerate(FAMILIES)}
KNOWN_FAMILIES: tuple[Family, ...] = tuple(f for f in FAMILIES if f.is_known)
N_FAMILIES = len(FAMILIES)

# Both the conventional package root and the bare family name are accepted, so
# a directory named after a family (as created by the structure-break attack)
# abstracts to that family.
KNOWN_PREFIXES: dict[str, Family] = {
    "android": Family.ANDROID,
    "com.android": Family.ANDROID,
    "google": Family.GOOGLE,
    "com.google": Family.GOOGLE,
    "java": Family.JAVA,
    "javax": Family.JAVAX,
    "xml": Family.XML,
    "org.xml": Family.XML,
    "apache": Family.APACHE,
    "org.apache": Family.APACHE,
    "junit": Family.JUNIT,
    "json": Family.JSON,
    "org.json": Family.JSON,
    "dom": Family.DOM,
    "org.w3c.dom": Family.DOM,
}

_SEGMENT = r"[A-Za-z0-9_$]+"
QUALIFIED_NAME_RE = re.compile(rf"{_SEGMENT}(?:\.{_SEGMENT})*")


class MalformedNameError(ValueError):
    pass


def is_valid_name(name: str) -> bool:
    return QUALIFIED_NAME_RE.fullmatch(name) is not None


def family_by_name(name: str) -> Family:
    """Look up a family by its string value ("android", "self-defined", ...)."""
    try:
        return Family(name)
    except ValueError:
        raise ValueError(f"unknown family {name!r}") from None


def is_obfuscated(qualified_name: str) -> bool:
    package = qualified_name.split(".")[:-1]
    return bool(package) and all(len(seg) <= 2 for seg in package)


def abstract_name(qualified_name: str, prefixes: Mapping[str, Family] = KNOWN_PREFIXES) -> Family:
    """Map a dotted class name to its family.

    The longest known prefix wins (matched on whole segments). Names with no
    known prefix are obfuscated when every package segment is at most two
    characters long, otherwise self-defined.
    """
    if not is_valid_name(qualified_name):
        raise MalformedNameError(f"malformed qualified name: {qualified_name!r}")
    segments = qualified_name.split(".")
    for n in range(len(segments), 0, -1):
        family = prefixes.get(".".join(segments[:n]))
        if family is not None:
            return family
    if is_obfuscated(qualified_name):
        return Family.OBFUSCATED
    return Family.SELF_DEFINED


def extract_call_sequences(bundle: AppBundle) -> list[list[Family]]:
    """One family sequence per method that makes at least one call.

    Each sequence is the declaring unit's family followed by the callee
    families in source order.
    """
    sequences = []
    for unit in bundle.code_tree.iter_units():
        caller = abstract_name(unit.qualified_name)
        for method in unit.methods:
            if not method.calls:
                continue
            seq = [caller]
            seq.extend(abstract_name(call.callee) for call in method.calls)
            sequences.append(seq)
    return sequences
