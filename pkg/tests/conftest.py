import numpy as np
import pytest

from markovdroid.bundle import AppBundle, Call, CodeUnit, DirNode, DirTree, LayoutFile, ManifestInfo, Method
from markovdroid.corpus import CorpusSpec, generate_corpus


def unit(qname: str, *methods: tuple[str, list[str]]) -> CodeUnit:
    """methods are (name, ["pkg.Cls->m", ...]) pairs."""
    return CodeUnit(qname, tuple(Method(n, tuple(Call(*c.split("->")) for c in calls)) for n, calls in methods))


def worked_example() -> AppBundle:
    """Manifest, layouts L1/L2 and code root com holding tb (x1, x2) and an empty xz."""
    x1 = unit("com.tb.x1", ("onCreate", ["com.tb.x2->go", "android.util.Log->d", "java.io.File->exists"]))
    x2 = unit("com.tb.x2", ("go", ["java.lang.String->length", "com.tb.x1->onCreate"]))
    tree = DirTree((DirNode("com", (DirNode("tb", (), (x1, x2)), DirNode("xz"))),))
    manifest = ManifestInfo(frozenset({"android.permission.INTERNET"}), ("com.tb.x1",))
    layouts = (LayoutFile("L1", ("com.tb.x1", "android.widget.TextView")), LayoutFile("L2", ("com.tb.x2",)))
    return AppBundle(manifest, tree, layouts)


def minimal_bundle() -> AppBundle:
    x = unit("com.A", ("run", ["android.util.Log->d"]))
    return AppBundle(ManifestInfo(), DirTree((DirNode("com", (), (x,)),)))


@pytest.fixture
def example_bundle() -> AppBundle:
    return worked_example()


SMALL_SPEC = CorpusSpec(benign=60, malicious=40, seed=3)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SMALL_SPEC)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# acceptance verdicts, echoed in the terminal summary so they survive output capture
VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        VERDICTS.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
