import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import worked_example
from markovdroid.abstraction import FAMILIES, KNOWN_FAMILIES, N_FAMILIES, Family, abstract_name
from markovdroid.attack import (AttackConfig, AttackError, AttackStatistics, Constant, PermissionProfile, UniformInt,
                                UniformReal, change_occurrences, family_mass, make_variant_config,
                                permission_perturb, report_rows, select_elements_blackhole,
                                select_elements_random, select_elements_train_stats, structure_break,
                                write_attack_report, REPORT_HEADER)
from markovdroid.bundle import check_integrity
from markovdroid.corpus import BENIGN, MALICIOUS, CorpusSpec, generate_corpus
from markovdroid.markov import bundle_features, feature_matrix
from markovdroid.models import fit


def tree_shape(tree):
    def node(n):
        return {c.name: node(c) for c in n.children} | {u.name: None for u in n.units}
    return {r.name: node(r) for r in tree.roots}


def worked_example_draw():
    """Seed under which the example picks f=android and the tb directory."""
    cfg = AttackConfig((Family.ANDROID, Family.JAVA), Constant(1), Constant(0.5))
    for seed in range(200):
        out, rmap = structure_break(worked_example(), cfg, np.random.default_rng(seed))
        if rmap.element == Family.ANDROID and rmap.entries == (("com.tb", "android.tb"),):
            return out, rmap
    raise AssertionError("no seed reproduces the example draw")


def test_worked_example_output_tree():
    out, rmap = worked_example_draw()
    assert tree_shape(out.code_tree) == {"com": {"xz": {}}, "android": {"tb": {"x1": None, "x2": None}}}
    assert rmap.level == 1 and rmap.ratio == 0.5
    assert out.manifest.components == ("android.tb.x1",)
    assert out.manifest.permissions == worked_example().manifest.permissions
    refs = {l.name: l.refs for l in out.layouts}
    assert refs == {"L1": ("android.tb.x1", "android.widget.TextView"), "L2": ("android.tb.x2",)}
    calls = [c.callee for u in out.code_tree.iter_units() for m in u.methods for c in m.calls]
    assert "android.tb.x2" in calls and "android.tb.x1" in calls
    assert not any(c.startswith("com.tb") for c in calls)
    assert check_integrity(out) == []


@pytest.mark.parametrize("line, expected", [
    ("call com.tb.x1->run", "call android.tb.x1->run"),
    ("ref: com.tb", "ref: android.tb"),
    ("call java.io.File->exists", "call java.io.File->exists"),
    ("ref: com.tbx.Q", "ref: com.tbx.Q"),
    ("ref: xcom.tb.Q", "ref: xcom.tb.Q"),
    ("ref: org.com.tb.Q", "ref: org.com.tb.Q"),
])
def test_change_occurrences(line, expected):
    assert change_occurrences([line], "com.tb", "android.tb") == [expected]


def test_change_occurrences_rejects_empty_prefix():
    with pytest.raises(AttackError):
        change_occurrences(["x"], "", "y")


def test_zero_ratio_is_noop():
    b = worked_example()
    out, rmap = structure_break(b, AttackConfig((Family.ANDROID,), Constant(1), Constant(0.0)))
    assert out is b and len(rmap) == 0


def test_level_equal_to_height_is_empty():
    b = worked_example()
    out, rmap = structure_break(b, AttackConfig((Family.ANDROID,), Constant(2), Constant(1.0)))
    assert out is b and len(rmap) == 0


def test_collision_gets_suffix():
    # both level-0 roots move under android; "tb" exists at level 1 twice
    from conftest import unit
    from markovdroid.bundle import AppBundle, DirNode, DirTree
    a = unit("com.tb.A", ("run", ["net.tb.B->go"]))
    b = unit("net.tb.B", ("go", ["android.util.Log->d"]))
    bundle = AppBundle(code_tree=DirTree((DirNode("com", (DirNode("tb", (), (a,)),)),
                                          DirNode("net", (DirNode("tb", (), (b,)),)))))
    out, rmap = structure_break(bundle, AttackConfig((Family.ANDROID,), Constant(1), Constant(1.0)))
    assert rmap.entries == (("com.tb", "android.tb"), ("net.tb", "android.tb_1"))
    assert out.code_tree.unit_names == {"android.tb.A", "android.tb_1.B"}
    assert check_integrity(out) == []


def mass_fixture(masses: dict) -> np.ndarray:
    """One app whose family masses are exactly ``masses`` (placed on self-loops)."""
    m = np.zeros((N_FAMILIES, N_FAMILIES))
    for fam, v in masses.items():
        m[fam.index, fam.index] = v
    return m.reshape(1, -1)


def test_family_mass_of_fixture():
    X = mass_fixture({Family.ANDROID: 0.9, Family.JAVA: 0.05})
    assert family_mass(X)[0, Family.ANDROID.index] == pytest.approx(0.9)


def test_train_stats_selection():
    ben = mass_fixture({Family.ANDROID: 2.0, Family.JAVA: 0.5})
    mal = mass_fixture({Family.ANDROID: 0.1, Family.JAVA: 0.4})
    assert select_elements_train_stats(ben, mal) == [Family.ANDROID]
    ben = mass_fixture({Family.JAVA: 1.0})
    mal = mass_fixture({Family.SELF_DEFINED: 1.0})
    assert select_elements_train_stats(ben, mal) == [Family.JAVA]


def test_train_stats_tie_goes_to_index_zero():
    X = mass_fixture({Family.JAVA: 1.0})
    assert select_elements_train_stats(X, X) == [KNOWN_FAMILIES[0]]


def test_blackhole_selection():
    all_but_json = {f: 0.9 if f == Family.ANDROID else 0.05 for f in KNOWN_FAMILIES if f != Family.JSON}
    assert select_elements_blackhole(mass_fixture(all_but_json)) == [Family.JSON]
    uniform = mass_fixture({f: 1.0 for f in KNOWN_FAMILIES})
    assert select_elements_blackhole(uniform) == [KNOWN_FAMILIES[0]]
    zero_xml = mass_fixture({f: 1.0 for f in KNOWN_FAMILIES if f != Family.XML})
    assert select_elements_blackhole(zero_xml) == [Family.XML]


def test_selection_needs_data():
    with pytest.raises(AttackError):
        select_elements_blackhole(np.zeros((0, 121)))
    with pytest.raises(AttackError):
        select_elements_train_stats(np.zeros((0, 121)), np.zeros((1, 121)))


def test_random_selection():
    assert select_elements_random(KNOWN_FAMILIES, 1, seed=3) == select_elements_random(KNOWN_FAMILIES, 1, seed=3)
    three = select_elements_random(KNOWN_FAMILIES, 3, seed=3)
    assert len(set(three)) == 3 and all(f.is_known for f in three)
    assert select_elements_random(KNOWN_FAMILIES, len(KNOWN_FAMILIES)) == list(KNOWN_FAMILIES)
    with pytest.raises(AttackError):
        select_elements_random(KNOWN_FAMILIES, 0)
    with pytest.raises(AttackError):
        select_elements_random(KNOWN_FAMILIES, 10)


def test_variant_configs():
    ben = mass_fixture({Family.JAVA: 1.0})
    mal = mass_fixture({Family.ANDROID: 1.0})
    stats = AttackStatistics(ben, mal, mass_fixture({f: 1.0 for f in KNOWN_FAMILIES if f != Family.DOM}))
    cfg = make_variant_config("full_statistical", stats)
    assert cfg.mode_elements == (Family.JAVA,)
    assert cfg.level_policy == Constant(0) and cfg.ratio_policy == Constant(1)
    cfg = make_variant_config("black_hole", stats)
    assert cfg.mode_elements == (Family.DOM,)
    a, b = make_variant_config("random", seed=4), make_variant_config("random", seed=4)
    assert a == b and isinstance(a.level_policy, UniformInt) and isinstance(a.ratio_policy, UniformReal)
    with pytest.raises(AttackError):
        AttackConfig((Family.SELF_DEFINED,), Constant(0), Constant(1))
    with pytest.raises(AttackError):
        AttackConfig((Family.JAVA,), Constant(0), Constant(1), variant="nope")


@pytest.fixture(scope="module")
def malicious_apps():
    corpus = generate_corpus(CorpusSpec(benign=0, malicious=60, seed=9))
    return [b for b, _ in corpus]


def counts(bundle):
    units = list(bundle.code_tree.iter_units())
    return len(units), sum(len(u.methods) for u in units), sum(u.n_calls for u in units)


@pytest.mark.parametrize("variant", ["random", "full_statistical", "black_hole"])
def test_structure_break_invariants(malicious_apps, variant):
    X = feature_matrix(malicious_apps)
    stats = AttackStatistics(mass_fixture({Family.JAVA: 1.0}), X, X)
    cfg = make_variant_config(variant, stats, seed=1)
    for i, b in enumerate(malicious_apps):
        out, rmap = structure_break(b, cfg, np.random.default_rng(i))
        assert check_integrity(out) == []
        assert counts(out) == counts(b)
        assert out.manifest.permissions == b.manifest.permissions
        f = rmap.element
        moved = [new for _, new in rmap.entries]
        for u in out.code_tree.iter_units():
            if any(u.qualified_name.startswith(p + ".") for p in moved):
                assert abstract_name(u.qualified_name) == f


def test_full_statistical_moves_everything(malicious_apps):
    cfg = AttackConfig((Family.JAVA,), Constant(0), Constant(1), "full_statistical")
    for b in malicious_apps[:20]:
        out, _ = structure_break(b, cfg)
        assert [r.name for r in out.code_tree.roots] == ["java"]
        app_calls = [c for u in out.code_tree.iter_units() for m in u.methods for c in m.calls
                     if c.callee in out.code_tree.unit_names]
        assert all(abstract_name(c.callee) == Family.JAVA for c in app_calls)
        assert all(abstract_name(u.qualified_name) == Family.JAVA for u in out.code_tree.iter_units())


def test_full_statistical_is_idempotent(malicious_apps):
    cfg = AttackConfig((Family.JAVA,), Constant(0), Constant(1), "full_statistical")
    once, _ = structure_break(malicious_apps[0], cfg)
    twice, rmap = structure_break(once, cfg)
    assert twice == once and len(rmap) == 0


def test_full_statistical_moves_features_at_least_as_far_as_random(malicious_apps):
    X = feature_matrix(malicious_apps)
    full = AttackConfig((Family.JAVA,), Constant(0), Constant(1), "full_statistical")
    rand = AttackConfig((Family.JAVA,), UniformInt(), UniformReal(), "random")
    d_full = d_rand = 0.0
    for i, b in enumerate(malicious_apps):
        d_full += np.abs(bundle_features(structure_break(b, full)[0]) - X[i]).sum()
        d_rand += np.abs(bundle_features(structure_break(b, rand, np.random.default_rng(i))[0]) - X[i]).sum()
    assert d_full >= d_rand


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(KNOWN_FAMILIES))
def test_random_attack_keeps_integrity(seed, family):
    b = generate_corpus(CorpusSpec(benign=0, malicious=1, seed=seed % 1000))[0][0]
    out, _ = structure_break(b, AttackConfig((family,), UniformInt(), UniformReal()), np.random.default_rng(seed))
    assert check_integrity(out) == []
    assert counts(out) == counts(b)


def test_report_rows(tmp_path):
    _, rmap = worked_example_draw()
    rows = report_rows("app1", "random", rmap)
    assert rows == [["app1", "random", "android", "1", "0.5", "com.tb", "android.tb"]]
    write_attack_report(tmp_path / "r.csv", rows)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == ",".join(REPORT_HEADER)


# permission perturbation

@pytest.fixture(scope="module")
def perm_corpus():
    corpus = generate_corpus(CorpusSpec(benign=200, malicious=60, seed=4))
    return [b for b, _ in corpus], np.array([y for _, y in corpus])


def test_permission_budget_zero_is_noop(perm_corpus):
    bundles, labels = perm_corpus
    profile = PermissionProfile.from_corpus(bundles, labels)
    b = bundles[int(np.nonzero(labels == MALICIOUS)[0][0])]
    assert permission_perturb(b, profile, budget=0) is b


def test_full_budget_reaches_modal_profile(perm_corpus):
    bundles, labels = perm_corpus
    profile = PermissionProfile.from_corpus(bundles, labels)
    for i in np.nonzero(labels == MALICIOUS)[0][:10]:
        out = permission_perturb(bundles[i], profile, seed=int(i))
        assert out.manifest.permissions == profile.modal
        assert out.code_tree == bundles[i].code_tree and out.layouts == bundles[i].layouts


def test_perturb_shifts_permission_model_toward_benign(perm_corpus):
    from markovdroid.fusion import build_permission_vocab, permission_matrix
    bundles, labels = perm_corpus
    vocab = build_permission_vocab(bundles, labels)
    model = fit("DT", permission_matrix(bundles, vocab), labels)
    profile = PermissionProfile.from_corpus(bundles, labels)
    mal = [bundles[i] for i in np.nonzero(labels == MALICIOUS)[0]]
    before = model.predict_proba(permission_matrix(mal, vocab)).mean()
    after = model.predict_proba(permission_matrix([permission_perturb(b, profile) for b in mal], vocab)).mean()
    assert after < before


def test_perturb_needs_benign_profile(perm_corpus):
    with pytest.raises(AttackError):
        permission_perturb(perm_corpus[0][0], PermissionProfile())


def test_moved_root_does_not_shadow_library_package():
    from conftest import unit
    from markovdroid.bundle import AppBundle, DirNode, DirTree
    a = unit("io.A", ("run", ["java.io.File->exists"]))
    bundle = AppBundle(code_tree=DirTree((DirNode("io", (), (a,)),)))
    out, rmap = structure_break(bundle, AttackConfig((Family.JAVA,), Constant(0), Constant(1.0)))
    assert rmap.entries == (("io", "java.io_1"),)
    assert check_integrity(out) == []
    calls = [c.callee for u in out.code_tree.iter_units() for m in u.methods for c in m.calls]
    assert calls == ["java.io.File"]
