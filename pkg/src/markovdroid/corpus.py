"""Seeded synthetic corpus generator and on-disk corpus layout.

Both classes share the same library-family mix: most calls go to library
families and app code is entered only occasionally, with malicious code staying
inside app code slightly longer. An app's own code is either fully readable or
fully obfuscated. Malicious apps that carry the code signal
also embed a small obfuscated payload package that their readable code calls
into, which no benign app does; malicious apps that carry the permission signal
request the SMS permission set. The two signals are drawn independently, so
either feature block alone misses a slice of the malicious population.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .abstraction import KNOWN_FAMILIES, Family
from .bundle import AppBundle, Call, CodeUnit, DirNode, DirTree, LayoutFile, ManifestInfo, Method, parse_bundle, write_bundle

BENIGN = 0
MALICIOUS = 1
LABEL_NAMES = {BENIGN: "benign", MALICIOUS: "malicious"}

PERM = "android.permission."
SIGNATURE_PERMISSIONS = {
    # name: (benign rate, rate in signal-carrying malicious apps)
    PERM + "SEND_SMS": (0.01, 0.98),
    PERM + "RECEIVE_SMS": (0.01, 0.98),
    PERM + "READ_SMS": (0.01, 0.98),
    PERM + "READ_PHONE_STATE": (0.25, 0.9),
}
COMMON_PERMISSIONS = {
    PERM + "INTERNET": 0.92,
    PERM + "ACCESS_NETWORK_STATE": 0.75,
    PERM + "WRITE_EXTERNAL_STORAGE": 0.45,
    PERM + "WAKE_LOCK": 0.3,
    PERM + "VIBRATE": 0.22,
    PERM + "ACCESS_WIFI_STATE": 0.3,
    PERM + "ACCESS_FINE_LOCATION": 0.18,
    PERM + "CAMERA": 0.12,
    PERM + "GET_ACCOUNTS": 0.14,
    PERM + "READ_CONTACTS": 0.08,
    PERM + "RECORD_AUDIO": 0.04,
    PERM + "BLUETOOTH": 0.03,
}

# Library classes callable from generated code, per known family.
API_CATALOG: dict[Family, tuple[tuple[str, str], ...]] = {
    Family.ANDROID: (
        ("android.util.Log", "d"), ("android.app.Activity", "onCreate"),
        ("android.content.Intent", "putExtra"), ("android.os.Bundle", "getString"),
        ("android.telephony.SmsManager", "sendTextMessage"), ("android.view.View", "setOnClickListener"),
        ("android.widget.TextView", "setText"), ("android.content.Context", "getSystemService"),
    ),
    Family.GOOGLE: (
        ("com.google.android.gms.ads.AdView", "loadAd"), ("com.google.gson.Gson", "toJson"),
        ("com.google.firebase.analytics.FirebaseAnalytics", "logEvent"),
    ),
    Family.JAVA: (
        ("java.lang.String", "valueOf"), ("java.util.ArrayList", "add"), ("java.io.File", "exists"),
        ("java.lang.StringBuilder", "append"), ("java.net.URL", "openConnection"),
        ("java.util.HashMap", "put"),
    ),
    Family.JAVAX: (("javax.crypto.Cipher", "doFinal"), ("javax.net.ssl.HttpsURLConnection", "connect")),
    Family.XML: (("org.xml.sax.XMLReader", "parse"), ("org.xml.sax.Attributes", "getValue")),
    Family.APACHE: (("org.apache.http.client.HttpClient", "execute"), ("org.apache.commons.io.IOUtils", "copy")),
    Family.JUNIT: (("junit.framework.Assert", "assertTrue"),),
    Family.JSON: (("org.json.JSONObject", "getString"), ("org.json.JSONArray", "length")),
    Family.DOM: (("org.w3c.dom.Document", "getElementsByTagName"), ("org.w3c.dom.Element", "getAttribute")),
}

BENIGN_FAMILY_MIX = {
    Family.ANDROID: 0.42, Family.GOOGLE: 0.1, Family.JAVA: 0.3, Family.JAVAX: 0.03, Family.XML: 0.02,
    Family.APACHE: 0.04, Family.JUNIT: 0.01, Family.JSON: 0.06, Family.DOM: 0.02,
}
MALICIOUS_FAMILY_MIX = dict(BENIGN_FAMILY_MIX)

APP_ROOTS = ("com", "net", "org", "de", "io")
WORDS = (
    "acme", "alpha", "bravo", "cloud", "delta", "echo", "falcon", "gamma", "harbor", "indigo",
    "jolly", "kite", "lumen", "magnet", "nova", "orbit", "pixel", "quartz", "raven", "sierra",
    "tango", "umbra", "vector", "willow", "xenon", "yonder", "zephyr", "core", "data", "media",
    "player", "sync", "tools", "util", "service", "net", "ads", "update", "store",
)
CLASS_WORDS = (
    "Main", "Splash", "Settings", "Helper", "Manager", "Service", "Receiver", "Adapter", "Loader",
    "Client", "Cache", "Config", "Handler", "Task", "Worker", "Provider", "View", "Model",
)
METHOD_WORDS = ("onCreate", "run", "init", "handle", "process", "send", "load", "update", "start", "check")
OBF_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class CorpusSpec:
    benign: int = 2000
    malicious: int = 200
    seed: int = 0
    min_height: int = 2
    max_height: int = 4
    max_children: int = 3
    units_per_leaf: tuple[int, int] = (2, 5)
    methods_per_unit: tuple[int, int] = (1, 3)
    calls_per_method: tuple[int, int] = (3, 10)
    # probability that the next call stays in app code, given the previous one did;
    # the class gap shows up as extra self-defined -> self-defined mass in malicious apps
    benign_self_stay: float = 0.15
    malicious_self_stay: float = 0.2
    # probability that a library call is followed by a call into app code
    self_entry: float = 0.04
    family_concentration: float = 8.0
    malicious_code_signal: float = 0.93
    # share of app-code calls that go to the payload package in code-signal apps
    payload_rate: float = 0.04
    malicious_permission_signal: float = 0.93
    obfuscation_rate: float = 0.05
    # obfuscated third-party package reached only through manifest components
    sdk_rate: float = 0.9
    custom_permission_rate: float = 0.1
    library_root_rate: float = 0.3

    def __post_init__(self):
        if self.benign < 0 or self.malicious < 0:
            raise ValueError("counts must be >= 0")
        for name in ("benign_self_stay", "malicious_self_stay", "self_entry", "payload_rate", "malicious_code_signal",
                     "malicious_permission_signal", "obfuscation_rate", "sdk_rate", "custom_permission_rate",
                     "library_root_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 1 <= self.min_height <= self.max_height:
            raise ValueError("need 1 <= min_height <= max_height")

    @property
    def expected_self_gap(self) -> float:
        """Configured malicious minus benign self-stay probability."""
        return self.malicious_self_stay - self.benign_self_stay

    def to_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out.append(f"{f.name} = {value}")
        return out

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "CorpusSpec":
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        defaults = cls()
        for key, raw in values.items():
            if key not in known:
                continue
            default = getattr(defaults, key)
            if isinstance(default, tuple):
                kwargs[key] = tuple(int(v) for v in str(raw).split(","))
            elif isinstance(default, bool):
                kwargs[key] = str(raw).lower() in ("1", "true", "yes")
            else:
                kwargs[key] = type(default)(raw)
        return cls(**kwargs)


class _AppBuilder:
    def __init__(self, spec: CorpusSpec, label: int, rng: np.random.Generator):
        self.spec = spec
        self.label = label
        self.rng = rng
        self.used_words: set[str] = set()
        self.stay = spec.malicious_self_stay if label == MALICIOUS else spec.benign_self_stay

    def word(self) -> str:
        choices = [w for w in WORDS if w not in self.used_words] or list(WORDS)
        w = choices[self.rng.integers(len(choices))]
        self.used_words.add(w)
        return w

    def pick(self, seq):
        return seq[self.rng.integers(len(seq))]

    def between(self, bounds: tuple[int, int]) -> int:
        lo, hi = bounds
        return int(self.rng.integers(lo, hi + 1))

    # --- tree shape -------------------------------------------------------

    def _skeleton(self, name: str, levels_left: int, force_deep: bool, obfuscated: bool, is_root=True) -> dict:
        node = {"name": name, "children": [], "n_units": 0}
        if levels_left <= 1:
            node["n_units"] = self.between(self.spec.units_per_leaf)
            return node
        n_children = self.between((1, self.spec.max_children))
        if obfuscated:
            names = [OBF_LETTERS[i] for i in self.rng.choice(26, n_children, replace=False)]
        else:
            names = [self.word() for _ in range(n_children)]
        for i, child in enumerate(names):
            deep = force_deep and i == 0
            depth = levels_left - 1 if deep or self.rng.random() < 0.6 else max(1, levels_left - 2)
            node["children"].append(self._skeleton(child, depth, deep, obfuscated, is_root=False))
        # units directly under a short root ("io") would read as obfuscated
        node["n_units"] = 0 if is_root else int(self.rng.integers(0, 2))
        return node

    def skeletons(self, obfuscated: bool, payload: bool) -> list[tuple[dict, str]]:
        """App-code skeletons tagged "app", "sdk" (obfuscated, entered only through the
        manifest) or "payload" (obfuscated, entered from app code)."""
        spec = self.spec
        height = self.between((spec.min_height, spec.max_height))
        taken: set[str] = set()

        def root_name() -> str:
            if obfuscated:
                name = self.pick([c for c in OBF_LETTERS if c not in taken])
            else:
                name = self.pick([r for r in APP_ROOTS if r not in taken])
            taken.add(name)
            return name

        out = [(self._skeleton(root_name(), height, True, obfuscated), "app")]
        if self.rng.random() < spec.library_root_rate:
            out.append((self._skeleton(root_name(), max(2, height - 1), True, obfuscated), "app"))
        # the payload takes the place of the third-party package, so both classes have
        # the same amount of obfuscated code
        has_sdk = self.rng.random() < spec.sdk_rate
        if payload or has_sdk:
            letter = self.pick([c for c in OBF_LETTERS if c not in taken])
            out.append((self._skeleton(letter, 2, True, True), "payload" if payload else "sdk"))
        return out

    # --- code --------------------------------------------------------------

    def unit_names(self, skel: dict, prefix: tuple[str, ...], obfuscated: bool, out: list):
        path = prefix + (skel["name"],)
        taken = {c["name"] for c in skel["children"]}
        names = []
        for i in range(skel["n_units"]):
            if obfuscated:
                base = OBF_LETTERS[i % 26].upper() + (str(i // 26) if i >= 26 else "")
            else:
                base = self.pick(CLASS_WORDS) + str(i)
            while base in taken or base in names:
                base += "x"
            names.append(base)
        skel["unit_names"] = names
        out.extend(".".join(path + (n,)) for n in names)
        for c in skel["children"]:
            self.unit_names(c, path, obfuscated, out)

    def method_calls(self, mix: np.ndarray, targets: list[str], methods_of: dict,
                     payload: Sequence[str] = (), force_payload: bool = False) -> tuple[Call, ...]:
        """``mix`` is the cumulative family distribution; ``payload`` units are reached from app code
        with probability ``payload_rate`` (the first call when ``force_payload``)."""
        spec = self.spec
        n = self.between(spec.calls_per_method)
        draws = self.rng.random((n, 4))
        families = np.minimum(np.searchsorted(mix, draws[:, 1], side="right"), len(mix) - 1)
        calls = []
        in_app = True  # the caller itself is app code
        for i, ((u_self, _, u_pick, u_payload), fam) in enumerate(zip(draws.tolist(), families.tolist())):
            to_payload = bool(payload) and ((force_payload and i == 0) or (in_app and u_payload < spec.payload_rate))
            p_self = self.stay if in_app else spec.self_entry
            if to_payload or (targets and u_self < p_self):
                pool = payload if to_payload else targets
                callee = pool[int(u_pick * len(pool))]
                options = methods_of[callee]
                calls.append(Call(callee, options[int(u_pick * len(pool) * len(options)) % len(options)]))
                in_app = True
            else:
                options = API_CATALOG[KNOWN_FAMILIES[fam]]
                cls_name, meth = options[int(u_pick * len(options))]
                calls.append(Call(cls_name, meth))
                in_app = False
        return tuple(calls)

    def build_node(self, skel: dict, prefix: tuple[str, ...], mix, targets, methods_of,
                   payload: Sequence[str], state: dict) -> DirNode:
        path = prefix + (skel["name"],)
        units = []
        for uname in skel["unit_names"]:
            qname = ".".join(path + (uname,))
            methods = []
            for mname in methods_of[qname]:
                force = bool(payload) and not state["entered"]
                state["entered"] = True
                methods.append(Method(mname, self.method_calls(mix, targets, methods_of, payload, force)))
            units.append(CodeUnit(qname, tuple(methods)))
        children = tuple(self.build_node(c, path, mix, targets, methods_of, payload, state) for c in skel["children"])
        return DirNode(skel["name"], children, tuple(units))

    # --- manifest -----------------------------------------------------------

    def permissions(self, perm_signal: bool) -> frozenset[str]:
        perms = set()
        for name, rate in COMMON_PERMISSIONS.items():
            if self.rng.random() < rate:
                perms.add(name)
        for name, (benign_rate, mal_rate) in SIGNATURE_PERMISSIONS.items():
            if self.rng.random() < (mal_rate if perm_signal else benign_rate):
                perms.add(name)
        if self.rng.random() < self.spec.custom_permission_rate:
            perms.add(f"com.{self.word()}{int(self.rng.integers(10**6))}.permission.C2D_MESSAGE")
        return frozenset(perms)

    def build(self) -> AppBundle:
        spec, rng = self.spec, self.rng
        malicious = self.label == MALICIOUS
        code_signal = malicious and rng.random() < spec.malicious_code_signal
        perm_signal = malicious and rng.random() < spec.malicious_permission_signal
        # a payload only stands out next to readable code
        obfuscated = rng.random() < spec.obfuscation_rate and not code_signal

        base_mix = MALICIOUS_FAMILY_MIX if malicious else BENIGN_FAMILY_MIX
        alpha = np.array([base_mix[f] for f in KNOWN_FAMILIES]) * spec.family_concentration
        mix = np.zeros(len(KNOWN_FAMILIES))
        nz = alpha > 0
        mix[nz] = rng.dirichlet(alpha[nz])
        cum_mix = np.cumsum(mix)

        skels = self.skeletons(obfuscated, code_signal)
        units: dict[str, list[str]] = {"app": [], "sdk": [], "payload": []}
        for skel, kind in skels:
            self.unit_names(skel, (), obfuscated or kind != "app", units[kind])
        targets, payload = units["app"], units["payload"]
        methods_of = {
            t: tuple(self.pick(METHOD_WORDS) + (str(i) if i else "") for i in range(self.between(spec.methods_per_unit)))
            for group in units.values() for t in group
        }
        roots = []
        for skel, kind in skels:
            if kind == "app":
                roots.append(self.build_node(skel, (), cum_mix, targets, methods_of, payload, {"entered": False}))
            else:
                # sdk and payload code only calls within its own package
                roots.append(self.build_node(skel, (), cum_mix, units[kind], methods_of, (), {"entered": True}))

        entry = {self.pick(targets) for _ in range(self.between((1, 3)))}
        if units["sdk"]:
            entry.add(self.pick(units["sdk"]))
        components = tuple(sorted(entry))
        layouts = []
        for i in range(self.between((0, 3))):
            refs = [self.pick(targets) for _ in range(self.between((1, 3)))]
            if rng.random() < 0.5:
                refs.append(self.pick(("android.widget.TextView", "android.widget.Button")))
            layouts.append(LayoutFile("activity_main" if i == 0 else f"layout_{i}", tuple(refs)))

        manifest = ManifestInfo(self.permissions(perm_signal), components)
        return AppBundle(manifest, DirTree(tuple(roots)), tuple(layouts))


def generate_app(spec: CorpusSpec, label: int, index: int) -> AppBundle:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, label, index]))
    return _AppBuilder(spec, label, rng).build()


def generate_corpus(spec: CorpusSpec) -> list[tuple[AppBundle, int]]:
    """Benign apps first, then malicious. App i of a class does not depend on the other counts."""
    corpus = [(generate_app(spec, BENIGN, i), BENIGN) for i in range(spec.benign)]
    corpus += [(generate_app(spec, MALICIOUS, i), MALICIOUS) for i in range(spec.malicious)]
    return corpus


def app_ids_for(corpus: Sequence[tuple[AppBundle, int]]) -> list[str]:
    counters = {BENIGN: 0, MALICIOUS: 0}
    ids = []
    for _, label in corpus:
        ids.append(f"{LABEL_NAMES[label][0]}{counters[label]:05d}")
        counters[label] += 1
    return ids


def write_corpus(corpus: Sequence[tuple[AppBundle, int]], path, app_ids: Sequence[str] | None = None) -> list[str]:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    ids = list(app_ids) if app_ids is not None else app_ids_for(corpus)
    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["app_id", "label"])
        for app_id, (bundle, label) in zip(ids, corpus):
            write_bundle(bundle, root / app_id)
            writer.writerow([app_id, LABEL_NAMES[label]])
    return ids


def read_corpus(path) -> tuple[list[str], list[tuple[AppBundle, int]]]:
    root = Path(path)
    by_name = {v: k for k, v in LABEL_NAMES.items()}
    ids, corpus = [], []
    with open(root / "labels.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["app_id"])
            corpus.append((parse_bundle(root / row["app_id"]), by_name[row["label"]]))
    return ids, corpus


def corpus_digest(corpus: Sequence[tuple[AppBundle, int]]) -> str:
    """Stable content hash of a corpus (serialized form, in order)."""
    h = hashlib.sha256()
    for bundle, label in corpus:
        h.update(f"label {label}\n".encode())
        for line in bundle.manifest.to_lines():
            h.update(line.encode() + b"\n")
        for layout in bundle.layouts:
            h.update(f"layout {layout.name}\n".encode())
            for line in layout.to_lines():
                h.update(line.encode() + b"\n")
        for unit in bundle.code_tree.iter_units():
            for line in unit.to_lines():
                h.update(line.encode() + b"\n")
        for path, _ in bundle.code_tree.iter_dirs():
            h.update(("dir " + "/".join(path) + "\n").encode())
    return h.hexdigest()


def spec_as_dict(spec: CorpusSpec) -> dict:
    return asdict(spec)
