"""Family-mode Markov malware features, structure-rewriting attacks, and fused permission defenses."""

from .abstraction import Family, abstract_name, extract_call_sequences
from .bundle import AppBundle, check_integrity, parse_bundle, write_bundle
from .markov import bundle_features, feature_matrix, feature_names

__version__ = "0.1.0"

__all__ = [
    "AppBundle", "Family", "abstract_name", "bundle_features", "check_integrity", "extract_call_sequences",
    "feature_matrix", "feature_names", "parse_bundle", "write_bundle",
]
