"""Marker-lexicon dialect tagging.

Each dialect has a weighted term list; a text's score per dialect is the
weight sum of matched markers divided by its token count. Modern Standard
Arabic is the default class: it carries no markers and wins whenever no
dialect clears the threshold. Marker terms are normalized under the active
policy at load time so they match normalized text.
"""

import json
from dataclasses import dataclass
from importlib import resources

from .textops import NormalizationPolicy, clean, handle_diacritics, normalize

DIALECTS = ("MSA", "EGY", "GLF", "LEV", "MGR")
UNKNOWN = "UNK"
DEFAULT_THRESHOLD = 0.05


@dataclass
class DialectLexicon:
    markers: dict  # dialect -> list of (term, weight), terms pre-normalized

    @classmethod
    def from_mapping(cls, mapping: dict, policy: NormalizationPolicy | None = None) -> "DialectLexicon":
        policy = policy or NormalizationPolicy()
        markers: dict = {d: [] for d in DIALECTS if d != "MSA"}
        for dialect, entries in mapping.items():
            if dialect == "MSA":
                continue
            terms = []
            for entry in entries:
                term = handle_diacritics(normalize(clean(entry["term"]), policy), policy)
                if term:
                    terms.append((term, float(entry.get("weight", 1.0))))
            markers[dialect] = terms
        return cls(markers=markers)

    @classmethod
    def from_file(cls, path, policy: NormalizationPolicy | None = None) -> "DialectLexicon":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_mapping(json.load(f), policy)

    @classmethod
    def default(cls, policy: NormalizationPolicy | None = None) -> "DialectLexicon":
        data = resources.files("desklora.arabicprep").joinpath("data/dialect_lexicon.json")
        return cls.from_mapping(json.loads(data.read_text(encoding="utf-8")), policy)


def tag_dialect(
    text: str, lexicon: DialectLexicon, threshold: float = DEFAULT_THRESHOLD
) -> tuple[str, float]:
    """Return (dialect, confidence); MSA with confidence 0 when nothing matches."""
    tokens = text.split()
    if not tokens:
        return UNKNOWN, 0.0
    counts: dict[str, int] = {}
    for tok in tokens:
        counts[tok] = counts.get(tok, 0) + 1
    joined = " " + " ".join(tokens) + " "

    best_dialect = "MSA"
    best_score = 0.0
    for dialect in DIALECTS:
        if dialect == "MSA":
            continue
        score = 0.0
        for term, weight in lexicon.markers.get(dialect, []):
            if " " in term:
                score += weight * joined.count(f" {term} ")
            else:
                score += weight * counts.get(term, 0)
        score /= len(tokens)
        if score > best_score:  # ties keep the earlier dialect in fixed order
            best_score = score
            best_dialect = dialect
    if best_score >= threshold and best_dialect != "MSA":
        return best_dialect, best_score
    return "MSA", 0.0
