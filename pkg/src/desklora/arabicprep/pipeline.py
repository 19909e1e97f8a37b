"""End-to-end corpus preparation: clean, normalize, diacritics, segment,
dialect-tag, clitic-presegment; plus the matching text encoder used at
evaluation time so shards and eval inputs share one policy.
"""

import json

from ..errors import DataError
from .bpe import BpeVocab
from .dialect import DialectLexicon, tag_dialect
from .morph import morph_presegment
from .shards import Document
from .textops import NormalizationPolicy, clean, handle_diacritics, normalize, segment_sentences


def preprocess_text(text: str, policy: NormalizationPolicy) -> str:
    return handle_diacritics(normalize(clean(text), policy), policy)


def prepare_documents(
    raw_docs,
    policy: NormalizationPolicy,
    lexicon: DialectLexicon | None = None,
    per_sentence: bool = False,
) -> list[Document]:
    """Raw {text, source, dialect?} records to tagged, presegmented Documents.

    Documents that clean to nothing are dropped. Dialect tags from the input
    are trusted; missing tags come from the marker lexicon, per document or
    per sentence depending on `per_sentence`.
    """
    lexicon = lexicon or DialectLexicon.default(policy)
    out: list[Document] = []
    for raw in raw_docs:
        text = preprocess_text(raw.get("text", ""), policy)
        if not text:
            continue
        source = raw.get("source", "other")
        given = raw.get("dialect")
        units = segment_sentences(text) if per_sentence else [text]
        for unit in units:
            dialect = given if given else tag_dialect(unit, lexicon)[0]
            out.append(Document(text=morph_presegment(unit), source=source, dialect=dialect))
    return out


def read_jsonl(path):
    docs = []
    try:
        f = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read corpus {path}: {e}") from e
    with f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: invalid JSON: {e}") from e
            if not isinstance(obj, dict) or "text" not in obj:
                raise DataError(f"{path}:{line_no}: expected an object with a 'text' field")
            docs.append(obj)
    if not docs:
        raise DataError(f"{path}: no documents found")
    return docs


def encode_text(text: str, vocab: BpeVocab, policy: NormalizationPolicy) -> list[int]:
    """Tokenize free text exactly the way shard preparation does."""
    return vocab.encode(morph_presegment(preprocess_text(text, policy)))
