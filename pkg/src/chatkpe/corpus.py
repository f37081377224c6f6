"""Chat-log corpus loading, gold-keyphrase alignment, and word-balanced
cross-validation folds.

Corpus files are UTF-8 JSON lines, one record per line with fields ``id``
(string), ``text`` (string), and ``keyphrases`` (array of strings).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError, DataError
from .textseg import WordToken, word_count, word_tokens

logger = logging.getLogger(__name__)


@dataclass
class ChatDocument:
    id: str
    text: str
    gold_keyphrases: list[str] = field(default_factory=list)
    gold_spans: list[tuple[int, int]] = field(default_factory=list)
    word_count: int = 0

    def __post_init__(self):
        if self.word_count == 0:
            self.word_count = word_count(self.text)


@dataclass
class AlignmentRules:
    """Rule set for matching normalized gold phrases against raw chat text.

    Precedence is fixed: exact, then abbreviation-lexicon substitution, then
    suffix match (gold "suck" matches text "sucking"), then an edit-distance
    fallback. Lexicon keys may span two normalized words ("want to" ->
    "wanna").
    """

    abbreviation_lexicon: dict[str, frozenset[str]] = field(default_factory=dict)
    allow_suffix_match: bool = True
    max_edit_distance: int = 1

    def __post_init__(self):
        if self.max_edit_distance > 2 or self.max_edit_distance < 0:
            raise ConfigError("max_edit_distance must be in [0, 2]")
        fixed = {}
        for key, variants in self.abbreviation_lexicon.items():
            fixed[key.lower()] = frozenset(v.lower() for v in variants)
        self.abbreviation_lexicon = fixed


@dataclass
class FoldAssignment:
    n_folds: int
    doc_to_fold: dict[str, int]
    fold_word_totals: list[int]

    def fold_members(self, fold: int) -> list[str]:
        return [d for d, f in self.doc_to_fold.items() if f == fold]


# ----------------------------------------------------------------- loading


def load_corpus(path: str | Path) -> list[ChatDocument]:
    """Read a JSON-lines corpus file, validating ids and text."""
    path = Path(path)
    docs: list[ChatDocument] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise DataError(f"{path}: line {lineno}: record is not an object")
            doc_id = rec.get("id")
            if not isinstance(doc_id, str) or not doc_id:
                raise DataError(f"{path}: line {lineno}: missing or empty 'id'")
            text = rec.get("text")
            if not isinstance(text, str) or not text:
                raise DataError(f"{path}: line {lineno}: missing or empty 'text'")
            if doc_id in seen:
                raise DataError(
                    f"{path}: duplicate id {doc_id!r} on lines {seen[doc_id]} and {lineno}"
                )
            seen[doc_id] = lineno
            phrases = rec.get("keyphrases", [])
            if not isinstance(phrases, list) or any(not isinstance(p, str) for p in phrases):
                raise DataError(f"{path}: line {lineno}: 'keyphrases' must be an array of strings")
            docs.append(ChatDocument(id=doc_id, text=text, gold_keyphrases=list(phrases)))
    return docs


def write_corpus(docs: list[ChatDocument], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for doc in docs:
            rec = {"id": doc.id, "text": doc.text, "keyphrases": doc.gold_keyphrases}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_lexicon(path: str | Path) -> dict[str, frozenset[str]]:
    """Lexicon file: one ``normalized<TAB>variant1,variant2`` per line."""
    lex: dict[str, frozenset[str]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if "\t" not in line:
                raise DataError(f"lexicon line {lineno}: expected 'key<TAB>variants'")
            key, variants = line.split("\t", 1)
            lex[key.strip().lower()] = frozenset(
                v.strip().lower() for v in variants.split(",") if v.strip()
            )
    return lex


def default_rules() -> AlignmentRules:
    """Rules with the packaged chat-abbreviation lexicon."""
    ref = resources.files("chatkpe.data").joinpath("chat_lexicon.tsv")
    with resources.as_file(ref) as p:
        lex = load_lexicon(p)
    return AlignmentRules(abbreviation_lexicon=lex)


# --------------------------------------------------------------- alignment


def _edit_distance(a: str, b: str, cap: int) -> int:
    if abs(len(a) - len(b)) > cap:
        return cap + 1
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        best = i
        for j, cb in enumerate(b, start=1):
            cost = prev[j - 1] + (ca != cb)
            cost = min(cost, prev[j] + 1, cur[-1] + 1)
            cur.append(cost)
            best = min(best, cost)
        if best > cap:
            return cap + 1
        prev = cur
    return prev[-1]


def _match_from(
    phrase: list[str],
    tokens: list[WordToken],
    t_start: int,
    level: int,
    rules: AlignmentRules,
) -> int | None:
    """Try to consume the whole phrase starting at tokens[t_start] using
    rules up to ``level``. Returns the exclusive end token index, or None.

    Levels: 0 exact only, 1 +lexicon, 2 +suffix, 3 +edit distance.
    Options at each position are tried in precedence order with
    backtracking; longer lexicon keys are preferred.
    """

    def step(p: int, t: int) -> int | None:
        if p == len(phrase):
            return t
        if t >= len(tokens):
            return None
        surf = tokens[t].surface
        if surf == phrase[p]:
            r = step(p + 1, t + 1)
            if r is not None:
                return r
        if level >= 1:
            for klen in (2, 1):
                if p + klen <= len(phrase):
                    key = " ".join(phrase[p : p + klen])
                    variants = rules.abbreviation_lexicon.get(key)
                    if variants and surf in variants:
                        r = step(p + klen, t + 1)
                        if r is not None:
                            return r
        if level >= 2 and rules.allow_suffix_match:
            if len(surf) > len(phrase[p]) and surf.startswith(phrase[p]):
                r = step(p + 1, t + 1)
                if r is not None:
                    return r
        if level >= 3 and rules.max_edit_distance > 0:
            if _edit_distance(surf, phrase[p], rules.max_edit_distance) <= rules.max_edit_distance:
                r = step(p + 1, t + 1)
                if r is not None:
                    return r
        return None

    return step(0, t_start)


def align_keyphrase(
    phrase: str, doc: ChatDocument, rules: AlignmentRules
) -> list[tuple[int, int]]:
    """Find every non-overlapping character span of ``doc.text`` matching the
    normalized phrase. If any exact match exists, only exact spans are
    returned; weaker rules apply only when all stronger levels fail."""
    if not phrase or phrase != phrase.lower():
        raise ConfigError("phrase must be non-empty and lowercase-normalized")
    phrase_tokens = [t.surface for t in word_tokens(phrase)]
    if not phrase_tokens:
        return []
    tokens = word_tokens(doc.text)
    max_level = 3 if rules.max_edit_distance > 0 else (2 if rules.allow_suffix_match else 1)
    for level in range(0, max_level + 1):
        spans: list[tuple[int, int]] = []
        t = 0
        while t < len(tokens):
            end = _match_from(phrase_tokens, tokens, t, level, rules)
            if end is not None:
                spans.append((tokens[t].start, tokens[end - 1].end))
                t = end
            else:
                t += 1
        if spans:
            return spans
    return []


def annotate_corpus(
    docs: list[ChatDocument], rules: AlignmentRules | None = None
) -> dict[str, int]:
    """Fill ``gold_spans`` for every document by aligning each gold phrase.

    Unalignable phrases stay in ``gold_keyphrases`` (they still count toward
    recall at evaluation time) but contribute no spans. Returns counters.
    """
    if rules is None:
        rules = default_rules()
    stats = {"phrases": 0, "aligned": 0, "unaligned": 0, "spans": 0}
    for doc in docs:
        spans: list[tuple[int, int]] = []
        for phrase in doc.gold_keyphrases:
            stats["phrases"] += 1
            norm = " ".join(phrase.lower().split())
            if not norm:
                stats["unaligned"] += 1
                continue
            found = align_keyphrase(norm, doc, rules)
            if found:
                stats["aligned"] += 1
                stats["spans"] += len(found)
                spans.extend(found)
            else:
                stats["unaligned"] += 1
                logger.warning("doc %s: gold phrase %r has no alignable span", doc.id, phrase)
        doc.gold_spans = sorted(set(spans))
    return stats


# ------------------------------------------------------------------- folds


def make_folds(docs: list[ChatDocument], n_folds: int, seed: int) -> FoldAssignment:
    """Greedy longest-processing-time fold assignment balancing word totals.

    Documents are taken in word_count-descending order (ties by id) and each
    goes to the currently lightest fold. Deterministic; ``seed`` is part of
    the signature for reproducibility bookkeeping but the ordering above
    already fixes the result.
    """
    if n_folds < 1:
        raise ConfigError("n_folds must be positive")
    if n_folds > len(docs):
        raise ConfigError(f"n_folds={n_folds} exceeds corpus size {len(docs)}")
    order = sorted(docs, key=lambda d: (-d.word_count, d.id))
    totals = [0] * n_folds
    assignment: dict[str, int] = {}
    for doc in order:
        fold = min(range(n_folds), key=lambda f: (totals[f], f))
        assignment[doc.id] = fold
        totals[fold] += doc.word_count
    return FoldAssignment(n_folds=n_folds, doc_to_fold=assignment, fold_word_totals=totals)
