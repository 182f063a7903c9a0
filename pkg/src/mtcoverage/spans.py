"""Potential error spans: complete, contiguous dependency subtrees.

A span qualifies as a deletion candidate when it (1) is a complete subtree
of the dependency tree, (2) covers a contiguous token subsequence, and
(3) contains at least one part of speech of interest. The subtree covering
the whole sentence is never a candidate.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .conllu import DepSentence, DepToken, reconstruct_text, token_offsets

__all__ = [
    "DEFAULT_POS_OF_INTEREST",
    "PosConfig",
    "ErrorSpanCandidate",
    "SpanMismatchError",
    "subtree_ids",
    "extract_spans",
    "token_level_spans",
    "make_partial",
    "prune_subtrees",
]

# Content-bearing UPOS tags: common nouns, proper nouns, main verbs,
# adjectives, numerals, adverbs, interjections. AUX is deliberately not
# included; it is reserved for auxiliaries.
DEFAULT_POS_OF_INTEREST = frozenset(
    {"NOUN", "PROPN", "VERB", "ADJ", "NUM", "ADV", "INTJ"}
)


class SpanMismatchError(ValueError):
    """A span was applied to a sentence it was not extracted from."""


@dataclass(frozen=True, slots=True)
class PosConfig:
    """The UPOS tags that make a subtree worth considering for deletion."""

    pos_of_interest: frozenset[str] = DEFAULT_POS_OF_INTEREST

    def __post_init__(self):
        object.__setattr__(self, "pos_of_interest", frozenset(self.pos_of_interest))
        if not self.pos_of_interest:
            raise ValueError("pos_of_interest must not be empty")

    @classmethod
    def from_file(cls, path: str | Path) -> "PosConfig":
        """Load a plain list of UPOS tags (one per line, # comments allowed)."""
        tags: set[str] = set()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            entry = line.split("#", 1)[0].strip()
            if entry:
                tags.update(entry.replace(",", " ").split())
        return cls(pos_of_interest=frozenset(tags))


@dataclass(frozen=True, slots=True)
class ErrorSpanCandidate:
    """A deletable span: the complete subtree rooted at ``head_id``.

    ``char_range`` indexes into the reconstructed full sentence text and
    ``text`` is the corresponding surface slice.
    """

    head_id: int
    token_ids: frozenset[int]
    char_range: tuple[int, int]
    text: str

    def __post_init__(self):
        object.__setattr__(self, "token_ids", frozenset(self.token_ids))


def _children_index(sentence: DepSentence) -> dict[int, list[int]]:
    children: dict[int, list[int]] = {}
    for tok in sentence.tokens:
        children.setdefault(tok.head, []).append(tok.id)
    return children


def subtree_ids(sentence: DepSentence, head_id: int) -> frozenset[int]:
    """Ids of ``head_id`` and all its transitive dependents."""
    sentence.token(head_id)  # raises KeyError for unknown ids
    return _collect(_children_index(sentence), head_id)


def _is_contiguous(ids: frozenset[int]) -> bool:
    return len(ids) == max(ids) - min(ids) + 1


def _candidate(
    head_id: int, ids: frozenset[int],
    offsets: dict[int, tuple[int, int]], full_text: str,
) -> ErrorSpanCandidate:
    start = offsets[min(ids)][0]
    end = offsets[max(ids)][1]
    return ErrorSpanCandidate(
        head_id=head_id,
        token_ids=ids,
        char_range=(start, end),
        text=full_text[start:end],
    )


def extract_spans(sentence: DepSentence, cfg: PosConfig | None = None) -> list[ErrorSpanCandidate]:
    """All candidate spans of a sentence, ordered by start id then size (largest first).

    Nested and overlapping candidates are all returned; the subtree that
    covers the entire sentence is excluded.
    """
    cfg = cfg or PosConfig()
    full_text = reconstruct_text(sentence)
    offsets = token_offsets(sentence)
    children = _children_index(sentence)
    n = len(sentence.tokens)

    candidates: list[ErrorSpanCandidate] = []
    for tok in sentence.tokens:
        ids = _collect(children, tok.id)
        if len(ids) == n:
            continue
        if not _is_contiguous(ids):
            continue
        if not any(sentence.token(i).upos in cfg.pos_of_interest for i in ids):
            continue
        candidates.append(_candidate(tok.id, ids, offsets, full_text))
    candidates.sort(key=lambda c: (min(c.token_ids), -len(c.token_ids)))
    return candidates


def _collect(children: dict[int, list[int]], head_id: int) -> frozenset[int]:
    collected: set[int] = set()
    stack = [head_id]
    while stack:
        node = stack.pop()
        if node in collected:
            continue
        collected.add(node)
        stack.extend(children.get(node, ()))
    return frozenset(collected)


def token_level_spans(sentence: DepSentence) -> list[ErrorSpanCandidate]:
    """One single-token span per token, ignoring tree structure and POS.

    Exhaustive per-token deletion treats every token as an independent
    constituent; it exists for ablation only and bypasses the complete-
    subtree guarantee of :func:`extract_spans`.
    """
    full_text = reconstruct_text(sentence)
    offsets = token_offsets(sentence)
    return [
        _candidate(tok.id, frozenset({tok.id}), offsets, full_text)
        for tok in sorted(sentence.tokens, key=lambda t: t.id)
    ]


def make_partial(sentence: DepSentence, span: ErrorSpanCandidate) -> str:
    """The sentence text with ``span`` deleted. May be ungrammatical."""
    if not span.token_ids <= sentence.ids():
        raise SpanMismatchError(
            f"span tokens {sorted(span.token_ids)} do not exist in "
            f"sentence {sentence.sent_id!r}"
        )
    return reconstruct_text(sentence, span.token_ids)


def prune_subtrees(sentence: DepSentence, exclude: Iterable[int]) -> DepSentence:
    """A new sentence with ``exclude`` removed and ids renumbered 1..m.

    ``exclude`` must be closed under the dependency relation (a union of
    complete subtrees), otherwise surviving tokens would dangle.
    """
    excluded = set(exclude)
    unknown = excluded - sentence.ids()
    if unknown:
        raise ValueError(f"unknown token ids {sorted(unknown)}")
    survivors = [t for t in sorted(sentence.tokens, key=lambda t: t.id) if t.id not in excluded]
    for tok in survivors:
        if tok.head in excluded:
            raise ValueError(
                f"token {tok.id} survives but its head {tok.head} is deleted; "
                "exclude must be a union of complete subtrees"
            )
    renumber = {tok.id: i for i, tok in enumerate(survivors, start=1)}
    renumber[0] = 0
    return DepSentence(
        tokens=tuple(
            DepToken(
                id=renumber[t.id],
                form=t.form,
                upos=t.upos,
                head=renumber[t.head],
                deprel=t.deprel,
                space_after=t.space_after,
            )
            for t in survivors
        ),
        sent_id=sentence.sent_id,
        text=None,
    )
