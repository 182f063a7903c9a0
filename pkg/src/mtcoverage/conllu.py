"""CoNLL-U ingestion for dependency-parsed sentences.

Reads the 10-column CoNLL-U format produced by Universal Dependencies
parsers, validates the tree structure, and reconstructs surface text with
optional token deletion. Multiword-token ranges (ids like ``3-4``) and
empty nodes (ids like ``3.1``) are skipped; only ``SpaceAfter=No`` is
interpreted from the MISC column.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from io import StringIO
from typing import IO, Iterable, Iterator

__all__ = [
    "ConlluParseError",
    "DepToken",
    "DepSentence",
    "parse_conllu",
    "validate_tree",
    "reconstruct_text",
    "token_offsets",
]

_NUM_COLUMNS = 10


class ConlluParseError(ValueError):
    """Malformed CoNLL-U input, annotated with sentence and line position."""

    def __init__(self, message: str, *, line: int | None = None, sentence: str | None = None):
        parts = []
        if sentence is not None:
            parts.append(f"sentence {sentence}")
        if line is not None:
            parts.append(f"line {line}")
        where = f" ({', '.join(parts)})" if parts else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.sentence = sentence


@dataclass(frozen=True, slots=True)
class DepToken:
    """One syntactic token of a dependency tree.

    ``head`` is the 1-based id of the governing token, 0 for the root.
    ``space_after`` is False when the MISC column carried ``SpaceAfter=No``.
    """

    id: int
    form: str
    upos: str
    head: int
    deprel: str
    space_after: bool = True

    def __post_init__(self):
        if self.id < 1:
            raise ValueError(f"token id must be >= 1, got {self.id}")
        if self.head < 0:
            raise ValueError(f"head must be >= 0, got {self.head}")
        if self.head == self.id:
            raise ValueError(f"token {self.id} cannot be its own head")
        if not self.form:
            raise ValueError(f"token {self.id} has an empty form")


@dataclass(frozen=True, slots=True)
class DepSentence:
    """An ordered, immutable dependency-parsed sentence."""

    tokens: tuple[DepToken, ...]
    sent_id: str = ""
    text: str | None = None
    _by_id: dict[int, DepToken] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "_by_id", {t.id: t for t in self.tokens})

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[DepToken]:
        return iter(self.tokens)

    def token(self, token_id: int) -> DepToken:
        try:
            return self._by_id[token_id]
        except KeyError:
            raise KeyError(f"sentence {self.sent_id!r} has no token {token_id}") from None

    def ids(self) -> frozenset[int]:
        return frozenset(t.id for t in self.tokens)


def validate_tree(sentence: DepSentence) -> list[str]:
    """Check structural invariants, returning every violation found.

    An empty list means the sentence is a well-formed single-rooted tree
    with consecutive ids 1..n and an acyclic head relation.
    """
    violations: list[str] = []
    tokens = sentence.tokens
    if not tokens:
        return ["sentence has no tokens"]

    ids = [t.id for t in tokens]
    seen: set[int] = set()
    for i in ids:
        if i in seen:
            violations.append(f"duplicate token id {i}")
        seen.add(i)
    expected = list(range(1, len(tokens) + 1))
    if sorted(seen) != expected:
        violations.append(
            f"token ids are not consecutive 1..{len(tokens)}: {sorted(seen)}"
        )

    roots = [t.id for t in tokens if t.head == 0]
    if not roots:
        violations.append("no root token (head=0)")
    elif len(roots) > 1:
        violations.append(f"multiple roots: tokens {sorted(roots)}")

    dangling = [t.id for t in tokens if t.head != 0 and t.head not in seen]
    for tid in dangling:
        violations.append(f"dangling head on token {tid}")

    # Cycle detection: follow heads from every token; reaching the root or an
    # already-cleared token clears the whole path.
    cleared: set[int] = set()
    reported: set[frozenset[int]] = set()
    for start in seen:
        path: list[int] = []
        on_path: set[int] = set()
        node = start
        while True:
            if node in cleared:
                cleared.update(path)
                break
            if node in on_path:
                cycle = frozenset(path[path.index(node):])
                if cycle not in reported:
                    reported.add(cycle)
                    violations.append(
                        f"cycle through tokens {{{', '.join(map(str, sorted(cycle)))}}}"
                    )
                cleared.update(path)
                break
            path.append(node)
            on_path.add(node)
            head = sentence._by_id[node].head if node in sentence._by_id else 0
            if head == 0 or head not in seen:
                cleared.update(path)
                break
            node = head

    return violations


def reconstruct_text(sentence: DepSentence, exclude: Iterable[int] = ()) -> str:
    """Concatenate token forms in id order, skipping ``exclude``.

    A single space follows each token unless its ``space_after`` is False;
    trailing whitespace is trimmed. Deleting tokens can and may produce
    ungrammatical text.
    """
    excluded = set(exclude)
    unknown = excluded - set(t.id for t in sentence.tokens)
    if unknown:
        raise ValueError(
            f"exclude references unknown token ids {sorted(unknown)} "
            f"in sentence {sentence.sent_id!r}"
        )
    pieces: list[str] = []
    for tok in sorted(sentence.tokens, key=lambda t: t.id):
        if tok.id in excluded:
            continue
        pieces.append(tok.form)
        if tok.space_after:
            pieces.append(" ")
    return "".join(pieces).rstrip()


def token_offsets(sentence: DepSentence) -> dict[int, tuple[int, int]]:
    """Character span of each token's form within ``reconstruct_text(sentence)``."""
    offsets: dict[int, tuple[int, int]] = {}
    pos = 0
    for tok in sorted(sentence.tokens, key=lambda t: t.id):
        offsets[tok.id] = (pos, pos + len(tok.form))
        pos += len(tok.form)
        if tok.space_after:
            pos += 1
    return offsets


def parse_conllu(source: str | IO[str]) -> list[DepSentence]:
    """Parse CoNLL-U text into validated sentences.

    ``source`` may be a string or a readable character stream. Multiword-token
    range lines are dropped (their component tokens are kept) and empty nodes
    are skipped. Any malformed line or tree-invariant violation raises
    :class:`ConlluParseError` naming the sentence and line.
    """
    stream = StringIO(source) if isinstance(source, str) else source
    sentences: list[DepSentence] = []
    block: list[tuple[int, str]] = []
    comments: dict[str, str] = {}

    def flush() -> None:
        nonlocal block, comments
        if block:
            sentences.append(_parse_block(block, comments, len(sentences) + 1))
        block = []
        comments = {}

    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if sep:
                comments[key.strip()] = value.strip()
            continue
        block.append((line_no, line))
    flush()
    return sentences


def _parse_block(
    lines: list[tuple[int, str]], comments: dict[str, str], ordinal: int
) -> DepSentence:
    sent_id = comments.get("sent_id", str(ordinal))
    tokens: list[DepToken] = []
    seen_ids: set[int] = set()

    for line_no, line in lines:
        cols = line.split("\t")
        if len(cols) != _NUM_COLUMNS:
            raise ConlluParseError(
                f"expected {_NUM_COLUMNS} tab-separated columns, got {len(cols)}",
                line=line_no,
                sentence=sent_id,
            )
        raw_id = cols[0]
        if "-" in raw_id or "." in raw_id:
            # Multiword-token range or empty node: not a syntactic token.
            continue
        try:
            tok_id = int(raw_id)
        except ValueError:
            raise ConlluParseError(
                f"non-integer token id {raw_id!r}", line=line_no, sentence=sent_id
            ) from None
        if tok_id in seen_ids:
            raise ConlluParseError(
                f"duplicate token id {tok_id}", line=line_no, sentence=sent_id
            )
        seen_ids.add(tok_id)
        try:
            head = int(cols[6])
        except ValueError:
            raise ConlluParseError(
                f"non-integer head {cols[6]!r}", line=line_no, sentence=sent_id
            ) from None
        misc = cols[9]
        space_after = not any(part == "SpaceAfter=No" for part in misc.split("|"))
        try:
            tokens.append(
                DepToken(
                    id=tok_id,
                    form=cols[1],
                    upos=cols[3],
                    head=head,
                    deprel=cols[7],
                    space_after=space_after,
                )
            )
        except ValueError as exc:
            raise ConlluParseError(str(exc), line=line_no, sentence=sent_id) from None

    sentence = DepSentence(
        tokens=tuple(tokens), sent_id=sent_id, text=comments.get("text")
    )
    violations = validate_tree(sentence)
    if violations:
        first_line = lines[0][0]
        raise ConlluParseError(
            "; ".join(violations), line=first_line, sentence=sent_id
        )
    return sentence
