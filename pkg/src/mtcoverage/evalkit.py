"""Evaluation against gold annotations and predicted labels.

Covers segment-level precision/recall/F1 against span-style error
annotations (grouped per rater), pooled token-level Matthews correlation
for OK/BAD label streams, and Cohen's kappa for rater agreement, plus the
filtering rules applied to gold data before scoring.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

__all__ = [
    "ErrorMark",
    "GoldSegment",
    "LabelSequence",
    "FilterRules",
    "PRF",
    "GoldFormatError",
    "KeyMismatchError",
    "UndefinedKappaError",
    "load_gold",
    "filter_segments",
    "segment_prf",
    "word_mcc",
    "cohens_kappa",
    "load_predictions",
    "CATEGORY_FOR_KIND",
]

# MQM error categories corresponding to the detector's two kinds.
CATEGORY_FOR_KIND = {
    "omission": "Accuracy/Omission",
    "addition": "Accuracy/Addition",
}

_REQUIRED_COLUMNS = ("system", "seg_id", "rater", "source", "target", "category", "severity")


class GoldFormatError(ValueError):
    """Malformed gold annotation file."""

    def __init__(self, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line


class KeyMismatchError(KeyError):
    """Predictions and gold segments are not keyed identically."""


class UndefinedKappaError(ValueError):
    """Expected agreement is 1 with disagreeing raters; kappa is undefined."""


@dataclass(frozen=True, slots=True)
class ErrorMark:
    category: str
    severity: str = ""
    span: tuple[int, int] | None = None


@dataclass(frozen=True)
class GoldSegment:
    system: str
    seg_id: str
    source: str
    target: str
    rater_marks: Mapping[str, tuple[ErrorMark, ...]]

    @property
    def key(self) -> tuple[str, str]:
        return (self.system, self.seg_id)

    def has_category(self, category: str) -> bool:
        return any(
            mark.category == category
            for marks in self.rater_marks.values()
            for mark in marks
        )


@dataclass(frozen=True, slots=True)
class LabelSequence:
    tokens: tuple[str, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.tokens) != len(self.labels):
            raise ValueError(
                f"{len(self.tokens)} tokens but {len(self.labels)} labels"
            )
        unknown = set(self.labels) - {"OK", "BAD"}
        if unknown:
            raise ValueError(f"labels must be OK or BAD, got {sorted(unknown)}")


def load_gold(source: str | Path | IO[str]) -> list[GoldSegment]:
    """Read a tab-separated annotation file into grouped segments.

    The header must name system, seg_id, rater, source, target, category
    and severity; unknown extra columns are ignored. One row is one error
    mark; rows sharing (system, seg_id) merge into one segment with marks
    grouped per rater.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            return load_gold(fh)

    reader = csv.reader(source, delimiter="\t", quoting=csv.QUOTE_NONE)
    try:
        header = next(reader)
    except StopIteration:
        raise GoldFormatError("empty file: header row required") from None
    columns = {name.strip().lower(): i for i, name in enumerate(header)}
    missing = [c for c in _REQUIRED_COLUMNS if c not in columns]
    if missing:
        raise GoldFormatError(f"header lacks required columns {missing}", line=1)

    order: list[tuple[str, str]] = []
    grouped: dict[tuple[str, str], dict] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < len(header):
            raise GoldFormatError(
                f"expected at least {len(header)} columns, got {len(row)}", line=line_no
            )
        get = lambda name: row[columns[name]]
        key = (get("system"), get("seg_id"))
        if key not in grouped:
            order.append(key)
            grouped[key] = {
                "source": get("source"),
                "target": get("target"),
                "raters": {},
            }
        span = None
        if "span_start" in columns and "span_end" in columns:
            try:
                span = (int(get("span_start")), int(get("span_end")))
            except ValueError:
                span = None
        mark = ErrorMark(category=get("category"), severity=get("severity"), span=span)
        grouped[key]["raters"].setdefault(get("rater"), []).append(mark)

    return [
        GoldSegment(
            system=key[0],
            seg_id=key[1],
            source=grouped[key]["source"],
            target=grouped[key]["target"],
            rater_marks={r: tuple(marks) for r, marks in grouped[key]["raters"].items()},
        )
        for key in order
    ]


@dataclass(frozen=True, slots=True)
class FilterRules:
    """Exclusion rules applied before segment-level scoring."""

    max_marks: int = 5  # a rater hitting this many marks may have stopped early
    drop_multisentence: bool = True


_TERMINALS = ".!?。！？"
_CJK_TERMINALS = "。！？"


def _is_ideographic(ch: str) -> bool:
    return "一" <= ch <= "鿿" or "㐀" <= ch <= "䶿"


def has_sentence_boundary(text: str) -> bool:
    """Heuristic: terminal punctuation followed by a new sentence opener.

    A boundary is terminal punctuation followed by whitespace and an
    uppercase or ideographic character; for the fullwidth terminals an
    ideographic character may follow directly, since those scripts do not
    use spaces.
    """
    for i, ch in enumerate(text[:-1]):
        if ch not in _TERMINALS:
            continue
        rest = text[i + 1:]
        if ch in _CJK_TERMINALS and _is_ideographic(rest[0]):
            return True
        if rest[0].isspace():
            after = rest.lstrip()
            if after and (after[0].isupper() or _is_ideographic(after[0])):
                return True
    return False


def filter_segments(
    segments: Iterable[GoldSegment], rules: FilterRules | None = None
) -> tuple[list[GoldSegment], list[tuple[GoldSegment, str]]]:
    """Apply the exclusion rules; returns (kept, dropped-with-reason)."""
    rules = rules or FilterRules()
    kept: list[GoldSegment] = []
    dropped: list[tuple[GoldSegment, str]] = []
    for seg in segments:
        if rules.max_marks and any(
            len(marks) >= rules.max_marks for marks in seg.rater_marks.values()
        ):
            dropped.append((seg, "possible truncation"))
            continue
        if rules.drop_multisentence and (
            has_sentence_boundary(seg.source) or has_sentence_boundary(seg.target)
        ):
            dropped.append((seg, "multiple sentences"))
            continue
        kept.append(seg)
    return kept, dropped


@dataclass(frozen=True, slots=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int


def _safe_ratio(num: int, denom: int, what: str) -> float:
    if denom == 0:
        warnings.warn(f"{what} has a zero denominator; reporting 0.0", stacklevel=3)
        return 0.0
    return num / denom


def segment_prf(
    preds: Mapping, segments: Sequence[GoldSegment], category: str
) -> PRF:
    """Segment-level scores: a hit is any rater marking ``category`` anywhere.

    ``preds`` maps each segment key (``(system, seg_id)``) to a boolean
    predicted-positive flag and must cover exactly the given segments.
    """
    gold_keys = {seg.key for seg in segments}
    pred_keys = set(preds.keys())
    if gold_keys != pred_keys:
        extra = sorted(pred_keys - gold_keys)[:3]
        absent = sorted(gold_keys - pred_keys)[:3]
        raise KeyMismatchError(
            f"predictions and gold are keyed differently "
            f"(extra: {extra}, missing: {absent})"
        )
    tp = fp = fn = tn = 0
    for seg in segments:
        predicted = bool(preds[seg.key])
        actual = seg.has_category(category)
        if predicted and actual:
            tp += 1
        elif predicted:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    precision = _safe_ratio(tp, tp + fp, "precision")
    recall = _safe_ratio(tp, tp + fn, "recall")
    if precision + recall == 0:
        warnings.warn("F1 has a zero denominator; reporting 0.0", stacklevel=2)
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return PRF(precision, recall, f1, tp, fp, fn, tn)


def word_mcc(
    pred: Sequence[LabelSequence], gold: Sequence[LabelSequence]
) -> float:
    """Matthews correlation over the pooled token-level confusion matrix.

    BAD is the positive class. Degenerate pooled matrices (any zero
    marginal) yield 0.0 with a warning.
    """
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted segments vs {len(gold)} gold segments")
    tp = tn = fp = fn = 0
    for i, (p, g) in enumerate(zip(pred, gold)):
        if len(p.labels) != len(g.labels):
            raise ValueError(
                f"segment {i}: {len(p.labels)} predicted labels vs {len(g.labels)} gold"
            )
        for pl, gl in zip(p.labels, g.labels):
            if pl == "BAD" and gl == "BAD":
                tp += 1
            elif pl == "BAD":
                fp += 1
            elif gl == "BAD":
                fn += 1
            else:
                tn += 1
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        warnings.warn("MCC is undefined on a degenerate confusion matrix; reporting 0.0",
                      stacklevel=2)
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def cohens_kappa(a: Sequence, b: Sequence) -> float:
    """Chance-corrected agreement between two raters' categorical labels."""
    if len(a) != len(b):
        raise ValueError(f"label sequences differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("cannot compute agreement on zero items")
    n = len(a)
    observed = sum(1 for x, y in zip(a, b) if x == y) / n
    counts_a: dict = {}
    counts_b: dict = {}
    for x in a:
        counts_a[x] = counts_a.get(x, 0) + 1
    for y in b:
        counts_b[y] = counts_b.get(y, 0) + 1
    expected = sum(
        (counts_a.get(label, 0) / n) * (counts_b.get(label, 0) / n)
        for label in counts_a.keys() | counts_b.keys()
    )
    if expected >= 1.0:
        if list(a) == list(b):
            return 1.0
        raise UndefinedKappaError(
            "expected agreement is 1 but raters disagree; kappa undefined"
        )
    return (observed - expected) / (1.0 - expected)


def load_predictions(source: str | Path | IO[str]) -> dict[str, set[str]]:
    """Segment-level flags from a detection results file (JSON lines).

    Returns segment id -> the set of error kinds with at least one flagged
    span; a segment present in the file but without detections maps to an
    empty set.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return load_predictions(fh)
    flags: dict[str, set[str]] = {}
    for line in source:
        if not line.strip():
            continue
        record = json.loads(line)
        kinds = {det["kind"] for det in record.get("detections", ())}
        flags.setdefault(str(record["segment_id"]), set()).update(kinds)
    return flags
