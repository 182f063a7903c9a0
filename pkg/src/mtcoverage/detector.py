"""Coverage-error detection by contrastive conditioning.

Omissions: score the translation against the full source and against each
partial source (one candidate span deleted); a span whose deletion raises
the score is flagged as untranslated. Additions mirror this with a reverse-
direction backend: the source is scored against the full and partial
translations, flagging superfluous translation spans.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .conllu import DepSentence, reconstruct_text
from .scoring import ScoreError, ScoreRequest, batch_score
from .spans import ErrorSpanCandidate, PosConfig, extract_spans, make_partial, token_level_spans

__all__ = [
    "Detection",
    "DetectorConfig",
    "SegmentPair",
    "BackendPair",
    "DetectionResult",
    "DetectionError",
    "MissingParseError",
    "detect_omissions",
    "detect_additions",
    "detect",
    "result_to_record",
]

OMISSION = "omission"
ADDITION = "addition"
_SIDE_FOR_KIND = {OMISSION: "source", ADDITION: "translation"}


class MissingParseError(ValueError):
    """A requested detection direction lacks the parse it needs."""


class DetectionError(RuntimeError):
    """Scoring failed while detecting; carries the offending span, if any."""

    def __init__(self, message: str, span: ErrorSpanCandidate | None = None):
        where = f" while scoring span {span.text!r}" if span is not None else ""
        super().__init__(f"{message}{where}")
        self.span = span


@dataclass(frozen=True, slots=True)
class Detection:
    """One flagged span with its contrastive score evidence."""

    kind: str  # omission | addition
    span: ErrorSpanCandidate
    delta: float  # partial_score - full_score, > margin for flagged spans
    full_score: float
    partial_score: float

    @property
    def side(self) -> str:
        return _SIDE_FOR_KIND[self.kind]


@dataclass(frozen=True, slots=True)
class DetectorConfig:
    margin: float = 0.0
    overlap_policy: str = "report_all"  # or maximal_delta_nonoverlapping
    pos: PosConfig = field(default_factory=PosConfig)
    token_level: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.margin) and self.margin >= 0):
            raise ValueError("margin must be finite and >= 0")
        if self.overlap_policy not in ("report_all", "maximal_delta_nonoverlapping"):
            raise ValueError(f"unknown overlap_policy {self.overlap_policy!r}")


@dataclass(frozen=True, slots=True)
class SegmentPair:
    """One source/translation segment, parsed on whichever sides are available."""

    seg_id: str
    source: DepSentence | None = None
    translation: DepSentence | None = None
    source_text: str | None = None
    translation_text: str | None = None

    def resolved_source_text(self) -> str | None:
        if self.source_text is not None:
            return self.source_text
        return reconstruct_text(self.source) if self.source is not None else None

    def resolved_translation_text(self) -> str | None:
        if self.translation_text is not None:
            return self.translation_text
        return reconstruct_text(self.translation) if self.translation is not None else None


@dataclass(frozen=True, slots=True)
class BackendPair:
    """Forward backend scores translation given source; reverse the mirror."""

    forward: object | None = None
    reverse: object | None = None


@dataclass(frozen=True, slots=True)
class DetectionResult:
    """Instrumented per-segment outcome.

    ``score_calls`` counts the distinct sequence scores the segment needs
    (the full text plus one per candidate span, per direction); on a cold
    cache this equals the backend round-trips performed.
    """

    seg_id: str
    detections: tuple[Detection, ...]
    modes: tuple[str, ...]
    score_calls: int
    wall_time: float
    backend: str


def _candidates(sentence: DepSentence, cfg: DetectorConfig) -> list[ErrorSpanCandidate]:
    if cfg.token_level:
        return token_level_spans(sentence)
    return extract_spans(sentence, cfg.pos)


def _contrast(
    kind: str,
    conditioning_sentence: DepSentence,
    scored_text: str,
    backend,
    cfg: DetectorConfig,
) -> tuple[list[Detection], int]:
    """Score ``scored_text`` against full and partial conditioning texts.

    Returns the flagged detections plus the number of distinct scores this
    direction requires (the full text and one per candidate span).
    """
    if not scored_text:
        raise ValueError("scored text must be non-empty")
    candidates = _candidates(conditioning_sentence, cfg)
    full_text = reconstruct_text(conditioning_sentence)
    reqs = [ScoreRequest("full", backend.direction, full_text, scored_text)]
    reqs.extend(
        ScoreRequest(
            f"partial-{cand.head_id}",
            backend.direction,
            make_partial(conditioning_sentence, cand),
            scored_text,
        )
        for cand in candidates
    )
    n_scores = len({(r.conditioning_text, r.scored_text) for r in reqs})
    results = batch_score(backend, reqs)
    if isinstance(results[0], ScoreError):
        raise DetectionError(str(results[0])) from results[0]
    full_score = results[0].score
    detections: list[Detection] = []
    for cand, res in zip(candidates, results[1:]):
        if isinstance(res, ScoreError):
            raise DetectionError(str(res), span=cand) from res
        delta = res.score - full_score
        if delta > cfg.margin:
            detections.append(
                Detection(
                    kind=kind,
                    span=cand,
                    delta=delta,
                    full_score=full_score,
                    partial_score=res.score,
                )
            )
    return detections, n_scores


def detect_omissions(
    src: DepSentence, translation: str, backend, cfg: DetectorConfig | None = None
) -> list[Detection]:
    """Flag source spans whose deletion makes the translation more likely."""
    return _contrast(OMISSION, src, translation, backend, cfg or DetectorConfig())[0]


def detect_additions(
    source: str, tgt: DepSentence, reverse_backend, cfg: DetectorConfig | None = None
) -> list[Detection]:
    """Flag translation spans whose deletion makes the source more likely.

    ``reverse_backend`` must score in the translation-to-source direction;
    the source text is the scored sequence throughout.
    """
    return _contrast(ADDITION, tgt, source, reverse_backend, cfg or DetectorConfig())[0]


def _nonoverlapping(detections: list[Detection]) -> list[Detection]:
    """Keep the highest-delta detections whose spans do not share tokens.

    Applied per side; ties broken toward longer spans, then earlier starts.
    """
    kept: list[Detection] = []
    taken: dict[str, set[int]] = {}
    ordered = sorted(
        detections,
        key=lambda d: (-d.delta, -len(d.span.token_ids), min(d.span.token_ids)),
    )
    for det in ordered:
        used = taken.setdefault(det.side, set())
        if used & det.span.token_ids:
            continue
        used.update(det.span.token_ids)
        kept.append(det)
    kept.sort(key=lambda d: (d.kind, min(d.span.token_ids), -len(d.span.token_ids)))
    return kept


def detect(
    pair: SegmentPair,
    backends: BackendPair,
    cfg: DetectorConfig | None = None,
    modes: Iterable[str] = (OMISSION, ADDITION),
) -> DetectionResult:
    """Run the requested detection directions over one segment."""
    cfg = cfg or DetectorConfig()
    modes = tuple(modes)
    unknown = set(modes) - {OMISSION, ADDITION}
    if unknown:
        raise ValueError(f"unknown detection modes {sorted(unknown)}")
    if not modes:
        raise ValueError("at least one detection mode is required")

    started = time.perf_counter()
    involved = []
    detections: list[Detection] = []
    score_calls = 0

    if OMISSION in modes:
        if pair.source is None:
            raise MissingParseError(
                f"segment {pair.seg_id!r}: omission detection requires a source parse"
            )
        if backends.forward is None:
            raise MissingParseError("omission detection requires a forward backend")
        translation = pair.resolved_translation_text()
        if not translation:
            raise MissingParseError(
                f"segment {pair.seg_id!r}: omission detection requires translation text"
            )
        involved.append(backends.forward)

    if ADDITION in modes:
        if pair.translation is None:
            raise MissingParseError(
                f"segment {pair.seg_id!r}: addition detection requires a translation parse"
            )
        if backends.reverse is None:
            raise MissingParseError("addition detection requires a reverse backend")
        source = pair.resolved_source_text()
        if not source:
            raise MissingParseError(
                f"segment {pair.seg_id!r}: addition detection requires source text"
            )
        if backends.reverse not in involved:
            involved.append(backends.reverse)

    if OMISSION in modes:
        found, n_scores = _contrast(
            OMISSION, pair.source, pair.resolved_translation_text(), backends.forward, cfg
        )
        detections.extend(found)
        score_calls += n_scores
    if ADDITION in modes:
        found, n_scores = _contrast(
            ADDITION, pair.translation, pair.resolved_source_text(), backends.reverse, cfg
        )
        detections.extend(found)
        score_calls += n_scores

    if cfg.overlap_policy == "maximal_delta_nonoverlapping":
        detections = _nonoverlapping(detections)

    backend_names = sorted({b.name for b in involved})
    return DetectionResult(
        seg_id=pair.seg_id,
        detections=tuple(detections),
        modes=modes,
        score_calls=score_calls,
        wall_time=time.perf_counter() - started,
        backend="+".join(backend_names),
    )


def result_to_record(result: DetectionResult, pair: SegmentPair | None = None) -> dict:
    """JSON-serializable record for one segment, one line of the output file."""
    record = {
        "segment_id": result.seg_id,
        "directions": list(result.modes),
        "backend": result.backend,
        "score_calls": result.score_calls,
        "wall_time_ms": result.wall_time * 1000.0,
        "detections": [
            {
                "kind": det.kind,
                "side": det.side,
                "head_id": det.span.head_id,
                "token_ids": sorted(det.span.token_ids),
                "char_range": list(det.span.char_range),
                "text": det.span.text,
                "delta": det.delta,
                "full_score": det.full_score,
                "partial_score": det.partial_score,
            }
            for det in result.detections
        ],
    }
    if pair is not None:
        source_text = pair.resolved_source_text()
        translation_text = pair.resolved_translation_text()
        if source_text is not None:
            record["source_text"] = source_text
        if translation_text is not None:
            record["translation_text"] = translation_text
    return record
