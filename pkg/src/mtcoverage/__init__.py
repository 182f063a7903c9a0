"""Reference-free coverage-error detection for machine translation.

Compares the likelihood of a translation conditioned on the full source
against its likelihood conditioned on partial sources with one candidate
span deleted; spans whose deletion raises the score are flagged as omitted.
Swapping the direction flags superfluous translation spans the same way.
"""

from .conllu import DepSentence, DepToken, parse_conllu, reconstruct_text, validate_tree
from .detector import (
    BackendPair,
    Detection,
    DetectionResult,
    DetectorConfig,
    SegmentPair,
    detect,
    detect_additions,
    detect_omissions,
)
from .scoring import (
    CachingScorer,
    Direction,
    LexiconScorer,
    ScoreRequest,
    ScoredSequence,
    ServiceScorer,
    avg_logprob,
    batch_score,
    score,
)
from .spans import ErrorSpanCandidate, PosConfig, extract_spans, make_partial, subtree_ids
from .synthgen import GenConfig, SynthSample, constructible_by_addition, dataset_stats, generate
from .evalkit import cohens_kappa, segment_prf, word_mcc

__version__ = "0.1.0"

__all__ = [
    "DepSentence",
    "DepToken",
    "parse_conllu",
    "reconstruct_text",
    "validate_tree",
    "PosConfig",
    "ErrorSpanCandidate",
    "extract_spans",
    "subtree_ids",
    "make_partial",
    "Direction",
    "ScoreRequest",
    "ScoredSequence",
    "LexiconScorer",
    "ServiceScorer",
    "CachingScorer",
    "avg_logprob",
    "score",
    "batch_score",
    "Detection",
    "DetectionResult",
    "DetectorConfig",
    "SegmentPair",
    "BackendPair",
    "detect",
    "detect_omissions",
    "detect_additions",
    "GenConfig",
    "SynthSample",
    "generate",
    "constructible_by_addition",
    "dataset_stats",
    "segment_prf",
    "word_mcc",
    "cohens_kappa",
]
