"""Synthetic coverage errors with word-level OK/BAD labels.

From each parsed source sentence, randomly selected candidate spans are
deleted to form a partial source; both versions are machine-translated.
When the partial translation is a strict subsequence of the full one, four
samples are emitted: two negatives (matching source/translation pairs),
one addition (partial source with the full translation, extra translation
tokens BAD) and one omission (full source with the partial translation,
deleted source tokens BAD).
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from .conllu import DepSentence, reconstruct_text, token_offsets
from .scoring import Direction, JsonLineClient, ProtocolError
from .spans import ErrorSpanCandidate, PosConfig, extract_spans

__all__ = [
    "LABEL_SEP",
    "KINDS",
    "SynthSample",
    "GenConfig",
    "TranslationMissingError",
    "TsvTranslator",
    "WordSubstitutionTranslator",
    "ServiceTranslator",
    "label_tokens",
    "label_token_spans",
    "sentence_rng",
    "sample_deletions",
    "constructible_by_addition",
    "generate",
    "dataset_stats",
    "DatasetStats",
    "write_samples_jsonl",
    "read_samples_jsonl",
    "write_label_file",
    "read_label_file_line",
]

LABEL_SEP = "␟"  # joins token and label in word-level label files
OK = "OK"
BAD = "BAD"
KINDS = ("addition_positive", "omission_positive", "negative_full", "negative_partial")

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class TranslationMissingError(KeyError):
    """The offline translation table has no entry for a required text."""

    def __init__(self, missing: Sequence[str]):
        preview = "; ".join(repr(m) for m in list(missing)[:5])
        super().__init__(f"no translation for {len(missing)} text(s): {preview}")
        self.missing = tuple(missing)


@dataclass(frozen=True, slots=True)
class Provenance:
    """Where a sample came from: the source sentence and what was deleted."""

    sent_id: str
    deleted_ids: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class SynthSample:
    kind: str
    source_text: str
    target_text: str
    src_labels: tuple[str, ...]
    tgt_labels: tuple[str, ...]
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(self, "src_labels", tuple(self.src_labels))
        object.__setattr__(self, "tgt_labels", tuple(self.tgt_labels))
        if self.kind not in KINDS:
            raise ValueError(f"unknown sample kind {self.kind!r}")
        bad_labels = {l for l in (*self.src_labels, *self.tgt_labels)} - {OK, BAD}
        if bad_labels:
            raise ValueError(f"labels must be OK or BAD, got {sorted(bad_labels)}")
        src_bad = self.src_labels.count(BAD)
        tgt_bad = self.tgt_labels.count(BAD)
        if self.kind == "addition_positive" and (tgt_bad == 0 or src_bad > 0):
            raise ValueError("addition_positive needs BAD target tokens and a clean source")
        if self.kind == "omission_positive" and (src_bad == 0 or tgt_bad > 0):
            raise ValueError("omission_positive needs BAD source tokens and a clean target")
        if self.kind.startswith("negative") and (src_bad or tgt_bad):
            raise ValueError("negative samples must be all OK")


@dataclass(frozen=True, slots=True)
class GenConfig:
    deletion_prob: float = 0.15
    seed: int = 0
    src_lang: str = "en"
    tgt_lang: str = "de"
    # Overrides for the per-language label tokenization; Chinese defaults to
    # character level, everything else to word level.
    label_modes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.deletion_prob < 1:
            raise ValueError("deletion_prob must be strictly between 0 and 1")
        for lang, mode in self.label_modes.items():
            if mode not in ("word", "char"):
                raise ValueError(f"label mode for {lang!r} must be 'word' or 'char'")

    def mode_for(self, lang: str) -> str:
        if lang in self.label_modes:
            return self.label_modes[lang]
        return "char" if lang.startswith("zh") else "word"


def label_tokens(text: str, mode: str = "word") -> list[str]:
    """Split text into labelable tokens: words+punctuation, or characters."""
    if mode == "word":
        return _WORD_RE.findall(text)
    if mode == "char":
        return [ch for ch in text if not ch.isspace()]
    raise ValueError(f"unknown label tokenization mode {mode!r}")


def label_token_spans(text: str, mode: str = "word") -> list[tuple[str, int, int]]:
    """Label tokens with their character offsets in ``text``."""
    if mode == "word":
        return [(m.group(), m.start(), m.end()) for m in _WORD_RE.finditer(text)]
    if mode == "char":
        return [(ch, i, i + 1) for i, ch in enumerate(text) if not ch.isspace()]
    raise ValueError(f"unknown label tokenization mode {mode!r}")


def sentence_rng(seed: int, sent_id: str) -> random.Random:
    """Independent, reproducible RNG stream for one sentence."""
    return random.Random(f"{seed}:{sent_id}")


def sample_deletions(
    sentence: DepSentence,
    cfg: GenConfig,
    rng: random.Random,
    pos_cfg: PosConfig | None = None,
) -> list[ErrorSpanCandidate]:
    """Select pairwise-disjoint candidate spans for deletion.

    Candidates are visited in document order; each is drawn independently
    with ``deletion_prob`` and dropped if it shares tokens with an earlier
    selection. One random draw is consumed per candidate, so the outcome is
    fully determined by the RNG state.
    """
    selected: list[ErrorSpanCandidate] = []
    taken: set[int] = set()
    for cand in extract_spans(sentence, pos_cfg or PosConfig()):
        drawn = rng.random() < cfg.deletion_prob
        if drawn and not (taken & cand.token_ids):
            selected.append(cand)
            taken.update(cand.token_ids)
    return selected


def constructible_by_addition(
    partial_tokens: Sequence[str], full_tokens: Sequence[str]
) -> list[bool] | None:
    """BAD mask over ``full_tokens`` if the partial is a strict subsequence.

    Uses the leftmost-greedy embedding of the partial sequence; positions
    not consumed by it are True (BAD). Returns None when the sequences are
    equal or the partial is not a subsequence.
    """
    if list(partial_tokens) == list(full_tokens):
        return None
    mask = [True] * len(full_tokens)
    i = 0
    for j, tok in enumerate(full_tokens):
        if i < len(partial_tokens) and partial_tokens[i] == tok:
            mask[j] = False
            i += 1
    if i != len(partial_tokens):
        return None
    return mask


class TsvTranslator:
    """Offline translation table: two tab-separated columns, source and target."""

    def __init__(self, table: Mapping[str, str]):
        self.table = dict(table)

    @classmethod
    def from_file(cls, path: str | Path) -> "TsvTranslator":
        table: dict[str, str] = {}
        for line_no, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(
                    f"{path}: line {line_no}: expected 2 tab-separated columns, got {len(parts)}"
                )
            table[parts[0]] = parts[1]
        return cls(table)

    def translate_batch(self, texts: Sequence[str]) -> list[str]:
        missing = [t for t in texts if t not in self.table]
        if missing:
            raise TranslationMissingError(missing)
        return [self.table[t] for t in texts]


class WordSubstitutionTranslator:
    """Toy word-for-word translator for offline pipelines and tests."""

    def __init__(self, mapping: Mapping[str, str], keep_unknown: bool = True):
        self.mapping = dict(mapping)
        self.keep_unknown = keep_unknown

    def translate_batch(self, texts: Sequence[str]) -> list[str]:
        out = []
        for text in texts:
            words = []
            for word in text.split():
                if word in self.mapping:
                    words.append(self.mapping[word])
                elif self.keep_unknown:
                    words.append(word)
                else:
                    raise TranslationMissingError([word])
            out.append(" ".join(words))
        return out

    def as_lexicon(self) -> dict[str, frozenset[str]]:
        """The consistent scoring lexicon implied by this translator."""
        return {src.lower(): frozenset({tgt.lower()}) for src, tgt in self.mapping.items()}


class ServiceTranslator:
    """Translation over the scoring service channel, ``"mode": "translate"``.

    Request adds ``{"mode": "translate"}`` and omits ``target``; the response
    must carry ``{"id", "translation"}``.
    """

    def __init__(self, client: JsonLineClient, direction: Direction):
        self.client = client
        self.direction = direction

    @classmethod
    def spawn(cls, command, direction: Direction, timeout: float = 120.0) -> "ServiceTranslator":
        return cls(JsonLineClient.spawn(command, timeout=timeout), direction)

    @classmethod
    def connect(cls, host: str, port: int, direction: Direction,
                timeout: float = 120.0) -> "ServiceTranslator":
        return cls(JsonLineClient.connect(host, port, timeout=timeout), direction)

    def translate_batch(self, texts: Sequence[str]) -> list[str]:
        payloads = [
            {
                "id": f"t{i}",
                "mode": "translate",
                "src_lang": self.direction.src_lang,
                "tgt_lang": self.direction.tgt_lang,
                "source": text,
            }
            for i, text in enumerate(texts)
        ]
        responses = self.client.round_trip(payloads)
        out: list[str] = []
        for i in range(len(texts)):
            msg = responses.get(f"t{i}")
            if msg is None:
                raise ProtocolError(f"translator: no response for text {i}")
            translation = msg.get("translation")
            if not isinstance(translation, str):
                raise ProtocolError(f"translator: missing translation string for text {i}")
            out.append(translation)
        return out


def _bad_mask_from_deletion(
    sentence: DepSentence, deleted_ids: Iterable[int], mode: str
) -> list[bool]:
    """BAD mask over the full source's label tokens for the deleted spans."""
    offsets = token_offsets(sentence)
    ranges = [offsets[i] for i in deleted_ids]
    full_text = reconstruct_text(sentence)
    mask = []
    for _tok, start, end in label_token_spans(full_text, mode):
        mask.append(any(start < r_end and r_start < end for r_start, r_end in ranges))
    return mask


def _labels(mask: Sequence[bool]) -> tuple[str, ...]:
    return tuple(BAD if bad else OK for bad in mask)


def _all_ok(text: str, mode: str) -> tuple[str, ...]:
    return tuple(OK for _ in label_tokens(text, mode))


def generate(
    corpus: Iterable[DepSentence],
    translator,
    cfg: GenConfig | None = None,
    pos_cfg: PosConfig | None = None,
) -> list[SynthSample]:
    """Run the four-way sample construction over a parsed corpus.

    Sentences where nothing was deleted, where the partial translation
    equals the full one, or where it is not a subsequence of the full one
    are dropped entirely.
    """
    cfg = cfg or GenConfig()
    src_mode = cfg.mode_for(cfg.src_lang)
    tgt_mode = cfg.mode_for(cfg.tgt_lang)

    plans = []
    texts: list[str] = []
    for sentence in corpus:
        rng = sentence_rng(cfg.seed, sentence.sent_id)
        deletions = sample_deletions(sentence, cfg, rng, pos_cfg)
        if not deletions:
            continue
        deleted_ids = frozenset().union(*(d.token_ids for d in deletions))
        full_src = reconstruct_text(sentence)
        partial_src = reconstruct_text(sentence, deleted_ids)
        plans.append((sentence, deleted_ids, full_src, partial_src, len(texts)))
        texts.extend((full_src, partial_src))

    translations = translator.translate_batch(texts) if texts else []

    samples: list[SynthSample] = []
    for sentence, deleted_ids, full_src, partial_src, idx in plans:
        full_mt = translations[idx]
        partial_mt = translations[idx + 1]
        addition_mask = constructible_by_addition(
            label_tokens(partial_mt, tgt_mode), label_tokens(full_mt, tgt_mode)
        )
        if addition_mask is None:
            continue
        provenance = Provenance(
            sent_id=sentence.sent_id, deleted_ids=tuple(sorted(deleted_ids))
        )
        omission_mask = _bad_mask_from_deletion(sentence, deleted_ids, src_mode)
        samples.extend(
            (
                SynthSample(
                    kind="negative_full",
                    source_text=full_src,
                    target_text=full_mt,
                    src_labels=_all_ok(full_src, src_mode),
                    tgt_labels=_all_ok(full_mt, tgt_mode),
                    provenance=provenance,
                ),
                SynthSample(
                    kind="negative_partial",
                    source_text=partial_src,
                    target_text=partial_mt,
                    src_labels=_all_ok(partial_src, src_mode),
                    tgt_labels=_all_ok(partial_mt, tgt_mode),
                    provenance=provenance,
                ),
                SynthSample(
                    kind="addition_positive",
                    source_text=partial_src,
                    target_text=full_mt,
                    src_labels=_all_ok(partial_src, src_mode),
                    tgt_labels=_labels(addition_mask),
                    provenance=provenance,
                ),
                SynthSample(
                    kind="omission_positive",
                    source_text=full_src,
                    target_text=partial_mt,
                    src_labels=_labels(omission_mask),
                    tgt_labels=_all_ok(partial_mt, tgt_mode),
                    provenance=provenance,
                ),
            )
        )
    return samples


@dataclass(frozen=True, slots=True)
class DatasetStats:
    """Segment and token counts in the shape of the dataset summary table."""

    segments_total: int
    segments_with_addition: int
    segments_with_omission: int
    src_ok: int
    src_bad: int
    tgt_ok: int
    tgt_bad: int

    def as_dict(self) -> dict:
        return {
            "segments": {
                "total": self.segments_total,
                "with_addition": self.segments_with_addition,
                "with_omission": self.segments_with_omission,
            },
            "tokens": {
                "src_ok": self.src_ok,
                "src_bad": self.src_bad,
                "tgt_ok": self.tgt_ok,
                "tgt_bad": self.tgt_bad,
            },
        }


def dataset_stats(samples: Iterable[SynthSample]) -> DatasetStats:
    total = with_add = with_omi = src_ok = src_bad = tgt_ok = tgt_bad = 0
    for sample in samples:
        total += 1
        if BAD in sample.tgt_labels:
            with_add += 1
        if BAD in sample.src_labels:
            with_omi += 1
        src_ok += sample.src_labels.count(OK)
        src_bad += sample.src_labels.count(BAD)
        tgt_ok += sample.tgt_labels.count(OK)
        tgt_bad += sample.tgt_labels.count(BAD)
    return DatasetStats(total, with_add, with_omi, src_ok, src_bad, tgt_ok, tgt_bad)


def sample_to_dict(sample: SynthSample) -> dict:
    return {
        "kind": sample.kind,
        "source_text": sample.source_text,
        "target_text": sample.target_text,
        "src_labels": list(sample.src_labels),
        "tgt_labels": list(sample.tgt_labels),
        "provenance": {
            "sent_id": sample.provenance.sent_id,
            "deleted_ids": list(sample.provenance.deleted_ids),
        },
    }


def sample_from_dict(data: Mapping) -> SynthSample:
    return SynthSample(
        kind=data["kind"],
        source_text=data["source_text"],
        target_text=data["target_text"],
        src_labels=tuple(data["src_labels"]),
        tgt_labels=tuple(data["tgt_labels"]),
        provenance=Provenance(
            sent_id=data["provenance"]["sent_id"],
            deleted_ids=tuple(data["provenance"]["deleted_ids"]),
        ),
    )


def write_samples_jsonl(samples: Iterable[SynthSample], fh: IO[str]) -> None:
    for sample in samples:
        fh.write(json.dumps(sample_to_dict(sample), ensure_ascii=False, sort_keys=True))
        fh.write("\n")


def read_samples_jsonl(fh: IO[str]) -> list[SynthSample]:
    return [sample_from_dict(json.loads(line)) for line in fh if line.strip()]


def write_label_file(
    samples: Iterable[SynthSample], side: str, mode: str, fh: IO[str]
) -> None:
    """One line per sample; whitespace-separated ``token<SEP>LABEL`` items."""
    if side not in ("src", "tgt"):
        raise ValueError("side must be 'src' or 'tgt'")
    for sample in samples:
        text = sample.source_text if side == "src" else sample.target_text
        labels = sample.src_labels if side == "src" else sample.tgt_labels
        tokens = label_tokens(text, mode)
        if len(tokens) != len(labels):
            raise ValueError(
                f"sample {sample.provenance.sent_id}: {side} has {len(tokens)} tokens "
                f"but {len(labels)} labels under mode {mode!r}"
            )
        fh.write(" ".join(f"{tok}{LABEL_SEP}{lab}" for tok, lab in zip(tokens, labels)))
        fh.write("\n")


def read_label_file_line(line: str) -> tuple[list[str], list[str]]:
    """Parse one label-file line back into (tokens, labels)."""
    tokens: list[str] = []
    labels: list[str] = []
    for item in line.split():
        tok, sep, lab = item.rpartition(LABEL_SEP)
        if not sep:
            raise ValueError(f"label item without separator: {item!r}")
        tokens.append(tok)
        labels.append(lab)
    return tokens, labels
