"""Human review of flagged spans: task sampling, HTTP service, agreement.

Detection results are sampled into review tasks (optionally double-
assigned for agreement measurement), served over a small HTTP+JSON API to
the browser UI, and answered through an append-only log that survives
restarts. Raters answer a main question (is the highlighted span indeed
translated badly?) and pick one explanation from an ordered, configurable
taxonomy branch that depends on the error kind and the main answer.
"""
from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import IO, Iterable, Mapping
from urllib.parse import parse_qs, urlparse

from .evalkit import UndefinedKappaError, cohens_kappa

__all__ = [
    "MAIN_ANSWERS",
    "TaxonomyOption",
    "Taxonomy",
    "default_taxonomy",
    "ReviewTask",
    "ReviewAnswer",
    "SamplingConfig",
    "build_tasks",
    "write_session",
    "read_session",
    "ReviewState",
    "serve",
    "agreement",
    "precision_report",
]

BADLY = "badly_translated"
NOT_BADLY = "not_badly_translated"
MAIN_ANSWERS = (BADLY, NOT_BADLY)


@dataclass(frozen=True, slots=True)
class TaxonomyOption:
    """One selectable explanation; ``confirms_coverage`` marks options that
    confirm the claimed coverage error (used for precision reporting)."""

    id: str
    label: str
    confirms_coverage: bool = False


class Taxonomy:
    """Ordered explanation options per (error kind, main answer) branch."""

    def __init__(self, branches: Mapping[tuple[str, str], Iterable[TaxonomyOption]]):
        self.branches = {key: tuple(opts) for key, opts in branches.items()}
        for (kind, main), opts in self.branches.items():
            if main not in MAIN_ANSWERS:
                raise ValueError(f"unknown main answer {main!r}")
            if not opts:
                raise ValueError(f"empty taxonomy branch for {(kind, main)}")

    def options(self, kind: str, main: str) -> tuple[TaxonomyOption, ...]:
        try:
            return self.branches[(kind, main)]
        except KeyError:
            raise KeyError(f"no taxonomy branch for kind={kind!r}, main={main!r}") from None

    def option(self, kind: str, main: str, option_id: str) -> TaxonomyOption | None:
        for opt in self.branches.get((kind, main), ()):
            if opt.id == option_id:
                return opt
        return None

    def as_dict(self) -> dict:
        out: dict = {}
        for (kind, main), opts in self.branches.items():
            out.setdefault(kind, {})[main] = [
                {"id": o.id, "label": o.label, "confirms_coverage": o.confirms_coverage}
                for o in opts
            ]
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Taxonomy":
        branches = {}
        for kind, mains in data.items():
            for main, opts in mains.items():
                branches[(kind, main)] = [
                    TaxonomyOption(
                        id=o["id"],
                        label=o["label"],
                        confirms_coverage=bool(o.get("confirms_coverage", False)),
                    )
                    for o in opts
                ]
        return cls(branches)

    @classmethod
    def from_file(cls, path: str | Path) -> "Taxonomy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_taxonomy() -> Taxonomy:
    """Built-in answer options; list position is the presentation order."""
    return Taxonomy(
        {
            ("omission", BADLY): [
                TaxonomyOption("missing", "The span contains information that is missing in the translation.", True),
                TaxonomyOption("missing_but_inferable", "The span is missing in the translation but can be inferred or is trivial.", True),
                TaxonomyOption("mistranslated", "The span is translated, but incorrectly (another accuracy error such as mistranslation)."),
                TaxonomyOption("other_error", "The span is translated badly in some other way."),
            ],
            ("omission", NOT_BADLY): [
                TaxonomyOption("translated_ok", "The span is correctly covered by the translation."),
                TaxonomyOption("no_translation_needed", "The words in the span do not need to be translated."),
                TaxonomyOption("syntactically_different", "It might have been highlighted because it is syntactically different from the source."),
                TaxonomyOption("no_phenomenon", "No phenomenon that might have caused the prediction was identified."),
            ],
            ("addition", BADLY): [
                TaxonomyOption("not_in_source", "The span adds content that is not present in the source.", True),
                TaxonomyOption("added_but_trivial", "The span adds content, but it is trivial or implied by the source.", True),
                TaxonomyOption("mistranslated", "The span conveys source content, but incorrectly (another accuracy error such as mistranslation)."),
                TaxonomyOption("other_error", "The span is translated badly in some other way."),
            ],
            ("addition", NOT_BADLY): [
                TaxonomyOption("conveys_source", "The span correctly conveys source content."),
                TaxonomyOption("required_by_target", "The span is required by the target language, not an addition."),
                TaxonomyOption("syntactically_different", "It might have been highlighted because it is syntactically different from the source."),
                TaxonomyOption("no_phenomenon", "No phenomenon that might have caused the prediction was identified."),
            ],
        }
    )


@dataclass(frozen=True, slots=True)
class TaskSpan:
    side: str  # source | translation
    start: int
    end: int

    def __post_init__(self):
        if self.side not in ("source", "translation"):
            raise ValueError(f"unknown span side {self.side!r}")
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span range [{self.start}, {self.end})")


@dataclass(frozen=True, slots=True)
class ReviewTask:
    task_id: str
    source_text: str
    translation_text: str
    spans: tuple[TaskSpan, ...]
    kind: str
    assignment: tuple[str, ...]
    pair: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(self.spans))
        object.__setattr__(self, "assignment", tuple(self.assignment))
        if not self.spans:
            raise ValueError(f"task {self.task_id}: at least one span required")
        if not self.assignment:
            raise ValueError(f"task {self.task_id}: at least one rater required")
        for span in self.spans:
            text = self.source_text if span.side == "source" else self.translation_text
            if span.end > len(text):
                raise ValueError(
                    f"task {self.task_id}: span [{span.start}, {span.end}) exceeds "
                    f"{span.side} length {len(text)}"
                )

    def as_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "source_text": self.source_text,
            "translation_text": self.translation_text,
            "spans": [{"side": s.side, "start": s.start, "end": s.end} for s in self.spans],
            "kind": self.kind,
            "assignment": list(self.assignment),
            "pair": self.pair,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ReviewTask":
        return cls(
            task_id=data["task_id"],
            source_text=data["source_text"],
            translation_text=data["translation_text"],
            spans=tuple(TaskSpan(s["side"], s["start"], s["end"]) for s in data["spans"]),
            kind=data["kind"],
            assignment=tuple(data["assignment"]),
            pair=data.get("pair"),
        )


@dataclass(frozen=True, slots=True)
class ReviewAnswer:
    task_id: str
    rater_id: str
    main: str
    explanation: str
    note: str = ""
    timestamp: str = ""

    def as_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "rater_id": self.rater_id,
            "main": self.main,
            "explanation": self.explanation,
            "note": self.note,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ReviewAnswer":
        return cls(
            task_id=str(data["task_id"]),
            rater_id=str(data["rater_id"]),
            main=data["main"],
            explanation=data["explanation"],
            note=data.get("note", ""),
            timestamp=data.get("timestamp", ""),
        )


@dataclass(frozen=True, slots=True)
class SamplingConfig:
    sample_size: int
    raters: tuple[str, str]
    overlap_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sample_size < 1:
            raise ValueError("sample_size must be positive")
        if len(set(self.raters)) != 2:
            raise ValueError("exactly two distinct raters are required")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError("overlap_fraction must be within [0, 1]")


def _prediction_groups(records: Iterable[Mapping]) -> list[dict]:
    """Flagged (segment, kind) groups with their spans and texts."""
    groups: dict[tuple[str, str], dict] = {}
    for record in records:
        for det in record.get("detections", ()):
            key = (str(record["segment_id"]), det["kind"])
            group = groups.setdefault(
                key,
                {
                    "segment_id": key[0],
                    "kind": key[1],
                    "source_text": record.get("source_text", ""),
                    "translation_text": record.get("translation_text", ""),
                    "pair": record.get("pair"),
                    "spans": [],
                },
            )
            group["spans"].append(
                TaskSpan(det["side"], det["char_range"][0], det["char_range"][1])
            )
    return [groups[key] for key in sorted(groups.keys())]


def build_tasks(
    records: Iterable[Mapping], sampling: SamplingConfig, rng: random.Random | None = None
) -> list[ReviewTask]:
    """Sample flagged predictions into assigned review tasks.

    Sampling is without replacement and stratified by error kind with
    largest-remainder allocation. A ``sampling.overlap_fraction`` share of
    the sampled tasks is assigned to both raters; the rest alternate. Fully
    deterministic given the seed.
    """
    rng = rng or random.Random(sampling.seed)
    groups = _prediction_groups(records)
    if sampling.sample_size > len(groups):
        raise ValueError(
            f"sample size {sampling.sample_size} exceeds the "
            f"{len(groups)} available predictions"
        )

    by_kind: dict[str, list[dict]] = {}
    for group in groups:
        by_kind.setdefault(group["kind"], []).append(group)
    kinds = sorted(by_kind)
    total = len(groups)
    quota: dict[str, int] = {}
    remainders: list[tuple[float, str]] = []
    assigned = 0
    for kind in kinds:
        exact = sampling.sample_size * len(by_kind[kind]) / total
        quota[kind] = min(int(exact), len(by_kind[kind]))
        assigned += quota[kind]
        remainders.append((exact - int(exact), kind))
    remainders.sort(key=lambda item: (-item[0], item[1]))
    while assigned < sampling.sample_size:
        progressed = False
        for _, kind in remainders:
            if assigned == sampling.sample_size:
                break
            if quota[kind] < len(by_kind[kind]):
                quota[kind] += 1
                assigned += 1
                progressed = True
        if not progressed:
            break

    sampled: list[dict] = []
    for kind in kinds:
        sampled.extend(rng.sample(by_kind[kind], quota[kind]))
    rng.shuffle(sampled)

    n_overlap = round(sampling.overlap_fraction * len(sampled))
    tasks: list[ReviewTask] = []
    for i, group in enumerate(sampled):
        if i < n_overlap:
            assignment = sampling.raters
        else:
            assignment = (sampling.raters[(i - n_overlap) % 2],)
        tasks.append(
            ReviewTask(
                task_id=f"t{i:04d}",
                source_text=group["source_text"],
                translation_text=group["translation_text"],
                spans=tuple(group["spans"]),
                kind=group["kind"],
                assignment=assignment,
                pair=group["pair"],
            )
        )
    return tasks


def write_session(tasks: Iterable[ReviewTask], raters: Iterable[str], fh: IO[str]) -> None:
    header = {"schema": "review-session-v1", "raters": sorted(set(raters))}
    fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
    for task in tasks:
        fh.write(json.dumps(task.as_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_session(source: str | Path | IO[str]) -> tuple[list[ReviewTask], list[str]]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return read_session(fh)
    lines = [line for line in source if line.strip()]
    if not lines:
        raise ValueError("empty session file")
    header = json.loads(lines[0])
    if header.get("schema") != "review-session-v1":
        raise ValueError("not a review session file")
    tasks = [ReviewTask.from_dict(json.loads(line)) for line in lines[1:]]
    return tasks, list(header.get("raters", []))


class ReviewState:
    """In-memory session state over an append-only answer log.

    Every submission is appended to the log; the effective answer per
    (task, rater) is the last one logged, so resubmissions overwrite and a
    restart replays the log to the identical state.
    """

    def __init__(
        self,
        tasks: Iterable[ReviewTask],
        answers_path: str | Path,
        taxonomy: Taxonomy | None = None,
    ):
        self.tasks = {t.task_id: t for t in tasks}
        self.order = [t.task_id for t in self.tasks.values()]
        self.taxonomy = taxonomy or default_taxonomy()
        self.answers_path = Path(answers_path)
        self.effective: dict[tuple[str, str], ReviewAnswer] = {}
        self._write_lock = threading.Lock()
        if self.answers_path.exists():
            with open(self.answers_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        answer = ReviewAnswer.from_dict(json.loads(line))
                        self.effective[(answer.task_id, answer.rater_id)] = answer

    def validate(self, answer: ReviewAnswer) -> str | None:
        """Reason the answer must be rejected, or None if acceptable."""
        task = self.tasks.get(answer.task_id)
        if task is None:
            return f"unknown task {answer.task_id!r}"
        if answer.rater_id not in task.assignment:
            return f"rater {answer.rater_id!r} is not assigned to task {answer.task_id}"
        if answer.main not in MAIN_ANSWERS:
            return f"main answer must be one of {MAIN_ANSWERS}"
        if self.taxonomy.option(task.kind, answer.main, answer.explanation) is None:
            return (
                f"explanation {answer.explanation!r} is not in the "
                f"({task.kind}, {answer.main}) branch"
            )
        return None

    def submit(self, answer: ReviewAnswer) -> None:
        """Validate, append to the durable log, and update effective state."""
        reason = self.validate(answer)
        if reason is not None:
            raise ValueError(reason)
        if not answer.timestamp:
            answer = ReviewAnswer(
                task_id=answer.task_id,
                rater_id=answer.rater_id,
                main=answer.main,
                explanation=answer.explanation,
                note=answer.note,
                timestamp=datetime.now(timezone.utc).isoformat(),
            )
        with self._write_lock:
            with open(self.answers_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(answer.as_dict(), ensure_ascii=False, sort_keys=True) + "\n")
                fh.flush()
            self.effective[(answer.task_id, answer.rater_id)] = answer

    def next_task(self, rater_id: str) -> ReviewTask | None:
        for task_id in self.order:
            task = self.tasks[task_id]
            if rater_id in task.assignment and (task_id, rater_id) not in self.effective:
                return task
        return None

    def progress(self) -> dict:
        raters: dict[str, dict] = {}
        for task in self.tasks.values():
            for rater in task.assignment:
                entry = raters.setdefault(rater, {"assigned": 0, "answered": 0})
                entry["assigned"] += 1
                if (task.task_id, rater) in self.effective:
                    entry["answered"] += 1
        return {
            "tasks": len(self.tasks),
            "answers": len(self.effective),
            "raters": raters,
        }

    def agreement(self) -> dict:
        return agreement(self.tasks.values(), self.effective.values())

    def precision(self) -> dict:
        return precision_report(self.tasks.values(), self.effective.values(), self.taxonomy)


def agreement(tasks: Iterable[ReviewTask], answers: Iterable[ReviewAnswer]) -> dict:
    """Cohen's kappa on main and explanation over doubly-annotated tasks."""
    by_key = {(a.task_id, a.rater_id): a for a in answers}
    mains_a: list[str] = []
    mains_b: list[str] = []
    expl_a: list[str] = []
    expl_b: list[str] = []
    for task in tasks:
        if len(task.assignment) != 2:
            continue
        first = by_key.get((task.task_id, task.assignment[0]))
        second = by_key.get((task.task_id, task.assignment[1]))
        if first is None or second is None:
            continue
        mains_a.append(first.main)
        mains_b.append(second.main)
        expl_a.append(first.explanation)
        expl_b.append(second.explanation)
    if not mains_a:
        return {"doubly_annotated": 0, "reason": "no doubly-annotated tasks"}

    def _kappa(xs: list[str], ys: list[str]) -> float | None:
        try:
            return cohens_kappa(xs, ys)
        except UndefinedKappaError:
            return None

    return {
        "doubly_annotated": len(mains_a),
        "main_kappa": _kappa(mains_a, mains_b),
        "explanation_kappa": _kappa(expl_a, expl_b),
    }


def precision_report(
    tasks: Iterable[ReviewTask],
    answers: Iterable[ReviewAnswer],
    taxonomy: Taxonomy | None = None,
) -> dict:
    """Per (kind, language pair): how often raters confirmed the claim.

    ``any_error`` counts answers whose main verdict was badly-translated;
    ``coverage_error`` additionally requires a coverage-confirming
    explanation. Fractions are over all answers for that bucket.
    """
    taxonomy = taxonomy or default_taxonomy()
    task_by_id = {t.task_id: t for t in tasks}
    buckets: dict[tuple[str, str | None], dict] = {}
    for answer in answers:
        task = task_by_id.get(answer.task_id)
        if task is None:
            continue
        bucket = buckets.setdefault(
            (task.kind, task.pair), {"answers": 0, "any_error": 0, "coverage_error": 0}
        )
        bucket["answers"] += 1
        if answer.main == BADLY:
            bucket["any_error"] += 1
            option = taxonomy.option(task.kind, answer.main, answer.explanation)
            if option is not None and option.confirms_coverage:
                bucket["coverage_error"] += 1
    report = []
    for (kind, pair), counts in sorted(buckets.items(), key=lambda kv: (kv[0][0], kv[0][1] or "")):
        n = counts["answers"]
        report.append(
            {
                "kind": kind,
                "pair": pair,
                "answers": n,
                "any_error_precision": counts["any_error"] / n if n else 0.0,
                "coverage_precision": counts["coverage_error"] / n if n else 0.0,
            }
        )
    return {"buckets": report}


class _ReviewHandler(BaseHTTPRequestHandler):
    state: ReviewState
    ui_dir: Path | None = None

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, payload, status: int = 200) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        if parts[:2] == ["tasks", "next"]:
            rater = parse_qs(url.query).get("rater", [""])[0]
            if not rater:
                return self._send_json({"error": "rater query parameter required"}, 400)
            task = self.state.next_task(rater)
            if task is None:
                return self._send_json({"done": True, "progress": self.state.progress()})
            return self._send_json(self._task_payload(task))
        if len(parts) == 2 and parts[0] == "tasks":
            task = self.state.tasks.get(parts[1])
            if task is None:
                return self._send_json({"error": f"unknown task {parts[1]!r}"}, 404)
            return self._send_json(self._task_payload(task))
        if parts == ["progress"]:
            return self._send_json(self.state.progress())
        if parts == ["agreement"]:
            return self._send_json(self.state.agreement())
        if parts == ["precision"]:
            return self._send_json(self.state.precision())
        if parts == ["taxonomy"]:
            return self._send_json(self.state.taxonomy.as_dict())
        return self._serve_static(url.path)

    def _task_payload(self, task: ReviewTask) -> dict:
        payload = task.as_dict()
        payload["options"] = {
            main: [
                {"id": o.id, "label": o.label}
                for o in self.state.taxonomy.options(task.kind, main)
            ]
            for main in MAIN_ANSWERS
        }
        payload["progress"] = self.state.progress()
        return payload

    def _serve_static(self, path: str) -> None:
        if self.ui_dir is None:
            return self._send_json({"error": "not found"}, 404)
        rel = path.lstrip("/") or "index.html"
        target = (self.ui_dir / rel).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())) or not target.is_file():
            return self._send_json({"error": "not found"}, 404)
        content_types = {
            ".html": "text/html; charset=utf-8",
            ".js": "text/javascript; charset=utf-8",
            ".css": "text/css; charset=utf-8",
            ".json": "application/json; charset=utf-8",
        }
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_types.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        url = urlparse(self.path)
        if url.path.rstrip("/") != "/answers":
            return self._send_json({"error": "not found"}, 404)
        length = int(self.headers.get("Content-Length", "0"))
        try:
            data = json.loads(self.rfile.read(length).decode("utf-8"))
            answer = ReviewAnswer.from_dict(data)
        except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
            return self._send_json({"error": f"malformed answer: {exc}"}, 400)
        try:
            self.state.submit(answer)
        except ValueError as exc:
            return self._send_json({"error": str(exc)}, 400)
        return self._send_json({"ok": True, "progress": self.state.progress()})


def serve(
    session_path: str | Path,
    answers_path: str | Path,
    host: str = "127.0.0.1",
    port: int = 8321,
    taxonomy: Taxonomy | None = None,
    ui_dir: str | Path | None = None,
) -> ThreadingHTTPServer:
    """Build the HTTP server for a session; call ``serve_forever`` to run.

    Answers already present in ``answers_path`` are replayed, so restarting
    the service resumes exactly where it stopped.
    """
    tasks, _raters = read_session(session_path)
    state = ReviewState(tasks, answers_path, taxonomy)
    handler = type(
        "BoundReviewHandler",
        (_ReviewHandler,),
        {"state": state, "ui_dir": Path(ui_dir) if ui_dir else None},
    )
    server = ThreadingHTTPServer((host, port), handler)
    server.review_state = state
    return server
