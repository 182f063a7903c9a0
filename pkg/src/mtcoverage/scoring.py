"""Sequence scoring: average token log-probability over pluggable backends.

A backend assigns per-token natural-log probabilities to a scored text
conditioned on a conditioning text. Two backends ship here: a client for
an external scoring service speaking newline-delimited JSON (subprocess
pipe or TCP), and a deterministic lexicon scorer used as an offline stand-
in for a real NMT model. A caching wrapper makes repeated requests free
and scoring deterministic per backend.

Wire protocol, one JSON object per line:
  request  {"id": ..., "src_lang": ..., "tgt_lang": ..., "source": ..., "target": ...}
  response {"id": ..., "tokens": [...], "token_logprobs": [...], "includes_eos": bool}
Responses may arrive out of order and are matched by id.
"""
from __future__ import annotations

import json
import math
import os
import selectors
import shlex
import socket
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

__all__ = [
    "EPSILON_LOGPROB",
    "Direction",
    "ScoreRequest",
    "ScoredSequence",
    "ScoreError",
    "BackendError",
    "ProtocolError",
    "avg_logprob",
    "LexiconScorer",
    "ServiceScorer",
    "CachingScorer",
    "JsonLineClient",
    "score",
    "batch_score",
]

# Log-probability assigned to a covered token by the lexicon scorer.
EPSILON_LOGPROB = 0.01


class ScoreError(RuntimeError):
    """Failure to score one request; carried per element in batch results."""

    def __init__(self, message: str, request_id: str | None = None):
        suffix = f" (request {request_id})" if request_id else ""
        super().__init__(f"{message}{suffix}")
        self.request_id = request_id


class BackendError(ScoreError):
    """The backend failed: unreachable, timed out, or returned junk values."""


class ProtocolError(BackendError):
    """The backend violated the wire protocol contract."""


@dataclass(frozen=True, slots=True)
class Direction:
    """A translation direction, e.g. en -> de."""

    src_lang: str
    tgt_lang: str

    def __post_init__(self):
        if not self.src_lang or not self.tgt_lang:
            raise ValueError("language codes must be non-empty")
        if self.src_lang == self.tgt_lang:
            raise ValueError(f"source and target language are both {self.src_lang!r}")

    def swapped(self) -> "Direction":
        return Direction(self.tgt_lang, self.src_lang)

    def __str__(self) -> str:
        return f"{self.src_lang}-{self.tgt_lang}"


@dataclass(frozen=True, slots=True)
class ScoreRequest:
    """Score ``scored_text`` conditioned on ``conditioning_text``."""

    id: str
    direction: Direction
    conditioning_text: str
    scored_text: str

    def __post_init__(self):
        if not self.scored_text:
            raise ValueError("scored_text must be non-empty")


@dataclass(frozen=True, slots=True)
class ScoredSequence:
    """A scored request: per-token natural-log probabilities and their mean."""

    request: ScoreRequest
    token_logprobs: tuple[float, ...]
    score: float
    backend: str

    def __post_init__(self):
        object.__setattr__(self, "token_logprobs", tuple(self.token_logprobs))
        if not self.token_logprobs:
            raise ValueError("token_logprobs must be non-empty")


def avg_logprob(token_logprobs: Sequence[float]) -> float:
    """Arithmetic mean of per-token log-probabilities.

    Uses exact summation, so the result is invariant under permutation of
    the inputs.
    """
    if len(token_logprobs) == 0:
        raise ValueError("cannot score empty sequence")
    return math.fsum(token_logprobs) / len(token_logprobs)


def cache_key(backend_name: str, req: ScoreRequest) -> tuple:
    return (backend_name, req.direction, req.conditioning_text, req.scored_text)


def _validate_logprobs(values: object, request_id: str, backend: str) -> tuple[float, ...]:
    if not isinstance(values, (list, tuple)) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
    ):
        raise ProtocolError(f"{backend}: token_logprobs is not a list of numbers", request_id)
    logprobs = tuple(float(v) for v in values)
    if not logprobs:
        raise ProtocolError(f"{backend}: empty token_logprobs", request_id)
    if any(not math.isfinite(v) for v in logprobs):
        raise BackendError(f"{backend}: non-finite log-probability", request_id)
    if any(v > 0 for v in logprobs):
        raise ProtocolError(
            f"{backend}: positive log-probability (scores must be <= 0)", request_id
        )
    return logprobs


class LexiconScorer:
    """Deterministic scorer driven by a source-to-target word lexicon.

    Both texts are lowercased and split on whitespace. Each scored token
    costs ``EPSILON_LOGPROB`` if some unused conditioning token licenses it
    through the lexicon, else ``lam_tgt``. Conditioning tokens left without
    a licensed counterpart spread a further ``lam_src`` penalty each, evenly
    over the scored tokens. Deleting an uncovered conditioning word thus
    strictly raises the score; deleting a covered one strictly lowers it.
    """

    def __init__(
        self,
        lexicon: Mapping[str, Iterable[str]],
        lam_src: float = 1.0,
        lam_tgt: float = 1.0,
        direction: Direction = Direction("src", "tgt"),
        name: str = "lexicon",
    ):
        if lam_src <= 0 or lam_tgt <= 0:
            raise ValueError("penalty weights must be positive")
        self.lexicon = {
            src.lower(): frozenset(t.lower() for t in targets)
            for src, targets in lexicon.items()
        }
        self.lam_src = lam_src
        self.lam_tgt = lam_tgt
        self.direction = direction
        self.name = name
        self.calls = 0

    @classmethod
    def from_file(cls, path, **kwargs) -> "LexiconScorer":
        """Load a JSON object mapping source word -> list of target words."""
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls({k: tuple(v) for k, v in raw.items()}, **kwargs)

    def inverted(self, name: str | None = None) -> "LexiconScorer":
        """The reverse-direction scorer: target words license source words."""
        reverse: dict[str, set[str]] = {}
        for src, targets in self.lexicon.items():
            for tgt in targets:
                reverse.setdefault(tgt, set()).add(src)
        return LexiconScorer(
            reverse,
            lam_src=self.lam_src,
            lam_tgt=self.lam_tgt,
            direction=self.direction.swapped(),
            name=name or f"{self.name}-inverted",
        )

    def score_batch(
        self, reqs: Sequence[ScoreRequest]
    ) -> list[tuple[float, ...] | ScoreError]:
        results: list[tuple[float, ...] | ScoreError] = []
        for req in reqs:
            self.calls += 1
            results.append(self._score_one(req))
        return results

    def _score_one(self, req: ScoreRequest) -> tuple[float, ...] | ScoreError:
        conditioning = req.conditioning_text.lower().split()
        scored = req.scored_text.lower().split()
        if not scored:
            return ScoreError("cannot score empty sequence", req.id)
        used = [False] * len(conditioning)
        base: list[float] = []
        for tok in scored:
            match = next(
                (
                    i
                    for i, cond in enumerate(conditioning)
                    if not used[i] and tok in self.lexicon.get(cond, ())
                ),
                None,
            )
            if match is None:
                base.append(-self.lam_tgt)
            else:
                used[match] = True
                base.append(-EPSILON_LOGPROB)
        uncovered = used.count(False)
        surcharge = self.lam_src * uncovered / len(scored)
        return tuple(b - surcharge for b in base)


class _LineTransport:
    """Reads newline-delimited frames with a timeout from a byte source."""

    def __init__(self):
        self._buffer = bytearray()
        self._selector = selectors.DefaultSelector()

    def _register(self, fileobj) -> None:
        self._selector.register(fileobj, selectors.EVENT_READ)

    def _read_some(self) -> bytes:
        raise NotImplementedError

    def send(self, payload: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        self._selector.close()

    def recv_line(self, timeout: float) -> bytes:
        end = None if timeout is None else time.monotonic() + timeout
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line = bytes(self._buffer[:newline])
                del self._buffer[: newline + 1]
                return line
            remaining = None if end is None else end - time.monotonic()
            if remaining is not None and remaining <= 0:
                raise TimeoutError("timed out waiting for a response line")
            if not self._selector.select(remaining):
                raise TimeoutError("timed out waiting for a response line")
            chunk = self._read_some()
            if not chunk:
                raise ConnectionError("peer closed the stream")
            self._buffer.extend(chunk)


class _SubprocessTransport(_LineTransport):
    def __init__(self, command: Sequence[str]):
        super().__init__()
        self.proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )
        os.set_blocking(self.proc.stdout.fileno(), False)
        self._register(self.proc.stdout)

    def send(self, payload: bytes) -> None:
        self.proc.stdin.write(payload)
        self.proc.stdin.flush()

    def _read_some(self) -> bytes:
        return os.read(self.proc.stdout.fileno(), 65536) or b""

    def close(self) -> None:
        super().close()
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class _TcpTransport(_LineTransport):
    def __init__(self, host: str, port: int, connect_timeout: float = 10.0):
        super().__init__()
        self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        self.sock.setblocking(False)
        self._register(self.sock)

    def send(self, payload: bytes) -> None:
        self.sock.setblocking(True)
        try:
            self.sock.sendall(payload)
        finally:
            self.sock.setblocking(False)

    def _read_some(self) -> bytes:
        try:
            return self.sock.recv(65536)
        except BlockingIOError:
            return b""

    def close(self) -> None:
        super().close()
        self.sock.close()


class JsonLineClient:
    """Round-trips batches of JSON objects over a line-delimited channel.

    One response line is expected per request line; responses may arrive
    out of order and are matched on their ``id`` field. Round trips are
    serialized internally, so one client may be shared across threads.
    """

    def __init__(self, transport: _LineTransport, timeout: float = 60.0):
        self._transport = transport
        self.timeout = timeout
        self._lock = threading.Lock()

    @classmethod
    def spawn(cls, command: str | Sequence[str], timeout: float = 60.0) -> "JsonLineClient":
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        return cls(_SubprocessTransport(argv), timeout=timeout)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 60.0) -> "JsonLineClient":
        return cls(_TcpTransport(host, port), timeout=timeout)

    def close(self) -> None:
        self._transport.close()

    def round_trip(self, payloads: Sequence[Mapping]) -> dict[str, dict]:
        """Send every payload, then collect responses until all ids answered.

        Returns the responses found before the timeout, keyed by id; missing
        ids are simply absent. Raises :class:`ProtocolError` on unparseable
        or unattributable response lines.
        """
        if not payloads:
            return {}
        expected = {str(p["id"]) for p in payloads}
        if len(expected) != len(payloads):
            raise ValueError("payload ids must be unique within a round trip")
        with self._lock:
            out = b"".join(
                json.dumps(p, ensure_ascii=False).encode("utf-8") + b"\n"
                for p in payloads
            )
            self._transport.send(out)
            responses: dict[str, dict] = {}
            while expected - responses.keys():
                try:
                    line = self._transport.recv_line(self.timeout)
                except TimeoutError:
                    break
                except ConnectionError as exc:
                    if responses:
                        break
                    raise BackendError(f"scoring service: {exc}") from exc
                if not line.strip():
                    continue
                try:
                    msg = json.loads(line.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise ProtocolError(f"unparseable response line: {exc}") from exc
                if not isinstance(msg, dict) or "id" not in msg:
                    raise ProtocolError("response line lacks an id field")
                rid = str(msg["id"])
                if rid not in expected:
                    raise ProtocolError(f"response for unknown request id {rid!r}")
                responses[rid] = msg
            return responses


class ServiceScorer:
    """Scoring backend backed by an external service over the wire protocol.

    The service reports whether its token counts include an end-of-sequence
    token; whichever it answers first is pinned and any later flip is a
    protocol violation.
    """

    def __init__(self, client: JsonLineClient, direction: Direction, name: str = "service"):
        self.client = client
        self.direction = direction
        self.name = name
        self.calls = 0
        self._includes_eos: bool | None = None

    @classmethod
    def spawn(cls, command: str | Sequence[str], direction: Direction,
              name: str = "service", timeout: float = 60.0) -> "ServiceScorer":
        return cls(JsonLineClient.spawn(command, timeout=timeout), direction, name)

    @classmethod
    def connect(cls, host: str, port: int, direction: Direction,
                name: str = "service", timeout: float = 60.0) -> "ServiceScorer":
        return cls(JsonLineClient.connect(host, port, timeout=timeout), direction, name)

    def close(self) -> None:
        self.client.close()

    def score_batch(
        self, reqs: Sequence[ScoreRequest]
    ) -> list[tuple[float, ...] | ScoreError]:
        if not reqs:
            return []
        payloads = []
        for i, req in enumerate(reqs):
            payloads.append(
                {
                    "id": f"r{i}",
                    "src_lang": req.direction.src_lang,
                    "tgt_lang": req.direction.tgt_lang,
                    "source": req.conditioning_text,
                    "target": req.scored_text,
                }
            )
        self.calls += len(reqs)
        responses = self.client.round_trip(payloads)
        results: list[tuple[float, ...] | ScoreError] = []
        for i, req in enumerate(reqs):
            msg = responses.get(f"r{i}")
            if msg is None:
                results.append(BackendError(f"{self.name}: no response", req.id))
                continue
            try:
                logprobs = _validate_logprobs(msg.get("token_logprobs"), req.id, self.name)
                self._check_eos(msg, req.id)
            except ScoreError as exc:
                results.append(exc)
                continue
            results.append(logprobs)
        return results

    def _check_eos(self, msg: Mapping, request_id: str) -> None:
        eos = msg.get("includes_eos")
        if not isinstance(eos, bool):
            raise ProtocolError(f"{self.name}: includes_eos missing or not a bool", request_id)
        if self._includes_eos is None:
            self._includes_eos = eos
        elif self._includes_eos != eos:
            raise ProtocolError(
                f"{self.name}: includes_eos changed mid-run "
                f"({self._includes_eos} -> {eos})",
                request_id,
            )


class CachingScorer:
    """Caches an inner backend's results keyed on direction and both texts.

    Identical requests hit the backend once; reads are lock-free snapshots
    and inserts are serialized. Failures are not cached.
    """

    def __init__(self, inner):
        self.inner = inner
        self._cache: dict[tuple, tuple[float, ...]] = {}
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return self.inner.name

    @property
    def direction(self) -> Direction:
        return self.inner.direction

    @property
    def calls(self) -> int:
        return self.inner.calls

    def __len__(self) -> int:
        return len(self._cache)

    def score_batch(
        self, reqs: Sequence[ScoreRequest]
    ) -> list[tuple[float, ...] | ScoreError]:
        keys = [cache_key(self.name, req) for req in reqs]
        misses: dict[tuple, int] = {}
        for i, key in enumerate(keys):
            if key not in self._cache and key not in misses:
                misses[key] = i
        if misses:
            fetched = self.inner.score_batch([reqs[i] for i in misses.values()])
            with self._lock:
                for key, result in zip(misses.keys(), fetched):
                    if not isinstance(result, ScoreError):
                        self._cache[key] = result
        out: list[tuple[float, ...] | ScoreError] = []
        pending = dict(zip(misses.keys(), fetched)) if misses else {}
        for req, key in zip(reqs, keys):
            hit = self._cache.get(key)
            if hit is not None:
                out.append(hit)
            else:
                failure = pending.get(key)
                out.append(
                    failure
                    if isinstance(failure, ScoreError)
                    else BackendError(f"{self.name}: missing result", req.id)
                )
        return out


def _assemble(
    req: ScoreRequest, result: tuple[float, ...] | ScoreError, backend_name: str
) -> ScoredSequence | ScoreError:
    if isinstance(result, ScoreError):
        return result
    try:
        logprobs = _validate_logprobs(result, req.id, backend_name)
    except ScoreError as exc:
        return exc
    return ScoredSequence(
        request=req,
        token_logprobs=logprobs,
        score=avg_logprob(logprobs),
        backend=backend_name,
    )


def score(backend, req: ScoreRequest) -> ScoredSequence:
    """Score one request, raising :class:`ScoreError` on failure."""
    result = _assemble(req, backend.score_batch([req])[0], backend.name)
    if isinstance(result, ScoreError):
        raise result
    return result


def batch_score(backend, reqs: Sequence[ScoreRequest]) -> list[ScoredSequence | ScoreError]:
    """Score many requests, preserving order.

    Requests that are identical under the cache key are sent to the backend
    once. Failures are reported per element; successes are kept.
    """
    if not reqs:
        return []
    unique: dict[tuple, int] = {}
    for i, req in enumerate(reqs):
        unique.setdefault(cache_key(backend.name, req), i)
    fetched = backend.score_batch([reqs[i] for i in unique.values()])
    by_key = dict(zip(unique.keys(), fetched))
    return [
        _assemble(req, by_key[cache_key(backend.name, req)], backend.name)
        for req in reqs
    ]
