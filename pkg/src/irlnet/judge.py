"""Scorer boundary and expert-dataset collection.

External judges speak newline-delimited JSON: each request
``{"id": int, "raw": str, "crafted": str}`` is answered by exactly one
``{"id": int, "score": number}``, in order. Two transports carry the same
documents: a child process's stdin/stdout, or an HTTP POST of one request
document answered by one response document.
"""
from __future__ import annotations

import json
import logging
import math
import selectors
import shlex
import subprocess
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .envs.prompt import N_OPERATIONS, JudgeTables, PromptTask, SyntheticJudge, craft_prompt, \
    state_features, task_pool
from .irl.dataset import ExpertDataset, ExpertRecord

log = logging.getLogger(__name__)


class JudgeError(RuntimeError):
    pass


class JudgeTimeoutError(JudgeError):
    pass


class JudgeProtocolError(JudgeError):
    def __init__(self, message: str, payload=None):
        super().__init__(f"{message}: {payload!r}" if payload is not None else message)
        self.payload = payload


class JudgeIdMismatchError(JudgeProtocolError):
    def __init__(self, expected: int, got, payload=None):
        super().__init__(f"response id {got!r} does not match request id {expected}", payload)
        self.expected, self.got = expected, got


class CollectionError(JudgeError):
    def __init__(self, message: str, completed: int, total: int):
        super().__init__(f"{message} (completed {completed}/{total} judge calls)")
        self.completed, self.total = completed, total


@dataclass(frozen=True)
class JudgeRequest:
    id: int
    raw: str
    crafted: str

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "raw": self.raw, "crafted": self.crafted})

    @classmethod
    def from_json(cls, line: str) -> "JudgeRequest":
        doc = json.loads(line)
        return cls(int(doc["id"]), str(doc["raw"]), str(doc["crafted"]))


@dataclass(frozen=True)
class JudgeResponse:
    id: int
    score: float

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "score": self.score})

    @classmethod
    def from_json(cls, line) -> "JudgeResponse":
        try:
            doc = json.loads(line)
            rid, score = doc["id"], doc["score"]
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise JudgeProtocolError(f"malformed judge response ({exc})", line) from None
        if isinstance(rid, bool) or not isinstance(rid, int):
            raise JudgeProtocolError("response id is not an integer", line)
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
            raise JudgeProtocolError("response score is not a finite number", line)
        return cls(rid, float(score))


def check_response(request: JudgeRequest, line) -> JudgeResponse:
    resp = JudgeResponse.from_json(line)
    if resp.id != request.id:
        raise JudgeIdMismatchError(request.id, resp.id, line)
    return resp


class SubprocessTransport:
    """Keeps one child process alive and exchanges one line per request."""

    def __init__(self, command, timeout_ms: int = 30_000):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout_ms / 1000.0
        self.proc = None

    def _ensure(self):
        if self.proc is None or self.proc.poll() is not None:
            self.proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         text=True, bufsize=1)

    def __call__(self, request: JudgeRequest) -> str:
        self._ensure()
        try:
            self.proc.stdin.write(request.to_json() + "\n")
            self.proc.stdin.flush()
        except BrokenPipeError as exc:
            self.close()
            raise JudgeError(f"judge process exited (code {self.proc_code})") from exc
        sel = selectors.DefaultSelector()
        sel.register(self.proc.stdout, selectors.EVENT_READ)
        ready = sel.select(self.timeout)
        sel.close()
        if not ready:
            # a late reply would break line ordering; restart the child on the next call
            self.close()
            raise JudgeTimeoutError(f"no judge response within {self.timeout:.3g}s")
        line = self.proc.stdout.readline()
        if line == "":
            self.close()
            raise JudgeError("judge process closed its output")
        return line

    @property
    def proc_code(self):
        return None if self.proc is None else self.proc.poll()

    def close(self):
        if self.proc is not None:
            if self.proc.poll() is None:
                self.proc.kill()
            self.proc.wait()
            for stream in (self.proc.stdin, self.proc.stdout):
                try:
                    stream.close()
                except (OSError, ValueError):
                    pass
            self.proc = None


class HTTPTransport:
    def __init__(self, url: str, timeout_ms: int = 30_000):
        self.url = url
        self.timeout = timeout_ms / 1000.0

    def __call__(self, request: JudgeRequest) -> str:
        req = urllib.request.Request(self.url, data=request.to_json().encode(),
                                     headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read().decode()
        except TimeoutError as exc:
            raise JudgeTimeoutError(f"no judge response within {self.timeout:.3g}s") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                raise JudgeTimeoutError(f"no judge response within {self.timeout:.3g}s") from exc
            raise JudgeError(f"judge endpoint unreachable: {exc.reason}") from exc

    def close(self):
        pass


def make_transport(endpoint: str, timeout_ms: int = 30_000):
    if endpoint.startswith(("http://", "https://")):
        return HTTPTransport(endpoint, timeout_ms)
    return SubprocessTransport(endpoint, timeout_ms)


def external_judge_call(transport, request: JudgeRequest) -> JudgeResponse:
    return check_response(request, transport(request))


class ExternalJudge:
    """Adapts a transport to the ``score(task, op)`` judge interface.

    ``op=None`` sends the raw prompt as its own crafted prompt. Timeouts are
    retried ``retries`` times; protocol errors are not.
    """

    def __init__(self, transport, retries: int = 3):
        self.transport = transport
        self.retries = retries
        self.calls = 0
        self._next_id = 0

    def score(self, task: PromptTask, operation_id: int | None) -> float:
        raw = task.raw_text
        crafted = raw if operation_id is None else craft_prompt(raw, operation_id)
        request = JudgeRequest(self._next_id, raw, crafted)
        self._next_id += 1
        for attempt in range(self.retries + 1):
            try:
                resp = external_judge_call(self.transport, request)
                break
            except JudgeTimeoutError:
                log.warning("judge timeout on request %d (attempt %d)", request.id, attempt + 1)
                if attempt == self.retries:
                    raise
        self.calls += 1
        return resp.score

    def close(self):
        self.transport.close()


def collect_expert_dataset(judge, n_prompts: int = 50, seed: int = 0,
                           tables: JudgeTables | None = None,
                           source: str = "synthetic_judge") -> ExpertDataset:
    """Score every operation on ``n_prompts`` sampled raw prompts.

    Records come out prompt-major, operation-minor. On a judge failure the
    raised :class:`CollectionError` reports how many calls had completed.
    """
    if n_prompts <= 0:
        raise ValueError("n_prompts must be positive")
    tables = tables or getattr(judge, "tables", None) or JudgeTables()
    pool, _ = task_pool(n_prompts, seed, tables)
    total = n_prompts * (N_OPERATIONS + 1)
    done = 0
    records = []
    try:
        for task in pool:
            baseline = judge.score(task, None)
            done += 1
            x = tuple(state_features(task, baseline).tolist())
            for op in range(N_OPERATIONS):
                score = judge.score(task, op)
                done += 1
                records.append(ExpertRecord(x, op, float(score), task.raw_text,
                                            craft_prompt(task.raw_text, op)))
    except JudgeError as exc:
        raise CollectionError(str(exc), done, total) from exc
    return ExpertDataset(records, source, N_OPERATIONS,
                         meta={"n_prompts": n_prompts, "seed": seed})


def synthetic_expert_dataset(n_prompts: int = 50, seed: int = 0,
                             tables: JudgeTables | None = None) -> ExpertDataset:
    tables = tables or JudgeTables()
    return collect_expert_dataset(SyntheticJudge(tables, noise_seed=seed), n_prompts, seed, tables)


def expert_argmax(tables: JudgeTables, task: PromptTask) -> int:
    return int(np.argmax(tables.class_scores(task.preference_class)))
