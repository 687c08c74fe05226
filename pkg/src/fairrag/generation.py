"""Generator adapters, string-utility metrics, and utility labeling.

Two generator backends share one interface: an external worker process
speaking line-delimited JSON over stdin/stdout, and a built-in synthetic
generator whose output is a pure function of the payload tokens visible in
the prompt. Responses from a prompt are cached per adapter, which both
speeds up repeated rankings and pins down within-session determinism.
"""

from __future__ import annotations

import json
import math
import os
import re
import select
import shlex
import subprocess
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .collection import LabelEntry, Query, TestCollection, UtilityLabelSet
from .retrievers import RankedList

__all__ = [
    "GeneratorError",
    "ProtocolError",
    "GeneratorTimeout",
    "GeneratorProcessError",
    "MetricConfigError",
    "PromptTemplate",
    "build_prompt",
    "SyntheticGenerator",
    "ExternalProcessGenerator",
    "CachingGenerator",
    "UtilityMetricSpec",
    "string_utility",
    "expected_utility",
    "empirical_max_utility",
    "normalize_eu",
    "label_utilities",
]

DEFAULT_TEMPLATE = (
    "Answer the question using the provided items.\n"
    "Items:\n{items}\n"
    "Question: {input}\n"
    "Answer:"
)


class GeneratorError(RuntimeError):
    """Base class for generator transport failures."""


class ProtocolError(GeneratorError):
    """Worker sent something outside the line-delimited JSON protocol."""


class GeneratorTimeout(GeneratorError):
    """Worker did not respond within the configured per-request timeout."""


class GeneratorProcessError(GeneratorError):
    """Worker process exited or its pipes broke mid-conversation."""


class MetricConfigError(ValueError):
    """Utility metric configured inconsistently with the task data."""


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt skeleton with one {input} and one {items} placeholder."""

    template: str = DEFAULT_TEMPLATE
    item_delimiter: str = "\n"

    def __post_init__(self) -> None:
        for placeholder in ("{input}", "{items}"):
            count = self.template.count(placeholder)
            if count != 1:
                raise ValueError(
                    f"template must contain {placeholder} exactly once, found {count}"
                )

    def render(self, input_text: str, item_texts: Sequence[str]) -> str:
        items = self.item_delimiter.join(item_texts)
        return self.template.replace("{items}", items).replace("{input}", input_text)


def build_prompt(query: Query, ranking: RankedList, template: PromptTemplate) -> str:
    """Substitute the query input and the ranked items' texts, in ranking order."""
    texts = [query.item(item_id).text for item_id in ranking.ordered_items]
    return template.render(query.input_text, texts)


_PAYLOAD_TOKEN = re.compile(r"@\w+")


class SyntheticGenerator:
    """Deterministic stand-in generator for desk-scale experiments.

    Emits the sorted, deduplicated set of payload tokens (``@``-prefixed)
    visible anywhere in the prompt, joined by single spaces. Combined with
    the planted collections this yields closed-form utility gains.
    """

    name = "synthetic"

    def generate(self, prompt: str) -> str:
        tokens = sorted(set(_PAYLOAD_TOKEN.findall(prompt.lower())))
        return " ".join(tokens)

    def generate_many(self, prompts: Sequence[str]) -> list[str]:
        return [self.generate(p) for p in prompts]

    def close(self) -> None:
        pass

    def __enter__(self) -> "SyntheticGenerator":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


class _LineReader:
    """Deadline-aware line reader over a binary pipe."""

    def __init__(self, stream) -> None:
        self._fd = stream.fileno()
        self._buffer = b""

    def readline(self, deadline: float) -> bytes | None:
        """Next line without trailing newline, or None at EOF."""
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError
            ready, _, _ = select.select([self._fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(self._fd, 1 << 16)
            if not chunk:
                return None
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line


class ExternalProcessGenerator:
    """Adapter for a worker process speaking line-delimited JSON.

    The worker must print ``{"ready": true}`` on startup. Requests are
    ``{"id": int, "prompt": str}``; responses ``{"id": int, "output": str}``
    and may arrive out of order, but every id must match an outstanding
    request.
    """

    def __init__(self, command: str | Sequence[str], timeout: float = 60.0) -> None:
        self._argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self._argv:
            raise ValueError("generator command must be non-empty")
        self.name = "cmd:" + " ".join(self._argv)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._reader: _LineReader | None = None
        self._next_id = 0

    def _fail_process(self, request_id: int | None, reason: str) -> GeneratorProcessError:
        code = self._proc.poll() if self._proc is not None else None
        where = f"request {request_id}" if request_id is not None else "startup"
        return GeneratorProcessError(
            f"worker {self._argv[0]!r} failed at {where}: {reason} (exit code {code})"
        )

    def _ensure_started(self) -> None:
        if self._proc is not None:
            return
        self._proc = subprocess.Popen(
            self._argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )
        self._reader = _LineReader(self._proc.stdout)
        deadline = time.monotonic() + self.timeout
        try:
            line = self._reader.readline(deadline)
        except TimeoutError:
            raise GeneratorTimeout(
                f"worker {self._argv[0]!r} did not announce readiness "
                f"within {self.timeout}s"
            ) from None
        if line is None:
            raise self._fail_process(None, "exited before announcing readiness")
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"invalid readiness line: {line!r}") from exc
        if message.get("ready") is not True:
            raise ProtocolError(f"expected ready announcement, got {message!r}")

    def _send(self, request_id: int, prompt: str) -> None:
        payload = json.dumps({"id": request_id, "prompt": prompt}) + "\n"
        try:
            self._proc.stdin.write(payload.encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise self._fail_process(request_id, f"stdin write failed: {exc}") from exc

    def _receive(self, outstanding: set[int]) -> tuple[int, str]:
        deadline = time.monotonic() + self.timeout
        try:
            line = self._reader.readline(deadline)
        except TimeoutError:
            raise GeneratorTimeout(
                f"no response for request(s) {sorted(outstanding)} "
                f"within {self.timeout}s"
            ) from None
        if line is None:
            raise self._fail_process(min(outstanding), "exited mid-request")
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(
                f"malformed response while waiting on {sorted(outstanding)}: {line!r}"
            ) from exc
        if not isinstance(message, dict) or "id" not in message or "output" not in message:
            raise ProtocolError(f"response missing id/output fields: {message!r}")
        response_id = message["id"]
        if response_id not in outstanding:
            raise ProtocolError(
                f"response id {response_id!r} does not match outstanding "
                f"request(s) {sorted(outstanding)}"
            )
        return response_id, str(message["output"])

    def generate_many(self, prompts: Sequence[str]) -> list[str]:
        self._ensure_started()
        ids = list(range(self._next_id, self._next_id + len(prompts)))
        self._next_id += len(prompts)
        for request_id, prompt in zip(ids, prompts):
            self._send(request_id, prompt)
        outstanding = set(ids)
        outputs: dict[int, str] = {}
        while outstanding:
            response_id, output = self._receive(outstanding)
            outstanding.discard(response_id)
            outputs[response_id] = output
        return [outputs[i] for i in ids]

    def generate(self, prompt: str) -> str:
        return self.generate_many([prompt])[0]

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        self._proc = None
        self._reader = None

    def __enter__(self) -> "ExternalProcessGenerator":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


class CachingGenerator:
    """Memoizes generator outputs by prompt.

    Safe because adapters are contractually deterministic within a session;
    repeated rankings and labeling passes reuse prior generations.
    """

    def __init__(self, adapter) -> None:
        self._adapter = adapter
        self._cache: dict[str, str] = {}
        self.name = adapter.name

    def generate(self, prompt: str) -> str:
        hit = self._cache.get(prompt)
        if hit is None:
            hit = self._adapter.generate(prompt)
            self._cache[prompt] = hit
        return hit

    def generate_many(self, prompts: Sequence[str]) -> list[str]:
        misses = [p for p in dict.fromkeys(prompts) if p not in self._cache]
        if misses:
            for prompt, output in zip(misses, self._adapter.generate_many(misses)):
                self._cache[prompt] = output
        return [self._cache[p] for p in prompts]

    def close(self) -> None:
        self._adapter.close()

    def __enter__(self) -> "CachingGenerator":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


METRIC_NAMES = ("exact_match", "token_f1", "rouge1_f", "mae_inverted")


@dataclass(frozen=True)
class UtilityMetricSpec:
    """Named string-utility metric; all outputs are higher-better.

    ``upper_bound`` is required for mae_inverted (the maximum absolute
    error on the task's rating scale) and is the metric ceiling there;
    the other metrics live in [0, 1].
    """

    name: str
    upper_bound: float | None = None

    def __post_init__(self) -> None:
        if self.name not in METRIC_NAMES:
            raise MetricConfigError(
                f"unknown metric {self.name!r}; expected one of {METRIC_NAMES}"
            )
        if self.name == "mae_inverted":
            if self.upper_bound is None or self.upper_bound <= 0:
                raise MetricConfigError(
                    "mae_inverted requires a positive upper_bound"
                )

    @property
    def max_value(self) -> float:
        return self.upper_bound if self.name == "mae_inverted" else 1.0

    @classmethod
    def parse(cls, text: str) -> "UtilityMetricSpec":
        """Parse ``name`` or ``name:upper_bound`` (e.g. ``mae_inverted:4``)."""
        name, _, bound = text.partition(":")
        return cls(name=name, upper_bound=float(bound) if bound else None)


def _bag_f1(target_tokens: list[str], output_tokens: list[str]) -> float:
    if not target_tokens and not output_tokens:
        return 1.0
    if not target_tokens or not output_tokens:
        return 0.0
    overlap = sum((Counter(target_tokens) & Counter(output_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(output_tokens)
    recall = overlap / len(target_tokens)
    return 2 * precision * recall / (precision + recall)


_WORD = re.compile(r"\w+")


def _parse_number(text: str) -> float | None:
    try:
        value = float(text.strip())
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def string_utility(metric: UtilityMetricSpec, target: str, output: str) -> float:
    """Score an output against the target; higher is better for every metric.

    mae_inverted turns a lower-better absolute error into upper_bound - |e|,
    floored at 0 so utilities stay within [0, upper_bound]; a non-numeric
    output scores 0, a non-numeric target is a configuration error.
    """
    if metric.name == "exact_match":
        return 1.0 if target.strip() == output.strip() else 0.0
    if metric.name == "token_f1":
        return _bag_f1(target.lower().split(), output.lower().split())
    if metric.name == "rouge1_f":
        return _bag_f1(_WORD.findall(target.lower()), _WORD.findall(output.lower()))
    # mae_inverted
    target_value = _parse_number(target)
    if target_value is None:
        raise MetricConfigError(f"mae_inverted target is not numeric: {target!r}")
    output_value = _parse_number(output)
    if output_value is None:
        return 0.0
    return max(0.0, metric.upper_bound - abs(target_value - output_value))


def expected_utility(utilities: Sequence[float]) -> float:
    """Monte-Carlo expected utility: the mean over per-ranking utilities."""
    if len(utilities) < 1:
        raise ValueError("expected_utility needs at least one utility")
    return float(sum(utilities) / len(utilities))


def empirical_max_utility(utilities: Iterable[float]) -> float:
    """Empirical utility ceiling: the maximum over every sampled utility."""
    best = None
    for value in utilities:
        if best is None or value > best:
            best = value
    if best is None:
        raise ValueError("empirical_max_utility needs at least one utility")
    return float(best)


def normalize_eu(eu_raw: float, u_max: float) -> float:
    """Expected utility as closeness to the empirical ceiling, in [0, 1].

    A ceiling of exactly 0 (every run scored zero) yields 0; callers flag
    those queries in their reports.
    """
    if u_max < 0:
        raise ValueError("u_max must be non-negative")
    if u_max == 0:
        return 0.0
    return min(1.0, max(0.0, eu_raw / u_max))


def _empty_ranking(query_id: str) -> RankedList:
    return RankedList(query_id=query_id, ordered_items=(), truncation_k=0)


def _single_ranking(query_id: str, item_id: str) -> RankedList:
    return RankedList(query_id=query_id, ordered_items=(item_id,), truncation_k=1)


def label_utilities(
    collection: TestCollection,
    adapter,
    metric: UtilityMetricSpec,
    template: PromptTemplate,
    checkpoint_path: str | Path | None = None,
) -> UtilityLabelSet:
    """Binary utility labels from single-item utility gains.

    Per query, the generator is prompted once without any item (baseline
    utility) and once per item with only that item in context; an item is
    labeled useful exactly when its utility gain over the baseline is
    strictly positive.

    When ``checkpoint_path`` is given, each completed query is appended to
    it as one JSON line, and queries already present are skipped on rerun,
    so generator failures abort only the query in flight.
    """
    adapter = (
        adapter if isinstance(adapter, CachingGenerator) else CachingGenerator(adapter)
    )
    entries: dict[tuple[str, str], LabelEntry] = {}
    done: set[str] = set()
    if checkpoint_path is not None:
        checkpoint_path = Path(checkpoint_path)
        if checkpoint_path.exists():
            with checkpoint_path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    done.add(record["query_id"])
                    for item_id, (label, gain) in record["entries"].items():
                        entries[(record["query_id"], item_id)] = LabelEntry(
                            label=int(label), gain=float(gain)
                        )

    for query in collection.queries:
        if query.query_id in done:
            continue
        baseline_prompt = build_prompt(query, _empty_ranking(query.query_id), template)
        baseline = string_utility(
            metric, query.target_output, adapter.generate(baseline_prompt)
        )
        prompts = [
            build_prompt(query, _single_ranking(query.query_id, item.item_id), template)
            for item in query.corpus
        ]
        outputs = adapter.generate_many(prompts)
        per_item: dict[str, tuple[int, float]] = {}
        for item, output in zip(query.corpus, outputs):
            gain = string_utility(metric, query.target_output, output) - baseline
            label = 1 if gain > 0 else 0
            per_item[item.item_id] = (label, gain)
            entries[(query.query_id, item.item_id)] = LabelEntry(label=label, gain=gain)
        if checkpoint_path is not None:
            with checkpoint_path.open("a", encoding="utf-8") as handle:
                handle.write(
                    json.dumps(
                        {
                            "query_id": query.query_id,
                            "baseline_utility": baseline,
                            "entries": per_item,
                        }
                    )
                    + "\n"
                )
    return UtilityLabelSet(entries=entries)
