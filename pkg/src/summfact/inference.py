"""Run taxonomy prompting over a corpus with repeats, alignment and resumable output."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .alignment import AlignmentConfig, align_document, align_window
from .corpus import SummaryExample
from .errors import ContentRefusal, IncompleteRun, SummFactError, UnknownErrorToken, UnparseableResponse
from .llm import DEFAULT_MODEL, Backend, ChatRequest
from .prompting import PromptTemplate, Window, aggregate_windows, default_template, parse_response, segment_windows
from .taxonomy import Verdict

log = logging.getLogger(__name__)

METHODS = ("factax", "factax_wd")
LONG_DOCUMENT_DOMAINS = ("Reports", "Stories")


@dataclass
class RunConfig:
    method: str = "factax"
    repeats: int = 3
    alignment: AlignmentConfig | None = field(default_factory=AlignmentConfig)
    align_domains: tuple[str, ...] = LONG_DOCUMENT_DOMAINS
    force_alignment: bool = False
    model_name: str = DEFAULT_MODEL
    temperature: float = 0.0
    max_output_tokens: int = 1024
    concurrency_limit: int = 4
    output_path: str | None = None
    target_words: int = 30
    # re-queries after an unparseable or off-taxonomy answer
    retry_unknown: int = 1
    seed: int = 0

    def __post_init__(self):
        self.method = self.method.replace("-", "_")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.concurrency_limit < 1:
            raise ValueError("concurrency_limit must be >= 1")

    def aligns(self, example: SummaryExample) -> bool:
        return self.force_alignment or example.domain in self.align_domains

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["align_domains"] = list(self.align_domains)
        return data


@dataclass
class VerdictRecord:
    example_id: str
    run_index: int
    verdict: Verdict | None
    per_window: list[tuple[Window, Verdict]] | None = None
    raw_responses: list[str] = field(default_factory=list)
    latency: float = 0.0
    dataset_id: str = ""
    domain: str = ""
    flags: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.example_id, self.run_index)

    @property
    def ok(self) -> bool:
        return self.error is None and self.verdict is not None

    def to_dict(self) -> dict[str, Any]:
        """Serializable form; latency is kept out so record files stay reproducible."""
        return {
            "example_id": self.example_id,
            "run_index": self.run_index,
            "dataset_id": self.dataset_id,
            "domain": self.domain,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "per_window": None if self.per_window is None else [
                {"window": asdict(w), "verdict": v.to_dict()} for w, v in self.per_window
            ],
            "raw_responses": self.raw_responses,
            "flags": self.flags,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "VerdictRecord":
        per_window = data.get("per_window")
        return cls(
            example_id=data["example_id"],
            run_index=int(data["run_index"]),
            verdict=Verdict.from_dict(data["verdict"]) if data.get("verdict") else None,
            per_window=None if per_window is None else [
                (Window(**item["window"]), Verdict.from_dict(item["verdict"])) for item in per_window
            ],
            raw_responses=list(data.get("raw_responses") or []),
            dataset_id=data.get("dataset_id", ""),
            domain=data.get("domain", ""),
            flags=list(data.get("flags") or []),
            error=data.get("error"),
        )


def record_line(record: VerdictRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"


def read_records(path: str | Path) -> list[VerdictRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            try:
                records.append(VerdictRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError):
                # a run killed mid-write can leave one truncated trailing line
                log.warning("skipping unreadable record line in %s", path)
    return records


def write_records(records: Iterable[VerdictRecord], path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        for rec in sorted(records, key=lambda r: r.key):
            handle.write(record_line(rec))
    os.replace(tmp, path)


def manifest_path(output_path: str | Path) -> Path:
    output_path = Path(output_path)
    return output_path.with_name(output_path.stem + ".manifest.json")


class Runner:
    def __init__(self, config: RunConfig, backend: Backend, template: PromptTemplate | None = None):
        self.config = config
        self.backend = backend
        self.template = template or default_template()
        self.calls = 0
        self._calls_lock = threading.Lock()

    def _request(self, prompt: str) -> ChatRequest:
        cfg = self.config
        return ChatRequest.user(
            prompt, cfg.model_name, temperature=cfg.temperature, max_output_tokens=cfg.max_output_tokens
        )

    def query(self, prompt: str, mode: str) -> tuple[Verdict, list[str], list[str]]:
        request = self._request(prompt)
        raws: list[str] = []
        problem: SummFactError | None = None
        for _ in range(1 + self.config.retry_unknown):
            with self._calls_lock:
                self.calls += 1
            try:
                text = self.backend.complete(request).text
            except ContentRefusal as exc:
                raws.append("")
                problem = UnparseableResponse(f"refusal: {exc}")
                continue
            raws.append(text)
            try:
                return parse_response(text, mode), raws, []
            except (UnknownErrorToken, UnparseableResponse) as exc:
                problem = exc
        flag = f"fallback:{type(problem).__name__}:{problem}"
        return Verdict(False, frozenset(), raws[-1] if raws else ""), raws, [flag]

    def process(self, example: SummaryExample, run_index: int) -> VerdictRecord:
        cfg = self.config
        start = time.perf_counter()
        record = VerdictRecord(example.id, run_index, None, dataset_id=example.dataset_id,
                               domain=example.domain)
        align = cfg.alignment is not None and cfg.aligns(example)
        try:
            if cfg.method == "factax":
                context = align_document(example.document, example.summary, cfg.alignment) if align else example.document
                mode = "score" if example.gold.kind == "score" else "classify"
                prompt = self.template.render(context, example.summary, mode)
                record.verdict, record.raw_responses, record.flags = self.query(prompt, mode)
            else:
                record.per_window = []
                for window in segment_windows(example.summary, cfg.target_words):
                    context = align_window(example.document, window.text, cfg.alignment) if align else example.document
                    prompt = self.template.render(context, window.text, "classify")
                    verdict, raws, flags = self.query(prompt, "classify")
                    record.per_window.append((window, verdict))
                    record.raw_responses.extend(raws)
                    record.flags.extend(f"window {window.index}: {f}" for f in flags)
                record.verdict = aggregate_windows(v for _, v in record.per_window)
        except SummFactError as exc:
            record.verdict = None
            record.per_window = None
            record.error = f"{type(exc).__name__}: {exc}"
        record.latency = time.perf_counter() - start
        return record


def _write_manifest(config: RunConfig, backend: Backend, template: PromptTemplate, n_examples: int,
                    started: str, finished: str, resumed: int, new: int) -> None:
    manifest = {
        "config": config.to_dict(),
        "template_sha256": template.sha256,
        "backend_kind": getattr(backend, "kind", type(backend).__name__),
        "seed": config.seed,
        "examples": n_examples,
        "records_resumed": resumed,
        "records_new": new,
        "started": started,
        "finished": finished,
        "notes": [
            "temperature defaults to 0; decoding settings of the original runs are unreported",
            "window prompts are independent calls; score for windowed runs is the clean-window fraction",
        ],
    }
    path = manifest_path(config.output_path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run(
    examples: Sequence[SummaryExample],
    config: RunConfig,
    backend: Backend,
    template: PromptTemplate | None = None,
    resume: bool = True,
    progress: Callable[[VerdictRecord], None] | None = None,
) -> list[VerdictRecord]:
    """Query the backend for every (example, run) pair not yet completed.

    Records are appended to ``config.output_path`` as they finish; at the end the
    file is rewritten sorted by (example_id, run_index). Failed records are kept
    with their error and retried on the next resume.
    """
    if config.alignment is None:
        long_docs = [ex.id for ex in examples if ex.domain in config.align_domains]
        if long_docs:
            raise ValueError(f"long-document examples need an alignment config: {long_docs[:3]}")
    runner = Runner(config, backend, template)
    started = datetime.now(timezone.utc).isoformat()
    out = Path(config.output_path) if config.output_path else None
    done: dict[tuple[str, int], VerdictRecord] = {}
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        if resume and out.exists():
            for rec in read_records(out):
                if rec.ok:
                    done[rec.key] = rec
        elif out.exists():
            out.unlink()
    resumed = len(done)

    todo = [(ex, r) for ex in examples for r in range(config.repeats) if (ex.id, r) not in done]
    results: dict[tuple[str, int], VerdictRecord] = dict(done)
    sink_lock = threading.Lock()
    timings = []

    def finish(record: VerdictRecord) -> None:
        with sink_lock:
            results[record.key] = record
            timings.append({"example_id": record.example_id, "run_index": record.run_index,
                            "latency": record.latency})
            if out is not None:
                with open(out, "a", encoding="utf-8") as handle:
                    handle.write(record_line(record))
            if progress is not None:
                progress(record)

    if config.concurrency_limit == 1:
        for ex, r in todo:
            finish(runner.process(ex, r))
    else:
        with ThreadPoolExecutor(max_workers=config.concurrency_limit) as pool:
            futures = [pool.submit(runner.process, ex, r) for ex, r in todo]
            for fut in as_completed(futures):
                finish(fut.result())

    records = sorted(results.values(), key=lambda r: r.key)
    if out is not None:
        write_records(records, out)
        timing_path = out.with_name(out.stem + ".timings.jsonl")
        with open(timing_path, "a", encoding="utf-8") as handle:
            for t in timings:
                handle.write(json.dumps(t) + "\n")
        _write_manifest(config, backend, runner.template, len(examples), started,
                        datetime.now(timezone.utc).isoformat(), resumed, len(todo))
    failures = sum(1 for r in records if not r.ok)
    if failures:
        log.warning("%d of %d records failed; rerun with resume to retry them", failures, len(records))
    return records


def predictions(
    records: Iterable[VerdictRecord],
    policy: str = "per_run",
    runs: Sequence[int] | None = None,
    example_ids: Iterable[str] | None = None,
    strict: bool = True,
) -> dict[int, dict[str, Verdict]]:
    """Group verdicts by run index.

    Both policies return one prediction set per run: averaging is done on the
    metric values downstream (see ``evaluation.average_runs``), never by voting.
    Under ``strict`` every requested run must cover every example.
    """
    if policy not in ("per_run", "averaged"):
        raise ValueError(f"unknown prediction policy {policy!r}")
    by_run: dict[int, dict[str, Verdict]] = {}
    seen: set[str] = set()
    for rec in records:
        seen.add(rec.example_id)
        if rec.ok:
            by_run.setdefault(rec.run_index, {})[rec.example_id] = rec.verdict
    wanted = set(example_ids) if example_ids is not None else seen
    run_ids = list(runs) if runs is not None else sorted(by_run)
    if strict:
        for r in run_ids:
            missing = wanted - set(by_run.get(r, {}))
            if missing:
                raise IncompleteRun(f"run {r} is missing {len(missing)} example(s), e.g. {sorted(missing)[:3]}")
    return {r: by_run.get(r, {}) for r in run_ids}
