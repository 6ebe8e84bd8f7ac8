"""Command-line driver: convert, align, infer, eval, distill, report."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__
from .alignment import AlignmentConfig, align_document, align_window
from .corpus import SchemaDescriptor, Splits, load_corpus, write_examples
from .distill import SETTINGS, ForgeSetting, build_training_corpus, export_corpus, sample_with_ratio
from .errors import SummFactError
from .evaluation import EvalReport, evaluate, macro_score
from .inference import RunConfig, read_records, run
from .llm import DEFAULT_MODEL, BackendConfig, make_backend
from .prompting import PromptTemplate, default_template, segment_windows
from .taxonomy import CANONICAL_ORDER, load_overrides

log = logging.getLogger("summfact")

ENV_PREFIX = "SUMMFACT_"

# Fallbacks used when a setting comes from neither a flag, the config file nor the environment.
DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "backend": "remote",
    "template": None,
    "out": None,
    "verbose": 0,
    "schema": None,
    "overrides": None,
    "max_tokens": 1024,
    "window_sentences": 5,
    "target_words": 30,
    "method": "factax",
    "repeats": 3,
    "concurrency": 4,
    "model": DEFAULT_MODEL,
    "temperature": 0.0,
    "endpoint": "https://api.openai.com/v1",
    "credentials_env": "OPENAI_API_KEY",
    "session": None,
    "audit": None,
    "flip_probability": 0.0,
    "requests_per_second": None,
    "force_alignment": False,
    "thresholds": None,
    "setting": "I-Binary",
    "format": "plain",
    "epoch_size": None,
}

# Default JSON Lines mapping for raw dataset exports.
DEFAULT_SCHEMA = SchemaDescriptor(labels_field="labels", consistent_field="consistent", score_field="score")


def _add_global(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it, it overrides SUMMFACT_* env vars")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--backend", choices=BackendConfig.KINDS)
    parser.add_argument("--template", help="prompt template file")
    parser.add_argument("--out", help="output file, directory or prefix")
    parser.add_argument("-v", "--verbose", action="count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="summfact", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a raw dataset export into the unified format")
    _add_global(p)
    p.add_argument("input")
    p.add_argument("--dataset", required=True)
    p.add_argument("--schema", help="JSON schema descriptor for the source records")
    p.add_argument("--overrides", help="TSV of manual label resolutions")

    p = sub.add_parser("align", help="show the aligned context for one document and summary")
    _add_global(p)
    p.add_argument("document", help="document text file")
    p.add_argument("summary", help="summary text file")
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--window-sentences", type=int)
    p.add_argument("--target-words", type=int)
    p.add_argument("--per-window", action="store_true", help="align each summary window separately")

    p = sub.add_parser("infer", help="run the detector over a unified corpus")
    _add_global(p)
    p.add_argument("corpus")
    p.add_argument("--method", choices=("factax", "factax-wd", "factax_wd"))
    p.add_argument("--repeats", type=int)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--endpoint")
    p.add_argument("--credentials-env")
    p.add_argument("--session", help="session file for the replay and record backends")
    p.add_argument("--audit", help="audit log for the remote backend")
    p.add_argument("--flip-probability", type=float, help="oracle backend answer corruption rate")
    p.add_argument("--requests-per-second", type=float)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--window-sentences", type=int)
    p.add_argument("--target-words", type=int)
    p.add_argument("--force-alignment", action="store_const", const=True)
    p.add_argument("--resume", action="store_true", help="keep finished records and query only the rest")

    p = sub.add_parser("eval", help="score run records against gold labels")
    _add_global(p)
    p.add_argument("records")
    p.add_argument("gold")
    p.add_argument("--thresholds", help="JSON map of dataset id to score threshold")

    p = sub.add_parser("distill", help="build a fine-tuning corpus from assembled splits")
    _add_global(p)
    p.add_argument("splits", help="directory with train_one/train_two/test .jsonl files")
    p.add_argument("--setting", choices=SETTINGS)
    p.add_argument("--format", choices=("plain", "chat"))
    p.add_argument("--epoch-size", type=int, help="draw a ratio-stratified epoch of this size")

    p = sub.add_parser("report", help="render a saved report, or MACRO from domain scores")
    _add_global(p)
    p.add_argument("input", help="report JSON, or a JSON map of domain to score")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def resolve_settings(
    parser: argparse.ArgumentParser, args: argparse.Namespace, environ: Mapping[str, str] | None = None
) -> argparse.Namespace:
    """Fill unset options from the config file, then the environment, then defaults."""
    environ = os.environ if environ is None else environ
    sub = _subparser(parser, args.command)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    config_path = args.config or environ.get(ENV_PREFIX + "CONFIG")
    config: dict[str, Any] = {}
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {config_path}: {exc}")
        if not isinstance(raw, dict):
            parser.error("config file must hold a JSON object")
        known = set(DEFAULTS) | {a.dest for cmd in COMMANDS
                                 for a in _subparser(parser, cmd)._actions}
        for key, value in raw.items():
            if isinstance(value, dict) and key in COMMANDS:
                bad = set(value) - known
                if bad:
                    parser.error(f"unknown setting(s) in config section {key!r}: {sorted(bad)}")
                if key == args.command:
                    config.update({k.replace("-", "_"): v for k, v in value.items()})
            elif key.replace("-", "_") not in known:
                parser.error(f"unknown setting in config: {key!r}")
            else:
                config.setdefault(key.replace("-", "_"), value)
    for dest, action in actions.items():
        current = getattr(args, dest, None)
        if current is not None and current is not False:
            continue
        if dest in config:
            value = config[dest]
        elif ENV_PREFIX + dest.upper() in environ:
            value = environ[ENV_PREFIX + dest.upper()]
            if action.type is not None:
                value = action.type(value)
            elif action.const is True or isinstance(action, argparse._StoreTrueAction):
                value = value.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(action, argparse._CountAction):
                value = int(value)
        else:
            value = DEFAULTS.get(dest, getattr(args, dest, None))
        if action.choices is not None and value is not None and value not in action.choices:
            parser.error(f"invalid value for {dest}: {value!r} (choose from {', '.join(map(str, action.choices))})")
        setattr(args, dest, value)
    args.verbose = args.verbose or 0
    return args


def _settings_hash(args: argparse.Namespace) -> str:
    data = {k: v for k, v in vars(args).items() if k not in ("config",)}
    return hashlib.sha256(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()


def cli_manifest(args: argparse.Namespace, inputs: Sequence[str], extra: Mapping[str, Any] | None = None) -> dict:
    return {
        "command": args.command,
        "inputs": list(inputs),
        "settings_sha256": _settings_hash(args),
        "seed": args.seed,
        "versions": {"summfact": __version__, "python": platform.python_version()},
        **(extra or {}),
    }


def _write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sidecar(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _template(args) -> PromptTemplate:
    return PromptTemplate.load(args.template) if args.template else default_template()


# -- commands -------------------------------------------------------------------

def cmd_convert(args) -> int:
    schema = SchemaDescriptor.load(args.schema) if args.schema else DEFAULT_SCHEMA
    overrides = load_overrides(args.overrides) if args.overrides else None
    result = load_corpus(args.input, args.dataset, schema, overrides)
    out = Path(args.out or Path(args.input).with_suffix(".unified.jsonl"))
    write_examples(result.examples, out)

    dist: Counter = Counter()
    for ex in result.examples:
        if ex.gold.kind != "inconsistent":
            dist[ex.gold.kind] += 1
        elif not ex.gold.types:
            dist["inconsistent (untyped)"] += 1
        for t in ex.gold.types:
            dist[t.label] += 1
    print(f"{len(result.examples)} examples written to {out}")
    order = ["consistent", "score", "inconsistent (untyped)"] + [t.label for t in CANONICAL_ORDER]
    for key in order:
        if dist[key]:
            print(f"  {key:<24} {dist[key]}")
    _write_json(_sidecar(out), cli_manifest(args, [args.input], {
        "dataset_id": args.dataset, "examples": len(result.examples),
        "type_distribution": dict(sorted(dist.items())), "unresolved": len(result.problems),
    }))
    if result.problems:
        print(f"{len(result.problems)} record(s) could not be converted:", file=sys.stderr)
        for problem in result.problems:
            print(f"  {type(problem).__name__}: {problem}", file=sys.stderr)
        return 1
    return 0


def _read_text(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def cmd_align(args) -> int:
    document, summary = _read_text(args.document), _read_text(args.summary)
    config = AlignmentConfig(args.max_tokens, args.window_sentences)
    if args.per_window:
        blocks = []
        for window in segment_windows(summary, args.target_words):
            blocks.append(f"## window {window.index}: {window.text}\n{align_window(document, window.text, config)}")
        text = "\n\n".join(blocks) + "\n"
    else:
        text = align_document(document, summary, config) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_infer(args) -> int:
    examples = load_corpus(args.corpus, strict=True).examples
    out = args.out or str(Path(args.corpus).with_suffix(".records.jsonl"))
    template = _template(args)
    run_config = RunConfig(
        method=args.method,
        repeats=args.repeats,
        alignment=AlignmentConfig(args.max_tokens, args.window_sentences),
        force_alignment=bool(args.force_alignment),
        model_name=args.model,
        temperature=args.temperature,
        concurrency_limit=args.concurrency,
        output_path=out,
        target_words=args.target_words,
        seed=args.seed,
    )
    backend_config = BackendConfig(
        kind=args.backend,
        endpoint=args.endpoint,
        credentials_env=args.credentials_env,
        session_path=args.session,
        audit_path=args.audit,
        seed=args.seed,
        flip_probability=args.flip_probability,
        requests_per_second=args.requests_per_second,
        max_in_flight=args.concurrency,
    )
    backend = make_backend(backend_config, oracle_answers=examples)
    if args.backend == "oracle":
        backend.template = template

    totals = Counter(ex.domain for ex in examples)
    done: Counter = Counter()
    step = {dom: max(1, (n * run_config.repeats) // 10) for dom, n in totals.items()}

    def progress(record) -> None:
        done[record.domain] += 1
        n = totals[record.domain] * run_config.repeats
        if done[record.domain] % step[record.domain] == 0 or done[record.domain] == n:
            print(f"[{record.domain}] {done[record.domain]} new record(s)", file=sys.stderr)

    records = run(examples, run_config, backend, template, resume=args.resume, progress=progress)
    failed = [r for r in records if not r.ok]
    by_domain = Counter(r.domain for r in records if r.ok)
    for dom in sorted(totals):
        print(f"{dom:<10} {by_domain[dom]}/{totals[dom] * run_config.repeats} records")
    print(f"records written to {out}")
    if failed:
        print(f"{len(failed)} record(s) failed; rerun with --resume to retry", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    records = read_records(args.records)
    gold = load_corpus(args.gold, strict=True).examples
    thresholds = json.loads(_read_text(args.thresholds)) if args.thresholds else None
    report = evaluate(records, gold, thresholds)
    prefix = Path(args.out or Path(args.records).with_suffix(".report"))
    json_path, _ = report.write(prefix)
    _write_json(prefix.with_name(prefix.name + ".manifest.json"),
                cli_manifest(args, [args.records, args.gold], {"thresholds": thresholds}))
    sys.stdout.write(report.to_text())
    for warning in report.warnings:
        log.warning(warning)
    return 0


def cmd_distill(args) -> int:
    try:
        setting = ForgeSetting(args.setting, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    splits = Splits.read(args.splits)
    pairs, manifest = build_training_corpus(setting, splits)
    if args.epoch_size is not None:
        ratio = setting.sampling_ratio if setting.sampling_ratio is not None else manifest["natural_taxonomy_ratio"]
        pairs = sample_with_ratio(pairs, ratio, args.epoch_size, args.seed)
        manifest["epoch_size"] = args.epoch_size
    manifest["cli"] = cli_manifest(args, [args.splits])
    out = Path(args.out or Path(args.splits) / f"{setting.name.replace('&', 'and')}.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    export_corpus(pairs, out, args.format, manifest)
    kinds = Counter(p.kind for p in pairs)
    print(f"{len(pairs)} pairs written to {out}")
    print(f"  binary   {kinds['binary']}")
    print(f"  taxonomy {kinds['taxonomy']}")
    print(f"  taxonomy_ratio {manifest['taxonomy_ratio']:.4f}")
    return 0


def cmd_report(args) -> int:
    data = json.loads(_read_text(args.input))
    if isinstance(data, dict) and "per_dataset" in data:
        text = EvalReport.from_dict(data).to_text()
    elif isinstance(data, dict) and data and all(isinstance(v, (int, float)) for v in data.values()):
        lines = [f"{dom:<10} {float(v):.2f}" for dom, v in data.items()]
        lines.append(f"MACRO: {macro_score(data):.2f}")
        text = "\n".join(lines) + "\n"
    else:
        raise UsageError("input must be a saved report or a JSON map of domain to score")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


class UsageError(Exception):
    pass


COMMANDS = {
    "convert": cmd_convert,
    "align": cmd_align,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "distill": cmd_distill,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args = resolve_settings(parser, args)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _subparser(parser, args.command).error(str(exc))
    except (SummFactError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
