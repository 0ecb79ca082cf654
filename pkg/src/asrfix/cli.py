"""Command-line interface.

Subcommands: eval, mine, simulate, augment, export-sft, serve, plus
mine-feedback for turning the service's feedback log into KB candidates.

Exit codes: 0 success, 2 configuration/usage error, 3 data error. All
outputs are byte-deterministic given the same inputs, seed, and config.
"""

from __future__ import annotations

import functools
import json
import re
import sys
from pathlib import Path

import click

from .augment import (
    SplitFractions,
    VoiceProfile,
    build_dataset,
    load_noise_catalog,
    load_text_corpus,
)
from .corpus import UtteranceRecord, load_corpus, save_corpus
from .errors import ConfigError, DataError
from .kb import KnowledgeBase, Source, load_kb, mine_corpus_pairs, save_kb
from .llm import MockBehavior, mock_backend
from .metrics import normalize
from .pipeline import evaluate, parse_method
from .prompts import SftRecord, export_sft, load_template, write_sft_jsonl
from .seeding import fingerprint, stable_hash64
from .service import build_backend, create_app, load_service_config
from .simulate import load_profiles, simulate_nbest

__all__ = ["main"]


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)
        except OSError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _from_group(ctx: click.Context, key: str, value, default=None):
    """Per-command flags override the group-level globals."""
    if value is not None:
        return value
    group = ctx.obj or {}
    if group.get(key) is not None:
        return group[key]
    return default


@click.group()
@click.option("--seed", type=int, default=None, help="Default seed for all subcommands.")
@click.option("--config", type=click.Path(), default=None, help="Default config file.")
@click.option("--out", type=click.Path(), default=None, help="Default output path.")
@click.pass_context
def main(ctx: click.Context, seed: int | None, config: str | None, out: str | None) -> None:
    """Game-voice ASR transcript correction toolkit."""
    ctx.obj = {"seed": seed, "config": config, "out": out}


def _safe_name(name: str) -> str:
    return re.sub(r"[^\w.-]+", "_", name)


def _make_backend_factory(spec: str, config_dir: Path):
    """Backend factory from a CLI spec: mock:<behavior> or http:<config.json>.

    The factory takes the KB a method runs against, so KB-aware mocks honor
    RAG ablations.
    """
    kind, _, rest = spec.partition(":")
    if kind == "mock":
        try:
            behavior = MockBehavior(rest or "echo")
        except ValueError:
            raise ConfigError(f"unknown mock behavior {rest!r}") from None
        return lambda kb: mock_backend(kb, behavior)
    if kind == "http":
        if not rest:
            raise ConfigError("http backend needs a config file: http:<backend.json>")
        try:
            config = json.loads((config_dir / rest).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read backend config {rest!r}: {exc}") from exc
        backend = build_backend(config)
        return lambda kb: backend
    raise ConfigError(f"unknown backend spec {spec!r}; use mock:<behavior> or http:<config>")


@main.command("eval")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--method", "methods", multiple=True, required=True,
              help="vanilla:<source>, pipeline, pipeline-no-rag, pipeline-no-nbest:<source>. Repeatable.")
@click.option("--kb", "kb_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--backend", "backend_spec", default="mock:kb-replace", show_default=True)
@click.option("--template", "template_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--keep-punctuation", is_flag=True, help="Score with punctuation retained.")
@click.pass_context
@_cli_errors
def eval_cmd(ctx, corpus_path, methods, kb_path, backend_spec, template_path, out_dir,
             seed, workers, keep_punctuation) -> None:
    """Score correction methods over a corpus (CER/SER per method)."""
    out_dir = _from_group(ctx, "out", out_dir)
    if out_dir is None:
        raise ConfigError("eval needs --out (directory for reports)")
    seed = _from_group(ctx, "seed", seed, 0)

    records = load_corpus(corpus_path)
    kb = load_kb(kb_path) if kb_path else KnowledgeBase()
    template = load_template(template_path) if template_path else None
    method_specs = [parse_method(m) for m in methods]
    backend_factory = _make_backend_factory(backend_spec, Path(corpus_path).parent)

    corpus_bytes = Path(corpus_path).read_bytes()
    kb_bytes = Path(kb_path).read_bytes() if kb_path else b""
    config_fingerprint = fingerprint(
        json.dumps(
            {
                "corpus": fingerprint(corpus_bytes),
                "kb": fingerprint(kb_bytes),
                "methods": [m.name for m in method_specs],
                "backend": backend_spec,
                "seed": seed,
                "keep_punctuation": keep_punctuation,
            },
            sort_keys=True,
        ).encode("utf-8")
    )

    report, corrected = evaluate(
        records,
        method_specs,
        kb,
        backend_factory,
        corpus_id=Path(corpus_path).name,
        config_fingerprint=config_fingerprint,
        template=template,
        strip_punctuation=not keep_punctuation,
        workers=workers,
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.txt").write_text(report.render_table() + "\n", encoding="utf-8")
    for method_name, texts in corrected.items():
        lines = [
            json.dumps({"id": record.id, "text": text}, ensure_ascii=False)
            for record, text in zip(records, texts)
        ]
        (out / f"corrected_{_safe_name(method_name)}.jsonl").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )
    click.echo(report.render_table())


@main.command("mine")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.option("--max-span", type=int, default=3, show_default=True,
              help="Largest error region (in edit operations) kept as a pair.")
@click.option("--min-support", type=int, default=2, show_default=True)
@click.option("--keep-punctuation", is_flag=True)
@click.pass_context
@_cli_errors
def mine_cmd(ctx, corpus_path, out_path, max_span, min_support, keep_punctuation) -> None:
    """Mine (correct, erroneous) term pairs from a corpus into a KB file."""
    out_path = _from_group(ctx, "out", out_path)
    if out_path is None:
        raise ConfigError("mine needs --out (KB file path)")
    records = load_corpus(corpus_path)
    strip = not keep_punctuation
    triples = (
        (normalize(hyp.text, strip), normalize(record.reference, strip), record.id)
        for record in records
        for hyp in record.hypotheses
    )
    counts = mine_corpus_pairs(triples, max_span_chars=max_span, min_support=min_support)
    kb = KnowledgeBase()
    if counts:
        # One batch per distinct count so persisted counts reflect support.
        for (correct, erroneous), count in sorted(counts.items()):
            kb.add_entry(correct, erroneous, source=Source.MINED, count=count)
    save_kb(kb, out_path)
    click.echo(f"mined {len(counts)} pairs (min support {min_support}) -> {out_path}")


@main.command("simulate")
@click.option("--texts", "texts_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="UTF-8 lines: 'text' or 'id<TAB>text[<TAB>context]'.")
@click.option("--profiles", "profiles_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--context", "default_context", default="", help="Context for rows without one.")
@click.pass_context
@_cli_errors
def simulate_cmd(ctx, texts_path, profiles_path, out_path, seed, default_context) -> None:
    """Corrupt reference texts through simulated ASR channels into a corpus."""
    out_path = _from_group(ctx, "out", out_path)
    if out_path is None:
        raise ConfigError("simulate needs --out (corpus JSONL path)")
    seed = _from_group(ctx, "seed", seed, 0)
    profiles = load_profiles(profiles_path, seed_offset=stable_hash64("simulate", seed) % (2**31))

    records: list[UtteranceRecord] = []
    for lineno, line in enumerate(
        Path(texts_path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) == 1:
            utt_id, text, context = f"u{lineno:05d}", parts[0].strip(), default_context
        elif len(parts) in (2, 3):
            utt_id, text = parts[0].strip(), parts[1].strip()
            context = parts[2].strip() if len(parts) == 3 else default_context
        else:
            raise DataError(f"{texts_path}: line {lineno}: too many tab-separated fields")
        if not text:
            raise DataError(f"{texts_path}: line {lineno}: empty text")
        nbest = simulate_nbest(text, profiles, context=context, utterance_id=utt_id)
        records.append(
            UtteranceRecord(
                id=utt_id,
                reference=text,
                hypotheses=nbest.hypotheses,
                context=context,
            )
        )
    if not records:
        raise DataError(f"{texts_path}: no texts found")
    save_corpus(records, out_path)
    click.echo(f"simulated {len(records)} utterances x {len(profiles)} sources -> {out_path}")


@main.command("augment")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
@_cli_errors
def augment_cmd(ctx, config_path, out_dir, seed) -> None:
    """Build an audio training set (mock TTS + noise) from a text corpus."""
    config_path = _from_group(ctx, "config", config_path)
    if config_path is None:
        raise ConfigError("augment needs --config (augmentation JSON)")
    out_dir = _from_group(ctx, "out", out_dir)
    if out_dir is None:
        raise ConfigError("augment needs --out (dataset directory)")
    seed = _from_group(ctx, "seed", seed, 0)

    config_path = Path(config_path)
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigError(f"cannot parse {config_path}: {exc}") from exc

    if "texts" not in config:
        raise ConfigError(f"{config_path}: missing 'texts' (text corpus JSONL path)")
    texts = load_text_corpus(config_path.parent / config["texts"])
    real = []
    if config.get("real"):
        real = load_corpus(config_path.parent / config["real"])
    try:
        voices = [VoiceProfile(**v) for v in config.get("voices", [{"voice_id": "v-default"}])]
    except TypeError as exc:
        raise ConfigError(f"{config_path}: bad voice profile: {exc}") from None
    noises = []
    if config.get("noise_catalog"):
        noises = load_noise_catalog(config_path.parent / config["noise_catalog"])
    split = config.get("real_split")
    split_fractions = SplitFractions(**split) if split else None

    manifest = build_dataset(
        texts=texts,
        voices=voices,
        noises=noises,
        real=real,
        seed=seed,
        out_dir=out_dir,
        sample_rate=int(config.get("sample_rate", 16000)),
        clips_per_text=int(config.get("clips_per_text", 1)),
        split_fractions=split_fractions,
    )
    manifest.write_jsonl(Path(out_dir) / "manifest.jsonl")
    synthetic = sum(1 for row in manifest.rows if row.source == "tts")
    click.echo(
        f"dataset: {synthetic} synthetic + {len(manifest.rows) - synthetic} real rows -> {out_dir}"
    )


@main.command("export-sft")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--kb", "kb_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.option("--template", "template_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--no-rag", is_flag=True, help="Export prompts without KB lines.")
@click.option("--max-kb-lines", type=int, default=20, show_default=True)
@click.pass_context
@_cli_errors
def export_sft_cmd(ctx, corpus_path, kb_path, out_path, template_path, no_rag, max_kb_lines) -> None:
    """Export {prompt, target} JSONL for supervised fine-tuning."""
    out_path = _from_group(ctx, "out", out_path)
    if out_path is None:
        raise ConfigError("export-sft needs --out (JSONL path)")
    records = load_corpus(corpus_path)
    kb = load_kb(kb_path) if kb_path and not no_rag else KnowledgeBase()
    snapshot = kb.snapshot()
    template = load_template(template_path) if template_path else None

    def sft_records():
        for record in records:
            nbest = record.nbest()
            kb_pairs = () if no_rag else tuple(snapshot.retrieve([h.text for h in nbest.hypotheses]))
            yield SftRecord(nbest=nbest, kb_pairs=kb_pairs, reference=record.reference)

    with open(out_path, "w", encoding="utf-8") as fp:
        n = write_sft_jsonl(
            export_sft(sft_records(), template=template, max_kb_lines=max_kb_lines), fp
        )
    click.echo(f"exported {n} SFT rows -> {out_path}")


@main.command("mine-feedback")
@click.option("--log", "log_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.option("--max-span", type=int, default=3, show_default=True)
@click.option("--min-support", type=int, default=1, show_default=True)
@click.pass_context
@_cli_errors
def mine_feedback_cmd(ctx, log_path, out_path, max_span, min_support) -> None:
    """Mine KB candidate pairs from the service feedback log."""
    out_path = _from_group(ctx, "out", out_path)
    if out_path is None:
        raise ConfigError("mine-feedback needs --out (candidate KB file)")
    triples = []
    seen: set[str] = set()
    for lineno, line in enumerate(
        Path(log_path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            utt_id = row["utterance_id"]
            final_text = row["final_text"]
            hypotheses = row["hypotheses"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{log_path}: line {lineno}: bad feedback row: {exc}") from None
        if utt_id in seen:
            continue
        seen.add(utt_id)
        ref = normalize(final_text)
        for hyp in hypotheses:
            triples.append((normalize(hyp["text"]), ref, utt_id))
    counts = mine_corpus_pairs(triples, max_span_chars=max_span, min_support=min_support)
    kb = KnowledgeBase()
    for (correct, erroneous), count in sorted(counts.items()):
        kb.add_entry(correct, erroneous, source=Source.MINED, count=count)
    save_kb(kb, out_path)
    click.echo(f"mined {len(counts)} candidate pairs from feedback -> {out_path}")


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.pass_context
@_cli_errors
def serve_cmd(ctx, config_path, host, port) -> None:
    """Run the HTTP correction service."""
    import uvicorn

    config_path = _from_group(ctx, "config", config_path)
    if config_path is None:
        raise ConfigError("serve needs --config (service JSON)")
    settings, extras = load_service_config(config_path)
    app = create_app(settings)
    uvicorn.run(app, host=host or extras["host"], port=port or extras["port"])


if __name__ == "__main__":
    main()
