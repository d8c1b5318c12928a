"""Command-line entry point: one subcommand per pipeline stage plus `run`."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace as dc_replace
from pathlib import Path

import click

from . import annotate as annotate_mod
from . import langid as langid_mod
from . import preprocess as preprocess_mod
from .annotate import Gazetteer, TaggedSequence, validate_bio
from .errors import ConfigError, CtikitError
from .evaluate import accuracy_matrix, render_accuracy_matrix, span_prf, write_report
from .ingest import CorpusStore, ingest_source, parse_rfc3339, utc_now
from .model.events import event_to_json, extract_events
from .model.serialize import load_model, save_model
from .model.training import train, train_dev_split
from .pipeline import (
    CONFIG_EXIT_CODE,
    STAGE_EXIT_CODES,
    run_pipeline,
    validate_config,
)

logger = logging.getLogger("ctikit")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Pipeline config file (default for subcommands that need one).")
@click.option("--workdir", type=click.Path(), default=None, help="Override the config workdir.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, workdir: str | None,
         seed: int | None, verbose: bool) -> None:
    """Multilingual threat-feed toolkit: ingest, preprocess, label, train, extract."""
    _setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj.update(config=config_path, workdir=workdir, seed=seed)


def _load_config(ctx: click.Context, config_path: str | None):
    path = config_path or ctx.obj.get("config")
    if not path:
        _fail(CONFIG_EXIT_CODE, "a --config file is required")
    try:
        config = validate_config(path)
    except ConfigError as exc:
        _fail(CONFIG_EXIT_CODE, str(exc))
    overrides = {}
    if ctx.obj.get("workdir"):
        workdir = Path(ctx.obj["workdir"])
        workdir.mkdir(parents=True, exist_ok=True)
        overrides["workdir"] = workdir
    if ctx.obj.get("seed") is not None:
        overrides["seed"] = ctx.obj["seed"]
    return dc_replace(config, **overrides) if overrides else config


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=False)
@click.option("--out", "out_path", type=click.Path(), required=True, help="Corpus file to append to.")
@click.option("--fixed-clock", default=None,
              help="RFC 3339 instant to stamp on every record (reproducible ingests).")
@click.pass_context
def ingest(ctx: click.Context, config_path: str | None, out_path: str, fixed_clock: str | None) -> None:
    """Read every configured source into a deduplicated raw corpus."""
    config = _load_config(ctx, config_path)
    clock = utc_now
    if fixed_clock is not None:
        instant = parse_rfc3339(fixed_clock)
        clock = lambda: instant  # noqa: E731
    store = CorpusStore(out_path)
    failures = 0
    for source in config.sources:
        try:
            report = ingest_source(source, store, clock=clock)
        except CtikitError as exc:
            logger.error("source %s unavailable: %s", source.source_id, exc)
            failures += 1
            continue
        click.echo(json.dumps(vars(report), sort_keys=True))
    if failures:
        sys.exit(STAGE_EXIT_CODES["ingest"])


@main.command("detect-lang")
@click.option("--profiles", "profiles_path", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--min-chars", type=int, default=langid_mod.DEFAULT_MIN_CHARS, show_default=True)
@click.option("--default-lang", default="en", show_default=True)
def detect_lang(profiles_path: str, corpus_path: str, out_path: str,
                min_chars: int, default_lang: str) -> None:
    """Segment a raw corpus into per-language buckets."""
    profiles = langid_mod.load_profiles(profiles_path)
    store = CorpusStore(corpus_path)
    buckets = langid_mod.segment_by_language(iter(store), profiles, min_chars=min_chars)
    payload = {
        "buckets": {lang: [str(rid) for rid in ids] for lang, ids in buckets.items()},
        "default_lang": default_lang,
        "min_chars": min_chars,
    }
    Path(out_path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    click.echo(json.dumps({lang: len(ids) for lang, ids in sorted(buckets.items())}))


@main.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--lang-manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--resources", "resources_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def preprocess(corpus_path: str, manifest_path: str, resources_dir: str, out_dir: str) -> None:
    """Normalize, tokenize, flag stopwords, lemmatize, and stem a corpus."""
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    lang_of = {
        int(rid): lang for lang, ids in manifest["buckets"].items() for rid in ids
    }
    default_lang = manifest.get("default_lang", "en")
    resources = {
        lang: preprocess_mod.load_resources(resources_dir, lang)
        for lang in preprocess_mod.available_languages(resources_dir)
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docs = []
    for record in CorpusStore(corpus_path):
        verdict = langid_mod.LanguageVerdict(
            lang_of.get(record.record_id, langid_mod.UNDETERMINED), 1.0
        )
        docs.append(
            preprocess_mod.preprocess_doc(record, verdict, resources, default_lang=default_lang)
        )
    preprocess_mod.write_docs_jsonl(docs, out / "docs.jsonl")
    wrote_parquet = preprocess_mod.write_tokens_parquet(docs, out / "tokens.parquet")
    click.echo(json.dumps({"docs": len(docs), "parquet": wrote_parquet}))


@main.command()
@click.option("--docs", "docs_path", type=click.Path(exists=True), required=True,
              help="Directory containing docs.jsonl, or the file itself.")
@click.option("--gazetteer", "gazetteer_path", type=click.Path(exists=True), required=True)
@click.option("--gold", "gold_path", type=click.Path(exists=True), default=None)
@click.option("--schema", "schema_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--channel", default="normalized", show_default=True,
              type=click.Choice(["normalized", "lemma", "stem"]))
def annotate(docs_path: str, gazetteer_path: str, gold_path: str | None,
             schema_path: str, out_path: str, channel: str) -> None:
    """Produce silver BIO labels from regex + gazetteer (+ optional gold)."""
    docs_file = Path(docs_path)
    if docs_file.is_dir():
        docs_file = docs_file / "docs.jsonl"
    docs = preprocess_mod.read_docs_jsonl(docs_file)
    schema = annotate_mod.load_schema(schema_path)
    gazetteer = Gazetteer.from_tsv(gazetteer_path)
    gold_spans: dict[str, list] = {}
    if gold_path:
        for seq in annotate_mod.read_label_file(gold_path, schema):
            gold_spans[seq.record_id] = [
                dc_replace(span, source="gold")
                for span in annotate_mod.spans_of(seq.labels, schema)
            ]
    sequences = [
        annotate_mod.annotate_doc(
            doc, gazetteer, schema,
            gold_spans=gold_spans.get(str(doc.record_id), ()),
            channel=channel,
        )
        for doc in docs
    ]
    annotate_mod.write_label_file(sequences, schema, out_path)
    click.echo(json.dumps({"sequences": len(sequences)}))


@main.command("train")
@click.option("--data", "labels_path", type=click.Path(exists=True), required=True)
@click.option("--docs", "docs_path", type=click.Path(exists=True), required=True)
@click.option("--dev-split", type=float, default=0.2, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out", "model_path", type=click.Path(), required=True)
@click.pass_context
def train_command(ctx: click.Context, labels_path: str, docs_path: str,
                  dev_split: float, config_path: str, model_path: str) -> None:
    """Train the sequence labeler on a label file + preprocessed docs."""
    config = _load_config(ctx, config_path)
    docs_file = Path(docs_path)
    if docs_file.is_dir():
        docs_file = docs_file / "docs.jsonl"
    docs = preprocess_mod.read_docs_jsonl(docs_file)
    sequences = annotate_mod.read_label_file(labels_path, config.schema)
    by_id = {str(d.record_id): d for d in docs}
    attached = []
    for seq in sequences:
        doc = by_id.get(seq.record_id)
        if doc is None:
            _fail(STAGE_EXIT_CODES["train"], f"no document for record {seq.record_id}")
        attached.append(
            dc_replace(
                seq,
                token_texts=tuple(
                    annotate_mod.token_channel_texts(doc, config.embedder.text_channel)
                ),
            )
        )
    train_set, dev_set = train_dev_split(attached, dev_split, config.train.seed)
    aug_resources = None
    if config.train.augment:
        from .model.augment import load_augment_resources

        aug_resources = {
            lang: load_augment_resources(config.resources_dir, lang)
            for lang in preprocess_mod.available_languages(config.resources_dir)
        }
    try:
        model, history = train(
            train_set, dev_set, config.train, config.embedder, config.schema,
            aug_resources=aug_resources,
        )
    except CtikitError as exc:
        _fail(STAGE_EXIT_CODES["train"], str(exc))
    digest = save_model(model, model_path)
    history_path = Path(model_path).with_name("history.jsonl")
    with open(history_path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    final = history[-1] if history else {}
    click.echo(json.dumps({"model_sha256": digest, **final}, sort_keys=True))


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--docs", "docs_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def extract(model_path: str, docs_path: str, out_path: str) -> None:
    """Decode documents into events (and a predictions label file)."""
    model = load_model(model_path)
    docs_file = Path(docs_path)
    if docs_file.is_dir():
        docs_file = docs_file / "docs.jsonl"
    docs = preprocess_mod.read_docs_jsonl(docs_file)
    out = Path(out_path)
    predictions_path = out.with_name("predictions.jsonl")
    n_events = 0
    with open(out, "w", encoding="utf-8") as ev, open(
        predictions_path, "w", encoding="utf-8"
    ) as pred:
        for doc in docs:
            token_texts = annotate_mod.token_channel_texts(doc, model.embed_config.text_channel)
            labels = model.predict(token_texts) if token_texts else []
            seq = TaggedSequence(record_id=str(doc.record_id), lang=doc.lang, labels=tuple(labels))
            pred.write(annotate_mod.sequence_to_json(seq, model.schema) + "\n")
            for event in extract_events(doc, model):
                ev.write(event_to_json(event) + "\n")
                n_events += 1
    click.echo(json.dumps({"documents": len(docs), "events": n_events}))


@main.command("eval")
@click.option("--gold", "gold_path", type=click.Path(exists=True), required=True)
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def eval_command(gold_path: str, pred_path: str, schema_path: str | None, out_path: str) -> None:
    """Score a predictions label file against gold."""
    schema = annotate_mod.load_schema(schema_path) if schema_path else annotate_mod.LabelSchema()
    gold = annotate_mod.read_label_file(gold_path, schema)
    pred = annotate_mod.read_label_file(pred_path, schema, strict_bio=False)
    try:
        report = span_prf(gold, pred, schema)
    except CtikitError as exc:
        _fail(STAGE_EXIT_CODES["eval"], str(exc))
    violations = sum(len(validate_bio(seq.labels, schema)) for seq in pred)
    write_report(report, out_path, extra={"bio_violations": violations})
    click.echo(render_accuracy_matrix({"run": report}))


@main.command()
@click.option("--runs", "runs_dir", type=click.Path(exists=True), required=True,
              help="Directory of <variant>.json eval reports.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def report(runs_dir: str, out_path: str | None) -> None:
    """Render the cross-variant accuracy matrix from saved eval reports."""
    results = {}
    for path in sorted(Path(runs_dir).glob("*.json")):
        results[path.stem] = json.loads(path.read_text(encoding="utf-8"))
    if not results:
        _fail(STAGE_EXIT_CODES["eval"], f"no .json reports under {runs_dir}")
    click.echo(render_accuracy_matrix(results))
    if out_path:
        Path(out_path).write_text(
            json.dumps(accuracy_matrix(results), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=False)
@click.option("--force", is_flag=True, help="Re-run every stage even if up to date.")
@click.pass_context
def run(ctx: click.Context, config_path: str | None, force: bool) -> None:
    """Run the whole pipeline from one config file."""
    config = _load_config(ctx, config_path)
    code, manifest = run_pipeline(config, force=force)
    click.echo(json.dumps({"exit": code, "stages": [m["stage"] for m in manifest]}))
    if code != 0:
        sys.exit(code)


if __name__ == "__main__":
    main()
