"""End-to-end pipeline: one config file drives every stage in order.

ingest -> detect-lang -> preprocess -> annotate -> train -> extract -> eval

Each stage writes into workdir/<stage>/ and appends an entry of input and
output hashes to workdir/manifest.json.  A stage is skipped when its input
hashes match the recorded entry and its outputs still hash the same, which
makes reruns cheap and deletion of any stage directory a precise way to
reproduce just that stage.

Reproducibility policy: all randomness flows from the single config seed
through named sub-seeds (seed XOR hash(stage name)), and pipeline-driven
ingestion stamps records with a fixed reference clock so stage outputs are
pure functions of their inputs.  Wall-clock timings appear only in files
that are excluded from output hashing (the training history).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace as dc_replace
from datetime import datetime, timezone
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import annotate as annotate_mod
from . import langid as langid_mod
from . import preprocess as preprocess_mod
from .annotate import Gazetteer, LabelSchema, TaggedSequence, validate_bio
from .embed import EmbedderConfig
from .errors import ConfigError, CtikitError
from .evaluate import render_accuracy_matrix, span_prf, write_report
from .hashing import bytes_sha256, file_sha256, sub_seed
from .ingest import CorpusStore, SourceConfig, ingest_source
from .model.events import event_to_json, extract_events
from .model.serialize import load_model, save_model
from .model.training import TrainConfig, train, train_dev_split
from .preprocess import PreprocessedDoc

logger = logging.getLogger(__name__)

STAGES = ("ingest", "detect-lang", "preprocess", "annotate", "train", "extract", "eval")
STAGE_EXIT_CODES = {name: 10 + i for i, name in enumerate(STAGES)}
CONFIG_EXIT_CODE = 2

# Reference instant used by pipeline-driven ingestion (see module docstring).
FIXED_CLOCK = datetime(1970, 1, 1, tzinfo=timezone.utc)

BUILTIN_RESOURCES = "builtin"


def builtin_resources_dir() -> Path:
    return Path(str(importlib_resources.files("ctikit").joinpath("resources")))


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    workdir: Path
    sources: tuple[SourceConfig, ...]
    langid_profiles: Path | None
    langid_seed_samples: Path | None
    langid_min_chars: int
    langid_n_max: int
    default_lang: str
    resources_dir: Path
    schema: LabelSchema
    gazetteer: Path
    gold: Path | None
    embedder: EmbedderConfig
    train: TrainConfig
    dev_split: float


def _require_keys(obj: Mapping, allowed: Mapping[str, bool], path: str) -> None:
    """Strict key check: unknown keys are config errors (catches typos)."""
    for key in obj:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(where, "unknown key")
    for key, required in allowed.items():
        if required and key not in obj:
            where = f"{path}.{key}" if path else key
            raise ConfigError(where, "missing required key")


def _expect(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(path, message)


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def validate_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a pipeline config file.

    Unknown keys anywhere are rejected; documented defaults are applied;
    relative paths resolve against the config file's directory; the
    special resources_dir value "builtin" selects the packaged resources.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    base = path.parent
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a JSON object")

    _require_keys(
        raw,
        {
            "seed": False, "workdir": True, "sources": True, "langid": False,
            "resources_dir": True, "schema": False, "annotate": False,
            "embedder": False, "train": False,
        },
        "",
    )
    seed = raw.get("seed", 0)
    _expect(isinstance(seed, int), "seed", "must be an integer")

    _expect(isinstance(raw["sources"], list) and raw["sources"], "sources", "must be a non-empty list")
    sources = []
    seen_ids = set()
    for i, entry in enumerate(raw["sources"]):
        spath = f"sources[{i}]"
        _expect(isinstance(entry, dict), spath, "must be an object")
        _require_keys(
            entry,
            {"source_id": True, "kind": True, "location": True,
             "format_hint": False, "poll_interval": False},
            spath,
        )
        try:
            cfg = SourceConfig(
                source_id=entry["source_id"],
                kind=entry["kind"],
                location=entry["location"],
                format_hint=entry.get("format_hint", "json_lines"),
                poll_interval=float(entry.get("poll_interval", 0.0)),
            )
        except ValueError as exc:
            raise ConfigError(spath, str(exc)) from exc
        _expect(cfg.source_id not in seen_ids, f"{spath}.source_id", "duplicate source_id")
        seen_ids.add(cfg.source_id)
        if cfg.kind in ("file", "export_dump"):
            location = _resolve(base, cfg.location)
            _expect(location.exists(), f"{spath}.location", f"file not found: {location}")
            cfg = SourceConfig(cfg.source_id, cfg.kind, str(location), cfg.format_hint, cfg.poll_interval)
        sources.append(cfg)

    lid = raw.get("langid", {})
    _require_keys(
        lid,
        {"profiles": False, "seed_samples": False, "min_chars": False,
         "default_lang": False, "n_max": False},
        "langid",
    )
    profiles = lid.get("profiles")
    seed_samples = lid.get("seed_samples")
    _expect(
        (profiles is None) != (seed_samples is None),
        "langid",
        "exactly one of 'profiles' or 'seed_samples' is required",
    )
    profiles_path = _resolve(base, profiles) if profiles else None
    samples_path = _resolve(base, seed_samples) if seed_samples else None
    if profiles_path is not None:
        _expect(profiles_path.exists(), "langid.profiles", f"file not found: {profiles_path}")
    if samples_path is not None:
        _expect(samples_path.is_dir(), "langid.seed_samples", f"directory not found: {samples_path}")
    min_chars = lid.get("min_chars", langid_mod.DEFAULT_MIN_CHARS)
    _expect(isinstance(min_chars, int) and min_chars >= 0, "langid.min_chars", "must be an integer >= 0")
    n_max = lid.get("n_max", 3)
    _expect(isinstance(n_max, int) and 1 <= n_max <= 6, "langid.n_max", "must be an integer in [1, 6]")
    default_lang = lid.get("default_lang", "en")

    resources_value = raw["resources_dir"]
    if resources_value == BUILTIN_RESOURCES:
        resources_dir = builtin_resources_dir()
    else:
        resources_dir = _resolve(base, resources_value)
    _expect(resources_dir.is_dir(), "resources_dir", f"directory not found: {resources_dir}")

    if "schema" in raw and raw["schema"] is not None:
        schema_path = _resolve(base, raw["schema"])
        _expect(schema_path.exists(), "schema", f"file not found: {schema_path}")
        try:
            schema = annotate_mod.load_schema(schema_path)
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError("schema", f"invalid schema file: {exc}") from exc
    else:
        schema = LabelSchema()

    ann = raw.get("annotate", {})
    _require_keys(ann, {"gazetteer": False, "gold": False}, "annotate")
    gazetteer = (
        _resolve(base, ann["gazetteer"]) if ann.get("gazetteer")
        else resources_dir / "gazetteer.tsv"
    )
    _expect(gazetteer.exists(), "annotate.gazetteer", f"file not found: {gazetteer}")
    gold = _resolve(base, ann["gold"]) if ann.get("gold") else None
    if gold is not None:
        _expect(gold.exists(), "annotate.gold", f"file not found: {gold}")

    emb = raw.get("embedder", {})
    _require_keys(
        emb,
        {"backend": False, "dim": False, "vocab_buckets": False, "seed": False,
         "text_channel": False, "endpoint": False, "vectors": False},
        "embedder",
    )
    try:
        embedder = EmbedderConfig(
            backend=emb.get("backend", "hashed"),
            dim=int(emb.get("dim", 32)),
            vocab_buckets=int(emb.get("vocab_buckets", 4096)),
            seed=int(emb["seed"]) if emb.get("seed") is not None else sub_seed(seed, "embed"),
            text_channel=emb.get("text_channel", "normalized"),
            endpoint=emb.get("endpoint"),
            vectors=str(_resolve(base, emb["vectors"])) if emb.get("vectors") else None,
        )
    except ValueError as exc:
        raise ConfigError("embedder", str(exc)) from exc

    trn = raw.get("train", {})
    _require_keys(
        trn,
        {"learning_rate": False, "epochs": False, "batch_size": False, "seed": False,
         "optimizer": False, "grad_clip_norm": False, "early_stop_patience": False,
         "augment": False, "hard_bio_constraints": False, "hidden_size": False,
         "max_seq_len": False, "dev_split": False},
        "train",
    )
    dev_split = float(trn.get("dev_split", 0.2))
    _expect(0 <= dev_split < 1, "train.dev_split", "must be in [0, 1)")
    try:
        train_config = TrainConfig(
            learning_rate=float(trn.get("learning_rate", 1e-2)),
            epochs=int(trn.get("epochs", 60)),
            batch_size=int(trn.get("batch_size", 8)),
            seed=int(trn["seed"]) if trn.get("seed") is not None else sub_seed(seed, "train"),
            optimizer=trn.get("optimizer", "adam"),
            grad_clip_norm=float(trn.get("grad_clip_norm", 5.0)),
            early_stop_patience=int(trn.get("early_stop_patience", 10)),
            augment=tuple(trn.get("augment", ())),
            hard_bio_constraints=bool(trn.get("hard_bio_constraints", True)),
            hidden_size=int(trn.get("hidden_size", 16)),
            max_seq_len=int(trn.get("max_seq_len", 256)),
        )
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from exc

    workdir = _resolve(base, raw["workdir"])
    try:
        workdir.mkdir(parents=True, exist_ok=True)
        probe = workdir / ".write-probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise ConfigError("workdir", f"not writable: {exc}") from exc

    return PipelineConfig(
        seed=seed,
        workdir=workdir,
        sources=tuple(sources),
        langid_profiles=profiles_path,
        langid_seed_samples=samples_path,
        langid_min_chars=min_chars,
        langid_n_max=n_max,
        default_lang=default_lang,
        resources_dir=resources_dir,
        schema=schema,
        gazetteer=gazetteer,
        gold=gold,
        embedder=embedder,
        train=train_config,
        dev_split=dev_split,
    )


# ---------------------------------------------------------------------------
# Stage plumbing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    name: str
    inputs: tuple[Path, ...]          # files hashed into the input fingerprint
    outputs: tuple[Path, ...]         # deterministic outputs, hashed
    config_digest: str                # canonical digest of the relevant knobs
    run: Callable[[], None]


def _digest(obj: object) -> str:
    return bytes_sha256(json.dumps(obj, sort_keys=True, default=str).encode("utf-8"))


def _input_hashes(stage: Stage) -> list[str]:
    hashes = [stage.config_digest]
    for path in stage.inputs:
        hashes.append(file_sha256(path))
    return hashes


def _output_hashes(stage: Stage) -> list[str]:
    return [file_sha256(path) for path in stage.outputs]


def _load_manifest(path: Path) -> dict[str, dict]:
    if not path.exists():
        return {}
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return {}
    return {entry["stage"]: entry for entry in entries}


def _write_manifest(path: Path, entries: dict[str, dict]) -> None:
    ordered = [entries[name] for name in STAGES if name in entries]
    path.write_text(
        json.dumps(ordered, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _can_skip(stage: Stage, previous: dict | None) -> bool:
    if previous is None:
        return False
    if previous.get("inputs") != _input_hashes(stage):
        return False
    if not all(p.exists() for p in stage.outputs):
        return False
    return previous.get("outputs") == _output_hashes(stage)


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------

def _attach_tokens(
    sequences: Sequence[TaggedSequence],
    docs: Sequence[PreprocessedDoc],
    channel: str,
) -> list[TaggedSequence]:
    by_id = {str(doc.record_id): doc for doc in docs}
    out = []
    for seq in sequences:
        doc = by_id.get(seq.record_id)
        if doc is None:
            raise CtikitError(f"label record {seq.record_id} has no preprocessed document")
        out.append(
            dc_replace(
                seq,
                token_texts=tuple(annotate_mod.token_channel_texts(doc, channel)),
            )
        )
    return out


def _build_stages(config: PipelineConfig) -> list[Stage]:
    w = config.workdir
    dirs = {name: w / name for name in STAGES}

    corpus_path = dirs["ingest"] / "corpus.jsonl"
    reports_path = dirs["ingest"] / "reports.json"
    profiles_path = dirs["detect-lang"] / "profiles.json"
    assignments_path = dirs["detect-lang"] / "assignments.json"
    docs_path = dirs["preprocess"] / "docs.jsonl"
    tokens_path = dirs["preprocess"] / "tokens.parquet"
    labels_path = dirs["annotate"] / "labels.jsonl"
    model_path = dirs["train"] / "model.json"
    history_path = dirs["train"] / "history.jsonl"
    events_path = dirs["extract"] / "events.jsonl"
    predictions_path = dirs["extract"] / "predictions.jsonl"
    report_path = dirs["eval"] / "report.json"

    def run_ingest() -> None:
        dirs["ingest"].mkdir(parents=True, exist_ok=True)
        if corpus_path.exists():
            corpus_path.unlink()
        store = CorpusStore(corpus_path)
        reports = [
            ingest_source(source, store, clock=lambda: FIXED_CLOCK)
            for source in config.sources
        ]
        reports_path.write_text(
            json.dumps([vars(r) for r in reports], sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

    def run_detect_lang() -> None:
        dirs["detect-lang"].mkdir(parents=True, exist_ok=True)
        if config.langid_profiles is not None:
            profiles = langid_mod.load_profiles(config.langid_profiles)
        else:
            samples = {}
            for sample_file in sorted(config.langid_seed_samples.glob("*.txt")):
                lang = sample_file.stem
                samples[lang] = [
                    line for line in sample_file.read_text(encoding="utf-8").splitlines()
                    if line.strip()
                ]
            profiles = langid_mod.train_profiles(samples, n_max=config.langid_n_max)
        langid_mod.save_profiles(profiles, profiles_path)
        store = CorpusStore(corpus_path)
        buckets = langid_mod.segment_by_language(
            iter(store), profiles, min_chars=config.langid_min_chars
        )
        assignments_path.write_text(
            json.dumps(
                {
                    "buckets": {
                        lang: [str(rid) for rid in ids] for lang, ids in buckets.items()
                    },
                    "default_lang": config.default_lang,
                    "min_chars": config.langid_min_chars,
                },
                sort_keys=True,
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )

    def run_preprocess() -> None:
        dirs["preprocess"].mkdir(parents=True, exist_ok=True)
        assignments = json.loads(assignments_path.read_text(encoding="utf-8"))
        lang_of = {
            int(rid): lang
            for lang, ids in assignments["buckets"].items()
            for rid in ids
        }
        resources = {
            lang: preprocess_mod.load_resources(config.resources_dir, lang)
            for lang in preprocess_mod.available_languages(config.resources_dir)
        }
        store = CorpusStore(corpus_path)
        docs = []
        for record in store:
            verdict = langid_mod.LanguageVerdict(
                lang_of.get(record.record_id, langid_mod.UNDETERMINED), 1.0
            )
            docs.append(
                preprocess_mod.preprocess_doc(
                    record, verdict, resources, default_lang=config.default_lang
                )
            )
        preprocess_mod.write_docs_jsonl(docs, docs_path)
        preprocess_mod.write_tokens_parquet(docs, tokens_path)

    def run_annotate() -> None:
        dirs["annotate"].mkdir(parents=True, exist_ok=True)
        docs = preprocess_mod.read_docs_jsonl(docs_path)
        gazetteer = Gazetteer.from_tsv(config.gazetteer)
        gold_spans: dict[str, list] = {}
        if config.gold is not None:
            for seq in annotate_mod.read_label_file(config.gold, config.schema):
                gold_spans[seq.record_id] = [
                    dc_replace(span, source="gold")
                    for span in annotate_mod.spans_of(seq.labels, config.schema)
                ]
        sequences = [
            annotate_mod.annotate_doc(
                doc,
                gazetteer,
                config.schema,
                gold_spans=gold_spans.get(str(doc.record_id), ()),
                channel=config.embedder.text_channel,
            )
            for doc in docs
        ]
        annotate_mod.write_label_file(sequences, config.schema, labels_path)

    def run_train() -> None:
        dirs["train"].mkdir(parents=True, exist_ok=True)
        docs = preprocess_mod.read_docs_jsonl(docs_path)
        sequences = annotate_mod.read_label_file(labels_path, config.schema)
        sequences = _attach_tokens(sequences, docs, config.embedder.text_channel)
        train_set, dev_set = train_dev_split(sequences, config.dev_split, config.train.seed)
        aug_resources = None
        if config.train.augment:
            from .model.augment import load_augment_resources

            aug_resources = {
                lang: load_augment_resources(config.resources_dir, lang)
                for lang in preprocess_mod.available_languages(config.resources_dir)
            }
        model, history = train(
            train_set, dev_set, config.train, config.embedder, config.schema,
            aug_resources=aug_resources,
        )
        save_model(model, model_path)
        with open(history_path, "w", encoding="utf-8") as fh:
            for entry in history:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def run_extract() -> None:
        dirs["extract"].mkdir(parents=True, exist_ok=True)
        model = load_model(model_path)
        docs = preprocess_mod.read_docs_jsonl(docs_path)
        with open(events_path, "w", encoding="utf-8") as ev, open(
            predictions_path, "w", encoding="utf-8"
        ) as pred:
            for doc in docs:
                token_texts = annotate_mod.token_channel_texts(
                    doc, model.embed_config.text_channel
                )
                labels = model.predict(token_texts) if token_texts else []
                seq = TaggedSequence(
                    record_id=str(doc.record_id), lang=doc.lang, labels=tuple(labels)
                )
                pred.write(annotate_mod.sequence_to_json(seq, model.schema) + "\n")
                for event in extract_events(doc, model):
                    ev.write(event_to_json(event) + "\n")

    def run_eval() -> None:
        dirs["eval"].mkdir(parents=True, exist_ok=True)
        gold = annotate_mod.read_label_file(labels_path, config.schema)
        pred = annotate_mod.read_label_file(predictions_path, config.schema, strict_bio=False)
        report = span_prf(gold, pred, config.schema)
        violations = sum(
            len(validate_bio(seq.labels, config.schema)) for seq in pred
        )
        write_report(report, report_path, extra={"bio_violations": violations, "variant": "bigru-crf"})
        logger.info("\n%s", render_accuracy_matrix({"bigru-crf": report}))

    langid_inputs = [corpus_path]
    if config.langid_profiles is not None:
        langid_inputs.append(config.langid_profiles)
    else:
        langid_inputs.extend(sorted(config.langid_seed_samples.glob("*.txt")))

    annotate_inputs = [docs_path, config.gazetteer]
    if config.gold is not None:
        annotate_inputs.append(config.gold)

    return [
        Stage(
            name="ingest",
            inputs=tuple(
                Path(s.location) for s in config.sources if s.kind in ("file", "export_dump")
            ),
            outputs=(corpus_path, reports_path),
            config_digest=_digest([vars(s) for s in config.sources]),
            run=run_ingest,
        ),
        Stage(
            name="detect-lang",
            inputs=tuple(langid_inputs),
            outputs=(profiles_path, assignments_path),
            config_digest=_digest(
                {"min_chars": config.langid_min_chars, "n_max": config.langid_n_max,
                 "default_lang": config.default_lang}
            ),
            run=run_detect_lang,
        ),
        Stage(
            name="preprocess",
            inputs=(corpus_path, assignments_path),
            outputs=(docs_path,),  # the parquet mirror is written but not hashed
            config_digest=_digest({"resources_dir": str(config.resources_dir)}),
            run=run_preprocess,
        ),
        Stage(
            name="annotate",
            inputs=tuple(annotate_inputs),
            outputs=(labels_path,),
            config_digest=_digest(
                {"schema": list(config.schema.entity_types),
                 "channel": config.embedder.text_channel}
            ),
            run=run_annotate,
        ),
        Stage(
            name="train",
            inputs=(docs_path, labels_path),
            outputs=(model_path,),  # history carries timings; written, not hashed
            config_digest=_digest(
                {"train": vars(config.train), "embedder": vars(config.embedder),
                 "dev_split": config.dev_split}
            ),
            run=run_train,
        ),
        Stage(
            name="extract",
            inputs=(model_path, docs_path),
            outputs=(events_path, predictions_path),
            config_digest=_digest({}),
            run=run_extract,
        ),
        Stage(
            name="eval",
            inputs=(labels_path, predictions_path),
            outputs=(report_path,),
            config_digest=_digest({"schema": list(config.schema.entity_types)}),
            run=run_eval,
        ),
    ]


def run_pipeline(config: PipelineConfig, force: bool = False) -> tuple[int, list[dict]]:
    """Execute all stages; returns (exit code, manifest entries).

    The first failing stage aborts the run with its stage-specific exit
    code.  Stages whose inputs and outputs both hash unchanged are skipped.
    """
    manifest_path = config.workdir / "manifest.json"
    entries = _load_manifest(manifest_path)

    for stage in _build_stages(config):
        previous = None if force else entries.get(stage.name)
        if _can_skip(stage, previous):
            logger.info("stage %s: up to date, skipped", stage.name)
            continue
        logger.info("stage %s: running", stage.name)
        started = time.perf_counter()
        try:
            stage.run()
        except Exception as exc:
            logger.error("stage %s failed: %s", stage.name, exc)
            return STAGE_EXIT_CODES[stage.name], [
                entries[name] for name in STAGES if name in entries
            ]
        wall_ms = int((time.perf_counter() - started) * 1000)
        entries[stage.name] = {
            "stage": stage.name,
            "inputs": _input_hashes(stage),
            "outputs": _output_hashes(stage),
            "wall_ms": wall_ms,
        }
        _write_manifest(manifest_path, entries)

    _write_manifest(manifest_path, entries)
    return 0, [entries[name] for name in STAGES if name in entries]
