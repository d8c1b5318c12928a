"""Assemble extraction results from decoded label sequences.

One unified label space carries entities and EVENT triggers, so a single
decode yields both; arguments attach to their nearest trigger by token
distance.  Documents with entities but no trigger produce one UNANCHORED
record so nothing extracted is silently dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from ..annotate import Span, spans_of, token_channel_texts
from ..preprocess import PreprocessedDoc

UNANCHORED = "UNANCHORED"
TRIGGER_TYPE = "EVENT"


@dataclass(frozen=True)
class EventArgument:
    entity_type: str
    start_token: int
    end_token: int
    text: str


@dataclass(frozen=True)
class EventRecord:
    """One extracted event: trigger span (None when unanchored) + arguments."""

    record_id: int
    event_type: str
    trigger_start: int | None
    trigger_end: int | None
    trigger_text: str
    arguments: tuple[EventArgument, ...]


def _gap(entity: Span, trigger: Span) -> int:
    """Tokens strictly between two non-overlapping spans."""
    if entity.end_token <= trigger.start_token:
        return trigger.start_token - entity.end_token
    return entity.start_token - trigger.end_token


def assemble_events(
    record_id: int, spans: Sequence[Span], token_texts: Sequence[str]
) -> list[EventRecord]:
    """Group decoded spans into events around their triggers."""

    def text_of(span: Span) -> str:
        return " ".join(token_texts[span.start_token : span.end_token])

    triggers = [s for s in spans if s.entity_type == TRIGGER_TYPE]
    entities = [s for s in spans if s.entity_type != TRIGGER_TYPE]

    if not triggers:
        if not entities:
            return []
        return [
            EventRecord(
                record_id=record_id,
                event_type=UNANCHORED,
                trigger_start=None,
                trigger_end=None,
                trigger_text="",
                arguments=tuple(
                    EventArgument(e.entity_type, e.start_token, e.end_token, text_of(e))
                    for e in entities
                ),
            )
        ]

    attached: dict[int, list[EventArgument]] = {i: [] for i in range(len(triggers))}
    for entity in entities:
        # Nearest trigger; ties resolve to the earlier trigger.
        best = min(
            range(len(triggers)),
            key=lambda i: (_gap(entity, triggers[i]), triggers[i].start_token),
        )
        attached[best].append(
            EventArgument(entity.entity_type, entity.start_token, entity.end_token, text_of(entity))
        )

    return [
        EventRecord(
            record_id=record_id,
            event_type=trigger.entity_type,
            trigger_start=trigger.start_token,
            trigger_end=trigger.end_token,
            trigger_text=text_of(trigger),
            arguments=tuple(attached[i]),
        )
        for i, trigger in enumerate(triggers)
    ]


def extract_events(doc: PreprocessedDoc, model) -> list[EventRecord]:
    """Decode one document with a trained model and assemble its events."""
    token_texts = token_channel_texts(doc, model.embed_config.text_channel)
    if not token_texts:
        return []
    labels = model.predict(token_texts)
    spans = spans_of(labels, model.schema)
    return assemble_events(doc.record_id, spans, token_texts)


def event_to_json(event: EventRecord) -> str:
    trigger = None
    if event.trigger_start is not None:
        trigger = {
            "start": event.trigger_start,
            "end": event.trigger_end,
            "text": event.trigger_text,
        }
    return json.dumps(
        {
            "record_id": str(event.record_id),
            "event_type": event.event_type,
            "trigger": trigger,
            "arguments": [
                {
                    "entity_type": a.entity_type,
                    "start": a.start_token,
                    "end": a.end_token,
                    "text": a.text,
                }
                for a in event.arguments
            ],
        },
        ensure_ascii=False,
        sort_keys=True,
    )
