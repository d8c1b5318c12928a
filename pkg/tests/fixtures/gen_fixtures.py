#!/usr/bin/env python3
"""Regenerate the committed test fixtures (deterministic; stdlib only).

Outputs, all relative to this directory:
  corpus/certin_en.jsonl, corpus/foro_es.jsonl   synthetic bilingual feed
  langid_seeds/{en,es}.txt                       profile seeds for the pipeline
  langid_scripts/seeds/{en,ru,el}.txt            3 script-distinct languages
  langid_scripts/heldout/{en,ru,el}.txt          120 held-out sentences each
  schema.json, config.json                       pipeline configuration

The corpus is built so entity tokens repeat across sentences (small pools),
which keeps every entity type learnable from token identity alone.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

HERE = Path(__file__).parent

ACTORS = [
    "APT41", "APT28", "APT29", "Lazarus Group", "Fancy Bear",
    "Cozy Bear", "Sandworm", "Mustang Panda",
]
# Pools are small on purpose: every entity token must recur enough times
# that an 80/20 split cannot isolate it to the dev side.
IPS = ["10.20.30.40", "192.168.1.5", "172.16.9.22", "203.0.113.7"]
TECHS = ["T1566", "T1059.003", "T1486"]
MALWARE_NAMES = ["Emotet", "TrickBot"]
ORGS = ["Acme Corp", "Globex", "Initech", "Umbrella Labs", "Contoso", "Northwind"]

EN_TEMPLATES = [
    "{actor} breached the network of {org} and stole {n} credentials",
    "{actor} launched a phishing campaign against {org} using technique {tech}",
    "analysts reported that {actor} exfiltrated files from {ip}",
    "{actor} deployed {malware} on servers at {ip}",
    "{actor} compromised {org} systems with hash {hash}",
    "researchers said {actor} phished employees of {org} via {ip}",
    "{actor} exfiltrated data from {org} using {tech} last week",
    "{actor} deployed {malware} identified by {hash} against {org}",
]

ES_TEMPLATES = [
    "{actor} atacaron la red de {org} desde {ip}",
    "{actor} lanzaron una campaña contra {org} usando la técnica {tech}",
    "{actor} robaron {n} credenciales de los servidores de {org}",
    "{actor} desplegaron {malware} en los sistemas de {org}",
    "{actor} comprometieron {org} con el archivo {hash}",
    "los analistas dicen que {actor} exfiltraron datos desde {ip}",
]

RU_SYLLABLES = ["ва", "ро", "ки", "та", "не", "по", "зо", "да", "му", "ле", "сто", "ор", "ни", "ше"]
EL_SYLLABLES = ["κα", "λο", "με", "τρι", "σο", "πα", "δε", "νο", "ος", "ει", "φα", "ρι", "θε"]
EN_WORDS = (
    "the of and to in that threat report network attack data security system "
    "analysts observed campaign malware servers access email files group new "
    "activity targets infrastructure phishing operation actors credentials"
).split()


def make_hash(rng: random.Random) -> str:
    return "".join(rng.choice("0123456789abcdef") for _ in range(32))


class Cycler:
    """Round-robin pool: guarantees even coverage of every item."""

    def __init__(self, items):
        self.items = list(items)
        self.i = 0

    def take(self):
        value = self.items[self.i % len(self.items)]
        self.i += 1
        return value


def fill(template: str, rng: random.Random, pools: dict[str, Cycler]) -> str:
    values = {}
    for name, cycler in pools.items():
        if "{" + name + "}" in template:
            values[name] = cycler.take()
    values["org"] = rng.choice(ORGS)
    values["n"] = rng.choice([200, 500])
    return template.format(**values)


def gen_corpus() -> None:
    rng = random.Random(20240901)
    hashes = [make_hash(rng) for _ in range(2)]
    pools = {
        "actor": Cycler(ACTORS),
        "ip": Cycler(IPS),
        "tech": Cycler(TECHS),
        "malware": Cycler(MALWARE_NAMES),
        "hash": Cycler(hashes),
    }
    out = HERE / "corpus"
    out.mkdir(exist_ok=True)

    def build(templates: list[str], count: int) -> list[str]:
        texts: list[str] = []
        i = 0
        while len(texts) < count:
            text = fill(templates[i % len(templates)], rng, pools)
            i += 1
            if text not in texts:
                texts.append(text)
        return texts

    en_texts = build(EN_TEMPLATES, 20)
    es_texts = build(ES_TEMPLATES, 20)

    # The whole point of the fixture: no entity token may be rare enough
    # for a split to isolate it from training.
    corpus_blob = " ".join(en_texts + es_texts).lower()
    for pool in (ACTORS, IPS, TECHS, MALWARE_NAMES, hashes):
        for item in pool:
            occurrences = corpus_blob.count(item.lower())
            assert occurrences >= 3, f"{item!r} appears only {occurrences} times"
    assert len(set(en_texts + es_texts)) == 40

    with open(out / "certin_en.jsonl", "w", encoding="utf-8") as fh:
        for i, text in enumerate(en_texts):
            fh.write(json.dumps({"text": text, "feed_seq": i}, ensure_ascii=False) + "\n")
    with open(out / "foro_es.jsonl", "w", encoding="utf-8") as fh:
        for i, text in enumerate(es_texts):
            fh.write(json.dumps({"text": text, "feed_seq": i}, ensure_ascii=False) + "\n")


def pseudo_sentence(rng: random.Random, syllables: list[str]) -> str:
    words = []
    for _ in range(rng.randint(6, 10)):
        words.append("".join(rng.choice(syllables) for _ in range(rng.randint(2, 4))))
    return " ".join(words)


def english_sentence(rng: random.Random) -> str:
    return " ".join(rng.choice(EN_WORDS) for _ in range(rng.randint(6, 10)))


def gen_langid() -> None:
    rng = random.Random(77001)
    seeds = HERE / "langid_seeds"
    seeds.mkdir(exist_ok=True)
    hashes = [make_hash(rng) for _ in range(2)]
    pools = {
        "actor": Cycler(ACTORS),
        "ip": Cycler(IPS),
        "tech": Cycler(TECHS),
        "malware": Cycler(MALWARE_NAMES),
        "hash": Cycler(hashes),
    }
    en_lines = [fill(EN_TEMPLATES[i % len(EN_TEMPLATES)], rng, pools) for i in range(40)]
    es_lines = [fill(ES_TEMPLATES[i % len(ES_TEMPLATES)], rng, pools) for i in range(40)]
    (seeds / "en.txt").write_text("\n".join(en_lines) + "\n", encoding="utf-8")
    (seeds / "es.txt").write_text("\n".join(es_lines) + "\n", encoding="utf-8")

    scripts = HERE / "langid_scripts"
    for split, count in (("seeds", 40), ("heldout", 120)):
        out = scripts / split
        out.mkdir(parents=True, exist_ok=True)
        (out / "en.txt").write_text(
            "\n".join(english_sentence(rng) for _ in range(count)) + "\n", encoding="utf-8"
        )
        (out / "ru.txt").write_text(
            "\n".join(pseudo_sentence(rng, RU_SYLLABLES) for _ in range(count)) + "\n",
            encoding="utf-8",
        )
        (out / "el.txt").write_text(
            "\n".join(pseudo_sentence(rng, EL_SYLLABLES) for _ in range(count)) + "\n",
            encoding="utf-8",
        )


def gen_config() -> None:
    (HERE / "schema.json").write_text(
        json.dumps({"entity_types": ["ACTOR", "IP", "TECHNIQUE", "MALWARE", "EVENT"]}, indent=2)
        + "\n",
        encoding="utf-8",
    )
    config = {
        "seed": 12345,
        "workdir": "work",
        "sources": [
            {"source_id": "certin", "kind": "file", "location": "corpus/certin_en.jsonl"},
            {"source_id": "foro", "kind": "file", "location": "corpus/foro_es.jsonl"},
        ],
        "langid": {"seed_samples": "langid_seeds", "min_chars": 10, "default_lang": "en"},
        "resources_dir": "builtin",
        "schema": "schema.json",
        "embedder": {"backend": "hashed", "dim": 32, "vocab_buckets": 4096},
        "train": {
            "epochs": 60,
            "batch_size": 8,
            "learning_rate": 0.01,
            "hidden_size": 16,
            "dev_split": 0.2,
            "early_stop_patience": 10,
        },
    }
    (HERE / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    gen_corpus()
    gen_langid()
    gen_config()
    print("fixtures regenerated under", HERE)
