#!/usr/bin/env python3
"""Regenerates the synthetic fixtures in this directory.

Everything is invented: entity names are built from syllables, so no real
biomedical fact is encoded. Output is deterministic for a given SEED.
"""

import json
import random
from pathlib import Path

SEED = 20241019
HERE = Path(__file__).resolve().parent

rng = random.Random(SEED)

ONSETS = ["b", "d", "k", "l", "m", "n", "p", "qu", "r", "s", "t", "v", "z", "tr", "pl", "gr"]
VOWELS = ["a", "e", "i", "o", "u", "ae", "or", "en"]


def word(syllables, suffix=""):
    w = "".join(rng.choice(ONSETS) + rng.choice(VOWELS) for _ in range(syllables)) + suffix
    return w.capitalize()


used = set()


def unique(make):
    while True:
        name = make()
        if name.lower() not in used:
            used.add(name.lower())
            return name


def disease():
    kind = rng.random()
    if kind < 0.5:
        return unique(lambda: word(2, rng.choice(["itis", "osis", "emia"])))
    return unique(lambda: word(2) + " " + rng.choice(["fever", "syndrome", "palsy", "disease"]))


def drug():
    return unique(lambda: word(2, rng.choice(["ax", "ol", "ine", "ex"])))


def event():
    return unique(lambda: word(2) + " " + rng.choice(["rash", "relapse", "flare", "episode"]))


RELATIONS = ["may_prevent", "may_treat", "occurs_after"]

SENTENCES = {
    "may_prevent": [
        "{h} may be able to prevent {t} .",
        "Daily {h} helps prevent {t} .",
        "Doctors prescribe {h} to prevent {t} .",
    ],
    "may_treat": [
        "{h} might be used to treat {t} .",
        "Clinicians often treat {t} with {h} .",
        "Patients took {h} to treat {t} .",
    ],
    "occurs_after": [
        "{h} usually occurs after {t} .",
        "A case of {h} often follows {t} .",
        "Most patients develop {h} after {t} .",
    ],
}

FILLER = [
    "The clinic reported stable outcomes for most patients .",
    "Several wards were renovated during the last winter season .",
    "Nurses recorded vital signs every four hours overnight .",
    "The trial enrolled volunteers from three different regions .",
    "Follow-up visits were scheduled two weeks after discharge .",
    "Laboratory samples were stored at low temperature .",
    "The committee approved the revised consent form yesterday .",
    "Most participants completed the questionnaire on time .",
    "Hospital staff attended a training session on hygiene .",
    "The pharmacy extended its opening hours this month .",
    "Researchers compared dosing schedules across several cohorts .",
    "Imaging results were reviewed by two independent readers .",
    "The annual report summarised admissions by department .",
    "Blood pressure readings were taken in a seated position .",
    "A new protocol reduced waiting times in the emergency room .",
    "Volunteers were asked to avoid caffeine before testing .",
    "The ethics board reviewed the study design twice .",
    "Community health workers visited remote villages weekly .",
    "The cohort was followed for a median of five years .",
    "Data were anonymised before any statistical analysis .",
]


def build_triples():
    triples = []
    # Easy case: the answer is spelled out inside the head name.
    easy_tail = unique(lambda: word(2) + " fever")
    easy_head = easy_tail + " vaccine"
    triples.append((easy_head, "may_prevent", easy_tail))
    diseases = [disease() for _ in range(36)]
    for rel in RELATIONS:
        need = 20 - sum(1 for t in triples if t[1] == rel)
        heads = []
        while len(heads) * 1.25 < need:
            heads.append(event() if rel == "occurs_after" else drug())
        rows = []
        for i, h in enumerate(heads):
            rows.append((h, rel, rng.choice(diseases)))
        while len(rows) < need:  # a few heads get a second answer
            h = rng.choice(heads)
            t = rng.choice(diseases)
            if (h, rel, t) not in rows:
                rows.append((h, rel, t))
        triples.extend(rows)
    return triples, diseases + [easy_tail]


def main():
    triples, answer_vocab = build_triples()
    assert len(triples) == 60

    with open(HERE / "triples.tsv", "w") as f:
        f.write("# head<TAB>relation<TAB>tail, synthetic\n")
        for h, r, t in triples:
            f.write(f"{h}\t{r}\t{t}\n")

    corpus = []
    for h, r, t in triples:
        for s in SENTENCES[r]:
            corpus.append(s.format(h=h, t=t))
    corpus.extend(FILLER)
    rng.shuffle(corpus)
    assert len(corpus) == 200
    (HERE / "corpus.txt").write_text("\n".join(corpus) + "\n")

    distractors = [disease() for _ in range(60)]
    entities = sorted(set(answer_vocab) | set(distractors) | {t for _, _, t in triples})
    (HERE / "entities.txt").write_text("\n".join(entities) + "\n")

    # Canned generation output keyed by exact query text.
    templates = {t["relation_id"]: t["pattern"]
                 for t in json.loads((HERE.parent / "templates.json").read_text())}
    by_query = {}
    for h, r, t in triples:
        q = templates[r].replace("[X]", h).replace("[Y]", "[MASK]")
        by_query.setdefault(q, []).append(t)
    table = {}
    for q, golds in by_query.items():
        cands = rng.sample(entities, 4)
        if rng.random() < 0.4:
            cands.insert(rng.randrange(5), golds[0])
        cands = list(dict.fromkeys(cands))[:5]
        table[q] = [[c, round(-0.5 * i - rng.random() * 0.1, 4)] for i, c in enumerate(cands)]
    (HERE / "generator_table.json").write_text(json.dumps(
        {"identity": "table-generator:fixtures", "queries": table, "fallback": []}, indent=1) + "\n")

    stub = {
        "identity": "stub-mlm:fixtures",
        "mask_token": "[MASK]",
        "vocab": ["Quelitis", "Morbin", "Varnel", "fever", "syndrome", "rash", "palsy",
                  "Trosis", "Dorvemia", "disease"],
        "positions": [
            {"position": -4, "logits": {"Morbin": 2.0, "Varnel": 1.8, "Quelitis": 1.0}},
            {"position": -3, "logits": {"fever": 1.5, "syndrome": 1.6, "Quelitis": 0.5},
             "given": [{"position": -4, "token": "Morbin", "logits": {"fever": 2.5}},
                       {"position": -4, "token": "Varnel", "logits": {"syndrome": 2.5}}]},
            {"position": -2, "logits": {"Quelitis": 1.2, "disease": 1.0, "palsy": 0.8},
             "given": [{"position": -3, "token": "fever", "logits": {"rash": 2.2}},
                       {"position": -3, "token": "syndrome", "logits": {"palsy": 2.4}}]},
        ],
        "fallback": {"logits": {"Trosis": 1.0, "Dorvemia": 0.9}},
    }
    (HERE / "stub_mlm.json").write_text(json.dumps(stub, indent=1) + "\n")

    config = {
        "num_sentences": 200,
        "mask_ratio": 0.5,
        "temperature": 0.1,
        "learning_rate": 0.02,
        "steps": 500,
        "batch_size": 50,
        "checkpoint_every": 100,
        "probe_checkpoint_step": 500,
        "seed": 7,
    }
    (HERE / "rewire_config.json").write_text(json.dumps(config, indent=1) + "\n")


if __name__ == "__main__":
    main()
