#!/usr/bin/env python3
"""Regenerate the synthetic demo data in this directory.

Everything is template text; nothing here comes from a real corpus.
Usage: python3 make_demo.py
"""

import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
LABELS = ["entailment", "contradiction", "neutral"]

SCENES = [
    ("A man in a red shirt", "is playing a guitar", "on a street corner",
     "A man is playing an instrument.", "A man is asleep in his bed.", "A man is playing for tips."),
    ("Two children", "are building a sandcastle", "on the beach",
     "Kids are playing outside.", "The children are in a classroom.", "The children are brother and sister."),
    ("A woman with a blue umbrella", "is crossing the road", "in the rain",
     "A woman is outdoors.", "A woman is sunbathing.", "A woman is walking to work."),
    ("An old man", "is feeding pigeons", "in a park",
     "A man is near some birds.", "A man is swimming in a pool.", "The man visits the park every day."),
    ("A group of dogs", "are running", "across a snowy field",
     "Animals are moving.", "The dogs are sleeping on a bed.", "The dogs are racing each other."),
    ("A chef", "is chopping vegetables", "in a busy kitchen",
     "Someone is preparing food.", "The chef is driving a bus.", "The chef is making soup."),
    ("A young girl", "is reading a book", "under a tree",
     "A girl is reading.", "A girl is riding a bicycle.", "The book is about dragons."),
    ("Three workers", "are repairing a roof", "on a sunny afternoon",
     "People are working.", "The workers are at the beach.", "The workers are being paid overtime."),
    ("A boy in a green jacket", "is kicking a ball", "on a muddy field",
     "A boy is playing with a ball.", "A boy is watching television.", "The boy is practicing for a match."),
    ("A couple", "is dancing", "at a wedding",
     "Two people are dancing.", "The couple is sitting quietly.", "The couple just got married."),
    ("A musician", "is tuning a violin", "backstage",
     "Someone is holding an instrument.", "The musician is eating dinner.", "The concert starts soon."),
    ("A cyclist", "is riding up a hill", "at dawn",
     "A person is on a bike.", "The cyclist is swimming.", "The cyclist is training for a race."),
    ("Two women", "are painting a mural", "on a brick wall",
     "People are painting.", "The women are asleep.", "The mural is for a school."),
    ("A man with a beard", "is fishing", "from a small boat",
     "A man is on the water.", "The man is in a desert.", "The man caught three fish."),
    ("A crowd", "is watching fireworks", "over a river",
     "People are outside at night.", "The crowd is inside a cinema.", "It is a national holiday."),
    ("A student", "is writing on a whiteboard", "in a lecture hall",
     "Someone is writing.", "The student is playing tennis.", "The student is solving a math problem."),
    ("A baby", "is laughing", "in a high chair",
     "A child is happy.", "The baby is crying loudly.", "The baby is eating breakfast."),
    ("A firefighter", "is climbing a ladder", "next to a burning house",
     "A person is climbing.", "The firefighter is sleeping at the station.", "The firefighter is rescuing a cat."),
    ("A teenager", "is skateboarding", "down a ramp",
     "A young person is skating.", "The teenager is reading in a library.", "The teenager is showing off to friends."),
    ("A farmer", "is driving a tractor", "through a wheat field",
     "A person is driving.", "The farmer is flying a plane.", "The farmer is harvesting wheat."),
]

MODIFIERS = ["", " slowly", " happily", " carefully", " together", " quietly", " in the morning", " again", " while talking"]

ARG_FOR = {
    "entailment": [
        "I think it is entailment, because the hypothesis just restates the premise in general words.",
        "The premise clearly describes what the hypothesis says, so it follows.",
        "If the premise is true, the hypothesis has to be true as well.",
    ],
    "contradiction": [
        "I think it is a contradiction, because both cannot happen at the same time.",
        "The hypothesis describes a different situation that conflicts with the premise.",
        "Someone cannot do both things at once, so they contradict each other.",
    ],
    "neutral": [
        "I think it is neutral, because the premise does not say anything about that detail.",
        "The hypothesis adds information that we cannot confirm from the premise.",
        "It might be true, but nothing in the premise tells us for sure.",
    ],
}
IRRELEVANT = [
    "I have seen pictures like this before.",
    "This one took me a while to read.",
    "Interesting example.",
]


def problem_text(rng, scene, mod):
    subj, act, place, ent, con, neu = scene
    premise = f"{subj} {act}{mod} {place}."
    return premise, {"entailment": ent, "contradiction": con, "neutral": neu}


def annotators(rng, gold, three_of_five):
    others = [l for l in LABELS if l != gold]
    if three_of_five:
        rest = rng.choice([[others[0], others[1]], [others[0]] * 2, [others[1]] * 2])
        labels = [gold] * 3 + rest
    else:
        k = rng.choice([4, 5])
        labels = [gold] * k + [rng.choice(others) for _ in range(5 - k)]
    rng.shuffle(labels)
    return labels


def snli(rng, n, three_count):
    out = []
    flags = [True] * three_count + [False] * (n - three_count)
    rng.shuffle(flags)
    for i in range(n):
        scene = SCENES[i % len(SCENES)]
        mod = MODIFIERS[(i // len(SCENES)) % len(MODIFIERS)]
        premise, hyps = problem_text(rng, scene, mod)
        gold = LABELS[i % 3]
        out.append({
            "pairID": f"snli-{i:04d}",
            "sentence1": premise,
            "sentence2": hyps[gold],
            "gold_label": gold,
            "annotator_labels": annotators(rng, gold, flags[i]),
        })
    return out


def anli(rng, rnd, n):
    out = []
    for i in range(n):
        scene = SCENES[(i * 7 + rnd) % len(SCENES)]
        mod = MODIFIERS[(i + rnd) % len(MODIFIERS)]
        premise, hyps = problem_text(rng, scene, mod)
        context = premise + " " + rng.choice([
            "It had been a long week.",
            "Nobody else was around at the time.",
            "A photographer took a picture of the scene.",
            "The weather forecast had promised clear skies.",
        ])
        gold = LABELS[(i + rnd) % 3]
        out.append({"uid": f"r{rnd}-{i:04d}", "context": context, "hypothesis": hyps[gold], "label": gold[0]})
    return out


def discussion(rng, pid, gold, split):
    wrong = rng.choice([l for l in LABELS if l != gold])
    holder = rng.choice(["human1", "human2"])
    labels = {holder: gold, ("human2" if holder == "human1" else "human1"): wrong}
    n = rng.choice([3, 4, 4, 5, 6])
    speakers = ["human1", "human2"]
    first = rng.choice(speakers)
    utts = []
    for k in range(n):
        spk = first if k % 2 == 0 else [s for s in speakers if s != first][0]
        own = labels[spk]
        if k == n - 1:
            text = f"Okay, I agree that the label should be {gold}."
            tag = "supportive"
        elif rng.random() < 0.15:
            text = rng.choice(IRRELEVANT)
            tag = "irrelevant"
        else:
            text = rng.choice(ARG_FOR[own])
            tag = "supportive" if own == gold else "unsupportive"
        utts.append({"speaker": spk, "text": text, "tag": tag})
    rec = {
        "problem_id": pid,
        "participants": labels,
        "final_label": gold,
        "utterances": utts,
        "provenance": "human",
    }
    if split:
        rec["split"] = split
    return rec


def write_jsonl(name, rows):
    with open(HERE / name, "w") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def main():
    rng = random.Random(20240601)
    write_jsonl("snli_dev.jsonl", snli(rng, 200, 150))
    for rnd in (1, 2, 3):
        write_jsonl(f"anli_r{rnd}.jsonl", anli(rng, rnd, 45))

    problems, records, pool = [], [], []
    splits = ["prompt"] * 10 + ["validation"] * 20 + ["evaluation"] * 20
    for i, split in enumerate(splits):
        scene = SCENES[(i * 3) % len(SCENES)]
        mod = MODIFIERS[(i * 5) % len(MODIFIERS)]
        premise, hyps = problem_text(rng, scene, mod)
        gold = LABELS[(i * 2) % 3]
        pid = f"disc-{i:03d}"
        problems.append({"id": pid, "premise": premise, "hypothesis": hyps[gold], "label": gold})
        records.append(discussion(rng, pid, gold, split))
    for i in range(20):
        scene = SCENES[(i * 11 + 1) % len(SCENES)]
        mod = MODIFIERS[(i * 2 + 1) % len(MODIFIERS)]
        premise, hyps = problem_text(rng, scene, mod)
        gold = LABELS[i % 3]
        pid = f"pool-{i:03d}"
        problems.append({"id": pid, "premise": premise, "hypothesis": hyps[gold], "label": gold})
        pool.append(discussion(rng, pid, gold, None))

    write_jsonl("discussion_problems.jsonl", problems)
    write_jsonl("discussions.jsonl", records)
    write_jsonl("noise_pool.jsonl", pool)

    by_id = {p["id"]: p for p in problems}
    exemplars = []
    for rec in records[:10]:
        p = by_id[rec["problem_id"]]
        exemplars.append({
            "problem": {**p, "source": "snli-dev"},
            "discussion": rec,
        })
    write_jsonl("exemplars.jsonl", exemplars)


if __name__ == "__main__":
    main()
