#!/usr/bin/env python3
"""Regenerates the checked-in fixtures.

Writes raw upstream-format datasets, the canonical JSONL sidecar, the mock
expert tables and the golden prompts. The golden renderer below is written
from the published prompt tables and shares no code with the C++ library.

    python3 fixtures/make_fixtures.py
"""
import json
import random
from collections import Counter
from pathlib import Path

ROOT = Path(__file__).resolve().parent
EXPERTS = ["OFA", "BLIP"]

ANIMALS = ["horse", "cow", "dog", "sheep", "cat", "zebra", "giraffe", "elephant"]
PLACES = ["field", "beach", "street", "kitchen", "park", "farm", "river", "garden", "market", "harbor", "station",
          "bridge", "lake", "stadium", "airport", "campsite", "plaza", "school", "zoo", "pier"]
TOPICS = [
    ("what animal is shown near the {p}?", ANIMALS),
    ("what is the weather like at the {p}?", ["sunny", "rainy", "snowy", "foggy", "cloudy"]),
    ("what color is the car parked by the {p}?", ["red", "blue", "white", "black", "green", "yellow"]),
    ("what is the person at the {p} holding?", ["umbrella", "kite", "phone", "surfboard", "bag", "frisbee"]),
    ("what sport could be played at the {p}?", ["tennis", "soccer", "surfing", "skiing", "baseball", "kayaking"]),
    ("what is the sign at the {p} warning about?", ["no parking", "stop", "one way", "speed limit", "no swimming"]),
    ("what time of day is it at the {p}?", ["morning", "noon", "evening", "night"]),
    ("what material is the bench at the {p} made of?", ["wood", "metal", "stone", "plastic"]),
]
# Free-text variants an expert might produce instead of the exact choice.
VARIANTS = {
    "horse": "a horse", "dog": "the dog", "sunny": "sunny day", "umbrella": "an umbrella",
    "no parking": "parking", "soccer": "playing soccer", "wood": "wooden", "night": "at night",
    "kite": "a kite", "red": "red car", "stone": "stone bench",
}


def transform(family, question):
    if family in ("ENTAILMENT", "SPATIAL"):
        return f' does the image describe "{question}" ?'
    return question


def canonical(rec):
    return {
        "id": rec["id"],
        "image": {"kind": "opaque_id", "value": rec["image"]},
        "family": rec["family"],
        "question": rec["question"],
        "choices": rec["choices"],
        "gold_choice": rec["gold_choice"],
        "gold_direct_answers": rec["gold_direct_answers"],
        "split": rec["split"],
    }


def write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n")


def write_jsonl(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


class Experts:
    def __init__(self):
        self.captions = {}  # (expert, image) -> caption
        self.answers = []

    def caption(self, expert, image, text):
        self.captions.setdefault((expert, image), text)

    def answer(self, expert, image, question, text):
        self.answers.append({"expert": expert, "image": image, "question": question, "answer": text})


def expert_answer(rng, gold, choices, skill):
    if rng.random() < skill:
        text = gold
    else:
        text = rng.choice([c for c in choices if c != gold])
    if text in VARIANTS and rng.random() < 0.4:
        text = VARIANTS[text]
    return text


def make_mc(rng, experts):
    combos = [(t, p) for t in range(len(TOPICS)) for p in PLACES]
    rng.shuffle(combos)
    records = []
    for n in range(150):
        split = "val" if n < 50 else "train"
        image = f"img_{n + 1:03d}"
        t, p = combos[n]
        template, pool = TOPICS[t]
        question = template.format(p=p)
        choices = rng.sample(pool, 4)
        gold = rng.randrange(4)
        if n == 0:
            question, choices, gold = "what animal is shown?", ["horse", "cow", "dog", "sheep"], 0
        gold_text = choices[gold]
        direct = [gold_text] * 7 + [rng.choice(choices) for _ in range(3)]
        records.append({
            "id": f"aok{n + 1:04d}", "image": image, "family": "VQA_MC", "question": question,
            "choices": choices, "gold_choice": gold, "gold_direct_answers": direct, "split": split,
        })
        if n == 0:
            experts.caption("OFA", image, "a man riding a horse on a field")
            experts.caption("BLIP", image, "a person on a brown horse")
            experts.answer("OFA", image, question, "horse")
            experts.answer("BLIP", image, question, "horse")
            continue
        experts.caption("OFA", image, f"a view of the {p} with a {rng.choice(pool)}")
        experts.caption("BLIP", image, f"a photo taken at the {p}")
        experts.answer("OFA", image, question, expert_answer(rng, gold_text, choices, 0.64))
        experts.answer("BLIP", image, question, expert_answer(rng, gold_text, choices, 0.52))
    return records


ENT_SUBJECTS = ["the man", "the woman", "the child", "the dog", "the horse", "two people", "the truck", "the cyclist",
                "a girl", "the crowd"]
ENT_PREDICATES = ["is outdoors", "is sleeping", "is eating", "is near water", "is wearing a hat",
                  "is indoors", "is running", "is alone", "is in a city", "is smiling"]
ENT_LABELS = {"entailment": "yes", "contradiction": "no", "neutral": "maybe"}


def make_entailment(rng, experts):
    # 18 entailment, 20 contradiction, 12 neutral in val.
    labels = ["entailment"] * 18 + ["contradiction"] * 20 + ["neutral"] * 12
    rng.shuffle(labels)
    first = labels.index("contradiction")
    labels[0], labels[first] = labels[first], labels[0]
    pairs = [(s, p) for s in ENT_SUBJECTS for p in ENT_PREDICATES]
    rng.shuffle(pairs)
    pairs.remove(("the horse", "is indoors"))
    records = []
    for n, label in enumerate(labels):
        image = f"img_{n + 1:03d}"
        hyp = "the horse is indoors" if n == 0 else " ".join(pairs[n])
        gold = ["entailment", "contradiction", "neutral"].index(label)
        records.append({
            "id": f"snli{n + 1:04d}", "image": image, "family": "ENTAILMENT", "question": hyp,
            "choices": ["yes", "no", "maybe"], "gold_choice": gold, "gold_direct_answers": [], "split": "val",
            "_label": label,
        })
        q = transform("ENTAILMENT", hyp)
        gold_text = ENT_LABELS[label]
        if n == 0:
            experts.answer("OFA", image, q, "no")
            experts.answer("BLIP", image, q, "no")
            continue
        experts.answer("OFA", image, q, expert_answer(rng, gold_text, ["yes", "no", "maybe"], 0.6))
        experts.answer("BLIP", image, q, expert_answer(rng, gold_text, ["yes", "no", "maybe"], 0.5))
    return records


DA_QUESTIONS = [
    ("what is the man riding at the {p}?", ["horse", "bike", "skateboard", "motorcycle"]),
    ("what fruit is on the table near the {p}?", ["banana", "apple", "orange"]),
    ("what is covering the ground at the {p}?", ["grass", "snow", "sand", "leaves"]),
]


def make_da(rng, experts):
    records = []
    for n in range(36):
        split = "val" if n < 18 else "train"
        image = f"img_{200 + n:03d}"
        template, pool = DA_QUESTIONS[n % len(DA_QUESTIONS)]
        question = template.format(p=PLACES[n // len(DA_QUESTIONS)])
        gold = rng.choice(pool)
        direct = [gold] * rng.randint(2, 8)
        direct += [rng.choice(pool) for _ in range(10 - len(direct))]
        records.append({
            "id": f"okv{n + 1:04d}", "image": image, "family": "VQA_DA", "question": question,
            "choices": [], "gold_choice": None, "gold_direct_answers": direct, "split": split,
        })
        experts.caption("OFA", image, f"a scene with {gold}")
        experts.caption("BLIP", image, "a photo")
        experts.answer("OFA", image, question, expert_answer(rng, gold, pool, 0.7))
        experts.answer("BLIP", image, question, expert_answer(rng, gold, pool, 0.5))
    return records


def write_raw(records):
    data = ROOT / "data"
    aok = {"train": [], "val": []}
    okv = {"train": [], "val": []}
    ent = []
    for r in records:
        if r["family"] == "VQA_MC":
            aok[r["split"]].append({
                "question_id": r["id"], "image_id": r["image"], "question": r["question"],
                "choices": r["choices"], "correct_choice_idx": r["gold_choice"],
                "direct_answers": r["gold_direct_answers"], "rationales": ["fixture"],
            })
        elif r["family"] == "VQA_DA":
            okv[r["split"]].append({
                "question_id": r["id"], "image_id": r["image"], "question": r["question"],
                "answers": [{"answer": a, "answer_id": i + 1} for i, a in enumerate(r["gold_direct_answers"])],
            })
        else:
            ent.append(canonical(r))
    for split in ("train", "val"):
        write_json(data / "aokvqa" / f"{split}.json", aok[split])
        write_json(data / "okvqa" / f"{split}.json", okv[split])
    # Entailment rows share image ids with the MC set, so they ship in
    # canonical form rather than through the e-SNLI-VE adapter (which
    # appends ".jpg").
    write_jsonl(data / "entailment" / "val.jsonl", ent)
    return data


# --- golden prompts, rendered straight from the published tables ----------

def instruction(names):
    if len(names) == 1:
        return ("Answer the following multiple-choice question by " + names[0] + "'s description and their "
                "answers to the visual question. " + names[0] + " is a vision-language model to provide clues.")
    joined = ", ".join(names[:-1]) + " and " + names[-1]
    count = {2: "two", 3: "three", 4: "four", 5: "five"}[len(names)]
    return ("Answer the following multiple-choice question by " + joined + "'s description and their answers "
            "to the visual question. " + joined + " are " + count + " different vision-language models to provide "
            "clues.")


def body(names, outputs, query, choices):
    out = instruction(names) + "\n\n"
    for name, (cap, _) in zip(names, outputs):
        out += f"{name}'s description: {cap}\n"
    out += "\n"
    out += "Q: " + query.lstrip() + "\n\n"
    for name, (_, ans) in zip(names, outputs):
        out += f"{name}'s answer: {ans}\n"
    out += "\n"
    if choices:
        out += "Choices: [" + ", ".join(choices) + "]\n\n"
    return out + "A:"


GOLDENS = {
    "VQA_MC": {
        "family": "VQA_MC", "question": "What best describes the pool of water?",
        "choices": ["frozen", "fresh", "dirty", "boiling"],
        "outputs": [["OFA", "a pool of water in a park", "dirty"], ["BLIP", "a muddy pond near trees", "murky"]],
        "exemplars": [],
    },
    "VQA_DA": {
        "family": "VQA_DA", "question": "What is the man riding?", "choices": [],
        "outputs": [["OFA", "a man riding a horse on a field", "horse"], ["BLIP", "a person on a brown horse", "horse"]],
        "exemplars": [{
            "question": "What covers the ground?", "choices": [], "gold": "grass",
            "outputs": [["OFA", "a green lawn", "grass"], ["BLIP", "a park", "dirt"]],
        }],
    },
    "ENTAILMENT": {
        "family": "ENTAILMENT", "question": "the truck is away from the elephant",
        "choices": ["yes", "no", "maybe"],
        "outputs": [["OFA", "an elephant is loaded onto a truck in yangon.", "yes"],
                    ["BLIP", "an elephant standing next to a truck", "no"]],
        "exemplars": [],
    },
    "SPATIAL": {
        "family": "SPATIAL", "question": "the bananas are in a bowl", "choices": ["yes", "no"],
        "outputs": [["OFA", "bananas in a bowl on a table", "yes"], ["BLIP", "a bunch of bananas", "no"]],
        "exemplars": [],
    },
}


def write_goldens():
    gdir = ROOT / "golden"
    gdir.mkdir(parents=True, exist_ok=True)
    for name, case in GOLDENS.items():
        names = [o[0] for o in case["outputs"]]
        text = ""
        for ex in case["exemplars"]:
            q = transform(case["family"], ex["question"])
            text += body(names, [(o[1], o[2]) for o in ex["outputs"]], q, ex["choices"]) + " " + ex["gold"] + "\n\n"
        q = transform(case["family"], case["question"])
        text += body(names, [(o[1], o[2]) for o in case["outputs"]], q, case["choices"])
        write_json(gdir / f"{name}.json", case)
        (gdir / f"{name}.txt").write_text(text)


def main():
    rng = random.Random(20230520)
    experts = Experts()
    records = make_mc(rng, experts) + make_entailment(rng, experts) + make_da(rng, experts)
    write_raw(records)

    mock = ROOT / "mock"
    write_jsonl(mock / "captions.jsonl",
                [{"expert": e, "image": i, "caption": c} for (e, i), c in sorted(experts.captions.items())])
    # Entailment images share ids with the MC set; their captions come from there.
    write_jsonl(mock / "answers.jsonl", experts.answers)
    write_jsonl(mock / "sidecar.jsonl", [canonical(r) for r in records])
    write_json(mock / "mock.json", {"mode": "oracle", "sidecar": "sidecar.jsonl"})

    counts = Counter(r["_label"] for r in records if r["family"] == "ENTAILMENT")
    write_json(ROOT / "data" / "entailment" / "label_counts.json", dict(sorted(counts.items())))
    write_goldens()
    print("entailment label counts:", dict(counts))


if __name__ == "__main__":
    main()
