"""Dataset loading and the toy MR-to-text grammar used for desk-scale runs."""

from __future__ import annotations

import itertools
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from fewshot_nlg.mr import (
    REQUESTED,
    Intent,
    LabeledPair,
    MalformedMR,
    MeaningRepresentation,
    Origin,
    SlotValue,
    parse_mr,
    render_mr,
    split_combined,
    tokenize,
)

log = logging.getLogger(__name__)


class FormatError(ValueError):
    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class SpecError(ValueError):
    """Invalid toy grammar specification."""


@dataclass(frozen=True)
class DataSplit:
    train: tuple[LabeledPair, ...]
    dev: tuple[LabeledPair, ...] = ()
    test: tuple[LabeledPair, ...] = ()
    unlabeled: tuple[MeaningRepresentation, ...] = ()
    skipped: int = 0

    def __post_init__(self):
        for name in ("train", "dev", "test", "unlabeled"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.train:
            raise ValueError("training set is empty")

    def all_mrs(self) -> list[MeaningRepresentation]:
        return [p.mr for p in self.train + self.dev + self.test] + list(self.unlabeled)


def dedup_mrs(mrs: Iterable[MeaningRepresentation]) -> list[MeaningRepresentation]:
    seen = set()
    out = []
    for mr in mrs:
        key = render_mr(mr)
        if key not in seen:
            seen.add(key)
            out.append(mr)
    return out


def format_pair(pair: LabeledPair) -> str:
    return f"{render_mr(pair.mr)} & {' '.join(pair.text)}"


def parse_pair(line: str, origin: Origin = Origin.GOLD) -> LabeledPair:
    mr_part, text_part = split_combined(line)
    return LabeledPair(parse_mr(mr_part), tuple(tokenize(text_part)), origin)


def _read_lines(path, parse, strict: bool):
    items, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                items.append(parse(line.rstrip("\n")))
            except (MalformedMR, ValueError) as exc:
                if strict:
                    raise FormatError(path, no, str(exc)) from exc
                log.warning("%s:%d: skipped (%s)", path, no, exc)
                skipped += 1
    return items, skipped


def load_pairs(path, origin: Origin = Origin.GOLD, strict: bool = True) -> list[LabeledPair]:
    return _read_lines(path, lambda line: parse_pair(line, origin), strict)[0]


def load_mrs(path, strict: bool = True) -> list[MeaningRepresentation]:
    """One MR per line, deduplicated by canonical render."""
    return dedup_mrs(_read_lines(path, parse_mr, strict)[0])


def load_split(train_path, dev_path=None, test_path=None, unlabeled_path=None, strict: bool = True) -> DataSplit:
    """Load combined-line labeled files and a one-MR-per-line unlabeled pool.

    In strict mode the first bad line raises :class:`FormatError`; otherwise bad
    lines are logged, skipped and counted in ``DataSplit.skipped``.
    """
    skipped = 0
    parts = {}
    for name, path in (("train", train_path), ("dev", dev_path), ("test", test_path)):
        if path is None:
            parts[name] = []
            continue
        parts[name], n = _read_lines(path, parse_pair, strict)
        skipped += n
    unlabeled = []
    if unlabeled_path is not None:
        unlabeled, n = _read_lines(unlabeled_path, parse_mr, strict)
        skipped += n
    return DataSplit(parts["train"], parts["dev"], parts["test"], dedup_mrs(unlabeled), skipped)


def write_split(split: DataSplit, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("train", "dev", "test"):
        paths[name] = out_dir / f"{name}.txt"
        write_pairs(getattr(split, name), paths[name])
    paths["unlabeled"] = out_dir / "unlabeled.txt"
    paths["unlabeled"].write_text("".join(render_mr(mr) + "\n" for mr in split.unlabeled), encoding="utf-8")
    return paths


def write_pairs(pairs: Iterable[LabeledPair], path) -> None:
    Path(path).write_text("".join(format_pair(p) + "\n" for p in pairs), encoding="utf-8")


# --------------------------------------------------------------------------
# toy grammar

_PLACEHOLDER = re.compile(r"\{([^{}.]+)\.([^{}]+)\}")


@dataclass
class ToyGrammarSpec:
    """Declarative template grammar.

    ``slots`` maps intent -> slot -> candidate values; a slot whose only value
    is ``"?"`` is a requested slot and its placeholder renders the slot's
    mention (name with underscores as spaces, or ``mentions[slot]``).
    ``templates`` maps an intent combination such as ``"inform+request"`` to
    response templates with ``{intent.slot}`` placeholders.
    """

    intents: list[str]
    slots: dict[str, dict[str, list[str]]]
    templates: dict[str, list[str]]
    seed: int = 0
    mentions: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for intent in self.slots:
            if intent not in self.intents:
                raise SpecError(f"slots given for undeclared intent {intent!r}")
        for intent, table in self.slots.items():
            for slot, values in table.items():
                if not values:
                    raise SpecError(f"slot {intent}.{slot} has no values")
        if not self.templates:
            raise SpecError("no templates")
        for key, templates in self.templates.items():
            combo = key.split("+")
            for intent in combo:
                if intent not in self.intents:
                    raise SpecError(f"template key {key!r} names unknown intent {intent!r}")
            for template in templates:
                for intent, slot in _PLACEHOLDER.findall(template):
                    if intent not in combo:
                        raise SpecError(f"template {template!r} uses intent {intent!r} outside {key!r}")
                    if slot not in self.slots.get(intent, {}):
                        raise SpecError(f"template {template!r} references unknown slot {intent}.{slot}")

    @classmethod
    def from_dict(cls, data: dict) -> "ToyGrammarSpec":
        known = {"intents", "slots", "templates", "seed", "mentions"}
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"unknown grammar key(s): {', '.join(sorted(unknown))}")
        try:
            return cls(
                intents=list(data["intents"]),
                slots={i: {s: [str(v) for v in vs] for s, vs in t.items()} for i, t in data["slots"].items()},
                templates={k: list(v) for k, v in data["templates"].items()},
                seed=int(data.get("seed", 0)),
                mentions=dict(data.get("mentions", {})),
            )
        except KeyError as exc:
            raise SpecError(f"missing grammar key {exc.args[0]!r}") from None

    @classmethod
    def from_file(cls, path) -> "ToyGrammarSpec":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise SpecError(f"{path}: expected a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "intents": self.intents,
            "slots": self.slots,
            "templates": self.templates,
            "seed": self.seed,
            "mentions": self.mentions,
        }

    def mention(self, slot: str) -> str:
        return self.mentions.get(slot, slot.replace("_", " "))

    def _template_slots(self, key: str, template: str) -> list[tuple[str, list[str]]]:
        """Slots of each intent in the combo, in order of first appearance."""
        per_intent: dict[str, list[str]] = {intent: [] for intent in key.split("+")}
        for intent, slot in _PLACEHOLDER.findall(template):
            if slot not in per_intent[intent]:
                per_intent[intent].append(slot)
        return list(per_intent.items())

    def realize(self, key: str, template: str, choice: dict[tuple[str, str], str]) -> LabeledPair:
        intents = []
        for intent, slots in self._template_slots(key, template):
            intents.append(Intent(intent, tuple(SlotValue(s, choice[intent, s]) for s in slots)))
        mr = MeaningRepresentation(tuple(intents))

        def fill(m):
            value = choice[m.group(1), m.group(2)]
            return self.mention(m.group(2)) if value == REQUESTED else value

        return LabeledPair(mr, tuple(tokenize(_PLACEHOLDER.sub(fill, template))), Origin.GOLD)

    def _all_templates(self) -> list[tuple[str, str]]:
        return [(key, t) for key, ts in self.templates.items() for t in ts]

    def draw(self, rng: np.random.Generator) -> LabeledPair:
        key, template = self._all_templates()[rng.integers(len(self._all_templates()))]
        choice = {}
        for intent, slots in self._template_slots(key, template):
            for slot in slots:
                values = self.slots[intent][slot]
                choice[intent, slot] = values[rng.integers(len(values))]
        return self.realize(key, template, choice)

    def enumerate_mrs(self) -> set[str]:
        """Brute-force set of every MR the grammar can produce (canonical form)."""
        out = set()
        for key, template in self._all_templates():
            layout = self._template_slots(key, template)
            flat = [(intent, slot) for intent, slots in layout for slot in slots]
            for combo in itertools.product(*(self.slots[i][s] for i, s in flat)):
                intents = []
                it = iter(combo)
                for intent, slots in layout:
                    intents.append(Intent(intent, tuple(SlotValue(s, next(it)) for s in slots)))
                out.add(render_mr(MeaningRepresentation(tuple(intents))))
        return out


def synth_toy_corpus(spec: ToyGrammarSpec, n_train: int, n_dev: int, n_test: int, n_unlabeled: int) -> DataSplit:
    """Sample a corpus from the grammar. Pure function of ``(spec, counts)``.

    Train MRs are drawn unique where possible; the unlabeled pool holds unique
    MRs disjoint from the train MRs until the grammar runs out.
    """
    if n_train < 1 or min(n_dev, n_test, n_unlabeled) < 0:
        raise ValueError("counts must be >= 0 and n_train >= 1")
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    budget = 50

    def draw_unique(n: int, taken: set[str]) -> list[LabeledPair]:
        out = []
        attempts = 0
        while len(out) < n and attempts < budget * max(n, 1):
            attempts += 1
            pair = spec.draw(rng)
            key = render_mr(pair.mr)
            if key in taken:
                continue
            taken.add(key)
            out.append(pair)
        return out

    train_keys: set[str] = set()
    train = draw_unique(n_train, train_keys)
    while len(train) < n_train:
        train.append(spec.draw(rng))
    dev = [spec.draw(rng) for _ in range(n_dev)]
    test = [spec.draw(rng) for _ in range(n_test)]
    unlabeled = [p.mr for p in draw_unique(n_unlabeled, set(train_keys))]
    return DataSplit(train, dev, test, unlabeled)


DEFAULT_TOY_GRAMMAR = {
    "intents": ["inform", "request", "inform_no_match", "confirm"],
    "slots": {
        "inform": {
            "name": ["golden curry", "lucky star", "pizza hut", "saigon city", "jinling house", "la margherita"],
            "food": ["chinese", "italian", "indian", "seafood", "thai", "french"],
            "area": ["north", "south", "west", "centre", "east"],
            "price_range": ["cheap", "moderate", "expensive"],
            "choice": ["several", "three", "two", "five"],
            "phone": ["01223 356555", "01223 308681"],
        },
        "request": {"area": ["?"], "food": ["?"], "price_range": ["?"]},
        "inform_no_match": {
            "food": ["chinese", "italian", "indian", "seafood", "thai", "french"],
            "area": ["north", "south", "west", "centre", "east"],
        },
        "confirm": {
            "food": ["chinese", "italian", "indian", "seafood", "thai", "french"],
            "price_range": ["cheap", "moderate", "expensive"],
        },
    },
    "templates": {
        "inform": [
            "{inform.name} serves {inform.food} food .",
            "{inform.name} is a {inform.price_range} restaurant in the {inform.area} of town .",
            "there are {inform.choice} {inform.food} restaurants in the {inform.area} .",
            "{inform.name} is in the {inform.area} and its phone number is {inform.phone} .",
            "the phone number of {inform.name} is {inform.phone} .",
            "{inform.name} serves {inform.price_range} {inform.food} food in the {inform.area} .",
            "there are {inform.choice} {inform.price_range} restaurants .",
        ],
        "request": [
            "what {request.area} would you like ?",
            "what type of {request.food} are you looking for ?",
            "do you have a {request.price_range} in mind ?",
            "what {request.food} and {request.price_range} would you like ?",
        ],
        "inform+request": [
            "there are {inform.choice} restaurants serving {inform.food} food . what {request.area} would you prefer ?",
            "i found {inform.choice} {inform.price_range} places . which {request.area} do you want ?",
            "there are {inform.choice} restaurants in the {inform.area} . what {request.food} would you like ?",
        ],
        "inform_no_match": [
            "sorry , there is no {inform_no_match.food} restaurant in the {inform_no_match.area} .",
            "i could not find any {inform_no_match.food} restaurants .",
        ],
        "confirm": [
            "you want a {confirm.price_range} {confirm.food} restaurant , is that right ?",
            "just to confirm , you are looking for {confirm.food} food ?",
        ],
    },
    "seed": 0,
}


def default_toy_spec(seed: int = 0) -> ToyGrammarSpec:
    data = json.loads(json.dumps(DEFAULT_TOY_GRAMMAR))
    data["seed"] = seed
    return ToyGrammarSpec.from_dict(data)

