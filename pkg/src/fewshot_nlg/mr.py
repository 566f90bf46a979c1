"""Meaning representations and the linearized dialogue-act wire format.

The format used by the FewShotWOZ / FewShotSGD corpora looks like::

    inform ( choice = several ) @ request ( area = ? ) & there are several ...

Intents are separated by ``@``, slots inside a group by ``;``, and an
optional ``&`` ends the MR (in combined lines the response follows it).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable

REQUESTED = "?"
DEFAULT_IGNORE_VALUES = frozenset({"?", "none", "yes", "no", "dont_care"})

_WS = re.compile(r"\s+")
_ACT_FORBIDDEN = set("()=;@&")
_NAME_FORBIDDEN = set("=;()")


class MalformedMR(ValueError):
    """Raised when a string does not follow the MR grammar."""

    def __init__(self, position: int, reason: str, line: str = ""):
        self.position = position
        self.reason = reason
        self.line = line
        super().__init__(f"malformed MR at position {position}: {reason}")


def _squash(s: str) -> str:
    return _WS.sub(" ", s).strip()


@dataclass(frozen=True)
class SlotValue:
    name: str
    value: str

    def __post_init__(self):
        object.__setattr__(self, "name", _squash(self.name))
        object.__setattr__(self, "value", _squash(self.value))
        if not self.name or any(c in _NAME_FORBIDDEN for c in self.name):
            raise ValueError(f"invalid slot name {self.name!r}")
        if not self.value or any(c in "();" for c in self.value):
            raise ValueError(f"invalid value {self.value!r} for slot {self.name!r}")

    @property
    def requested(self) -> bool:
        return self.value == REQUESTED


@dataclass(frozen=True)
class Intent:
    act: str
    slots: tuple[SlotValue, ...] = ()

    def __post_init__(self):
        if not self.act or any(c.isspace() or c in _ACT_FORBIDDEN for c in self.act):
            raise ValueError(f"invalid intent name {self.act!r}")
        object.__setattr__(self, "slots", tuple(self.slots))


@dataclass(frozen=True)
class MeaningRepresentation:
    intents: tuple[Intent, ...]

    def __post_init__(self):
        object.__setattr__(self, "intents", tuple(self.intents))
        if not self.intents:
            raise ValueError("a meaning representation needs at least one intent")

    @classmethod
    def build(cls, *intents: tuple[str, Iterable[tuple[str, str]]]) -> "MeaningRepresentation":
        """Convenience constructor: ``build(("inform", [("food", "thai")]))``."""
        return cls(tuple(Intent(act, tuple(SlotValue(n, v) for n, v in slots)) for act, slots in intents))

    @property
    def slots(self) -> list[SlotValue]:
        return [sv for intent in self.intents for sv in intent.slots]

    def __str__(self) -> str:
        return render_mr(self)


class Origin(enum.Enum):
    GOLD = "gold"
    AUGMENTED = "augmented"
    PSEUDO = "pseudo"


@dataclass(frozen=True)
class LabeledPair:
    mr: MeaningRepresentation
    text: tuple[str, ...]
    origin: Origin = Origin.GOLD

    def __post_init__(self):
        object.__setattr__(self, "text", tuple(self.text))
        if not self.text and self.origin is not Origin.AUGMENTED:
            raise ValueError(f"{self.origin.value} pair needs a non-empty response")


def _parse_group(body: str, offset: int, line: str) -> tuple[SlotValue, ...]:
    if not body.strip():
        return ()
    slots = []
    pos = offset
    for piece in body.split(";"):
        if "=" not in piece:
            reason = "empty slot" if not piece.strip() else f"missing '=' in slot {piece.strip()!r}"
            raise MalformedMR(pos, reason, line)
        name, value = piece.split("=", 1)
        name, value = _squash(name), _squash(value)
        if not name:
            raise MalformedMR(pos, "empty slot name", line)
        if not value:
            raise MalformedMR(pos, f"empty value for slot {name!r}", line)
        slots.append(SlotValue(name, value))
        pos += len(piece) + 1
    return tuple(slots)


def parse_mr(line: str | bytes) -> MeaningRepresentation:
    """Parse one linearized MR.

    A single trailing ``&`` is consumed. An intent may have no parenthesis
    group, which is read as an intent with zero slots.
    """
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="replace")
    s = line.rstrip()
    if s.endswith("&"):
        s = s[:-1]
    n = len(s)
    pos = 0
    intents = []
    while True:
        while pos < n and s[pos].isspace():
            pos += 1
        start = pos
        while pos < n and not s[pos].isspace() and s[pos] not in "(@":
            pos += 1
        act = s[start:pos]
        if not act:
            raise MalformedMR(start, "empty intent name", line)
        bad = next((c for c in act if c in _ACT_FORBIDDEN), None)
        if bad is not None:
            raise MalformedMR(start + act.index(bad), f"unexpected {bad!r} in intent name", line)
        while pos < n and s[pos].isspace():
            pos += 1
        slots: tuple[SlotValue, ...] = ()
        if pos < n and s[pos] == "(":
            close = s.find(")", pos + 1)
            nested = s.find("(", pos + 1)
            if close < 0:
                raise MalformedMR(pos, "unbalanced '('", line)
            if 0 <= nested < close:
                raise MalformedMR(nested, "nested '('", line)
            slots = _parse_group(s[pos + 1 : close], pos + 1, line)
            pos = close + 1
            while pos < n and s[pos].isspace():
                pos += 1
        intents.append(Intent(act, slots))
        if pos >= n:
            break
        if s[pos] == "@":
            pos += 1
            continue
        raise MalformedMR(pos, f"trailing garbage {s[pos:pos + 10]!r}", line)
    return MeaningRepresentation(tuple(intents))


def render_mr(mr: MeaningRepresentation) -> str:
    """Canonical single-space serialization, without the trailing ``&``."""
    parts = []
    for intent in mr.intents:
        body = " ; ".join(f"{sv.name} = {sv.value}" for sv in intent.slots)
        parts.append(f"{intent.act} ( {body} )" if body else f"{intent.act} ( )")
    return " @ ".join(parts)


def split_combined(line: str) -> tuple[str, str]:
    """Split ``<MR> & <response>`` at the first ``&`` outside parentheses."""
    depth = 0
    for i, c in enumerate(line):
        if c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
        elif c == "&" and depth == 0:
            return line[:i], line[i + 1 :]
    raise MalformedMR(len(line), "no '&' separating MR from response", line)


def concrete_slot_values(
    mr: MeaningRepresentation, ignore: Iterable[str] = DEFAULT_IGNORE_VALUES
) -> list[tuple[str, str]]:
    ignore = {v.lower() for v in ignore} | {REQUESTED}
    return [(sv.name, sv.value) for sv in mr.slots if sv.value.lower() not in ignore]


_TOKEN = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Whitespace tokens with punctuation split off."""
    return _TOKEN.findall(text)
