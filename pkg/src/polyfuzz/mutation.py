"""Test inputs and the six word-level mutation operators.

Operators 2-6 work on lossless segments of the payload (see
:func:`polyfuzz.text.segment`) so whitespace and inline comments survive.
Each operator raises :class:`NotApplicable` when the input has nothing it can
act on; :func:`mutate` then tries another operator.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .grammar import DEFAULT_MAX_DEPTH, DerivationTree, Grammar, InjectionType, render, resample_subtree
from .text import case_scramble, detokenize, html_entity_encode, percent_encode, segment, tokenize

GRAMMAR, MUTATION, TRANSLATION = "grammar", "mutation", "translation"
OPERATORS = ("grammar_tree", "case", "blank", "comment", "ascii", "unicode")


class NotApplicable(Exception):
    """The operator has no eligible token in this input."""


@dataclass(frozen=True)
class TestInput:
    """One candidate payload. ``payload`` is authoritative; ``tokens`` is derived from it."""

    __test__ = False  # keep pytest from collecting this class

    injection_type: InjectionType
    payload: str
    origin: str = GRAMMAR
    derivation: DerivationTree | None = field(default=None, compare=False, repr=False)
    tokens: tuple = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "injection_type", InjectionType(self.injection_type))
        object.__setattr__(self, "tokens", tuple(tokenize(self.payload)))

    @classmethod
    def from_tree(cls, injection_type, tree: DerivationTree, origin: str = GRAMMAR) -> "TestInput":
        return cls(injection_type, render(tree), origin, tree)

    @classmethod
    def from_tokens(cls, injection_type, tokens, origin: str = TRANSLATION) -> "TestInput":
        return cls(injection_type, detokenize(list(tokens)), origin)

    def with_payload(self, payload: str, origin: str = MUTATION) -> "TestInput":
        return TestInput(self.injection_type, payload, origin)

    def to_dict(self) -> dict:
        out = {"type": self.injection_type.value, "payload": self.payload,
               "tokens": list(self.tokens), "origin": self.origin}
        if self.derivation is not None:
            out["derivation"] = self.derivation.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TestInput":
        tree = DerivationTree.from_dict(data["derivation"]) if "derivation" in data else None
        return cls(data["type"], data["payload"], data.get("origin", GRAMMAR), tree)


@dataclass(frozen=True)
class MutationTables:
    blanks: dict
    comments: dict

    def blanks_for(self, t) -> list:
        return self.blanks.get(InjectionType(t).value, [" ", "%20"])

    def comments_for(self, t) -> list:
        return self.comments.get(InjectionType(t).value, ["/**/"])


def parse_tables(data: dict) -> MutationTables:
    if data.get("format_version") != 1:
        raise ValueError(f"unsupported mutation table format_version {data.get('format_version')!r}")
    return MutationTables(dict(data["blanks"]), dict(data["comments"]))


def load_tables(path: str | Path | None = None) -> MutationTables:
    if path is None:
        text = resources.files("polyfuzz").joinpath("data/mutation_tables.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_tables(json.loads(text))


_DEFAULT_TABLES: MutationTables | None = None


def default_tables() -> MutationTables:
    global _DEFAULT_TABLES
    if _DEFAULT_TABLES is None:
        _DEFAULT_TABLES = load_tables()
    return _DEFAULT_TABLES


def _pick(rng, items):
    return items[int(rng.integers(len(items)))]


# -- operators ---------------------------------------------------------------

def op_grammar_tree(inp: TestInput, grammar: Grammar, rng,
                    max_depth: int = DEFAULT_MAX_DEPTH) -> TestInput:
    if inp.derivation is None:
        raise NotApplicable("input has no derivation tree")
    tree = resample_subtree(inp.derivation, grammar, rng, max_depth)
    return TestInput.from_tree(inp.injection_type, tree, MUTATION)


def op_case(inp: TestInput, rng) -> TestInput:
    segs = segment(inp.payload)
    eligible = [i for i, s in enumerate(segs) if any(c.isalpha() for c in s) and not s.startswith("%")]
    if not eligible:
        raise NotApplicable("no alphabetic token")
    i = _pick(rng, eligible)
    new = case_scramble(segs[i], rng)
    if new == segs[i]:
        letters = [k for k, c in enumerate(new) if c.isalpha()]
        k = _pick(rng, letters)
        new = new[:k] + new[k].swapcase() + new[k + 1:]
    segs[i] = new
    return inp.with_payload("".join(segs))


def _blank_split(payload: str, forms) -> list:
    pattern = "(" + "|".join(re.escape(f) for f in sorted(forms, key=len, reverse=True)) + ")"
    return re.split(pattern, payload)


def op_blank(inp: TestInput, rng, tables: MutationTables | None = None) -> TestInput:
    """Swap one blank form present in the payload for another synonym, at every occurrence."""
    forms = (tables or default_tables()).blanks_for(inp.injection_type)
    pieces = _blank_split(inp.payload, forms)
    present = sorted({pieces[k] for k in range(1, len(pieces), 2)})
    if not present:
        raise NotApplicable("no blank-class token")
    old = _pick(rng, present)
    choices = [f for f in forms if f != old]
    if not choices:
        raise NotApplicable("blank synonym set has a single member")
    return replace_blank(inp, old, _pick(rng, choices), forms)


def replace_blank(inp: TestInput, old: str, new: str, forms) -> TestInput:
    pieces = _blank_split(inp.payload, forms)
    for k in range(1, len(pieces), 2):
        if pieces[k] == old:
            pieces[k] = new
    return inp.with_payload("".join(pieces))


def comment_gaps(payload: str) -> list:
    """Places where a comment can go: (start, end) segment slices between two
    adjacent non-whitespace segments. A single whitespace segment between
    them is part of the slice and gets replaced."""
    segs = segment(payload)
    solid = [i for i, s in enumerate(segs) if not s.isspace()]
    gaps = []
    for a, b in zip(solid, solid[1:]):
        if b == a + 1 or b == a + 2:
            gaps.append((a + 1, b))
    return gaps


def insert_comment(inp: TestInput, gap: int, comment: str) -> TestInput:
    segs = segment(inp.payload)
    start, end = comment_gaps(inp.payload)[gap]
    return inp.with_payload("".join(segs[:start]) + comment + "".join(segs[end:]))


def op_comment(inp: TestInput, rng, tables: MutationTables | None = None) -> TestInput:
    gaps = comment_gaps(inp.payload)
    if not gaps:
        raise NotApplicable("fewer than two tokens")
    comment = _pick(rng, (tables or default_tables()).comments_for(inp.injection_type))
    return insert_comment(inp, int(rng.integers(len(gaps))), comment)


def _encode_one(inp: TestInput, rng, encoder) -> TestInput:
    segs = segment(inp.payload)
    eligible = [i for i, s in enumerate(segs) if not s.isspace()]
    if not eligible:
        raise NotApplicable("no non-blank token")
    i = _pick(rng, eligible)
    segs[i] = encoder(segs[i])
    return inp.with_payload("".join(segs))


def op_ascii(inp: TestInput, rng) -> TestInput:
    return _encode_one(inp, rng, percent_encode)


def op_unicode(inp: TestInput, rng) -> TestInput:
    return _encode_one(inp, rng, html_entity_encode)


def apply_operator(name: str, inp: TestInput, grammar: Grammar | None, rng,
                   tables: MutationTables | None = None) -> TestInput:
    if name == "grammar_tree":
        if grammar is None:
            raise NotApplicable("no grammar supplied")
        return op_grammar_tree(inp, grammar, rng)
    if name == "case":
        return op_case(inp, rng)
    if name == "blank":
        return op_blank(inp, rng, tables)
    if name == "comment":
        return op_comment(inp, rng, tables)
    if name == "ascii":
        return op_ascii(inp, rng)
    if name == "unicode":
        return op_unicode(inp, rng)
    raise ValueError(f"unknown operator {name!r}")


def mutate(inp: TestInput, grammar: Grammar | None, rng,
           tables: MutationTables | None = None) -> TestInput:
    """Apply one operator chosen uniformly among those applicable to ``inp``.

    Operators are tried in a random order; the first that applies and
    changes the payload wins. A subtree resample that re-derives the same
    text counts as not applicable.
    """
    if grammar is not None and grammar.injection_type not in (None, inp.injection_type):
        raise ValueError(f"grammar is for {grammar.injection_type.value}, "
                         f"input is {inp.injection_type.value}")
    names = [n for n in OPERATORS if n != "grammar_tree" or inp.derivation is not None]
    fallback = None
    for k in rng.permutation(len(names)):
        try:
            out = apply_operator(names[k], inp, grammar, rng, tables)
        except NotApplicable:
            continue
        if out.payload != inp.payload:
            return out
        fallback = fallback or out
    return fallback or inp.with_payload(inp.payload)
