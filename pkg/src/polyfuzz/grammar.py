"""Context-free grammars for payload generation.

Grammar files hold one rule per line::

    start  -> prefix , attack , suffix
    attack -> 'alert(1)' | jsString
           | 'prompt(1)'          # a line starting with '|' continues the rule above

``,`` joins symbols, ``|`` separates alternatives, single-quoted strings are
terminals (``\\'`` and ``\\\\`` escape inside them), bare identifiers are
nonterminals and ``#`` starts a comment.  The head of the first rule is the
start symbol.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterator

DEFAULT_MAX_DEPTH = 32


class InjectionType(str, enum.Enum):
    SQLi = "SQLi"
    XSSi = "XSSi"
    XMLi = "XMLi"
    HTMLi = "HTMLi"
    OSi = "OSi"
    PHPi = "PHPi"

    def __str__(self) -> str:
        return self.value


ALL_TYPES = tuple(InjectionType)


class GrammarError(ValueError):
    pass


class GrammarSyntaxError(GrammarError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DanglingNonterminalError(GrammarError):
    def __init__(self, names: list[str]):
        super().__init__("undefined nonterminal(s): " + ", ".join(names))
        self.names = names


class DuplicateRuleError(GrammarError):
    def __init__(self, head: str, line: int):
        super().__init__(f"line {line}: duplicate rule for {head!r}")
        self.head = head
        self.line = line


class DepthExhaustedError(GrammarError):
    pass


class ParseBudgetExceeded(GrammarError):
    pass


@dataclass(frozen=True)
class Symbol:
    name: str
    terminal: bool

    def __repr__(self) -> str:
        return repr(self.name) if self.terminal else self.name


@dataclass
class Grammar:
    name: str
    injection_type: InjectionType | None
    rules: dict[str, list[tuple[Symbol, ...]]]
    start_symbol: str

    def __post_init__(self) -> None:
        if self.start_symbol not in self.rules:
            raise GrammarError(f"start symbol {self.start_symbol!r} has no rule")
        dangling = sorted({s.name for alts in self.rules.values() for alt in alts for s in alt
                           if not s.terminal and s.name not in self.rules})
        if dangling:
            raise DanglingNonterminalError(dangling)
        for head, alts in self.rules.items():
            if not alts or any(len(alt) == 0 for alt in alts):
                raise GrammarError(f"rule {head!r} has an empty alternative")

    @cached_property
    def min_depth(self) -> dict[str, float]:
        """Smallest derivation-tree depth for each nonterminal (inf if none)."""
        depth = {head: math.inf for head in self.rules}
        changed = True
        while changed:
            changed = False
            for head, alts in self.rules.items():
                best = min(self._alt_depth(alt, depth) for alt in alts)
                if best < depth[head]:
                    depth[head] = best
                    changed = True
        return depth

    @cached_property
    def max_height(self) -> dict[str, float]:
        """Largest derivation depth per nonterminal; inf when recursive."""
        height: dict[str, float] = {}
        visiting: set[str] = set()

        def visit(head: str) -> float:
            if head in height:
                return height[head]
            if head in visiting:
                return math.inf
            visiting.add(head)
            h = 1 + max((visit(s.name) for alt in self.rules[head] for s in alt if not s.terminal),
                        default=0)
            visiting.discard(head)
            height[head] = h
            return h

        for head in self.rules:
            # recursion cycles: anything reaching a cycle is unbounded
            visit(head)
        return height

    @staticmethod
    def _alt_depth(alt: tuple[Symbol, ...], depth: dict[str, float]) -> float:
        return 1 + max((depth[s.name] for s in alt if not s.terminal), default=0)

    def alternative_depth(self, alt: tuple[Symbol, ...]) -> float:
        return self._alt_depth(alt, self.min_depth)

    @cached_property
    def terminals(self) -> frozenset[str]:
        return frozenset(s.name for alts in self.rules.values() for alt in alts for s in alt
                         if s.terminal)


@dataclass
class DerivationTree:
    symbol: Symbol
    chosen_alternative_index: int | None = None
    children: list["DerivationTree"] = field(default_factory=list)

    @property
    def is_terminal(self) -> bool:
        return self.symbol.terminal

    def leaves(self) -> Iterator[str]:
        stack = [self]
        while stack:
            node = stack.pop()
            if node.symbol.terminal:
                yield node.symbol.name
            else:
                stack.extend(reversed(node.children))

    def depth(self) -> int:
        if self.symbol.terminal:
            return 0
        return 1 + max((c.depth() for c in self.children), default=0)

    def nodes(self) -> Iterator[tuple[tuple[int, ...], "DerivationTree"]]:
        """Pre-order walk yielding (path, node) pairs."""
        stack: list[tuple[tuple[int, ...], DerivationTree]] = [((), self)]
        while stack:
            path, node = stack.pop()
            yield path, node
            for i in range(len(node.children) - 1, -1, -1):
                stack.append((path + (i,), node.children[i]))

    def to_dict(self) -> dict:
        if self.symbol.terminal:
            return {"t": self.symbol.name}
        return {"n": self.symbol.name, "alt": self.chosen_alternative_index,
                "c": [c.to_dict() for c in self.children]}

    @classmethod
    def from_dict(cls, data: dict) -> "DerivationTree":
        if "t" in data:
            return cls(Symbol(data["t"], True))
        return cls(Symbol(data["n"], False), data["alt"], [cls.from_dict(c) for c in data["c"]])


# -- parsing -----------------------------------------------------------------

_LEX = re.compile(r"""
    (?P<ws>\s+)
  | (?P<arrow>->)
  | (?P<comma>,)
  | (?P<bar>\|)
  | (?P<comment>\#.*)
  | (?P<quoted>'(?:[^'\\]|\\.)*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
""", re.VERBOSE)


def _lex_line(line: str, lineno: int) -> list[tuple[str, str]]:
    out = []
    pos = 0
    while pos < len(line):
        m = _LEX.match(line, pos)
        if m is None:
            raise GrammarSyntaxError(f"unexpected character {line[pos]!r} at column {pos + 1}", lineno)
        kind = m.lastgroup
        pos = m.end()
        if kind == "comment":
            break
        if kind == "ws":
            continue
        if kind == "quoted":
            body = m.group()[1:-1]
            out.append(("term", re.sub(r"\\(.)", r"\1", body)))
        else:
            out.append((kind, m.group()))
    return out


def _parse_alternatives(toks: list[tuple[str, str]], lineno: int) -> list[tuple[Symbol, ...]]:
    alts: list[tuple[Symbol, ...]] = []
    current: list[Symbol] = []
    expect_symbol = True
    for kind, text in toks:
        if kind in ("term", "ident"):
            if not expect_symbol:
                raise GrammarSyntaxError(f"missing ',' before {text!r}", lineno)
            current.append(Symbol(text, kind == "term"))
            expect_symbol = False
        elif kind == "comma":
            if expect_symbol:
                raise GrammarSyntaxError("',' without a preceding symbol", lineno)
            expect_symbol = True
        elif kind == "bar":
            if expect_symbol:
                raise GrammarSyntaxError("empty alternative", lineno)
            alts.append(tuple(current))
            current = []
            expect_symbol = True
        else:
            raise GrammarSyntaxError(f"unexpected {text!r}", lineno)
    if expect_symbol:
        raise GrammarSyntaxError("rule ends without a symbol", lineno)
    alts.append(tuple(current))
    return alts


def parse_grammar(source_text: str, name: str = "grammar",
                  injection_type: InjectionType | str | None = None) -> Grammar:
    if not source_text.strip():
        raise GrammarError("grammar text is empty")
    rules: dict[str, list[tuple[Symbol, ...]]] = {}
    start = None
    last_head = None
    for lineno, line in enumerate(source_text.splitlines(), 1):
        toks = _lex_line(line, lineno)
        if not toks:
            continue
        if toks[0][0] == "bar":
            if last_head is None:
                raise GrammarSyntaxError("continuation line before any rule", lineno)
            rules[last_head].extend(_parse_alternatives(toks[1:], lineno))
            continue
        if len(toks) < 3 or toks[0][0] != "ident" or toks[1][0] != "arrow":
            raise GrammarSyntaxError("expected 'Head -> alternatives'", lineno)
        head = toks[0][1]
        if head in rules:
            raise DuplicateRuleError(head, lineno)
        rules[head] = _parse_alternatives(toks[2:], lineno)
        last_head = head
        if start is None:
            start = head
    if start is None:
        raise GrammarError("grammar has no rules")
    itype = InjectionType(injection_type) if injection_type is not None else None
    return Grammar(name=name, injection_type=itype, rules=rules, start_symbol=start)


def load_grammar(path: str | Path, injection_type: InjectionType | str | None = None) -> Grammar:
    path = Path(path)
    if injection_type is None and path.stem in InjectionType.__members__:
        injection_type = path.stem
    return parse_grammar(path.read_text(encoding="utf-8"), name=path.stem,
                         injection_type=injection_type)


def bundled_grammar(injection_type: InjectionType | str) -> Grammar:
    itype = InjectionType(injection_type)
    text = resources.files("polyfuzz").joinpath(f"data/grammars/{itype.value}.cfg").read_text("utf-8")
    return parse_grammar(text, name=itype.value, injection_type=itype)


def load_grammars(grammar_dir: str | Path | None = None,
                  types=ALL_TYPES) -> dict[InjectionType, Grammar]:
    """One grammar per injection type, from ``<dir>/<type>.cfg`` or the bundled set."""
    out = {}
    for t in types:
        t = InjectionType(t)
        out[t] = bundled_grammar(t) if grammar_dir is None else load_grammar(Path(grammar_dir) / f"{t.value}.cfg", t)
    return out


# -- sampling ----------------------------------------------------------------

def _expand(grammar: Grammar, name: str, rng, budget: int) -> DerivationTree:
    alts = grammar.rules[name]
    eligible = [i for i, alt in enumerate(alts) if grammar.alternative_depth(alt) <= budget]
    if not eligible:
        raise DepthExhaustedError(f"no alternative of {name!r} terminates within depth {budget}")
    idx = eligible[int(rng.integers(len(eligible)))]
    children = [DerivationTree(s) if s.terminal else _expand(grammar, s.name, rng, budget - 1)
                for s in alts[idx]]
    return DerivationTree(Symbol(name, False), idx, children)


def derive(grammar: Grammar, rng, max_depth: int = DEFAULT_MAX_DEPTH,
           symbol: str | None = None) -> DerivationTree:
    """Random derivation; alternatives that cannot finish in the remaining depth are skipped."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    return _expand(grammar, symbol or grammar.start_symbol, rng, max_depth)


def render(tree: DerivationTree) -> str:
    return "".join(tree.leaves())


def resample_subtree(tree: DerivationTree, grammar: Grammar, rng,
                     max_depth: int = DEFAULT_MAX_DEPTH) -> DerivationTree:
    """Copy of ``tree`` with one uniformly chosen nonterminal subtree re-derived."""
    candidates = [(path, node) for path, node in tree.nodes() if not node.symbol.terminal]
    if not candidates:
        raise GrammarError("tree has no nonterminal node to resample")
    path, node = candidates[int(rng.integers(len(candidates)))]
    fresh = _expand(grammar, node.symbol.name, rng, max_depth - len(path))
    return _replace_at(tree, path, fresh)


def _replace_at(tree: DerivationTree, path: tuple[int, ...], new: DerivationTree) -> DerivationTree:
    if not path:
        return new
    children = list(tree.children)
    children[path[0]] = _replace_at(children[path[0]], path[1:], new)
    return DerivationTree(tree.symbol, tree.chosen_alternative_index, children)


# -- membership --------------------------------------------------------------

class _Recognizer:
    """Memoized backtracking over (symbol, position, depth budget); the budget
    is clamped to each symbol's maximum height so non-recursive grammars share
    memo entries across depths."""

    def __init__(self, grammar: Grammar, payload, node_limit: int, tokenizer=None):
        # with a tokenizer, ``payload`` is a token list and each terminal
        # matches its own tokenization (whitespace-only terminals match nothing)
        self.grammar = grammar
        self.payload = payload
        self.node_limit = node_limit
        self.memo: dict[tuple[str, int, int], frozenset[int]] = {}
        self.work = 0
        self.term_tokens = None
        if tokenizer is not None:
            self.term_tokens = {t: list(tokenizer(t)) for t in grammar.terminals}

    def _match(self, terminal: str, pos: int) -> int | None:
        if self.term_tokens is None:
            return pos + len(terminal) if self.payload.startswith(terminal, pos) else None
        tt = self.term_tokens[terminal]
        return pos + len(tt) if self.payload[pos:pos + len(tt)] == tt else None

    def _clamp(self, name: str, budget: int) -> int:
        h = self.grammar.max_height[name]
        return int(h) if h <= budget else budget

    def seq_ends(self, alt: tuple[Symbol, ...], pos: int, budget: int) -> set[int]:
        positions = {pos}
        for sym in alt:
            nxt: set[int] = set()
            for p in positions:
                self.work += 1
                if sym.terminal:
                    e = self._match(sym.name, p)
                    if e is not None:
                        nxt.add(e)
                else:
                    nxt.update(self.sym_ends(sym.name, p, budget))
            if not nxt:
                return nxt
            positions = nxt
        return positions

    def sym_ends(self, name: str, pos: int, budget: int) -> frozenset[int]:
        budget = self._clamp(name, budget)
        key = (name, pos, budget)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        if budget < self.grammar.min_depth[name]:
            self.memo[key] = frozenset()
            return self.memo[key]
        self.memo[key] = frozenset()  # guards left recursion at equal budget
        self.work += 1
        if self.work > self.node_limit:
            raise ParseBudgetExceeded(f"membership search exceeded {self.node_limit} steps")
        n = len(self.payload)
        ends: set[int] = set()
        for alt in self.grammar.rules[name]:
            ends |= {e for e in self.seq_ends(alt, pos, budget - 1) if e <= n}
        self.memo[key] = frozenset(ends)
        return self.memo[key]

    def build(self, name: str, pos: int, end: int, budget: int) -> DerivationTree | None:
        """A tree for ``name`` spanning payload[pos:end]; first alternative wins."""
        budget = self._clamp(name, budget)
        if end not in self.sym_ends(name, pos, budget):
            return None
        for i, alt in enumerate(self.grammar.rules[name]):
            children = self._build_seq(alt, 0, pos, end, budget - 1)
            if children is not None:
                return DerivationTree(Symbol(name, False), i, children)
        return None

    def _build_seq(self, alt, k: int, pos: int, end: int, budget: int):
        if k == len(alt):
            return [] if pos == end else None
        sym = alt[k]
        if sym.terminal:
            e = self._match(sym.name, pos)
            if e is None:
                return None
            rest = self._build_seq(alt, k + 1, e, end, budget)
            return None if rest is None else [DerivationTree(sym)] + rest
        for e in sorted(self.sym_ends(sym.name, pos, budget)):
            if e > end:
                break
            rest = self._build_seq(alt, k + 1, e, end, budget)
            if rest is not None:
                sub = self.build(sym.name, pos, e, budget)
                if sub is not None:
                    return [sub] + rest
        return None


def membership_check(grammar: Grammar, payload: str, max_depth: int = DEFAULT_MAX_DEPTH,
                     node_limit: int = 2_000_000) -> bool:
    """True iff ``payload`` is derivable from the start symbol within ``max_depth``."""
    rec = _Recognizer(grammar, payload, node_limit)
    return len(payload) in rec.sym_ends(grammar.start_symbol, 0, max_depth)


def parse(grammar: Grammar, payload: str, max_depth: int = DEFAULT_MAX_DEPTH,
          node_limit: int = 2_000_000) -> DerivationTree | None:
    """A derivation tree rendering exactly to ``payload``, or None if there is none."""
    rec = _Recognizer(grammar, payload, node_limit)
    return rec.build(grammar.start_symbol, 0, len(payload), max_depth)


def parse_tokens(grammar: Grammar, tokens, tokenizer, max_depth: int = DEFAULT_MAX_DEPTH,
                 node_limit: int = 200_000) -> DerivationTree | None:
    """A derivation whose rendering tokenizes to ``tokens``, or None.

    Lets a token sequence that lost its whitespace be mapped back onto a
    sentence of the grammar.
    """
    rec = _Recognizer(grammar, list(tokens), node_limit, tokenizer)
    try:
        return rec.build(grammar.start_symbol, 0, len(rec.payload), max_depth)
    except ParseBudgetExceeded:
        return None
