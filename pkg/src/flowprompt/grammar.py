"""Verdict grammar: the GBNF text, a strict parser, and a GBNF conformance checker.

``parse_verdict`` is a hand-written scanner for the one verdict shape.
``accepts`` interprets the GBNF text itself (tokenize, build an AST, match
by recursive descent) and shares no code with the scanner, so the two can be
fuzzed against each other.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from functools import lru_cache

from .errors import ExtraTokens, Malformed, MissingKey, OutOfRange

GBNF_V1 = (
    'root   ::= obj nl?\n'
    'obj    ::= "{\\"prediction\\":\\"" pred "\\",\\"p_attack\\":" prob "}"\n'
    'pred   ::= "attack" | "benign"\n'
    'prob   ::= "0" frac? | "1" ("." "0"{1,4})?\n'
    'frac   ::= "." [0-9]{1,4}\n'
    'nl     ::= "\\n"\n'
)

PREDICTIONS = ("attack", "benign")
P_DECIMALS = 4


@dataclass(frozen=True)
class GrammarSpec:
    gbnf_text: str
    version: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.gbnf_text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ModelVerdict:
    prediction: str
    p_attack: float
    raw: str = field(default="", compare=False)

    def __post_init__(self):
        if self.prediction not in PREDICTIONS:
            raise ValueError(f"prediction must be one of {PREDICTIONS}")
        if not 0.0 <= self.p_attack <= 1.0:
            raise ValueError("p_attack must lie in [0, 1]")

    def to_json(self) -> str:
        return format_verdict(self.prediction, self.p_attack)


def emit_gbnf() -> GrammarSpec:
    return GrammarSpec(GBNF_V1, "1")


# -- canonical rendering and strict parsing ---------------------------------

_PREFIX = '{"prediction":"'
_MID = '","p_attack":'
_NUMBER = re.compile(r"(0|1)(\.[0-9]{1,4})?")
_LOOSE_NUMBER = re.compile(r"[0-9]+(\.[0-9]+)?")


def format_probability(p: float) -> str:
    """Shortest literal for ``p`` rounded half-to-even to 4 places."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    q = Decimal(repr(float(p))).quantize(Decimal(1).scaleb(-P_DECIMALS), rounding=ROUND_HALF_EVEN)
    if q == 0:
        return "0"
    if q == 1:
        return "1"
    return format(q, "f").rstrip("0")


def format_verdict(prediction: str, p_attack: float) -> str:
    if prediction not in PREDICTIONS:
        raise ValueError(f"prediction must be one of {PREDICTIONS}")
    return f'{_PREFIX}{prediction}{_MID}{format_probability(p_attack)}}}'


def parse_verdict(raw: str) -> ModelVerdict:
    """Parse model output that must be exactly one verdict object.

    One trailing newline is tolerated; anything else outside the object
    raises :class:`ExtraTokens`.
    """
    body = raw[:-1] if raw.endswith("\n") else raw
    if not body.startswith("{"):
        raise ExtraTokens("text before the JSON object") if "{" in body else Malformed("no JSON object")
    close = body.find("}")
    if close < 0:
        raise Malformed("unterminated object")
    if close != len(body) - 1:
        raise ExtraTokens("text after the JSON object")
    for key in ('"prediction"', '"p_attack"'):
        if key not in body:
            raise MissingKey(f"missing key {key}")
    if not body.startswith(_PREFIX):
        raise Malformed("object must start with the prediction key")
    pos = len(_PREFIX)
    prediction = body[pos:pos + 6]
    if prediction not in PREDICTIONS:
        raise Malformed(f"prediction must be one of {PREDICTIONS}")
    pos += 6
    if not body.startswith(_MID, pos):
        raise Malformed("expected p_attack after prediction")
    literal = body[pos + len(_MID):close]
    if not _NUMBER.fullmatch(literal) or (literal[0] == "1" and set(literal[2:]) - {"0"}):
        if _LOOSE_NUMBER.fullmatch(literal) and Decimal(literal) > 1:
            raise OutOfRange(f"p_attack={literal} exceeds 1")
        raise Malformed(f"bad p_attack literal {literal!r}")
    return ModelVerdict(prediction, float(Decimal(literal)), raw)


# -- GBNF interpreter ---------------------------------------------------------

@dataclass(frozen=True)
class Lit:
    text: str


@dataclass(frozen=True)
class CharClass:
    ranges: tuple[tuple[str, str], ...]
    negated: bool = False

    def matches(self, ch: str) -> bool:
        hit = any(lo <= ch <= hi for lo, hi in self.ranges)
        return hit != self.negated


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Seq:
    items: tuple


@dataclass(frozen=True)
class Alt:
    options: tuple


@dataclass(frozen=True)
class Repeat:
    node: object
    min: int
    max: int | None


_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", '"': '"', "[": "[", "]": "]", "-": "-", "^": "^"}
_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<define>::=)
  | (?P<ident>[A-Za-z0-9_-]+)
  | (?P<string>"(?:\\.|[^"\\])*")
  | (?P<cls>\[(?:\\.|[^\]\\])*\])
  | (?P<brace>\{\s*\d+\s*(?:,\s*\d*\s*)?\})
  | (?P<punct>[()|?*+])
    """,
    re.VERBOSE,
)


def _unescape(body: str) -> list[str]:
    out, i = [], 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            nxt = body[i + 1]
            if nxt == "x":
                out.append(chr(int(body[i + 2:i + 4], 16)))
                i += 4
                continue
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return out


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ValueError(f"GBNF syntax error at offset {pos}: {text[pos:pos + 20]!r}")
        pos = m.end()
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group()))
    return tokens


class _GbnfParser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self, offset: int = 0):
        j = self.i + offset
        return self.tokens[j] if j < len(self.tokens) else (None, None)

    def parse(self) -> dict[str, object]:
        rules: dict[str, object] = {}
        while self.i < len(self.tokens):
            kind, name = self.peek()
            if kind != "ident" or self.peek(1)[0] != "define":
                raise ValueError(f"expected rule definition, got {name!r}")
            self.i += 2
            rules[name] = self.alternatives()
        if "root" not in rules:
            raise ValueError("grammar has no root rule")
        return rules

    def at_rule_start(self) -> bool:
        return self.peek()[0] == "ident" and self.peek(1)[0] == "define"

    def alternatives(self):
        options = [self.sequence()]
        while self.peek() == ("punct", "|"):
            self.i += 1
            options.append(self.sequence())
        return options[0] if len(options) == 1 else Alt(tuple(options))

    def sequence(self):
        items = []
        while True:
            kind, value = self.peek()
            if kind is None or value in ("|", ")") or self.at_rule_start():
                break
            items.append(self.postfix(self.atom()))
        return items[0] if len(items) == 1 else Seq(tuple(items))

    def atom(self):
        kind, value = self.peek()
        self.i += 1
        if kind == "ident":
            return Ref(value)
        if kind == "string":
            return Lit("".join(_unescape(value[1:-1])))
        if kind == "cls":
            return self.char_class(value[1:-1])
        if (kind, value) == ("punct", "("):
            node = self.alternatives()
            if self.peek() != ("punct", ")"):
                raise ValueError("unbalanced parenthesis")
            self.i += 1
            return node
        raise ValueError(f"unexpected token {value!r}")

    @staticmethod
    def char_class(body: str) -> CharClass:
        negated = body.startswith("^")
        chars = _unescape(body[1:] if negated else body)
        ranges, k = [], 0
        while k < len(chars):
            if k + 2 < len(chars) and chars[k + 1] == "-":
                ranges.append((chars[k], chars[k + 2]))
                k += 3
            else:
                ranges.append((chars[k], chars[k]))
                k += 1
        return CharClass(tuple(ranges), negated)

    def postfix(self, node):
        while True:
            kind, value = self.peek()
            if kind == "punct" and value in "?*+":
                self.i += 1
                lo, hi = {"?": (0, 1), "*": (0, None), "+": (1, None)}[value]
                node = Repeat(node, lo, hi)
            elif kind == "brace":
                self.i += 1
                inner = value[1:-1].replace(" ", "")
                if "," in inner:
                    lo_s, hi_s = inner.split(",")
                    node = Repeat(node, int(lo_s), int(hi_s) if hi_s else None)
                else:
                    node = Repeat(node, int(inner), int(inner))
            else:
                return node


@lru_cache(maxsize=16)
def parse_gbnf(text: str) -> dict[str, object]:
    """Parse GBNF text into ``{rule name: AST}``."""
    rules = _GbnfParser(text).parse()
    for name in _references(rules):
        if name not in rules:
            raise ValueError(f"undefined rule {name!r}")
    return rules


def _references(rules: dict[str, object]) -> set[str]:
    found: set[str] = set()

    def walk(node):
        if isinstance(node, Ref):
            found.add(node.name)
        elif isinstance(node, (Seq, Alt)):
            for child in node.items if isinstance(node, Seq) else node.options:
                walk(child)
        elif isinstance(node, Repeat):
            walk(node.node)

    for node in rules.values():
        walk(node)
    return found


class _Matcher:
    """All-parses recursive descent: each call returns every reachable end offset."""

    def __init__(self, rules: dict[str, object], text: str):
        self.rules = rules
        self.text = text
        self.memo: dict[tuple[int, int], frozenset[int]] = {}

    def ends(self, node, pos: int) -> frozenset[int]:
        key = (id(node), pos)
        if key not in self.memo:
            self.memo[key] = frozenset()  # blocks left recursion
            self.memo[key] = self._ends(node, pos)
        return self.memo[key]

    def _ends(self, node, pos: int) -> frozenset[int]:
        s = self.text
        if isinstance(node, Lit):
            return frozenset({pos + len(node.text)}) if s.startswith(node.text, pos) else frozenset()
        if isinstance(node, CharClass):
            return frozenset({pos + 1}) if pos < len(s) and node.matches(s[pos]) else frozenset()
        if isinstance(node, Ref):
            return self.ends(self.rules[node.name], pos)
        if isinstance(node, Seq):
            current = {pos}
            for item in node.items:
                current = {e for p in current for e in self.ends(item, p)}
                if not current:
                    break
            return frozenset(current)
        if isinstance(node, Alt):
            return frozenset().union(*(self.ends(opt, pos) for opt in node.options))
        if isinstance(node, Repeat):
            result = {pos} if node.min == 0 else set()
            current, count, seen = {pos}, 0, set()
            limit = node.max if node.max is not None else len(s) + 1
            while current and count < limit:
                count += 1
                current = {e for p in current for e in self.ends(node.node, p)}
                if node.max is None:
                    current -= seen
                    seen |= current
                if count >= node.min:
                    result |= current
            return frozenset(result)
        raise TypeError(f"unknown node {node!r}")


def accepts(grammar: GrammarSpec, candidate: str) -> bool:
    """True iff ``candidate`` derives from the grammar's ``root`` rule."""
    rules = parse_gbnf(grammar.gbnf_text)
    return len(candidate) in _Matcher(rules, candidate).ends(rules["root"], 0)


_PRINTABLE = [chr(c) for c in range(32, 127)]


def random_derivation(grammar: GrammarSpec, rng: random.Random, max_unbounded: int = 3) -> str:
    """Sample a string from the grammar by expanding productions at random."""
    rules = parse_gbnf(grammar.gbnf_text)
    out: list[str] = []

    def expand(node):
        if isinstance(node, Lit):
            out.append(node.text)
        elif isinstance(node, CharClass):
            pool = [c for c in _PRINTABLE + ["\n"] if node.matches(c)]
            out.append(rng.choice(pool))
        elif isinstance(node, Ref):
            expand(rules[node.name])
        elif isinstance(node, Seq):
            for item in node.items:
                expand(item)
        elif isinstance(node, Alt):
            expand(rng.choice(node.options))
        elif isinstance(node, Repeat):
            hi = node.max if node.max is not None else node.min + max_unbounded
            for _ in range(rng.randint(node.min, hi)):
                expand(node.node)

    expand(rules["root"])
    return "".join(out)
