"""Policy AST, DSL parser, and condition-evaluation semantics.

An assertion ``deny P -> u [condition]`` forbids the action partition ``P``
from interfering with user ``u`` whenever the condition holds. Conditions come
in five forms:

* strict — always deny;
* ``pre upgrade [channels]`` — deny once the trace so far ends in a channel
  pattern (flow is open by default and closes on the trigger);
* ``pre downgrade [channels]`` — deny unless the trace so far ends in a
  channel pattern (flow is closed by default and opens on the trigger);
* ``pre regex R`` — deny exactly when the trace so far is in the regular
  language of ``R`` (subsumes the two channel forms);
* ``post [channels]`` — deny unless the future of the trace starts with a
  channel pattern (controlled release).

A channel is a sequence of partition sets, optionally separated by ``<>``
gaps; a gap stands for "any finite run of actions". In pre channels the gap
follows a set, in post channels it precedes one.

Everything here evaluates conditions directly on action sequences. The
automata module compiles the same languages to DFAs; agreement between the
two routes is enforced by tests, never assumed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

from .errors import InputError
from .model import Signature

# ---------------------------------------------------------------------------
# Channel tokens
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SetTok:
    """A nonempty set of partitions that must be matched by one action."""
    parts: frozenset[int]


@dataclass(frozen=True)
class GapTok:
    """A gap: any finite run of actions. Pre channels only, after a set."""


@dataclass(frozen=True)
class GapSetTok:
    """A gap fused with the set that eventually follows it. Post channels."""
    parts: frozenset[int]


GAP = GapTok()

Channel = tuple  # tuple of the three token kinds above


def validate_channel(channel: Channel, kind: str, sig: Signature) -> None:
    if not channel:
        raise InputError("empty channel")
    for tok in channel:
        parts = getattr(tok, "parts", None)
        if parts is not None:
            if not parts:
                raise InputError("empty partition set in channel")
            for p in parts:
                if not 0 <= p < len(sig.partitions):
                    raise InputError(f"channel names unknown partition index {p}")
    if kind == "pre":
        if any(isinstance(t, GapSetTok) for t in channel):
            raise InputError("pre channel cannot carry a fused gap-set token")
        if not isinstance(channel[0], SetTok):
            raise InputError("pre channel must start with a partition set")
        for prev, tok in zip(channel, channel[1:]):
            if isinstance(tok, GapTok) and not isinstance(prev, SetTok):
                raise InputError("'<>' in a pre channel must follow a partition set")
    elif kind == "post":
        if any(isinstance(t, GapTok) for t in channel):
            raise InputError("post channel gaps must be fused with a following set")
        if not all(isinstance(t, (SetTok, GapSetTok)) for t in channel):
            raise InputError("post channel tokens must be sets or gap-sets")
    else:
        raise ValueError(f"bad channel kind {kind!r}")


# ---------------------------------------------------------------------------
# Regular expressions over partitions
# ---------------------------------------------------------------------------


class Regex:
    __slots__ = ()


@dataclass(frozen=True)
class Empty(Regex):
    __slots__ = ()


@dataclass(frozen=True)
class Lit(Regex):
    part: int


@dataclass(frozen=True)
class Union(Regex):
    left: Regex
    right: Regex


@dataclass(frozen=True)
class Concat(Regex):
    left: Regex
    right: Regex


@dataclass(frozen=True)
class Star(Regex):
    inner: Regex


EMPTY = Empty()
EPSILON = Star(EMPTY)  # the language {ε}


def union_all(items: Sequence[Regex]) -> Regex:
    if not items:
        return EMPTY
    out = items[0]
    for r in items[1:]:
        out = Union(out, r)
    return out


def concat_all(items: Sequence[Regex]) -> Regex:
    if not items:
        return EPSILON
    out = items[0]
    for r in items[1:]:
        out = Concat(out, r)
    return out


def any_action_star(sig: Signature) -> Regex:
    """Regex for the full language: (P_1 | ... | P_k)*."""
    return Star(union_all([Lit(p) for p in range(len(sig.partitions))]))


@lru_cache(maxsize=None)
def _nullable(r: Regex) -> bool:
    if isinstance(r, Empty) or isinstance(r, Lit):
        return False
    if isinstance(r, Union):
        return _nullable(r.left) or _nullable(r.right)
    if isinstance(r, Concat):
        return _nullable(r.left) and _nullable(r.right)
    return True  # Star


def _mk_union(a: Regex, b: Regex) -> Regex:
    if isinstance(a, Empty):
        return b
    if isinstance(b, Empty) or a == b:
        return a
    return Union(a, b)


def _mk_concat(a: Regex, b: Regex) -> Regex:
    if isinstance(a, Empty) or isinstance(b, Empty):
        return EMPTY
    if a == EPSILON:
        return b
    if b == EPSILON:
        return a
    return Concat(a, b)


@lru_cache(maxsize=None)
def _deriv(r: Regex, p: int) -> Regex:
    """Brzozowski derivative of ``r`` with respect to partition ``p``."""
    if isinstance(r, Empty):
        return EMPTY
    if isinstance(r, Lit):
        return EPSILON if r.part == p else EMPTY
    if isinstance(r, Union):
        return _mk_union(_deriv(r.left, p), _deriv(r.right, p))
    if isinstance(r, Concat):
        first = _mk_concat(_deriv(r.left, p), r.right)
        if _nullable(r.left):
            return _mk_union(first, _deriv(r.right, p))
        return first
    return _mk_concat(_deriv(r.inner, p), Star(r.inner))  # Star


def regex_partitions(r: Regex) -> set[int]:
    if isinstance(r, Lit):
        return {r.part}
    if isinstance(r, (Union, Concat)):
        return regex_partitions(r.left) | regex_partitions(r.right)
    if isinstance(r, Star):
        return regex_partitions(r.inner)
    return set()


# ---------------------------------------------------------------------------
# Conditions, assertions, policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Strict:
    __slots__ = ()


@dataclass(frozen=True)
class PreUpgrade:
    channels: tuple[Channel, ...]


@dataclass(frozen=True)
class PreDowngrade:
    channels: tuple[Channel, ...]


@dataclass(frozen=True)
class PreRegexCond:
    regex: Regex


@dataclass(frozen=True)
class PreLangCond:
    """General pre-condition carried as an explicit automaton.

    Produced when translating a downgrade form: the complement language has no
    direct regex, and language equality is all the translation must preserve.
    """
    dfa: "object"  # automata.Dfa; kept loose to avoid an import cycle


@dataclass(frozen=True)
class Post:
    channels: tuple[Channel, ...]


Condition = object

PRE_CLASSES = (PreUpgrade, PreDowngrade, PreRegexCond, PreLangCond)


@dataclass(frozen=True)
class Assertion:
    controlled: int  # partition index
    target: int      # user index
    condition: Condition

    def cls(self) -> str:
        if isinstance(self.condition, Strict):
            return "strict"
        if isinstance(self.condition, PRE_CLASSES):
            return "pre"
        return "post"


def validate_assertion(sig: Signature, assertion: Assertion) -> None:
    if not 0 <= assertion.controlled < len(sig.partitions):
        raise InputError("assertion controls an unknown partition")
    if not 0 <= assertion.target < len(sig.users):
        raise InputError("assertion targets an unknown user")
    cond = assertion.condition
    if isinstance(cond, (PreUpgrade, PreDowngrade)):
        for ch in cond.channels:
            validate_channel(ch, "pre", sig)
    elif isinstance(cond, Post):
        for ch in cond.channels:
            validate_channel(ch, "post", sig)
    elif isinstance(cond, PreRegexCond):
        for p in regex_partitions(cond.regex):
            if not 0 <= p < len(sig.partitions):
                raise InputError("regex condition names an unknown partition")


@dataclass(frozen=True)
class Policy:
    sig: Signature
    assertions: tuple[Assertion, ...]

    def __post_init__(self):
        seen: dict[tuple[int, int], Assertion] = {}
        for t in self.assertions:
            validate_assertion(self.sig, t)
            key = (t.controlled, t.target)
            if key in seen:
                raise InputError(
                    f"duplicate assertion for partition "
                    f"{self.sig.partitions[t.controlled]!r} toward user "
                    f"{self.sig.users[t.target]!r}")
            seen[key] = t
        object.__setattr__(self, "_by_key", seen)

    def rule_for(self, part: int, user: int) -> Assertion | None:
        return self._by_key.get((part, user))

    def toward(self, user: int) -> tuple[Assertion, ...]:
        return tuple(t for t in self.assertions if t.target == user)

    def classes_toward(self, user: int) -> set[str]:
        return {t.cls() for t in self.toward(user)}


# ---------------------------------------------------------------------------
# Sequence-level semantics
#
# Channels are matched with a tiny positional NFA over the token list; regex
# conditions are decided by Brzozowski derivatives. Both operate on raw
# sequences and serve as the definitional route the automata module is tested
# against.
# ---------------------------------------------------------------------------


def _channel_elems(sig: Signature, channel: Channel) -> tuple[int | None, ...]:
    """Flattens a channel into match elements: an action bitmask per set, None
    per gap (gap-set tokens contribute a gap and a set)."""
    elems: list[int | None] = []
    for tok in channel:
        if isinstance(tok, GapTok):
            elems.append(None)
            continue
        if isinstance(tok, GapSetTok):
            elems.append(None)
        mask = 0
        for p in tok.parts:
            for a in sig.actions_of_partition[p]:
                mask |= 1 << a
        elems.append(mask)
    return tuple(elems)


class _ChannelNfa:
    """Positions 0..n over the element list; bit i = "first i elements done".

    Gaps loop on any action and can be skipped; reaching bit n accepts. The
    mask spaces are tiny, so forward and backward transitions are memoized.
    """

    __slots__ = ("elems", "n", "accept", "start", "closep", "base_can",
                 "_fwd", "_bwd")

    def __init__(self, elems: tuple[int | None, ...]):
        self.elems = elems
        self.n = len(elems)
        self.accept = 1 << self.n
        self.start = self.close(1)
        self.closep = tuple(self.close(1 << p) for p in range(self.n + 1))
        self.base_can = 0
        for p in range(self.n + 1):
            if self.closep[p] & self.accept:
                self.base_can |= 1 << p
        self._fwd: dict[tuple[int, int], int] = {}
        self._bwd: dict[tuple[int, int], int] = {}

    def close(self, mask: int) -> int:
        for i, e in enumerate(self.elems):
            if e is None and mask >> i & 1:
                mask |= 2 << i
        return mask

    def step(self, mask: int, action: int) -> int:
        key = (mask, action)
        got = self._fwd.get(key)
        if got is None:
            new = 0
            for i, e in enumerate(self.elems):
                if mask >> i & 1:
                    if e is None:
                        new |= 1 << i
                    elif e >> action & 1:
                        new |= 2 << i
            got = self.close(new)
            self._fwd[key] = got
        return got

    def back_step(self, can: int, action: int) -> int:
        """One backward step of the co-reachability mask: bit p survives when
        position p can reach the accept bit through ``action`` then ``can``."""
        key = (can, action)
        got = self._bwd.get(key)
        if got is None:
            got = self.base_can
            for p in range(self.n + 1):
                if not got >> p & 1 and self.step(self.closep[p], action) & can:
                    got |= 1 << p
            self._bwd[key] = got
        return got


class SeqMatcher:
    """Membership tests for one condition, evaluated on raw sequences."""

    def __init__(self, sig: Signature, condition: Condition):
        self.sig = sig
        self.condition = condition
        if isinstance(condition, (PreUpgrade, PreDowngrade)):
            # language A* . [[channels]] : suffix match
            self.nfas = tuple(_ChannelNfa((None,) + _channel_elems(sig, ch))
                              for ch in condition.channels)
        elif isinstance(condition, Post):
            # language [[channels]] . A* : prefix match
            self.nfas = tuple(_ChannelNfa(_channel_elems(sig, ch))
                              for ch in condition.channels)

    # -- pre conditions: membership of the whole word ----------------------

    def pre_member(self, word: Sequence[int]) -> bool:
        cond = self.condition
        if isinstance(cond, PreRegexCond):
            r = cond.regex
            part = self.sig.part
            for a in word:
                r = _deriv(r, part[a])
            return _nullable(r)
        if isinstance(cond, PreLangCond):
            dfa = cond.dfa
            q = dfa.initial
            delta = dfa.delta
            for a in word:
                q = delta[q][a]
            return q in dfa.finals
        masks = [nfa.start for nfa in self.nfas]
        for a in word:
            masks = [nfa.step(m, a) for nfa, m in zip(self.nfas, masks)]
        return any(m & nfa.accept for nfa, m in zip(self.nfas, masks))

    def pre_members_by_prefix(self, word: Sequence[int]) -> list[bool]:
        """Membership of each prefix word[:i], i in 0..len(word)."""
        cond = self.condition
        out = []
        if isinstance(cond, PreRegexCond):
            r = cond.regex
            part = self.sig.part
            out.append(_nullable(r))
            for a in word:
                r = _deriv(r, part[a])
                out.append(_nullable(r))
            return out
        if isinstance(cond, PreLangCond):
            dfa = cond.dfa
            q = dfa.initial
            finals = dfa.finals
            delta = dfa.delta
            out.append(q in finals)
            for a in word:
                q = delta[q][a]
                out.append(q in finals)
            return out
        masks = [nfa.start for nfa in self.nfas]
        out.append(any(m & nfa.accept for nfa, m in zip(self.nfas, masks)))
        for a in word:
            masks = [nfa.step(m, a) for nfa, m in zip(self.nfas, masks)]
            out.append(any(m & nfa.accept for nfa, m in zip(self.nfas, masks)))
        return out

    # -- post conditions: prefix-of-word match ------------------------------

    def post_member(self, word: Sequence[int]) -> bool:
        """True iff some prefix of ``word`` completes one of the channels."""
        for nfa in self.nfas:
            mask = nfa.start
            if mask & nfa.accept:
                return True
            for a in word:
                mask = nfa.step(mask, a)
                if mask & nfa.accept:
                    return True
        return False

    def post_members_by_suffix(self, word: Sequence[int]) -> list[bool]:
        """Membership of each suffix word[i:], i in 0..len(word), via one
        backward pass per channel: bit p of the running mask records whether
        the rest of the word can complete the channel from element p."""
        n = len(word)
        out = [False] * (n + 1)
        for nfa in self.nfas:
            closes = [nfa.close(1 << p) for p in range(nfa.n + 1)]
            positions = range(nfa.n + 1)
            can = 0
            for p in positions:
                if closes[p] & nfa.accept:
                    can |= 1 << p
            base_can = can
            if nfa.start & can:
                out[n] = True
            for i in range(n - 1, -1, -1):
                a = word[i]
                new = base_can
                for p in positions:
                    if not new >> p & 1 and nfa.step(closes[p], a) & can:
                        new |= 1 << p
                can = new
                if nfa.start & can:
                    out[i] = True
        return out


@lru_cache(maxsize=None)
def matcher(sig: Signature, condition: Condition) -> SeqMatcher:
    return SeqMatcher(sig, condition)


def decide_idx(sig: Signature, assertion: Assertion, alpha: Sequence[int],
               a: int, alpha_post: Sequence[int]) -> bool:
    """True iff the assertion's condition says ``a`` must be purged, given the
    raw preceding trace ``alpha`` and raw future ``alpha_post``."""
    cond = assertion.condition
    if isinstance(cond, Strict):
        return True
    if isinstance(cond, PreUpgrade):
        return matcher(sig, cond).pre_member(alpha)
    if isinstance(cond, PreDowngrade):
        return not matcher(sig, cond).pre_member(alpha)
    if isinstance(cond, (PreRegexCond, PreLangCond)):
        return matcher(sig, cond).pre_member(alpha)
    if isinstance(cond, Post):
        return not matcher(sig, cond).post_member(alpha_post)
    raise TypeError(f"unknown condition {cond!r}")


def eval_condition(sig: Signature, assertion: Assertion, alpha: Sequence[str],
                   a: str, alpha_post: Sequence[str]) -> bool:
    """Public form of the condition semantics, on action names.

    Requires ``a`` to lie in the assertion's controlled partition; a returned
    True means "purge this action".
    """
    ai = sig.aidx(a)
    if sig.part[ai] != assertion.controlled:
        raise InputError(
            f"action {a!r} is not in partition {sig.partitions[assertion.controlled]!r}")
    return decide_idx(sig, assertion, sig.intern_trace(alpha), ai,
                      sig.intern_trace(alpha_post))


# ---------------------------------------------------------------------------
# Translation to the general pre-conditional form and the strength order
# ---------------------------------------------------------------------------


def channel_regex(sig: Signature, channel: Channel, kind: str) -> Regex:
    """Regex with the same language as one channel (gaps become A*; post gaps
    use the leftmost form (A \\ C)* C, which is language-equal)."""
    items: list[Regex] = []
    for tok in channel:
        if isinstance(tok, GapTok):
            items.append(any_action_star(sig))
        elif isinstance(tok, SetTok):
            items.append(union_all([Lit(p) for p in sorted(tok.parts)]))
        else:  # GapSetTok
            rest = [Lit(p) for p in range(len(sig.partitions)) if p not in tok.parts]
            items.append(Star(union_all(rest)) if rest else EPSILON)
            items.append(union_all([Lit(p) for p in sorted(tok.parts)]))
    return concat_all(items)


def to_general_pre(sig: Signature, assertion: Assertion) -> Assertion:
    """Rewrites an upgrade/downgrade assertion into the general pre form with
    the same purge behaviour.

    Upgrades become an explicit regex for A*.[[channels]]; downgrades carry
    the complement language as a DFA, which is exact and avoids pointless
    regex re-extraction.
    """
    cond = assertion.condition
    if isinstance(cond, PreUpgrade):
        body = union_all([channel_regex(sig, ch, "pre") for ch in cond.channels])
        regex = Concat(any_action_star(sig), body)
        return Assertion(assertion.controlled, assertion.target, PreRegexCond(regex))
    if isinstance(cond, PreDowngrade):
        from . import automata
        base = automata.channel_to_dfa(cond.channels, "pre", sig)
        return Assertion(assertion.controlled, assertion.target,
                         PreLangCond(automata.complement(base)))
    raise InputError("to_general_pre expects an upgrade or downgrade assertion")


def general_pre_form(sig: Signature, assertion: Assertion) -> Assertion:
    """Any strict or pre assertion, normalized to the general pre form."""
    cond = assertion.condition
    if isinstance(cond, Strict):
        return Assertion(assertion.controlled, assertion.target,
                         PreRegexCond(any_action_star(sig)))
    if isinstance(cond, (PreRegexCond, PreLangCond)):
        return assertion
    if isinstance(cond, (PreUpgrade, PreDowngrade)):
        return to_general_pre(sig, assertion)
    raise InputError("post-conditional assertion has no general pre form")


def assertion_leq(sig: Signature, t1: Assertion, t2: Assertion) -> bool:
    """True iff ``t2`` is at least as strong as ``t1``: every word where t1's
    condition purges is also purged by t2's. Decided by language inclusion;
    this coincides with containment of the purged traces."""
    if (t1.controlled, t1.target) != (t2.controlled, t2.target):
        raise InputError("ordering requires the same controlled partition and target")
    if not isinstance(t1.condition, (PreRegexCond, PreLangCond)) or \
       not isinstance(t2.condition, (PreRegexCond, PreLangCond)):
        raise InputError("ordering requires general pre-conditional assertions")
    from . import automata
    d1 = automata.condition_dfa(sig, t1.condition)
    d2 = automata.condition_dfa(sig, t2.condition)
    ok, _ = automata.dfa_included(d1, d2)
    return ok


# ---------------------------------------------------------------------------
# DSL parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>\#.*)
  | (?P<arrow>->)
  | (?P<gap><>)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<zero>0)
  | (?P<punct>[;\[\]{}(),|.*])
""", re.VERBOSE)


def _tokenize(line: str, path: str, lineno: int) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if not m:
            raise InputError(f"unexpected character {line[pos]!r} (column {pos + 1})",
                             path, lineno)
        pos = m.end()
        kind = m.lastgroup
        if kind in ("ws", "comment"):
            continue
        tokens.append((kind, m.group(), m.start() + 1))
    return tokens


class _StmtParser:
    def __init__(self, tokens, path, lineno, sig: Signature):
        self.tokens = tokens
        self.i = 0
        self.path = path
        self.lineno = lineno
        self.sig = sig

    def error(self, message: str):
        col = self.tokens[self.i][2] if self.i < len(self.tokens) else None
        suffix = f" (column {col})" if col else ""
        raise InputError(message + suffix, self.path, self.lineno)

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("eof", "", None)

    def take(self, kind=None, literal=None, describe=None):
        tok = self.peek()
        want = describe or (repr(literal) if literal else kind)
        if kind is not None and tok[0] != kind:
            self.error(f"expected {want}, found {tok[1]!r}" if tok[1]
                       else f"expected {want} at end of statement")
        if literal is not None and tok[1] != literal:
            self.error(f"expected {literal!r}, found {tok[1]!r}")
        self.i += 1
        return tok

    def keyword(self, word: str):
        tok = self.peek()
        if tok[0] != "ident" or tok[1] != word:
            self.error(f"expected keyword {word!r}")
        self.i += 1

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok[0] == "ident" and tok[1] == word

    def partition(self) -> int:
        tok = self.take("ident", describe="partition name")
        if tok[1] not in self.sig.partition_index:
            self.error(f"unknown partition {tok[1]!r}")
        return self.sig.partition_index[tok[1]]

    def user(self) -> int:
        tok = self.take("ident", describe="user name")
        if tok[1] not in self.sig.user_index:
            self.error(f"unknown user {tok[1]!r}")
        return self.sig.user_index[tok[1]]

    # statement := "deny" PART "->" USER cond? ";"
    def statement(self) -> Assertion:
        self.keyword("deny")
        controlled = self.partition()
        self.take("arrow", describe="'->'")
        target = self.user()
        cond: Condition = Strict()
        if self.at_keyword("pre") or self.at_keyword("post"):
            cond = self.cond()
        self.take("punct", ";")
        if self.i != len(self.tokens):
            self.error("trailing input after ';'")
        return Assertion(controlled, target, cond)

    def cond(self) -> Condition:
        if self.at_keyword("post"):
            self.take()
            return Post(self.chans("post"))
        self.keyword("pre")
        if self.at_keyword("upgrade"):
            self.take()
            return PreUpgrade(self.chans("pre"))
        if self.at_keyword("downgrade"):
            self.take()
            return PreDowngrade(self.chans("pre"))
        if self.at_keyword("regex"):
            self.take()
            return PreRegexCond(self.regex())
        self.error("expected 'upgrade', 'downgrade' or 'regex' after 'pre'")

    def chans(self, kind: str) -> tuple[Channel, ...]:
        self.take("punct", "[")
        channels = [self.channel(kind)]
        while self.peek()[1] == "|":
            self.take()
            channels.append(self.channel(kind))
        self.take("punct", "]")
        return tuple(channels)

    def channel(self, kind: str) -> Channel:
        # raw items: '<>' markers and partition sets, shape-checked afterwards
        raw: list = []
        while True:
            tok = self.peek()
            if tok[0] == "gap":
                self.take()
                raw.append("gap")
            elif tok[0] == "ident" or tok[1] == "{":
                raw.append(self.partset())
            else:
                break
        if not raw:
            self.error("empty channel")
        try:
            tokens = _assemble_channel(raw, kind)
            validate_channel(tokens, kind, self.sig)
        except InputError as exc:
            raise InputError(exc.message, self.path, self.lineno) from None
        return tokens

    def partset(self) -> frozenset[int]:
        if self.peek()[1] == "{":
            self.take()
            parts = {self.partition()}
            while self.peek()[1] == ",":
                self.take()
                parts.add(self.partition())
            self.take("punct", "}")
            return frozenset(parts)
        return frozenset({self.partition()})

    # regex := concat ('|' concat)* ; concat := starred ('.' starred)* ;
    # starred := atom '*'* ; atom := '0' | PART | '(' regex ')'
    def regex(self) -> Regex:
        out = self.regex_concat()
        while self.peek()[1] == "|":
            self.take()
            out = Union(out, self.regex_concat())
        return out

    def regex_concat(self) -> Regex:
        out = self.regex_starred()
        while self.peek()[1] == ".":
            self.take()
            out = Concat(out, self.regex_starred())
        return out

    def regex_starred(self) -> Regex:
        out = self.regex_atom()
        while self.peek()[1] == "*":
            self.take()
            out = Star(out)
        return out

    def regex_atom(self) -> Regex:
        tok = self.peek()
        if tok[0] == "zero":
            self.take()
            return EMPTY
        if tok[1] == "(":
            self.take()
            inner = self.regex()
            self.take("punct", ")")
            return inner
        if tok[0] == "ident":
            return Lit(self.partition())
        self.error("expected a regex atom")


def _assemble_channel(raw: list, kind: str) -> Channel:
    tokens: list = []
    if kind == "pre":
        for item in raw:
            tokens.append(GAP if item == "gap" else SetTok(item))
    else:
        i = 0
        while i < len(raw):
            if raw[i] == "gap":
                if i + 1 >= len(raw) or raw[i + 1] == "gap":
                    raise InputError("'<>' in a post channel must precede a partition set")
                tokens.append(GapSetTok(raw[i + 1]))
                i += 2
            else:
                tokens.append(SetTok(raw[i]))
                i += 1
    return tuple(tokens)


def parse_policy(text: str, sig: Signature, path: str = "<policy>",
                 allow_duplicates: bool = False) -> Policy | list[Assertion]:
    """Parses the policy DSL (one statement per line, ``#`` comments).

    With ``allow_duplicates`` the raw assertion list is returned instead of a
    simple policy; this only serves side-by-side ordering of variants and is
    never used for verification.
    """
    assertions: list[Assertion] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = _tokenize(raw, path, lineno)
        if not tokens:
            continue
        assertions.append(_StmtParser(tokens, path, lineno, sig).statement())
    if allow_duplicates:
        return assertions
    try:
        return Policy(sig, tuple(assertions))
    except InputError as exc:
        raise InputError(exc.message, path) from None


# ---------------------------------------------------------------------------
# Pretty printer (inverse of the parser up to whitespace)
# ---------------------------------------------------------------------------


def _partset_text(sig: Signature, parts: frozenset[int]) -> str:
    names = [sig.partitions[p] for p in sorted(parts)]
    if len(names) == 1:
        return names[0]
    return "{" + ",".join(names) + "}"


def channel_text(sig: Signature, channel: Channel) -> str:
    bits = []
    for tok in channel:
        if isinstance(tok, GapTok):
            bits.append("<>")
        elif isinstance(tok, SetTok):
            bits.append(_partset_text(sig, tok.parts))
        else:
            bits.append("<>" + _partset_text(sig, tok.parts))
    return " ".join(bits)


def regex_text(sig: Signature, r: Regex, prec: int = 0) -> str:
    if isinstance(r, Empty):
        return "0"
    if isinstance(r, Lit):
        return sig.partitions[r.part]
    if isinstance(r, Star):
        return regex_text(sig, r.inner, 3) + "*"
    if isinstance(r, Concat):
        body = f"{regex_text(sig, r.left, 2)} . {regex_text(sig, r.right, 2)}"
        return f"({body})" if prec > 2 else body
    body = f"{regex_text(sig, r.left, 1)} | {regex_text(sig, r.right, 1)}"
    return f"({body})" if prec > 1 else body


def assertion_text(sig: Signature, assertion: Assertion) -> str:
    head = (f"deny {sig.partitions[assertion.controlled]} -> "
            f"{sig.users[assertion.target]}")
    cond = assertion.condition
    if isinstance(cond, Strict):
        return head + ";"
    if isinstance(cond, PreUpgrade):
        chs = " | ".join(channel_text(sig, ch) for ch in cond.channels)
        return f"{head} pre upgrade [{chs}];"
    if isinstance(cond, PreDowngrade):
        chs = " | ".join(channel_text(sig, ch) for ch in cond.channels)
        return f"{head} pre downgrade [{chs}];"
    if isinstance(cond, PreRegexCond):
        return f"{head} pre regex {regex_text(sig, cond.regex)};"
    if isinstance(cond, Post):
        chs = " | ".join(channel_text(sig, ch) for ch in cond.channels)
        return f"{head} post [{chs}];"
    raise InputError("language-backed conditions have no DSL form")


def pretty_print(policy: Policy) -> str:
    return "\n".join(assertion_text(policy.sig, t) for t in policy.assertions) + "\n"
