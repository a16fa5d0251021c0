"""Compilation of conditions to DFAs, language inclusion, and the safety
reduction by product construction.

Condition languages are partition-granular, so regexes are compiled over the
partition alphabet (Thompson construction, then subset construction with a
sink state for completeness) and expanded to the action alphabet at the end.
DFAs are complete and deterministic but not minimized by default; assertion
automata stay small and an explicit minimization pass exists where it pays
off.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from .errors import InputError, UnsupportedPolicyError
from .model import Machine, Signature
from .policy import (Assertion, Channel, Policy, Post, PreDowngrade, PreLangCond,
                     PreRegexCond, PreUpgrade, Regex, Strict, any_action_star,
                     channel_regex, concat_all, general_pre_form, union_all)
from .verdict import INSECURE, SECURE, Verdict


@dataclass(frozen=True)
class Dfa:
    """Complete deterministic automaton over the signature's action alphabet."""

    alphabet: tuple[str, ...]
    n_states: int
    initial: int
    delta: tuple[tuple[int, ...], ...]
    finals: frozenset[int]

    def __post_init__(self):
        if not 0 <= self.initial < self.n_states:
            raise InputError("DFA initial state out of range")
        if len(self.delta) != self.n_states:
            raise InputError("DFA transition table must cover every state")
        for row in self.delta:
            if len(row) != len(self.alphabet):
                raise InputError("DFA transition table must be total")

    def accepts_idx(self, word: Sequence[int]) -> bool:
        q = self.initial
        for a in word:
            q = self.delta[q][a]
        return q in self.finals

    def accepts(self, word: Sequence[str]) -> bool:
        index = {a: i for i, a in enumerate(self.alphabet)}
        return self.accepts_idx([index[a] for a in word])


# ---------------------------------------------------------------------------
# Regex -> NFA -> DFA
# ---------------------------------------------------------------------------


def _thompson(r: Regex, eps: list[list[int]], sym: list[list[tuple[int, int]]]) -> tuple[int, int]:
    """Returns (start, end) node indices of the fragment for ``r``.

    ``eps[n]`` collects epsilon successors, ``sym[n]`` pairs of
    (partition, successor).
    """
    from .policy import Concat, Empty, Lit, Star, Union

    def fresh() -> int:
        eps.append([])
        sym.append([])
        return len(eps) - 1

    if isinstance(r, Empty):
        return fresh(), fresh()
    if isinstance(r, Lit):
        s, e = fresh(), fresh()
        sym[s].append((r.part, e))
        return s, e
    if isinstance(r, Union):
        ls, le = _thompson(r.left, eps, sym)
        rs, re_ = _thompson(r.right, eps, sym)
        s, e = fresh(), fresh()
        eps[s] += [ls, rs]
        eps[le].append(e)
        eps[re_].append(e)
        return s, e
    if isinstance(r, Concat):
        ls, le = _thompson(r.left, eps, sym)
        rs, re_ = _thompson(r.right, eps, sym)
        eps[le].append(rs)
        return ls, re_
    if isinstance(r, Star):
        is_, ie = _thompson(r.inner, eps, sym)
        s, e = fresh(), fresh()
        eps[s] += [is_, e]
        eps[ie] += [is_, e]
        return s, e
    raise TypeError(f"unknown regex node {r!r}")


def regex_to_dfa(phi: Regex, sig: Signature) -> Dfa:
    """DFA accepting the action-level language of ``phi``; deterministic
    state numbering by subset-construction BFS order."""
    eps: list[list[int]] = []
    sym: list[list[tuple[int, int]]] = []
    start, end = _thompson(phi, eps, sym)

    def eclose(nodes: frozenset[int]) -> frozenset[int]:
        stack = list(nodes)
        seen = set(nodes)
        while stack:
            n = stack.pop()
            for m in eps[n]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return frozenset(seen)

    n_parts = len(sig.partitions)
    init = eclose(frozenset({start}))
    index: dict[frozenset[int], int] = {init: 0}
    order = [init]
    rows_by_part: list[list[int]] = []
    frontier = [init]
    while frontier:
        nxt = []
        for subset in frontier:
            row = []
            for p in range(n_parts):
                targets = frozenset(t for n in subset for (q, t) in sym[n] if q == p)
                closed = eclose(targets) if targets else frozenset()
                if closed not in index:
                    index[closed] = len(order)
                    order.append(closed)
                    nxt.append(closed)
                row.append(index[closed])
            rows_by_part.append(row)
        frontier = nxt
    # late rows for subsets discovered in the last wave
    while len(rows_by_part) < len(order):
        subset = order[len(rows_by_part)]
        row = []
        for p in range(n_parts):
            targets = frozenset(t for n in subset for (q, t) in sym[n] if q == p)
            closed = eclose(targets) if targets else frozenset()
            if closed not in index:
                index[closed] = len(order)
                order.append(closed)
            row.append(index[closed])
        rows_by_part.append(row)

    finals = frozenset(i for i, subset in enumerate(order) if end in subset)
    part = sig.part
    delta = tuple(tuple(row[part[a]] for a in range(len(sig.actions)))
                  for row in rows_by_part)
    return Dfa(sig.actions, len(order), 0, delta, finals)


def channel_to_dfa(channels: Sequence[Channel], kind: str, sig: Signature) -> Dfa:
    """DFA for a channel union: pre channels match as a suffix (A*.[[chs]]),
    post channels as a prefix ([[chs]].A*, built from the leftmost gap form)."""
    if kind not in ("pre", "post"):
        raise InputError(f"bad channel kind {kind!r}")
    body = union_all([channel_regex(sig, ch, kind) for ch in channels])
    if kind == "pre":
        phi = concat_all([any_action_star(sig), body])
    else:
        phi = concat_all([body, any_action_star(sig)])
    return regex_to_dfa(phi, sig)


def complement(dfa: Dfa) -> Dfa:
    return Dfa(dfa.alphabet, dfa.n_states, dfa.initial, dfa.delta,
               frozenset(range(dfa.n_states)) - dfa.finals)


def minimize(dfa: Dfa) -> Dfa:
    """Moore partition refinement after dropping unreachable states."""
    n_sym = len(dfa.alphabet)
    reach = [dfa.initial]
    seen = {dfa.initial}
    for q in reach:
        for a in range(n_sym):
            t = dfa.delta[q][a]
            if t not in seen:
                seen.add(t)
                reach.append(t)

    cls = {q: (1 if q in dfa.finals else 0) for q in reach}
    while True:
        sigs = {}
        new_cls = {}
        for q in reach:
            key = (cls[q],) + tuple(cls[dfa.delta[q][a]] for a in range(n_sym))
            if key not in sigs:
                sigs[key] = len(sigs)
            new_cls[q] = sigs[key]
        if new_cls == cls:
            break
        cls = new_cls

    # renumber classes by first occurrence along the reachability order
    remap: dict[int, int] = {}
    for q in reach:
        remap.setdefault(cls[q], len(remap))
    cls = {q: remap[c] for q, c in cls.items()}
    n = len(remap)
    delta = [[0] * n_sym for _ in range(n)]
    for q in reach:
        for a in range(n_sym):
            delta[cls[q]][a] = cls[dfa.delta[q][a]]
    finals = frozenset(cls[q] for q in reach if q in dfa.finals)
    return Dfa(dfa.alphabet, n, cls[dfa.initial], tuple(tuple(r) for r in delta), finals)


def dfa_included(d1: Dfa, d2: Dfa, use_minimize: bool = False
                 ) -> tuple[bool, tuple[str, ...] | None]:
    """Language inclusion L(d1) subset-of L(d2); on failure also returns a
    shortest separating word (ties broken by action order)."""
    if d1.alphabet != d2.alphabet:
        raise InputError("language inclusion requires a common alphabet")
    if use_minimize:
        d1, d2 = minimize(d1), minimize(d2)
    n_sym = len(d1.alphabet)
    start = (d1.initial, d2.initial)
    parent: dict[tuple[int, int], tuple[tuple[int, int], int] | None] = {start: None}
    queue = [start]
    qi = 0
    while qi < len(queue):
        pair = queue[qi]
        qi += 1
        q1, q2 = pair
        if q1 in d1.finals and q2 not in d2.finals:
            word: list[str] = []
            node = pair
            while parent[node] is not None:
                node, a = parent[node]
                word.append(d1.alphabet[a])
            return False, tuple(reversed(word))
        for a in range(n_sym):
            nxt = (d1.delta[q1][a], d2.delta[q2][a])
            if nxt not in parent:
                parent[nxt] = (pair, a)
                queue.append(nxt)
    return True, None


def dfa_language_equal(d1: Dfa, d2: Dfa) -> bool:
    return dfa_included(d1, d2)[0] and dfa_included(d2, d1)[0]


@lru_cache(maxsize=None)
def condition_dfa(sig: Signature, condition) -> Dfa:
    """DFA of the set of traces on which the condition purges (pre forms) or
    of the release language (post form)."""
    if isinstance(condition, Strict):
        return regex_to_dfa(any_action_star(sig), sig)
    if isinstance(condition, PreUpgrade):
        return channel_to_dfa(condition.channels, "pre", sig)
    if isinstance(condition, PreDowngrade):
        return complement(channel_to_dfa(condition.channels, "pre", sig))
    if isinstance(condition, PreRegexCond):
        return regex_to_dfa(condition.regex, sig)
    if isinstance(condition, PreLangCond):
        return condition.dfa
    if isinstance(condition, Post):
        return channel_to_dfa(condition.channels, "post", sig)
    raise TypeError(f"unknown condition {condition!r}")


def assertion_automaton(sig: Signature, assertion: Assertion) -> Dfa:
    """Automaton whose final states mark exactly the prefixes on which the
    assertion purges its partition; strict assertions map to the full
    language."""
    return condition_dfa(sig, general_pre_form(sig, assertion).condition)


# ---------------------------------------------------------------------------
# Safety reduction: paired purged/full runs plus assertion automata
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProductMachine:
    """Synchronized product of a purged run, the full run, and the assertion
    automata toward one user. Observation pairs disagreeing on some reachable
    composite witness a policy violation."""

    base: Machine
    policy: Policy
    user: str
    controlled: tuple[int, ...]          # partition per automaton
    automata: tuple[Dfa, ...]
    composites: tuple[tuple[int, int, tuple[int, ...]], ...]
    step: tuple[tuple[int, ...], ...]
    obs_pairs: tuple[tuple[str, str], ...]
    parents: tuple[tuple[int, int], ...]  # (composite, action) BFS tree; (-1,-1) at root


def build_product(machine: Machine, policy: Policy, user: str) -> ProductMachine:
    sig = machine.sig
    u = sig.uidx(user)
    toward = policy.toward(u)
    if any(t.cls() == "post" for t in toward):
        raise UnsupportedPolicyError(
            f"safety reduction toward {user!r} needs a strict or pre-conditional "
            "policy, found a post-conditional assertion")
    controlled = tuple(t.controlled for t in toward)
    dfas = tuple(assertion_automaton(sig, t) for t in toward)

    n_act = len(sig.actions)
    part = sig.part
    obs_u = machine.obs[u]
    base_step = machine.step

    init = (machine.initial, machine.initial, tuple(d.initial for d in dfas))
    index = {init: 0}
    composites = [init]
    parents: list[tuple[int, int]] = [(-1, -1)]
    rows: list[list[int]] = []
    qi = 0
    while qi < len(composites):
        s1, s2, qs = composites[qi]
        row = []
        for a in range(n_act):
            freeze = False
            for k, p in enumerate(controlled):
                if p == part[a] and qs[k] in dfas[k].finals:
                    freeze = True
                    break
            nxt = (s1 if freeze else base_step[s1][a],
                   base_step[s2][a],
                   tuple(d.delta[q][a] for d, q in zip(dfas, qs)))
            if nxt not in index:
                index[nxt] = len(composites)
                composites.append(nxt)
                parents.append((qi, a))
            row.append(index[nxt])
        rows.append(row)
        qi += 1

    obs_pairs = tuple((obs_u[c[0]], obs_u[c[1]]) for c in composites)
    return ProductMachine(machine, policy, user, controlled, dfas, tuple(composites),
                          tuple(tuple(r) for r in rows), obs_pairs, tuple(parents))


def product_trace(product: ProductMachine, composite: int) -> tuple[str, ...]:
    """Shortest action sequence reaching the composite (from the BFS tree)."""
    actions = product.base.sig.actions
    word: list[str] = []
    node = composite
    while product.parents[node] != (-1, -1):
        node, a = product.parents[node]
        word.append(actions[a])
    return tuple(reversed(word))


def check_safety(product: ProductMachine) -> Verdict:
    """SECURE iff every reachable composite observes equal pairs; otherwise a
    shortest trace to a mismatching composite is returned. Composites were
    discovered breadth-first, so the first mismatch gives a canonical witness.
    """
    for i, (o1, o2) in enumerate(product.obs_pairs):
        if o1 != o2:
            trace = product_trace(product, i)
            from .semantics import is_secure_def  # local import: layering
            if is_secure_def(product.base, product.policy, trace, product.user):
                raise RuntimeError(
                    "product construction disagrees with the purge semantics; "
                    "this is a bug")
            return Verdict(INSECURE, method="safety", witness=(product.user, trace))
    return Verdict(SECURE, method="safety")


# ---------------------------------------------------------------------------
# Textual graph export (inspection only; there is no importer)
# ---------------------------------------------------------------------------


def export_dfa(dfa: Dfa) -> str:
    lines = [f"dfa states {dfa.n_states} initial {dfa.initial}"]
    lines.append("finals " + " ".join(str(q) for q in sorted(dfa.finals)))
    for q, row in enumerate(dfa.delta):
        for a, t in enumerate(row):
            lines.append(f"{q} {dfa.alphabet[a]} {t}")
    return "\n".join(lines) + "\n"


def export_product(product: ProductMachine) -> str:
    base = product.base
    lines = [f"product user {product.user} composites {len(product.composites)}"]
    for i, (s1, s2, qs) in enumerate(product.composites):
        o1, o2 = product.obs_pairs[i]
        flag = " mismatch" if o1 != o2 else ""
        qtxt = ",".join(str(q) for q in qs)
        lines.append(f"composite {i} {base.states[s1]} {base.states[s2]} [{qtxt}]{flag}")
    for i, row in enumerate(product.step):
        for a, t in enumerate(row):
            lines.append(f"{i} {base.sig.actions[a]} {t}")
    return "\n".join(lines) + "\n"
