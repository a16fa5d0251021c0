"""Unwinding-relation synthesis and rule checking.

For each user the canonical (greatest) relations are computed by partition
refinement and the local-respect rules are then checked on reachable states:

* strict policies: one relation, rules OC/SC/LR — an exact decision;
* pre-conditional policies: the same relation, with the rule trigger supplied
  by assertion automata run alongside the machine (sound; complete for
  left-consistent policies);
* post-conditional policies: a family of relations indexed by sets of
  channel suffixes, refined simultaneously under the suffix-consumption
  function (sound; complete for right-consistent policies).

A failed rule is only reported INSECURE after the candidate counterexample
traces it induces have been confirmed against the purge semantics; when the
confirmation fails (possible when the consistency hint is wrong) the verdict
honestly degrades to UNKNOWN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import FamilySizeError, UnsupportedPolicyError
from .model import Machine, Signature
from .policy import (Assertion, GapSetTok, Policy, Post, SetTok, Strict,
                     channel_text)
from .semantics import is_secure_def
from .verdict import INSECURE, SECURE, UNKNOWN, Verdict


@dataclass(frozen=True)
class EquivRelation:
    """Equivalence over machine states as a class assignment (class ids are
    numbered by first occurrence, so equal relations compare equal)."""

    class_of: tuple[int, ...]

    def related(self, s: int, t: int) -> bool:
        return self.class_of[s] == self.class_of[t]

    @property
    def n_classes(self) -> int:
        return len(set(self.class_of))

    def classes(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for s, c in enumerate(self.class_of):
            out.setdefault(c, []).append(s)
        return [out[c] for c in sorted(out)]


def _canonical_classes(keys: Sequence) -> tuple[int, ...]:
    index: dict = {}
    out = []
    for key in keys:
        if key not in index:
            index[key] = len(index)
        out.append(index[key])
    return tuple(out)


def coarsest_obs_bisim(machine: Machine, user: str) -> EquivRelation:
    """Greatest equivalence with output consistency and step consistency for
    ``user``: states are related iff no action sequence makes their
    observations diverge."""
    u = machine.sig.uidx(user)
    step = machine.step
    n_act = len(machine.sig.actions)
    cls = _canonical_classes(machine.obs[u])
    while True:
        new = _canonical_classes(
            [(cls[s],) + tuple(cls[step[s][a]] for a in range(n_act))
             for s in range(len(machine.states))])
        if new == cls:
            return EquivRelation(cls)
        cls = new


def _shortest_traces(machine: Machine) -> list[tuple[int, ...]]:
    """Shortest action sequence (interned) reaching each state; exists for all
    states because loading prunes to the reachable part."""
    n_act = len(machine.sig.actions)
    traces: dict[int, tuple[int, ...]] = {machine.initial: ()}
    frontier = [machine.initial]
    while frontier:
        nxt = []
        for s in frontier:
            for a in range(n_act):
                t = machine.step[s][a]
                if t not in traces:
                    traces[t] = traces[s] + (a,)
                    nxt.append(t)
        frontier = nxt
    return [traces[s] for s in range(len(machine.states))]


def _distinguishing_word(machine: Machine, user: str, s: int, t: int) -> tuple[int, ...]:
    """Shortest word making the observations of s and t diverge; exists
    whenever the coarsest bisimulation separates them."""
    u = machine.sig.uidx(user)
    obs = machine.obs[u]
    step = machine.step
    n_act = len(machine.sig.actions)
    start = (s, t)
    parent: dict[tuple[int, int], tuple[tuple[int, int], int] | None] = {start: None}
    queue = [start]
    qi = 0
    while qi < len(queue):
        pair = queue[qi]
        qi += 1
        x, y = pair
        if obs[x] != obs[y]:
            word: list[int] = []
            node = pair
            while parent[node] is not None:
                node, a = parent[node]
                word.append(a)
            return tuple(reversed(word))
        for a in range(n_act):
            nxt = (step[x][a], step[y][a])
            if nxt not in parent:
                parent[nxt] = (pair, a)
                queue.append(nxt)
    raise RuntimeError("states are observation-bisimilar; no distinguishing word")


def _confirm(machine: Machine, policy: Policy, user: str,
             prefix: tuple[int, ...], action: int, suffix: tuple[int, ...],
             method: str, hint_note: str | None) -> Verdict:
    """A failed local-respect rule yields two candidate traces; at least one
    of them violates security whenever the relevant consistency hypothesis
    really holds. Report whichever confirms, else degrade to UNKNOWN."""
    sig = machine.sig
    candidates = [prefix + (action,) + suffix, prefix + suffix]
    candidates.sort(key=lambda w: (len(w), w))
    for word in candidates:
        names = sig.trace_names(word)
        if not is_secure_def(machine, policy, names, user):
            return Verdict(INSECURE, method=method, witness=(user, names))
    return Verdict(UNKNOWN, method=method, note=hint_note)


def check_strict(machine: Machine, policy: Policy, user: str) -> Verdict:
    """Exact decision for strict policies: the coarsest relation satisfies
    OC and SC by construction, so security holds iff LR does."""
    sig = machine.sig
    u = sig.uidx(user)
    toward = policy.toward(u)
    if any(t.cls() != "strict" for t in toward):
        raise UnsupportedPolicyError(
            f"strict unwinding toward {user!r} requires a strict-only policy")
    rel = coarsest_obs_bisim(machine, user)
    step = machine.step
    traces = None
    for s in range(len(machine.states)):
        for t in toward:
            for a in sig.actions_of_partition[t.controlled]:
                if not rel.related(s, step[s][a]):
                    if traces is None:
                        traces = _shortest_traces(machine)
                    beta = _distinguishing_word(machine, user, s, step[s][a])
                    verdict = _confirm(machine, policy, user, traces[s], a, beta,
                                       "unwinding-strict", None)
                    if verdict.status == UNKNOWN:
                        raise RuntimeError(
                            "failed LR did not confirm on a strict policy; "
                            "this is a bug")
                    return verdict
    return Verdict(SECURE, method="unwinding-strict")


def check_pre(machine: Machine, policy: Policy, user: str,
              hint: str = "unknown") -> Verdict:
    """Unwinding for strict and pre-conditional assertions.

    A synchronized search over (machine state, assertion-automata states)
    marks exactly the states reached by a trace inside some assertion's
    language; the rule then demands the controlled actions stay inside the
    state's equivalence class. All rules passing is sound for security; a
    failure is complete only under left-consistency, so without that hint an
    unconfirmed failure reports UNKNOWN.
    """
    if hint not in ("unknown", "left-consistent"):
        raise ValueError(f"bad consistency hint {hint!r}")
    from .automata import assertion_automaton

    sig = machine.sig
    u = sig.uidx(user)
    toward = policy.toward(u)
    if any(t.cls() == "post" for t in toward):
        raise UnsupportedPolicyError(
            f"pre unwinding toward {user!r} cannot handle post-conditional "
            "assertions")
    rel = coarsest_obs_bisim(machine, user)
    dfas = [assertion_automaton(sig, t) for t in toward]
    controlled = [t.controlled for t in toward]
    step = machine.step
    n_act = len(sig.actions)

    start = (machine.initial, tuple(d.initial for d in dfas))
    parent: dict[tuple, tuple | None] = {start: None}
    order = [start]
    qi = 0
    while qi < len(order):
        node = order[qi]
        qi += 1
        s, qs = node
        for k, dfa in enumerate(dfas):
            if qs[k] in dfa.finals:
                for a in sig.actions_of_partition[controlled[k]]:
                    if not rel.related(s, step[s][a]):
                        prefix: list[int] = []
                        walk = node
                        while parent[walk] is not None:
                            walk, act = parent[walk]
                            prefix.append(act)
                        alpha = tuple(reversed(prefix))
                        beta = _distinguishing_word(machine, user, s, step[s][a])
                        note = None if hint == "left-consistent" else (
                            "a pre-conditional rule failed; the policy is not "
                            "known to be left-consistent, so run the brute-force "
                            "oracle or the safety reduction to decide")
                        verdict = _confirm(machine, policy, user, alpha, a, beta,
                                           "unwinding-pre", note)
                        if verdict.status == UNKNOWN and hint == "left-consistent":
                            verdict = Verdict(
                                UNKNOWN, method="unwinding-pre",
                                note="rule failure did not confirm as a violation; "
                                     "the left-consistency hint looks wrong")
                        return verdict
        for a in range(n_act):
            nxt = (step[s][a], tuple(d.delta[q][a] for d, q in zip(dfas, qs)))
            if nxt not in parent:
                parent[nxt] = (node, a)
                order.append(nxt)
    return Verdict(SECURE, method="unwinding-pre")


# ---------------------------------------------------------------------------
# Post-conditional unwinding: suffix sets, cut/sc, and the relation family
# ---------------------------------------------------------------------------

SuffixTerm = tuple  # tuple of channel tokens; () is the completed channel
SuffixSet = frozenset


def suffix_closure(policy: Policy, user: str) -> SuffixSet:
    """Token-level suffixes (with the empty suffix) of every post channel in
    the assertions toward ``user``."""
    sig = policy.sig
    u = sig.uidx(user)
    out: set[SuffixTerm] = set()
    for t in policy.toward(u):
        if isinstance(t.condition, Post):
            for ch in t.condition.channels:
                for i in range(len(ch) + 1):
                    out.add(tuple(ch[i:]))
    return frozenset(out)


def cut(sig: Signature, lam: SuffixTerm, action: int) -> frozenset:
    """Single-step consumption of a channel suffix by one action."""
    if not lam:
        return frozenset({()})
    head = lam[0]
    hit = sig.part[action] in head.parts
    if isinstance(head, SetTok):
        return frozenset({lam[1:]}) if hit else frozenset()
    if isinstance(head, GapSetTok):
        return frozenset({lam[1:]}) if hit else frozenset({lam})
    raise ValueError(f"bad suffix token {head!r}")


def sc(sig: Signature, delta: SuffixSet, action: int) -> SuffixSet:
    out: set = set()
    for lam in delta:
        out |= cut(sig, lam, action)
    return frozenset(out)


@dataclass(frozen=True)
class PostFamily:
    """Canonical relation family for the post rules, indexed by suffix sets.

    Only suffix sets reachable from the rule seeds under ``sc`` are
    materialized; any set containing the empty suffix maps to the full
    relation.
    """

    machine: Machine
    user: str
    delta_terms: SuffixSet
    rel_of: dict  # SuffixSet -> EquivRelation

    def relation(self, delta: Iterable[SuffixTerm]) -> EquivRelation:
        key = frozenset(delta)
        try:
            return self.rel_of[key]
        except KeyError:
            raise KeyError(
                f"suffix set {key!r} was not materialized; pass it via "
                "extra_deltas when computing the family") from None


def _family_seeds(policy: Policy, u: int) -> list[SuffixSet]:
    seeds = [frozenset()]
    for t in policy.toward(u):
        if isinstance(t.condition, Post):
            seeds.append(frozenset(t.condition.channels))
    return seeds


def compute_post_family(machine: Machine, policy: Policy, user: str,
                        cap: int = 12,
                        extra_deltas: Sequence[Iterable[SuffixTerm]] = ()
                        ) -> PostFamily:
    """Greatest family satisfying the observation and stepwise rules.

    Starts from observation equality (full relation once a channel has
    completed) and refines every materialized index simultaneously: a pair
    stays related under delta only if every action leads to a pair related
    under the consumed index sc(delta, action).
    """
    sig = machine.sig
    u = sig.uidx(user)
    toward = policy.toward(u)
    if any(t.cls() == "pre" for t in toward):
        raise UnsupportedPolicyError(
            f"post unwinding toward {user!r} cannot handle pre-conditional "
            "assertions")
    delta_terms = suffix_closure(policy, user)
    if len(delta_terms) > cap:
        raise FamilySizeError(
            f"suffix closure toward {user!r} has {len(delta_terms)} terms "
            f"(cap {cap}); the family would need up to 2**{len(delta_terms)} "
            "relations")

    seeds = _family_seeds(policy, u)
    for extra in extra_deltas:
        key = frozenset(extra)
        if not key <= delta_terms:
            raise ValueError("extra delta contains terms outside the suffix closure")
        seeds.append(key)

    n_act = len(sig.actions)
    todo = list(dict.fromkeys(seeds))
    materialized: set[SuffixSet] = set(todo)
    sc_table: dict[tuple[SuffixSet, int], SuffixSet] = {}
    while todo:
        delta = todo.pop()
        for a in range(n_act):
            nxt = sc(sig, delta, a)
            sc_table[(delta, a)] = nxt
            if nxt not in materialized:
                materialized.add(nxt)
                todo.append(nxt)

    n_states = len(machine.states)
    step = machine.step
    full = EquivRelation((0,) * n_states)
    obs_classes = _canonical_classes(machine.obs[u])

    rel: dict[SuffixSet, tuple[int, ...]] = {}
    for delta in materialized:
        rel[delta] = (0,) * n_states if () in delta else obs_classes

    changed = True
    while changed:
        changed = False
        for delta in materialized:
            if () in delta:
                continue
            cls = rel[delta]
            keys = []
            for s in range(n_states):
                keys.append((cls[s],)
                            + tuple(rel[sc_table[(delta, a)]][step[s][a]]
                                    for a in range(n_act)))
            new = _canonical_classes(keys)
            if new != cls:
                rel[delta] = new
                changed = True

    rel_of = {delta: (full if () in delta else EquivRelation(classes))
              for delta, classes in rel.items()}
    return PostFamily(machine, user, delta_terms, rel_of)


def _post_distinguishing_word(machine: Machine, user: str, s: int, t: int,
                              delta: SuffixSet) -> tuple[int, ...]:
    """Shortest word outside every channel language of ``delta`` on which the
    observations of s and t diverge."""
    sig = machine.sig
    u = sig.uidx(user)
    obs = machine.obs[u]
    step = machine.step
    n_act = len(sig.actions)
    start = (s, t, delta)
    parent: dict[tuple, tuple | None] = {start: None}
    queue = [start]
    qi = 0
    while qi < len(queue):
        node = queue[qi]
        qi += 1
        x, y, d = node
        if obs[x] != obs[y]:
            word: list[int] = []
            walk = node
            while parent[walk] is not None:
                walk, a = parent[walk]
                word.append(a)
            return tuple(reversed(word))
        for a in range(n_act):
            nd = sc(sig, d, a)
            if () in nd:
                continue  # the word would fall inside a channel language
            nxt = (step[x][a], step[y][a], nd)
            if nxt not in parent:
                parent[nxt] = (node, a)
                queue.append(nxt)
    raise RuntimeError("no admissible distinguishing word; states are related")


def check_post(machine: Machine, policy: Policy, user: str,
               hint: str = "unknown", cap: int = 12) -> Verdict:
    """Unwinding for strict and post-conditional assertions on the canonical
    family: strict actions must stay inside the empty-index relation, channel
    actions inside the relation indexed by their channel set. Sound always;
    complete under right-consistency."""
    if hint not in ("unknown", "right-consistent"):
        raise ValueError(f"bad consistency hint {hint!r}")
    sig = machine.sig
    u = sig.uidx(user)
    toward = policy.toward(u)
    family = compute_post_family(machine, policy, user, cap=cap)
    step = machine.step
    traces = None
    for s in range(len(machine.states)):
        for t in toward:
            if isinstance(t.condition, Strict):
                delta: SuffixSet = frozenset()
            else:
                delta = frozenset(t.condition.channels)
            relation = family.rel_of[delta]
            for a in sig.actions_of_partition[t.controlled]:
                if not relation.related(s, step[s][a]):
                    if traces is None:
                        traces = _shortest_traces(machine)
                    beta = _post_distinguishing_word(machine, user, s,
                                                     step[s][a], delta)
                    note = None if hint == "right-consistent" else (
                        "a post-conditional rule failed; the policy is not "
                        "known to be right-consistent, so run the brute-force "
                        "oracle to decide")
                    verdict = _confirm(machine, policy, user, traces[s], a,
                                       beta, "unwinding-post", note)
                    if verdict.status == UNKNOWN and hint == "right-consistent":
                        verdict = Verdict(
                            UNKNOWN, method="unwinding-post",
                            note="rule failure did not confirm as a violation; "
                                 "the right-consistency hint looks wrong")
                    return verdict
    return Verdict(SECURE, method="unwinding-post")


def check_mixed(machine: Machine, policy: Policy, user: str,
                cap: int = 12) -> Verdict:
    """Per-class split for policies mixing pre and post assertions toward one
    user: secure when both sub-policies check out. No completeness theorem
    covers the mixed case, so any failed sub-check yields UNKNOWN (with the
    oracle as the suggested arbiter), never INSECURE."""
    sig = machine.sig
    u = sig.uidx(user)
    toward = policy.toward(u)
    pre_part = tuple(t for t in toward if t.cls() in ("strict", "pre"))
    post_part = tuple(t for t in toward if t.cls() == "post")
    if not post_part:
        return check_pre(machine, policy, user)
    if not pre_part:
        return check_post(machine, policy, user, cap=cap)
    pre_verdict = check_pre(machine, Policy(sig, pre_part), user)
    post_verdict = check_post(machine, Policy(sig, post_part), user, cap=cap)
    if pre_verdict.status == SECURE and post_verdict.status == SECURE:
        return Verdict(SECURE, method="unwinding-mixed")
    return Verdict(
        UNKNOWN, method="unwinding-mixed",
        note=f"sub-policy checks returned {pre_verdict.status} (pre) and "
             f"{post_verdict.status} (post); the split argument only supports "
             "security claims, run the brute-force oracle to decide")


# ---------------------------------------------------------------------------
# Relation dumps
# ---------------------------------------------------------------------------


def _delta_text(sig: Signature, delta: SuffixSet) -> str:
    terms = sorted(delta, key=lambda lam: (len(lam), channel_text(sig, lam)))
    inner = ", ".join("eps" if not lam else channel_text(sig, lam) for lam in terms)
    return "{" + inner + "}"


def dump_relation(machine: Machine, user: str, rel: EquivRelation,
                  delta_label: str = "{}") -> str:
    lines = []
    for members in rel.classes():
        names = ",".join(machine.states[s] for s in members)
        lines.append(f"{user} {delta_label} {{{names}}}")
    return "\n".join(lines) + "\n"


def dump_post_family(family: PostFamily) -> str:
    sig = family.machine.sig
    out = []
    for delta in sorted(family.rel_of,
                        key=lambda d: (len(d), _delta_text(sig, d))):
        out.append(dump_relation(family.machine, family.user,
                                 family.rel_of[delta], _delta_text(sig, delta)))
    return "".join(out)
