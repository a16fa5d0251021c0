"""Brute-force trace enumeration oracle, differential harness, and seeded
random instance generators.

The oracle enumerates traces breadth-first by length (lexicographic within a
length, users compared last), so reported witnesses are canonical: no shorter
violating trace exists, and no lexicographically smaller one of the same
length. Each trace is judged directly against the security definition; the
only shortcuts are evaluating fixed pre-condition decisions incrementally
along the search path and skipping users with no assertions (their purge is
the identity), both of which leave the per-trace decision unchanged.
"""

from __future__ import annotations

import random
import warnings
from dataclasses import dataclass, field

from .errors import UnsupportedPolicyError
from .model import Machine, Signature
from .policy import (Assertion, GAP, GapSetTok, Policy, Post, PreDowngrade,
                     PreLangCond, PreRegexCond, PreUpgrade, Regex, SetTok,
                     Strict, _deriv, _nullable, matcher, Concat, Star, Union,
                     Lit, any_action_star, union_all)
from .verdict import INSECURE, SECURE, UNKNOWN, Verdict


def _pre_tracker(sig: Signature, cond):
    """(start_state, start_accept, advance) for the purge language of a pre
    condition; ``advance(state, action) -> (state, accept)``."""
    if isinstance(cond, PreRegexCond):
        part = sig.part

        def advance(st, a):
            nst = _deriv(st, part[a])
            return nst, _nullable(nst)

        return cond.regex, _nullable(cond.regex), advance
    if isinstance(cond, PreLangCond):
        dfa = cond.dfa
        delta = dfa.delta
        finals = dfa.finals

        def advance(q, a):
            nq = delta[q][a]
            return nq, nq in finals

        return dfa.initial, dfa.initial in finals, advance
    # channel union (upgrade or downgrade): membership in A*.[[channels]]
    nfas = matcher(sig, cond).nfas
    start = tuple(n.start for n in nfas)
    cache: dict = {}

    def advance(st, a):
        key = (st, a)
        hit = cache.get(key)
        if hit is None:
            nst = tuple(n.step(m, a) for n, m in zip(nfas, st))
            hit = (nst, any(m & n.accept for n, m in zip(nfas, nst)))
            cache[key] = hit
        return hit

    return start, any(m & n.accept for n, m in zip(nfas, start)), advance


def _post_tracker(sig: Signature, cond: Post):
    """Tracker for [[channels]].A* membership of a growing suffix; accept is
    sticky (release is irreversible)."""
    nfas = matcher(sig, cond).nfas
    start = tuple(n.start for n in nfas)
    cache: dict = {}

    def advance(st, a):
        key = (st, a)
        hit = cache.get(key)
        if hit is None:
            nst = tuple(n.step(m, a) for n, m in zip(nfas, st))
            hit = (nst, any(m & n.accept for n, m in zip(nfas, nst)))
            cache[key] = hit
        return hit

    return start, any(m & n.accept for n, m in zip(nfas, start)), advance


_KEEP, _STRICT, _PRE, _POST = 0, 1, 2, 3


class _UserOracle:
    """Per-user compiled search state; ``level(L)`` returns the first
    (lexicographic) violating trace of exactly length L, or None."""

    def __init__(self, machine: Machine, policy: Policy, u: int, max_len: int):
        sig = machine.sig
        self.machine = machine
        self.u = u
        self.n_act = len(sig.actions)
        self.step = machine.step
        self.obs = machine.obs[u]
        self.max_len = max_len

        self.rule_kind = [_KEEP] * self.n_act
        self.rule_id = [0] * self.n_act
        pre_conds: list = []
        post_conds: list = []
        self.has_rules = False
        for a in range(self.n_act):
            rule = policy.rule_for(sig.part[a], u)
            if rule is None:
                continue
            self.has_rules = True
            cond = rule.condition
            if isinstance(cond, Strict):
                self.rule_kind[a] = _STRICT
            elif isinstance(cond, Post):
                if cond not in post_conds:
                    post_conds.append(cond)
                self.rule_kind[a] = _POST
                self.rule_id[a] = post_conds.index(cond)
            else:
                if cond not in pre_conds:
                    pre_conds.append(cond)
                self.rule_kind[a] = _PRE
                self.rule_id[a] = pre_conds.index(cond)

        self.pre_negate = [isinstance(c, PreDowngrade) for c in pre_conds]
        trackers = [_pre_tracker(sig, c) for c in pre_conds]
        self.pre_start = [t[0] for t in trackers]
        self.pre_start_acc = [t[1] for t in trackers]
        self.pre_adv = [t[2] for t in trackers]
        post_trackers = [_post_tracker(sig, c) for c in post_conds]
        self.post_start = [t[0] for t in post_trackers]
        self.post_adv = [t[2] for t in post_trackers]
        self.only_forward = not post_conds

        n_pre = len(pre_conds)
        self.pre_stack = [[None] * (max_len + 1) for _ in range(n_pre)]
        self.pre_acc = [[False] * (max_len + 1) for _ in range(n_pre)]
        for ci in range(n_pre):
            self.pre_stack[ci][0] = self.pre_start[ci]
            self.pre_acc[ci][0] = self.pre_start_acc[ci]
        self.act = [0] * max_len
        self.dec = [0] * max_len

    def level(self, length: int) -> tuple[int, ...] | None:
        if not self.has_rules or length == 0:
            return None
        if self.only_forward:
            return self._level_forward(length)
        return self._level_general(length)

    # strict/pre only: the purged-run state advances with the search path
    def _level_forward(self, L: int):
        step, obs = self.step, self.obs
        n_act = self.n_act
        rule_kind, rule_id = self.rule_kind, self.rule_id
        pre_stack, pre_acc = self.pre_stack, self.pre_acc
        pre_adv, pre_negate = self.pre_adv, self.pre_negate
        n_pre = len(pre_adv)
        act = self.act
        rng = range(n_act)
        pre_rng = range(n_pre)

        def rec(d, raw_s, pur_s):
            last = d + 1 == L
            for a in rng:
                k = rule_kind[a]
                if k == _KEEP:
                    np_ = step[pur_s][a]
                elif k == _STRICT:
                    np_ = pur_s
                else:
                    acc = pre_acc[rule_id[a]][d]
                    if pre_negate[rule_id[a]]:
                        acc = not acc
                    np_ = pur_s if acc else step[pur_s][a]
                nraw = step[raw_s][a]
                if last:
                    if obs[nraw] != obs[np_]:
                        act[d] = a
                        return True
                else:
                    for ci in pre_rng:
                        nst, nacc = pre_adv[ci](pre_stack[ci][d], a)
                        pre_stack[ci][d + 1] = nst
                        pre_acc[ci][d + 1] = nacc
                    act[d] = a
                    if rec(d + 1, nraw, np_):
                        return True
            return False

        if rec(0, self.machine.initial, self.machine.initial):
            return tuple(act[:L])
        return None

    # general path: post decisions resolve at the leaf
    def _level_general(self, L: int):
        step, obs = self.step, self.obs
        n_act = self.n_act
        rule_kind, rule_id = self.rule_kind, self.rule_id
        pre_stack, pre_acc = self.pre_stack, self.pre_acc
        pre_adv, pre_negate = self.pre_adv, self.pre_negate
        post_adv, post_start = self.post_adv, self.post_start
        n_pre = len(pre_adv)
        act, dec = self.act, self.dec
        init = self.machine.initial
        rng = range(n_act)
        pre_rng = range(n_pre)

        def leaf_ok(raw_s, opens):
            ps = init
            oi = 0
            n_open = len(opens)
            for d in range(L):
                c = dec[d]
                if c == 1:
                    continue
                if c == 2:
                    while oi < n_open and opens[oi][0] < d:
                        oi += 1
                    if oi < n_open and opens[oi][0] == d:
                        continue  # channel never completed: removed
                ps = step[ps][act[d]]
            return obs[ps] == obs[raw_s]

        def rec(d, raw_s, opens):
            last = d + 1 == L
            for a in rng:
                k = rule_kind[a]
                if k == _KEEP:
                    dec[d] = 0
                elif k == _STRICT:
                    dec[d] = 1
                elif k == _PRE:
                    acc = pre_acc[rule_id[a]][d]
                    if pre_negate[rule_id[a]]:
                        acc = not acc
                    dec[d] = 1 if acc else 0
                else:
                    dec[d] = 2
                new_opens = []
                for entry in opens:
                    nst, done = post_adv[entry[1]](entry[2], a)
                    if not done:
                        new_opens.append((entry[0], entry[1], nst))
                if k == _POST:
                    ci = rule_id[a]
                    new_opens.append((d, ci, post_start[ci]))
                act[d] = a
                nraw = step[raw_s][a]
                if last:
                    if not leaf_ok(nraw, new_opens):
                        return True
                else:
                    for ci in pre_rng:
                        nst, nacc = pre_adv[ci](pre_stack[ci][d], a)
                        pre_stack[ci][d + 1] = nst
                        pre_acc[ci][d + 1] = nacc
                    if rec(d + 1, nraw, new_opens):
                        return True
            return False

        if rec(0, init, []):
            return tuple(act[:L])
        return None


def oracle_check(machine: Machine, policy: Policy, max_len: int,
                 users: tuple[str, ...] | None = None) -> Verdict:
    """Exhaustively checks every trace up to ``max_len`` for every user.

    INSECURE verdicts carry the canonical least witness; SECURE records the
    bound it holds to.
    """
    if max_len < 0:
        raise ValueError("max_len must be nonnegative")
    sig = machine.sig
    user_list = sig.users if users is None else users
    searchers = [(sig.uidx(name), name, None) for name in user_list]
    searchers = [(u, name, _UserOracle(machine, policy, u, max_len))
                 for u, name, _ in searchers]
    for length in range(max_len + 1):
        best: tuple[tuple[int, ...], int, str] | None = None
        for u, name, so in searchers:
            trace = so.level(length)
            if trace is not None and (best is None or (trace, u) < (best[0], best[1])):
                best = (trace, u, name)
        if best is not None:
            witness = (best[2], sig.trace_names(best[0]))
            return Verdict(INSECURE, method="bruteforce", witness=witness,
                           bound=max_len)
    return Verdict(SECURE, method="bruteforce", bound=max_len)


# ---------------------------------------------------------------------------
# Differential harness
# ---------------------------------------------------------------------------


@dataclass
class DifferentialReport:
    verdicts: dict[str, dict[str, Verdict]]
    disagreements: list[str] = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return not self.disagreements


def applicable_unwinding(machine: Machine, policy: Policy, user: str,
                         left_hint: str = "unknown",
                         right_hint: str = "unknown") -> Verdict:
    """Dispatches to the strict/pre/post/mixed rule set matching the
    assertion classes toward the user."""
    from . import unwinding
    classes = policy.classes_toward(machine.sig.uidx(user))
    if classes <= {"strict"}:
        return unwinding.check_strict(machine, policy, user)
    if "post" not in classes:
        return unwinding.check_pre(machine, policy, user, hint=left_hint)
    if "pre" not in classes:
        return unwinding.check_post(machine, policy, user, hint=right_hint)
    return unwinding.check_mixed(machine, policy, user)


def differential(machine: Machine, policy: Policy, max_len: int) -> DifferentialReport:
    """Runs the oracle, the applicable unwinding rules, and (for pre-only
    users) the safety reduction, and flags SECURE/INSECURE conflicts.

    UNKNOWN never counts as a disagreement; a confirmed INSECURE from a
    non-oracle method only conflicts with the bounded oracle when its witness
    is inside the bound.
    """
    from . import automata
    from .errors import FamilySizeError

    report = DifferentialReport({})
    for user in machine.sig.users:
        verdicts: dict[str, Verdict] = {}
        verdicts["bruteforce"] = oracle_check(machine, policy, max_len,
                                              users=(user,))
        try:
            verdicts["unwinding"] = applicable_unwinding(machine, policy, user)
        except FamilySizeError as exc:
            verdicts["unwinding"] = Verdict(UNKNOWN, method="unwinding",
                                            note=str(exc))
        try:
            product = automata.build_product(machine, policy, user)
            verdicts["safety"] = automata.check_safety(product)
        except UnsupportedPolicyError as exc:
            verdicts["safety"] = Verdict(UNKNOWN, method="safety", note=str(exc))
        report.verdicts[user] = verdicts

        oracle_v = verdicts["bruteforce"]
        for method, v in verdicts.items():
            if method == "bruteforce":
                continue
            if v.status == SECURE and oracle_v.status == INSECURE:
                report.disagreements.append(
                    f"{user}: {method} claims SECURE but the oracle found "
                    f"witness {oracle_v.witness}")
            if v.status == INSECURE and oracle_v.status == SECURE \
                    and len(v.witness[1]) <= max_len:
                report.disagreements.append(
                    f"{user}: {method} found witness {v.witness} inside the "
                    f"oracle bound {max_len} but the oracle claims SECURE")
    return report


# ---------------------------------------------------------------------------
# Seeded random instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Limits:
    max_users: int = 3
    max_states: int = 6
    max_actions: int = 4
    max_assertions: int = 4
    classes: tuple[str, ...] = ("strict", "pre-upgrade", "pre-downgrade",
                                "pre-regex", "post")
    max_channels: int = 2
    max_channel_tokens: int = 2
    n_outputs: int = 2


def _random_signature(rng: random.Random, limits: Limits) -> Signature:
    n_users = rng.randint(min(2, limits.max_users), limits.max_users)
    n_actions = rng.randint(1, limits.max_actions)
    users = [f"u{i}" for i in range(n_users)]
    decls = []
    parts_of_user: dict[str, list[str]] = {u: [] for u in users}
    for i in range(n_actions):
        owner = rng.choice(users)
        existing = parts_of_user[owner]
        if existing and rng.random() < 0.5:
            partition = rng.choice(existing)
        else:
            partition = f"P{len([p for ps in parts_of_user.values() for p in ps])}"
            existing.append(partition)
        decls.append((f"a{i}", owner, partition))
    return Signature.build(users, decls)


def _random_machine(rng: random.Random, sig: Signature, limits: Limits) -> Machine:
    n_states = rng.randint(1, limits.max_states)
    states = [f"s{i}" for i in range(n_states)]
    step = {}
    for s in states:
        for a in sig.actions:
            step[(s, a)] = rng.choice(states)
    outputs = [f"o{i}" for i in range(limits.n_outputs)]
    obs = {}
    for u in sig.users:
        for s in states:
            obs[(u, s)] = rng.choice(outputs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return Machine.build(sig, states, states[0], step, obs)


def _random_partset(rng: random.Random, sig: Signature) -> frozenset[int]:
    n = len(sig.partitions)
    size = 1 if n == 1 else rng.choice([1, 1, 1, 2])
    return frozenset(rng.sample(range(n), min(size, n)))


def _random_pre_channel(rng: random.Random, sig: Signature, limits: Limits):
    tokens: list = []
    for i in range(rng.randint(1, limits.max_channel_tokens)):
        tokens.append(SetTok(_random_partset(rng, sig)))
        if rng.random() < 0.4:
            tokens.append(GAP)
    return tuple(tokens)


def _random_post_channel(rng: random.Random, sig: Signature, limits: Limits):
    tokens: list = []
    for i in range(rng.randint(1, limits.max_channel_tokens)):
        parts = _random_partset(rng, sig)
        tokens.append(GapSetTok(parts) if rng.random() < 0.6 else SetTok(parts))
    return tuple(tokens)


def _random_regex(rng: random.Random, sig: Signature, depth: int = 2) -> Regex:
    n = len(sig.partitions)
    if depth == 0 or rng.random() < 0.3:
        return Lit(rng.randrange(n))
    shape = rng.choice(["union", "concat", "star", "anystar"])
    if shape == "union":
        return Union(_random_regex(rng, sig, depth - 1),
                     _random_regex(rng, sig, depth - 1))
    if shape == "concat":
        return Concat(_random_regex(rng, sig, depth - 1),
                      _random_regex(rng, sig, depth - 1))
    if shape == "star":
        return Star(_random_regex(rng, sig, depth - 1))
    return Concat(any_action_star(sig), _random_regex(rng, sig, depth - 1))


def _random_condition(rng: random.Random, sig: Signature, limits: Limits,
                      cls: str):
    if cls == "strict":
        return Strict()
    if cls == "pre-upgrade":
        chs = tuple(_random_pre_channel(rng, sig, limits)
                    for _ in range(rng.randint(1, limits.max_channels)))
        return PreUpgrade(chs)
    if cls == "pre-downgrade":
        chs = tuple(_random_pre_channel(rng, sig, limits)
                    for _ in range(rng.randint(1, limits.max_channels)))
        return PreDowngrade(chs)
    if cls == "pre-regex":
        return PreRegexCond(_random_regex(rng, sig))
    if cls == "post":
        chs = tuple(_random_post_channel(rng, sig, limits)
                    for _ in range(rng.randint(1, limits.max_channels)))
        return Post(chs)
    raise ValueError(f"unknown assertion class {cls!r}")


def random_instance(seed: int, limits: Limits = Limits()) -> tuple[Machine, Policy]:
    """Deterministic (machine, policy) sample within the size limits; the
    policy draws from every assertion class in ``limits.classes``."""
    rng = random.Random(seed)
    sig = _random_signature(rng, limits)
    machine = _random_machine(rng, sig, limits)
    slots = [(p, v) for p in range(len(sig.partitions))
             for v in range(len(sig.users))]
    rng.shuffle(slots)
    n_assert = rng.randint(1, min(limits.max_assertions, len(slots)))
    assertions = []
    for p, v in slots[:n_assert]:
        cls = rng.choice(limits.classes)
        assertions.append(Assertion(p, v, _random_condition(rng, sig, limits, cls)))
    return machine, Policy(sig, tuple(assertions))


def random_left_consistent_pre_instance(seed: int, limits: Limits = Limits()
                                        ) -> tuple[Machine, Policy]:
    """Instance whose policy is left-consistent by construction.

    Toward each target the non-strict conditions only test scattered patterns
    over partitions that carry no assertion toward that target, so purging
    never disturbs a condition's view of the prefix and the left equation
    holds for every split.
    """
    rng = random.Random(seed)
    sig = _random_signature(rng, limits)
    machine = _random_machine(rng, sig, limits)
    n_parts = len(sig.partitions)
    assertions = []
    for v in range(len(sig.users)):
        if rng.random() < 0.25:
            continue
        k = rng.randint(1, max(1, n_parts // 2))
        controlled = rng.sample(range(n_parts), k)
        free = [p for p in range(n_parts) if p not in controlled]
        for p in controlled:
            if not free or rng.random() < 0.4:
                assertions.append(Assertion(p, v, Strict()))
                continue
            pattern = [union_all([Lit(q) for q in sorted(
                rng.sample(free, min(len(free), rng.choice([1, 1, 2]))))])
                for _ in range(rng.choice([1, 1, 2]))]
            items: list[Regex] = [any_action_star(sig)]
            for x in pattern:
                items += [x, any_action_star(sig)]
            regex = items[0]
            for r in items[1:]:
                regex = Concat(regex, r)
            assertions.append(Assertion(p, v, PreRegexCond(regex)))
    if not assertions:
        assertions.append(Assertion(0, 0, Strict()))
    return machine, Policy(sig, tuple(assertions))


def random_reflexive_relation(seed: int, users: tuple[str, ...],
                              density: float = 0.4):
    from .semantics import InterferenceRelation
    rng = random.Random(seed)
    pairs = {(u, u) for u in users}
    for u in users:
        for v in users:
            if u != v and rng.random() < density:
                pairs.add((u, v))
    return InterferenceRelation(frozenset(pairs))


def random_intransitive_post_instance(seed: int, limits: Limits = Limits()):
    """(machine, encoded policy, relation): the policy is the post-conditional
    encoding of a random reflexive interference relation, hence
    right-consistent."""
    from .semantics import encode_intransitive
    rng = random.Random(seed)
    sig = _random_signature(rng, limits)
    machine = _random_machine(rng, sig, limits)
    rel = random_reflexive_relation(rng.randrange(2 ** 30), sig.users)
    policy = encode_intransitive(rel, sig)
    return machine, policy, rel
