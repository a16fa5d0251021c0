"""Purge semantics, the intransitive purge, policy encodings, and the bounded
consistency checks.

``purge`` deletes from a trace every action whose controlling assertion (for
the given target user) evaluates true on that position's raw prefix and raw
suffix; per-position decisions are independent and never look at each other's
outcomes. A machine is secure when no user can tell any trace from its purge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InputError
from .model import Machine, Signature, run_idx
from .policy import (Assertion, GapSetTok, Policy, Post, PreDowngrade,
                     PreLangCond, PreRegexCond, PreUpgrade, Strict, matcher)


@dataclass(frozen=True)
class PurgeResult:
    kept: tuple[str, ...]
    removed_positions: frozenset[int]


@dataclass(frozen=True)
class InterferenceRelation:
    """Binary relation over user names; pairs are stored explicitly (loaders
    add the implied reflexive pairs, derived relations may lack them for users
    without actions)."""

    pairs: frozenset[tuple[str, str]]

    def interferes(self, u: str, v: str) -> bool:
        return (u, v) in self.pairs

    def is_reflexive(self, users: Iterable[str]) -> bool:
        return all((u, u) in self.pairs for u in users)


# ---------------------------------------------------------------------------
# purge and the security definition
# ---------------------------------------------------------------------------


def removed_flags(policy: Policy, alpha: Sequence[int], u: int) -> list[bool]:
    """Per-position purge decisions for the interned trace ``alpha``."""
    sig = policy.sig
    part = sig.part
    removed = [False] * len(alpha)
    pre_rows: dict[object, list[bool]] = {}
    post_rows: dict[object, list[bool]] = {}
    for i, a in enumerate(alpha):
        rule = policy.rule_for(part[a], u)
        if rule is None:
            continue
        cond = rule.condition
        if isinstance(cond, Strict):
            removed[i] = True
        elif isinstance(cond, Post):
            row = post_rows.get(cond)
            if row is None:
                row = matcher(sig, cond).post_members_by_suffix(alpha)
                post_rows[cond] = row
            removed[i] = not row[i + 1]
        else:
            row = pre_rows.get(cond)
            if row is None:
                row = matcher(sig, cond).pre_members_by_prefix(alpha)
                pre_rows[cond] = row
            member = row[i]
            removed[i] = (not member) if isinstance(cond, PreDowngrade) else member
    return removed


def purge_idx(policy: Policy, alpha: Sequence[int], u: int) -> tuple[int, ...]:
    flags = removed_flags(policy, alpha, u)
    return tuple(a for a, gone in zip(alpha, flags) if not gone)


def purge(policy: Policy, alpha: Sequence[str], user: str) -> PurgeResult:
    sig = policy.sig
    u = sig.uidx(user)
    interned = sig.intern_trace(alpha)
    flags = removed_flags(policy, interned, u)
    kept = tuple(a for a, gone in zip(alpha, flags) if not gone)
    return PurgeResult(kept, frozenset(i for i, gone in enumerate(flags) if gone))


def is_secure_def(machine: Machine, policy: Policy, alpha: Sequence[str],
                  user: str) -> bool:
    """The security definition itself, on a single trace: the user's view of
    the trace equals their view of its purge."""
    sig = machine.sig
    u = sig.uidx(user)
    interned = sig.intern_trace(alpha)
    purged = purge_idx(policy, interned, u)
    obs = machine.obs[u]
    return (obs[run_idx(machine, machine.initial, interned)]
            == obs[run_idx(machine, machine.initial, purged)])


# ---------------------------------------------------------------------------
# Intransitive noninterference: ipurge and the policy encoding
# ---------------------------------------------------------------------------


def ipurge(rel: InterferenceRelation, sig: Signature, alpha: Sequence[str],
           user: str) -> tuple[str, ...]:
    """Keeps a position iff the suffix after it carries an interference chain
    from the action's user to ``user`` (the empty chain counts when the
    action's user interferes directly)."""
    interned = sig.intern_trace(alpha)
    kept = ipurge_idx(rel, sig, interned, sig.uidx(user))
    return sig.trace_names(kept)


def ipurge_idx(rel: InterferenceRelation, sig: Signature, alpha: Sequence[int],
               u: int) -> tuple[int, ...]:
    users = sig.users
    edges = rel.pairs
    dom = sig.dom
    # chain_src[i] = users that can start a chain within alpha[i:] ending at u
    reach = {w for w in range(len(users)) if (users[w], users[u]) in edges}
    keep_flags = [False] * len(alpha)
    for i in range(len(alpha) - 1, -1, -1):
        keep_flags[i] = dom[alpha[i]] in reach
        d = dom[alpha[i]]
        if d in reach:
            dn = users[d]
            reach = reach | {w for w in range(len(users)) if (users[w], dn) in edges}
    return tuple(a for a, keep in zip(alpha, keep_flags) if keep)


def _contains_subsequence(small: tuple, big: tuple) -> bool:
    it = iter(big)
    return all(x in it for x in small)


def condense(chains: set[tuple[int, ...]]) -> set[tuple[int, ...]]:
    """Keeps only the chains that contain no other chain of the set as a
    subsequence (the minimal ones)."""
    out = set()
    for c in chains:
        if not any(o != c and _contains_subsequence(o, c) for o in chains):
            out.add(c)
    return out


def interference_chains(rel: InterferenceRelation, sig: Signature, u: int,
                        v: int) -> tuple[bool, set[tuple[int, ...]]]:
    """All repetition-free chains of action-bearing users linking ``u`` to
    ``v``; the boolean reports whether the empty chain applies (direct
    interference). Chains with repeated users are always dominated by a
    shorter chain, so skipping them is lossless."""
    users = sig.users
    edges = rel.pairs
    direct = (users[u], users[v]) in edges
    carriers = [w for w in range(len(users)) if sig.actions_of_user[w]]
    chains: set[tuple[int, ...]] = set()

    def extend(prefix: tuple[int, ...], last: int) -> None:
        if (users[last], users[v]) in edges and prefix:
            chains.add(prefix)
        for w in carriers:
            if w not in prefix and (users[last], users[w]) in edges:
                extend(prefix + (w,), w)

    extend((), u)
    return direct, chains


def encode_intransitive(rel: InterferenceRelation, sig: Signature) -> Policy:
    """Builds the post-conditional policy whose purge coincides with ipurge.

    Users without actions cannot appear in a realizable chain and contribute
    no controlled partitions; signatures whose partitions refine the per-user
    action sets are handled by issuing one assertion per partition of the
    source user (same purge behaviour).
    """
    if not rel.is_reflexive(sig.users):
        raise InputError("intransitive encoding requires a reflexive relation")
    assertions: list[Assertion] = []
    n_users = len(sig.users)
    for u in range(n_users):
        if not sig.actions_of_user[u]:
            continue
        u_parts = sorted({sig.part[a] for a in sig.actions_of_user[u]})
        for v in range(n_users):
            if u == v:
                continue
            direct, chains = interference_chains(rel, sig, u, v)
            if direct:
                continue  # the condensed chain set is exactly {empty}
            if not chains:
                for p in u_parts:
                    assertions.append(Assertion(p, v, Strict()))
                continue
            minimal = sorted(condense(chains), key=lambda c: (len(c), c))
            channels = tuple(
                tuple(GapSetTok(frozenset(sig.part[a] for a in sig.actions_of_user[w]))
                      for w in chain)
                for chain in minimal)
            for p in u_parts:
                assertions.append(Assertion(p, v, Post(channels)))
    return Policy(sig, tuple(assertions))


def induced_interference(policy: Policy, sig: Signature) -> InterferenceRelation:
    """The interference relation a policy's strict assertions determine: u
    interferes with v iff some action of u lies in no partition strictly
    denied toward v. Conditional assertions do not block (they admit traces
    where the flow is open)."""
    pairs = set()
    for u, uname in enumerate(sig.users):
        for v, vname in enumerate(sig.users):
            for a in sig.actions_of_user[u]:
                rule = policy.rule_for(sig.part[a], v)
                if rule is None or not isinstance(rule.condition, Strict):
                    pairs.add((uname, vname))
                    break
    return InterferenceRelation(frozenset(pairs))


# ---------------------------------------------------------------------------
# Bounded consistency (the two purge-commutation equations)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsistencyResult:
    holds: bool
    bound: int
    witness: tuple[str, tuple[str, ...], tuple[str, ...]] | None = None


def left_consistent_bounded(policy: Policy, max_len: int) -> ConsistencyResult:
    """Checks purge(purge(a, u) . b, u) == purge(a . b, u) for every user and
    every split with |a| + |b| <= max_len; stops at the first counterexample
    (smallest combined length, then lexicographic trace, split, user)."""
    return _consistency_search(policy, max_len, left=True)


def right_consistent_bounded(policy: Policy, max_len: int) -> ConsistencyResult:
    """Mirror image: purge(a . purge(b, u), u) == purge(a . b, u)."""
    return _consistency_search(policy, max_len, left=False)


def _consistency_search(policy: Policy, max_len: int, left: bool) -> ConsistencyResult:
    if max_len < 1:
        raise InputError("consistency bound must be at least 1")
    sig = policy.sig
    n = len(sig.actions)
    if n == 0:
        return ConsistencyResult(True, max_len)
    # users nothing is denied to have identity purges: both sides coincide
    users = [u for u in range(len(sig.users)) if policy.toward(u)]
    if not users:
        return ConsistencyResult(True, max_len)

    # Sequences of length <= max_len are indexed by code = off[L] + value,
    # where value reads the sequence as a big-endian base-n numeral. Purge
    # results are memoized per user as (value, length) pairs so each pair
    # check is pure integer arithmetic.
    off = [0]
    for length in range(max_len + 1):
        off.append(off[-1] + n ** length)
    pow_n = [n ** k for k in range(max_len + 1)]

    purged: list[list[tuple[int, int]]] = [[] for _ in sig.users]
    seqs: list[tuple[int, ...]] = []

    for length in range(max_len + 1):
        base = off[length]
        count = pow_n[length]
        for value in range(count):
            digits = []
            rest = value
            for k in range(length - 1, -1, -1):
                digits.append(rest // pow_n[k])
                rest %= pow_n[k]
            seq = tuple(digits)
            seqs.append(seq)
            for u in users:
                result = purge_idx(policy, seq, u)
                rv = 0
                for a in result:
                    rv = rv * n + a
                purged[u].append((rv, len(result)))

        for comb in range(base, base + count):
            comb_seq = seqs[comb]
            comb_value = comb - base
            for cut in range(length + 1):
                a_len, b_len = cut, length - cut
                a_value = comb_value // pow_n[b_len]
                b_value = comb_value % pow_n[b_len]
                a_code = off[a_len] + a_value
                b_code = off[b_len] + b_value
                for u in users:
                    target = purged[u][comb]
                    if left:
                        pv, pl = purged[u][a_code]
                        inner = off[pl + b_len] + pv * pow_n[b_len] + b_value
                    else:
                        pv, pl = purged[u][b_code]
                        inner = off[a_len + pl] + a_value * pow_n[pl] + pv
                    if purged[u][inner] != target:
                        alpha = sig.trace_names(comb_seq[:cut])
                        beta = sig.trace_names(comb_seq[cut:])
                        return ConsistencyResult(
                            False, max_len, (sig.users[u], alpha, beta))
    return ConsistencyResult(True, max_len)


# ---------------------------------------------------------------------------
# Interference relation file: one `u -> v` line per pair, reflexive implied
# ---------------------------------------------------------------------------


def parse_relation(text: str, sig: Signature, path: str = "<relation>") -> InterferenceRelation:
    pairs = {(u, u) for u in sig.users}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        left, arrow, right = line.partition("->")
        if not arrow:
            raise InputError("expected 'USER -> USER'", path, lineno)
        u, v = left.strip(), right.strip()
        for name in (u, v):
            if name not in sig.user_index:
                raise InputError(f"unknown user {name!r}", path, lineno)
        pairs.add((u, v))
    return InterferenceRelation(frozenset(pairs))


def format_relation(rel: InterferenceRelation) -> str:
    lines = [f"{u} -> {v}" for u, v in sorted(rel.pairs) if u != v]
    return "\n".join(lines) + ("\n" if lines else "")
