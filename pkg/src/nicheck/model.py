"""Signatures and finite deterministic state machines.

A signature fixes the alphabet structure: a finite set of users, a finite set
of actions, a total map ``dom`` assigning each action to the user who performs
it, and a total map ``part`` grouping actions into partitions. Partitions
refine the per-user action sets: two actions in the same partition always
belong to the same user.

A machine is a total deterministic transition system over a signature's
actions, with one observation per (user, state) pair. Machines are immutable
after construction and safe to share between concurrent checks.

Identifiers (users, actions, partitions, states) are strings in the external
file format and are interned to dense integer indices internally; all hot
loops work on the integer form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .errors import InputError


@dataclass(frozen=True)
class Signature:
    users: tuple[str, ...]
    actions: tuple[str, ...]
    partitions: tuple[str, ...]
    dom: tuple[int, ...]   # action index -> user index
    part: tuple[int, ...]  # action index -> partition index

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.users)}

    @cached_property
    def action_index(self) -> dict[str, int]:
        return {a: i for i, a in enumerate(self.actions)}

    @cached_property
    def partition_index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.partitions)}

    @cached_property
    def actions_of_user(self) -> tuple[tuple[int, ...], ...]:
        by_user: list[list[int]] = [[] for _ in self.users]
        for a, u in enumerate(self.dom):
            by_user[u].append(a)
        return tuple(tuple(v) for v in by_user)

    @cached_property
    def actions_of_partition(self) -> tuple[tuple[int, ...], ...]:
        by_part: list[list[int]] = [[] for _ in self.partitions]
        for a, p in enumerate(self.part):
            by_part[p].append(a)
        return tuple(tuple(v) for v in by_part)

    def uidx(self, user: str) -> int:
        try:
            return self.user_index[user]
        except KeyError:
            raise InputError(f"unknown user {user!r}") from None

    def aidx(self, action: str) -> int:
        try:
            return self.action_index[action]
        except KeyError:
            raise InputError(f"unknown action {action!r}") from None

    def pidx(self, partition: str) -> int:
        try:
            return self.partition_index[partition]
        except KeyError:
            raise InputError(f"unknown partition {partition!r}") from None

    def intern_trace(self, alpha: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.aidx(a) for a in alpha)

    def trace_names(self, alpha: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.actions[a] for a in alpha)

    @staticmethod
    def build(users: Sequence[str], actions: Sequence[tuple[str, str, str]]) -> "Signature":
        """Builds a signature from ``(action, user, partition)`` declarations.

        Enforces: unique names, total dom/part, and the refinement condition
        (a partition never spans two users). Coverage and disjointness are
        automatic in this representation.
        """
        users = tuple(users)
        seen_users = set()
        for u in users:
            if u in seen_users:
                raise InputError(f"duplicate user {u!r}")
            seen_users.add(u)

        names: list[str] = []
        parts: list[str] = []
        dom: list[int] = []
        part: list[int] = []
        uix = {u: i for i, u in enumerate(users)}
        pix: dict[str, int] = {}
        part_owner: dict[str, str] = {}
        seen_actions = set()
        for name, user, partition in actions:
            if name in seen_actions:
                raise InputError(f"duplicate action {name!r}")
            seen_actions.add(name)
            if user not in uix:
                raise InputError(f"action {name!r} refers to unknown user {user!r}")
            owner = part_owner.setdefault(partition, user)
            if owner != user:
                raise InputError(
                    f"partition {partition!r} mixes users {owner!r} and {user!r}")
            if partition not in pix:
                pix[partition] = len(parts)
                parts.append(partition)
            names.append(name)
            dom.append(uix[user])
            part.append(pix[partition])
        return Signature(users, tuple(names), tuple(parts), tuple(dom), tuple(part))


@dataclass(frozen=True)
class Machine:
    """Total deterministic state machine with per-user observations.

    ``step[s][a]`` is the successor state index, ``obs[u][s]`` the opaque
    output token user ``u`` sees in state ``s``. Every stored state is
    reachable from ``initial``; unreachable declared states are pruned at
    construction time (with a warning).
    """

    sig: Signature
    states: tuple[str, ...]
    initial: int
    step: tuple[tuple[int, ...], ...]
    obs: tuple[tuple[str, ...], ...]

    @cached_property
    def state_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}

    def sidx(self, state: str) -> int:
        try:
            return self.state_index[state]
        except KeyError:
            raise InputError(f"unknown state {state!r}") from None

    @staticmethod
    def build(sig: Signature, states: Sequence[str], initial: str,
              step: Mapping[tuple[str, str], str],
              obs: Mapping[tuple[str, str], str]) -> "Machine":
        states = tuple(states)
        seen = set()
        for s in states:
            if s in seen:
                raise InputError(f"duplicate state {s!r}")
            seen.add(s)
        six = {s: i for i, s in enumerate(states)}
        if initial not in six:
            raise InputError(f"initial state {initial!r} not declared")

        n, m = len(states), len(sig.actions)
        step_t = [[-1] * m for _ in range(n)]
        for (s, a), t in step.items():
            if s not in six:
                raise InputError(f"step entry uses unknown state {s!r}")
            if t not in six:
                raise InputError(f"step entry uses unknown state {t!r}")
            si, ai = six[s], sig.aidx(a)
            if step_t[si][ai] != -1:
                raise InputError(f"duplicate step entry for ({s!r}, {a!r})")
            step_t[si][ai] = six[t]
        for si in range(n):
            for ai in range(m):
                if step_t[si][ai] == -1:
                    raise InputError(
                        f"step map not total: missing ({states[si]!r}, {sig.actions[ai]!r})")

        obs_t = [[None] * n for _ in sig.users]
        for (u, s), value in obs.items():
            if s not in six:
                raise InputError(f"obs entry uses unknown state {s!r}")
            ui, si = sig.uidx(u), six[s]
            if obs_t[ui][si] is not None:
                raise InputError(f"duplicate obs entry for ({u!r}, {s!r})")
            obs_t[ui][si] = value
        for ui, row in enumerate(obs_t):
            for si, value in enumerate(row):
                if value is None:
                    raise InputError(
                        f"obs map not total: missing ({sig.users[ui]!r}, {states[si]!r})")

        keep = _reachable_indices(six[initial], step_t, m)
        if len(keep) < n:
            dropped = sorted(set(range(n)) - set(keep))
            warnings.warn(
                "pruned unreachable states: "
                + " ".join(states[i] for i in dropped),
                stacklevel=2)
            remap = {old: new for new, old in enumerate(keep)}
            states = tuple(states[i] for i in keep)
            step_t = [[remap[step_t[old][a]] for a in range(m)] for old in keep]
            obs_t = [[row[old] for old in keep] for row in obs_t]
            initial_i = remap[six[initial]]
        else:
            initial_i = six[initial]

        return Machine(sig, states,
                       initial_i,
                       tuple(tuple(r) for r in step_t),
                       tuple(tuple(r) for r in obs_t))


def _reachable_indices(initial: int, step_t: Sequence[Sequence[int]], n_actions: int) -> list[int]:
    seen = {initial}
    order = [initial]
    frontier = [initial]
    while frontier:
        nxt = []
        for s in frontier:
            row = step_t[s]
            for a in range(n_actions):
                t = row[a]
                if t not in seen:
                    seen.add(t)
                    order.append(t)
                    nxt.append(t)
        frontier = nxt
    return order


def run(machine: Machine, alpha: Sequence[str]) -> str:
    """Final state name after executing ``alpha`` from the initial state."""
    return machine.states[run_idx(machine, machine.initial,
                                  machine.sig.intern_trace(alpha))]


def run_from(machine: Machine, state: str, alpha: Sequence[str]) -> str:
    return machine.states[run_idx(machine, machine.sidx(state),
                                  machine.sig.intern_trace(alpha))]


def run_idx(machine: Machine, state: int, alpha: Sequence[int]) -> int:
    step = machine.step
    for a in alpha:
        state = step[state][a]
    return state


def reachable_states(machine: Machine) -> tuple[str, ...]:
    """States reachable from the initial state (after loading: all of them)."""
    idx = _reachable_indices(machine.initial, machine.step, len(machine.sig.actions))
    return tuple(machine.states[i] for i in sorted(idx))


# ---------------------------------------------------------------------------
# Machine file format
#
#   users:   u v w
#   actions:
#     a_u dom=u part=Au
#   states:  (0,0) (1,0)
#   initial: (0,0)
#   step:
#     (0,0) a_u (1,0)
#   obs:
#     u (0,0) nil
#
# '#' starts a comment; sections may put entries on the header line or on the
# following lines. Every identifier is a whitespace-free token.
# ---------------------------------------------------------------------------

_SECTIONS = ("users", "actions", "states", "initial", "step", "obs")


def _sectionize(text: str, path: str) -> dict[str, list[tuple[int, str]]]:
    sections: dict[str, list[tuple[int, str]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, colon, rest = line.partition(":")
        if colon and head.strip() in _SECTIONS and " " not in head.strip():
            name = head.strip()
            if name in sections:
                raise InputError(f"duplicate section {name!r}", path, lineno)
            sections[name] = []
            current = name
            rest = rest.strip()
            if rest:
                sections[name].append((lineno, rest))
        elif current is None:
            raise InputError(f"entry before any section header: {line!r}", path, lineno)
        else:
            sections[current].append((lineno, line))
    return sections


def _parse_action_entry(entry: str, path: str, lineno: int) -> tuple[str, str, str]:
    tokens = entry.split()
    if len(tokens) != 3:
        raise InputError("expected 'NAME dom=USER part=PARTITION'", path, lineno)
    name = tokens[0]
    fields = {}
    for tok in tokens[1:]:
        key, eq, value = tok.partition("=")
        if not eq or key not in ("dom", "part") or not value:
            raise InputError(f"bad action field {tok!r}", path, lineno)
        if key in fields:
            raise InputError(f"repeated action field {key!r}", path, lineno)
        fields[key] = value
    if set(fields) != {"dom", "part"}:
        raise InputError("action needs both dom= and part=", path, lineno)
    return name, fields["dom"], fields["part"]


def load_signature(text: str, path: str = "<signature>") -> Signature:
    """Parses the ``users``/``actions`` sections of a machine file into a
    signature; any machine sections present are ignored."""
    sections = _sectionize(text, path)
    for required in ("users", "actions"):
        if required not in sections:
            raise InputError(f"missing section {required!r}", path)
    users: list[str] = []
    for _, entry in sections["users"]:
        users.extend(entry.split())
    actions = [_parse_action_entry(e, path, ln) for ln, e in sections["actions"]]
    try:
        return Signature.build(users, actions)
    except InputError as exc:
        raise InputError(exc.message, path) from None


def load_machine(text: str, path: str = "<machine>") -> Machine:
    sections = _sectionize(text, path)
    for required in _SECTIONS:
        if required not in sections:
            raise InputError(f"missing section {required!r}", path)
    sig = load_signature(text, path)

    states: list[str] = []
    for _, entry in sections["states"]:
        states.extend(entry.split())

    init_entries = sections["initial"]
    if len(init_entries) != 1 or len(init_entries[0][1].split()) != 1:
        raise InputError("initial section must name exactly one state", path,
                         init_entries[0][0] if init_entries else None)
    initial = init_entries[0][1].strip()

    step: dict[tuple[str, str], str] = {}
    for lineno, entry in sections["step"]:
        tokens = entry.split()
        if len(tokens) != 3:
            raise InputError("step entry must be 'STATE ACTION STATE'", path, lineno)
        s, a, t = tokens
        if (s, a) in step:
            raise InputError(f"duplicate step entry for ({s!r}, {a!r})", path, lineno)
        _check_known(sig, states, s=s, a=a, t=t, path=path, lineno=lineno)
        step[(s, a)] = t

    obs: dict[tuple[str, str], str] = {}
    for lineno, entry in sections["obs"]:
        tokens = entry.split()
        if len(tokens) != 3:
            raise InputError("obs entry must be 'USER STATE VALUE'", path, lineno)
        u, s, value = tokens
        if (u, s) in obs:
            raise InputError(f"duplicate obs entry for ({u!r}, {s!r})", path, lineno)
        if u not in sig.user_index:
            raise InputError(f"unknown user {u!r}", path, lineno)
        if s not in states:
            raise InputError(f"unknown state {s!r}", path, lineno)
        obs[(u, s)] = value

    try:
        return Machine.build(sig, states, initial, step, obs)
    except InputError as exc:
        raise InputError(exc.message, path) from None


def _check_known(sig: Signature, states: list[str], s: str, a: str, t: str,
                 path: str, lineno: int) -> None:
    if s not in states:
        raise InputError(f"unknown state {s!r}", path, lineno)
    if t not in states:
        raise InputError(f"unknown state {t!r}", path, lineno)
    if a not in sig.action_index:
        raise InputError(f"unknown action {a!r}", path, lineno)


def dump_machine(machine: Machine) -> str:
    """Renders a machine back into the file format (declaration order kept)."""
    sig = machine.sig
    out = []
    out.append("users: " + " ".join(sig.users))
    out.append("actions:")
    for i, a in enumerate(sig.actions):
        out.append(f"  {a} dom={sig.users[sig.dom[i]]} part={sig.partitions[sig.part[i]]}")
    out.append("states: " + " ".join(machine.states))
    out.append("initial: " + machine.states[machine.initial])
    out.append("step:")
    for si, row in enumerate(machine.step):
        for ai, ti in enumerate(row):
            out.append(f"  {machine.states[si]} {sig.actions[ai]} {machine.states[ti]}")
    out.append("obs:")
    for ui, row in enumerate(machine.obs):
        for si, value in enumerate(row):
            out.append(f"  {sig.users[ui]} {machine.states[si]} {value}")
    return "\n".join(out) + "\n"
