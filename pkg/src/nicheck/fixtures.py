"""Built-in example systems used as regression fixtures and documentation.

Four models ship with the toolkit:

* ``xor`` — three users on a two-bit machine; u's action flips the bit v
  sees, v's action flips the bit w sees. The strict policy lets information
  travel u -> v -> w but never u -> w directly.
* ``bookkeeping`` — employees may modify a shared database only immediately
  after registering (a well-formed-transaction integrity discipline): reads
  never touch the database, writes need an immediately preceding
  book-keeping action, and a book-keeping action not followed directly by a
  write must itself be invisible to the database.
* ``chinese-wall`` — two competing companies share a consultant; once the
  consultant contacts one company his channel to the other goes dead, and a
  company's replies reach him only after he initiated contact. The machine
  is a small message-memory model built for this policy: the paper-style
  narrative gives no machine, so expectations here are fixed by this
  construction.
* ``two-stage-downgrade`` — a secret may reach the public user only after
  two approvals in a fixed order; approvers themselves are unrestricted.
  Shows a release discipline no plain interference relation can express.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InputError
from .model import Machine, Signature
from .policy import Policy, parse_policy

NAMES = ("xor", "bookkeeping", "chinese-wall", "two-stage-downgrade")


@dataclass(frozen=True)
class NamedExample:
    name: str
    machine: Machine
    policy: Policy
    policy_text: str
    expected: dict
    notes: str


def example(name: str) -> NamedExample:
    if name == "xor":
        return xor()
    if name == "bookkeeping":
        return bookkeeping()
    if name == "chinese-wall":
        return chinese_wall()
    if name == "two-stage-downgrade":
        return two_stage_downgrade()
    raise InputError(f"unknown example {name!r}; available: {', '.join(NAMES)}")


def xor() -> NamedExample:
    sig = Signature.build(
        ["u", "v", "w"],
        [("a_u", "u", "Au"), ("a_v", "v", "Av"), ("a_w", "w", "Aw")])
    states = [f"({x},{y})" for x in (0, 1) for y in (0, 1)]
    step = {}
    obs = {}
    for x in (0, 1):
        for y in (0, 1):
            s = f"({x},{y})"
            step[(s, "a_u")] = f"({1 - x},{y})"
            step[(s, "a_v")] = f"({x},{1 - y})"
            step[(s, "a_w")] = s
            obs[("u", s)] = "nil"
            obs[("v", s)] = str(x)
            obs[("w", s)] = str(y)
    machine = Machine.build(sig, states, "(0,0)", step, obs)
    text = "deny Av -> u;\ndeny Aw -> v;\ndeny Au -> w;\n"
    return NamedExample(
        "xor", machine, parse_policy(text, sig), text,
        expected={"bruteforce": "SECURE", "unwinding": "SECURE",
                  "safety": "SECURE"},
        notes="two-bit flip machine; strict chain policy u -> v -> w whose "
              "induced interference relation is not transitive")


def xor_obs_mutant() -> NamedExample:
    """The xor machine with w's observation rewired to the bit only v may
    see; every method must catch the leak with witness a_u."""
    base = xor()
    sig = base.machine.sig
    states = base.machine.states
    step = {(states[s], sig.actions[a]): states[t]
            for s, row in enumerate(base.machine.step) for a, t in enumerate(row)}
    obs = {}
    for u, row in zip(sig.users, base.machine.obs):
        for s, value in zip(states, row):
            obs[(u, s)] = value
    for s in states:
        obs[("w", s)] = s[1]  # the x coordinate
    machine = Machine.build(sig, states, states[base.machine.initial], step, obs)
    return NamedExample(
        "xor-obs-mutant", machine, base.policy, base.policy_text,
        expected={"bruteforce": "INSECURE", "unwinding": "INSECURE",
                  "safety": "INSECURE"},
        notes="observation fault: w sees the u-controlled bit directly")


# -- bookkeeping ------------------------------------------------------------

_BK_EMPLOYEES = 2
_BK_ENTRIES = 2
_BK_VALUES = (0, 1)
_BOT, _READY, _SUCC, _DENY = "-", "r", "s", "d"


def _bk_state_name(view: tuple, data: tuple) -> str:
    return "".join(view) + "|" + "".join(str(d) for d in data)


def bookkeeping() -> NamedExample:
    """Finite instantiation with 2 employees, 2 entries, values {0, 1} --
    small enough for exhaustive checking while exercising every transition
    rule, including denied writes."""
    m, n = _BK_EMPLOYEES, _BK_ENTRIES
    employees = [f"E{i}" for i in range(1, m + 1)]
    users = employees + ["B"]
    decls = []
    for i, e in enumerate(employees, start=1):
        for x in range(1, n + 1):
            decls.append((f"r{i}_x{x}", e, f"Ar{i}"))
        for x in range(1, n + 1):
            for v in _BK_VALUES:
                decls.append((f"w{i}_x{x}_{v}", e, f"Aw{i}"))
        decls.append((f"bk{i}", e, f"Abk{i}"))
    sig = Signature.build(users, decls)

    # states enumerated from the initial one by closure under step
    def step_fn(state, action):
        view, data = state
        if action.startswith("bk"):
            i = int(action[2:]) - 1
            new_view = tuple(_READY if j == i else _BOT for j in range(m))
            return (new_view, data)
        if action.startswith("r"):
            i = int(action[1]) - 1
            x = int(action[4]) - 1
            new_view = tuple(str(data[x]) if j == i else _BOT for j in range(m))
            return (new_view, data)
        i = int(action[1]) - 1
        x = int(action[4]) - 1
        v = int(action[6])
        if view[i] != _READY:
            new_view = tuple(_DENY if j == i else _BOT for j in range(m))
            return (new_view, data)
        new_view = tuple(_SUCC if j == i else _BOT for j in range(m))
        new_data = tuple(v if k == x else d for k, d in enumerate(data))
        return (new_view, new_data)

    initial = ((_BOT,) * m, (0,) * n)
    states = [initial]
    seen = {initial}
    for state in states:
        for a in sig.actions:
            t = step_fn(state, a)
            if t not in seen:
                seen.add(t)
                states.append(t)

    names = {s: _bk_state_name(*s) for s in states}
    step = {(names[s], a): names[step_fn(s, a)] for s in states for a in sig.actions}
    obs = {}
    for s in states:
        view, data = s
        obs[("B", names[s])] = "".join(str(d) for d in data)
        for i, e in enumerate(employees):
            obs[(e, names[s])] = view[i]
    machine = Machine.build(sig, [names[s] for s in states],
                            names[initial], step, obs)

    lines = []
    for i in range(1, m + 1):
        lines.append(f"deny Ar{i} -> B;")
        lines.append(f"deny Aw{i} -> B pre downgrade [Abk{i}];")
        lines.append(f"deny Abk{i} -> B post [Aw{i}];")
    text = "\n".join(lines) + "\n"
    return NamedExample(
        "bookkeeping", machine, parse_policy(text, sig), text,
        expected={"bruteforce": "SECURE", "unwinding": "UNKNOWN"},
        notes="well-formed transactions guarding a shared database; the "
              "policy is neither left- nor right-consistent, and the "
              "rule-based checks cannot certify it (the oracle can)")


# -- chinese wall -----------------------------------------------------------

_CW_SAT = 2  # message counters saturate here


def chinese_wall(as_printed: bool = False) -> NamedExample:
    """Conflict-of-interest wall between companies u and v sharing
    consultant c.

    The machine delivers c's messages to a company only while c has not
    contacted the rival, and a company's replies only once c initiated
    contact; sticky contact flags make the wall permanent. The default
    policy states exactly that discipline (persistent triggers). The
    ``as_printed`` variant uses immediate-trigger downgrades instead and is
    violated by this machine.
    """
    sig = Signature.build(
        ["u", "v", "c"],
        [("msg_u", "u", "Au"), ("msg_v", "v", "Av"),
         ("ask_cu", "c", "Acu"), ("ask_cv", "c", "Acv")])

    def step_fn(state, action):
        cu, cv, ku, kv, last = state
        if action == "ask_cu":
            return (1, cv, min(ku + 1, _CW_SAT) if not cv else ku, kv, last)
        if action == "ask_cv":
            return (cu, 1, ku, min(kv + 1, _CW_SAT) if not cu else kv, last)
        if action == "msg_u":
            return (cu, cv, ku, kv, "u" if cu else last)
        return (cu, cv, ku, kv, "v" if cv else last)

    initial = (0, 0, 0, 0, "-")
    states = [initial]
    seen = {initial}
    for state in states:
        for a in sig.actions:
            t = step_fn(state, a)
            if t not in seen:
                seen.add(t)
                states.append(t)

    def name(state):
        cu, cv, ku, kv, last = state
        return f"c{cu}{cv}k{ku}{kv}{last}"

    step = {(name(s), a): name(step_fn(s, a)) for s in states for a in sig.actions}
    obs = {}
    for s in states:
        obs[("u", name(s))] = str(s[2])
        obs[("v", name(s))] = str(s[3])
        obs[("c", name(s))] = s[4]
    machine = Machine.build(sig, [name(s) for s in states], name(initial),
                            step, obs)

    if as_printed:
        text = (
            "deny Au -> v;\n"
            "deny Av -> u;\n"
            "deny Acu -> v;\n"
            "deny Acv -> u;\n"
            "deny Acu -> u pre downgrade [Acv];\n"
            "deny Acv -> v pre downgrade [Acu];\n"
            "deny Au -> c pre downgrade [Acu];\n"
            "deny Av -> c pre downgrade [Acv];\n")
        expected = {"bruteforce": "INSECURE"}
        notes = ("immediate-trigger variant of the wall policy; not what the "
                 "scenario narrative describes, kept for comparison only")
    else:
        text = (
            "deny Au -> v;\n"
            "deny Av -> u;\n"
            "deny Acu -> v;\n"
            "deny Acv -> u;\n"
            "deny Acv -> v pre upgrade [Acu <>];\n"
            "deny Acu -> u pre upgrade [Acv <>];\n"
            "deny Au -> c pre downgrade [Acu <>];\n"
            "deny Av -> c pre downgrade [Acv <>];\n")
        expected = {"bruteforce": "SECURE"}
        notes = ("narrative wall policy with persistent triggers; the machine "
                 "was built to honour it, so every verdict here reflects this "
                 "construction rather than any externally given system")
    return NamedExample("chinese-wall", machine, parse_policy(text, sig),
                        text, expected, notes)


# -- two-stage downgrade ----------------------------------------------------


def two_stage_downgrade() -> NamedExample:
    """H's secret bit reaches L only through D1's then D2's relay, in that
    order; the single post-conditional assertion states exactly this."""
    sig = Signature.build(
        ["H", "D1", "D2", "L"],
        [("aH", "H", "AH"), ("aD1", "D1", "AD1"),
         ("aD2", "D2", "AD2"), ("aL", "L", "AL")])

    def step_fn(state, action):
        h, p1, p2 = state
        if action == "aH":
            return (1 - h, p1, p2)
        if action == "aD1":
            return (h, h, p2)
        if action == "aD2":
            return (h, p1, p1)
        return state

    states = [(h, p1, p2) for h in (0, 1) for p1 in (0, 1) for p2 in (0, 1)]

    def name(state):
        return "".join(str(b) for b in state)

    step = {(name(s), a): name(step_fn(s, a)) for s in states for a in sig.actions}
    obs = {}
    for s in states:
        obs[("H", name(s))] = str(s[0])
        obs[("D1", name(s))] = str(s[1])
        obs[("D2", name(s))] = str(s[2])
        obs[("L", name(s))] = str(s[2])
    machine = Machine.build(sig, [name(s) for s in states], "000", step, obs)

    text = "deny AH -> L post [<>AD1 <>AD2];\n"
    return NamedExample(
        "two-stage-downgrade", machine, parse_policy(text, sig), text,
        expected={"bruteforce": "SECURE", "unwinding": "SECURE"},
        notes="ordered double-approval release; right-consistent but not an "
              "interference-relation policy")
