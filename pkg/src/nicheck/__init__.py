"""Verification toolkit for conditional noninterference policies on finite
deterministic state machines: a bounded purge oracle, unwinding-relation
synthesis, and a safety reduction by product construction, cross-validating
each other."""

__version__ = "0.1.0"

from .errors import FamilySizeError, InputError, UnsupportedPolicyError
from .model import (Machine, Signature, dump_machine, load_machine,
                    load_signature, reachable_states, run, run_from)
from .policy import (Assertion, Policy, Post, PreDowngrade, PreLangCond,
                     PreRegexCond, PreUpgrade, Strict, assertion_leq,
                     eval_condition, parse_policy, pretty_print, to_general_pre)
from .semantics import (ConsistencyResult, InterferenceRelation, PurgeResult,
                        encode_intransitive, format_relation,
                        induced_interference, ipurge, is_secure_def,
                        left_consistent_bounded, parse_relation, purge,
                        right_consistent_bounded)
from .verdict import INSECURE, SECURE, UNKNOWN, Verdict

__all__ = [
    "Assertion", "ConsistencyResult", "FamilySizeError", "INSECURE",
    "InputError", "InterferenceRelation", "Machine", "Policy", "Post",
    "PreDowngrade", "PreLangCond", "PreRegexCond", "PreUpgrade", "PurgeResult",
    "SECURE", "Signature", "Strict", "UNKNOWN", "UnsupportedPolicyError",
    "Verdict", "assertion_leq", "dump_machine", "encode_intransitive",
    "eval_condition", "format_relation", "induced_interference", "ipurge",
    "is_secure_def", "left_consistent_bounded", "load_machine",
    "load_signature", "parse_policy", "parse_relation", "pretty_print",
    "purge", "reachable_states", "right_consistent_bounded", "run", "run_from",
    "to_general_pre",
]
