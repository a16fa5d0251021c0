"""Verdict values returned by every verification method."""

from __future__ import annotations

from dataclasses import dataclass, field

SECURE = "SECURE"
INSECURE = "INSECURE"
UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class Verdict:
    """Outcome of one verification method for one user (or all users).

    ``witness`` is only present on INSECURE verdicts and always replays to a
    real violation: running the machine on the witness trace and on its purge
    toward ``witness[0]`` yields different observations.
    """

    status: str
    method: str
    witness: tuple[str, tuple[str, ...]] | None = None
    bound: int | None = None
    note: str | None = None

    def __post_init__(self):
        if self.status not in (SECURE, INSECURE, UNKNOWN):
            raise ValueError(f"bad verdict status {self.status!r}")
        if self.status == INSECURE and self.witness is None:
            raise ValueError("INSECURE verdict requires a witness")

    @property
    def secure(self) -> bool:
        return self.status == SECURE


def merge_witness_key(witness: tuple[str, tuple[str, ...]], user_order: dict[str, int],
                      action_order: dict[str, int]):
    """Sort key making witness selection deterministic: shortest trace first,
    then lexicographic by action order, then by user order."""
    user, trace = witness
    return (len(trace), tuple(action_order[a] for a in trace), user_order[user])
