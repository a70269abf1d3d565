"""Token-sequence conditions with the base / target / complete / null algebra.

A complete condition is a base condition with the concept identifier token
inserted in front of its class token; the target condition is the concept
token plus that class token alone. The null condition is the single token
with id NULL_TOKEN, whose embedding is pinned to zero by the network.
"""

from __future__ import annotations

from dataclasses import dataclass

NULL_TOKEN = 0

_ROLES = ("base", "target", "complete", "null")


@dataclass(frozen=True)
class Condition:
    role: str
    token_ids: tuple[int, ...]
    concept_slot: int | None = None

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown condition role {self.role!r}")
        if not self.token_ids:
            raise ValueError("a condition needs at least one token")
        if any(i < 0 for i in self.token_ids):
            raise ValueError("token ids must be nonnegative")
        if self.role == "null":
            if self.token_ids != (NULL_TOKEN,) or self.concept_slot is not None:
                raise ValueError("the null condition is exactly the null token")
        elif self.role in ("complete", "target"):
            if self.concept_slot is None:
                raise ValueError(f"a {self.role} condition needs a concept_slot")
            if not 0 <= self.concept_slot < len(self.token_ids):
                raise ValueError("concept_slot out of range")
        elif self.concept_slot is not None:
            raise ValueError("a base condition carries no concept token")

    @staticmethod
    def null() -> Condition:
        return Condition("null", (NULL_TOKEN,))

    @property
    def concept_token(self) -> int | None:
        if self.concept_slot is None:
            return None
        return self.token_ids[self.concept_slot]

    def base_part(self) -> Condition:
        """The condition with the concept token stripped."""
        if self.role == "base":
            return self
        if self.role != "complete":
            raise ValueError("base_part is defined for complete conditions")
        ids = tuple(
            tok for i, tok in enumerate(self.token_ids) if i != self.concept_slot
        )
        return Condition("base", ids)

    def target_part(self) -> Condition:
        """The concept token together with the class token that follows it."""
        if self.role == "target":
            return self
        if self.role != "complete":
            raise ValueError("target_part is defined for complete conditions")
        s = self.concept_slot
        if s + 1 >= len(self.token_ids):
            raise ValueError("no class token follows the concept token")
        return Condition(
            "target", (self.token_ids[s], self.token_ids[s + 1]), concept_slot=0
        )
