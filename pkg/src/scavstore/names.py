"""Checkpoint naming: application.node.timestep."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DatasetName:
    """Canonical checkpoint name; rendering and parsing are inverses."""

    application: str
    node: str
    timestep: int

    def __post_init__(self):
        for part in (self.application, self.node):
            if not part or "." in part:
                raise ValueError(f"invalid name component {part!r}")
        if self.timestep < 0:
            raise ValueError("timestep must be >= 0")

    def render(self) -> str:
        return f"{self.application}.{self.node}.{self.timestep}"

    @classmethod
    def parse(cls, text: str) -> "DatasetName":
        parts = text.split(".")
        if len(parts) != 3:
            raise ValueError(f"expected application.node.timestep, got {text!r}")
        return cls(parts[0], parts[1], int(parts[2]))
