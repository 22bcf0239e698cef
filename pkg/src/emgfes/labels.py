"""Movement labels, cursor directions and stimulation channels shared across the package."""

from __future__ import annotations

import enum


class Movement(enum.IntEnum):
    """Ankle movement classes. Integer order is the deterministic tie-break order."""

    REST = 0
    DORSIFLEXION = 1
    PLANTARFLEXION = 2
    INVERSION = 3
    EVERSION = 4

    @classmethod
    def from_name(cls, name: str) -> "Movement":
        return cls[name.strip().upper()]


class Direction(enum.Enum):
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"

    @property
    def axis(self) -> int:
        """0 for the X axis, 1 for the Y axis."""
        return 1 if self in (Direction.UP, Direction.DOWN) else 0

    @property
    def sign(self) -> float:
        return 1.0 if self in (Direction.UP, Direction.RIGHT) else -1.0


class StimChannel(enum.IntEnum):
    DORSIFLEXION = 0
    PLANTARFLEXION = 1


MOVEMENTS = tuple(Movement)
MOVEMENT_NAMES = {m: m.name.lower() for m in Movement}
