from __future__ import annotations

from enum import Enum


class ClassLabel(str, Enum):
    FRONT_WALL = "front_wall"
    RACQUET = "racquet"
    FLOOR = "floor"
    GLASS = "glass"
    FALSE_EVENT = "false_event"


# fixed order; also the tie-break order of the fusion rule
IMPACT_CLASSES = (ClassLabel.FRONT_WALL, ClassLabel.RACQUET, ClassLabel.FLOOR, ClassLabel.GLASS)
