"""Two-level widget class table.

Coarse classes are the major control groups; each fine class is a themed or
state-specific subclass and maps to exactly one coarse class. Id 0 is the
background at both levels.

Table version: 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAXONOMY_VERSION = 1

COARSE_NAMES = (
    "background",
    "window-frame",
    "button",
    "text-input",
    "checkbox",
    "radio-button",
    "dropdown",
    "list-table",
    "label",
    "scrollbar",
    "icon",
)

_FINE = (
    ("background", 0),
    ("window-frame/active", 1),
    ("window-frame/inactive", 1),
    ("window-frame/dialog", 1),
    ("button/normal", 2),
    ("button/pressed", 2),
    ("button/default", 2),
    ("button/disabled", 2),
    ("text-input/single-line", 3),
    ("text-input/multi-line", 3),
    ("text-input/disabled", 3),
    ("checkbox/unchecked", 4),
    ("checkbox/checked", 4),
    ("radio-button/unselected", 5),
    ("radio-button/selected", 5),
    ("dropdown/closed", 6),
    ("dropdown/disabled", 6),
    ("list-table/listbox", 7),
    ("list-table/grid", 7),
    ("label/static", 8),
    ("label/caption", 8),
    ("scrollbar/vertical", 9),
    ("scrollbar/horizontal", 9),
    ("icon/image", 10),
    ("icon/document", 10),
)


@dataclass(frozen=True)
class WidgetClass:
    coarse_id: int
    fine_id: int
    name: str

    @property
    def coarse_name(self) -> str:
        return COARSE_NAMES[self.coarse_id]

    def label(self, granularity: str) -> int:
        return self.fine_id if granularity == "fine" else self.coarse_id


_TABLE = tuple(WidgetClass(coarse, fine, name) for fine, (name, coarse) in enumerate(_FINE))
NUM_COARSE = len(COARSE_NAMES)
NUM_FINE = len(_TABLE)
# fine id -> coarse id lookup
COARSE_OF_FINE = np.array([c.coarse_id for c in _TABLE], dtype=np.uint16)


def taxonomy() -> tuple[WidgetClass, ...]:
    """The fixed fine-class table, indexed by fine id."""
    return _TABLE


def by_name(name: str) -> WidgetClass:
    for c in _TABLE:
        if c.name == name:
            return c
    raise KeyError(name)


def fine_classes_of(coarse_id: int) -> tuple[WidgetClass, ...]:
    return tuple(c for c in _TABLE if c.coarse_id == coarse_id)


def num_classes(granularity: str, max_coarse: int = NUM_COARSE) -> int:
    """Label-space size for a granularity, optionally restricted to coarse ids < max_coarse."""
    if granularity not in ("coarse", "fine"):
        raise ValueError(f"granularity must be 'coarse' or 'fine', got {granularity!r}")
    if not 2 <= max_coarse <= NUM_COARSE:
        raise ValueError(f"max_coarse must lie in [2, {NUM_COARSE}]")
    if granularity == "coarse":
        return max_coarse
    return max(c.fine_id for c in _TABLE if c.coarse_id < max_coarse) + 1


def to_coarse(fine_labels: np.ndarray) -> np.ndarray:
    return COARSE_OF_FINE[np.asarray(fine_labels)]
