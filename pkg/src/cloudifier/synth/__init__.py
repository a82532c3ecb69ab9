"""Synthetic UI scenes with exact dense labels."""

from .scene import (
    MetaBatch,
    Observation,
    ScenePolicy,
    WidgetInstance,
    compose_scene,
    generate_meta_batch,
    generate_observation,
    iter_observations,
)
from .taxonomy import WidgetClass, taxonomy
from .themes import THEMES, Theme, get_theme
from .widgets import render_widget

__all__ = [
    "MetaBatch",
    "Observation",
    "ScenePolicy",
    "THEMES",
    "Theme",
    "WidgetClass",
    "WidgetInstance",
    "compose_scene",
    "generate_meta_batch",
    "generate_observation",
    "get_theme",
    "iter_observations",
    "render_widget",
    "taxonomy",
]
