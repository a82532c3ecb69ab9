"""Legacy desktop themes plus the hand-drawn ("sketch") proxy theme."""

from __future__ import annotations

from dataclasses import dataclass

Color = tuple[int, int, int]


@dataclass(frozen=True)
class Theme:
    name: str
    background: Color
    face: Color
    highlight: Color
    light: Color
    shadow: Color
    dark: Color
    text: Color
    input_bg: Color
    title: tuple[Color, Color]
    title_inactive: tuple[Color, Color]
    title_text: Color
    selection: Color
    accent_border: Color
    bevel: int = 2
    rounded: bool = False
    sketch: bool = False

    @property
    def kind(self) -> str:
        return "natural" if self.sketch else "artificial"


THEMES = {
    "win95": Theme(
        name="win95",
        background=(192, 192, 192),
        face=(192, 192, 192),
        highlight=(255, 255, 255),
        light=(223, 223, 223),
        shadow=(128, 128, 128),
        dark=(0, 0, 0),
        text=(0, 0, 0),
        input_bg=(255, 255, 255),
        title=((0, 0, 128), (0, 0, 128)),
        title_inactive=((128, 128, 128), (128, 128, 128)),
        title_text=(255, 255, 255),
        selection=(0, 0, 128),
        accent_border=(0, 0, 0),
    ),
    "win98": Theme(
        name="win98",
        background=(212, 208, 200),
        face=(212, 208, 200),
        highlight=(255, 255, 255),
        light=(233, 231, 227),
        shadow=(128, 128, 128),
        dark=(64, 64, 64),
        text=(0, 0, 0),
        input_bg=(255, 255, 255),
        title=((0, 0, 128), (16, 132, 208)),
        title_inactive=((128, 128, 128), (192, 192, 192)),
        title_text=(255, 255, 255),
        selection=(10, 36, 106),
        accent_border=(0, 0, 0),
    ),
    "winxp": Theme(
        name="winxp",
        background=(236, 233, 216),
        face=(244, 243, 238),
        highlight=(255, 255, 255),
        light=(241, 239, 226),
        shadow=(172, 168, 153),
        dark=(113, 111, 100),
        text=(0, 0, 0),
        input_bg=(255, 255, 255),
        title=((0, 84, 227), (61, 149, 255)),
        title_inactive=((122, 150, 223), (157, 185, 235)),
        title_text=(255, 255, 255),
        selection=(49, 106, 197),
        accent_border=(0, 60, 116),
        bevel=1,
        rounded=True,
    ),
    "sketch": Theme(
        name="sketch",
        background=(250, 248, 240),
        face=(250, 248, 240),
        highlight=(250, 248, 240),
        light=(250, 248, 240),
        shadow=(90, 90, 90),
        dark=(40, 40, 40),
        text=(40, 40, 40),
        input_bg=(250, 248, 240),
        title=((40, 40, 40), (40, 40, 40)),
        title_inactive=((90, 90, 90), (90, 90, 90)),
        title_text=(40, 40, 40),
        selection=(40, 40, 40),
        accent_border=(40, 40, 40),
        bevel=0,
        sketch=True,
    ),
}

THEME_NAMES = tuple(THEMES)
ARTIFICIAL_THEMES = ("win95", "win98", "winxp")

# theme-kind byte used in dataset headers
THEME_KIND_CODES = {"win95": 0, "win98": 1, "winxp": 2, "sketch": 3, "mixed": 4}


def get_theme(name: str) -> Theme:
    try:
        return THEMES[name]
    except KeyError:
        raise ValueError(f"unknown theme {name!r}; choose from {', '.join(THEME_NAMES)}") from None


def theme_for_index(theme: str, index: int) -> Theme:
    """Theme of observation ``index`` in a batch generated with ``theme``.

    "mixed" cycles win95, win98, winxp, sketch by index, so the per-observation
    theme is recoverable from the file header alone.
    """
    if theme == "mixed":
        return THEMES[THEME_NAMES[index % len(THEME_NAMES)]]
    return get_theme(theme)
