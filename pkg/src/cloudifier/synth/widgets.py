"""Single-widget rendering: a themed patch plus the exact mask of owned pixels."""

from __future__ import annotations

import numpy as np

from . import draw
from .taxonomy import WidgetClass
from .themes import Theme

# (min (w, h), max (w, h)); fine-class entries override the coarse entry
SIZE_RANGES = {
    "window-frame": ((60, 40), (1024, 1024)),
    "button": ((16, 10), (160, 40)),
    "text-input": ((24, 10), (260, 28)),
    "text-input/multi-line": ((32, 24), (300, 200)),
    "checkbox": ((16, 8), (180, 24)),
    "radio-button": ((16, 8), (180, 24)),
    "dropdown": ((32, 12), (240, 28)),
    "list-table": ((32, 28), (320, 300)),
    "label": ((12, 6), (240, 24)),
    "scrollbar/vertical": ((10, 32), (20, 400)),
    "scrollbar/horizontal": ((32, 10), (400, 20)),
    "icon": ((12, 12), (64, 64)),
}


def size_range(wclass: WidgetClass):
    if wclass.name in SIZE_RANGES:
        return SIZE_RANGES[wclass.name]
    return SIZE_RANGES[wclass.coarse_name]


def _variant(wclass: WidgetClass) -> str:
    return wclass.name.split("/", 1)[1]


def _text_height(h, frac=0.45, lo=3, hi=9):
    return int(np.clip(round(h * frac), lo, hi))


def _text(img, theme, x0, y0, x1, y1, color, rng, bold=False, fraction=1.0):
    if theme.sketch:
        return draw.sketch_text(img, x0, y0, x1, y1, color, rng, fraction)
    return draw.text(img, x0, y0, x1, y1, color, rng, bold=bold, fraction=fraction)


def _frame(img, mask, variant, theme, rng):
    h, w = mask.shape
    # sketch strokes wobble up to 2 px, so their border band is wider
    border = 6 if theme.sketch else (3 if theme.rounded else 4)
    title_h = int(np.clip(round(h * 0.12), 9, 20))
    mask[:] = True
    mask[border + title_h : h - border, border : w - border] = False
    if theme.rounded:
        mask &= draw.rounded_rect_mask(h, w, 5) | (np.arange(h)[:, None] >= 5)
    active = variant != "inactive"
    colors = theme.title if active else theme.title_inactive
    button = title_h - 4
    n_buttons = 1 if variant == "dialog" else 3
    if theme.sketch:
        thick = int(rng.integers(1, 3))
        draw.sketch_rect(img, 2, 2, w - 2, h - 2, theme.dark, rng, thick)
        sep = border + title_h - 4
        draw.sketch_line(img, 2, sep, w - 3, sep, theme.dark, rng, thick)
        _text(img, theme, border + 2, border, w // 2, sep - 3, theme.text, rng)
        box = max(sep - border - 3, 3)
        for i in range(n_buttons):
            bx = w - border - 3 - (i + 1) * (box + 3)
            if bx <= w // 2:
                break
            draw.sketch_rect(img, bx, border - 1, bx + box, border - 1 + box, theme.dark, rng)
        return
    edge = colors[0] if theme.rounded else theme.face
    draw.fill(img, 0, 0, w, h, edge)
    if not theme.rounded:
        draw.bevel(img, 0, 0, w, h, theme, raised=True)
    draw.gradient(img, border, border, w - border, border + title_h, colors[0], colors[1])
    _text(img, theme, border + 4, border + 3, w // 2, border + title_h - 3, theme.title_text, rng, bold=True)
    for i in range(n_buttons):
        bx = w - border - 2 - (i + 1) * (button + 2)
        if bx <= w // 2:
            break
        if theme.rounded:
            face = (224, 67, 22) if i == 0 else colors[1]
            draw.fill(img, bx, border + 2, bx + button, border + 2 + button, face)
            draw.outline(img, bx, border + 2, bx + button, border + 2 + button, theme.highlight)
        else:
            draw.fill(img, bx, border + 2, bx + button, border + 2 + button, theme.face)
            draw.bevel(img, bx, border + 2, bx + button, border + 2 + button, theme, raised=True)
            draw.fill(img, bx + 3, border + button - 1, bx + button - 3, border + button + 1, theme.dark)
    if variant == "dialog":
        draw.outline(img, 0, 0, w, h, theme.dark)


def _button(img, mask, variant, theme, rng):
    h, w = mask.shape
    mask[:] = draw.rounded_rect_mask(h, w, 3) if theme.rounded else True
    th = _text_height(h)
    tx0, tx1 = int(w * 0.2), int(w * 0.8)
    ty0 = (h - th) // 2 + (1 if variant == "pressed" else 0)
    text_color = theme.shadow if variant == "disabled" else theme.text
    if theme.sketch:
        thick = 2 if variant == "default" else 1
        draw.sketch_rect(img, 2, 2, w - 2, h - 2, theme.dark, rng, thick)
        if variant == "pressed" and h > 12 and w > 12:
            draw.sketch_rect(img, 5, 5, w - 5, h - 5, theme.dark, rng)
        _text(img, theme, tx0, ty0, tx1, ty0 + th, text_color, rng, fraction=rng.uniform(0.5, 1.0))
        return
    if theme.rounded:
        top, bottom = (theme.highlight, theme.light) if variant != "pressed" else (theme.shadow, theme.light)
        draw.gradient(img, 0, 0, w, h, top, bottom, horizontal=False)
        draw.outline(img, 0, 0, w, h, theme.shadow if variant == "disabled" else theme.accent_border)
        if variant == "default":
            draw.outline(img, 1, 1, w - 1, h - 1, (105, 130, 238), t=2)
    else:
        draw.fill(img, 0, 0, w, h, theme.face)
        inset = 0
        if variant == "default":
            draw.outline(img, 0, 0, w, h, theme.accent_border)
            inset = 1
        draw.bevel(img, inset, inset, w - inset, h - inset, theme, raised=variant != "pressed")
    if variant == "disabled" and not theme.rounded:
        _text(img, theme, tx0 + 1, ty0 + 1, tx1 + 1, ty0 + th + 1, theme.highlight, np.random.default_rng(int(rng.integers(1 << 31))))
    _text(img, theme, tx0, ty0, tx1, ty0 + th, text_color, rng, fraction=rng.uniform(0.5, 1.0))


def _sunken_box(img, theme, x0, y0, x1, y1, fill_color, rng):
    if theme.sketch:
        draw.sketch_rect(img, x0 + 2, y0 + 2, x1 - 2, y1 - 2, theme.dark, rng, int(rng.integers(1, 3)))
        return
    draw.fill(img, x0, y0, x1, y1, fill_color)
    if theme.rounded:
        draw.outline(img, x0, y0, x1, y1, (127, 157, 185))
    else:
        draw.bevel(img, x0, y0, x1, y1, theme, raised=False)


def _text_input(img, mask, variant, theme, rng):
    h, w = mask.shape
    mask[:] = True
    disabled = variant == "disabled"
    _sunken_box(img, theme, 0, 0, w, h, theme.face if disabled else theme.input_bg, rng)
    color = theme.shadow if disabled else theme.text
    pad = 4
    if variant == "multi-line":
        th = _text_height(min(h, 20), 0.5)
        y = pad
        while y + th <= h - pad:
            _text(img, theme, pad, y, w - pad, y + th, color, rng, fraction=rng.uniform(0.3, 1.0))
            y += th + 3
    else:
        th = _text_height(h, 0.5)
        y = (h - th) // 2
        _text(img, theme, pad, y, w - pad, y + th, color, rng, fraction=rng.uniform(0.3, 0.9))


def _toggle_geometry(h, w, box):
    box = max(min(box, h, w), 6)
    by = (h - box) // 2
    th = _text_height(h, 0.55)
    ty = (h - th) // 2
    return box, by, th, ty


def _checkbox(img, mask, variant, theme, rng):
    h, w = mask.shape
    box, by, th, ty = _toggle_geometry(h, w, 13)
    mask[by : by + box, :box] = True
    if w > box + 6:
        mask[ty : ty + th, box + 4 :] = True
    checked = variant == "checked"
    if theme.sketch:
        draw.sketch_rect(img, 2, by + 2, box - 3, by + box - 3, theme.dark, rng)
        if checked:
            draw.sketch_line(img, 3, by + box // 2, box // 2, by + box - 3, theme.dark, rng)
            draw.sketch_line(img, box // 2, by + box - 3, box - 3, by + 3, theme.dark, rng)
    else:
        if theme.rounded:
            draw.gradient(img, 0, by, box, by + box, (220, 220, 215), theme.highlight, horizontal=False)
            draw.outline(img, 0, by, box, by + box, (28, 81, 128))
        else:
            draw.fill(img, 0, by, box, by + box, theme.input_bg)
            draw.bevel(img, 0, by, box, by + box, theme, raised=False)
        if checked:
            draw.check_mark(img, 3, by + 1, max(box - 6, 3), (33, 161, 33) if theme.rounded else theme.dark)
    if w > box + 6:
        _text(img, theme, box + 4, ty, w, ty + th, theme.text, rng, fraction=rng.uniform(0.4, 1.0))


def _radio(img, mask, variant, theme, rng):
    h, w = mask.shape
    d, by, th, ty = _toggle_geometry(h, w, 12)
    r = d / 2.0
    disk = draw.ellipse_mask(d, d, r, r, r, r)
    mask[by : by + d, :d] |= disk
    if w > d + 6:
        mask[ty : ty + th, d + 4 :] = True
    sub = img[by : by + d, :d]
    if theme.sketch:
        draw.sketch_ellipse(img, r, by + r, r - 1.5, r - 1.5, theme.dark, rng)
        if variant == "selected":
            sub[draw.ellipse_mask(d, d, r, r, r * 0.35, r * 0.35)] = theme.dark
    else:
        ring = disk & ~draw.ellipse_mask(d, d, r, r, r - 1.3, r - 1.3)
        upper = np.arange(d)[:, None] + np.arange(d)[None, :] < d
        sub[disk] = theme.input_bg
        sub[ring & upper] = theme.shadow if not theme.rounded else (28, 81, 128)
        sub[ring & ~upper] = theme.highlight if not theme.rounded else (28, 81, 128)
        if variant == "selected":
            sub[draw.ellipse_mask(d, d, r, r, r * 0.35, r * 0.35)] = (33, 161, 33) if theme.rounded else theme.dark
    if w > d + 6:
        _text(img, theme, d + 4, ty, w, ty + th, theme.text, rng, fraction=rng.uniform(0.4, 1.0))


def _dropdown(img, mask, variant, theme, rng):
    h, w = mask.shape
    mask[:] = True
    disabled = variant == "disabled"
    _sunken_box(img, theme, 0, 0, w, h, theme.face if disabled else theme.input_bg, rng)
    inset = 2 if theme.sketch else max(theme.bevel, 1)
    bw = int(np.clip(h - 2 * inset, 6, 17))
    bx = w - inset - bw
    arrow = theme.shadow if disabled else theme.dark
    if theme.sketch:
        draw.sketch_line(img, bx, 2, bx, h - 3, theme.dark, rng)
        draw.sketch_line(img, bx + 2, h // 2 - 2, bx + bw // 2, h // 2 + 2, arrow, rng)
        draw.sketch_line(img, bx + bw // 2, h // 2 + 2, bx + bw - 2, h // 2 - 2, arrow, rng)
    else:
        if theme.rounded:
            draw.fill(img, bx, inset, bx + bw, h - inset, (193, 211, 251))
        else:
            draw.fill(img, bx, inset, bx + bw, h - inset, theme.face)
            draw.bevel(img, bx, inset, bx + bw, h - inset, theme, raised=True)
        draw.triangle(img, bx + bw // 2, h // 2, max(bw // 4, 2), arrow, "down")
    th = _text_height(h, 0.5)
    _text(img, theme, 4, (h - th) // 2, bx - 2, (h - th) // 2 + th, theme.shadow if disabled else theme.text, rng,
          fraction=rng.uniform(0.3, 0.9))


def _list_table(img, mask, variant, theme, rng):
    h, w = mask.shape
    mask[:] = True
    _sunken_box(img, theme, 0, 0, w, h, theme.input_bg, rng)
    inset = 3
    rh = int(np.clip(round(h / 8), 9, 14))
    th = _text_height(rh, 0.6)
    y = inset
    if variant == "grid":
        cols = int(rng.integers(2, 5))
        xs = np.linspace(inset, w - inset, cols + 1).astype(int)
        for c in range(cols):
            if theme.sketch:
                draw.sketch_rect(img, xs[c], y, xs[c + 1], y + rh + 2, theme.dark, rng)
            else:
                draw.fill(img, xs[c], y, xs[c + 1], y + rh + 2, theme.face)
                draw.bevel(img, xs[c], y, xs[c + 1], y + rh + 2, theme, raised=True)
            _text(img, theme, xs[c] + 3, y + (rh + 2 - th) // 2, xs[c + 1] - 3, y + (rh + 2 - th) // 2 + th,
                  theme.text, rng, bold=True, fraction=0.6)
        y += rh + 2
        line = theme.dark if theme.sketch else theme.shadow
        while y + rh <= h - inset:
            for c in range(cols):
                _text(img, theme, xs[c] + 3, y + (rh - th) // 2, xs[c + 1] - 3, y + (rh - th) // 2 + th,
                      theme.text, rng, fraction=rng.uniform(0.3, 0.9))
            y += rh
            if theme.sketch:
                draw.sketch_line(img, inset, y - 1, w - inset - 1, y - 1, line, rng)
            else:
                draw.fill(img, inset, y - 1, w - inset, y, line)
        if not theme.sketch:
            for x in xs[1:-1]:
                draw.fill(img, x, inset, x + 1, h - inset, line)
        return
    rows = max((h - 2 * inset) // rh, 1)
    selected = int(rng.integers(-1, rows))
    for r in range(rows):
        if y + rh > h - inset + 1:
            break
        color = theme.text
        if r == selected and not theme.sketch:
            draw.fill(img, inset, y, w - inset, y + rh, theme.selection)
            color = theme.title_text
        _text(img, theme, inset + 3, y + (rh - th) // 2, w - inset - 3, y + (rh - th) // 2 + th, color, rng,
              fraction=rng.uniform(0.3, 0.95))
        y += rh


def _label(img, mask, variant, theme, rng):
    h, w = mask.shape
    bold = variant == "caption"
    lines = 2 if h >= 18 else 1
    th = int(np.clip((h - 2) // lines - (2 if lines > 1 else 0), 3, 12))
    boxes = []
    y = (h - (lines * th + (lines - 1) * 3)) // 2
    for _ in range(lines):
        boxes += _text(img, theme, 1, y, w - 1, y + th, theme.text, rng, bold=bold, fraction=rng.uniform(0.5, 1.0))
        y += th + 3
    if bold and boxes and not theme.sketch:
        x0, _, _, y1 = boxes[0]
        x1 = boxes[-1][2]
        draw.fill(img, x0, min(y1, h - 1), x1, min(y1 + 1, h), theme.text)
        boxes.append((x0, min(y1, h - 1), x1, min(y1 + 1, h)))
    for x0, y0, x1, y1 in boxes:
        mask[max(y0, 0) : y1, max(x0, 0) : x1] = True
    if not mask.any():
        mask[h // 3 : h - h // 3 or h, 1 : w - 1] = True


def _scrollbar(img, mask, variant, theme, rng):
    h, w = mask.shape
    mask[:] = True
    vertical = variant == "vertical"
    if not vertical:
        img_t = np.ascontiguousarray(img.transpose(1, 0, 2))
        _scrollbar_vertical(img_t, theme, rng, horizontal=True)
        img[:] = img_t.transpose(1, 0, 2)
    else:
        _scrollbar_vertical(img, theme, rng, horizontal=False)


def _scrollbar_vertical(img, theme, rng, horizontal):
    h, w = img.shape[:2]
    b = w
    thumb_len = int(rng.integers(min(b, max(h - 2 * b, 1)), max(h - 2 * b, b) + 1)) if h > 2 * b else 0
    if theme.sketch:
        draw.sketch_rect(img, 0, 0, w, h, theme.dark, rng)
        draw.sketch_line(img, 1, b, w - 2, b, theme.dark, rng)
        draw.sketch_line(img, 1, h - b - 1, w - 2, h - b - 1, theme.dark, rng)
        if thumb_len and h - 2 * b - thumb_len > 0:
            ty = b + int(rng.integers(0, h - 2 * b - thumb_len + 1))
            draw.sketch_rect(img, 3, ty, w - 3, ty + thumb_len, theme.dark, rng)
        return
    if theme.rounded:
        draw.fill(img, 0, 0, w, h, (243, 241, 236))
    else:
        draw.fill(img, 0, 0, w, h, theme.face)
        img[::2, ::2] = theme.highlight
        img[1::2, 1::2] = theme.highlight
    first, second = ("left", "right") if horizontal else ("up", "down")
    for y0, direction in ((0, first), (h - b, second)):
        if theme.rounded:
            draw.fill(img, 0, y0, w, y0 + b, (193, 211, 251))
            draw.outline(img, 0, y0, w, y0 + b, theme.highlight)
        else:
            draw.fill(img, 0, y0, w, y0 + b, theme.face)
            draw.bevel(img, 0, y0, w, y0 + b, theme, raised=True)
        # the image may be transposed, so arrows point along the drawn axis
        arrow = {"left": "up", "right": "down"}.get(direction, direction)
        draw.triangle(img, w // 2, y0 + b // 2, max(b // 4, 2), theme.dark, arrow)
    if thumb_len and h - 2 * b - thumb_len > 0:
        ty = b + int(rng.integers(0, h - 2 * b - thumb_len + 1))
        if theme.rounded:
            draw.fill(img, 1, ty, w - 1, ty + thumb_len, (193, 211, 251))
            draw.outline(img, 1, ty, w - 1, ty + thumb_len, (120, 150, 220))
        else:
            draw.fill(img, 0, ty, w, ty + thumb_len, theme.face)
            draw.bevel(img, 0, ty, w, ty + thumb_len, theme, raised=True)


_ICON_COLORS = ((200, 40, 40), (40, 140, 40), (40, 70, 200), (220, 180, 20), (150, 50, 170), (20, 160, 170))


def _icon(img, mask, variant, theme, rng):
    h, w = mask.shape
    if variant == "image":
        shape = draw.ellipse_mask(h, w, w / 2, h / 2, w / 2, h / 2)
        mask[:] = shape
        if theme.sketch:
            draw.sketch_ellipse(img, w / 2, h / 2, w / 2 - 2, h / 2 - 2, theme.dark, rng)
            return
        color = np.asarray(_ICON_COLORS[int(rng.integers(len(_ICON_COLORS)))], float)
        yy = np.linspace(1.3, 0.7, h)[:, None, None]
        shade = np.clip(color[None, None, :] * yy, 0, 255).astype(np.uint8)
        img[shape] = np.broadcast_to(shade, (h, w, 3))[shape]
        edge = shape & ~draw.ellipse_mask(h, w, w / 2, h / 2, w / 2 - 1.2, h / 2 - 1.2)
        img[edge] = (color * 0.45).astype(np.uint8)
        return
    fold = max(min(h, w) // 3, 3)
    yy, xx = np.mgrid[:h, :w]
    page = ~((xx - (w - fold)) > yy)
    mask[:] = page
    if theme.sketch:
        draw.sketch_line(img, 1, 1, w - fold, 1, theme.dark, rng)
        draw.sketch_line(img, w - fold, 1, w - 2, fold, theme.dark, rng)
        draw.sketch_line(img, w - 2, fold, w - 2, h - 2, theme.dark, rng)
        draw.sketch_line(img, w - 2, h - 2, 1, h - 2, theme.dark, rng)
        draw.sketch_line(img, 1, h - 2, 1, 1, theme.dark, rng)
        return
    img[page] = theme.input_bg
    border = page & ~(np.pad(page, 1, constant_values=False)[2:, 1:-1] & np.pad(page, 1, constant_values=False)[:-2, 1:-1]
                      & np.pad(page, 1, constant_values=False)[1:-1, 2:] & np.pad(page, 1, constant_values=False)[1:-1, :-2])
    img[border] = theme.dark
    y = fold + 1
    while y + 2 < h - 2:
        draw.fill(img, 3, y, w - 3 - int(rng.integers(0, max(w // 3, 1))), y + 1, theme.shadow)
        y += 3


_RENDERERS = {
    1: _frame,
    2: _button,
    3: _text_input,
    4: _checkbox,
    5: _radio,
    6: _dropdown,
    7: _list_table,
    8: _label,
    9: _scrollbar,
    10: _icon,
}


def render_widget(wclass: WidgetClass, theme: Theme, size, rng: np.random.Generator):
    """Render one widget of ``size = (w, h)``.

    Returns ``(patch, mask)``: an (h, w, 3) uint8 image and an (h, w) boolean
    array marking exactly the pixels the widget owns. Pixels outside the mask
    are left at the theme background and must not be blitted.
    """
    if wclass.coarse_id == 0:
        raise ValueError("background is not a renderable widget")
    w, h = (int(v) for v in size)
    (min_w, min_h), (max_w, max_h) = size_range(wclass)
    if not (min_w <= w <= max_w and min_h <= h <= max_h):
        raise ValueError(
            f"{wclass.name} size {w}x{h} outside [{min_w}x{min_h}, {max_w}x{max_h}]"
        )
    patch = np.empty((h, w, 3), dtype=np.uint8)
    patch[:] = theme.background
    mask = np.zeros((h, w), dtype=bool)
    _RENDERERS[wclass.coarse_id](patch, mask, _variant(wclass), theme, rng)
    # strokes that strayed outside the owned pixels are dropped, as they would be when blitted
    patch[~mask] = theme.background
    return patch, mask
