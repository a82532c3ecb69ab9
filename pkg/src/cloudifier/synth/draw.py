"""Raster primitives on (h, w, 3) uint8 images. All coordinates are clipped."""

from __future__ import annotations

import numpy as np

# bounded deviation of sketch strokes from their ideal path, in pixels
WOBBLE_LIMIT = 2.0


def fill(img, x0, y0, x1, y1, color):
    """Fill the half-open box [x0, x1) x [y0, y1)."""
    h, w = img.shape[:2]
    x0, x1 = max(int(x0), 0), min(int(x1), w)
    y0, y1 = max(int(y0), 0), min(int(y1), h)
    if x0 < x1 and y0 < y1:
        img[y0:y1, x0:x1] = color


def outline(img, x0, y0, x1, y1, color, t=1):
    fill(img, x0, y0, x1, y0 + t, color)
    fill(img, x0, y1 - t, x1, y1, color)
    fill(img, x0, y0, x0 + t, y1, color)
    fill(img, x1 - t, y0, x1, y1, color)


def bevel(img, x0, y0, x1, y1, theme, raised=True):
    """Classic 3-D edge: ``theme.bevel`` rings of light/dark lines."""
    if theme.bevel <= 0:
        return
    if raised:
        rings = [(theme.highlight, theme.dark), (theme.light, theme.shadow)]
    else:
        rings = [(theme.shadow, theme.highlight), (theme.dark, theme.light)]
    for i, (top_left, bottom_right) in enumerate(rings[: theme.bevel]):
        a0, b0, a1, b1 = x0 + i, y0 + i, x1 - i, y1 - i
        if a1 - a0 < 2 or b1 - b0 < 2:
            break
        fill(img, a0, b1 - 1, a1, b1, bottom_right)
        fill(img, a1 - 1, b0, a1, b1, bottom_right)
        fill(img, a0, b0, a1 - 1, b0 + 1, top_left)
        fill(img, a0, b0, a0 + 1, b1 - 1, top_left)


def gradient(img, x0, y0, x1, y1, c0, c1, horizontal=True):
    h, w = img.shape[:2]
    x0, x1 = max(int(x0), 0), min(int(x1), w)
    y0, y1 = max(int(y0), 0), min(int(y1), h)
    if x0 >= x1 or y0 >= y1:
        return
    n = (x1 - x0) if horizontal else (y1 - y0)
    t = np.linspace(0.0, 1.0, n)[:, None]
    ramp = np.rint((1 - t) * np.asarray(c0, float) + t * np.asarray(c1, float)).astype(np.uint8)
    if horizontal:
        img[y0:y1, x0:x1] = ramp[None, :, :]
    else:
        img[y0:y1, x0:x1] = ramp[:, None, :]


def ellipse_mask(h, w, cx, cy, rx, ry):
    yy, xx = np.ogrid[:h, :w]
    return ((xx + 0.5 - cx) / max(rx, 0.5)) ** 2 + ((yy + 0.5 - cy) / max(ry, 0.5)) ** 2 <= 1.0


def rounded_rect_mask(h, w, r):
    mask = np.ones((h, w), dtype=bool)
    r = min(r, h // 2, w // 2)
    if r <= 0:
        return mask
    corner = ~ellipse_mask(r, r, r, r, r, r)
    mask[:r, :r] &= ~corner
    mask[:r, w - r :] &= ~corner[:, ::-1]
    mask[h - r :, :r] &= ~corner[::-1, :]
    mask[h - r :, w - r :] &= ~corner[::-1, ::-1]
    return mask


def triangle(img, cx, cy, size, color, direction="down"):
    """Small filled arrow head centred at (cx, cy)."""
    for i in range(size):
        half = size - 1 - i
        if direction == "down":
            fill(img, cx - half, cy - size // 2 + i, cx + half + 1, cy - size // 2 + i + 1, color)
        elif direction == "up":
            fill(img, cx - half, cy + size // 2 - i, cx + half + 1, cy + size // 2 - i + 1, color)
        elif direction == "right":
            fill(img, cx - size // 2 + i, cy - half, cx - size // 2 + i + 1, cy + half + 1, color)
        else:
            fill(img, cx + size // 2 - i, cy - half, cx + size // 2 - i + 1, cy + half + 1, color)


def check_mark(img, x0, y0, size, color):
    for i in range(size):
        y = y0 + size // 2 + i if i < size // 3 else y0 + size // 2 + size // 3 - (i - size // 3)
        fill(img, x0 + i, y, x0 + i + 1, y + 2, color)


def text(img, x0, y0, x1, y1, color, rng, bold=False, fraction=1.0):
    """Pseudo-glyph text: words of random stroke patterns inside a box.

    Returns the list of word boxes (x0, y0, x1, y1) actually drawn.
    """
    gh = int(y1 - y0)
    if gh < 3 or x1 - x0 < 3:
        return []
    gw = max(2, int(round(gh * 0.6)))
    t = 2 if bold and gw >= 4 else 1
    limit = x0 + max(int((x1 - x0) * fraction), gw)
    words, x = [], int(x0)
    while x + gw <= min(limit, x1):
        n = int(rng.integers(2, 8))
        start = x
        for _ in range(n):
            if x + gw > x1:
                break
            strokes = rng.random(5) < 0.55
            if strokes.sum() < 2:
                strokes[rng.choice(5, size=2, replace=False)] = True
            if strokes[0]:
                fill(img, x, y0, x + t, y1, color)
            if strokes[1]:
                fill(img, x + gw - t, y0, x + gw, y1, color)
            if strokes[2]:
                fill(img, x, y0, x + gw, y0 + t, color)
            if strokes[3]:
                fill(img, x, y0 + gh // 2, x + gw, y0 + gh // 2 + t, color)
            if strokes[4]:
                fill(img, x, y1 - t, x + gw, y1, color)
            x += gw + 1
        if x > start:
            words.append((start, int(y0), x - 1, int(y1)))
        x += gw
    return words


def _plot(img, xs, ys, color, thickness):
    h, w = img.shape[:2]
    xs = np.rint(xs).astype(int)
    ys = np.rint(ys).astype(int)
    for dy in range(thickness):
        for dx in range(thickness):
            px, py = xs + dx, ys + dy
            ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
            img[py[ok], px[ok]] = color


def wobble(n, rng):
    """Offsets along a stroke: sinusoid plus random walk, bounded by WOBBLE_LIMIT."""
    t = np.linspace(0.0, 1.0, max(n, 2))
    amp = rng.uniform(0.3, 1.0)
    freq = rng.uniform(0.5, 2.5)
    phase = rng.uniform(0, 2 * np.pi)
    walk = np.cumsum(rng.uniform(-0.35, 0.35, size=t.shape))
    offset = amp * np.sin(2 * np.pi * freq * t + phase) + walk
    return np.clip(offset, -WOBBLE_LIMIT, WOBBLE_LIMIT)


def sketch_line(img, x0, y0, x1, y1, color, rng, thickness=1):
    length = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    t = np.linspace(0.0, 1.0, length)
    xs = x0 + (x1 - x0) * t
    ys = y0 + (y1 - y0) * t
    off = wobble(length, rng)
    norm = max(np.hypot(x1 - x0, y1 - y0), 1e-9)
    xs = xs - off * (y1 - y0) / norm
    ys = ys + off * (x1 - x0) / norm
    _plot(img, xs, ys, color, thickness)


def sketch_rect(img, x0, y0, x1, y1, color, rng, thickness=1):
    """Hand-drawn rectangle through the corners of [x0, x1-1] x [y0, y1-1]."""
    x1, y1 = x1 - 1, y1 - 1
    sketch_line(img, x0, y0, x1, y0, color, rng, thickness)
    sketch_line(img, x1, y0, x1, y1, color, rng, thickness)
    sketch_line(img, x1, y1, x0, y1, color, rng, thickness)
    sketch_line(img, x0, y1, x0, y0, color, rng, thickness)


def sketch_ellipse(img, cx, cy, rx, ry, color, rng, thickness=1):
    n = int(2 * np.pi * max(rx, ry)) + 8
    a = np.linspace(0, 2 * np.pi, n)
    r = 1.0 + wobble(n, rng) / max(rx, ry, 1.0) * 0.5
    _plot(img, cx + rx * r * np.cos(a) - 0.5, cy + ry * r * np.sin(a) - 0.5, color, thickness)


def sketch_text(img, x0, y0, x1, y1, color, rng, fraction=1.0):
    """Scribbled text line: a wavy stroke per word. Returns word boxes."""
    gh = int(y1 - y0)
    if gh < 3 or x1 - x0 < 4:
        return []
    words, x = [], int(x0)
    limit = x0 + max(int((x1 - x0) * fraction), 4)
    cy = (y0 + y1 - 1) / 2.0
    while x + 4 <= min(limit, x1):
        wlen = int(min(rng.integers(gh, 4 * gh + 1), x1 - x))
        xs = np.arange(x, x + wlen, dtype=float)
        ys = cy + (gh / 2.0 - 0.5) * np.sin(xs * rng.uniform(0.8, 1.6) + rng.uniform(0, 6.28))
        _plot(img, xs, np.clip(ys, y0, y1 - 1), color, 1)
        words.append((x, int(y0), x + wlen, int(y1)))
        x += wlen + max(gh // 2, 2)
    return words
