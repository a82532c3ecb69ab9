"""Scene composition and meta-batch generation.

A scene is a themed background with widgets blitted in z-order. The dense
label map and the instance map are written by the same blit through the same
exact masks, so they agree with the image and with each other by construction.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from .taxonomy import NUM_COARSE, WidgetClass, fine_classes_of, num_classes
from .themes import Theme, get_theme, theme_for_index
from .widgets import size_range, render_widget

DEFAULT_COUNT = 3072
DEFAULT_SIZE = 352
MAX_VIRTUAL = 1024


@dataclass(frozen=True)
class WidgetInstance:
    wclass: WidgetClass
    bbox: tuple  # (x, y, w, h) in scene pixels
    z_order: int
    seed: int  # drives the style jitter of this widget's render
    instance_id: int = 0


@dataclass
class Observation:
    image: np.ndarray  # (h, w, 3) uint8
    dense_labels: np.ndarray  # (h, w) uint16
    scene_label: int
    instance_map: np.ndarray  # (h, w) uint16, 0 = background
    widgets: tuple = ()
    theme: str = "win95"
    granularity: str = "coarse"

    @property
    def kind(self) -> str:
        return "natural" if self.theme == "sketch" else "artificial"


@dataclass(frozen=True)
class ScenePolicy:
    """Random layout knobs for generated scenes."""

    min_widgets: int = 3
    max_widgets: int = 14
    frame_probability: float = 0.6
    max_coarse: int = NUM_COARSE
    # largest widget extent as a fraction of the scene side
    max_extent: float = 0.6
    avoid_overlap: bool = True
    placement_tries: int = 8
    virtual_scale: tuple = (1.0, 1.25)

    def validate(self) -> None:
        if not 0 <= self.min_widgets <= self.max_widgets:
            raise ValueError("need 0 <= min_widgets <= max_widgets")
        num_classes("coarse", self.max_coarse)
        lo, hi = self.virtual_scale
        if not 1.0 <= lo <= hi:
            raise ValueError("virtual_scale must satisfy 1 <= lo <= hi")


@dataclass
class MetaBatch:
    observations: list
    granularity: str
    seed: int
    theme: str = "mixed"
    size: int = DEFAULT_SIZE
    num_classes: int = NUM_COARSE

    def __len__(self) -> int:
        return len(self.observations)


def _sample_size(rng, wclass, scene_h, scene_w, max_extent):
    (lo_w, lo_h), (hi_w, hi_h) = size_range(wclass)
    cap_w = max(lo_w, min(hi_w, scene_w, int(scene_w * max_extent)))
    cap_h = max(lo_h, min(hi_h, scene_h, int(scene_h * max_extent)))
    if lo_w > scene_w or lo_h > scene_h:
        return None
    return int(rng.integers(lo_w, cap_w + 1)), int(rng.integers(lo_h, cap_h + 1))


def _overlaps(box, others):
    x, y, w, h = box
    for ox, oy, ow, oh in others:
        if x < ox + ow and ox < x + w and y < oy + oh and oy < y + h:
            return True
    return False


def random_layout(rng: np.random.Generator, size, policy: ScenePolicy) -> list:
    """Sample a widget list: an optional window frame, then controls inside it."""
    scene_h, scene_w = size
    widgets = []
    region = (0, 0, scene_w, scene_h)
    if rng.random() < policy.frame_probability:
        frame = fine_classes_of(1)[int(rng.integers(3))]
        (lo_w, lo_h), (hi_w, hi_h) = size_range(frame)
        if lo_w <= scene_w and lo_h <= scene_h:
            fw = int(rng.integers(max(lo_w, scene_w // 2), min(hi_w, scene_w) + 1))
            fh = int(rng.integers(max(lo_h, scene_h // 2), min(hi_h, scene_h) + 1))
            fx = int(rng.integers(0, scene_w - fw + 1))
            fy = int(rng.integers(0, scene_h - fh + 1))
            widgets.append((frame, (fx, fy, fw, fh)))
            top = 4 + int(np.clip(round(fh * 0.12), 9, 20))
            region = (fx + 4, fy + top, fw - 8, fh - top - 4)
    controls = list(range(2, policy.max_coarse))
    if not controls:
        controls = [1]
    placed = []
    count = int(rng.integers(policy.min_widgets, policy.max_widgets + 1))
    for _ in range(count):
        coarse = controls[int(rng.integers(len(controls)))]
        variants = fine_classes_of(coarse)
        wclass = variants[int(rng.integers(len(variants)))]
        dims = _sample_size(rng, wclass, scene_h, scene_w, policy.max_extent)
        if dims is None:
            continue
        w, h = dims
        rx, ry, rw, rh = region
        if w > rw or h > rh:
            rx, ry, rw, rh = 0, 0, scene_w, scene_h
        box = None
        for _ in range(max(policy.placement_tries, 1)):
            x = rx + int(rng.integers(0, rw - w + 1))
            y = ry + int(rng.integers(0, rh - h + 1))
            box = (x, y, w, h)
            if not policy.avoid_overlap or not _overlaps(box, placed):
                break
        placed.append(box)
        widgets.append((wclass, box))
    return [
        WidgetInstance(wclass, box, z_order=z, seed=int(rng.integers(1 << 62)))
        for z, (wclass, box) in enumerate(widgets)
    ]


def _scene_label(instance_map, widgets, granularity) -> int:
    if not widgets:
        return 0
    area = np.bincount(instance_map.ravel(), minlength=len(widgets) + 1)[1:]
    if not area.any():
        return 0
    # argmax picks the lowest instance id among ties
    return widgets[int(np.argmax(area))].wclass.label(granularity)


def compose_scene(
    widgets: Optional[Sequence[WidgetInstance]],
    theme,
    size=(DEFAULT_SIZE, DEFAULT_SIZE),
    rng: Optional[np.random.Generator] = None,
    granularity: str = "coarse",
    policy: Optional[ScenePolicy] = None,
) -> Observation:
    """Compose one scene of ``size = (h, w)``.

    ``widgets=None`` samples a random layout from ``policy`` using ``rng``.
    Widgets are blitted in ascending z-order (stable for ties); a widget's
    instance id is its 1-based rank in that order. Anything past the scene
    edge is clipped.
    """
    if isinstance(theme, str):
        theme = get_theme(theme)
    num_classes(granularity)
    h, w = (int(v) for v in size)
    if widgets is None:
        policy = policy or ScenePolicy()
        policy.validate()
        rng = rng if rng is not None else np.random.default_rng()
        widgets = random_layout(rng, (h, w), policy)
    ordered = sorted(widgets, key=lambda wi: wi.z_order)
    if len(ordered) > 65535:
        raise ValueError("at most 65535 instances per scene")
    image = np.empty((h, w, 3), dtype=np.uint8)
    image[:] = theme.background
    labels = np.zeros((h, w), dtype=np.uint16)
    instances = np.zeros((h, w), dtype=np.uint16)
    final = []
    for inst_id, wi in enumerate(ordered, start=1):
        x, y, bw, bh = (int(v) for v in wi.bbox)
        patch, mask = render_widget(wi.wclass, theme, (bw, bh), np.random.default_rng(wi.seed))
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + bw, w), min(y + bh, h)
        if x0 < x1 and y0 < y1:
            m = mask[y0 - y : y1 - y, x0 - x : x1 - x]
            image[y0:y1, x0:x1][m] = patch[y0 - y : y1 - y, x0 - x : x1 - x][m]
            labels[y0:y1, x0:x1][m] = wi.wclass.label(granularity)
            instances[y0:y1, x0:x1][m] = inst_id
        final.append(replace(wi, instance_id=inst_id))
    final = tuple(final)
    return Observation(
        image=image,
        dense_labels=labels,
        scene_label=_scene_label(instances, final, granularity),
        instance_map=instances,
        widgets=final,
        theme=theme.name,
        granularity=granularity,
    )


def crop_observation(obs: Observation, x: int, y: int, w: int, h: int) -> Observation:
    """Cut a window, dropping widgets with no visible pixel left and renumbering the rest."""
    inst = obs.instance_map[y : y + h, x : x + w]
    visible = np.zeros(len(obs.widgets) + 1, dtype=bool)
    visible[np.unique(inst)] = True
    visible[0] = False
    lut = np.zeros(len(obs.widgets) + 1, dtype=np.uint16)
    lut[visible] = np.arange(1, int(visible.sum()) + 1, dtype=np.uint16)
    kept = []
    for wi in obs.widgets:
        if not visible[wi.instance_id]:
            continue
        bx, by, bw, bh = wi.bbox
        cx0, cy0 = max(bx - x, 0), max(by - y, 0)
        cx1, cy1 = min(bx + bw - x, w), min(by + bh - y, h)
        kept.append(replace(wi, bbox=(cx0, cy0, cx1 - cx0, cy1 - cy0), instance_id=int(lut[wi.instance_id])))
    inst = lut[inst]
    kept = tuple(kept)
    return Observation(
        image=obs.image[y : y + h, x : x + w].copy(),
        dense_labels=obs.dense_labels[y : y + h, x : x + w].copy(),
        scene_label=_scene_label(inst, kept, obs.granularity),
        instance_map=inst,
        widgets=kept,
        theme=obs.theme,
        granularity=obs.granularity,
    )


def observation_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, index), so order of generation never matters."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def generate_observation(
    index: int,
    seed: int,
    theme: str = "mixed",
    granularity: str = "coarse",
    size: int = DEFAULT_SIZE,
    policy: Optional[ScenePolicy] = None,
) -> Observation:
    """Render a larger virtual screen, then crop a ``size`` x ``size`` window."""
    policy = policy or ScenePolicy()
    rng = observation_rng(seed, index)
    lo, hi = policy.virtual_scale
    vh, vw = (min(max(int(round(size * rng.uniform(lo, hi))), size), max(MAX_VIRTUAL, size)) for _ in range(2))
    full = compose_scene(None, theme_for_index(theme, index), (vh, vw), rng, granularity, policy)
    ox = int(rng.integers(0, vw - size + 1))
    oy = int(rng.integers(0, vh - size + 1))
    return crop_observation(full, ox, oy, size, size)


def _generate_one(args):
    return generate_observation(*args)


def iter_observations(
    count: int = DEFAULT_COUNT,
    theme: str = "mixed",
    granularity: str = "coarse",
    seed: int = 0,
    size: int = DEFAULT_SIZE,
    policy: Optional[ScenePolicy] = None,
    workers: int = 1,
    start: int = 0,
) -> Iterator[Observation]:
    """Yield observations ``start .. start+count-1`` in index order without holding them all."""
    if count <= 0:
        raise ValueError("count must be positive")
    if theme != "mixed":
        get_theme(theme)
    policy = policy or ScenePolicy()
    policy.validate()
    jobs = ((i, seed, theme, granularity, size, policy) for i in range(start, start + count))
    if workers <= 1:
        for job in jobs:
            yield _generate_one(job)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_generate_one, jobs, chunksize=8)


def generate_meta_batch(
    count: int = DEFAULT_COUNT,
    theme: str = "mixed",
    granularity: str = "coarse",
    seed: int = 0,
    size: int = DEFAULT_SIZE,
    max_coarse: int = NUM_COARSE,
    policy: Optional[ScenePolicy] = None,
    workers: int = 1,
) -> MetaBatch:
    """Generate a whole batch in memory.

    The default 3072 x 352 x 352 batch needs about 2.7 GB; for that size
    stream with :func:`iter_observations` (the CLI writes files that way).
    """
    policy = replace(policy or ScenePolicy(), max_coarse=max_coarse)
    obs = list(iter_observations(count, theme, granularity, seed, size, policy, workers))
    return MetaBatch(obs, granularity, seed, theme, size, num_classes(granularity, max_coarse))
