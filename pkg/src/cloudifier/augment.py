"""Paired image/label augmentation and dataset expansion.

Images are resampled bilinearly, label and instance maps with nearest
neighbour from the same inverse affine map, so no label value is ever
invented. Out-of-bounds areas become background (class 0) and the theme
background colour.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .synth.themes import THEMES


@dataclass(frozen=True)
class AugmentPolicy:
    rotation_range: float = 12.0  # degrees, symmetric
    shift_range: float = 0.10  # fraction of H/W, symmetric
    channel_shift_range: int = 25  # 8-bit delta, symmetric
    flip: bool = True  # horizontal flips allowed
    flip_probability: float = 0.5
    rescale_min: float = 0.85
    rescale_max: float = 1.15
    crop: int = 352  # square output side; clipped to the source size
    expansion_factor: int = 7
    augment_natural: bool = True
    augment_artificial: bool = False

    def validate(self) -> None:
        if min(self.rotation_range, self.shift_range, self.channel_shift_range) < 0:
            raise ValueError("augmentation ranges must be non-negative")
        if not 0 < self.rescale_min <= self.rescale_max:
            raise ValueError("rescale interval must be positive and ordered")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must lie in [0, 1]")
        if self.expansion_factor < 1:
            raise ValueError("expansion_factor must be >= 1")
        if self.crop < 1:
            raise ValueError("crop must be positive")

    def applies_to(self, kind: str) -> bool:
        return self.augment_natural if kind == "natural" else self.augment_artificial

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AugmentPolicy":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"policy line {n}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"policy line {n}: unknown key {key!r}")
            kind = types[key]
            if kind in ("bool", bool):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"policy line {n}: {key} needs a boolean")
                values[key] = value.lower() in ("true", "1", "yes")
            elif kind in ("int", int):
                values[key] = int(value)
            else:
                values[key] = float(value)
        policy = cls(**values)
        policy.validate()
        return policy

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "AugmentPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


@dataclass
class AugmentedPair:
    image: np.ndarray
    dense_labels: np.ndarray
    instance_map: Optional[np.ndarray] = None
    provenance: tuple = ()  # (source index, transform parameters)
    scene_label: int = 0
    theme: str = "win95"

    @property
    def kind(self) -> str:
        return "natural" if self.theme == "sketch" else "artificial"


def _fill_color(obs) -> np.ndarray:
    theme = THEMES.get(getattr(obs, "theme", None))
    if theme is not None:
        return np.asarray(theme.background, dtype=np.float64)
    return obs.image[0, 0].astype(np.float64)


def _pair(obs, image, labels, instances, provenance):
    return AugmentedPair(
        image=image,
        dense_labels=labels,
        instance_map=instances,
        provenance=provenance,
        scene_label=int(getattr(obs, "scene_label", 0)),
        theme=getattr(obs, "theme", "win95"),
    )


def forward_matrix(shape, rotation=0.0, shift=(0.0, 0.0), scale=1.0, flip=False):
    """Affine map (3x3, on (x, y, 1)) from source to output pixel coordinates.

    Order: horizontal flip, scale, rotate (all about the image centre), then
    shift by ``(dx, dy)`` pixels. Positive rotation is counter-clockwise on
    screen.
    """
    h, w = shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    a = np.deg2rad(rotation)
    c, s = np.cos(a), np.sin(a)
    center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    back = np.array([[1, 0, cx + shift[0]], [0, 1, cy + shift[1]], [0, 0, 1]], dtype=np.float64)
    flip_m = np.diag([-1.0 if flip else 1.0, 1.0, 1.0])
    # y points down, so a counter-clockwise screen rotation uses -sin in the y row
    rot = np.array([[c, s, 0], [-s, c, 0], [0, 0, 1]], dtype=np.float64)
    scale_m = np.diag([scale, scale, 1.0])
    return back @ rot @ scale_m @ flip_m @ center


def geometric_transform(obs, rotation=0.0, shift=(0.0, 0.0), scale=1.0, flip=False, source_index=-1):
    """Apply one affine transform to image, labels and instance map together."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    image = np.asarray(obs.image)
    labels = np.asarray(obs.dense_labels)
    instances = getattr(obs, "instance_map", None)
    params = {"rotation": float(rotation), "shift": (float(shift[0]), float(shift[1])), "scale": float(scale), "flip": bool(flip)}
    if rotation == 0 and shift[0] == 0 and shift[1] == 0 and scale == 1:
        # pure flips (or nothing) are exact index permutations
        sl = np.s_[:, ::-1] if flip else np.s_[:, :]
        return _pair(
            obs,
            image[sl].copy(),
            labels[sl].copy(),
            None if instances is None else np.asarray(instances)[sl].copy(),
            (source_index, params),
        )
    h, w = labels.shape
    inv = np.linalg.inv(forward_matrix((h, w), rotation, shift, scale, flip))
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    sx = inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2]
    sy = inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]
    coords = np.stack([sy, sx])
    fill = _fill_color(obs)
    out = np.empty_like(image)
    for ch in range(image.shape[2]):
        sampled = ndimage.map_coordinates(image[..., ch].astype(np.float64), coords, order=1, mode="constant", cval=fill[ch])
        out[..., ch] = np.clip(np.rint(sampled), 0, 255).astype(np.uint8)

    def nearest(m):
        return ndimage.map_coordinates(np.asarray(m), coords, order=0, mode="constant", cval=0).astype(np.uint16)

    return _pair(obs, out, nearest(labels), None if instances is None else nearest(instances), (source_index, params))


def channel_shift(image: np.ndarray, deltas: Sequence[int]) -> np.ndarray:
    """Add a per-channel delta, saturating to [0, 255]."""
    image = np.asarray(image)
    deltas = np.asarray(deltas, dtype=np.int32).reshape(1, 1, -1)
    if deltas.shape[2] != image.shape[2]:
        raise ValueError(f"need {image.shape[2]} deltas, got {deltas.shape[2]}")
    return np.clip(image.astype(np.int32) + deltas, 0, 255).astype(np.uint8)


def random_crop(obs, target, rng: np.random.Generator, source_index=-1) -> AugmentedPair:
    """Cut the same ``target = (h, w)`` window out of image, labels and instances."""
    th, tw = target
    h, w = obs.dense_labels.shape
    if h < th or w < tw:
        raise ValueError(f"source {h}x{w} is smaller than crop target {th}x{tw}")
    oy = int(rng.integers(0, h - th + 1))
    ox = int(rng.integers(0, w - tw + 1))
    sl = np.s_[oy : oy + th, ox : ox + tw]
    instances = getattr(obs, "instance_map", None)
    return _pair(
        obs,
        np.asarray(obs.image)[sl].copy(),
        np.asarray(obs.dense_labels)[sl].copy(),
        None if instances is None else np.asarray(instances)[sl].copy(),
        (source_index, {"crop": (ox, oy, tw, th)}),
    )


def sample_params(policy: AugmentPolicy, shape, rng: np.random.Generator) -> dict:
    h, w = shape[:2]
    return {
        "rotation": float(rng.uniform(-policy.rotation_range, policy.rotation_range)),
        "shift": (
            float(rng.uniform(-policy.shift_range, policy.shift_range) * w),
            float(rng.uniform(-policy.shift_range, policy.shift_range) * h),
        ),
        "scale": float(rng.uniform(policy.rescale_min, policy.rescale_max)),
        "flip": bool(policy.flip and rng.random() < policy.flip_probability),
        "channel": [int(v) for v in rng.integers(-policy.channel_shift_range, policy.channel_shift_range + 1, size=3)],
    }


def augment_one(obs, policy: AugmentPolicy, rng: np.random.Generator, source_index=-1) -> AugmentedPair:
    """One random variant: geometry, channel shift, then crop."""
    p = sample_params(policy, obs.dense_labels.shape, rng)
    pair = geometric_transform(obs, p["rotation"], p["shift"], p["scale"], p["flip"], source_index)
    pair.image = channel_shift(pair.image, p["channel"][: pair.image.shape[2]])
    out = _crop_to_policy(pair, policy, rng, source_index)
    out.provenance = (source_index, {**p, **out.provenance[1]})
    return out


def _crop_to_policy(obs, policy, rng, source_index):
    h, w = obs.dense_labels.shape
    target = (min(policy.crop, h), min(policy.crop, w))
    return random_crop(obs, target, rng, source_index)


def expand_dataset(observations, policy: AugmentPolicy, seed: int = 0) -> list:
    """Exactly ``expansion_factor`` outputs per input, grouped by source.

    Each group is the original (cropped if larger than the crop size) followed
    by ``factor - 1`` variants. Observations whose kind the policy does not
    augment contribute identity copies instead, so the count stays exact.
    """
    policy.validate()
    out = []
    for i, obs in enumerate(observations):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        original = _crop_to_policy(obs, policy, rng, i)
        out.append(original)
        active = policy.applies_to(getattr(obs, "kind", "artificial"))
        for _ in range(policy.expansion_factor - 1):
            if active:
                out.append(augment_one(obs, policy, rng, i))
            else:
                out.append(_pair(obs, original.image.copy(), original.dense_labels.copy(),
                                 None if original.instance_map is None else original.instance_map.copy(),
                                 (i, {"identity": True})))
    return out
