"""Handcrafted augmentation primitives and pipeline composition.

All primitives map a [0,1]-valued C x H x W array to another one of the
configured output shape, consuming randomness only from the Generator they
are handed. A Pipeline applies its transforms left to right, each gated by
its own probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

KINDS = ("HFLIP", "RRCROP", "COLOR_JITTER", "RANDOM_ERASE",
         "RANDAUGMENT_LITE", "RESIZE")


def _clip01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def bilinear_resize(x: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Half-pixel-center bilinear resampling of a C x H x W array."""
    c, h, w = x.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return x.copy()
    ys = (np.arange(oh) + 0.5) * h / oh - 0.5
    xs = (np.arange(ow) + 0.5) * w / ow - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(int)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = x[:, y0][:, :, x0] * (1 - wx) + x[:, y0][:, :, x1] * wx
    bot = x[:, y1][:, :, x0] * (1 - wx) + x[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


# ---------------------------------------------------------------------------
# Primitives


def hflip(x: np.ndarray) -> np.ndarray:
    return x[:, :, ::-1].copy()


def rrcrop(x: np.ndarray, scale: tuple[float, float],
           aspect: tuple[float, float], out_hw: tuple[int, int],
           rng: np.random.Generator) -> np.ndarray:
    """Random resized crop: area fraction uniform in ``scale``, aspect ratio
    uniform in ``aspect``, crop clamped to image bounds, bilinear resize."""
    if scale[1] < scale[0] or aspect[1] < aspect[0]:
        raise ValidationError("range upper bound below lower bound")
    _, h, w = x.shape
    area = rng.uniform(*scale) * h * w
    ratio = rng.uniform(*aspect)  # width / height
    cw = int(np.clip(round(np.sqrt(area * ratio)), 1, w))
    ch = int(np.clip(round(np.sqrt(area / ratio)), 1, h))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    return bilinear_resize(x[:, y0 : y0 + ch, x0 : x0 + cw], out_hw)


def color_jitter(x: np.ndarray, magnitude: float, sub_p: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Brightness / contrast / saturation, each hit independently with
    probability ``sub_p``, multiplicative factor uniform in [1-m, 1+m]."""
    if magnitude < 0:
        raise ValidationError("magnitude must be >= 0")
    out = x.astype(np.float64).copy()
    if rng.random() < sub_p:  # brightness
        out = out * rng.uniform(1 - magnitude, 1 + magnitude)
    if rng.random() < sub_p:  # contrast about the image mean
        f = rng.uniform(1 - magnitude, 1 + magnitude)
        out = out.mean() + f * (out - out.mean())
    if rng.random() < sub_p:  # saturation about the per-pixel gray value
        f = rng.uniform(1 - magnitude, 1 + magnitude)
        gray = out.mean(axis=0, keepdims=True)
        out = gray + f * (out - gray)
    return _clip01(out)


def random_erase(x: np.ndarray, p: float, area: tuple[float, float],
                 rng: np.random.Generator,
                 aspect: tuple[float, float] = (0.3, 3.3)) -> np.ndarray:
    """With probability p, fill a random rectangle with uniform noise."""
    if area[1] < area[0]:
        raise ValidationError("area range upper bound below lower bound")
    if rng.random() >= p:
        return x.copy()
    c, h, w = x.shape
    frac = rng.uniform(*area)
    ratio = rng.uniform(*aspect)
    ew = int(np.clip(round(np.sqrt(frac * h * w * ratio)), 1, w))
    eh = int(np.clip(round(np.sqrt(frac * h * w / ratio)), 1, h))
    y0 = int(rng.integers(0, h - eh + 1))
    x0 = int(rng.integers(0, w - ew + 1))
    out = x.copy()
    out[:, y0 : y0 + eh, x0 : x0 + ew] = rng.random((c, eh, ew))
    return out


_RAL_OPS = ("hflip", "rotate90", "invert", "brightness", "contrast", "cutout")


def randaugment_lite(x: np.ndarray, magnitude_mean: float, magnitude_std: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Two distinct distortions from a 6-op catalog, shared-magnitude style:
    each op draws magnitude ~ N(mean, std) clipped to [0, 10] and maps it
    linearly to its intensity t = magnitude / 10."""
    if magnitude_mean < 0:
        raise ValidationError("magnitude must be >= 0")
    ops = rng.choice(len(_RAL_OPS), size=2, replace=False)
    out = x.astype(np.float64).copy()
    for op_i in ops:
        t = np.clip(rng.normal(magnitude_mean, magnitude_std), 0.0, 10.0) / 10.0
        op = _RAL_OPS[op_i]
        if op == "hflip":
            out = hflip(out)
        elif op == "rotate90":
            out = np.ascontiguousarray(np.rot90(out, k=1, axes=(1, 2)))
        elif op == "invert":
            out = (1 - t) * out + t * (1.0 - out)
        elif op == "brightness":
            out = out * (1.0 - 0.5 * t)
        elif op == "contrast":
            mu = out.mean()
            out = mu + (1.0 - 0.5 * t) * (out - mu)
        elif op == "cutout":
            c, h, w = out.shape
            side = max(1, int(round(0.5 * t * min(h, w))))
            y0 = int(rng.integers(0, h - side + 1))
            x0 = int(rng.integers(0, w - side + 1))
            out[:, y0 : y0 + side, x0 : x0 + side] = 0.5
    return _clip01(out)


# ---------------------------------------------------------------------------
# Pipeline


_DEFAULTS = {
    "HFLIP": {},
    "RRCROP": {"scale": (0.08, 1.0), "aspect": (0.75, 4.0 / 3.0), "out_hw": None},
    "COLOR_JITTER": {"magnitude": 0.4, "sub_p": 0.4},
    "RANDOM_ERASE": {"area": (0.02, 0.33)},
    "RANDAUGMENT_LITE": {"magnitude_mean": 9.0, "magnitude_std": 0.5},
    "RESIZE": {"out_hw": None},
}


@dataclass(frozen=True)
class Transform:
    kind: str
    p: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown transform kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"transform probability {self.p} outside [0, 1]")
        unknown = set(self.params) - set(_DEFAULTS[self.kind])
        if unknown:
            raise ValidationError(f"unknown params for {self.kind}: {sorted(unknown)}")

    def _apply(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        p = {**_DEFAULTS[self.kind], **self.params}
        if self.kind == "HFLIP":
            return hflip(x)
        if self.kind == "RRCROP":
            out_hw = p["out_hw"] or x.shape[1:]
            return rrcrop(x, tuple(p["scale"]), tuple(p["aspect"]),
                          tuple(out_hw), rng)
        if self.kind == "COLOR_JITTER":
            return color_jitter(x, p["magnitude"], p["sub_p"], rng)
        if self.kind == "RANDOM_ERASE":
            # the erase probability is this transform's own p, applied inside
            # so the area draw happens only on erase events
            return random_erase(x, 1.0, tuple(p["area"]), rng)
        if self.kind == "RANDAUGMENT_LITE":
            return randaugment_lite(x, p["magnitude_mean"], p["magnitude_std"], rng)
        out_hw = p["out_hw"] or x.shape[1:]
        return bilinear_resize(x, tuple(out_hw))


@dataclass(frozen=True)
class Pipeline:
    transforms: tuple[Transform, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))


def apply_pipeline(pipeline: Pipeline, x: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """Left-to-right application, each transform gated by its probability."""
    if not np.isfinite(x).all():
        raise ValidationError("sample has non-finite values")
    out = np.asarray(x, dtype=np.float64)
    for tf in pipeline.transforms:
        if tf.p >= 1.0 or rng.random() < tf.p:
            out = tf._apply(out, rng)
    return _clip01(out)


# ---------------------------------------------------------------------------
# Serialization (experiment-config schema)


def transform_to_dict(tf: Transform) -> dict:
    return {"kind": tf.kind, "p": tf.p, "params": {
        k: (list(v) if isinstance(v, (tuple, list)) else v)
        for k, v in tf.params.items()}}


def transform_from_dict(d: dict) -> Transform:
    unknown = set(d) - {"kind", "p", "params"}
    if unknown:
        raise ValidationError(f"unknown transform keys: {sorted(unknown)}")
    return Transform(kind=d["kind"], p=d.get("p", 1.0), params=d.get("params", {}))


def pipeline_to_list(p: Pipeline) -> list[dict]:
    return [transform_to_dict(tf) for tf in p.transforms]


def pipeline_from_list(items: list[dict]) -> Pipeline:
    return Pipeline(tuple(transform_from_dict(d) for d in items))
