"""Scanpath-as-image rendering."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import SaccadeClass, Trial, saccade_classes
from .errors import InvalidConfig, ReadGoalError


class IoError(ReadGoalError):
    pass


# RGB per saccade class
SACCADE_COLORS = {
    SaccadeClass.FORWARD: (0.0, 0.0, 1.0),
    SaccadeClass.SKIP: (0.0, 0.6, 0.0),
    SaccadeClass.REFIXATION: (1.0, 0.55, 0.0),
    SaccadeClass.RETURN_SWEEP: (0.5, 0.0, 0.5),
    SaccadeClass.REGRESSION: (1.0, 0.0, 0.0),
    SaccadeClass.OTHER: (0.5, 0.5, 0.5),
}


@dataclass(frozen=True)
class RasterConfig:
    width: int = 224
    height: int = 224
    margin: float = 0.05
    diameter_per_ms: float = 0.06
    min_diameter: float = 3.0
    max_diameter: float = 31.0

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidConfig("canvas dimensions must be positive")
        if not self.diameter_per_ms > 0:
            raise InvalidConfig("duration-to-diameter scale must be positive")
        if not 0 < self.min_diameter <= self.max_diameter:
            raise InvalidConfig("diameter clamp must satisfy 0 < min <= max")


def _canvas_coords(xy: np.ndarray, cfg: RasterConfig) -> np.ndarray:
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    extent = hi - lo
    center = (lo + hi) / 2.0
    inner_w = cfg.width * (1 - 2 * cfg.margin)
    inner_h = cfg.height * (1 - 2 * cfg.margin)
    scales = [s for s in (inner_w / extent[0] if extent[0] > 0 else None,
                          inner_h / extent[1] if extent[1] > 0 else None) if s is not None]
    # uniform scale keeps the aspect ratio; degenerate extent renders at the centre
    scale = min(scales) if scales else 0.0
    cx, cy = (cfg.width - 1) / 2.0, (cfg.height - 1) / 2.0
    return np.column_stack([cx + (xy[:, 0] - center[0]) * scale,
                            cy + (xy[:, 1] - center[1]) * scale])


def _draw_line(img, p0, p1, color):
    h, w, _ = img.shape
    n = int(np.ceil(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1])))) + 1
    t = np.linspace(0.0, 1.0, n)
    xs = np.rint(p0[0] + t * (p1[0] - p0[0])).astype(int)
    ys = np.rint(p0[1] + t * (p1[1] - p0[1])).astype(int)
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    img[ys[ok], xs[ok]] = color


def _draw_disk(img, center, diameter, value):
    h, w, _ = img.shape
    r = diameter / 2.0
    x0, x1 = max(int(np.floor(center[0] - r)), 0), min(int(np.ceil(center[0] + r)), w - 1)
    y0, y1 = max(int(np.floor(center[1] - r)), 0), min(int(np.ceil(center[1] + r)), h - 1)
    if x0 > x1 or y0 > y1:
        return
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    inside = (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= r * r
    if not inside.any():
        # always mark at least the centre pixel
        inside[np.clip(int(round(center[1])) - y0, 0, y1 - y0),
               np.clip(int(round(center[0])) - x0, 0, x1 - x0)] = True
    img[y0:y1 + 1, x0:x1 + 1][inside] = value


def disk_diameters(trial: Trial, cfg: RasterConfig) -> np.ndarray:
    return np.clip(cfg.diameter_per_ms * trial.durations, cfg.min_diameter, cfg.max_diameter)


def disk_intensities(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    return 0.3 + 0.7 * np.arange(n) / (n - 1)


def render_scanpath(trial: Trial, config: RasterConfig | None = None) -> np.ndarray:
    """(H, W, 3) float image in [0, 1], quantised to multiples of 1/255."""
    cfg = config or RasterConfig()
    cfg.validate()
    xy = np.array([[f.x, f.y] for f in trial.fixations], dtype=np.float64)
    pts = _canvas_coords(xy, cfg)
    img = np.zeros((cfg.height, cfg.width, 3))
    classes = saccade_classes(trial)
    diam = disk_diameters(trial, cfg)
    shade = disk_intensities(len(pts))
    # temporal over-painting: saccade i-1 -> i, then disk i
    for i in range(len(pts)):
        if i > 0:
            _draw_line(img, pts[i - 1], pts[i], SACCADE_COLORS[SaccadeClass(classes[i - 1])])
        _draw_disk(img, pts[i], diam[i], shade[i])
    return np.rint(img * 255.0) / 255.0


def export_png(image: np.ndarray, path) -> None:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(arr).save(Path(path), format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write PNG to {path}: {exc}") from exc


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
