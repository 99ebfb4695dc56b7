"""Skeleton overlay rendering with a fixed per-class color table."""

from __future__ import annotations

import colorsys

import numpy as np
from PIL import Image


def class_colors(n_classes):
    """Deterministic palette: evenly spaced hues, full saturation."""
    cols = []
    for i in range(n_classes):
        r, g, b = colorsys.hsv_to_rgb(i / max(n_classes, 1), 1.0, 1.0)
        cols.append((int(r * 255), int(g * 255), int(b * 255)))
    return cols


def draw_overlay(image, instances, radius=2):
    """Paint keypoint markers onto a copy of the image ([3,H,W] float)."""
    arr = (np.asarray(image).transpose(1, 2, 0) * 255.0).round().astype(np.uint8).copy()
    h, w = arr.shape[:2]
    for inst in instances:
        colors = class_colors(len(inst.visibility))
        for j, (x, y) in enumerate(inst.keypoints):
            px = int(round(x * w - 0.5))
            py = int(round(y * h - 0.5))
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    if dx * dx + dy * dy <= radius * radius:
                        qx, qy = px + dx, py + dy
                        if 0 <= qx < w and 0 <= qy < h:
                            arr[qy, qx] = colors[j]
    return arr


def save_overlay(image, instances, path, radius=2):
    Image.fromarray(draw_overlay(image, instances, radius=radius)).save(path)
