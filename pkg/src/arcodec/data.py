"""Dataset ingestion: ODGT annotations, rescaling, and synthetic scenes.

Annotation files are JSON-lines in the ODGT layout: each line holds an
image ID and a list of gtboxes, every gtbox carrying a full-body "vbox"
and a head "hbox" rectangle as [x, y, w, h], with optional ignore flags
under "extra" (drops the whole entry) and "head_attr" (drops the head
box only).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import InputError, ParseError
from .loss import HBOX, VBOX, BoundingBox

_IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".ppm")


@dataclass
class AnnotatedImage:
    """A rescaled image with its boxes, ready for training or evaluation."""

    image_id: str
    image: np.ndarray
    boxes: list[BoundingBox]
    original_size: tuple[int, int]

    def boxes_with_role(self, role: str) -> list[BoundingBox]:
        return [b for b in self.boxes if b.role == role]


@dataclass
class DatasetManifest:
    """Where a dataset lives and how to prepare it."""

    annotation_path: Path
    image_dir: Path
    target_size: int = 512
    drop_ignored: bool = True


def arc_threads() -> int:
    """Worker count for parallel image loading; ARC_THREADS overrides."""
    env = os.environ.get("ARC_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InputError(f"ARC_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise InputError("ARC_THREADS must be at least 1")
        return n
    return min(8, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# annotation parsing


def _parse_rect(values, role: str, lineno: int) -> BoundingBox:
    if (not isinstance(values, (list, tuple)) or len(values) != 4
            or not all(isinstance(v, (int, float)) for v in values)):
        raise ParseError(f"{role} must be [x, y, w, h] numbers, got {values!r}",
                         line=lineno)
    x, y, w, h = (float(v) for v in values)
    if w <= 0 or h <= 0:
        raise ParseError(f"{role} has non-positive extent {values!r}", line=lineno)
    return BoundingBox(x, y, w, h, role=role)


def parse_annotations(path, drop_ignored: bool = True
                      ) -> list[tuple[str, list[BoundingBox]]]:
    """Read an ODGT file into (image_id, boxes) records.

    Entries flagged ignore under "extra" contribute zero boxes; a head
    flagged ignore under "head_attr" drops just that hbox. Any malformed
    line raises ParseError carrying its line number; an empty file gives
    an empty list.
    """
    records: list[tuple[str, list[BoundingBox]]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("annotation line is not an object", line=lineno)
            image_id = obj.get("ID")
            if not isinstance(image_id, str) or not image_id:
                raise ParseError("missing or empty \"ID\" field", line=lineno)
            gtboxes = obj.get("gtboxes", [])
            if not isinstance(gtboxes, list):
                raise ParseError("\"gtboxes\" must be a list", line=lineno)
            boxes: list[BoundingBox] = []
            for g in gtboxes:
                if not isinstance(g, dict):
                    raise ParseError("gtbox entry is not an object", line=lineno)
                extra = g.get("extra", {}) or {}
                head_attr = g.get("head_attr", {}) or {}
                if drop_ignored and extra.get("ignore", 0):
                    continue
                vbox = g.get("vbox")
                hbox = g.get("hbox")
                if vbox is not None:
                    boxes.append(_parse_rect(vbox, VBOX, lineno))
                if hbox is not None and not (drop_ignored and head_attr.get("ignore", 0)):
                    boxes.append(_parse_rect(hbox, HBOX, lineno))
            records.append((image_id, boxes))
    return records


# ---------------------------------------------------------------------------
# image handling


def load_image(path) -> np.ndarray:
    """Read an image file into a float64 [3, H, W] array in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def save_image(path, image: np.ndarray) -> None:
    """Write a [3, H, W] float array in [0, 1] as an 8-bit image file."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise InputError(f"expected a [3, H, W] image, got shape {image.shape}")
    a = np.clip(image, 0.0, 1.0)
    u8 = np.floor(a * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0)).save(path)


def _bilinear_resize(image: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    chans, h, w = image.shape
    ys = (np.arange(target_h) + 0.5) * (h / target_h) - 0.5
    xs = (np.arange(target_w) + 0.5) * (w / target_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = ys - y0
    wx = xs - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    tl = image[:, y0c[:, None], x0c[None, :]]
    tr = image[:, y0c[:, None], x1c[None, :]]
    bl = image[:, y1c[:, None], x0c[None, :]]
    br = image[:, y1c[:, None], x1c[None, :]]
    wxr = wx[None, None, :]
    wyr = wy[None, :, None]
    top = tl * (1.0 - wxr) + tr * wxr
    bot = bl * (1.0 - wxr) + br * wxr
    return top * (1.0 - wyr) + bot * wyr


def _clamp_box(b: BoundingBox, width: float, height: float) -> BoundingBox | None:
    x0 = min(max(b.x, 0.0), width)
    y0 = min(max(b.y, 0.0), height)
    x1 = min(max(b.x + b.w, 0.0), width)
    y1 = min(max(b.y + b.h, 0.0), height)
    if x1 - x0 < 1.0 or y1 - y0 < 1.0:
        return None
    return BoundingBox(x0, y0, x1 - x0, y1 - y0, role=b.role)


def rescale(image: np.ndarray, boxes: Sequence[BoundingBox], target: int,
            image_id: str = "") -> AnnotatedImage:
    """Resize to target x target (anisotropic bilinear) and map boxes along.

    Box coordinates are multiplied by the per-axis scale factors exactly
    (no rounding), then clamped to the target bounds; boxes degenerating
    below 1x1 pixel are dropped. An already target-sized image passes
    through untouched.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[1] < 1 or image.shape[2] < 1:
        raise InputError(f"expected a [C, H, W] image, got shape {image.shape}")
    if target < 1:
        raise InputError("target size must be positive")
    _, h, w = image.shape
    sx = target / w
    sy = target / h
    if h == target and w == target:
        resized = image.copy()
    else:
        resized = _bilinear_resize(image, target, target)
    out_boxes = []
    for b in boxes:
        cb = _clamp_box(b.scaled(sx, sy), float(target), float(target))
        if cb is not None:
            out_boxes.append(cb)
    return AnnotatedImage(image_id=image_id, image=resized, boxes=out_boxes,
                          original_size=(w, h))


def _find_image_file(image_dir: Path, image_id: str) -> Path:
    candidate = image_dir / image_id
    if candidate.suffix and candidate.is_file():
        return candidate
    for ext in _IMAGE_EXTENSIONS:
        p = image_dir / f"{image_id}{ext}"
        if p.is_file():
            return p
    raise InputError(f"no image file for id {image_id!r} under {image_dir}")


def load_dataset(manifest: DatasetManifest,
                 max_workers: int | None = None) -> list[AnnotatedImage]:
    """Parse annotations, load and rescale every referenced image.

    Images load in parallel (ARC_THREADS or max_workers controls the
    worker count); record order follows the annotation file.
    """
    entries = parse_annotations(manifest.annotation_path, manifest.drop_ignored)
    image_dir = Path(manifest.image_dir)

    def _one(entry: tuple[str, list[BoundingBox]]) -> AnnotatedImage:
        image_id, boxes = entry
        img = load_image(_find_image_file(image_dir, image_id))
        return rescale(img, boxes, manifest.target_size, image_id=image_id)

    workers = max_workers if max_workers is not None else arc_threads()
    if workers <= 1 or len(entries) <= 1:
        return [_one(e) for e in entries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, entries))


# ---------------------------------------------------------------------------
# synthetic scenes


def _synth_scene(rng: np.random.Generator, size: int):
    yy, xx = np.mgrid[0:size, 0:size] / size
    theta = rng.uniform(0.0, 2.0 * np.pi)
    base = 0.5 + 0.22 * (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5))
    fx, fy = rng.uniform(1.0, 3.0, size=2)
    px, py = rng.uniform(0.0, 2.0 * np.pi, size=2)
    waves = 0.06 * np.sin(2.0 * np.pi * fx * xx + px) * np.cos(2.0 * np.pi * fy * yy + py)
    tint = rng.uniform(0.85, 1.1, size=3)
    img = np.clip((base + waves)[None, :, :] * tint[:, None, None], 0.02, 0.98)

    boxes: list[BoundingBox] = []
    n_person = int(rng.integers(1, 4))
    for _ in range(n_person):
        bw = int(rng.integers(size // 5, size // 3 + 1))
        bh = int(rng.integers(size // 3, size // 2 + 1))
        bx = int(rng.integers(0, size - bw + 1))
        by = int(rng.integers(0, size - bh + 1))
        body = rng.uniform(0.15, 0.85, size=3)
        shade = np.linspace(0.9, 1.1, bh)[None, :, None]
        img[:, by:by + bh, bx:bx + bw] = np.clip(
            body[:, None, None] * shade, 0.02, 0.98)

        head = max(4, int(round(0.45 * bw)))
        head = min(head, bw - 2, bh - 2)
        hx = bx + (bw - head) // 2
        hy = by + 1
        cell = int(rng.integers(2, 4))
        gy, gx = np.mgrid[0:head, 0:head]
        phase = int(rng.integers(0, 2))
        checker = ((gy // cell + gx // cell + phase) % 2).astype(np.float64)
        lo, hi = 0.05, 0.95
        pattern = lo + (hi - lo) * checker
        flip = rng.integers(0, 2, size=3)
        for c in range(3):
            img[c, hy:hy + head, hx:hx + head] = pattern if flip[c] == 0 else (
                lo + hi - pattern)
        boxes.append(BoundingBox(float(bx), float(by), float(bw), float(bh),
                                 role=VBOX))
        boxes.append(BoundingBox(float(hx), float(hy), float(head), float(head),
                                 role=HBOX))
    return np.clip(img, 0.0, 1.0), boxes


def make_synthetic_dataset(n: int, seed: int = 0,
                           size: int = 64) -> list[AnnotatedImage]:
    """Generate scenes of textured backgrounds, body rectangles, and
    high-contrast checkerboard heads.

    Every person contributes one vbox and one hbox strictly inside it,
    all with integer coordinates. Deterministic for fixed (n, seed, size).
    """
    if n < 1:
        raise InputError("dataset size must be at least 1")
    if size < 16 or size % 8:
        raise InputError("size must be a multiple of 8 and at least 16")
    children = np.random.SeedSequence(seed).spawn(n)
    out = []
    for i, child in enumerate(children):
        img, boxes = _synth_scene(np.random.default_rng(child), size)
        out.append(AnnotatedImage(image_id=f"synth_{i:05d}", image=img,
                                  boxes=boxes, original_size=(size, size)))
    return out


def write_synthetic_dataset(records: Sequence[AnnotatedImage],
                            out_dir) -> DatasetManifest:
    """Write PNGs plus an ODGT annotation file mirroring the records.

    Records must follow the generator's structure (vbox/hbox pairs per
    person); parsing the written file yields the same boxes back.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    ann_path = out_dir / "annotations.odgt"
    with open(ann_path, "w", encoding="utf-8") as fh:
        for rec in records:
            save_image(image_dir / f"{rec.image_id}.png", rec.image)
            vboxes = rec.boxes_with_role(VBOX)
            hboxes = rec.boxes_with_role(HBOX)
            if len(vboxes) != len(hboxes):
                raise InputError(
                    f"record {rec.image_id!r} does not pair one hbox per vbox")
            gtboxes = []
            for vb, hb in zip(vboxes, hboxes):
                gtboxes.append({
                    "tag": "person",
                    "vbox": [int(vb.x), int(vb.y), int(vb.w), int(vb.h)],
                    "hbox": [int(hb.x), int(hb.y), int(hb.w), int(hb.h)],
                    "head_attr": {},
                    "extra": {},
                })
            fh.write(json.dumps({"ID": rec.image_id, "gtboxes": gtboxes}) + "\n")
    size = records[0].image.shape[1] if records else 512
    return DatasetManifest(annotation_path=ann_path, image_dir=image_dir,
                           target_size=size)
