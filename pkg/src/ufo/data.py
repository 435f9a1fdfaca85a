"""Synthetic co-object group datasets: generation, Netpbm I/O, batching.

Every group shares one co-category shape whose instances share a hue family
(the learnable cross-image cue); distractor shapes come from other classes
in clearly different hues. Images are binary PPM (P6), masks binary PGM
(P5). Each group is produced from an independent seeded stream, so the
dataset bytes depend only on the config.
"""

from __future__ import annotations

import colorsys
import functools
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, GenerationError, ManifestError

SHAPE_NAMES = ("disk", "square", "triangle", "cross", "ring")

MANIFEST_VERSION = 1
MASK_BIN_THRESHOLD = 128
_PLACEMENT_RETRIES = 20
# Distractor hues keep at least this circular distance from the group hue.
_HUE_GAP = 0.18


@dataclass
class SynthConfig:
    seed: int = 0
    height: int = 64
    width: int = 64
    shapes: tuple[str, ...] = SHAPE_NAMES
    groups_per_class: int = 4
    group_size: int = 5
    distractors: tuple[int, int] = (0, 2)
    size_range: tuple[float, float] = (0.18, 0.33)
    hue_jitter: float = 0.05
    with_aux: bool = False

    def __post_init__(self):
        self.shapes = tuple(self.shapes)
        self.distractors = tuple(self.distractors)
        self.size_range = tuple(self.size_range)
        if self.height % 16 or self.width % 16:
            raise ConfigError(
                f"canvas size must be divisible by 16, got {self.height}x{self.width}")
        unknown = [s for s in self.shapes if s not in SHAPE_NAMES]
        if unknown:
            raise ConfigError(f"unknown shapes {unknown}; choose from {SHAPE_NAMES}")
        if len(set(self.shapes)) != len(self.shapes):
            raise ConfigError("shape vocabulary contains duplicates")
        if self.group_size < 1 or self.groups_per_class < 1:
            raise ConfigError("group_size and groups_per_class must be >= 1")
        if not (0 <= self.distractors[0] <= self.distractors[1]):
            raise ConfigError(f"bad distractor range {self.distractors}")


# ---------------------------------------------------------------------------
# Netpbm I/O


def write_ppm(path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(gray, dtype=np.uint8).tobytes())


def _read_netpbm(path, magic: bytes) -> tuple[int, int, bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(magic):
        raise DataError(f"{path}: expected {magic.decode()} file")
    pos = len(magic)
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":          # comment runs to end of line
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1                                   # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as e:
        raise DataError(f"{path}: malformed header") from e
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
    return w, h, raw[pos:]


@functools.lru_cache(maxsize=4096)
def _read_ppm_cached(path: str, size: int, mtime_ns: int) -> np.ndarray:
    w, h, body = _read_netpbm(path, b"P6")
    if len(body) < 3 * w * h:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(body[:3 * w * h], dtype=np.uint8).reshape(h, w, 3)


@functools.lru_cache(maxsize=4096)
def _read_pgm_cached(path: str, size: int, mtime_ns: int) -> np.ndarray:
    w, h, body = _read_netpbm(path, b"P5")
    if len(body) < w * h:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w)


def clear_io_cache() -> None:
    """Drop cached decodes (needed if dataset files are rewritten in place)."""
    _read_ppm_cached.cache_clear()
    _read_pgm_cached.cache_clear()


def read_ppm(path) -> np.ndarray:
    st = os.stat(path)
    return _read_ppm_cached(str(path), st.st_size, st.st_mtime_ns)


def read_pgm(path) -> np.ndarray:
    st = os.stat(path)
    return _read_pgm_cached(str(path), st.st_size, st.st_mtime_ns)


# ---------------------------------------------------------------------------
# shape rasterization


def _raster(shape: str, h: int, w: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    dx, dy = xx - cx, yy - cy
    if shape == "disk":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= r
    if shape == "triangle":
        # Upward isoceles: apex (cx, cy - r), base at cy + r.
        inside_y = (dy >= -r) & (dy <= r)
        half_width = (dy + r) / 2.0
        return inside_y & (np.abs(dx) <= half_width)
    if shape == "cross":
        arm = max(r / 3.0, 1.0)
        horiz = (np.abs(dx) <= r) & (np.abs(dy) <= arm)
        vert = (np.abs(dx) <= arm) & (np.abs(dy) <= r)
        return horiz | vert
    if shape == "ring":
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 > (0.55 * r) ** 2)
    raise ConfigError(f"unknown shape {shape!r}")


def _hsv_rgb(hue: float, sat: float, val: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(hue % 1.0, sat, val), dtype=np.float64)


def _place_shape(rng, shape: str, cfg: SynthConfig, group_id: int) -> tuple[np.ndarray, float]:
    """Random position/size raster, retried until non-empty."""
    lo = max(3.0, cfg.size_range[0] * min(cfg.height, cfg.width))
    hi = max(lo + 1.0, cfg.size_range[1] * min(cfg.height, cfg.width))
    for _ in range(_PLACEMENT_RETRIES):
        r = rng.uniform(lo, hi)
        margin = r + 1.0
        if 2 * margin >= min(cfg.height, cfg.width):
            continue
        cx = rng.uniform(margin, cfg.width - 1 - margin)
        cy = rng.uniform(margin, cfg.height - 1 - margin)
        mask = _raster(shape, cfg.height, cfg.width, cx, cy, r)
        if mask.any():
            return mask, r
    raise GenerationError(f"group {group_id}: could not place a {shape!r} after "
                          f"{_PLACEMENT_RETRIES} attempts")


def _render_group(cfg: SynthConfig, group_id: int, class_id: int):
    rng = np.random.default_rng((cfg.seed, group_id))
    group_hue = rng.uniform()
    shape = cfg.shapes[class_id]
    others = [s for s in cfg.shapes if s != shape]
    images, masks, auxes = [], [], []
    for _ in range(cfg.group_size):
        canvas = np.empty((cfg.height, cfg.width, 3), dtype=np.float64)
        canvas[:] = _hsv_rgb(rng.uniform(), rng.uniform(0.0, 0.12), rng.uniform(0.08, 0.30))

        n_distract = int(rng.integers(cfg.distractors[0], cfg.distractors[1] + 1))
        for _ in range(n_distract):
            d_shape = others[int(rng.integers(len(others)))] if others else shape
            d_mask, _ = _place_shape(rng, d_shape, cfg, group_id)
            hue = (group_hue + rng.uniform(_HUE_GAP, 1.0 - _HUE_GAP)) % 1.0
            canvas[d_mask] = _hsv_rgb(hue, rng.uniform(0.55, 0.95), rng.uniform(0.55, 0.95))

        co_mask, _ = _place_shape(rng, shape, cfg, group_id)
        hue = group_hue + rng.uniform(-cfg.hue_jitter, cfg.hue_jitter)
        canvas[co_mask] = _hsv_rgb(hue, rng.uniform(0.55, 0.95), rng.uniform(0.55, 0.95))

        images.append(np.round(canvas * 255.0).astype(np.uint8))
        masks.append(np.where(co_mask, 255, 0).astype(np.uint8))
        if cfg.with_aux:
            aux = np.zeros((cfg.height, cfg.width, 3), dtype=np.float64)
            aux[co_mask] = rng.uniform(0.7, 1.0)
            auxes.append(np.round(aux * 255.0).astype(np.uint8))
    return images, masks, auxes


# ---------------------------------------------------------------------------
# manifest


@dataclass
class GroupRecord:
    id: int
    class_id: int
    images: list[str]
    masks: list[str]
    aux: list[str] | None = None


@dataclass
class DatasetManifest:
    root: Path
    classes: list[str]
    group_size: int
    groups: list[GroupRecord] = field(default_factory=list)

    def group_ids(self) -> list[int]:
        return [g.id for g in self.groups]

    def by_id(self, gid: int) -> GroupRecord:
        for g in self.groups:
            if g.id == gid:
                return g
        raise ManifestError(f"no group with id {gid}")

    def to_dict(self) -> dict:
        groups = []
        for g in self.groups:
            rec = {"id": g.id, "class": g.class_id, "images": g.images, "masks": g.masks}
            if g.aux is not None:
                rec["aux"] = g.aux
            groups.append(rec)
        return {"version": MANIFEST_VERSION, "classes": self.classes,
                "group_size": self.group_size, "groups": groups}

    def save(self) -> Path:
        path = self.root / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
        return path


def load_manifest(dataset_dir) -> DatasetManifest:
    root = Path(dataset_dir)
    path = root / "manifest.json"
    if not path.is_file():
        raise ManifestError(f"no manifest.json under {root}")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {doc.get('version')}")
    group_size = int(doc["group_size"])
    groups = []
    for rec in doc["groups"]:
        g = GroupRecord(id=int(rec["id"]), class_id=int(rec["class"]),
                        images=list(rec["images"]), masks=list(rec["masks"]),
                        aux=list(rec["aux"]) if "aux" in rec else None)
        sizes = {len(g.images), len(g.masks)} | ({len(g.aux)} if g.aux else set())
        if sizes != {group_size}:
            raise ManifestError(f"group {g.id}: non-uniform group size {sizes}, "
                                f"expected {group_size}")
        for rel in g.images + g.masks + (g.aux or []):
            if not (root / rel).is_file():
                raise FileNotFoundError(root / rel)
        groups.append(g)
    return DatasetManifest(root=root, classes=list(doc["classes"]),
                           group_size=group_size, groups=groups)


def synthesize(cfg: SynthConfig, out_dir) -> DatasetManifest:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    n_classes = len(cfg.shapes)
    manifest = DatasetManifest(root=root, classes=list(cfg.shapes),
                               group_size=cfg.group_size)
    for gid in range(n_classes * cfg.groups_per_class):
        class_id = gid % n_classes
        images, masks, auxes = _render_group(cfg, gid, class_id)
        gdir = root / f"group_{gid:04d}"
        gdir.mkdir(exist_ok=True)
        rec = GroupRecord(id=gid, class_id=class_id, images=[], masks=[],
                          aux=[] if cfg.with_aux else None)
        for k in range(cfg.group_size):
            img_rel = f"group_{gid:04d}/img_{k}.ppm"
            mask_rel = f"group_{gid:04d}/mask_{k}.pgm"
            write_ppm(root / img_rel, images[k])
            write_pgm(root / mask_rel, masks[k])
            rec.images.append(img_rel)
            rec.masks.append(mask_rel)
            if cfg.with_aux:
                aux_rel = f"group_{gid:04d}/aux_{k}.ppm"
                write_ppm(root / aux_rel, auxes[k])
                rec.aux.append(aux_rel)
        manifest.groups.append(rec)
    manifest.save()
    return manifest


# ---------------------------------------------------------------------------
# batching


@dataclass
class GroupBatch:
    images: np.ndarray            # (B*N, 3, H, W) float32 in [0, 1]
    masks: np.ndarray             # (B*N, 1, H, W) float32 in {0, 1}
    labels: np.ndarray            # (B,) int64 per-group class ids
    group_size: int
    aux_images: np.ndarray | None = None


def _to_chw(img: np.ndarray) -> np.ndarray:
    return (img.astype(np.float32) / 255.0).transpose(2, 0, 1)


def load_batch(manifest: DatasetManifest, group_ids, rng=None,
               flip: bool = False) -> GroupBatch:
    images, masks, auxes, labels = [], [], [], []
    has_aux = all(manifest.by_id(g).aux for g in group_ids) and len(list(group_ids)) > 0
    for gid in group_ids:
        rec = manifest.by_id(gid)
        labels.append(rec.class_id)
        for k in range(manifest.group_size):
            img = _to_chw(read_ppm(manifest.root / rec.images[k]))
            mask = (read_pgm(manifest.root / rec.masks[k]) >= MASK_BIN_THRESHOLD)
            mask = mask.astype(np.float32)[None]
            aux = _to_chw(read_ppm(manifest.root / rec.aux[k])) if has_aux else None
            if flip and rng is not None and rng.random() < 0.5:
                img = img[:, :, ::-1].copy()
                mask = mask[:, :, ::-1].copy()
                aux = aux[:, :, ::-1].copy() if aux is not None else None
            images.append(img)
            masks.append(mask)
            if has_aux:
                auxes.append(aux)
    return GroupBatch(
        images=np.stack(images),
        masks=np.stack(masks),
        labels=np.asarray(labels, dtype=np.int64),
        group_size=manifest.group_size,
        aux_images=np.stack(auxes) if has_aux else None,
    )


def split_groups(manifest: DatasetManifest, val_fraction: float,
                 seed: int) -> tuple[list[int], list[int]]:
    """Deterministic group-level split; no group straddles the boundary."""
    ids = sorted(manifest.group_ids())
    rng = np.random.default_rng((seed, len(ids)))
    order = rng.permutation(len(ids))
    n_val = int(round(len(ids) * val_fraction))
    val = sorted(ids[i] for i in order[:n_val])
    train = sorted(ids[i] for i in order[n_val:])
    return train, val
