"""On-disk formats.

* PSTF tensor: ``b"PSTF"``, u16 version, u8 dtype (1 = float32), u8 rank,
  rank x u32 dims, then row-major float32 payload. Everything little-endian.
* Instance manifest: JSON with image size and detections whose masks live
  in PSTF files, paths relative to the manifest.
* Panoptic PNG: 24-bit RGB with id = R + 256 G + 65536 B, next to a JSON
  sidecar listing the segments.
* Catalog: JSON ``{"void_id": 0, "classes": [{"id", "name", "kind"}]}``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    BoundingBox,
    ClassCatalog,
    FormatError,
    InstanceDetection,
    InstanceSet,
    PanopticMap,
    SemanticScoreMap,
    ValidationError,
    decode_segment_id,
)

MAGIC = b"PSTF"
VERSION = 1
DTYPE_F32 = 1
_HEADER = struct.Struct("<4sHBB")


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class UnsupportedDtypeError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


def write_tensor(tensor, path) -> None:
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header + dims + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        if raw[:4] != MAGIC[:len(raw)]:
            raise BadMagicError(f"{path}: not a PSTF file")
        raise TruncatedError(f"{path}: header truncated")
    magic, version, dtype, rank = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype code {dtype}")
    off = _HEADER.size + 4 * rank
    if len(raw) < off:
        raise TruncatedError(f"{path}: dims truncated")
    dims = struct.unpack_from(f"<{rank}I", raw, _HEADER.size)
    n = int(np.prod(dims, dtype=np.int64))
    if len(raw) - off != 4 * n:
        raise TruncatedError(
            f"{path}: payload has {len(raw) - off} bytes, dims {dims} need {4 * n}")
    return np.frombuffer(raw, dtype="<f4", offset=off, count=n).reshape(dims).astype(np.float32)


def read_semantic(path, catalog: ClassCatalog) -> SemanticScoreMap:
    """H x W x C tensor whose channels follow the catalog's class order."""
    data = read_tensor(path)
    if data.ndim != 3:
        raise ValidationError(f"{path}: semantic tensor must be rank 3, got {data.ndim}")
    if data.shape[2] != len(catalog):
        raise ValidationError(
            f"{path}: {data.shape[2]} channels but catalog has {len(catalog)} classes")
    return SemanticScoreMap(data, catalog.ids)


def write_semantic(scores: SemanticScoreMap, path) -> None:
    write_tensor(scores.data, path)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e


def read_manifest(path) -> InstanceSet:
    path = Path(path)
    doc = _load_json(path)
    try:
        h, w = int(doc["image"]["height"]), int(doc["image"]["width"])
        dets = []
        for i, d in enumerate(doc["detections"]):
            box = BoundingBox.from_list(d["box"])
            mask = read_tensor(path.parent / d["mask_file"])
            if mask.shape != box.shape:
                raise ValidationError(
                    f"detection {i}: mask shape {mask.shape} does not match box {box.as_list()}")
            dets.append(InstanceDetection(int(d["class_id"]), float(d["confidence"]), box, mask))
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: malformed manifest ({e!r})") from e
    except FileNotFoundError as e:
        raise ValidationError(f"{path}: missing mask file {e.filename}") from e
    return InstanceSet(h, w, tuple(dets))


def write_manifest(instances: InstanceSet, path, mask_dir: str = "masks") -> None:
    path = Path(path)
    (path.parent / mask_dir).mkdir(parents=True, exist_ok=True)
    dets = []
    for i, det in enumerate(instances.detections):
        rel = f"{mask_dir}/{path.stem}_{i:03d}.pstf"
        write_tensor(det.mask, path.parent / rel)
        dets.append({"class_id": det.class_id, "confidence": det.confidence,
                     "box": det.box.as_list(), "mask_file": rel})
    doc = {"image": {"height": instances.height, "width": instances.width}, "detections": dets}
    path.write_text(json.dumps(doc, indent=1) + "\n")


def id_to_rgb(ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.max(initial=0) >= 1 << 24:
        raise ValidationError("segment id does not fit in 24 bits")
    return np.stack([ids & 0xFF, (ids >> 8) & 0xFF, (ids >> 16) & 0xFF], axis=-1).astype(np.uint8)


def rgb_to_id(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.int64)
    return rgb[..., 0] + 256 * rgb[..., 1] + 65536 * rgb[..., 2]


def _sidecar_path(png_path: Path) -> Path:
    return png_path.with_suffix(".json")


def write_panoptic(pmap: PanopticMap, path) -> None:
    """Write ``<path>`` (PNG raster) and ``<path minus .png>.json`` (segments)."""
    path = Path(path)
    Image.fromarray(id_to_rgb(pmap.segment_ids())).save(path, format="PNG")
    doc = {"height": pmap.height, "width": pmap.width, "segments": [
        {"id": s.segment_id, "class_id": s.class_id,
         "instance_index": s.instance_index, "area": s.area}
        for s in pmap.segments]}
    _sidecar_path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_panoptic(path) -> PanopticMap:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise FormatError(f"{path}: expected an RGB PNG, got mode {im.mode}")
            ids = rgb_to_id(np.asarray(im))
    except OSError as e:
        raise FormatError(f"{path}: unreadable PNG ({e})") from e
    doc = _load_json(_sidecar_path(path))
    pmap = PanopticMap.from_labels(ids // 1000, ids % 1000)
    try:
        listed = {int(s["id"]): s for s in doc["segments"]}
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: malformed sidecar ({e!r})") from e
    raster = {s.segment_id: s for s in pmap.segments}
    listed.pop(0, None)
    if set(listed) != set(raster):
        raise FormatError(
            f"{path}: sidecar ids {sorted(listed)} do not match raster ids {sorted(raster)}")
    for sid, s in listed.items():
        cls, idx = decode_segment_id(sid)
        if (s.get("class_id", cls), s.get("instance_index", idx)) != (cls, idx) \
                or s.get("area", raster[sid].area) != raster[sid].area:
            raise FormatError(f"{path}: sidecar entry for segment {sid} disagrees with raster")
    return pmap


def read_catalog(path) -> ClassCatalog:
    return ClassCatalog.from_dict(_load_json(path))


def write_catalog(catalog: ClassCatalog, path) -> None:
    Path(path).write_text(json.dumps(catalog.to_dict(), indent=1) + "\n")
