"""File formats: NPY tensors, named-tensor checkpoints, PGM/PPM images, manifests."""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np

from .tensor import DTYPE


def save_npy(path, array) -> None:
    """Write ``array`` as NPY 1.0, little-endian float64, C order."""
    arr = np.asarray(array, dtype="<f8", order="C")
    with open(path, "wb") as fh:
        np.lib.format.write_array(fh, arr, version=(1, 0), allow_pickle=False)


def load_npy(path) -> np.ndarray:
    with open(path, "rb") as fh:
        version = np.lib.format.read_magic(fh)
        if version != (1, 0):
            raise ValueError(f"{path}: unsupported NPY version {version}")
        fh.seek(0)
        arr = np.lib.format.read_array(fh, allow_pickle=False)
    return np.asarray(arr, dtype=DTYPE, order="C")


def save_tilt(path, tilt) -> None:
    save_npy(path, np.stack([tilt.dx, tilt.dy]))


def load_tilt(path):
    from .fields import TiltMap

    arr = load_npy(path)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ValueError(f"{path}: tilt map must have dims [2,H,W], got {arr.shape}")
    return TiltMap(arr[0].copy(), arr[1].copy())


# checkpoints -----------------------------------------------------------------

MANIFEST = "manifest.json"


def save_checkpoint(directory, tensors: dict[str, np.ndarray], config: dict) -> None:
    """Write ``tensors`` as ``<name>.npy`` files plus a JSON manifest.

    The manifest lists each tensor's name and dims alongside ``config``.
    Output bytes depend only on the inputs.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(tensors):
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
            raise ValueError(f"bad tensor name {name!r}")
        arr = np.asarray(tensors[name], dtype=DTYPE)
        save_npy(directory / f"{name}.npy", arr)
        entries.append({"name": name, "dims": list(arr.shape)})
    manifest = {"config": config, "tensors": entries}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    tensors = {}
    for entry in manifest["tensors"]:
        arr = load_npy(directory / f"{entry['name']}.npy")
        if list(arr.shape) != entry["dims"]:
            raise ValueError(f"{entry['name']}: dims {arr.shape} disagree with manifest {entry['dims']}")
        tensors[entry["name"]] = arr
    return tensors, manifest["config"]


# images ------------------------------------------------------------------------

def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) or PPM (P6) as ``[C,H,W]`` floats in [0,1]."""
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    width, pos = _read_token(data, pos)
    height, pos = _read_token(data, pos)
    maxval, pos = _read_token(data, pos)
    w, h, maxval = int(width), int(height), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    pos += 1  # single whitespace before raster
    c = 1 if magic == b"P5" else 3
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * c, offset=pos)
    img = raster.reshape(h, w, c).transpose(2, 0, 1).astype(DTYPE) / 255.0
    return np.ascontiguousarray(img)


def to_uint8(pixels) -> np.ndarray:
    return np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pnm(path, pixels) -> None:
    """Write a ``[C,H,W]`` (C in {1,3}) or ``[H,W]`` image as P5/P6."""
    pixels = np.asarray(pixels, dtype=DTYPE)
    if pixels.ndim == 2:
        pixels = pixels[None]
    c, h, w = pixels.shape
    if c not in (1, 3):
        raise ValueError(f"images need 1 or 3 channels, got {c}")
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode()
    raster = to_uint8(pixels).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(header + raster)


def read_image(path) -> np.ndarray:
    """Load PGM/PPM (scaled by 1/255) or an NPY float tensor as ``[C,H,W]``."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        arr = load_npy(path)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] not in (1, 3):
            raise ValueError(f"{path}: image tensor must be [C,H,W] with C in {{1,3}}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"{path}: pixel values outside [0,1]")
        return arr
    return read_pnm(path)


def write_image(path, pixels) -> None:
    path = Path(path)
    if path.suffix.lower() == ".npy":
        save_npy(path, pixels)
    else:
        write_pnm(path, pixels)


# manifests -------------------------------------------------------------------

DOMAINS = ("gallery", "query")


def write_manifest(path, entries: list[dict]) -> None:
    for e in entries:
        if e["domain"] not in DOMAINS:
            raise ValueError(f"unknown domain {e['domain']!r}")
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    """Read a JSON list of ``{image_path, label, domain}`` records.

    Relative image paths are resolved against the manifest's directory.
    """
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise ValueError(f"{path}: manifest must be a JSON list")
    out = []
    for i, e in enumerate(entries):
        missing = {"image_path", "label", "domain"} - set(e)
        if missing:
            raise ValueError(f"{path}: entry {i} lacks {sorted(missing)}")
        if e["domain"] not in DOMAINS:
            raise ValueError(f"{path}: entry {i} has unknown domain {e['domain']!r}")
        rec = dict(e)
        for key in ("image_path", "tilt_path"):
            if key in rec and not os.path.isabs(rec[key]):
                rec[key] = str(path.parent / rec[key])
        rec["label"] = int(rec["label"])
        out.append(rec)
    return out
