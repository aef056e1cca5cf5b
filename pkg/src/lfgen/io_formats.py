"""Persistence: light-field directories, PFM/PNG images, checkpoints, and the
external-inpainter sidecar protocol.

Every format round-trips bit-exactly at its native precision, and loaders
reject any deviation from the documented layout instead of guessing.
"""

from __future__ import annotations

import json
import os
import shlex
import struct
import subprocess
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .attention import AttentionConfig, RayTransformerParams
from .core import GridGeometry, LightField4D
from .imutil import from_uint8, to_uint8

MANIFEST_NAME = "lf.json"
MANIFEST_VERSION = 1
VIEW_PATTERN = "view_{v:02d}_{u:02d}.png"
CHECKPOINT_MAGIC = b"IIBR1"


class FormatError(ValueError):
    """Raised when a file does not match its documented layout."""


@dataclass(frozen=True)
class LfManifest:
    """Sidecar metadata for a light-field directory."""

    version: int
    V: int
    U: int
    H: int
    W: int
    center: tuple[float, float]
    pattern: str = VIEW_PATTERN

    _KEYS = {"version", "V", "U", "H", "W", "center", "pattern"}

    def to_json(self) -> str:
        payload = {
            "version": self.version,
            "V": self.V,
            "U": self.U,
            "H": self.H,
            "W": self.W,
            "center": list(self.center),
            "pattern": self.pattern,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LfManifest":
        data = json.loads(text)
        unknown = set(data) - cls._KEYS
        if unknown:
            raise FormatError(f"unknown manifest keys: {sorted(unknown)}")
        missing = cls._KEYS - set(data)
        if missing:
            raise FormatError(f"missing manifest keys: {sorted(missing)}")
        if data["version"] != MANIFEST_VERSION:
            raise FormatError(f"unsupported manifest version {data['version']}")
        return cls(
            version=data["version"],
            V=data["V"],
            U=data["U"],
            H=data["H"],
            W=data["W"],
            center=tuple(data["center"]),
            pattern=data["pattern"],
        )


def save_png(path, img01: np.ndarray) -> None:
    """8-bit PNG with value = round(255 * c)."""
    arr = to_uint8(np.asarray(img01))
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Inverse of save_png: c = value / 255 (grayscale stays 2-D)."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype != np.uint8:
        raise FormatError(f"{path}: expected 8-bit PNG, got {arr.dtype}")
    return from_uint8(arr)


def save_mask_png(path, bits: np.ndarray) -> None:
    Image.fromarray(np.where(bits, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def load_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    return arr >= 128


def save_lf(path, lf: LightField4D) -> None:
    """Views as 8-bit PNGs plus a JSON manifest."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    g = lf.geometry
    manifest = LfManifest(
        version=MANIFEST_VERSION, V=g.V, U=g.U, H=g.H, W=g.W, center=g.center
    )
    (root / MANIFEST_NAME).write_text(manifest.to_json())
    for v in range(g.V):
        for u in range(g.U):
            save_png(root / VIEW_PATTERN.format(v=v, u=u), lf.views[v][u].pixels)


def load_lf(path) -> LightField4D:
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"missing {MANIFEST_NAME} in {root}")
    m = LfManifest.from_json(manifest_path.read_text())
    arr = np.empty((m.V, m.U, m.H, m.W, 3))
    for v in range(m.V):
        for u in range(m.U):
            view_path = root / m.pattern.format(v=v, u=u)
            if not view_path.exists():
                raise FormatError(f"missing view file {view_path.name}")
            img = load_png(view_path)
            if img.shape != (m.H, m.W, 3):
                raise FormatError(
                    f"{view_path.name}: expected {(m.H, m.W, 3)}, got {img.shape}"
                )
            arr[v, u] = img
    return LightField4D.from_array(arr)


def write_pfm(path, grid: np.ndarray) -> None:
    """Grayscale PFM, little-endian (scale -1.0), rows bottom-up."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 2:
        raise FormatError("PFM writer takes a 2-D grid")
    if not np.isfinite(grid).all():
        raise FormatError("refusing to write non-finite PFM payload")
    H, W = grid.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{W} {H}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(grid).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Reads grayscale PFM of either endianness; returns float64 rows top-down."""
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header == b"PF":
            raise FormatError(f"{path}: color PFM where grayscale expected")
        if header != b"Pf":
            raise FormatError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: malformed PFM dimensions")
        W, H = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        if scale == 0.0:
            raise FormatError(f"{path}: zero PFM scale")
        dtype = "<f4" if scale < 0 else ">f4"
        payload = f.read(W * H * 4)
        if len(payload) != W * H * 4:
            raise FormatError(f"{path}: truncated PFM payload")
    grid = np.frombuffer(payload, dtype=dtype).reshape(H, W)
    if not np.isfinite(grid).all():
        raise FormatError(f"{path}: PFM payload contains non-finite values")
    return np.flipud(grid).astype(np.float64)


def read_depth_file(path) -> np.ndarray:
    """Relative depth from PFM or 16-bit PNG (normalized to [0, 1])."""
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        return read_pfm(p)
    with Image.open(p) as im:
        arr = np.asarray(im)
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    raise FormatError(f"{path}: depth must be PFM or 16-bit PNG, got {arr.dtype}")


def save_checkpoint(path, params: RayTransformerParams, seed: int = 0, iteration: int = 0) -> None:
    """Binary checkpoint: magic, config, then named float32 arrays with
    64-bit shape headers. Little-endian throughout."""
    cfg = params.config
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(
            struct.pack(
                "<6q", cfg.d_model, cfg.heads, cfg.layers, cfg.k_sources, seed, iteration
            )
        )
        f.write(struct.pack("<q", len(params.arrays)))
        for name in sorted(params.arrays):
            arr = params.arrays[name]
            encoded = name.encode("ascii")
            f.write(struct.pack("<q", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<q", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(arr.astype("<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path, expect_config: AttentionConfig | None = None):
    """Returns (RayTransformerParams, seed, iteration); validates layout."""
    with open(path, "rb") as f:
        magic = _read_exact(f, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        d_model, heads, layers, k_sources, seed, iteration = struct.unpack(
            "<6q", _read_exact(f, 48, "config")
        )
        cfg = AttentionConfig(d_model=d_model, heads=heads, layers=layers, k_sources=k_sources)
        if expect_config is not None:
            for fname in ("d_model", "heads", "layers", "k_sources"):
                if getattr(cfg, fname) != getattr(expect_config, fname):
                    raise FormatError(
                        f"checkpoint {fname}={getattr(cfg, fname)} does not match "
                        f"expected {getattr(expect_config, fname)}"
                    )
        (count,) = struct.unpack("<q", _read_exact(f, 8, "array count"))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<q", _read_exact(f, 8, "name length"))
            name = _read_exact(f, name_len, "name").decode("ascii")
            (ndim,) = struct.unpack("<q", _read_exact(f, 8, "ndim"))
            shape = struct.unpack(f"<{ndim}q", _read_exact(f, 8 * ndim, "shape"))
            size = int(np.prod(shape)) if ndim else 1
            raw = _read_exact(f, 4 * size, f"array {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        trailing = f.read(1)
        if trailing:
            raise FormatError("trailing bytes after checkpoint payload")
    params = RayTransformerParams(config=cfg, arrays=arrays)
    _validate_param_shapes(params)
    return params, seed, iteration


def _validate_param_shapes(params: RayTransformerParams) -> None:
    from .attention import init_params

    reference = init_params(params.config, seed=0)
    ref_shapes = {k: v.shape for k, v in reference.arrays.items()}
    got_shapes = {k: v.shape for k, v in params.arrays.items()}
    if ref_shapes != got_shapes:
        missing = set(ref_shapes) - set(got_shapes)
        extra = set(got_shapes) - set(ref_shapes)
        bad = {k for k in set(ref_shapes) & set(got_shapes) if ref_shapes[k] != got_shapes[k]}
        raise FormatError(
            f"checkpoint arrays inconsistent with config: missing={sorted(missing)} "
            f"extra={sorted(extra)} wrong_shape={sorted(bad)}"
        )


def save_epi_png(path, epi_pixels: np.ndarray) -> None:
    """EPI as 8-bit PNG, row 0 = lowest angular index."""
    save_png(path, epi_pixels)


def load_epi_png(path) -> np.ndarray:
    arr = load_png(path)
    if arr.ndim != 3:
        raise FormatError(f"{path}: EPI PNG must be RGB")
    return arr


def external_inpaint_sidecar(image: np.ndarray, mask: np.ndarray, cmd: str) -> np.ndarray:
    """Run an external inpainter: write in.png and mask.png to a temp dir,
    invoke `cmd <dir>`, read out.png back.

    Unmasked pixels are validated against the input within one 8-bit step
    (a warning, not an error, beyond that). IIBR_TMPDIR overrides the temp
    location.
    """
    base = os.environ.get("IIBR_TMPDIR") or None
    with tempfile.TemporaryDirectory(dir=base) as tmp:
        tmp_path = Path(tmp)
        save_png(tmp_path / "in.png", image)
        save_mask_png(tmp_path / "mask.png", mask)
        argv = shlex.split(cmd) + [str(tmp_path)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(
                f"inpaint command failed ({proc.returncode}): {proc.stderr.strip()}"
            )
        out_path = tmp_path / "out.png"
        if not out_path.exists():
            raise FormatError("inpaint command produced no out.png")
        out = load_png(out_path)
    if out.shape != image.shape:
        raise FormatError(f"inpainted size {out.shape} != input {image.shape}")
    drift = np.abs(out[~mask] - image[~mask])
    if drift.size and drift.max() > 1.0 / 255.0 + 1e-12:
        warnings.warn("external inpainter modified unmasked pixels beyond 1/255")
    return out


class ExternalInpainter:
    """Inpainter adapter for the sidecar protocol; unmasked pixels are
    restored bit-exactly from the input afterwards."""

    def __init__(self, cmd: str):
        self.cmd = cmd

    def fill(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        out = external_inpaint_sidecar(image, mask, self.cmd)
        out[~mask] = image[~mask]
        return out
