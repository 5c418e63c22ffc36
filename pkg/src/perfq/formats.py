"""Bit-exact dataset and result persistence, plus CSV and heatmap export.

Binary layouts (all integers and floats little-endian):

Curve dataset, magic "PQD1":
    magic           4 bytes ASCII
    dims            3 x u32 (x, y, z)
    t0, dt          2 x f64 (minutes)
    n_time          u32
    flags           u8 (bit 0: ground-truth maps present)
    aif             n_time x f32
    curves          x*y*z*n_time x f32, pixels in z-major order (z outermost,
                    then y, then x fastest), each pixel's samples contiguous
    gt maps         if flagged: 4 maps (Fp, vp, ve, PS), each x*y*z x f32 in
                    the same pixel order
    meta_len        u32
    metadata        meta_len bytes UTF-8, "key = value" lines

Parameter-map result, magic "PQM1":
    magic           4 bytes ASCII
    dims            3 x u32
    maps            4 maps (Fp, vp, ve, PS), each x*y*z x f32, z-major
    method_len/u32 + method tag UTF-8
    config_len/u32 + config snapshot UTF-8
    seed            u64

Files must contain exactly the declared bytes; parsing is bounds-checked and
failures report the byte offset. Float payloads round-trip bit-exactly.

CSV schemas:
    curves:  header "t,aif,px000000,..." (one time column, the AIF, then one
             column per pixel in z-major flat order)
    maps:    header "x,y,z,Fp,vp,ve,PS", rows in z-major order
    metrics: header "method,param,NMSE,SSIM"
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError
from .kinetics import TimeGrid, times_to_grid

__all__ = [
    "Dataset",
    "MapResult",
    "write_dataset",
    "read_dataset",
    "write_maps",
    "read_maps",
    "write_curves_csv",
    "read_curves_csv",
    "write_maps_csv",
    "write_metrics_csv",
    "export_heatmap",
    "metadata_to_text",
    "text_to_metadata",
]

MAGIC_DATASET = b"PQD1"
MAGIC_MAPS = b"PQM1"
PARAM_ORDER = ("fp", "vp", "ve", "ps")


@dataclass
class Dataset:
    """In-memory image of a curve dataset file."""

    dims: tuple                 # (x, y, z)
    grid: TimeGrid
    aif: np.ndarray             # (n_time,) float32
    curves: np.ndarray          # (x, y, z, n_time) float32
    gt_maps: dict | None        # param -> (x, y, z) float32, or None
    metadata: dict

    @property
    def n_pixels(self) -> int:
        x, y, z = self.dims
        return x * y * z

    def curves_flat(self) -> np.ndarray:
        """(n_pixels, n_time) float64 in z-major pixel order."""
        return self.curves.transpose(2, 1, 0, 3).reshape(
            self.n_pixels, self.grid.n).astype(float)

    def gt_maps_flat(self) -> dict:
        if self.gt_maps is None:
            raise InvalidInputError("dataset carries no ground-truth maps")
        return {k: v.transpose(2, 1, 0).ravel().astype(float)
                for k, v in self.gt_maps.items()}


@dataclass
class MapResult:
    """In-memory image of a parameter-map result file."""

    dims: tuple
    maps: dict                  # param -> (x, y, z) float32
    method: str
    config_text: str
    seed: int

    def maps_flat(self) -> dict:
        return {k: v.transpose(2, 1, 0).ravel().astype(float)
                for k, v in self.maps.items()}


def metadata_to_text(metadata: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(metadata.items()))


def text_to_metadata(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k.strip()] = v.strip()
    return out


def _check_finite(arr: np.ndarray, what: str, offset: int):
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"non-finite values in {what}", offset=offset)


def _flatten_zmajor(volume: np.ndarray) -> np.ndarray:
    if volume.ndim == 3:
        return np.ascontiguousarray(volume.transpose(2, 1, 0))
    return np.ascontiguousarray(volume.transpose(2, 1, 0, 3))


def _unflatten_zmajor(flat: np.ndarray, dims: tuple, n_time: int | None = None):
    x, y, z = dims
    if n_time is None:
        return flat.reshape(z, y, x).transpose(2, 1, 0)
    return flat.reshape(z, y, x, n_time).transpose(2, 1, 0, 3)


def write_dataset(path, dims: tuple, grid: TimeGrid, aif: np.ndarray,
                  curves: np.ndarray, gt_maps: dict | None,
                  metadata: dict) -> None:
    x, y, z = (int(v) for v in dims)
    aif32 = np.asarray(aif, dtype="<f4")
    curves32 = np.asarray(curves, dtype="<f4")
    if curves32.shape != (x, y, z, grid.n) or aif32.shape != (grid.n,):
        raise InvalidInputError("curve/AIF shapes do not match dims and grid")
    if not (np.all(np.isfinite(aif32)) and np.all(np.isfinite(curves32))):
        raise InvalidInputError("refusing to write non-finite values")

    parts = [MAGIC_DATASET,
             struct.pack("<IIIddIB", x, y, z, grid.t0, grid.dt, grid.n,
                         1 if gt_maps else 0),
             aif32.tobytes(),
             _flatten_zmajor(curves32).tobytes()]
    if gt_maps:
        for key in PARAM_ORDER:
            m = np.asarray(gt_maps[key], dtype="<f4")
            if m.shape != (x, y, z):
                raise InvalidInputError(f"ground-truth map {key} has wrong shape")
            parts.append(_flatten_zmajor(m).tobytes())
    meta = metadata_to_text(metadata).encode()
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.offset + n > len(self.blob):
            raise FormatError("truncated file", offset=self.offset)
        out = self.blob[self.offset:self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        start = self.offset
        arr = np.frombuffer(self.take(4 * count), dtype="<f4")
        _check_finite(arr, "float payload", start)
        return arr

    def done(self):
        if self.offset != len(self.blob):
            raise FormatError("trailing bytes after declared payload",
                              offset=self.offset)


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(4) != MAGIC_DATASET:
        raise FormatError("bad magic (expected PQD1)", offset=0)
    x, y, z, t0, dt, n_time, flags = rd.unpack("<IIIddIB")
    try:
        grid = TimeGrid(t0=t0, dt=dt, n=n_time)
    except InvalidInputError as err:
        raise FormatError(f"invalid time grid in header: {err}", offset=4) from None
    n_pixels = x * y * z
    if n_pixels == 0:
        raise FormatError("zero-sized volume", offset=4)
    aif = rd.floats(n_time).copy()
    curves = _unflatten_zmajor(rd.floats(n_pixels * n_time).copy(),
                               (x, y, z), n_time)
    gt = None
    if flags & 1:
        gt = {key: _unflatten_zmajor(rd.floats(n_pixels).copy(), (x, y, z))
              for key in PARAM_ORDER}
    meta_len, = rd.unpack("<I")
    meta = text_to_metadata(rd.take(meta_len).decode())
    rd.done()
    return Dataset(dims=(x, y, z), grid=grid, aif=aif, curves=curves,
                   gt_maps=gt, metadata=meta)


def write_maps(path, dims: tuple, maps: dict, method: str,
               config_text: str, seed: int) -> None:
    x, y, z = (int(v) for v in dims)
    parts = [MAGIC_MAPS, struct.pack("<III", x, y, z)]
    for key in PARAM_ORDER:
        m = np.asarray(maps[key], dtype="<f4")
        if m.shape != (x, y, z):
            raise InvalidInputError(f"map {key} has wrong shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidInputError("refusing to write non-finite values")
        parts.append(_flatten_zmajor(m).tobytes())
    for text in (method, config_text):
        enc = text.encode()
        parts.append(struct.pack("<I", len(enc)))
        parts.append(enc)
    parts.append(struct.pack("<Q", int(seed)))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_maps(path) -> MapResult:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(4) != MAGIC_MAPS:
        raise FormatError("bad magic (expected PQM1)", offset=0)
    x, y, z = rd.unpack("<III")
    n_pixels = x * y * z
    if n_pixels == 0:
        raise FormatError("zero-sized volume", offset=4)
    maps = {key: _unflatten_zmajor(rd.floats(n_pixels).copy(), (x, y, z))
            for key in PARAM_ORDER}
    method_len, = rd.unpack("<I")
    method = rd.take(method_len).decode()
    config_len, = rd.unpack("<I")
    config_text = rd.take(config_len).decode()
    seed, = rd.unpack("<Q")
    rd.done()
    return MapResult(dims=(x, y, z), maps=maps, method=method,
                     config_text=config_text, seed=seed)


# -- CSV ----------------------------------------------------------------------

def write_curves_csv(path, grid: TimeGrid, aif: np.ndarray,
                     curves_flat: np.ndarray) -> None:
    """curves_flat: (n_pixels, n_time) in z-major flat pixel order."""
    times = grid.times()
    n_pixels = curves_flat.shape[0]
    header = "t,aif," + ",".join(f"px{i:06d}" for i in range(n_pixels))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i, t in enumerate(times):
            row = [f"{t:.10g}", f"{aif[i]:.9g}"]
            row += [f"{curves_flat[p, i]:.9g}" for p in range(n_pixels)]
            fh.write(",".join(row) + "\n")


def read_curves_csv(path):
    """Returns (grid, aif, curves_flat); validates grid uniformity."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["t", "aif"]:
            raise FormatError("curves CSV must start with columns t,aif")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise FormatError("curves CSV row width does not match header")
    grid = times_to_grid(data[:, 0])
    return grid, data[:, 1].copy(), data[:, 2:].T.copy()


def write_maps_csv(path, dims: tuple, maps: dict) -> None:
    x, y, z = dims
    with open(path, "w") as fh:
        fh.write("x,y,z,Fp,vp,ve,PS\n")
        for zz in range(z):
            for yy in range(y):
                for xx in range(x):
                    vals = ",".join(f"{float(maps[k][xx, yy, zz]):.9g}"
                                    for k in PARAM_ORDER)
                    fh.write(f"{xx},{yy},{zz},{vals}\n")


def write_metrics_csv(path, rows) -> None:
    """rows: iterable of (method, param, nmse, ssim)."""
    with open(path, "w") as fh:
        fh.write("method,param,NMSE,SSIM\n")
        for method, param, nm, ss in rows:
            fh.write(f"{method},{param},{nm:.6g},{ss:.6g}\n")


# -- heatmaps -----------------------------------------------------------------

def export_heatmap(map2d: np.ndarray, path, value_range: tuple | None = None):
    """Write an 8-bit grayscale PGM of a 2-D map slice.

    The image is oriented x->columns, y->rows. Values scale linearly over
    `value_range` (default: observed min/max) to 0..255; the scaling is
    recorded in `<path>.scale.txt`. A zero-range map renders mid-gray.
    Returns (lo, hi) actually used.
    """
    arr = np.asarray(map2d, dtype=float)
    if arr.ndim != 2:
        raise InvalidInputError("heatmap export needs a 2-D slice")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("map contains non-finite values")
    lo, hi = value_range if value_range is not None else (arr.min(), arr.max())
    if hi <= lo:
        pixels = np.full(arr.T.shape, 128, dtype=np.uint8)
    else:
        scaled = np.clip((arr.T - lo) / (hi - lo), 0.0, 1.0)
        pixels = np.round(scaled * 255.0).astype(np.uint8)
    rows, cols = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode())
        fh.write(pixels.tobytes())
    with open(f"{path}.scale.txt", "w") as fh:
        fh.write(f"min = {lo!r}\nmax = {hi!r}\n")
    return float(lo), float(hi)
