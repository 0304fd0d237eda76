# -*- coding: utf-8 -*-

"""
gpair.fileio
~~~~~~~~~~~~

Minimal binary containers for volumes (GPV1), signals (GPS1) and detector
arrays (GPD1), plus trace CSV, raw+sidecar export and PGM MAP images.

Container layout::

    magic        4 bytes
    header_len   uint32, little-endian
    header       UTF-8 text, one `key=value` per line
    payload      little-endian IEEE reals
"""

import csv
import logging
import struct
from dataclasses import astuple, fields

import numpy as np

from gpair.cls_def import AcousticConfig, ArrayLabel
from gpair.exceptions import FileFormatError, InvalidArgumentError
from gpair.geometry import DetectorArray, VoxelGrid, VoxelImage
from gpair.operators import SignalSet

logger = logging.getLogger(__name__)

VOLUME_MAGIC = b"GPV1"
SIGNAL_MAGIC = b"GPS1"
DETECTOR_MAGIC = b"GPD1"

DTYPE_TAGS = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

TRACE_COLUMNS = ("iter", "loss", "data_term", "reg_term", "lr", "wall_ms")

_LEN = struct.Struct("<I")


def dtype_tag(dtype):
    dtype = np.dtype(dtype)
    if dtype == np.float32:
        return "f32"
    if dtype == np.float64:
        return "f64"
    raise InvalidArgumentError(f"unsupported dtype {dtype}, expected float32 or float64")


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list, np.ndarray)):
        return ",".join(_fmt(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in value)
    return str(value)


def _write_container(path, magic, header, payloads):
    text = "".join(f"{k}={_fmt(v)}\n" for k, v in header.items()).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(_LEN.pack(len(text)))
        f.write(text)
        for payload in payloads:
            f.write(payload)


def _read_container(path, magic):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != magic:
        raise FileFormatError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")
    if len(blob) < 4 + _LEN.size:
        raise FileFormatError(f"{path}: truncated header length")
    (header_len,) = _LEN.unpack_from(blob, 4)
    start = 4 + _LEN.size
    if len(blob) < start + header_len:
        raise FileFormatError(f"{path}: header shorter than its declared {header_len} bytes")
    try:
        text = blob[start:start + header_len].decode("utf-8")
    except UnicodeDecodeError as error:
        raise FileFormatError(f"{path}: header is not UTF-8 ({error})")
    header = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise FileFormatError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    return header, blob[start + header_len:]


def _field(header, key, cast, path):
    if key not in header:
        raise FileFormatError(f"{path}: header lacks {key!r}")
    try:
        return cast(header[key])
    except ValueError:
        raise FileFormatError(f"{path}: bad value for {key!r}: {header[key]!r}")


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _ints(text):
    return tuple(int(v) for v in text.split(","))


def _payload_dtype(header, path):
    tag = _field(header, "dtype", str, path)
    if tag not in DTYPE_TAGS:
        raise FileFormatError(f"{path}: dtype must be one of {sorted(DTYPE_TAGS)}, got {tag!r}")
    return DTYPE_TAGS[tag]


def _take(payload, dtype, count, path, what):
    size = count * dtype.itemsize
    if len(payload) < size:
        raise FileFormatError(f"{path}: {what} needs {size} bytes, {len(payload)} left")
    values = np.frombuffer(payload, dtype=dtype, count=count).astype(dtype.newbyteorder("="))
    return values, payload[size:]


def write_volume(path, image, dtype=None):
    """Write a VoxelImage; dtype defaults to the image's (float32 -> f32, else f64)."""
    tag = dtype_tag(dtype if dtype is not None else (np.float32 if image.dtype == np.float32 else np.float64))
    grid = image.grid
    header = {"dims": grid.dims, "spacing": grid.spacing, "origin": grid.origin, "dtype": tag,
              "count": grid.n_voxels}
    _write_container(path, VOLUME_MAGIC, header, [image.values.astype(DTYPE_TAGS[tag]).tobytes()])


def read_volume(path):
    header, payload = _read_container(path, VOLUME_MAGIC)
    dtype = _payload_dtype(header, path)
    try:
        grid = VoxelGrid(_field(header, "dims", _ints, path), _field(header, "spacing", float, path),
                         _field(header, "origin", _floats, path))
    except InvalidArgumentError as error:
        raise FileFormatError(f"{path}: invalid grid in header ({error})")
    count = _field(header, "count", int, path)
    if count != grid.n_voxels:
        raise FileFormatError(f"{path}: count={count} but dims give {grid.n_voxels}")
    values, rest = _take(payload, dtype, count, path, "volume payload")
    if rest:
        raise FileFormatError(f"{path}: {len(rest)} trailing bytes after payload")
    return VoxelImage(grid, values)


def write_signals(path, signals, positions=None, dtype=None):
    """Write a SignalSet, optionally with the (N_d, 3) detector positions block."""
    if signals.acoustic is None:
        raise InvalidArgumentError("signals need an acoustic config to be written")
    data = signals.data
    tag = dtype_tag(dtype if dtype is not None else (np.float32 if data.dtype == np.float32 else np.float64))
    acoustic = signals.acoustic
    header = {"n_d": data.shape[0], "n_t": data.shape[1], "f_s": float(acoustic.f_s), "v_s": float(acoustic.v_s),
              "t0": float(acoustic.t0), "dtype": tag, "positions": 0 if positions is None else 1}
    payloads = [data.astype(DTYPE_TAGS[tag]).tobytes()]
    if positions is not None:
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != (data.shape[0], 3):
            raise InvalidArgumentError(f"positions shape {positions.shape} != ({data.shape[0]}, 3)")
        payloads.append(positions.astype(DTYPE_TAGS["f64"]).tobytes())
    _write_container(path, SIGNAL_MAGIC, header, payloads)


def read_signals(path):
    """Returns (SignalSet, positions or None)."""
    header, payload = _read_container(path, SIGNAL_MAGIC)
    dtype = _payload_dtype(header, path)
    n_d = _field(header, "n_d", int, path)
    n_t = _field(header, "n_t", int, path)
    try:
        acoustic = AcousticConfig(v_s=_field(header, "v_s", float, path), f_s=_field(header, "f_s", float, path),
                                  n_t=n_t, t0=_field(header, "t0", float, path))
    except InvalidArgumentError as error:
        raise FileFormatError(f"{path}: invalid acoustic header ({error})")
    values, rest = _take(payload, dtype, n_d * n_t, path, "signal payload")
    positions = None
    if _field(header, "positions", int, path):
        positions, rest = _take(rest, DTYPE_TAGS["f64"], n_d * 3, path, "positions block")
        positions = positions.reshape(n_d, 3)
    if rest:
        raise FileFormatError(f"{path}: {len(rest)} trailing bytes after payload")
    return SignalSet(values.reshape(n_d, n_t), acoustic), positions


def write_detectors(path, array):
    header = {"n_d": array.n_detectors, "label": array.label.value, "dtype": "f64"}
    _write_container(path, DETECTOR_MAGIC, header, [array.positions.astype(DTYPE_TAGS["f64"]).tobytes()])


def read_detectors(path):
    header, payload = _read_container(path, DETECTOR_MAGIC)
    dtype = _payload_dtype(header, path)
    n_d = _field(header, "n_d", int, path)
    label = _field(header, "label", ArrayLabel, path)
    positions, rest = _take(payload, dtype, n_d * 3, path, "detector payload")
    if rest:
        raise FileFormatError(f"{path}: {len(rest)} trailing bytes after payload")
    return DetectorArray(positions.reshape(n_d, 3), label)


def export_raw(path, out_prefix):
    """Convert a GPV1/GPS1/GPD1 file to `<prefix>.raw` plus a `<prefix>.txt` key=value sidecar.

    Returns
    -------
    - (str, str), the raw and sidecar paths
    """
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == VOLUME_MAGIC:
        image = read_volume(path)
        tag = dtype_tag(image.dtype)
        raw = image.values.astype(DTYPE_TAGS[tag]).tobytes()
        meta = {"kind": "volume", "dims": image.grid.dims, "spacing": image.grid.spacing,
                "origin": image.grid.origin, "layout": "x-fastest"}
    elif magic == SIGNAL_MAGIC:
        signals, positions = read_signals(path)
        tag = dtype_tag(signals.data.dtype)
        raw = signals.data.astype(DTYPE_TAGS[tag]).tobytes()
        meta = {"kind": "signals", "n_d": signals.n_detectors, "n_t": signals.n_t, "layout": "detector-major"}
        meta.update(zip((f.name for f in fields(signals.acoustic)), astuple(signals.acoustic)))
        if positions is not None:
            _write_bytes(f"{out_prefix}.positions.raw", positions.astype(DTYPE_TAGS["f64"]).tobytes())
            meta["positions_file"] = f"{out_prefix}.positions.raw"
    elif magic == DETECTOR_MAGIC:
        array = read_detectors(path)
        tag = "f64"
        raw = array.positions.astype(DTYPE_TAGS[tag]).tobytes()
        meta = {"kind": "detectors", "n_d": array.n_detectors, "label": array.label.value, "layout": "xyz-rows"}
    else:
        raise FileFormatError(f"{path}: unknown magic {magic!r}")
    meta.update(dtype=tag, byte_order="little")

    raw_path, txt_path = f"{out_prefix}.raw", f"{out_prefix}.txt"
    _write_bytes(raw_path, raw)
    with open(txt_path, "w", encoding="utf-8") as f:
        for k, v in meta.items():
            f.write(f"{k}={_fmt(v)}\n")
    return raw_path, txt_path


def _write_bytes(path, payload):
    with open(path, "wb") as f:
        f.write(payload)


def write_trace_csv(trace, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        for record in trace:
            writer.writerow([_fmt(getattr(record, c)) for c in TRACE_COLUMNS])


def read_trace_csv(path):
    """Returns a dict column -> list of floats."""
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(TRACE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise FileFormatError(f"{path}: trace lacks columns {sorted(missing)}")
        columns = {c: [] for c in TRACE_COLUMNS}
        for row in reader:
            for c in TRACE_COLUMNS:
                columns[c].append(float(row[c]))
    return columns


def write_pgm(path, plane):
    """Binary PGM (P5), min..max mapped to 0..255."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise InvalidArgumentError(f"PGM needs a 2D plane, got shape {plane.shape}")
    lo, hi = float(plane.min()), float(plane.max())
    scaled = np.zeros(plane.shape) if hi == lo else (plane - lo) / (hi - lo)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{plane.shape[1]} {plane.shape[0]}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
