"""Binary PPM/PGM images, DRNC checkpoints and metric tables."""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .derainnet import BranchConfig, DerainModel, model_from_arrays, parameter_shapes
from .tensorcore import ContractViolation, Tensor


class ImageFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CheckpointError(ValueError):
    """Structured checkpoint load failure; ``kind`` names the failure class."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


# ---------------------------------------------------------------------------
# PPM / PGM

_WHITESPACE = b" \t\r\n\v\f"


def _header_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buf):
        ch = buf[pos:pos + 1]
        if ch == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        elif ch in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos:pos + 1] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header", start)
    return buf[start:pos], pos


def decode_pnm(buf: bytes) -> np.ndarray:
    """Parse P5/P6 bytes into a uint8 array of shape (C, H, W)."""
    if buf[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {buf[:2]!r}; expected P5 or P6", 0)
    channels = 1 if buf[:2] == b"P5" else 3
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        start = pos
        token, pos = _header_token(buf, pos)
        if not token.isdigit():
            raise ImageFormatError(f"malformed {name} {token!r}", start)
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"maxval {maxval} unsupported; only 255", pos)
    if width < 1 or height < 1:
        raise ImageFormatError(f"non-positive extents {width}x{height}", pos)
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise ImageFormatError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise ImageFormatError(f"truncated payload: need {need} bytes, have {len(payload)}", pos + len(payload))
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))


def encode_pnm(pixels: np.ndarray) -> bytes:
    """(C, H, W) uint8 with C in {1, 3} -> P5/P6 bytes."""
    c, h, w = pixels.shape
    if c not in (1, 3):
        raise ContractViolation(f"images have 1 or 3 channels; got {c}")
    magic = b"P5" if c == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (w, h)
    return header + np.ascontiguousarray(pixels.transpose(1, 2, 0), dtype=np.uint8).tobytes()


def quantize(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round to 8-bit."""
    return np.rint(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def read_image(path, dtype=np.float32) -> Tensor:
    with open(path, "rb") as fh:
        pixels = decode_pnm(fh.read())
    return Tensor((pixels.astype(np.float64) / 255.0)[None].astype(dtype))


def write_image(tensor, path) -> None:
    data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if data.ndim != 4 or data.shape[0] != 1 or data.shape[1] not in (1, 3):
        raise ContractViolation(f"write_image takes [1, {{1,3}}, H, W]; got {data.shape}")
    with open(path, "wb") as fh:
        fh.write(encode_pnm(quantize(data[0])))


# ---------------------------------------------------------------------------
# checkpoints
#
# little-endian layout:
#   b"DRNC" | u32 version
#   rain branch:  u32 hidden, u32 blocks, u32 shuffle, u32 input_channels
#   noise branch: same four fields
#   i64 model seed | i64 training seed | u32 tensor count
#   per tensor: u16 name length | utf-8 name | 4 x u32 dims | f32 payload

MAGIC = b"DRNC"
VERSION = 1


def encode_checkpoint(model: DerainModel) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    for cfg in (model.rain_config, model.noise_config):
        out.write(struct.pack("<4I", cfg.hidden_channels, cfg.num_blocks, cfg.shuffle_factor, cfg.input_channels))
    out.write(struct.pack("<qq", model.seed, model.train_seed))
    named = model.named_parameters()
    out.write(struct.pack("<I", len(named)))
    for name, tensor in named:
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<4I", *tensor.shape))
        out.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return out.getvalue()


_MIN_RECORD = struct.calcsize("<H4I") + 4


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("length", f"file ends at byte {len(self.buf)} while reading {what} at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(buf: bytes) -> DerainModel:
    rd = _Reader(buf)
    magic = rd.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError("bad-magic", f"expected {MAGIC!r}, found {magic!r}")
    (version,) = rd.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError("version", f"unsupported format version {version}; expected {VERSION}")
    configs = []
    for branch in ("rain", "noise"):
        fields = rd.unpack("<4I", f"{branch} branch config")
        try:
            configs.append(BranchConfig(*fields))
        except ContractViolation as exc:
            raise CheckpointError("config", f"{branch} branch: {exc}") from None
    rain_cfg, noise_cfg = configs
    seed, train_seed = rd.unpack("<qq", "seeds")
    (count,) = rd.unpack("<I", "tensor count")
    # head and tail hold two tensors each, every residual block four
    implied = 8 + 4 * (rain_cfg.num_blocks + noise_cfg.num_blocks)
    if count != implied:
        raise CheckpointError("layout", f"{count} tensors stored; configuration implies {implied}")
    if count * _MIN_RECORD > len(buf) - rd.pos:
        raise CheckpointError("length", f"{count} tensors cannot fit in the remaining {len(buf) - rd.pos} bytes")
    try:
        expected = parameter_shapes(rain_cfg, noise_cfg)
    except (ContractViolation, OverflowError, MemoryError) as exc:
        raise CheckpointError("config", str(exc)) from None
    if count != len(expected):
        raise CheckpointError("layout", f"{count} tensors stored; configuration implies {len(expected)}")
    arrays = {}
    for want_name, want_shape in expected:
        (nlen,) = rd.unpack("<H", "name length")
        raw = rd.take(nlen, "tensor name")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("layout", f"undecodable tensor name at byte {rd.pos - nlen}") from None
        if name != want_name:
            raise CheckpointError("layout", f"expected tensor {want_name!r}, found {name!r}")
        dims = rd.unpack("<4I", f"dims of {name}")
        if tuple(dims) != want_shape:
            raise CheckpointError("dims", f"{name}: stored dims {dims}, expected {want_shape}")
        size = math.prod(dims)
        payload = rd.take(4 * size, f"payload of {name}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if rd.pos != len(buf):
        raise CheckpointError("length", f"{len(buf) - rd.pos} trailing bytes after last tensor")
    return model_from_arrays(rain_cfg, noise_cfg, arrays, seed=seed, train_seed=train_seed)


def save_checkpoint(model: DerainModel, path) -> None:
    data = encode_checkpoint(model)
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path) -> DerainModel:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


# ---------------------------------------------------------------------------
# metric tables

METRIC_HEADER = ("image", "rain_psnr", "derained_psnr", "rain_ssim", "derained_ssim")


@dataclass(frozen=True)
class MetricRow:
    name: str
    rain_psnr: float
    derained_psnr: float
    rain_ssim: float
    derained_ssim: float


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.2f}"


def format_ssim(value: float) -> str:
    return f"{value:.4f}"


def _finite_mean(values: Sequence[float]) -> float:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return math.inf
    return math.fsum(finite) / len(finite)


def average_row(rows: Sequence[MetricRow]) -> MetricRow:
    return MetricRow(
        "Avg.",
        _finite_mean([r.rain_psnr for r in rows]),
        _finite_mean([r.derained_psnr for r in rows]),
        math.fsum(r.rain_ssim for r in rows) / len(rows),
        math.fsum(r.derained_ssim for r in rows) / len(rows),
    )


def write_metric_table(rows: Sequence[MetricRow], path) -> None:
    """CSV with one row per image plus a trailing ``Avg.`` row of column means."""
    if not rows:
        raise ContractViolation("metric table needs at least one row")
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_HEADER)
        for row in list(rows) + [average_row(rows)]:
            writer.writerow([
                row.name,
                format_psnr(row.rain_psnr),
                format_psnr(row.derained_psnr),
                format_ssim(row.rain_ssim),
                format_ssim(row.derained_ssim),
            ])


def read_metric_table(path) -> list[dict]:
    with open(path, newline="", encoding="ascii") as fh:
        return list(csv.DictReader(fh))


def write_loss_history(losses: Sequence[float], path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch", "mean_loss"))
        for epoch, loss in enumerate(losses, start=1):
            writer.writerow((epoch, repr(float(loss))))

