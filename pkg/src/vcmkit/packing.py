"""Feature-tensor packaging: float planes to codec-ready 8-bit planes.

Three arrangements are supported: plain channel concatenation, concatenation
reordered by a greedy minimal-successive-L2 chain (channel 0 stays first),
and tiling all channels into one near-square mosaic. Arrangement never
changes sample values; the only loss is the global min-max quantizer.

Coded feature payload (little-endian), used inside container streams:

    mode     u8   0=concat 1=ddconcat 2=tile
    C,H,W    u16  x3 (original tensor dims)
    network  u8 length + utf-8
    layer    u8 length + utf-8
    order    C x u16 channel permutation
    pads     u16 pad_right, u16 pad_bottom
    grid     u16 cols, u16 rows (zero unless tile)
    quant    f32 v_min, f32 v_max
    planes   u16 count, then per plane u32 length + pixel-codec chunk
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .codec import BLOCK, CodecConfig, CodedChunk, decode_frame, encode_frame, parse_chunk
from .errors import ContractError, DecodeError, FormatError, TruncationError, ValidationError
from .model import FeatureTensor, Frame

MODE_CONCAT = "concat"
MODE_DDCONCAT = "ddconcat"
MODE_TILE = "tile"
_MODES = (MODE_CONCAT, MODE_DDCONCAT, MODE_TILE)

LEVELS = 255  # 8-bit code range


@dataclass(frozen=True)
class QuantMeta:
    v_min: float
    v_max: float
    bit_depth: int = 8

    def __post_init__(self):
        if not (np.isfinite(self.v_min) and np.isfinite(self.v_max)):
            raise ValidationError("quantizer range must be finite")
        if self.v_min > self.v_max:
            raise ValidationError(f"v_min {self.v_min} > v_max {self.v_max}")

    @property
    def degenerate(self) -> bool:
        return self.v_min == self.v_max


@dataclass(frozen=True)
class PackedPlanes:
    mode: str
    planes: tuple[np.ndarray, ...]
    channel_order: tuple[int, ...]
    pad_right: int
    pad_bottom: int
    grid_cols: int
    grid_rows: int
    channels: int
    height: int
    width: int
    quant: QuantMeta
    network_id: str = ""
    layer_id: str = ""

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValidationError(f"unknown packing mode {self.mode!r}")
        if sorted(self.channel_order) != list(range(self.channels)):
            raise ValidationError("channel_order is not a permutation")
        if self.mode == MODE_DDCONCAT and self.channel_order[0] != 0:
            raise ValidationError("reordered concatenation must keep channel 0 first")
        for p in self.planes:
            if p.shape[0] % BLOCK or p.shape[1] % BLOCK:
                raise ValidationError(f"plane dims must be multiples of {BLOCK}, got {p.shape}")


def quantize_tensor(t: FeatureTensor) -> tuple[np.ndarray, QuantMeta]:
    """Uniform min-max quantization to 8-bit codes (round-half-up)."""
    v = t.values.astype(np.float64)
    meta = QuantMeta(float(v.min()), float(v.max()))
    if meta.degenerate:
        return np.zeros(v.shape, dtype=np.uint8), meta
    scaled = (v - meta.v_min) * (LEVELS / (meta.v_max - meta.v_min))
    codes = np.clip(np.floor(scaled + 0.5), 0, LEVELS).astype(np.uint8)
    return codes, meta


def dequantize_codes(codes: np.ndarray, meta: QuantMeta) -> np.ndarray:
    if meta.degenerate:
        return np.full(codes.shape, meta.v_min, dtype=np.float32)
    v = meta.v_min + codes.astype(np.float64) * ((meta.v_max - meta.v_min) / LEVELS)
    return v.astype(np.float32)


def _greedy_chain_order(values: np.ndarray) -> tuple[int, ...]:
    """Channel 0 first, then repeatedly the nearest unused channel (L2)."""
    c = values.shape[0]
    flat = values.reshape(c, -1).astype(np.float64)
    order = [0]
    unused = list(range(1, c))
    while unused:
        prev = flat[order[-1]]
        dists = np.linalg.norm(flat[unused] - prev, axis=1)
        pick = int(np.argmin(dists))  # first minimum = lowest index
        order.append(unused.pop(pick))
    return tuple(order)


def _pad_plane(plane: np.ndarray) -> tuple[np.ndarray, int, int]:
    h, w = plane.shape
    pb = (-h) % BLOCK
    pr = (-w) % BLOCK
    if pb or pr:
        plane = np.pad(plane, ((0, pb), (0, pr)))
    return plane, pr, pb


def pack_tensor(t: FeatureTensor, mode: str) -> PackedPlanes:
    if mode not in _MODES:
        raise ContractError(f"unknown packing mode {mode!r}")
    codes, meta = quantize_tensor(t)
    c, h, w = codes.shape

    if mode == MODE_TILE:
        grid_cols = int(np.ceil(np.sqrt(c)))
        grid_rows = int(np.ceil(c / grid_cols))
        mosaic = np.zeros((grid_rows * h, grid_cols * w), dtype=np.uint8)
        for i in range(c):
            r, col = divmod(i, grid_cols)
            mosaic[r * h : (r + 1) * h, col * w : (col + 1) * w] = codes[i]
        plane, pr, pb = _pad_plane(mosaic)
        planes = (plane,)
        order = tuple(range(c))
    else:
        order = _greedy_chain_order(t.values) if mode == MODE_DDCONCAT else tuple(range(c))
        grid_cols = grid_rows = 0
        padded = [_pad_plane(codes[i]) for i in order]
        planes = tuple(p for p, _, _ in padded)
        pr, pb = padded[0][1], padded[0][2]

    return PackedPlanes(
        mode=mode,
        planes=planes,
        channel_order=order,
        pad_right=pr,
        pad_bottom=pb,
        grid_cols=grid_cols,
        grid_rows=grid_rows,
        channels=c,
        height=h,
        width=w,
        quant=meta,
        network_id=t.network_id,
        layer_id=t.layer_id,
    )


def unpack_tensor(p: PackedPlanes) -> FeatureTensor:
    """Invert padding, tiling and ordering, then dequantize."""
    c, h, w = p.channels, p.height, p.width
    codes = np.zeros((c, h, w), dtype=np.uint8)

    if p.mode == MODE_TILE:
        if len(p.planes) != 1:
            raise FormatError(f"tile packing expects one plane, got {len(p.planes)}")
        want = (p.grid_rows * h + p.pad_bottom, p.grid_cols * w + p.pad_right)
        plane = p.planes[0]
        if plane.shape != want:
            raise FormatError(f"mosaic is {plane.shape}, expected {want}")
        if p.grid_cols * p.grid_rows < c:
            raise FormatError("tile grid smaller than channel count")
        for i in range(c):
            r, col = divmod(i, p.grid_cols)
            codes[i] = plane[r * h : (r + 1) * h, col * w : (col + 1) * w]
    else:
        if len(p.planes) != c:
            raise FormatError(f"expected {c} planes, got {len(p.planes)}")
        want = (h + p.pad_bottom, w + p.pad_right)
        for i, plane in enumerate(p.planes):
            if plane.shape != want:
                raise FormatError(f"plane {i} is {plane.shape}, expected {want}")
            codes[p.channel_order[i]] = plane[:h, :w]

    return FeatureTensor(
        values=dequantize_codes(codes, p.quant),
        network_id=p.network_id,
        layer_id=p.layer_id,
    )


# --- feature prediction across levels ---------------------------------------


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class Resample:
    pass


@dataclass(frozen=True)
class LinearMap:
    pairs: tuple[tuple[FeatureTensor, FeatureTensor], ...]


def _resample_plane(plane: np.ndarray, ht: int, wt: int) -> np.ndarray:
    h, w = plane.shape
    ys = np.linspace(0.0, h - 1, ht) if ht > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, wt) if wt > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).reshape(-1, 1)
    fx = (xs - x0).reshape(1, -1)
    p = plane.astype(np.float64)
    top = p[np.ix_(y0, x0)] * (1 - fx) + p[np.ix_(y0, x1)] * fx
    bot = p[np.ix_(y1, x0)] * (1 - fx) + p[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def _resample_tensor(values: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    ct, ht, wt = shape
    c = values.shape[0]
    out = np.zeros((ct, ht, wt), dtype=np.float64)
    for i in range(min(c, ct)):  # channel truncation / zero-extension
        out[i] = _resample_plane(values[i], ht, wt)
    return out


def predict_feature(
    source: FeatureTensor,
    target_shape: tuple[int, int, int],
    predictor: Identity | Resample | LinearMap = Identity(),
) -> tuple[FeatureTensor, bool]:
    """Project a feature to another level's space; returns (prediction, fallback).

    The fallback flag is set when a LinearMap fit is singular and the
    prediction degrades to plain resampling.
    """
    ct, ht, wt = target_shape
    if min(target_shape) < 1:
        raise ContractError(f"target shape must be positive, got {target_shape}")

    if isinstance(predictor, Identity):
        if source.values.shape != tuple(target_shape):
            raise ContractError(
                f"identity predictor needs matching shapes: {source.values.shape} vs {tuple(target_shape)}"
            )
        return FeatureTensor(source.values, source.network_id, source.layer_id), False

    resampled = _resample_tensor(source.values, (ct, ht, wt))
    if isinstance(predictor, Resample):
        return FeatureTensor(resampled.astype(np.float32), source.network_id, source.layer_id), False

    if not isinstance(predictor, LinearMap):
        raise ContractError(f"unknown predictor {predictor!r}")
    if not predictor.pairs:
        raise ContractError("linear map needs at least one calibration pair")
    for sx, ty in predictor.pairs:
        if sx.channels != source.channels or ty.channels != ct:
            raise ContractError("calibration pair channel counts do not match")

    # Per-channel scalar affine fit on (resampled source, target) pairs.
    xs = [_resample_tensor(sx.values, (ct, ht, wt)) for sx, _ in predictor.pairs]
    ys = [_resample_tensor(ty.values, (ct, ht, wt)) for _, ty in predictor.pairs]
    weights = np.ones(ct)
    biases = np.zeros(ct)
    for ch in range(ct):
        x = np.concatenate([a[ch].ravel() for a in xs])
        y = np.concatenate([a[ch].ravel() for a in ys])
        var = x.var()
        if var < 1e-12:
            return (
                FeatureTensor(resampled.astype(np.float32), source.network_id, source.layer_id),
                True,
            )
        weights[ch] = ((x - x.mean()) * (y - y.mean())).sum() / (x.size * var)
        biases[ch] = y.mean() - weights[ch] * x.mean()

    predicted = resampled * weights[:, None, None] + biases[:, None, None]
    return FeatureTensor(predicted.astype(np.float32), source.network_id, source.layer_id), False


# --- coded feature payload ---------------------------------------------------


def _encode_planes(planes: tuple[np.ndarray, ...], mode: str, qp: int) -> list[CodedChunk]:
    """Tile mode codes its mosaic intra; concatenations chain planes as IPPP."""
    cfg = CodecConfig(qp=qp, gop="ippp")
    chunks = []
    prev: Frame | None = None
    for plane in planes:
        frame = Frame(plane)
        ref = prev if mode != MODE_TILE else None
        chunk, rec = encode_frame(frame, ref, cfg)
        chunks.append(chunk)
        prev = rec
    return chunks


def encode_feature_payload(t: FeatureTensor, mode: str, qp: int) -> bytes:
    packed = pack_tensor(t, mode)
    chunks = _encode_planes(packed.planes, mode, qp)
    net = packed.network_id.encode("utf-8")
    lay = packed.layer_id.encode("utf-8")
    out = bytearray()
    out += struct.pack("<B", _MODES.index(mode))
    out += struct.pack("<HHH", packed.channels, packed.height, packed.width)
    out += struct.pack("<B", len(net)) + net
    out += struct.pack("<B", len(lay)) + lay
    out += struct.pack(f"<{packed.channels}H", *packed.channel_order)
    out += struct.pack("<HH", packed.pad_right, packed.pad_bottom)
    out += struct.pack("<HH", packed.grid_cols, packed.grid_rows)
    out += struct.pack("<ff", packed.quant.v_min, packed.quant.v_max)
    out += struct.pack("<H", len(chunks))
    for chunk in chunks:
        b = chunk.to_bytes()
        out += struct.pack("<I", len(b)) + b
    return bytes(out)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, context: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(self.pos + n, len(self.data), context)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, context: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), context))


def decode_feature_payload(data: bytes) -> FeatureTensor:
    cur = _Cursor(data)
    (mode_idx,) = cur.unpack("<B", "feature mode")
    if mode_idx >= len(_MODES):
        raise FormatError(f"unknown feature packing mode byte {mode_idx}")
    mode = _MODES[mode_idx]
    c, h, w = cur.unpack("<HHH", "feature dims")
    if min(c, h, w) < 1:
        raise FormatError(f"feature dims must be positive, got ({c},{h},{w})")
    (nlen,) = cur.unpack("<B", "network label")
    try:
        network_id = cur.take(nlen, "network label").decode("utf-8")
        (llen,) = cur.unpack("<B", "layer label")
        layer_id = cur.take(llen, "layer label").decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"label is not valid utf-8: {e}") from e
    order = cur.unpack(f"<{c}H", "channel order")
    pr, pb = cur.unpack("<HH", "pads")
    gc, gr = cur.unpack("<HH", "grid")
    v_min, v_max = cur.unpack("<ff", "quant meta")
    if not (np.isfinite(v_min) and np.isfinite(v_max)) or v_min > v_max:
        raise FormatError(f"invalid quantizer range [{v_min}, {v_max}]")
    (n_planes,) = cur.unpack("<H", "plane count")
    if n_planes != (1 if mode == MODE_TILE else c):
        raise FormatError(f"plane count {n_planes} inconsistent with mode {mode}")

    planes = []
    prev: Frame | None = None
    for i in range(n_planes):
        (clen,) = cur.unpack("<I", f"plane {i} length")
        chunk = parse_chunk(cur.take(clen, f"plane {i} chunk"))
        if chunk.frame_type == "P" and prev is None:
            raise DecodeError("first plane chunk must be intra", stream="feature", frame_index=i)
        rec = decode_frame(chunk, prev if chunk.frame_type == "P" else None)
        planes.append(rec.samples)
        prev = rec
    if cur.pos != len(data):
        raise FormatError(f"{len(data) - cur.pos} trailing bytes after feature payload")

    packed = PackedPlanes(
        mode=mode,
        planes=tuple(planes),
        channel_order=tuple(int(o) for o in order),
        pad_right=pr,
        pad_bottom=pb,
        grid_cols=gc,
        grid_rows=gr,
        channels=c,
        height=h,
        width=w,
        quant=QuantMeta(float(v_min), float(v_max)),
        network_id=network_id,
        layer_id=layer_id,
    )
    return unpack_tensor(packed)
