"""Block-based hybrid pixel codec: 8x8 DCT, intra DC/H/V, full-search inter.

The encoder keeps a closed loop: every mode decision is made against the
reconstruction the decoder will produce, and `encode_frame` returns that
reconstruction so callers can predict from decoder-identical data.

Chunk layout (little-endian): frame-type u8 (0=I, 1=P), qp u8, width u16,
height u16, then the bit-packed entropy payload, zero-padded to a byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bitio import BitReader, BitWriter, se_length, ue_length
from .errors import ContractError, DecodeError, FormatError, TruncationError
from .model import Frame, VideoClip

BLOCK = 8

GOP_ALL_INTRA = "all_intra"
GOP_IPPP = "ippp"

# Mode symbols as written to the stream.
_I_MODES = ("dc", "h", "v")
_P_MODES = ("skip", "inter", "dc", "h", "v")


def qstep_for(qp: int) -> float:
    return float(2.0 ** ((qp - 4) / 6.0))


@dataclass(frozen=True)
class CodecConfig:
    qp: int
    gop: str = GOP_IPPP
    search_range: int = 8

    def __post_init__(self):
        if not 0 <= self.qp <= 51:
            raise ContractError(f"qp must be in [0, 51], got {self.qp}")
        if self.gop not in (GOP_ALL_INTRA, GOP_IPPP):
            raise ContractError(f"unknown gop mode {self.gop!r}")
        if self.search_range < 1:
            raise ContractError("search_range must be >= 1")

    @property
    def qstep(self) -> float:
        return qstep_for(self.qp)


@dataclass(frozen=True)
class CodedChunk:
    frame_type: str  # "I" or "P"
    qp: int
    width: int
    height: int
    payload: bytes

    def to_bytes(self) -> bytes:
        kind = 0 if self.frame_type == "I" else 1
        return struct.pack("<BBHH", kind, self.qp, self.width, self.height) + self.payload


def parse_chunk(data: bytes) -> CodedChunk:
    if len(data) < 6:
        raise TruncationError(6, len(data), "chunk header")
    kind, qp, width, height = struct.unpack("<BBHH", data[:6])
    if kind not in (0, 1):
        raise FormatError(f"unknown frame type byte {kind}")
    if qp > 51:
        raise FormatError(f"qp {qp} out of range")
    return CodedChunk("I" if kind == 0 else "P", qp, width, height, data[6:])


def _dct_basis() -> np.ndarray:
    n = np.arange(BLOCK)
    k = n.reshape(-1, 1)
    basis = np.cos(np.pi * (2 * n + 1) * k / (2 * BLOCK))
    basis *= np.sqrt(2.0 / BLOCK)
    basis[0] *= np.sqrt(0.5)
    return basis


_DCT = _dct_basis()


def transform_block(block: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Orthonormal 2-D DCT-II of an 8x8 block (or its exact inverse)."""
    b = np.asarray(block, dtype=np.float64)
    if b.shape != (BLOCK, BLOCK):
        raise ContractError(f"transform needs an 8x8 block, got {b.shape}")
    if inverse:
        return _DCT.T @ b @ _DCT
    return _DCT @ b @ _DCT.T


def _zigzag_order() -> np.ndarray:
    order = []
    for s in range(2 * BLOCK - 1):
        rng = range(max(0, s - BLOCK + 1), min(s, BLOCK - 1) + 1)
        rows = reversed(rng) if s % 2 == 0 else rng
        order.extend(i * BLOCK + (s - i) for i in rows)
    return np.array(order, dtype=np.intp)


_ZIGZAG = _zigzag_order()
_UNZIGZAG = np.argsort(_ZIGZAG)


def _quantize(coef: np.ndarray, qstep: float) -> np.ndarray:
    return np.rint(coef / qstep).astype(np.int64)


def _reconstruct(pred: np.ndarray, qcoef: np.ndarray, qstep: float) -> np.ndarray:
    """Decoder-side reconstruction, shared with the encoder's closed loop."""
    res = _DCT.T @ (qcoef * qstep) @ _DCT
    return np.clip(np.floor(res + pred + 0.5), 0, 255).astype(np.uint8)


def _residual_bits(zz: np.ndarray) -> int:
    bits = 1  # final end-of-block flag
    prev = -1
    for pos in np.nonzero(zz)[0]:
        bits += 1 + ue_length(int(pos - prev - 1)) + se_length(int(zz[pos]))
        prev = pos
    return bits


def _write_residual(w: BitWriter, zz: np.ndarray) -> None:
    prev = -1
    for pos in np.nonzero(zz)[0]:
        w.write_bits(1, 1)
        w.write_ue(int(pos - prev - 1))
        w.write_se(int(zz[pos]))
        prev = pos
    w.write_bits(0, 1)


def _read_residual(r: BitReader) -> np.ndarray:
    zz = np.zeros(BLOCK * BLOCK, dtype=np.int64)
    pos = -1
    while r.read_bits(1):
        pos += 1 + r.read_ue()
        if pos >= BLOCK * BLOCK:
            raise DecodeError("residual coefficient index out of range")
        zz[pos] = r.read_se()
    return zz


def _intra_predictions(recon: np.ndarray, y: int, x: int) -> dict[str, np.ndarray]:
    """DC/horizontal/vertical predictions from reconstructed neighbors."""
    top = recon[y - 1, x : x + BLOCK].astype(np.float64) if y > 0 else None
    left = recon[y : y + BLOCK, x - 1].astype(np.float64) if x > 0 else None
    if top is None and left is None:
        dc = 128.0
    elif top is None:
        dc = np.floor(left.mean() + 0.5)
    elif left is None:
        dc = np.floor(top.mean() + 0.5)
    else:
        dc = np.floor((top.sum() + left.sum()) / (2 * BLOCK) + 0.5)
    preds = {"dc": np.full((BLOCK, BLOCK), dc)}
    preds["h"] = np.repeat(left.reshape(-1, 1), BLOCK, axis=1) if left is not None else np.full((BLOCK, BLOCK), 128.0)
    preds["v"] = np.repeat(top.reshape(1, -1), BLOCK, axis=0) if top is not None else np.full((BLOCK, BLOCK), 128.0)
    return preds


def _motion_search(ref: np.ndarray, orig: np.ndarray, y: int, x: int, srange: int) -> tuple[int, int, int]:
    """Full search over in-bounds displacements; returns (dy, dx, sad)."""
    h, w = ref.shape
    y0, y1 = max(0, y - srange), min(h - BLOCK, y + srange)
    x0, x1 = max(0, x - srange), min(w - BLOCK, x + srange)
    region = ref[y0 : y1 + BLOCK, x0 : x1 + BLOCK]
    wins = sliding_window_view(region, (BLOCK, BLOCK))
    sads = np.abs(wins.astype(np.int64) - orig).sum(axis=(2, 3))
    flat = int(np.argmin(sads))  # raster-first tie break
    i, j = divmod(flat, sads.shape[1])
    return y0 + i - y, x0 + j - x, int(sads[i, j])


def _trial(orig: np.ndarray, pred: np.ndarray, qstep: float) -> tuple[np.ndarray, np.ndarray, float, int]:
    coef = _DCT @ (orig - pred) @ _DCT.T
    qz = _quantize(coef, qstep).ravel()[_ZIGZAG]
    recon = _reconstruct(pred, (qz[_UNZIGZAG]).reshape(BLOCK, BLOCK), qstep)
    sse = float(np.square(orig - recon).sum())
    return qz, recon, sse, _residual_bits(qz)


def encode_frame(
    f: Frame, reference: Frame | None, cfg: CodecConfig
) -> tuple[CodedChunk, Frame]:
    """Encode one frame; returns the chunk and the decoder-identical reconstruction."""
    h, w = f.height, f.width
    if h % BLOCK or w % BLOCK:
        raise ContractError(f"frame dims must be multiples of {BLOCK}, got {w}x{h}")
    if reference is not None and (reference.height, reference.width) != (h, w):
        raise ContractError("reference geometry does not match frame")

    qstep = cfg.qstep
    lam = 0.85 * qstep * qstep
    px = f.samples.astype(np.float64)
    ref = reference.samples.astype(np.int64) if reference is not None else None
    recon = np.zeros((h, w), dtype=np.uint8)
    inter_frame = ref is not None
    modes = _P_MODES if inter_frame else _I_MODES
    writer = BitWriter()

    for y in range(0, h, BLOCK):
        for x in range(0, w, BLOCK):
            orig = px[y : y + BLOCK, x : x + BLOCK]
            candidates: list[tuple[str, tuple, float, int]] = []

            if inter_frame:
                skip_pred = ref[y : y + BLOCK, x : x + BLOCK]
                skip_sse = float(np.square(orig - skip_pred).sum())
                if skip_sse == 0.0:
                    # static block: nothing can beat skip at zero distortion
                    writer.write_ue(0)
                    recon[y : y + BLOCK, x : x + BLOCK] = skip_pred
                    continue
                candidates.append(("skip", (skip_pred.astype(np.uint8),), skip_sse, ue_length(0)))
                dy, dx, _ = _motion_search(ref, orig.astype(np.int64), y, x, cfg.search_range)
                mv_pred = ref[y + dy : y + dy + BLOCK, x + dx : x + dx + BLOCK].astype(np.float64)
                qz, rb, sse, rbits = _trial(orig, mv_pred, qstep)
                bits = ue_length(1) + se_length(dy) + se_length(dx) + rbits
                candidates.append(("inter", (dy, dx, qz, rb), sse, bits))

            preds = _intra_predictions(recon, y, x)
            for mode in ("dc", "h", "v"):
                qz, rb, sse, rbits = _trial(orig, preds[mode], qstep)
                bits = ue_length(modes.index(mode)) + rbits
                candidates.append((mode, (qz, rb), sse, bits))

            best = min(candidates, key=lambda c: c[2] + lam * c[3])
            mode, payload = best[0], best[1]
            writer.write_ue(modes.index(mode))
            if mode == "skip":
                recon[y : y + BLOCK, x : x + BLOCK] = payload[0]
            elif mode == "inter":
                dy, dx, qz, rb = payload
                writer.write_se(dy)
                writer.write_se(dx)
                _write_residual(writer, qz)
                recon[y : y + BLOCK, x : x + BLOCK] = rb
            else:
                qz, rb = payload
                _write_residual(writer, qz)
                recon[y : y + BLOCK, x : x + BLOCK] = rb

    chunk = CodedChunk("P" if inter_frame else "I", cfg.qp, w, h, writer.getvalue())
    return chunk, Frame(recon)


def decode_frame(c: CodedChunk, reference: Frame | None = None) -> Frame:
    """Decode a chunk to the encoder's closed-loop reconstruction, bit-exactly."""
    if c.frame_type == "P" and reference is None:
        raise ContractError("P chunk needs a reference frame")
    if c.frame_type == "I" and reference is not None:
        reference = None
    h, w = c.height, c.width
    if h % BLOCK or w % BLOCK or h == 0 or w == 0:
        raise DecodeError(f"chunk geometry invalid: {w}x{h}")
    if reference is not None and (reference.height, reference.width) != (h, w):
        raise ContractError("reference geometry does not match chunk")

    qstep = qstep_for(c.qp)
    ref = reference.samples.astype(np.int64) if reference is not None else None
    modes = _P_MODES if ref is not None else _I_MODES
    recon = np.zeros((h, w), dtype=np.uint8)
    reader = BitReader(c.payload)

    try:
        for y in range(0, h, BLOCK):
            for x in range(0, w, BLOCK):
                mode_idx = reader.read_ue()
                if mode_idx >= len(modes):
                    raise DecodeError(f"invalid mode symbol {mode_idx}")
                mode = modes[mode_idx]
                if mode == "skip":
                    recon[y : y + BLOCK, x : x + BLOCK] = ref[y : y + BLOCK, x : x + BLOCK]
                    continue
                if mode == "inter":
                    dy = reader.read_se()
                    dx = reader.read_se()
                    if not (0 <= y + dy <= h - BLOCK and 0 <= x + dx <= w - BLOCK):
                        raise DecodeError(f"motion vector ({dy},{dx}) out of bounds")
                    pred = ref[y + dy : y + dy + BLOCK, x + dx : x + dx + BLOCK].astype(np.float64)
                else:
                    pred = _intra_predictions(recon, y, x)[mode]
                zz = _read_residual(reader)
                qcoef = zz[_UNZIGZAG].reshape(BLOCK, BLOCK)
                recon[y : y + BLOCK, x : x + BLOCK] = _reconstruct(pred, qcoef, qstep)
        if reader.bits_left() >= 8 or (reader.bits_left() and reader.read_bits(reader.bits_left())):
            raise DecodeError("trailing data after last block")
    except TruncationError as e:
        raise DecodeError(f"payload truncated: {e}") from e
    return Frame(recon)


def encode_clip(v: VideoClip, cfg: CodecConfig) -> tuple[list[CodedChunk], VideoClip]:
    """Encode a clip; returns chunks and the reconstruction clip."""
    chunks: list[CodedChunk] = []
    recons: list[Frame] = []
    prev: Frame | None = None
    for f in v.frames:
        ref = prev if cfg.gop == GOP_IPPP else None
        chunk, rec = encode_frame(f, ref, cfg)
        chunks.append(chunk)
        recons.append(rec)
        prev = rec
    return chunks, VideoClip(tuple(recons), fps=v.fps)


def decode_clip(chunks: list[CodedChunk], fps: float = 30.0) -> VideoClip:
    if not chunks:
        raise ContractError("no chunks to decode")
    frames: list[Frame] = []
    prev: Frame | None = None
    for i, c in enumerate(chunks):
        if c.frame_type == "P" and prev is None:
            raise DecodeError("first chunk must be an I frame", frame_index=i)
        rec = decode_frame(c, prev if c.frame_type == "P" else None)
        frames.append(rec)
        prev = rec
    return VideoClip(tuple(frames), fps=fps)
