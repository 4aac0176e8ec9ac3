"""Feature-assisted predictive coding with an optional scalable layer.

Base layer: the first frame of a clip is its key frame (intra coded);
keypoints are extracted for every frame, quantized and packed losslessly;
every non-key frame is synthesized by warping the *decoded* key frame with
*decoded* keypoints, and the synthesis residue is offset-shifted into 8-bit
range and intra coded. Encoder and decoder therefore build identical
predictions; there is no drift.

Enhancement layer: per-point position refinements on a step-1 lattice plus
optional extra keypoints sharpen the warp; the incremental residue (source
minus refined synthesis minus decoded base residue) is coded at its own qp.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .codec import CodecConfig, CodedChunk, decode_frame, encode_frame, parse_chunk
from .container import ContainerHeader, StreamKind, demux, mux
from .errors import ContractError, DecodeError, FormatError, TruncationError, ValidationError, VcmError
from .keypoints import (
    QuantizedKeypointSet,
    decode_keypoint_stream,
    dequantize_keypoints,
    encode_keypoint_stream,
    lzma_unwrap,
    lzma_wrap,
    quantize_keypoints,
)
from .model import Frame, Keypoint, KeyFrameSchedule, KeypointSet, VideoClip
from .motion import ExtractorConfig, extract_keypoints, generate_predicted_frame

RESIDUE_OFFSET = 128


@dataclass(frozen=True)
class LayeredStreams:
    """One clip's multiplexed payloads plus its key-frame schedule."""

    key_chunks: tuple[CodedChunk, ...]
    keypoint_stream: bytes
    residue_chunks: tuple[CodedChunk, ...]
    schedule: KeyFrameSchedule
    fps: float
    width: int
    height: int
    enhancement: bytes | None = None
    saturated_residuals: int = 0


@dataclass(frozen=True)
class RefinementConfig:
    qp: int
    extra_points: int = 0

    def __post_init__(self):
        if not 0 <= self.qp <= 51:
            raise ContractError(f"qp must be in [0, 51], got {self.qp}")
        if not 0 <= self.extra_points <= 255:
            raise ContractError("extra_points must be in [0, 255]")


def _offset_residue(diff: np.ndarray) -> tuple[Frame, int]:
    shifted = diff + RESIDUE_OFFSET
    saturated = int(np.count_nonzero((shifted < 0) | (shifted > 255)))
    return Frame(np.clip(shifted, 0, 255).astype(np.uint8)), saturated


def encode_predictive_clip(
    v: VideoClip, cfg: ExtractorConfig, qp_key: int, qp_res: int
) -> LayeredStreams:
    """Key frame + keypoint stream + per-frame synthesis residues."""
    key_chunk, key_recon = encode_frame(v.frames[0], None, CodecConfig(qp=qp_key, gop="all_intra"))

    kp_sets = extract_keypoints(v, cfg)
    q_sets = [quantize_keypoints(s) for s in kp_sets]
    kp_bytes = encode_keypoint_stream(q_sets)
    # Decoder-identical keypoints drive the encoder-side synthesis.
    dec_sets = [dequantize_keypoints(q, v.width, v.height)[0] for q in q_sets]

    res_cfg = CodecConfig(qp=qp_res, gop="all_intra")
    residue_chunks = []
    saturated = 0
    for t in range(1, len(v)):
        predicted = generate_predicted_frame(key_recon, dec_sets[0], dec_sets[t])
        diff = v.frames[t].samples.astype(np.int16) - predicted.samples.astype(np.int16)
        res_frame, sat = _offset_residue(diff)
        saturated += sat
        chunk, _ = encode_frame(res_frame, None, res_cfg)
        residue_chunks.append(chunk)

    return LayeredStreams(
        key_chunks=(key_chunk,),
        keypoint_stream=kp_bytes,
        residue_chunks=tuple(residue_chunks),
        schedule=KeyFrameSchedule.first_frame(len(v)),
        fps=v.fps,
        width=v.width,
        height=v.height,
        saturated_residuals=saturated,
    )


def _decode_key_frame(s: LayeredStreams) -> Frame:
    try:
        return decode_frame(s.key_chunks[0], None)
    except VcmError as e:
        raise DecodeError(f"key frame undecodable: {e}", stream="key-frame", frame_index=0) from e


def _decode_keypoints(s: LayeredStreams) -> list[QuantizedKeypointSet]:
    try:
        q_sets = decode_keypoint_stream(s.keypoint_stream)
    except VcmError as e:
        raise DecodeError(f"keypoint stream undecodable: {e}", stream="keypoint") from e
    if len(q_sets) != len(s.schedule):
        raise DecodeError(
            f"keypoint stream has {len(q_sets)} frames, clip has {len(s.schedule)}",
            stream="keypoint",
        )
    return q_sets


def _base_components(
    s: LayeredStreams,
) -> tuple[Frame, list[KeypointSet], list[Frame | None], list[np.ndarray | None]]:
    """Key frame, decoded keypoints, per-frame syntheses and base residues."""
    key_recon = _decode_key_frame(s)
    q_sets = _decode_keypoints(s)
    dec_sets = [dequantize_keypoints(q, s.width, s.height)[0] for q in q_sets]
    n = len(s.schedule)
    if len(s.residue_chunks) != n - 1:
        raise DecodeError(
            f"{len(s.residue_chunks)} residue chunks for {n} frames", stream="residue"
        )
    predictions: list[Frame | None] = [None] * n
    residues: list[np.ndarray | None] = [None] * n
    for t in range(1, n):
        predictions[t] = generate_predicted_frame(key_recon, dec_sets[0], dec_sets[t])
        try:
            res = decode_frame(s.residue_chunks[t - 1], None)
        except VcmError as e:
            raise DecodeError(
                f"residue undecodable: {e}", stream="residue", frame_index=t
            ) from e
        residues[t] = res.samples.astype(np.int16) - RESIDUE_OFFSET
    return key_recon, dec_sets, predictions, residues


def decode_predictive_clip(s: LayeredStreams) -> tuple[VideoClip, list[KeypointSet]]:
    """Reconstruct the clip and the decoded keypoints (machine-side features)."""
    key_recon, dec_sets, predictions, residues = _base_components(s)
    frames = [key_recon]
    for t in range(1, len(s.schedule)):
        raw = predictions[t].samples.astype(np.int16) + residues[t]
        frames.append(Frame(np.clip(raw, 0, 255).astype(np.uint8)))
    return VideoClip(tuple(frames), fps=s.fps), dec_sets


def decode_keypoints_only(s: LayeredStreams) -> list[KeypointSet]:
    """Machine-vision path: decodes features without touching pixel streams."""
    q_sets = _decode_keypoints(s)
    return [dequantize_keypoints(q, s.width, s.height)[0] for q in q_sets]


# --- scalable enhancement -----------------------------------------------------


def _refined_sets(
    base_sets: list[KeypointSet],
    deltas: np.ndarray,
    extras: list[QuantizedKeypointSet] | None,
    width: int,
    height: int,
) -> list[KeypointSet]:
    """Apply step-1 position refinements and append extra points."""
    out = []
    for t, base in enumerate(base_sets):
        points = [
            replace(
                p,
                x=float(np.clip(p.x + deltas[t, i, 0], 0, width - 1)),
                y=float(np.clip(p.y + deltas[t, i, 1], 0, height - 1)),
            )
            for i, p in enumerate(base.points)
        ]
        if extras is not None:
            ex_set, _ = dequantize_keypoints(extras[t], width, height)
            # Extra positions ride the step-1 lattice: indices are pixels.
            for j, p in enumerate(ex_set.points):
                points.append(
                    replace(
                        p,
                        x=float(np.clip(extras[t].positions[j, 0], 0, width - 1)),
                        y=float(np.clip(extras[t].positions[j, 1], 0, height - 1)),
                    )
                )
        out.append(KeypointSet(base.frame_index, tuple(points)))
    return out


def encode_enhancement(
    v: VideoClip, base: LayeredStreams, refine: RefinementConfig, cfg: ExtractorConfig
) -> bytes:
    """Build the enhancement payload against decodable base streams."""
    key_recon, base_sets, base_pred, base_res = _base_components(base)
    n = len(base.schedule)
    if len(v) != n:
        raise ContractError(f"clip has {len(v)} frames, base streams {n}")
    k = base_sets[0].k
    ext = extract_keypoints(v, cfg, extra_points=refine.extra_points)
    if len(ext[0].points) != k + refine.extra_points:
        raise ContractError(
            f"extractor config yields K={len(ext[0].points) - refine.extra_points}, base has K={k}"
        )

    deltas = np.zeros((n, k, 2), dtype=np.int64)
    extras_q: list[QuantizedKeypointSet] = []
    for t in range(n):
        for i in range(k):
            orig = ext[t].points[i]
            deltas[t, i, 0] = int(np.floor(orig.x + 0.5)) - int(base_sets[t].points[i].x)
            deltas[t, i, 1] = int(np.floor(orig.y + 0.5)) - int(base_sets[t].points[i].y)
        if refine.extra_points:
            tail = ext[t].points[k:]
            pos = np.floor(np.array([[p.x, p.y] for p in tail]) + 0.5).astype(np.int16)
            cov = np.floor(np.array([p.inv_cov for p in tail]) / 64.0 + 0.5).astype(np.int16)
            extras_q.append(QuantizedKeypointSet(t, pos, cov))
    if np.abs(deltas).max(initial=0) > 127:
        raise ValidationError("position refinement exceeds one byte")

    blob = bytearray(struct.pack("<HBB", n, k, refine.extra_points))
    for t in range(n):
        blob += deltas[t].astype("<i1").tobytes()
        if refine.extra_points:
            blob += np.concatenate(
                [extras_q[t].positions, extras_q[t].inv_cov], axis=1
            ).astype("<i2").tobytes()
    delta_payload = lzma_wrap(bytes(blob))

    enh_sets = _refined_sets(base_sets, deltas, extras_q if refine.extra_points else None,
                             base.width, base.height)
    res_cfg = CodecConfig(qp=refine.qp, gop="all_intra")
    chunks = []
    for t in range(1, n):
        refined_pred = generate_predicted_frame(key_recon, enh_sets[0], enh_sets[t])
        diff = (
            v.frames[t].samples.astype(np.int16)
            - refined_pred.samples.astype(np.int16)
            - base_res[t]
        )
        res_frame, _ = _offset_residue(diff)
        chunk, _ = encode_frame(res_frame, None, res_cfg)
        chunks.append(chunk)

    out = bytearray(struct.pack("<BB", refine.extra_points, refine.qp))
    out += struct.pack("<I", len(delta_payload)) + delta_payload
    out += _pack_chunks(chunks)
    return bytes(out)


def _parse_enhancement(
    data: bytes, n: int, k: int
) -> tuple[np.ndarray, list[QuantizedKeypointSet] | None, list[CodedChunk]]:
    if len(data) < 6:
        raise TruncationError(6, len(data), "enhancement header")
    extra_points, _qp = struct.unpack("<BB", data[:2])
    (dlen,) = struct.unpack("<I", data[2:6])
    if 6 + dlen > len(data):
        raise FormatError("enhancement refinement payload overruns stream")
    blob = lzma_unwrap(data[6 : 6 + dlen])
    if len(blob) < 4:
        raise TruncationError(4, len(blob), "refinement header")
    bn, bk, bext = struct.unpack("<HBB", blob[:4])
    if bn != n or bk != k or bext != extra_points:
        raise FormatError(
            f"refinement header ({bn},{bk},{bext}) does not match streams ({n},{k},{extra_points})"
        )
    stride = 2 * k + (12 * extra_points)
    body = blob[4:]
    if len(body) != n * stride:
        raise FormatError(f"refinement body is {len(body)} bytes, expected {n * stride}")
    deltas = np.zeros((n, k, 2), dtype=np.int64)
    extras: list[QuantizedKeypointSet] | None = [] if extra_points else None
    for t in range(n):
        row = body[t * stride : (t + 1) * stride]
        deltas[t] = np.frombuffer(row[: 2 * k], dtype="<i1").reshape(k, 2)
        if extra_points:
            vals = np.frombuffer(row[2 * k :], dtype="<i2").reshape(extra_points, 6)
            extras.append(QuantizedKeypointSet(t, vals[:, :2].copy(), vals[:, 2:].copy()))
    chunks = _unpack_chunks(data[6 + dlen :], "enhancement")
    return deltas, extras, chunks


def decode_enhanced(base: LayeredStreams, b_dv: bytes | None = None) -> tuple[VideoClip, bool]:
    """Reconstruct with the enhancement layer; falls back to the base layer.

    Returns (clip, enhanced_flag); the flag is False when no enhancement
    payload is available.
    """
    if b_dv is None:
        b_dv = base.enhancement
    if b_dv is None:
        clip, _ = decode_predictive_clip(base)
        return clip, False

    key_recon, base_sets, base_pred, base_res = _base_components(base)
    n = len(base.schedule)
    try:
        deltas, extras, chunks = _parse_enhancement(b_dv, n, base_sets[0].k)
    except VcmError as e:
        if isinstance(e, DecodeError):
            raise
        raise DecodeError(f"enhancement undecodable: {e}", stream="enhancement") from e
    if len(chunks) != n - 1:
        raise DecodeError(
            f"{len(chunks)} enhancement chunks for {n} frames", stream="enhancement"
        )

    enh_sets = _refined_sets(base_sets, deltas, extras, base.width, base.height)
    frames = [key_recon]
    for t in range(1, n):
        refined_pred = generate_predicted_frame(key_recon, enh_sets[0], enh_sets[t])
        try:
            inc = decode_frame(chunks[t - 1], None)
        except VcmError as e:
            raise DecodeError(
                f"incremental residue undecodable: {e}", stream="enhancement", frame_index=t
            ) from e
        raw = (
            refined_pred.samples.astype(np.int16)
            + base_res[t]
            + (inc.samples.astype(np.int16) - RESIDUE_OFFSET)
        )
        frames.append(Frame(np.clip(raw, 0, 255).astype(np.uint8)))
    return VideoClip(tuple(frames), fps=base.fps), True


# --- chunk framing and container bridging --------------------------------------


def _pack_chunks(chunks: list[CodedChunk] | tuple[CodedChunk, ...]) -> bytes:
    out = bytearray(struct.pack("<H", len(chunks)))
    for c in chunks:
        b = c.to_bytes()
        out += struct.pack("<I", len(b)) + b
    return bytes(out)


def _unpack_chunks(data: bytes, stream: str) -> list[CodedChunk]:
    if len(data) < 2:
        raise TruncationError(2, len(data), f"{stream} chunk count")
    (count,) = struct.unpack("<H", data[:2])
    pos = 2
    chunks = []
    for i in range(count):
        if pos + 4 > len(data):
            raise TruncationError(pos + 4, len(data), f"{stream} chunk {i} length")
        (clen,) = struct.unpack("<I", data[pos : pos + 4])
        pos += 4
        if pos + clen > len(data):
            raise TruncationError(pos + clen, len(data), f"{stream} chunk {i}")
        chunks.append(parse_chunk(data[pos : pos + clen]))
        pos += clen
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes in {stream} stream")
    return chunks


def streams_to_container(s: LayeredStreams) -> bytes:
    fps = Fraction(s.fps).limit_denominator(65535)
    header = ContainerHeader(
        fps_num=fps.numerator,
        fps_den=fps.denominator,
        width=s.width,
        height=s.height,
        frame_count=len(s.schedule),
        stream_count=3 + (1 if s.enhancement is not None else 0),
    )
    streams = [
        (StreamKind.KEY_FRAME_VIDEO, _pack_chunks(s.key_chunks)),
        (StreamKind.FEATURE, s.keypoint_stream),
        (StreamKind.RESIDUE, _pack_chunks(s.residue_chunks)),
    ]
    if s.enhancement is not None:
        streams.append((StreamKind.ENHANCEMENT, s.enhancement))
    return mux(header, streams)


def container_to_streams(data: bytes) -> LayeredStreams:
    header, streams = demux(data)
    for kind in (StreamKind.KEY_FRAME_VIDEO, StreamKind.FEATURE, StreamKind.RESIDUE):
        if kind not in streams:
            raise FormatError(f"container is missing the {kind.name} stream")
    if header.frame_count < 1:
        raise FormatError("clip container must declare at least one frame")
    if header.fps_num < 1 or header.fps_den < 1:
        raise FormatError("clip container must declare a positive fps")
    key_chunks = _unpack_chunks(streams[StreamKind.KEY_FRAME_VIDEO], "key-frame")
    residue_chunks = _unpack_chunks(streams[StreamKind.RESIDUE], "residue")
    if len(key_chunks) != 1:
        raise FormatError(f"expected one key-frame chunk, got {len(key_chunks)}")
    if len(residue_chunks) != header.frame_count - 1:
        raise FormatError(
            f"{len(residue_chunks)} residue chunks for {header.frame_count} frames"
        )
    return LayeredStreams(
        key_chunks=tuple(key_chunks),
        keypoint_stream=streams[StreamKind.FEATURE],
        residue_chunks=tuple(residue_chunks),
        schedule=KeyFrameSchedule.first_frame(header.frame_count),
        fps=header.fps_num / header.fps_den,
        width=header.width,
        height=header.height,
        enhancement=streams.get(StreamKind.ENHANCEMENT),
    )
