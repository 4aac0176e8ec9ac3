"""Command-line front end wiring the codec, pipeline, metrics and optimizer.

Exit codes: 0 success, 1 usage error, 2 data error, 3 infeasible allocation.
Every verb is deterministic and writes outputs atomically (temp file plus
rename), so failed runs never leave partial files behind.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

from .codec import CodecConfig, encode_clip
from .container import ContainerHeader, StreamKind, demux, inspect_container, mux
from .errors import InfeasibleBudgetError, VcmError
from .fileio import read_raw_video, read_tensor_file, write_raw_video, write_tensor_file
from .keypoints import decode_keypoint_stream, dequantize_keypoints
from .metrics import bitrate_kbps, psnr, ssim, write_metrics_csv
from .motion import ExtractorConfig
from .packing import decode_feature_payload, encode_feature_payload
from .pipeline import (
    RefinementConfig,
    container_to_streams,
    decode_enhanced,
    decode_predictive_clip,
    encode_enhancement,
    encode_predictive_clip,
    streams_to_container,
)
from .rdopt import TaskSpec, allocate_budget, build_rd_curve, read_rd_csv, write_rd_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INFEASIBLE = 3


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".vcmkit-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        _atomic_write(path, text.encode("utf-8"))


def _read_clip(args) -> "VideoClip":
    with open(args.input, "rb") as f:
        return read_raw_video(f, args.width, args.height, args.frames, args.fps)


def _add_geometry(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--fps", type=float, default=30.0)


def _cmd_feature_encode(args) -> int:
    with open(args.input, "rb") as f:
        tensor = read_tensor_file(f)
    payload = encode_feature_payload(tensor, args.mode, args.qp)
    header = ContainerHeader(
        fps_num=0,
        fps_den=1,
        width=tensor.width,
        height=tensor.height,
        frame_count=tensor.channels,
        stream_count=1,
    )
    _atomic_write(args.output, mux(header, [(StreamKind.PACKED_FEATURE_PLANES, payload)]))
    return EXIT_OK


def _cmd_feature_decode(args) -> int:
    with open(args.input, "rb") as f:
        _, streams = demux(f.read())
    if StreamKind.PACKED_FEATURE_PLANES not in streams:
        raise VcmError("container has no packed-feature stream")
    tensor = decode_feature_payload(streams[StreamKind.PACKED_FEATURE_PLANES])
    buf = io.BytesIO()
    write_tensor_file(tensor, buf)
    _atomic_write(args.output, buf.getvalue())
    return EXIT_OK


def _cmd_clip_encode(args) -> int:
    clip = _read_clip(args)
    cfg = ExtractorConfig(k=args.keypoints, lambda_rate=args.lambda_rate)
    streams = encode_predictive_clip(clip, cfg, args.qp_key, args.qp_res)
    if args.enhance:
        refine = RefinementConfig(qp=args.qp_enh, extra_points=args.extra_points)
        enhancement = encode_enhancement(clip, streams, refine, cfg)
        from dataclasses import replace

        streams = replace(streams, enhancement=enhancement)
    _atomic_write(args.output, streams_to_container(streams))
    return EXIT_OK


def _keypoints_csv(data: bytes) -> str:
    header, streams = demux(data)
    if StreamKind.FEATURE not in streams:
        raise VcmError("container has no feature stream")
    q_sets = decode_keypoint_stream(streams[StreamKind.FEATURE])
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["frame", "point", "x", "y", "ica", "icb", "icc", "icd"])
    for q in q_sets:
        kset, _ = dequantize_keypoints(q, header.width or None, header.height or None)
        for i, p in enumerate(kset.points):
            a, b, c, d = p.inv_cov
            w.writerow([q.frame_index, i, f"{p.x:.1f}", f"{p.y:.1f}",
                        f"{a:.1f}", f"{b:.1f}", f"{c:.1f}", f"{d:.1f}"])
    return out.getvalue()


def _cmd_clip_decode(args) -> int:
    with open(args.input, "rb") as f:
        data = f.read()
    if args.machine_only:
        # Feature-stream-only path: pixel streams are never parsed.
        _write_text(args.output, _keypoints_csv(data))
        return EXIT_OK
    streams = container_to_streams(data)
    if streams.enhancement is not None:
        clip, _ = decode_enhanced(streams)
    else:
        clip, _ = decode_predictive_clip(streams)
    buf = io.BytesIO()
    write_raw_video(clip, buf)
    _atomic_write(args.output, buf.getvalue())
    return EXIT_OK


def _cmd_metrics(args) -> int:
    with open(args.reference, "rb") as f:
        ref = read_raw_video(f, args.width, args.height, args.frames, args.fps)
    with open(args.test, "rb") as f:
        test = read_raw_video(f, args.width, args.height, args.frames, args.fps)
    rows = []
    if args.psnr:
        for i, (a, b) in enumerate(zip(ref.frames, test.frames)):
            rows.append((i, "psnr", psnr(a, b).value))
        rows.append(("all", "psnr", psnr(ref, test).value))
    if args.ssim:
        values = []
        for i, (a, b) in enumerate(zip(ref.frames, test.frames)):
            v = ssim(a, b).value
            values.append(v)
            rows.append((i, "ssim", v))
        rows.append(("all", "ssim", sum(values) / len(values)))
    if args.bitrate:
        if not args.bytes_from:
            raise VcmError("--bitrate needs --bytes-from FILE")
        size = os.path.getsize(args.bytes_from)
        rows.append(("all", "bitrate_kbps", bitrate_kbps(size, args.frames, args.fps)))
    out = io.StringIO()
    write_metrics_csv(rows, out)
    _write_text(args.out, out.getvalue())
    return EXIT_OK


def _parse_grid(spec: str) -> list[int]:
    if not spec.startswith("qp="):
        raise VcmError(f"grid must look like qp=12,22,32, got {spec!r}")
    try:
        return [int(v) for v in spec[3:].split(",") if v]
    except ValueError as e:
        raise VcmError(f"bad grid value: {e}") from e


def _cmd_rd_curve(args) -> int:
    clip = _read_clip(args)
    grid = _parse_grid(args.grid)
    if not grid:
        raise VcmError("grid is empty")

    def evaluate(qp: int) -> tuple[float, float]:
        chunks, recon = encode_clip(clip, CodecConfig(qp=qp, gop=args.gop))
        total = sum(len(c.to_bytes()) for c in chunks)
        rate = bitrate_kbps(total, len(clip), clip.fps)
        if args.metric == "psnr":
            quality = psnr(clip, recon).value
        else:
            quality = sum(ssim(a, b).value for a, b in zip(clip.frames, recon.frames)) / len(clip)
        return rate, quality

    curve = build_rd_curve(evaluate, grid)
    out = io.StringIO()
    write_rd_csv(curve, out)
    _write_text(args.out, out.getvalue())
    return EXIT_OK


def _cmd_allocate(args) -> int:
    base = Path(args.tasks).parent
    tasks = []
    with open(args.tasks, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or [c.strip() for c in rows[0]] != ["task_id", "weight", "level", "curve_csv"]:
        raise VcmError("tasks csv needs header task_id,weight,level,curve_csv")
    for row in rows[1:]:
        if not row:
            continue
        task_id, weight, level, curve_path = (c.strip() for c in row)
        with open(base / curve_path, newline="") as cf:
            curve = read_rd_csv(cf)
        tasks.append(TaskSpec(task_id, float(weight), curve, int(level)))
    allocation = allocate_budget(tasks, args.budget, (args.s_model, args.s_theta))
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["task_id", "rate_kbps", "quality"])
    for task_id, point in allocation.selected:
        w.writerow([task_id, repr(point.rate_kbps), repr(point.quality)])
    r = allocation.report
    w.writerow([])
    w.writerow(["term", "value", ""])
    for name, value in [
        ("objective", allocation.objective),
        ("s_f0", r.s_f0),
        ("s_pred", r.s_pred),
        ("s_model", r.s_model),
        ("s_theta", r.s_theta),
        ("total", r.total),
        ("budget", r.budget),
    ]:
        w.writerow([name, repr(float(value)), ""])
    _write_text(args.out, out.getvalue())
    return EXIT_OK


def _cmd_inspect(args) -> int:
    with open(args.input, "rb") as f:
        print(inspect_container(f.read()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcmkit")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("feature-encode", help="pack and code a tensor file into a container")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mode", choices=["concat", "ddconcat", "tile"], default="concat")
    p.add_argument("--qp", type=int, required=True)
    p.set_defaults(func=_cmd_feature_encode)

    p = sub.add_parser("feature-decode", help="decode a feature container back to a tensor file")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_feature_decode)

    p = sub.add_parser("clip-encode", help="predictive-code a raw clip into a container")
    p.add_argument("input")
    p.add_argument("output")
    _add_geometry(p)
    p.add_argument("--qp-key", type=int, required=True)
    p.add_argument("--qp-res", type=int, required=True)
    p.add_argument("--keypoints", type=int, default=20)
    p.add_argument("--lambda", dest="lambda_rate", type=float, default=1.0)
    p.add_argument("--enhance", action="store_true")
    p.add_argument("--qp-enh", type=int, default=12)
    p.add_argument("--extra-points", type=int, default=0)
    p.set_defaults(func=_cmd_clip_encode)

    p = sub.add_parser("clip-decode", help="decode a clip container (raw video or keypoints)")
    p.add_argument("input")
    p.add_argument("output", nargs="?", default=None)
    p.add_argument("--machine-only", action="store_true",
                   help="emit decoded keypoints as csv without touching pixel streams")
    p.set_defaults(func=_cmd_clip_decode)

    p = sub.add_parser("metrics", help="quality/rate metrics between two raw clips")
    p.add_argument("reference")
    p.add_argument("test")
    _add_geometry(p)
    p.add_argument("--psnr", action="store_true")
    p.add_argument("--ssim", action="store_true")
    p.add_argument("--bitrate", action="store_true")
    p.add_argument("--bytes-from", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("rd-curve", help="sweep the pixel codec and emit an rd csv")
    p.add_argument("input")
    _add_geometry(p)
    p.add_argument("--grid", required=True, help="e.g. qp=12,22,32,42")
    p.add_argument("--gop", choices=["ippp", "all_intra"], default="ippp")
    p.add_argument("--metric", choices=["psnr", "ssim"], default="psnr")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_rd_curve)

    p = sub.add_parser("allocate", help="budget allocation across task rd curves")
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--s-model", type=float, default=0.0)
    p.add_argument("--s-theta", type=float, default=0.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_allocate)

    p = sub.add_parser("inspect", help="list container streams, sizes and shares")
    p.add_argument("input")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except InfeasibleBudgetError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except VcmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
