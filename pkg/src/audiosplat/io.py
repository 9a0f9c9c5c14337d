"""On-disk formats: raw float frames, condition tracks, camera files, PNGs.

Raw frame (.f32): planar little-endian float32, channel-major — all R values
row-major, then G, then B.  Shape is carried by the scene metadata.

Track file: one ASCII header line

    track v1 rows=<T> audio=<A> blink=1 pose=6

followed by T rows of (A + 1 + 6) little-endian float32 values in that column
order.

Camera file: ASCII, first line `cameras v1 count=<C> width=<W> height=<H>`,
then per camera one line `fx fy cx cy` and three lines with a row of the
3x4 world-to-camera matrix [R | t].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .attention import ConditionTrack
from .splatter import Camera


def write_raw_frame(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"raw frame must be (H, W, 3), got {img.shape}")
    planar = np.ascontiguousarray(img.transpose(2, 0, 1), dtype="<f4")
    Path(path).write_bytes(planar.tobytes())


def read_raw_frame(path, height: int, width: int) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if data.size != 3 * height * width:
        raise ValueError(f"{path}: expected {3 * height * width} floats, got {data.size}")
    return data.reshape(3, height, width).transpose(1, 2, 0).astype(np.float64)


def write_png(path, img: np.ndarray) -> None:
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    return (np.asarray(Image.open(path)) > 127).astype(np.float64)


def write_track(path, track: ConditionTrack) -> None:
    rows = len(track)
    a = track.audio.shape[1]
    header = f"track v1 rows={rows} audio={a} blink=1 pose=6\n"
    body = np.concatenate([track.audio, track.blink[:, None], track.pose], axis=1)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(body, dtype="<f4").tobytes())


def read_track(path) -> ConditionTrack:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = raw[:nl].decode("ascii").split()
    if header[:2] != ["track", "v1"]:
        raise ValueError(f"{path}: not a track file")
    fields = dict(kv.split("=") for kv in header[2:])
    rows, a = int(fields["rows"]), int(fields["audio"])
    width = a + int(fields["blink"]) + int(fields["pose"])
    body = np.frombuffer(raw, dtype="<f4", offset=nl + 1)
    if body.size != rows * width:
        raise ValueError(f"{path}: expected {rows * width} values, got {body.size}")
    body = body.reshape(rows, width).astype(np.float64)
    return ConditionTrack(audio=body[:, :a], blink=body[:, a],
                          pose=body[:, a + 1:a + 7])


def write_cameras(path, cameras: list[Camera]) -> None:
    lines = [f"cameras v1 count={len(cameras)} width={cameras[0].width} height={cameras[0].height}"]
    for cam in cameras:
        lines.append(f"{cam.fx!r} {cam.fy!r} {cam.cx!r} {cam.cy!r}")
        mat = np.concatenate([cam.rotation, cam.translation[:, None]], axis=1)
        for row in mat:
            lines.append(" ".join(repr(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_cameras(path) -> list[Camera]:
    lines = Path(path).read_text(encoding="ascii").strip().splitlines()
    head = lines[0].split()
    if head[:2] != ["cameras", "v1"]:
        raise ValueError(f"{path}: not a camera file")
    fields = dict(kv.split("=") for kv in head[2:])
    count, width, height = int(fields["count"]), int(fields["width"]), int(fields["height"])
    cams = []
    pos = 1
    for _ in range(count):
        fx, fy, cx, cy = (float(v) for v in lines[pos].split())
        mat = np.array([[float(v) for v in lines[pos + 1 + r].split()] for r in range(3)])
        cams.append(Camera(fx=fx, fy=fy, cx=cx, cy=cy, rotation=mat[:, :3],
                           translation=mat[:, 3], width=width, height=height))
        pos += 4
    return cams


def write_csv(path, header: list[str], rows) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
