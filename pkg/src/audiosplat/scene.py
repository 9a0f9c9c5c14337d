"""Synthetic talking-blob scenes.

The target is a procedural cluster of colored ellipsoid Gaussians: a round
"head" body, two eyes whose vertical extent collapses during scripted blinks,
and a mouth made of two lip ellipsoids whose vertical separation (the
aperture) is an affine function of audio channel 0:

    aperture(t) = aperture_rest + aperture_gain * audio[t, 0]

Ground-truth frames are rendered from this oracle cloud with the brute-force
reference renderer, so the target is representable by construction.  Cameras
sit on a circular arc in the horizontal plane looking at the head; frame t is
posed with camera t mod n_cameras.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .attention import ConditionTrack
from .gaussians import GaussianCloud, sh_coeff_count
from .splatter import SH_C0, Camera, Splat2D, project_cloud, rasterize_reference
from .autodiff import constant
from . import io

BACKGROUND = np.array([0.0, 0.0, 0.0])


@dataclass(frozen=True)
class SceneSpec:
    n_body: int = 26
    n_frames: int = 200
    n_cameras: int = 5
    image_size: int = 64
    audio_width: int = 8
    aperture_rest: float = 0.10
    aperture_gain: float = 0.08
    arc_degrees: float = 80.0
    camera_radius: float = 2.4
    focal: float = 96.0
    train_frame_fraction: float = 0.8
    held_out_camera: int | None = None   # defaults to the middle camera

    def __post_init__(self):
        if self.n_body < 1 or self.n_frames < 1 or self.n_cameras < 1:
            raise ValueError("scene spec: ellipsoid, frame and camera counts must be >= 1")
        if self.image_size < 16:
            raise ValueError("scene spec: image size must be >= 16")
        if self.audio_width < 1:
            raise ValueError("scene spec: audio width must be >= 1")
        if self.aperture_rest - self.aperture_gain <= 0:
            raise ValueError("scene spec: aperture must stay positive over audio in [-1, 1]")


@dataclass
class OracleBlob:
    """Neutral-pose oracle Gaussians plus the scripted part indices."""

    position: np.ndarray    # (K, 3)
    scale: np.ndarray       # (K, 3)
    rotation: np.ndarray    # (K, 4) unit quaternions
    color: np.ndarray       # (K, 3) in [0, 1]
    opacity: np.ndarray     # (K,)
    mouth_center: np.ndarray
    upper_lip: int
    lower_lip: int
    eyes: tuple[int, int]

    def posed(self, aperture: float, blink: float) -> "OracleBlob":
        pos = self.position.copy()
        scale = self.scale.copy()
        half = aperture / 2.0
        pos[self.upper_lip] = self.mouth_center + np.array([0.0, half, 0.0])
        pos[self.lower_lip] = self.mouth_center - np.array([0.0, half, 0.0])
        for e in self.eyes:
            scale[e, 1] *= (1.0 - 0.75 * blink)
        return OracleBlob(pos, scale, self.rotation, self.color, self.opacity,
                          self.mouth_center, self.upper_lip, self.lower_lip, self.eyes)

    def to_cloud(self) -> GaussianCloud:
        k = len(self.position)
        sh = np.zeros((k, 1, 3))
        sh[:, 0, :] = (self.color - 0.5) / SH_C0
        return GaussianCloud(
            position=constant(self.position), scale=constant(self.scale),
            rotation=constant(self.rotation), sh=constant(sh),
            opacity=constant(self.opacity), sh_degree=0)


@dataclass
class SyntheticScene:
    spec: SceneSpec
    seed: int
    cameras: list[Camera]
    frame_camera: np.ndarray        # (T,) camera index per frame
    track: ConditionTrack
    frames: np.ndarray              # (T, H, W, 3) float32
    neutral_views: np.ndarray       # (C, H, W, 3) float32
    lip_masks: np.ndarray           # (T, H, W) float64 binary
    keypoints3d: np.ndarray         # (T, 2, 3) upper/lower lip centers
    keypoints2d: np.ndarray         # (T, 2, 2) projections under frame camera
    aperture: np.ndarray            # (T,)
    oracle: OracleBlob = field(repr=False, default=None)

    @property
    def n_frames(self) -> int:
        return self.spec.n_frames

    def train_test_frames(self) -> tuple[np.ndarray, np.ndarray]:
        cut = int(round(self.spec.train_frame_fraction * self.n_frames))
        idx = np.arange(self.n_frames)
        return idx[:cut], idx[cut:]

    def held_out_camera(self) -> int:
        if self.spec.held_out_camera is not None:
            return self.spec.held_out_camera
        return len(self.cameras) // 2

    def training_cameras(self) -> list[int]:
        held = self.held_out_camera()
        return [i for i in range(len(self.cameras)) if i != held]

    def seed_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounding box of the oracle blob, padded by one typical radius."""
        pad = 0.12
        lo = self.oracle.position.min(axis=0) - pad
        hi = self.oracle.position.max(axis=0) + pad
        return np.clip(lo, -1, 1), np.clip(hi, -1, 1)


def _smooth_signal(rng: np.random.Generator, n: int, components: int = 3,
                   peak: float = 0.95) -> np.ndarray:
    t = np.arange(n)
    out = np.zeros(n)
    for _ in range(components):
        freq = rng.uniform(0.5, 4.0)
        phase = rng.uniform(0, 2 * np.pi)
        out += rng.uniform(0.4, 1.0) * np.sin(2 * np.pi * freq * t / n + phase)
    return peak * out / np.abs(out).max()


def _build_oracle(spec: SceneSpec, rng: np.random.Generator) -> OracleBlob:
    n = spec.n_body
    pos = rng.uniform(-1, 1, size=(n, 3))
    pos = 0.34 * pos / np.maximum(np.linalg.norm(pos, axis=1, keepdims=True), 1e-9) \
        * rng.uniform(0.2, 1.0, size=(n, 1)) ** (1 / 3)
    scale = rng.uniform(0.07, 0.17, size=(n, 3))
    quat = rng.normal(size=(n, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    # warm, smoothly varying body palette
    base = np.array([0.68, 0.52, 0.42])
    color = np.clip(base + rng.uniform(-0.18, 0.18, size=(n, 3)), 0.05, 0.95)
    opacity = rng.uniform(0.80, 0.95, size=n)

    def add(p, s, q, c, o):
        nonlocal pos, scale, quat, color, opacity
        pos = np.vstack([pos, [p]])
        scale = np.vstack([scale, [s]])
        quat = np.vstack([quat, [q]])
        color = np.vstack([color, [c]])
        opacity = np.append(opacity, o)
        return len(pos) - 1

    identity = [1.0, 0.0, 0.0, 0.0]
    eye_l = add([-0.15, 0.16, 0.28], [0.055, 0.05, 0.03], identity, [0.08, 0.08, 0.10], 0.95)
    eye_r = add([0.15, 0.16, 0.28], [0.055, 0.05, 0.03], identity, [0.08, 0.08, 0.10], 0.95)
    mouth_center = np.array([0.0, -0.16, 0.30])
    half = spec.aperture_rest / 2.0
    upper = add(mouth_center + [0, half, 0], [0.13, 0.035, 0.05], identity, [0.78, 0.12, 0.18], 0.95)
    lower = add(mouth_center - [0, half, 0], [0.13, 0.035, 0.05], identity, [0.70, 0.10, 0.16], 0.95)
    return OracleBlob(pos, scale, quat, color, opacity, mouth_center,
                      upper, lower, (eye_l, eye_r))


def _arc_cameras(spec: SceneSpec) -> list[Camera]:
    cams = []
    n = spec.n_cameras
    angles = (np.linspace(-0.5, 0.5, n) if n > 1 else np.array([0.0])) \
        * np.deg2rad(spec.arc_degrees)
    for ang in angles:
        eye = spec.camera_radius * np.array([np.sin(ang), 0.0, np.cos(ang)])
        cams.append(Camera.look_at(eye, target=[0, 0, 0], up=[0, 1, 0],
                                   fx=spec.focal, fy=spec.focal,
                                   width=spec.image_size, height=spec.image_size))
    return cams


def render_oracle(blob: OracleBlob, camera: Camera) -> np.ndarray:
    """Reference-render the oracle cloud (the ground-truth path)."""
    proj = project_cloud(blob.to_cloud(), camera)
    splats = [Splat2D(mean2d=proj.mean2d.data[i], cov2d=_conic_to_cov(proj.conic.data[i]),
                      depth=float(proj.depth[i]), color=proj.color.data[i],
                      opacity=float(proj.opacity.data[i]))
              for i in proj.order]
    return rasterize_reference(splats, camera, BACKGROUND)


def _conic_to_cov(conic: np.ndarray) -> np.ndarray:
    a, b, c = conic
    det = a * c - b * b
    return np.array([[c / det, -b / det], [-b / det, a / det]])


def project_point(p: np.ndarray, camera: Camera) -> np.ndarray:
    q = camera.rotation @ p + camera.translation
    return np.array([camera.fx * q[0] / q[2] + camera.cx,
                     camera.fy * q[1] / q[2] + camera.cy])


def _lip_mask(spec: SceneSpec, up2d: np.ndarray, low2d: np.ndarray,
              camera: Camera) -> np.ndarray:
    center = 0.5 * (up2d + low2d)
    depth = np.linalg.norm(camera.center() - np.array([0.0, -0.16, 0.30]))
    lip_halfwidth_px = camera.fx * 0.13 / depth
    radius = 1.35 * (0.5 * np.linalg.norm(up2d - low2d) + lip_halfwidth_px)
    radius = max(radius, 6.0)
    gy, gx = np.mgrid[0:camera.height, 0:camera.width]
    dist = np.hypot(gx + 0.5 - center[0], gy + 0.5 - center[1])
    return (dist <= radius).astype(np.float64)


def generate_scene(spec: SceneSpec, seed: int) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    blob = _build_oracle(spec, rng)
    cameras = _arc_cameras(spec)

    T, A = spec.n_frames, spec.audio_width
    audio = np.zeros((T, A))
    for ch in range(A):
        sig = _smooth_signal(rng, T)
        audio[:, ch] = sig if ch == 0 else 0.6 * sig
    blink = np.zeros(T)
    n_blinks = max(1, T // 35)
    centers = rng.choice(np.arange(5, max(6, T - 5)), size=min(n_blinks, T), replace=False)
    for c in centers:
        for dt in (-2, -1, 0, 1, 2):
            if 0 <= c + dt < T:
                blink[c + dt] = max(blink[c + dt], 1.0 - abs(dt) / 2.5)

    frame_camera = np.arange(T) % spec.n_cameras
    pose = np.zeros((T, 6))
    for t in range(T):
        cam = cameras[frame_camera[t]]
        pose[t, :3] = Rotation.from_matrix(cam.rotation).as_rotvec()
        pose[t, 3:] = cam.translation
    track = ConditionTrack(audio=audio, blink=blink, pose=pose)

    aperture = spec.aperture_rest + spec.aperture_gain * audio[:, 0]
    hw = spec.image_size
    frames = np.zeros((T, hw, hw, 3), dtype=np.float32)
    masks = np.zeros((T, hw, hw))
    kp3d = np.zeros((T, 2, 3))
    kp2d = np.zeros((T, 2, 2))
    for t in range(T):
        posed = blob.posed(aperture[t], blink[t])
        cam = cameras[frame_camera[t]]
        frames[t] = render_oracle(posed, cam).astype(np.float32)
        kp3d[t, 0] = posed.position[blob.upper_lip]
        kp3d[t, 1] = posed.position[blob.lower_lip]
        kp2d[t, 0] = project_point(kp3d[t, 0], cam)
        kp2d[t, 1] = project_point(kp3d[t, 1], cam)
        masks[t] = _lip_mask(spec, kp2d[t, 0], kp2d[t, 1], cam)

    neutral = blob.posed(spec.aperture_rest, 0.0)
    neutral_views = np.stack([render_oracle(neutral, cam).astype(np.float32)
                              for cam in cameras])
    return SyntheticScene(spec=spec, seed=seed, cameras=cameras,
                          frame_camera=frame_camera, track=track, frames=frames,
                          neutral_views=neutral_views, lip_masks=masks,
                          keypoints3d=kp3d, keypoints2d=kp2d, aperture=aperture,
                          oracle=blob)


# -- disk layout ----------------------------------------------------------------

def save_scene(scene: SyntheticScene, out_dir) -> None:
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "neutral").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    spec = scene.spec
    meta = {
        "format": "scene v1",
        "seed": scene.seed,
        "image_size": spec.image_size,
        "frames": spec.n_frames,
        "cameras": spec.n_cameras,
        "audio_width": spec.audio_width,
        "n_body": spec.n_body,
        "aperture_rest": spec.aperture_rest,
        "aperture_gain": spec.aperture_gain,
        "arc_degrees": spec.arc_degrees,
        "camera_radius": spec.camera_radius,
        "focal": spec.focal,
        "train_frame_fraction": spec.train_frame_fraction,
        "held_out_camera": scene.held_out_camera(),
        "mouth_center": " ".join(repr(v) for v in scene.oracle.mouth_center),
    }
    (out / "meta.txt").write_text(
        "".join(f"{k} = {v}\n" for k, v in meta.items()), encoding="utf-8")
    io.write_cameras(out / "cameras.txt", scene.cameras)
    io.write_track(out / "track.bin", scene.track)
    for t in range(scene.n_frames):
        io.write_raw_frame(out / "frames" / f"frame_{t:05d}.f32", scene.frames[t])
        io.write_mask_png(out / "masks" / f"mask_{t:05d}.png", scene.lip_masks[t])
    for c, view in enumerate(scene.neutral_views):
        io.write_raw_frame(out / "neutral" / f"view_{c:02d}.f32", view)
        io.write_png(out / "neutral" / f"view_{c:02d}.png", view)
    rows = [[t, *scene.keypoints2d[t].ravel(), *scene.keypoints3d[t].ravel()]
            for t in range(scene.n_frames)]
    io.write_csv(out / "keypoints.csv",
                 ["frame", "up_x", "up_y", "low_x", "low_y",
                  "up3d_x", "up3d_y", "up3d_z", "low3d_x", "low3d_y", "low3d_z"],
                 rows)
    io.write_png(out / "preview.png", scene.frames[0].astype(np.float64))


def _parse_meta(path) -> dict:
    meta = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    return meta


def load_scene(scene_dir) -> SyntheticScene:
    """Rebuild a scene from its directory (regenerates oracle state from the seed)."""
    d = Path(scene_dir)
    if not (d / "meta.txt").exists():
        raise FileNotFoundError(f"{d}: missing meta.txt (not a scene directory)")
    meta = _parse_meta(d / "meta.txt")
    spec = SceneSpec(
        n_body=int(meta["n_body"]), n_frames=int(meta["frames"]),
        n_cameras=int(meta["cameras"]), image_size=int(meta["image_size"]),
        audio_width=int(meta["audio_width"]),
        aperture_rest=float(meta["aperture_rest"]),
        aperture_gain=float(meta["aperture_gain"]),
        arc_degrees=float(meta["arc_degrees"]),
        camera_radius=float(meta["camera_radius"]), focal=float(meta["focal"]),
        train_frame_fraction=float(meta["train_frame_fraction"]),
        held_out_camera=int(meta["held_out_camera"]),
    )
    scene = generate_scene(spec, int(meta["seed"]))
    # ground truth on disk is authoritative (float32); swap in the stored copies
    hw = spec.image_size
    for t in range(spec.n_frames):
        scene.frames[t] = io.read_raw_frame(d / "frames" / f"frame_{t:05d}.f32", hw, hw)
        scene.lip_masks[t] = io.read_mask_png(d / "masks" / f"mask_{t:05d}.png")
    for c in range(spec.n_cameras):
        scene.neutral_views[c] = io.read_raw_frame(d / "neutral" / f"view_{c:02d}.f32", hw, hw)
    scene.track = io.read_track(d / "track.bin")
    scene.cameras = io.read_cameras(d / "cameras.txt")
    return scene
