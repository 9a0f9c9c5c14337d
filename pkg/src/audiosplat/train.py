"""Two-stage training: static cloud fit, then audio-driven deformation.

Stage 1 fits triplane + static head + seed points to the neutral views with
L1 + D-SSIM.  Stage 2 freezes the static parameters (by default) and trains
the deformation stack (attention projection, agent perceptron, condition
fusion, deformation head) on the frame sequence with the stage-2 loss.

Optimization is Adam with cosine learning-rate decay.  Runs are fully
deterministic for a fixed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParameterStore
from .losses import LossWeights, stage1_loss, stage2_loss
from .model import DEFORM_PREFIXES, STATIC_PREFIXES, DeformableCloudModel, ModelConfig, camera_from_pose
from .scene import BACKGROUND, SyntheticScene


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations_stage1: int = 2000
    iterations_stage2: int = 1500
    lr_stage1: float = 5e-3
    lr_stage2: float = 1e-3
    seed: int = 42
    weights: LossWeights = field(default_factory=LossWeights)
    freeze_static: bool = True
    log_every: int = 1

    def __post_init__(self):
        if self.iterations_stage1 < 0 or self.iterations_stage2 < 0:
            raise ValueError("iteration counts must be >= 0")


class Adam:
    """Per-parameter first/second-moment optimizer with cosine lr decay."""

    def __init__(self, store: ParameterStore, names: list[str], lr: float,
                 total_steps: int, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, lr_floor_fraction: float = 0.05):
        self.store = store
        self.names = list(names)
        self.base_lr = lr
        self.total = max(total_steps, 1)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.floor = lr_floor_fraction
        self.step_count = 0
        self.m = {n: np.zeros(store[n].data.shape) for n in self.names}
        self.v = {n: np.zeros(store[n].data.shape) for n in self.names}

    def lr_at(self, step: int) -> float:
        cos = 0.5 * (1.0 + np.cos(np.pi * min(step, self.total) / self.total))
        return self.base_lr * (self.floor + (1.0 - self.floor) * cos)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        lr = self.lr_at(self.step_count - 1)
        b1, b2 = self.beta1, self.beta2
        for n in self.names:
            g = grads[n]
            self.m[n] = b1 * self.m[n] + (1 - b1) * g
            self.v[n] = b2 * self.v[n] + (1 - b2) * g * g
            mhat = self.m[n] / (1 - b1 ** self.step_count)
            vhat = self.v[n] / (1 - b2 ** self.step_count)
            p = self.store[n]
            upd = p.data.astype(np.float64) - lr * mhat / (np.sqrt(vhat) + self.eps)
            p.data = upd.astype(p.data.dtype)


@dataclass
class LossLog:
    rows: list = field(default_factory=list)   # (iteration, loss, lr, seconds)

    def append(self, iteration: int, loss: float, lr: float, seconds: float):
        self.rows.append((iteration, loss, lr, seconds))

    def losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])


def _check_finite(loss_val: float, stage: str, iteration: int) -> None:
    if not np.isfinite(loss_val):
        raise TrainingDiverged(
            f"{stage}: loss became non-finite ({loss_val}) at iteration {iteration}")


def train_static(scene: SyntheticScene, cfg: TrainConfig,
                 model: DeformableCloudModel | None = None,
                 model_cfg: ModelConfig | None = None,
                 stop_check=None) -> tuple[DeformableCloudModel, LossLog]:
    """Fit the static cloud to the scene's neutral views (held-out camera excluded)."""
    if model is None:
        mc = model_cfg or ModelConfig(audio_width=scene.spec.audio_width)
        model = DeformableCloudModel(mc, seed=cfg.seed, seed_box=scene.seed_box())
    train_cams = scene.training_cameras()
    views = [(scene.cameras[c], scene.neutral_views[c].astype(np.float64)) for c in train_cams]
    names = model.parameter_names(STATIC_PREFIXES)
    opt = Adam(model.store, names, cfg.lr_stage1, cfg.iterations_stage1)
    rng = np.random.default_rng(cfg.seed + 1)
    log = LossLog()
    t0 = time.perf_counter()
    for it in range(cfg.iterations_stage1):
        cam, gt = views[rng.integers(len(views))]
        raw = model.static_raw()
        img = model.render_frame(raw, cam, BACKGROUND)
        loss = stage1_loss(img, gt, cfg.weights)
        val = loss.item()
        _check_finite(val, "stage1", it)
        grads = model.store.gradients(loss)
        opt.step({n: grads[n] for n in names})
        log.append(it, val, opt.lr_at(it), time.perf_counter() - t0)
        if stop_check is not None and stop_check(it, log):
            break
    return model, log


def train_deform(scene: SyntheticScene, cfg: TrainConfig,
                 model: DeformableCloudModel,
                 stop_check=None) -> tuple[DeformableCloudModel, LossLog]:
    """Train the deformation stack on the scene's training frames."""
    prefixes = DEFORM_PREFIXES if cfg.freeze_static else DEFORM_PREFIXES + STATIC_PREFIXES
    names = model.parameter_names(prefixes)
    opt = Adam(model.store, names, cfg.lr_stage2, cfg.iterations_stage2)
    rng = np.random.default_rng(cfg.seed + 2)
    train_frames, _ = scene.train_test_frames()
    static_raw, f_v = model.frozen_static()
    log = LossLog()
    t0 = time.perf_counter()
    for it in range(cfg.iterations_stage2):
        if not cfg.freeze_static and it % 50 == 0:
            static_raw, f_v = model.frozen_static()
        t = int(train_frames[rng.integers(len(train_frames))])
        row = scene.track.row(t)
        cam = camera_from_pose(scene.track.pose[t], scene.cameras[0])
        if not cfg.freeze_static:
            static_raw_t = model.static_raw()
            img = model.render_frame(static_raw_t, cam, BACKGROUND,
                                     f_v=model.spatial_features(), row=row)
        else:
            img = model.render_frame(static_raw, cam, BACKGROUND, f_v=f_v, row=row)
        gt = scene.frames[t].astype(np.float64)
        loss = stage2_loss(img, gt, scene.lip_masks[t], cfg.weights)
        val = loss.item()
        _check_finite(val, "stage2", it)
        grads = model.store.gradients(loss)
        opt.step({n: grads[n] for n in names})
        log.append(it, val, opt.lr_at(it), time.perf_counter() - t0)
        if stop_check is not None and stop_check(it, log):
            break
    return model, log


def render_sequence(model: DeformableCloudModel, track, cameras,
                    deform: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Render every track frame; returns (frames (T,H,W,3), marker positions).

    Marker positions are the per-frame composed 3D positions of all Gaussians
    (T, N, 3), used by keypoint-based evaluation.
    """
    if len(track) < 1:
        raise ValueError("render_sequence: empty track")
    from .gaussians import activate, compose

    static_raw, f_v = model.frozen_static()
    intr = cameras[0]
    frames = []
    positions = []
    for t in range(len(track)):
        row = track.row(t)
        cam = camera_from_pose(track.pose[t], intr)
        if deform:
            cloud = compose(static_raw, model.deltas_for_frame(f_v, row))
        else:
            cloud = activate(static_raw)
        from .splatter import render_cloud

        img = render_cloud(cloud, cam, BACKGROUND)
        frames.append(img.data)
        positions.append(cloud.position.data.copy())
    return np.stack(frames), np.stack(positions)
