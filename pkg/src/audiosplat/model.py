"""Full deformable-cloud model: static path and audio-driven deformation path.

Static path:   seeds -> triplane features f_v -> static head -> raw Gaussians.
Deform path:   f_v -> projected spatial tokens -> agent cross-attention with
               fused per-frame conditions -> deformation head -> raw offsets.

Model parameters are stored at float32 so that checkpoint round-trips are
bit-exact; all computation promotes to float64.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .attention import AgentConfig, ConditionFusion, DeformAttention, MacCounter
from .autodiff import ParameterStore, Tensor, constant
from .checkpoint import load_checkpoint, save_checkpoint
from .gaussians import RawCloud, activate, compose, init_static_raw
from .kan import KanConfig, make_param_head, map_params, raw_param_slices, raw_param_width
from .splatter import Camera, render_cloud
from .triplane import TriplaneConfig, TriplaneEncoder


@dataclass(frozen=True)
class ModelConfig:
    sh_degree: int = 1
    n_gaussians: int = 500
    audio_width: int = 8
    triplane: TriplaneConfig = TriplaneConfig()
    kan: KanConfig = KanConfig()
    kan_hidden: int = 64
    attention: AgentConfig = AgentConfig()

    def meta_arrays(self) -> dict[str, np.ndarray]:
        vals = {
            "meta/sh_degree": self.sh_degree,
            "meta/n_gaussians": self.n_gaussians,
            "meta/audio_width": self.audio_width,
            "meta/levels": self.triplane.levels,
            "meta/base_resolution": self.triplane.base_resolution,
            "meta/growth_factor": self.triplane.growth_factor,
            "meta/table_size": self.triplane.table_size,
            "meta/features_per_level": self.triplane.features_per_level,
            "meta/kan_grid": self.kan.grid_intervals,
            "meta/kan_order": self.kan.order,
            "meta/kan_hidden": self.kan_hidden,
            "meta/agent_ratio": self.attention.ratio,
            "meta/d_model": self.attention.d_model,
            "meta/ppe_period": self.attention.period,
        }
        return {k: np.array([v], dtype=np.float64) for k, v in vals.items()}

    @staticmethod
    def from_meta(arrays: dict[str, np.ndarray]) -> "ModelConfig":
        def geti(k):
            return int(round(float(arrays[k][0])))

        return ModelConfig(
            sh_degree=geti("meta/sh_degree"),
            n_gaussians=geti("meta/n_gaussians"),
            audio_width=geti("meta/audio_width"),
            triplane=TriplaneConfig(
                levels=geti("meta/levels"),
                base_resolution=geti("meta/base_resolution"),
                growth_factor=geti("meta/growth_factor"),
                table_size=geti("meta/table_size"),
                features_per_level=geti("meta/features_per_level"),
            ),
            kan=KanConfig(grid_intervals=geti("meta/kan_grid"), order=geti("meta/kan_order")),
            kan_hidden=geti("meta/kan_hidden"),
            attention=AgentConfig(
                ratio=float(arrays["meta/agent_ratio"][0]),
                d_model=geti("meta/d_model"),
                period=geti("meta/ppe_period"),
            ),
        )


STATIC_PREFIXES = ("triplane/", "kan_static/", "seeds/")
DEFORM_PREFIXES = ("kan_deform/", "esaa/", "fusion/")


class DeformableCloudModel:
    """Trainable static cloud plus per-frame deformation decoder."""

    def __init__(self, cfg: ModelConfig, seed: int = 42,
                 seed_box: tuple[np.ndarray, np.ndarray] | None = None,
                 dtype=np.float32):
        self.cfg = cfg
        self.store = ParameterStore(dtype=dtype)
        root = np.random.SeedSequence(seed)
        streams = [np.random.default_rng(s) for s in root.spawn(6)]
        self.encoder = TriplaneEncoder(self.store, cfg.triplane, rng=streams[0])
        feat = cfg.triplane.feature_width
        self.static_head = make_param_head(
            self.store, "kan_static", feat, cfg.sh_degree, hidden=cfg.kan_hidden,
            cfg=cfg.kan, rng=streams[1])
        self.deform_head = make_param_head(
            self.store, "kan_deform", cfg.attention.d_model, cfg.sh_degree,
            hidden=cfg.kan_hidden, cfg=cfg.kan, rng=streams[2], zero_output=True)
        self.attention = DeformAttention(self.store, feat, cfg.attention, rng=streams[3])
        self.fusion = ConditionFusion(self.store, cfg.audio_width, cfg.attention,
                                      rng=streams[4])
        lo, hi = seed_box if seed_box is not None else (np.full(3, -0.5), np.full(3, 0.5))
        pts = _stratified_points(streams[5], cfg.n_gaussians, np.asarray(lo), np.asarray(hi))
        self.seeds = self.store.add("seeds/points", pts)

    # -- static path -------------------------------------------------------
    def static_raw(self) -> RawCloud:
        return init_static_raw(self.encoder, self.static_head, self.seeds, self.cfg.sh_degree)

    def spatial_features(self) -> Tensor:
        return self.encoder.encode_batch(self.seeds)

    def frozen_static(self) -> tuple[RawCloud, Tensor]:
        """Constant (graph-detached) static raw cloud and features for stage 2."""
        raw = self.static_raw()
        feats = self.spatial_features()
        return RawCloud.from_arrays(raw.detach_arrays(), self.cfg.sh_degree), \
            constant(feats.data.copy())

    # -- deformation path ----------------------------------------------------
    def deltas_for_frame(self, f_v: Tensor, row: dict,
                         counter: MacCounter | None = None) -> dict[str, Tensor]:
        f_d = self.attention.deform_features(f_v, self.fusion, row, counter)
        return map_params(self.deform_head, f_d, self.cfg.sh_degree)

    def render_frame(self, static_raw: RawCloud, camera: Camera, background,
                     f_v: Tensor | None = None, row: dict | None = None) -> Tensor:
        if row is None:
            cloud = activate(static_raw)
        else:
            cloud = compose(static_raw, self.deltas_for_frame(f_v, row))
        return render_cloud(cloud, camera, background)

    # -- persistence ---------------------------------------------------------
    def save(self, path) -> None:
        arrays = {name: p.data for name, p in self.store.items()}
        arrays.update(self.cfg.meta_arrays())
        save_checkpoint(path, arrays)

    @staticmethod
    def load(path, seed: int = 42) -> "DeformableCloudModel":
        arrays = load_checkpoint(path)
        cfg = ModelConfig.from_meta(arrays)
        model = DeformableCloudModel(cfg, seed=seed)
        state = {k: v for k, v in arrays.items() if not k.startswith("meta/")}
        model.store.load_state(state)
        return model

    def parameter_names(self, trainable_prefixes: tuple[str, ...]) -> list[str]:
        return [n for n in self.store.names() if n.startswith(trainable_prefixes)]


def _stratified_points(rng: np.random.Generator, n: int, lo: np.ndarray,
                       hi: np.ndarray) -> np.ndarray:
    """Jittered-grid samples inside a box (stratified along a near-cubic grid)."""
    per_axis = max(1, int(round(n ** (1 / 3))))
    cells = []
    for ix in range(per_axis):
        for iy in range(per_axis):
            for iz in range(per_axis):
                cells.append((ix, iy, iz))
    reps = int(np.ceil(n / len(cells)))
    cells = (cells * reps)[:n]
    cells = np.array(cells, dtype=np.float64)
    jitter = rng.uniform(0, 1, size=(n, 3))
    unit = (cells + jitter) / per_axis
    return lo + unit * (hi - lo)


def camera_from_pose(pose: np.ndarray, intrinsics: Camera) -> Camera:
    """Camera with the track pose (rotation vector + translation) and shared intrinsics."""
    rot = Rotation.from_rotvec(pose[:3]).as_matrix()
    return Camera(fx=intrinsics.fx, fy=intrinsics.fy, cx=intrinsics.cx,
                  cy=intrinsics.cy, rotation=rot, translation=pose[3:].copy(),
                  width=intrinsics.width, height=intrinsics.height)
