"""3D Gaussian cloud data model.

Raw network outputs live in an unconstrained space; `activate` maps them to
valid Gaussian parameters:

    position = raw
    scale    = exp(raw)            (positive)
    rotation = raw / |raw|         (unit quaternion, wxyz)
    sh       = raw
    opacity  = sigmoid(raw)        (in (0, 1))

Per-frame deformation adds offsets in raw space before activation, so every
composed cloud satisfies the same constraints by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, concat, constant
from .kan import KanNetwork, map_params, raw_param_slices, raw_param_width

__all__ = [
    "RawCloud",
    "GaussianCloud",
    "activate",
    "activate_arrays",
    "compose",
    "compose_raw",
    "init_static_raw",
    "sh_coeff_count",
    "export_ply",
]


def sh_coeff_count(sh_degree: int) -> int:
    return (sh_degree + 1) ** 2


@dataclass
class RawCloud:
    """Pre-activation Gaussian parameters (tensors, graph-connected)."""

    position: Tensor   # (N, 3)
    scale: Tensor      # (N, 3)
    rotation: Tensor   # (N, 4)
    sh: Tensor         # (N, 3*(deg+1)^2)
    opacity: Tensor    # (N, 1)
    sh_degree: int

    def __len__(self) -> int:
        return self.position.data.shape[0]

    def detach_arrays(self) -> dict[str, np.ndarray]:
        return {
            "position": self.position.data.copy(),
            "scale": self.scale.data.copy(),
            "rotation": self.rotation.data.copy(),
            "sh": self.sh.data.copy(),
            "opacity": self.opacity.data.copy(),
        }

    @staticmethod
    def from_arrays(arrays: dict[str, np.ndarray], sh_degree: int) -> "RawCloud":
        return RawCloud(
            position=constant(arrays["position"]),
            scale=constant(arrays["scale"]),
            rotation=constant(arrays["rotation"]),
            sh=constant(arrays["sh"]),
            opacity=constant(arrays["opacity"]),
            sh_degree=sh_degree,
        )


@dataclass
class GaussianCloud:
    """Activated Gaussian parameters; immutable snapshot once composed."""

    position: Tensor   # (N, 3)
    scale: Tensor      # (N, 3), positive
    rotation: Tensor   # (N, 4), unit quaternions
    sh: Tensor         # (N, K, 3) coefficient-major SH colors
    opacity: Tensor    # (N,), in (0, 1)
    sh_degree: int

    def __len__(self) -> int:
        return self.position.data.shape[0]

    def check_invariants(self, tol: float = 1e-9) -> None:
        if np.any(self.scale.data <= 0):
            raise ValueError("gaussian cloud: non-positive scale")
        norms = np.linalg.norm(self.rotation.data, axis=1)
        if np.any(np.abs(norms - 1.0) > tol):
            raise ValueError("gaussian cloud: non-unit quaternion")
        if np.any((self.opacity.data < 0) | (self.opacity.data > 1)):
            raise ValueError("gaussian cloud: opacity outside [0, 1]")


def activate(raw: RawCloud) -> GaussianCloud:
    """Map raw parameters to a valid cloud; rejects zero-norm quaternions."""
    n = len(raw)
    k = sh_coeff_count(raw.sh_degree)
    qnorm_sq = (raw.rotation * raw.rotation).sum(axis=1, keepdims=True)
    if np.any(qnorm_sq.data <= 0.0):
        raise ValueError("activate: zero-norm quaternion")
    qnorm = qnorm_sq.sqrt()
    return GaussianCloud(
        position=raw.position,
        scale=raw.scale.exp(),
        rotation=raw.rotation / qnorm,
        sh=raw.sh.reshape(n, k, 3),
        opacity=raw.opacity.sigmoid().reshape(n),
        sh_degree=raw.sh_degree,
    )


def activate_arrays(raw_vec: np.ndarray, sh_degree: int) -> dict[str, np.ndarray]:
    """Activate a single raw parameter vector (plain arrays, for inspection)."""
    raw_vec = np.asarray(raw_vec, dtype=np.float64)
    if raw_vec.shape != (raw_param_width(sh_degree),):
        raise ShapeError(f"activate: raw width {raw_vec.shape} != "
                         f"({raw_param_width(sh_degree)},)")
    sl = raw_param_slices(sh_degree)
    raw = RawCloud(
        position=constant(raw_vec[None, sl["position"]]),
        scale=constant(raw_vec[None, sl["scale"]]),
        rotation=constant(raw_vec[None, sl["rotation"]]),
        sh=constant(raw_vec[None, sl["sh"]]),
        opacity=constant(raw_vec[None, sl["opacity"]]),
        sh_degree=sh_degree,
    )
    cloud = activate(raw)
    return {
        "position": cloud.position.data[0],
        "scale": cloud.scale.data[0],
        "rotation": cloud.rotation.data[0],
        "sh": cloud.sh.data[0],
        "opacity": float(cloud.opacity.data[0]),
    }


def compose_raw(static: RawCloud, deltas: dict[str, Tensor]) -> RawCloud:
    """Add per-frame offsets to the static raw parameters (raw space)."""
    for key in ("position", "scale", "rotation", "sh", "opacity"):
        if key not in deltas:
            raise ShapeError(f"compose: missing delta '{key}'")
        have = deltas[key].data.shape
        want = getattr(static, key).data.shape
        if have != want:
            raise ShapeError(f"compose: delta '{key}' shape {have} != static {want}")
    return RawCloud(
        position=static.position + deltas["position"],
        scale=static.scale + deltas["scale"],
        rotation=static.rotation + deltas["rotation"],
        sh=static.sh + deltas["sh"],
        opacity=static.opacity + deltas["opacity"],
        sh_degree=static.sh_degree,
    )


def compose(static: RawCloud, deltas: dict[str, Tensor]) -> GaussianCloud:
    """Static + deform composition followed by activation."""
    return activate(compose_raw(static, deltas))


def zero_deltas(static: RawCloud) -> dict[str, Tensor]:
    return {key: constant(np.zeros_like(getattr(static, key).data))
            for key in ("position", "scale", "rotation", "sh", "opacity")}


def init_static_raw(encoder, head: KanNetwork, seeds: Tensor | np.ndarray,
                    sh_degree: int) -> RawCloud:
    """Raw static cloud from seed points: head(encode(seed)) per seed."""
    if not isinstance(seeds, Tensor):
        seeds = constant(np.asarray(seeds, dtype=np.float64))
    if seeds.data.ndim != 2 or seeds.data.shape[1] != 3:
        raise ShapeError(f"init_static: expected (N, 3) seed points, got {seeds.data.shape}")
    if seeds.data.shape[0] < 1:
        raise ShapeError("init_static: empty seed set")
    feats = encoder.encode_batch(seeds)
    parts = map_params(head, feats, sh_degree)
    return RawCloud(position=parts["position"], scale=parts["scale"],
                    rotation=parts["rotation"], sh=parts["sh"],
                    opacity=parts["opacity"], sh_degree=sh_degree)


def init_static(encoder, head: KanNetwork, seeds, sh_degree: int) -> GaussianCloud:
    return activate(init_static_raw(encoder, head, seeds, sh_degree))


def export_ply(path, raw: RawCloud) -> None:
    """Write the cloud in the common 3DGS viewer vertex layout.

    Properties per vertex (float32 little-endian): x y z, nx ny nz (zero),
    f_dc_0..2, f_rest_* (channel-major), opacity (pre-sigmoid), scale_0..2
    (pre-exp), rot_0..3.
    """
    n = len(raw)
    k = sh_coeff_count(raw.sh_degree)
    sh = raw.sh.data.reshape(n, k, 3)
    f_dc = sh[:, 0, :]
    f_rest = sh[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * (k - 1))
    cols = [raw.position.data, np.zeros((n, 3)), f_dc, f_rest,
            raw.opacity.data.reshape(n, 1), raw.scale.data, raw.rotation.data]
    names = (["x", "y", "z", "nx", "ny", "nz"]
             + [f"f_dc_{i}" for i in range(3)]
             + [f"f_rest_{i}" for i in range(3 * (k - 1))]
             + ["opacity"] + [f"scale_{i}" for i in range(3)]
             + [f"rot_{i}" for i in range(4)])
    body = np.ascontiguousarray(np.concatenate(cols, axis=1), dtype="<f4")
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(body.tobytes())
