"""Rendering metrics: PSNR, SSIM and the keypoint-distance lip proxy.

The landmark metric works on "markers": for each ground-truth lip landmark,
the k model Gaussians nearest to it in the static fit form a fixed cluster,
and the marker is the opacity-weighted mean of the cluster's composed
positions each frame, projected with that frame's camera.  The distance
between the projected markers and the ground-truth keypoints stands in for a
landmark-detector metric; the distance between the two markers themselves is
the mouth-aperture proxy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import ssim
from .model import DeformableCloudModel, camera_from_pose
from .scene import SyntheticScene, project_point

PSNR_IDENTICAL = float("inf")


def mse(img: np.ndarray, gt: np.ndarray) -> float:
    if img.shape != gt.shape:
        raise ValueError(f"mse: shapes differ, {img.shape} vs {gt.shape}")
    return float(np.mean((np.asarray(img, dtype=np.float64) - np.asarray(gt, dtype=np.float64)) ** 2))


def psnr(img: np.ndarray, gt: np.ndarray) -> float:
    """10 * log10(1 / MSE) for unit-range images; +inf when identical."""
    m = mse(img, gt)
    if m == 0.0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(1.0 / m))


def ssim_value(img: np.ndarray, gt: np.ndarray) -> float:
    return float(ssim(img, gt).item())


@dataclass
class MarkerClusters:
    """Fixed Gaussian index clusters for the upper and lower lip landmark."""

    upper: np.ndarray
    lower: np.ndarray

    @staticmethod
    def assign(static_positions: np.ndarray, opacities: np.ndarray,
               upper3d: np.ndarray, lower3d: np.ndarray, k: int = 8) -> "MarkerClusters":
        def nearest(target):
            d = np.linalg.norm(static_positions - target[None, :], axis=1)
            return np.argsort(d, kind="stable")[:k]

        del opacities  # membership is purely geometric; weights applied later
        return MarkerClusters(upper=nearest(upper3d), lower=nearest(lower3d))

    def project(self, positions: np.ndarray, opacities: np.ndarray, camera) -> np.ndarray:
        """(2, 2) projected marker positions for one frame."""
        out = np.zeros((2, 2))
        for i, idx in enumerate((self.upper, self.lower)):
            w = opacities[idx]
            center = (positions[idx] * w[:, None]).sum(axis=0) / w.sum()
            out[i] = project_point(center, camera)
        return out


def keypoint_distance(pred2d: np.ndarray, gt2d: np.ndarray) -> float:
    """Mean Euclidean distance between predicted and ground-truth 2D markers."""
    pred2d, gt2d = np.asarray(pred2d), np.asarray(gt2d)
    if pred2d.shape != gt2d.shape:
        raise ValueError(f"keypoint_distance: shapes differ, {pred2d.shape} vs {gt2d.shape}")
    return float(np.mean(np.linalg.norm(pred2d - gt2d, axis=-1)))


def evaluate_frames(frames: np.ndarray, gt: np.ndarray,
                    pred_keypoints: np.ndarray | None = None,
                    gt_keypoints: np.ndarray | None = None) -> dict:
    """Per-frame and mean metrics; lengths must agree."""
    if len(frames) != len(gt):
        raise ValueError(f"evaluate: {len(frames)} frames vs {len(gt)} ground-truth frames")
    rows = []
    for t in range(len(frames)):
        row = {"frame": t, "psnr": psnr(frames[t], gt[t]),
               "ssim": ssim_value(frames[t], gt[t].astype(np.float64))}
        if pred_keypoints is not None:
            row["keypoint_distance"] = keypoint_distance(pred_keypoints[t], gt_keypoints[t])
        rows.append(row)
    finite_psnr = [r["psnr"] for r in rows if np.isfinite(r["psnr"])]
    summary = {
        "psnr_mean": float(np.mean(finite_psnr)) if finite_psnr else PSNR_IDENTICAL,
        "ssim_mean": float(np.mean([r["ssim"] for r in rows])),
    }
    if pred_keypoints is not None:
        summary["keypoint_distance_mean"] = float(
            np.mean([r["keypoint_distance"] for r in rows]))
    return {"rows": rows, "summary": summary}


def marker_clusters_for_scene(model: DeformableCloudModel,
                              scene: SyntheticScene, k: int = 8) -> MarkerClusters:
    """Clusters anchored at the rest-pose lip landmark locations."""
    from .gaussians import activate

    cloud = activate(model.static_raw())
    up3d = scene.oracle.mouth_center + np.array([0.0, scene.spec.aperture_rest / 2, 0.0])
    low3d = scene.oracle.mouth_center - np.array([0.0, scene.spec.aperture_rest / 2, 0.0])
    return MarkerClusters.assign(cloud.position.data, cloud.opacity.data, up3d, low3d, k=k)


def aperture_series(model: DeformableCloudModel, scene: SyntheticScene,
                    clusters: MarkerClusters, positions: np.ndarray,
                    opacities: np.ndarray, frame_indices: np.ndarray) -> np.ndarray:
    """Projected distance between the two lip markers per frame."""
    vals = np.zeros(len(frame_indices))
    for j, t in enumerate(frame_indices):
        cam = camera_from_pose(scene.track.pose[t], scene.cameras[0])
        pts = clusters.project(positions[j], opacities[j], cam)
        vals[j] = np.linalg.norm(pts[0] - pts[1])
    return vals


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0:
        return 0.0
    return float((a * b).sum() / denom)
