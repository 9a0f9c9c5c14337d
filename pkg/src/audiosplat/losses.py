"""Training objectives: L1 color, structural dissimilarity, masked lip loss.

Stage 1:  L1 + w_dssim * DSSIM + w_lpips * LPIPS
Stage 2:  stage 1 + w_lip * masked L1

The perceptual (LPIPS) term needs a pretrained network and is out of scope
here; the weight is accepted in configs and the term evaluates to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, constant, filter2d_valid

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2      # (0.01 * L)^2 for unit dynamic range
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    dssim: float = 0.2
    lpips: float = 0.0
    lip: float = 0.5

    def __post_init__(self):
        for name in ("dssim", "lpips", "lip"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0")


def _check_pair(img: Tensor, gt: Tensor) -> None:
    if img.data.shape != gt.data.shape:
        raise ShapeError(f"loss: image shapes differ, {img.data.shape} vs {gt.data.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(np.asarray(x, dtype=np.float64))


def l1_loss(img, gt) -> Tensor:
    """Mean absolute per-channel difference."""
    img, gt = _as_tensor(img), _as_tensor(gt)
    _check_pair(img, gt)
    return (img - gt).abs().mean()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_channel(x: Tensor, y: Tensor, kernel: np.ndarray) -> Tensor:
    mu_x = filter2d_valid(x, kernel)
    mu_y = filter2d_valid(y, kernel)
    xx = filter2d_valid(x * x, kernel) - mu_x * mu_x
    yy = filter2d_valid(y * y, kernel) - mu_y * mu_y
    xy = filter2d_valid(x * y, kernel) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * xy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (xx + yy + SSIM_C2)
    return (num / den).mean()


def ssim(img, gt) -> Tensor:
    """Mean SSIM over valid 11x11 Gaussian windows, averaged over channels."""
    img, gt = _as_tensor(img), _as_tensor(gt)
    _check_pair(img, gt)
    if img.data.ndim == 2:
        img = img.reshape(img.data.shape + (1,))
        gt = gt.reshape(gt.data.shape + (1,))
    h, w, ch = img.data.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"ssim: image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = gaussian_window()
    vals = [_ssim_channel(img[:, :, c], gt[:, :, c], kernel) for c in range(ch)]
    total = vals[0]
    for v in vals[1:]:
        total = total + v
    return total * (1.0 / ch)


def dssim_loss(img, gt) -> Tensor:
    """Structural dissimilarity 1 - SSIM."""
    return constant(1.0) - ssim(img, gt)


def lip_loss(img, gt, mask) -> Tensor:
    """L1 restricted to the mask support (mean over masked pixels)."""
    img, gt = _as_tensor(img), _as_tensor(gt)
    _check_pair(img, gt)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != img.data.shape[:2]:
        raise ShapeError(f"lip_loss: mask shape {mask.shape} != image spatial shape {img.data.shape[:2]}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("lip_loss: mask must be binary")
    support = mask.sum()
    if support == 0:
        raise ValueError("lip_loss: empty mask")
    m = constant(mask[:, :, None])
    diff = ((img - gt) * m).abs()
    return diff.sum() * (1.0 / (support * img.data.shape[2]))


def stage1_loss(img, gt, weights: LossWeights = LossWeights()) -> Tensor:
    """L1 + dssim term (+ zero-valued perceptual stub)."""
    loss = l1_loss(img, gt)
    if weights.dssim > 0:
        loss = loss + weights.dssim * dssim_loss(img, gt)
    # LPIPS stub: weight accepted, contribution is identically zero
    return loss


def stage2_loss(img, gt, lip_mask, weights: LossWeights = LossWeights()) -> Tensor:
    loss = stage1_loss(img, gt, weights)
    if weights.lip > 0:
        loss = loss + weights.lip * lip_loss(img, gt, lip_mask)
    return loss
