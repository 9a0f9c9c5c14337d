"""Differentiable CPU splatting renderer.

Forward path: 3D Gaussians are projected to screen-space ellipses (EWA: the
3D covariance R diag(s)^2 R^T is pushed through the world-to-camera rotation
and the perspective Jacobian), depth-sorted globally and alpha-composited
front to back in 16x16 pixel tiles.  Per pixel

    C = sum_i c_i a_i T_i + T_end * background,
    a_i = min(opacity_i * exp(-1/2 d^T cov2d^-1 d), 0.9999),
    T_i = prod_{j<i} (1 - a_j),

with compositing of a pixel stopped once T drops below 1e-4.

A splat is rasterized in every tile its bounding box overlaps; the box radius
is sized so the truncated Gaussian tail is below 1e-9, which keeps the tiled
image within oracle tolerance of the untiled brute-force renderer.

The projection/color math runs on autodiff tensors; only the per-pixel
compositing is a custom primitive with a hand-derived backward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor, constant, stack
from .gaussians import GaussianCloud

TILE = 16
NEAR_PLANE = 0.01
COV_FLOOR = 0.3          # px^2 added to the 2D covariance diagonal
ALPHA_MAX = 0.9999
TRANSMITTANCE_MIN = 1e-4
TAIL_EPS = 1e-9          # per-splat contribution dropped outside the box
_RADIUS_FACTOR = np.sqrt(2.0 * np.log(1.0 / TAIL_EPS))

# real spherical harmonics constants (3DGS convention)
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # (3, 3) world-to-camera
    translation: np.ndarray   # (3,)
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("camera: focal lengths must be positive")
        r = self.rotation
        if r.shape != (3, 3) or np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise ValueError("camera: rotation must be orthonormal")

    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @staticmethod
    def look_at(eye, target, up, fx: float, fy: float, width: int, height: int) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])     # +z forward, +y image-down
        return Camera(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                      rotation=rot, translation=-rot @ eye,
                      width=width, height=height)


@dataclass
class Splat2D:
    """One projected Gaussian (plain arrays)."""

    mean2d: np.ndarray       # (2,) pixel coordinates
    cov2d: np.ndarray        # (2, 2) SPD
    depth: float
    color: np.ndarray        # (3,)
    opacity: float

    @property
    def conic(self) -> np.ndarray:
        (a, b), (_, c) = self.cov2d
        det = a * c - b * b
        return np.array([c / det, -b / det, a / det])

    @property
    def radius(self) -> float:
        (a, b), (_, c) = self.cov2d
        lam_max = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
        return float(_RADIUS_FACTOR * np.sqrt(lam_max) + 1.0)


@dataclass
class ProjectedSplats:
    """Batched graph-connected projection output (visible splats only)."""

    mean2d: Tensor           # (M, 2)
    conic: Tensor            # (M, 3) upper-triangle of the 2x2 inverse
    color: Tensor            # (M, 3)
    opacity: Tensor          # (M,)
    depth: np.ndarray        # (M,)
    radius: np.ndarray       # (M,)
    order: np.ndarray        # depth-sorted indices into the arrays above
    visible: np.ndarray = field(default=None)  # indices into the source cloud


def _quat_to_rotmat(q: Tensor) -> Tensor:
    w, x = q[:, 0], q[:, 1]
    y, z = q[:, 2], q[:, 3]
    two = constant(2.0)
    one = constant(1.0)
    r00 = one - two * (y * y + z * z)
    r01 = two * (x * y - w * z)
    r02 = two * (x * z + w * y)
    r10 = two * (x * y + w * z)
    r11 = one - two * (x * x + z * z)
    r12 = two * (y * z - w * x)
    r20 = two * (x * z - w * y)
    r21 = two * (y * z + w * x)
    r22 = one - two * (x * x + y * y)
    rows = [stack([r00, r01, r02], axis=1),
            stack([r10, r11, r12], axis=1),
            stack([r20, r21, r22], axis=1)]
    return stack(rows, axis=1)


def eval_sh(sh: Tensor, dirs: Tensor, sh_degree: int) -> Tensor:
    """View-dependent color from SH coefficients: relu(0.5 + sum_k Y_k c_k).

    sh: (N, K, 3); dirs: (N, 3) unit vectors.
    """
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    basis = [constant(np.full(dirs.data.shape[0], SH_C0))]
    if sh_degree >= 1:
        basis += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if sh_degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        basis += [SH_C2[0] * (x * y), SH_C2[1] * (y * z),
                  SH_C2[2] * (2.0 * zz - xx - yy),
                  SH_C2[3] * (x * z), SH_C2[4] * (xx - yy)]
    if sh_degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        basis += [SH_C3[0] * y * (3.0 * xx - yy), SH_C3[1] * (x * y) * z,
                  SH_C3[2] * y * (4.0 * zz - xx - yy),
                  SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
                  SH_C3[4] * x * (4.0 * zz - xx - yy),
                  SH_C3[5] * z * (xx - yy), SH_C3[6] * x * (xx - 3.0 * yy)]
    k = (sh_degree + 1) ** 2
    if sh.data.shape[1] != k:
        raise ShapeError(f"eval_sh: {sh.data.shape[1]} coefficients for degree {sh_degree}")
    b = stack(basis, axis=1)                       # (N, K)
    col = (sh * b.reshape(b.data.shape[0], k, 1)).sum(axis=1)
    return (col + 0.5).relu()


def project_cloud(cloud: GaussianCloud, camera: Camera) -> ProjectedSplats:
    """EWA projection of the whole cloud; culls behind-camera and off-frustum splats."""
    n = len(cloud)
    rot = constant(camera.rotation)
    trans = constant(camera.translation[None, :])
    cam_pts = cloud.position @ constant(camera.rotation.T) + trans   # (N, 3)
    xs, ys, zs = cam_pts[:, 0], cam_pts[:, 1], cam_pts[:, 2]
    depth = zs.data.copy()

    # keep z out of the denominator path for culled splats
    safe_z = zs.clip(NEAR_PLANE * 0.5, np.inf)
    inv_z = constant(1.0) / safe_z
    mx = xs * inv_z * constant(camera.fx) + constant(camera.cx)
    my = ys * inv_z * constant(camera.fy) + constant(camera.cy)
    mean2d = stack([mx, my], axis=1)

    rmat = _quat_to_rotmat(cloud.rotation)                # (N, 3, 3)
    s2 = (cloud.scale * cloud.scale).reshape(n, 1, 3)
    sigma = (rmat * s2) @ rmat.transpose(0, 2, 1)         # R diag(s^2) R^T
    sigma_cam = rot @ sigma @ constant(camera.rotation.T)

    zero = constant(np.zeros(n))
    j00 = constant(camera.fx) * inv_z
    j02 = -constant(camera.fx) * xs * inv_z * inv_z
    j11 = constant(camera.fy) * inv_z
    j12 = -constant(camera.fy) * ys * inv_z * inv_z
    jac = stack([stack([j00, zero, j02], axis=1),
                 stack([zero, j11, j12], axis=1)], axis=1)           # (N, 2, 3)
    cov2d = jac @ sigma_cam @ jac.transpose(0, 2, 1)
    a = cov2d[:, 0, 0] + constant(COV_FLOOR)
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + constant(COV_FLOOR)
    det = a * c - b * b
    conic = stack([c / det, -b / det, a / det], axis=1)

    lam_max = 0.5 * (a.data + c.data) + np.sqrt(0.25 * (a.data - c.data) ** 2 + b.data ** 2)
    radius = _RADIUS_FACTOR * np.sqrt(lam_max) + 1.0

    cam_center = camera.center()
    delta = cloud.position - constant(cam_center[None, :])
    norm = (delta * delta).sum(axis=1, keepdims=True).sqrt()
    dirs = delta / norm
    color = eval_sh(cloud.sh, dirs, cloud.sh_degree)

    mxd, myd = mean2d.data[:, 0], mean2d.data[:, 1]
    visible = ((depth > NEAR_PLANE)
               & (mxd + radius > 0.0) & (mxd - radius < camera.width)
               & (myd + radius > 0.0) & (myd - radius < camera.height))
    idx = np.nonzero(visible)[0]
    order = np.argsort(depth[idx], kind="stable")
    return ProjectedSplats(
        mean2d=mean2d[idx], conic=conic[idx], color=color[idx],
        opacity=cloud.opacity[idx], depth=depth[idx], radius=radius[idx],
        order=order, visible=idx,
    )


def project(gaussian: dict, camera: Camera) -> Splat2D | None:
    """Project a single activated Gaussian; returns None when culled.

    gaussian: dict with position (3,), scale (3,), rotation (4,), sh (K, 3),
    opacity scalar.
    """
    cloud = GaussianCloud(
        position=constant(np.asarray(gaussian["position"], dtype=np.float64)[None, :]),
        scale=constant(np.asarray(gaussian["scale"], dtype=np.float64)[None, :]),
        rotation=constant(np.asarray(gaussian["rotation"], dtype=np.float64)[None, :]),
        sh=constant(np.asarray(gaussian["sh"], dtype=np.float64)[None, :, :]),
        opacity=constant(np.array([float(gaussian["opacity"])])),
        sh_degree=int(np.sqrt(np.asarray(gaussian["sh"]).shape[0])) - 1,
    )
    proj = project_cloud(cloud, camera)
    if len(proj.visible) == 0:
        return None
    a, b, c = proj.conic.data[0]
    det = a * c - b * b
    cov = np.array([[c / det, -b / det], [-b / det, a / det]])
    return Splat2D(mean2d=proj.mean2d.data[0], cov2d=cov, depth=float(proj.depth[0]),
                   color=proj.color.data[0], opacity=float(proj.opacity.data[0]))


# -- tiled forward/backward core ------------------------------------------------

def _tile_lists(means: np.ndarray, radii: np.ndarray, order: np.ndarray,
                width: int, height: int):
    """Depth-ordered splat index list per 16x16 tile."""
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    lists: list[list[int]] = [[] for _ in range(tiles_x * tiles_y)]
    for i in order:
        x0 = max(int((means[i, 0] - radii[i]) // TILE), 0)
        x1 = min(int((means[i, 0] + radii[i]) // TILE), tiles_x - 1)
        y0 = max(int((means[i, 1] - radii[i]) // TILE), 0)
        y1 = min(int((means[i, 1] + radii[i]) // TILE), tiles_y - 1)
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                lists[ty * tiles_x + tx].append(i)
    return lists, tiles_x, tiles_y


def _tile_alphas(ids, means, conics, opacs, px, py):
    dx = px[None, :] - means[ids, 0:1]
    dy = py[None, :] - means[ids, 1:2]
    ca = conics[ids, 0:1]
    cb = conics[ids, 1:2]
    cc = conics[ids, 2:3]
    power = -0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy)
    falloff = np.exp(power)
    alpha = np.minimum(opacs[ids, None] * falloff, ALPHA_MAX)
    return dx, dy, falloff, alpha


def _rasterize_forward(means, conics, colors, opacs, radii, order,
                       width, height, background, early_term=True):
    image = np.empty((height, width, 3))
    image[:] = background
    term_mask = np.zeros((height, width), dtype=bool)
    lists, tiles_x, tiles_y = _tile_lists(means, radii, order, width, height)
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            ids = lists[ty * tiles_x + tx]
            if not ids:
                continue
            ids = np.asarray(ids)
            xs = np.arange(tx * TILE, min((tx + 1) * TILE, width))
            ys = np.arange(ty * TILE, min((ty + 1) * TILE, height))
            gx, gy = np.meshgrid(xs, ys, indexing="xy")
            px = (gx + 0.5).ravel()
            py = (gy + 0.5).ravel()
            _, _, _, alpha = _tile_alphas(ids, means, conics, opacs, px, py)
            one_minus = 1.0 - alpha
            t_before = np.cumprod(one_minus, axis=0)
            t_before = np.vstack([np.ones_like(t_before[:1]), t_before[:-1]])
            keep = t_before >= TRANSMITTANCE_MIN if early_term else np.ones_like(alpha, dtype=bool)
            alpha_eff = alpha * keep
            tb_eff = np.cumprod(1.0 - alpha_eff, axis=0)
            tb_eff = np.vstack([np.ones_like(tb_eff[:1]), tb_eff[:-1]])
            w = alpha_eff * tb_eff
            t_end = tb_eff[-1] * (1.0 - alpha_eff[-1])
            tile_img = w.T @ colors[ids] + t_end[:, None] * background[None, :]
            yy = ys.repeat(len(xs))
            xx = np.tile(xs, len(ys))
            image[yy, xx] = tile_img
            if early_term:
                term_mask[yy, xx] |= (~keep).any(axis=0)
    return image, term_mask


def _rasterize_backward(g_image, means, conics, colors, opacs, radii, order,
                        width, height, background):
    d_means = np.zeros_like(means)
    d_conics = np.zeros_like(conics)
    d_colors = np.zeros_like(colors)
    d_opacs = np.zeros_like(opacs)
    lists, tiles_x, tiles_y = _tile_lists(means, radii, order, width, height)
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            ids = lists[ty * tiles_x + tx]
            if not ids:
                continue
            ids = np.asarray(ids)
            xs = np.arange(tx * TILE, min((tx + 1) * TILE, width))
            ys = np.arange(ty * TILE, min((ty + 1) * TILE, height))
            gx, gy = np.meshgrid(xs, ys, indexing="xy")
            px = (gx + 0.5).ravel()
            py = (gy + 0.5).ravel()
            dx, dy, falloff, alpha = _tile_alphas(ids, means, conics, opacs, px, py)
            one_minus = 1.0 - alpha
            t_before = np.cumprod(one_minus, axis=0)
            t_before = np.vstack([np.ones_like(t_before[:1]), t_before[:-1]])
            keep = t_before >= TRANSMITTANCE_MIN
            alpha_eff = alpha * keep
            tb_eff = np.cumprod(1.0 - alpha_eff, axis=0)
            tb_eff = np.vstack([np.ones_like(tb_eff[:1]), tb_eff[:-1]])
            w = alpha_eff * tb_eff                                     # (S, P)
            t_end = tb_eff[-1] * (1.0 - alpha_eff[-1])

            g_pix = g_image[np.repeat(ys, len(xs)), np.tile(xs, len(ys))]  # (P, 3)

            cols = colors[ids]                                         # (S, 3)
            # d color: accumulate w-weighted upstream gradient
            d_colors_tile = w @ g_pix                                  # (S, 3)
            np.add.at(d_colors, ids, d_colors_tile)

            # suffix sums: contribution of everything behind splat i plus background
            contrib = w[:, :, None] * cols[:, None, :]                 # (S, P, 3)
            suffix = np.zeros_like(contrib)
            tail = t_end[:, None] * background[None, :]                # (P, 3)
            rolling = tail
            for i in range(len(ids) - 1, -1, -1):
                suffix[i] = rolling
                rolling = rolling + contrib[i]

            g_after = (suffix * g_pix[None, :, :]).sum(axis=2)          # (S, P)
            g_here = (cols[:, None, :] * g_pix[None, :, :]).sum(axis=2)  # (S, P)
            d_alpha = (g_here * tb_eff - g_after / (1.0 - alpha_eff)) * keep
            d_alpha *= alpha < ALPHA_MAX                                # clamp cuts the path

            d_op = (d_alpha * falloff).sum(axis=1)
            np.add.at(d_opacs, ids, d_op)
            d_pow = d_alpha * alpha
            ca = conics[ids, 0:1]
            cb = conics[ids, 1:2]
            cc = conics[ids, 2:3]
            np.add.at(d_conics, ids, np.stack([
                (-0.5 * d_pow * dx * dx).sum(axis=1),
                (-d_pow * dx * dy).sum(axis=1),
                (-0.5 * d_pow * dy * dy).sum(axis=1)], axis=1))
            np.add.at(d_means, ids, np.stack([
                (d_pow * (ca * dx + cb * dy)).sum(axis=1),
                (d_pow * (cb * dx + cc * dy)).sum(axis=1)], axis=1))
    return d_means, d_conics, d_colors, d_opacs


def rasterize_tensor(proj: ProjectedSplats, camera: Camera,
                     background: np.ndarray) -> Tensor:
    """Differentiable tiled rasterization of projected splats."""
    background = np.asarray(background, dtype=np.float64)
    means, conics = proj.mean2d, proj.conic
    colors, opacs = proj.color, proj.opacity
    img, _ = _rasterize_forward(means.data, conics.data, colors.data, opacs.data,
                                proj.radius, proj.order, camera.width, camera.height,
                                background)
    out = Tensor(img, parents=(means, conics, colors, opacs), op="rasterize")
    if out.requires_grad:
        def back(g, out=out, means=means, conics=conics, colors=colors, opacs=opacs,
                 radii=proj.radius, order=proj.order, camera=camera, background=background):
            dm, dc, dcol, dop = _rasterize_backward(
                g, means.data, conics.data, colors.data, opacs.data,
                radii, order, camera.width, camera.height, background)
            out._send(means, dm)
            out._send(conics, dc)
            out._send(colors, dcol)
            out._send(opacs, dop)
        out._backward = back
    return out


def render_cloud(cloud: GaussianCloud, camera: Camera, background) -> Tensor:
    """Project, depth-sort and rasterize a cloud; returns an (H, W, 3) image tensor."""
    proj = project_cloud(cloud, camera)
    return rasterize_tensor(proj, camera, np.asarray(background, dtype=np.float64))


# -- list-of-splats front end and brute-force oracle ---------------------------

def _splat_arrays(splats: list[Splat2D]):
    means = np.array([s.mean2d for s in splats]).reshape(-1, 2)
    conics = np.array([s.conic for s in splats]).reshape(-1, 3)
    colors = np.array([s.color for s in splats]).reshape(-1, 3)
    opacs = np.array([s.opacity for s in splats])
    radii = np.array([s.radius for s in splats])
    depths = np.array([s.depth for s in splats])
    return means, conics, colors, opacs, radii, depths


def rasterize(splats: list[Splat2D], camera: Camera, background,
              checked: bool = True, return_term_mask: bool = False):
    """Tiled rasterization of an already depth-sorted splat list."""
    background = np.asarray(background, dtype=np.float64)
    if not splats:
        img = np.empty((camera.height, camera.width, 3))
        img[:] = background
        return (img, np.zeros(img.shape[:2], dtype=bool)) if return_term_mask else img
    means, conics, colors, opacs, radii, depths = _splat_arrays(splats)
    if checked and np.any(np.diff(depths) < 0):
        raise ValueError("rasterize: splats are not depth-sorted")
    order = np.arange(len(splats))
    img, term = _rasterize_forward(means, conics, colors, opacs, radii, order,
                                   camera.width, camera.height, background)
    return (img, term) if return_term_mask else img


def rasterize_reference(splats: list[Splat2D], camera: Camera, background) -> np.ndarray:
    """Brute-force oracle: per-pixel compositing over all splats.

    No tiling, no bounding boxes, no early termination; kept structurally
    independent of the tiled renderer.
    """
    background = np.asarray(background, dtype=np.float64)
    h, w = camera.height, camera.width
    image = np.empty((h, w, 3))
    image[:] = background
    if not splats:
        return image
    means, conics, colors, opacs, _, _ = _splat_arrays(splats)
    gy, gx = np.mgrid[0:h, 0:w]
    px = (gx + 0.5).reshape(-1)
    py = (gy + 0.5).reshape(-1)
    dx = px[None, :] - means[:, 0:1]
    dy = py[None, :] - means[:, 1:2]
    power = -0.5 * (conics[:, 0:1] * dx * dx + 2.0 * conics[:, 1:2] * dx * dy
                    + conics[:, 2:3] * dy * dy)
    alpha = np.minimum(opacs[:, None] * np.exp(power), ALPHA_MAX)
    trans = np.cumprod(1.0 - alpha, axis=0)
    t_before = np.vstack([np.ones((1, alpha.shape[1])), trans[:-1]])
    weights = alpha * t_before
    flat = weights.T @ colors + trans[-1][:, None] * background[None, :]
    return flat.reshape(h, w, 3)
