"""Multi-resolution hash triplane encoder.

A 3D point is projected onto three orthogonal planes (XY, YZ, XZ).  Each
plane holds L resolution levels; each level is a hash table of T feature rows
of width F.  A query bilinearly interpolates the four hashed cell corners per
level, concatenates levels, and the three plane features are fused by
elementwise (Hadamard) product, level-aligned.

Output feature width is L * F.  Coordinates are clamped to [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParameterStore, Tensor, constant, gather_rows

HASH_PRIME_1 = 1
HASH_PRIME_2 = 2654435761

PLANE_NAMES = ("xy", "yz", "xz")
# which point coordinates each plane consumes
PLANE_AXES = {"xy": (0, 1), "yz": (1, 2), "xz": (0, 2)}


def hash_index(i, j, table_size: int):
    """Spatial hash of a 2D integer cell corner into [0, table_size).

    index = (i * 1) XOR (j * 2654435761), modulo table_size.
    table_size must be a power of two.
    """
    if table_size & (table_size - 1) or table_size <= 0:
        raise ValueError(f"table_size must be a power of two, got {table_size}")
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    return ((i * HASH_PRIME_1) ^ (j * HASH_PRIME_2)) & (table_size - 1)


@dataclass(frozen=True)
class TriplaneConfig:
    levels: int = 4
    base_resolution: int = 16
    growth_factor: int = 2
    table_size: int = 2 ** 14
    features_per_level: int = 2
    init_scale: float = 0.1

    @property
    def feature_width(self) -> int:
        return self.levels * self.features_per_level

    def resolution(self, level: int) -> int:
        return self.base_resolution * self.growth_factor ** level


class TriplaneEncoder:
    """Three hashed multi-resolution plane grids producing the spatial feature."""

    def __init__(self, store: ParameterStore, cfg: TriplaneConfig = TriplaneConfig(),
                 rng: np.random.Generator | None = None, prefix: str = "triplane"):
        self.cfg = cfg
        self.prefix = prefix
        rng = rng or np.random.default_rng(0)
        self.tables: dict[str, list] = {}
        for plane in PLANE_NAMES:
            rows = []
            for level in range(cfg.levels):
                init = rng.uniform(-cfg.init_scale, cfg.init_scale,
                                   size=(cfg.table_size, cfg.features_per_level))
                rows.append(store.add(f"{prefix}/{plane}/level{level}", init))
            self.tables[plane] = rows

    # -- encoding -----------------------------------------------------------
    def encode_plane(self, plane: str, u: Tensor | np.ndarray) -> Tensor:
        """Encode 2D coordinates u in [-1,1]^2 against one plane. u: (N, 2)."""
        if not isinstance(u, Tensor):
            u = constant(np.asarray(u, dtype=np.float64))
        cfg = self.cfg
        u = u.clip(-1.0, 1.0)
        feats = []
        for level in range(cfg.levels):
            res = cfg.resolution(level)
            g = (u + 1.0) * (res / 2.0)            # grid coords in [0, res]
            base = np.floor(g.data)
            i0 = base[:, 0].astype(np.int64)
            j0 = base[:, 1].astype(np.int64)
            frac = g - constant(base)              # differentiable wrt u
            fx = frac[:, 0:1]
            fy = frac[:, 1:2]
            table = self.tables[plane][level]
            T = cfg.table_size
            c00 = gather_rows(table, hash_index(i0, j0, T))
            c10 = gather_rows(table, hash_index(i0 + 1, j0, T))
            c01 = gather_rows(table, hash_index(i0, j0 + 1, T))
            c11 = gather_rows(table, hash_index(i0 + 1, j0 + 1, T))
            one = constant(1.0)
            feats.append((one - fx) * (one - fy) * c00 + fx * (one - fy) * c10
                         + (one - fx) * fy * c01 + fx * fy * c11)
        from .autodiff import concat
        return concat(feats, axis=1)

    def encode_batch(self, points: Tensor | np.ndarray) -> Tensor:
        """Encode N 3D points; returns (N, levels*features_per_level)."""
        if not isinstance(points, Tensor):
            points = constant(np.asarray(points, dtype=np.float64))
        if points.data.ndim != 2 or points.data.shape[1] != 3:
            raise ValueError(f"encode_batch: expected (N, 3) points, got {points.data.shape}")
        if points.data.shape[0] < 1:
            raise ValueError("encode_batch: empty batch")
        out = None
        for plane in PLANE_NAMES:
            a, b = PLANE_AXES[plane]
            from .autodiff import concat as _c
            uv = _c([points[:, a:a + 1], points[:, b:b + 1]], axis=1)
            f = self.encode_plane(plane, uv)
            out = f if out is None else out * f
        return out

    def encode_point(self, p) -> Tensor:
        """Encode a single 3D point; returns a flat feature of width levels*F."""
        p = np.asarray(p, dtype=np.float64).reshape(1, 3)
        return self.encode_batch(p).reshape(self.cfg.feature_width)

    def parameter_names(self) -> list[str]:
        return [f"{self.prefix}/{plane}/level{lvl}"
                for plane in PLANE_NAMES for lvl in range(self.cfg.levels)]
