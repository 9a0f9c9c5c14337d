"""Spline-edge network layers (Kolmogorov-Arnold style).

Each edge of a layer carries a learnable univariate function: a B-spline of
order k over a uniform grid on [-1, 1] plus a smooth base branch
x * sigmoid(x) with a scalar edge weight.  Edge outputs are summed into the
destination unit; layers compose.

Inputs outside [-1, 1] are clamped before basis evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParameterStore, ShapeError, Tensor, constant


def make_grid(intervals: int, order: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Uniform knot vector with `order` extension knots on each side."""
    h = (hi - lo) / intervals
    return lo + h * np.arange(-order, intervals + order + 1)


def spline_basis(x: Tensor | np.ndarray, grid: np.ndarray, order: int) -> Tensor:
    """Cox-de Boor B-spline basis values.

    x: (...,) tensor; returns (..., intervals + order) basis values that are
    non-negative and sum to one for x inside [grid[order], grid[-order-1]].
    Evaluation is clamped to that span.
    """
    if order < 1:
        raise ValueError("spline order must be >= 1")
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    x = x if isinstance(x, Tensor) else constant(np.asarray(x, dtype=np.float64))
    lo, hi = grid[order], grid[-order - 1]
    x = x.clip(lo, hi)
    xe = x.reshape(x.shape + (1,))
    # order-0 indicators: piecewise constant in x, so treated as constants
    xv = xe.data
    bases = constant(((xv >= grid[:-1]) & (xv < grid[1:])).astype(np.float64))
    for k in range(1, order + 1):
        left_den = grid[k:-1] - grid[:-k - 1]
        right_den = grid[k + 1:] - grid[1:-k]
        w1 = (xe - constant(grid[:-k - 1])) * constant(1.0 / left_den)
        w2 = (constant(grid[k + 1:]) - xe) * constant(1.0 / right_den)
        ell = len(grid) - k - 1
        bases = w1 * bases[..., :ell] + w2 * bases[..., 1:]
    return bases


@dataclass(frozen=True)
class KanConfig:
    grid_intervals: int = 5
    order: int = 3

    @property
    def basis_count(self) -> int:
        return self.grid_intervals + self.order


class KanLayer:
    """One spline-edge layer: in_width -> out_width."""

    def __init__(self, store: ParameterStore, name: str, in_width: int, out_width: int,
                 cfg: KanConfig = KanConfig(), rng: np.random.Generator | None = None,
                 coeff_scale: float = 0.1, base_scale: float = 0.3,
                 const_out: np.ndarray | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_width = in_width
        self.out_width = out_width
        self.cfg = cfg
        self.grid = make_grid(cfg.grid_intervals, cfg.order)
        B = cfg.basis_count
        coeffs = rng.normal(0.0, coeff_scale, size=(out_width, in_width, B))
        if const_out is not None:
            # partition of unity: equal coefficients on every basis of an edge
            # contribute a constant, so per-unit offsets are exact at any input
            coeffs += (np.asarray(const_out, dtype=np.float64) / in_width)[:, None, None]
        base = rng.normal(0.0, base_scale, size=(out_width, in_width)) if base_scale > 0 \
            else np.zeros((out_width, in_width))
        self.coeffs = store.add(f"{name}/coeffs", coeffs)
        self.base_weights = store.add(f"{name}/base_w", base)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.in_width:
            raise ShapeError(f"kan layer: expected (N, {self.in_width}) input, got {x.data.shape}")
        n = x.data.shape[0]
        B = self.cfg.basis_count
        bases = spline_basis(x, self.grid, self.cfg.order)       # (N, in, B)
        flat = bases.reshape(n, self.in_width * B)
        w = self.coeffs.reshape(self.out_width, self.in_width * B)
        spline_out = flat @ w.transpose()
        base_out = x.silu() @ self.base_weights.transpose()
        return spline_out + base_out


class KanNetwork:
    """Composition of spline-edge layers."""

    def __init__(self, layers: list[KanLayer]):
        for a, b in zip(layers, layers[1:]):
            if a.out_width != b.in_width:
                raise ShapeError(f"kan network: layer widths {a.out_width} -> {b.in_width} incompatible")
        self.layers = layers

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @property
    def out_width(self) -> int:
        return self.layers[-1].out_width

    def __call__(self, x: Tensor | np.ndarray) -> Tensor:
        if not isinstance(x, Tensor):
            x = constant(np.asarray(x, dtype=np.float64))
        squeeze = x.data.ndim == 1
        if squeeze:
            x = x.reshape(1, x.data.size)
        for layer in self.layers:
            x = layer(x)
        return x.reshape(x.data.shape[1]) if squeeze else x


# -- Gaussian parameter heads -------------------------------------------------

def raw_param_width(sh_degree: int) -> int:
    """Width of a raw Gaussian parameter vector: position 3, scale 3,
    rotation 4, SH color 3*(deg+1)^2, opacity 1."""
    return 3 + 3 + 4 + 3 * (sh_degree + 1) ** 2 + 1


def raw_param_slices(sh_degree: int) -> dict[str, slice]:
    """Fixed output layout (position, scale, rotation, SH, opacity)."""
    k = 3 * (sh_degree + 1) ** 2
    return {
        "position": slice(0, 3),
        "scale": slice(3, 6),
        "rotation": slice(6, 10),
        "sh": slice(10, 10 + k),
        "opacity": slice(10 + k, 11 + k),
    }


def make_param_head(store: ParameterStore, name: str, in_width: int, sh_degree: int,
                    hidden: int = 64, cfg: KanConfig = KanConfig(),
                    rng: np.random.Generator | None = None,
                    zero_output: bool = False,
                    init_scale: float = 0.03, init_opacity: float = 0.1) -> KanNetwork:
    """Two-layer network mapping features to raw Gaussian parameters.

    zero_output=True gives an exactly-zero map (deformation head start);
    otherwise the output layer carries constant offsets so the initial cloud
    has scale ~= init_scale, opacity ~= init_opacity, identity rotation.
    """
    rng = rng or np.random.default_rng(0)
    out_width = raw_param_width(sh_degree)
    layer0 = KanLayer(store, f"{name}/layer0", in_width, hidden, cfg, rng)
    if zero_output:
        layer1 = KanLayer(store, f"{name}/layer1", hidden, out_width, cfg, rng,
                          coeff_scale=0.0, base_scale=0.0)
    else:
        sl = raw_param_slices(sh_degree)
        const = np.zeros(out_width)
        const[sl["scale"]] = np.log(init_scale)
        const[sl["rotation"]] = [1.0, 0.0, 0.0, 0.0]
        const[sl["opacity"]] = np.log(init_opacity / (1.0 - init_opacity))
        layer1 = KanLayer(store, f"{name}/layer1", hidden, out_width, cfg, rng,
                          coeff_scale=0.02, base_scale=0.02, const_out=const)
    return KanNetwork([layer0, layer1])


def map_params(network: KanNetwork, features: Tensor, sh_degree: int) -> dict[str, Tensor]:
    """Run the head and slice its raw output by the fixed layout.

    features: (N, in_width); returns raw (pre-activation) slices per attribute.
    """
    raw = network(features)
    if raw.data.shape[-1] != raw_param_width(sh_degree):
        raise ShapeError(f"map_params: head emits width {raw.data.shape[-1]}, "
                         f"layout expects {raw_param_width(sh_degree)}")
    return {key: raw[:, sl] for key, sl in raw_param_slices(sh_degree).items()}
