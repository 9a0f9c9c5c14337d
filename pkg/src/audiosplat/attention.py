"""Agent cross-attention, periodic positional encoding and condition fusion.

The deformation path fuses per-frame condition tokens (audio, blink, pose and
a learned global token) into per-Gaussian spatial features through two chained
scaled-dot-product attentions routed via a short sequence of agent tokens:

    V_A = SDP(A, cond, cond)         # aggregation, n x d
    out = SDP(f_v, A, V_A)           # broadcast,  N x d

with A produced from the spatial features by strided mean pooling followed by
a two-layer perceptron.  Cost is O(N*n*d) + O(n*M*d) instead of the O(N^2*d)
of full self-projected cross-attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParameterStore, ShapeError, Tensor, concat, constant, stack

__all__ = [
    "AgentConfig",
    "ConditionTrack",
    "MacCounter",
    "sdp",
    "pool_tokens",
    "ppe",
    "agent_count",
    "ConditionFusion",
    "DeformAttention",
    "full_cross_attention",
]


class MacCounter:
    """Accumulates multiply-accumulate counts of the matmuls routed through it."""

    def __init__(self):
        self.macs = 0

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        self.macs += int(np.prod(a.data.shape[:-1])) * a.data.shape[-1] * b.data.shape[-1]
        return a @ b


_NULL_COUNTER = MacCounter()


def sdp(q: Tensor, k: Tensor, v: Tensor, counter: MacCounter | None = None) -> Tensor:
    """Scaled dot-product attention Softmax(Q K^T / sqrt(d)) V."""
    counter = counter or _NULL_COUNTER
    if q.data.shape[-1] == 0:
        raise ShapeError("sdp: zero feature width")
    if q.data.shape[-1] != k.data.shape[-1]:
        raise ShapeError(f"sdp: query width {q.data.shape[-1]} != key width {k.data.shape[-1]}")
    if k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(f"sdp: {k.data.shape[0]} keys vs {v.data.shape[0]} values")
    scale = 1.0 / np.sqrt(q.data.shape[-1])
    logits = counter.matmul(q, k.transpose()) * scale
    return counter.matmul(logits.softmax(axis=-1), v)


def agent_count(ratio: float, n_tokens: int) -> int:
    """Agent tokens as a fraction of the spatial sequence length."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"agent ratio must be in (0, 1], got {ratio}")
    return max(1, round(ratio * n_tokens))


def pool_tokens(x: Tensor, n: int, counter: MacCounter | None = None) -> Tensor:
    """Strided mean pooling of N tokens into n groups (contiguous, near-equal)."""
    N = x.data.shape[0]
    if n < 1:
        raise ShapeError("pool_tokens: need at least one group")
    if n > N:
        raise ShapeError(f"pool_tokens: {n} groups for {N} tokens")
    bounds = [(g * N) // n for g in range(n + 1)]
    pool = np.zeros((n, N))
    for g in range(n):
        lo, hi = bounds[g], bounds[g + 1]
        pool[g, lo:hi] = 1.0 / (hi - lo)
    return (counter or _NULL_COUNTER).matmul(constant(pool), x)


def ppe(t: int, d_model: int, period: int) -> np.ndarray:
    """Periodic positional encoding of a frame index.

    Even coordinates sin((t mod p) / 10000^(2i/d)), odd coordinates the cosine
    of the same argument.
    """
    if period < 1:
        raise ValueError("ppe: period must be >= 1")
    if d_model % 2:
        raise ValueError("ppe: d_model must be even")
    phase = t % period
    i = np.arange(d_model // 2)
    arg = phase / (10000.0 ** (2.0 * i / d_model))
    out = np.empty(d_model)
    out[0::2] = np.sin(arg)
    out[1::2] = np.cos(arg)
    return out


@dataclass(frozen=True)
class AgentConfig:
    ratio: float = 0.005
    d_model: int = 64
    period: int = 25

    def agents_for(self, n_tokens: int) -> int:
        return agent_count(self.ratio, n_tokens)


@dataclass
class ConditionTrack:
    """Per-frame condition signals: audio vector, blink scalar, pose vector."""

    audio: np.ndarray          # (T, A)
    blink: np.ndarray          # (T,)
    pose: np.ndarray           # (T, 6) rotation vector + translation
    timestep: np.ndarray = field(default=None)  # (T,) frame indices

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float64)
        self.blink = np.asarray(self.blink, dtype=np.float64)
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.timestep is None:
            self.timestep = np.arange(len(self.blink))
        self.timestep = np.asarray(self.timestep)
        n = len(self.audio)
        if not (len(self.blink) == len(self.pose) == len(self.timestep) == n):
            raise ValueError("condition track: per-frame arrays have different lengths")
        if self.blink.min() < 0.0 or self.blink.max() > 1.0:
            raise ValueError("condition track: blink values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.blink)

    def row(self, idx: int) -> dict:
        return {
            "audio": self.audio[idx],
            "blink": float(self.blink[idx]),
            "pose": self.pose[idx],
            "t": int(self.timestep[idx]),
        }


class ConditionFusion:
    """Projects audio/blink/pose into the shared latent space and assembles the
    4-token condition sequence [audio, blink, pose, global] + PPE(t)."""

    N_TOKENS = 4

    def __init__(self, store: ParameterStore, audio_width: int, cfg: AgentConfig,
                 rng: np.random.Generator | None = None, prefix: str = "fusion"):
        rng = rng or np.random.default_rng(0)
        d = cfg.d_model
        self.cfg = cfg
        self.audio_width = audio_width
        s = 1.0 / np.sqrt(max(audio_width, 1))
        self.w_audio = store.add(f"{prefix}/w_audio", rng.normal(0, s, size=(d, audio_width)))
        self.w_blink = store.add(f"{prefix}/w_blink", rng.normal(0, 1.0, size=(d, 1)))
        self.w_pose = store.add(f"{prefix}/w_pose", rng.normal(0, 1.0 / np.sqrt(6), size=(d, 6)))
        # the global token starts as a zero vector but is free to learn a bias
        self.null_token = store.add(f"{prefix}/null_token", np.zeros(d))

    def __call__(self, row: dict) -> Tensor:
        audio = np.asarray(row["audio"], dtype=np.float64)
        if audio.shape != (self.audio_width,):
            raise ShapeError(f"fuse_conditions: audio width {audio.shape} != ({self.audio_width},)")
        pose = np.asarray(row["pose"], dtype=np.float64)
        if pose.shape != (6,):
            raise ShapeError(f"fuse_conditions: pose must have width 6, got {pose.shape}")
        d = self.cfg.d_model
        fa = (self.w_audio @ constant(audio[:, None])).reshape(d)
        fe = (self.w_blink @ constant(np.array([[float(row["blink"])]]))).reshape(d)
        fp = (self.w_pose @ constant(pose[:, None])).reshape(d)
        seq = stack([fa, fe, fp, self.null_token], axis=0)
        enc = ppe(int(row["t"]), self.cfg.d_model, self.cfg.period)
        return seq + constant(enc[None, :])


class DeformAttention:
    """Spatial-feature projection, agent generation and the two-step attention."""

    def __init__(self, store: ParameterStore, feature_width: int, cfg: AgentConfig,
                 rng: np.random.Generator | None = None, prefix: str = "esaa"):
        rng = rng or np.random.default_rng(0)
        d = cfg.d_model
        self.cfg = cfg
        self.feature_width = feature_width
        self.w_in = store.add(f"{prefix}/w_in",
                              rng.normal(0, 1.0 / np.sqrt(feature_width), size=(d, feature_width)))
        s = 1.0 / np.sqrt(d)
        self.mlp_w1 = store.add(f"{prefix}/mlp_w1", rng.normal(0, s, size=(d, d)))
        self.mlp_b1 = store.add(f"{prefix}/mlp_b1", np.zeros(d))
        self.mlp_w2 = store.add(f"{prefix}/mlp_w2", rng.normal(0, s, size=(d, d)))
        self.mlp_b2 = store.add(f"{prefix}/mlp_b2", np.zeros(d))

    def project(self, f_v: Tensor, counter: MacCounter | None = None) -> Tensor:
        if f_v.data.shape[-1] != self.feature_width:
            raise ShapeError(f"deform attention: feature width {f_v.data.shape[-1]} "
                             f"!= {self.feature_width}")
        return (counter or _NULL_COUNTER).matmul(f_v, self.w_in.transpose())

    def make_agents(self, x: Tensor, n: int, counter: MacCounter | None = None) -> Tensor:
        """Pool projected features into n groups, then a two-layer perceptron."""
        counter = counter or _NULL_COUNTER
        pooled = pool_tokens(x, n, counter)
        h = (counter.matmul(pooled, self.mlp_w1.transpose()) + self.mlp_b1).silu()
        return counter.matmul(h, self.mlp_w2.transpose()) + self.mlp_b2

    def cross_attend(self, x: Tensor, cond: Tensor, n: int,
                     counter: MacCounter | None = None) -> Tensor:
        """Aggregate conditions into agents, broadcast back over spatial tokens."""
        if cond.data.shape[0] < 1:
            raise ShapeError("agent_cross_attention: empty condition sequence")
        if cond.data.shape[-1] != x.data.shape[-1]:
            raise ShapeError(f"agent_cross_attention: width mismatch "
                             f"{x.data.shape[-1]} vs {cond.data.shape[-1]}")
        agents = self.make_agents(x, n, counter)
        v_agents = sdp(agents, cond, cond, counter)
        return sdp(x, agents, v_agents, counter)

    def deform_features(self, f_v: Tensor, fusion: ConditionFusion, row: dict,
                        counter: MacCounter | None = None, n: int | None = None) -> Tensor:
        """Audio-aware spatial feature for one frame: (N, d_model)."""
        x = self.project(f_v, counter)
        cond = fusion(row)
        n = n if n is not None else self.cfg.agents_for(x.data.shape[0])
        return self.cross_attend(x, cond, n, counter)


def full_cross_attention(x: Tensor, cond: Tensor, counter: MacCounter | None = None) -> Tensor:
    """Quadratic baseline: every spatial token attends over all spatial tokens
    plus the condition tokens."""
    ctx = concat([x, cond], axis=0)
    return sdp(x, ctx, ctx, counter)
