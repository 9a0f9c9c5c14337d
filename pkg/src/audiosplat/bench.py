"""Attention benchmark harness: op counts, scaling fits and wall-clock times.

Two views of the same machinery:

  * scaling sweep — multiply-accumulate counts of the agent path with a fixed
    agent count versus full cross-attention, over a grid of spatial lengths;
    log-log slopes quantify the linear-vs-quadratic behaviour,
  * ratio sweep — wall-clock throughput of the fused deformation step at a
    fixed spatial length across agent-token ratios.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .attention import (AgentConfig, ConditionFusion, DeformAttention, MacCounter,
                        agent_count, full_cross_attention)
from .autodiff import ParameterStore, constant

TABLE_RATIOS = (0.0016, 0.0025, 0.005, 0.01)
DEFAULT_N_GRID = (256, 512, 1024, 2048, 4096)


@dataclass
class BenchRow:
    n_tokens: int
    ratio: float
    n_agents: int
    agent_macs: int
    full_macs: int
    agent_seconds: float
    full_seconds: float

    @property
    def agent_throughput(self) -> float:
        return 1.0 / self.agent_seconds if self.agent_seconds > 0 else float("inf")


def _make_modules(feature_width: int, cfg: AgentConfig, seed: int = 0):
    store = ParameterStore()
    rng = np.random.default_rng(seed)
    att = DeformAttention(store, feature_width, cfg, rng=rng)
    fusion = ConditionFusion(store, audio_width=8, cfg=cfg, rng=rng)
    return att, fusion


def measure_pair(n_tokens: int, n_agents: int, d_model: int = 64,
                 feature_width: int = 8, seed: int = 0, repeats: int = 3,
                 time_full: bool = True):
    """MACs and best-of-k wall times for agent vs full attention at one size."""
    cfg = AgentConfig(ratio=1.0, d_model=d_model)
    att, fusion = _make_modules(feature_width, cfg, seed)
    rng = np.random.default_rng(seed + 1)
    f_v = constant(rng.normal(size=(n_tokens, feature_width)))
    row = {"audio": rng.normal(size=8), "blink": 0.5, "pose": rng.normal(size=6), "t": 3}

    agent_counter = MacCounter()
    x = att.project(f_v, agent_counter)
    cond = fusion(row)
    att.cross_attend(x, cond, n_agents, agent_counter)

    best_agent = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        x = att.project(f_v)
        att.cross_attend(x, fusion(row), n_agents)
        best_agent = min(best_agent, time.perf_counter() - t0)

    full_counter = MacCounter()
    x = att.project(f_v, full_counter)
    full_cross_attention(x, fusion(row), full_counter)
    best_full = float("inf")
    if time_full:
        for _ in range(repeats):
            t0 = time.perf_counter()
            x = att.project(f_v)
            full_cross_attention(x, fusion(row))
            best_full = min(best_full, time.perf_counter() - t0)

    return agent_counter.macs, full_counter.macs, best_agent, best_full


def fit_exponent(ns: np.ndarray, costs: np.ndarray) -> float:
    """Least-squares slope of log cost against log N."""
    slope, _ = np.polyfit(np.log(np.asarray(ns, dtype=float)),
                          np.log(np.asarray(costs, dtype=float)), 1)
    return float(slope)


def scaling_sweep(n_grid=DEFAULT_N_GRID, fixed_ratio: float = 0.005,
                  d_model: int = 64, time_full: bool = True) -> dict:
    """MAC scaling with the agent count frozen at ratio * max(N)."""
    n_grid = tuple(n_grid)
    n_agents = agent_count(fixed_ratio, max(n_grid))
    rows = []
    for n in n_grid:
        am, fm, at, ft = measure_pair(n, n_agents, d_model, time_full=time_full)
        rows.append({"n_tokens": n, "n_agents": n_agents, "agent_macs": am,
                     "full_macs": fm, "agent_seconds": at, "full_seconds": ft})
    ns = np.array([r["n_tokens"] for r in rows])
    return {
        "rows": rows,
        "agent_exponent": fit_exponent(ns, np.array([r["agent_macs"] for r in rows])),
        "full_exponent": fit_exponent(ns, np.array([r["full_macs"] for r in rows])),
        "fixed_agents": n_agents,
    }


def ratio_sweep(n_tokens: int = 4096, ratios=TABLE_RATIOS, d_model: int = 64,
                repeats: int = 5) -> list[BenchRow]:
    """Table of agent-token ratios at a fixed spatial length."""
    out = []
    for ratio in ratios:
        n_agents = agent_count(ratio, n_tokens)
        am, fm, at, ft = measure_pair(n_tokens, n_agents, d_model,
                                      repeats=repeats, time_full=(ratio == ratios[0]))
        out.append(BenchRow(n_tokens=n_tokens, ratio=ratio, n_agents=n_agents,
                            agent_macs=am, full_macs=fm, agent_seconds=at,
                            full_seconds=ft))
    return out


def bench_attention(n_grid=DEFAULT_N_GRID, ratios=TABLE_RATIOS, d_model: int = 64,
                    speedup_n: int = 4096, speedup_ratio: float = 0.005) -> dict:
    """Full harness: per-(N, ratio) table plus scaling fits and the speedup probe."""
    if not n_grid or not ratios:
        raise ValueError("bench_attention: N grid and ratio list must be nonempty")
    table = []
    for n in n_grid:
        for ratio in ratios:
            n_agents = agent_count(ratio, n)
            am, fm, at, ft = measure_pair(n, n_agents, d_model, time_full=False)
            table.append(BenchRow(n_tokens=n, ratio=ratio, n_agents=n_agents,
                                  agent_macs=am, full_macs=fm,
                                  agent_seconds=at, full_seconds=ft))
    scaling = scaling_sweep(n_grid, d_model=d_model, time_full=False)
    am, fm, at, ft = measure_pair(speedup_n, agent_count(speedup_ratio, speedup_n),
                                  d_model, repeats=3, time_full=True)
    return {
        "table": table,
        "scaling": scaling,
        "speedup": {"n_tokens": speedup_n, "ratio": speedup_ratio,
                    "agent_seconds": at, "full_seconds": ft,
                    "factor": ft / at if at > 0 else float("inf")},
    }
