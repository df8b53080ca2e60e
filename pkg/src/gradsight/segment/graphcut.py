"""s-t flow graphs for seeded colour GraphCut and an exact max-flow solver."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from gradsight.segment.gmm import GmmModel
from gradsight.segment.trimap import Trimap

UNARY_CLAMP = 50.0

# half of the 8-neighbourhood; the other half is covered by reverse arcs
OFFSETS_4 = ((0, 1), (1, 0))
OFFSETS_8 = ((0, 1), (1, 0), (1, 1), (1, -1))


@dataclass
class FlowGraph:
    """Non-terminal nodes ``0..n-1`` with terminal links and pairwise edges.

    ``source_cap[v]`` is the capacity of s->v and ``sink_cap[v]`` of v->t.
    Edge ``e`` joins ``edges[e] = (u, v)`` with capacity ``edge_cap[e]`` for
    u->v and ``edge_rev_cap[e]`` for v->u.
    """

    n: int
    source_cap: np.ndarray
    sink_cap: np.ndarray
    edges: np.ndarray  # (m, 2) int
    edge_cap: np.ndarray
    edge_rev_cap: np.ndarray
    shape: tuple | None = None
    # energy terms kept for reporting; capacities are a reparametrisation of them
    unary_fg: np.ndarray | None = None
    unary_bg: np.ndarray | None = None
    hard_cap: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        self.source_cap = np.asarray(self.source_cap, dtype=np.float64)
        self.sink_cap = np.asarray(self.sink_cap, dtype=np.float64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.edge_cap = np.asarray(self.edge_cap, dtype=np.float64)
        self.edge_rev_cap = np.asarray(self.edge_rev_cap, dtype=np.float64)
        for name in ("source_cap", "sink_cap", "edge_cap", "edge_rev_cap"):
            a = getattr(self, name)
            if not np.all(np.isfinite(a)) or np.any(a < 0):
                raise ValueError(f"{name} must be finite and non-negative")
        if self.source_cap.shape != (self.n,) or self.sink_cap.shape != (self.n,):
            raise ValueError("terminal capacity arrays must have one entry per node")
        if self.edge_cap.shape != (len(self.edges),) or self.edge_rev_cap.shape != (len(self.edges),):
            raise ValueError("edge capacity arrays must have one entry per edge")
        if len(self.edges) and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise ValueError("edge endpoint out of range")


def cut_capacity(g: FlowGraph, source_side: np.ndarray) -> float:
    """Capacity of the s-t cut whose source side is ``{s} U {v : source_side[v]}``."""
    s = np.asarray(source_side, dtype=bool).ravel()
    total = g.sink_cap[s].sum() + g.source_cap[~s].sum()
    if len(g.edges):
        u, v = g.edges[:, 0], g.edges[:, 1]
        total += g.edge_cap[s[u] & ~s[v]].sum() + g.edge_rev_cap[~s[u] & s[v]].sum()
    return float(total)


def max_flow(g: FlowGraph):
    """Exact maximum s-t flow by Dinic's algorithm.

    Returns ``(flow_value, source_side)`` where ``source_side`` marks nodes
    reachable from s in the final residual graph, i.e. the source side of a
    minimum cut (foreground in a segmentation graph).
    """
    n = g.n
    s, t = n, n + 1
    # direct s->v->t paths are saturated up front
    direct = np.minimum(g.source_cap, g.sink_cap)
    flow = float(direct.sum())
    src_res = g.source_cap - direct
    snk_res = g.sink_cap - direct

    to: list[int] = []
    cap: list[float] = []
    adj: list[list[int]] = [[] for _ in range(n + 2)]

    def add(u, v, c_uv, c_vu):
        adj[u].append(len(to))
        to.append(v)
        cap.append(c_uv)
        adj[v].append(len(to))
        to.append(u)
        cap.append(c_vu)

    for v in np.flatnonzero(src_res > 0):
        add(s, int(v), float(src_res[v]), 0.0)
    for v in np.flatnonzero(snk_res > 0):
        add(int(v), t, float(snk_res[v]), 0.0)
    for (u, v), c1, c2 in zip(g.edges.tolist(), g.edge_cap.tolist(), g.edge_rev_cap.tolist()):
        if c1 > 0 or c2 > 0:
            add(u, v, c1, c2)

    def levels():
        level = [-1] * (n + 2)
        level[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for a in adj[u]:
                v = to[a]
                if level[v] < 0 and cap[a] > 0:
                    level[v] = level[u] + 1
                    queue.append(v)
        return level

    while True:
        level = levels()
        if level[t] < 0:
            break
        ptr = [0] * (n + 2)
        path: list[int] = []
        u = s
        while True:
            if u == t:
                f = min(cap[a] for a in path)
                for a in path:
                    cap[a] -= f
                    cap[a ^ 1] += f
                flow += f
                k = next(i for i, a in enumerate(path) if cap[a] <= 0)
                del path[k:]
                u = to[path[-1]] if path else s
                continue
            arcs = adj[u]
            while ptr[u] < len(arcs):
                a = arcs[ptr[u]]
                if cap[a] > 0 and level[to[a]] == level[u] + 1:
                    break
                ptr[u] += 1
            if ptr[u] < len(arcs):
                a = arcs[ptr[u]]
                path.append(a)
                u = to[a]
                continue
            # dead end: prune u from this phase and retreat
            level[u] = -1
            if not path:
                break
            a = path.pop()
            u = to[a ^ 1]
            ptr[u] += 1

    seen = [False] * (n + 2)
    seen[s] = True
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for a in adj[u]:
            v = to[a]
            if not seen[v] and cap[a] > 0:
                seen[v] = True
                queue.append(v)
    return flow, np.array(seen[:n], dtype=bool)


def neighbour_pairs(h: int, w: int, connectivity: int = 8):
    """Index pairs ``(p, q)`` and their distances for the chosen lattice."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    idx = np.arange(h * w).reshape(h, w)
    ps, qs, dist = [], [], []
    for dr, dc in OFFSETS_4 if connectivity == 4 else OFFSETS_8:
        r0, r1 = 0, h - dr
        c0, c1 = max(0, -dc), w - max(0, dc)
        p = idx[r0:r1, c0:c1]
        q = idx[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        ps.append(p.ravel())
        qs.append(q.ravel())
        dist.append(np.full(p.size, np.hypot(dr, dc)))
    return np.concatenate(ps), np.concatenate(qs), np.concatenate(dist)


def contrast_beta(pixels: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    """``1 / (2 * mean ||z_p - z_q||^2)`` over neighbour pairs; 0 for a flat image."""
    if len(p) == 0:
        return 0.0
    d2 = ((pixels[p] - pixels[q]) ** 2).sum(axis=1)
    mean = d2.mean()
    return 0.0 if mean <= 0 else float(1.0 / (2.0 * mean))


def build_graph(
    image: np.ndarray,
    trimap: Trimap,
    fg: GmmModel,
    bg: GmmModel,
    gamma: float = 50.0,
    connectivity: int = 8,
    unary_clamp: float = UNARY_CLAMP,
) -> FlowGraph:
    """Seeded GraphCut graph for a ``(c, h, w)`` image with colours in [0, 1].

    Unary costs are GMM negative log-likelihoods clamped to ``unary_clamp``;
    per pixel both are shifted by their minimum so capacities stay
    non-negative without changing the optimal labelling.  Neighbours are
    linked with ``gamma * exp(-beta ||z_p - z_q||^2) / dist``.  Seed pixels get
    a hard t-link larger than every other capacity combined.
    """
    c, h, w = image.shape
    if trimap.labels.shape != (h, w):
        raise ValueError(f"trimap shape {trimap.labels.shape} does not match image {(h, w)}")
    z = image.reshape(c, -1).T.astype(np.float64)
    cost_fg = np.clip(-fg.log_pdf(z), -unary_clamp, unary_clamp)  # paid when labelled fg
    cost_bg = np.clip(-bg.log_pdf(z), -unary_clamp, unary_clamp)
    shift = np.minimum(cost_fg, cost_bg)
    source_cap = cost_bg - shift
    sink_cap = cost_fg - shift

    p, q, dist = neighbour_pairs(h, w, connectivity)
    beta = contrast_beta(z, p, q)
    d2 = ((z[p] - z[q]) ** 2).sum(axis=1)
    pair = gamma * np.exp(-beta * d2) / dist

    fg_seed = trimap.fg.ravel()
    bg_seed = trimap.bg.ravel()
    free = ~(fg_seed | bg_seed)
    hard = 1.0 + source_cap[free].sum() + sink_cap[free].sum() + 2.0 * pair.sum()
    source_cap = np.where(fg_seed, hard, np.where(bg_seed, 0.0, source_cap))
    sink_cap = np.where(bg_seed, hard, np.where(fg_seed, 0.0, sink_cap))
    return FlowGraph(
        h * w,
        source_cap,
        sink_cap,
        np.stack([p, q], axis=1),
        pair,
        pair.copy(),
        shape=(h, w),
        unary_fg=cost_fg,
        unary_bg=cost_bg,
        hard_cap=float(hard),
        beta=beta,
    )
