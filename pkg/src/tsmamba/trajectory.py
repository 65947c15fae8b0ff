"""Token fields, trajectories, block-matching flow, and top-s token selection.

Trajectory coordinates follow a 1-based feature-pixel convention:
x is the row coordinate in [1, H], y the column coordinate in [1, W].  A
trajectory's endpoint is anchored at its token's center in the current frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ModelConfig, Tensor, conv2d, residual_block

__all__ = [
    "TokenField",
    "TrajectorySet",
    "SelectionResult",
    "generate_tokens",
    "token_centers",
    "propagate_trajectories",
    "block_matching_flow",
    "select_tokens",
    "GWeights",
]


@dataclass
class TokenField:
    """Tokens for one frame: grid (ht, wt), tokens Tensor[N, C]."""

    frame_index: int
    ht: int
    wt: int
    tokens: Tensor

    @property
    def n(self):
        return self.ht * self.wt


@dataclass
class TrajectorySet:
    """coords[m] is the [N, 2] (x=row, y=col) array for frame t-m.

    m = 0 is the current frame (endpoint); m grows into the past.  The
    history is truncated to the temporal window length.
    """

    frame_index: int
    height: int
    width: int
    coords: list     # list of np.ndarray [N, 2], float64, 1-based

    @property
    def n(self):
        return self.coords[0].shape[0]

    def depth(self):
        return len(self.coords)


@dataclass
class SelectionResult:
    """Per-token selected temporal offsets, scores, and gathered tokens.

    indices[i, j] is the j-th chosen frame offset h_j in [1, T-1] (1 = the
    most recent previous frame); scores sorted non-increasing per token.
    """

    indices: np.ndarray       # [N, s] int
    scores: np.ndarray        # [N, s] float
    selected: Tensor          # [N, s, C], ascending frame index (old -> new)


@dataclass
class GWeights:
    """Weights for G(.): lead conv, N1 residual blocks, patch projection."""

    conv_w: np.ndarray
    conv_b: np.ndarray
    res: list                 # list of (w1, b1, w2, b2)
    proj_w: np.ndarray        # [C_token, token_size^2 * C_feat]
    proj_b: np.ndarray

    @classmethod
    def random(cls, config, rng, c_in=3):
        c = config.channels
        t = config.token_size
        std = 0.05
        res = []
        for _ in range(config.n1_res_blocks):
            res.append((rng.normal(0, std, (c, c, 3, 3)), np.zeros(c),
                        rng.normal(0, std, (c, c, 3, 3)), np.zeros(c)))
        return cls(
            conv_w=rng.normal(0, std, (c, c_in, 3, 3)),
            conv_b=np.zeros(c),
            res=res,
            proj_w=rng.normal(0, std, (c, t * t * c)),
            proj_b=np.zeros(c),
        )


def token_centers(ht, wt, token_size):
    """[N, 2] 1-based feature-pixel centers of the token grid, row-major."""
    centers = np.zeros((ht * wt, 2), dtype=np.float64)
    half = (token_size + 1) / 2.0
    i = 0
    for r in range(ht):
        for c in range(wt):
            centers[i, 0] = r * token_size + half
            centers[i, 1] = c * token_size + half
            i += 1
    return centers


def generate_tokens(frame, config, weights):
    """G(.): conv + N1 residual blocks, then patchify + linear projection.

    Returns (feature Tensor[C,H,W], TokenField).  Patches are flattened
    channel-major before projection.
    """
    x = frame if isinstance(frame, Tensor) else Tensor(frame)
    _, h, w = x.dims
    t = config.token_size
    if h % t or w % t:
        raise ValueError(f"frame dims {h}x{w} not divisible by token_size {t}")
    feat = conv2d(x, weights.conv_w, weights.conv_b, padding=1)
    for (w1, b1, w2, b2) in weights.res:
        feat = residual_block(feat, w1, b1, w2, b2)
    c = feat.dims[0]
    ht, wt = h // t, w // t
    f = feat.data
    patches = (
        f.reshape(c, ht, t, wt, t)
        .transpose(1, 3, 0, 2, 4)       # [ht, wt, c, t, t]: channel-major flatten
        .reshape(ht * wt, c * t * t)
    )
    tokens = patches @ weights.proj_w.astype(np.float32).T + weights.proj_b.astype(np.float32)
    field = TokenField(frame_index=0, ht=ht, wt=wt, tokens=Tensor(tokens))
    return feat, field


def initial_trajectories(config, ht, wt, height, width, frame_index=0):
    """Cold start: history frames are treated as copies of the first frame."""
    centers = token_centers(ht, wt, config.token_size)
    depth = config.temporal_window + 1
    return TrajectorySet(
        frame_index=frame_index,
        height=height,
        width=width,
        coords=[centers.copy() for _ in range(depth)],
    )


def _bilinear_sample(grid, x, y):
    """Sample [H, W, 2] coordinate grid at 1-based (x, y) with clamping."""
    h, w, _ = grid.shape
    xf = min(max(x - 1.0, 0.0), h - 1.0)
    yf = min(max(y - 1.0, 0.0), w - 1.0)
    x0, y0 = int(np.floor(xf)), int(np.floor(yf))
    x1, y1 = min(x0 + 1, h - 1), min(y0 + 1, w - 1)
    ax, ay = xf - x0, yf - y0
    v = ((1 - ax) * (1 - ay) * grid[x0, y0] + (1 - ax) * ay * grid[x0, y1]
         + ax * (1 - ay) * grid[x1, y0] + ax * ay * grid[x1, y1])
    return v


def propagate_trajectories(prev, flow, config):
    """Advance trajectories one frame using flow from frame t to t-1.

    flow[0] is the row displacement dx, flow[1] the column displacement dy:
    content at (x, y) in frame t came from (x + dx, y + dy) in frame t-1.
    For each token center, its frame-(t-1) position is looked up; history
    coordinates are bilinearly carried over from the previous trajectory
    field and clamped to bounds.
    """
    f = flow.data if isinstance(flow, Tensor) else np.asarray(flow, dtype=np.float32)
    if f.shape[0] != 2 or f.shape[1] != prev.height or f.shape[2] != prev.width:
        raise ValueError(f"flow dims {f.shape} do not match {prev.height}x{prev.width}")
    h, w = prev.height, prev.width
    t = config.token_size
    ht, wt = h // t, w // t
    centers = token_centers(ht, wt, t)
    n = centers.shape[0]

    # Dense coordinate grids of the previous trajectory set, for bilinear
    # sampling: prev coords are defined per token; expand to pixel grids.
    depth = min(prev.depth(), config.temporal_window)  # history to carry
    prev_grids = []
    for m in range(depth):
        grid = np.zeros((h, w, 2), dtype=np.float64)
        per_token = prev.coords[m].reshape(ht, wt, 2)
        for r in range(h):
            for c in range(w):
                grid[r, c] = per_token[min(r // t, ht - 1), min(c // t, wt - 1)]
        prev_grids.append(grid)

    coords = [centers.copy()]
    for m in range(depth):
        layer = np.zeros((n, 2), dtype=np.float64)
        for i in range(n):
            x, y = centers[i]
            dx = float(_bilinear_sample(np.dstack([f[0], f[0]]), x, y)[0])
            dy = float(_bilinear_sample(np.dstack([f[1], f[1]]), x, y)[0])
            px, py = x + dx, y + dy       # position in frame t-1
            sampled = _bilinear_sample(prev_grids[m], px, py)
            layer[i, 0] = min(max(sampled[0], 1.0), h)
            layer[i, 1] = min(max(sampled[1], 1.0), w)
        coords.append(layer)
    coords = coords[: config.temporal_window + 1]
    return TrajectorySet(frame_index=prev.frame_index + 1, height=h, width=w,
                         coords=coords)


def block_matching_flow(a, b, radius, patch=8):
    """Per-pixel SAD block matching from a to b over (2r+1)^2 displacements.

    Ties break by smaller displacement magnitude, then lexicographic (dy, dx)
    where dy is the row offset.  radius 0 returns zero flow.
    """
    xa = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float32)
    xb = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float32)
    if xa.shape != xb.shape:
        raise ValueError("block_matching_flow requires equal dims")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    c, h, w = xa.shape
    flow = np.zeros((2, h, w), dtype=np.float32)
    if radius == 0:
        return Tensor(flow)
    half = patch // 2
    pad = half + radius
    pa = np.pad(xa, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    pb = np.pad(xb, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    # candidate order: sorted by (magnitude, dy, dx) so argmin tie-breaks fall
    # out of a stable first-minimum scan
    cands = sorted(
        ((dy, dx) for dy in range(-radius, radius + 1)
         for dx in range(-radius, radius + 1)),
        key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]),
    )
    for r in range(h):
        for cc in range(w):
            r0, c0 = r + pad, cc + pad
            ref = pa[:, r0 - half:r0 + half, c0 - half:c0 + half]
            best = None
            best_d = (0, 0)
            for (dy, dx) in cands:
                cand = pb[:, r0 + dy - half:r0 + dy + half,
                          c0 + dx - half:c0 + dx + half]
                sad = float(np.abs(ref - cand).sum(dtype=np.float64))
                if best is None or sad < best - 1e-12:
                    best = sad
                    best_d = (dy, dx)
            flow[0, r, cc] = best_d[0]
            flow[1, r, cc] = best_d[1]
    return Tensor(flow)


def _nearest_token_index(x, y, ht, wt, token_size):
    """Map a 1-based feature-pixel coordinate to its nearest token index."""
    r = int(min(max(round((x - (token_size + 1) / 2.0) / token_size), 0), ht - 1))
    c = int(min(max(round((y - (token_size + 1) / 2.0) / token_size), 0), wt - 1))
    return r * wt + c


def select_tokens(q_field, v_fields, traj, s, token_size, squared_norms=False):
    """Top-s most similar previous-frame tokens along each trajectory (Eq. 7).

    v_fields[0] is the most recent previous frame (offset 1); scores are
    cosine similarities (or the squared-norm variant behind the switch).
    Ties break toward the more recent frame.  Returned selected tokens are
    ordered by ascending frame index (oldest first).
    """
    pool = len(v_fields)
    if s > pool:
        raise ValueError(f"s={s} exceeds candidate pool {pool}")
    q = q_field.tokens.data
    n, c = q.shape
    indices = np.zeros((n, s), dtype=np.int64)
    scores = np.zeros((n, s), dtype=np.float64)
    selected = np.zeros((n, s, c), dtype=np.float32)
    for i in range(n):
        qv = q[i].astype(np.float64)
        qn = np.linalg.norm(qv)
        cand = []
        for off in range(1, pool + 1):
            vf = v_fields[off - 1]
            coord = traj.coords[off][i] if off < traj.depth() else traj.coords[-1][i]
            j = _nearest_token_index(coord[0], coord[1], vf.ht, vf.wt, token_size)
            vv = vf.tokens.data[j].astype(np.float64)
            vn = np.linalg.norm(vv)
            if qn == 0.0 or vn == 0.0:
                score = 0.0
            elif squared_norms:
                score = float(qv @ vv) / (qn * qn * vn * vn)
            else:
                score = float(qv @ vv) / (qn * vn)
            cand.append((score, off, j, vv))
        # sort by score descending, recency (smaller offset) first on ties
        cand.sort(key=lambda t: (-t[0], t[1]))
        chosen = cand[:s]
        for j, (score, off, tok_idx, vv) in enumerate(chosen):
            indices[i, j] = off
            scores[i, j] = score
        # ascending frame index = descending offset (oldest first)
        for j, (score, off, tok_idx, vv) in enumerate(
                sorted(chosen, key=lambda t: -t[1])):
            selected[i, j] = vv.astype(np.float32)
    return SelectionResult(indices=indices, scores=scores, selected=Tensor(selected))
