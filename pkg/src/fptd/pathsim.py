"""Exact skeleton simulation and barrier detection.

A path is sampled exactly at its anchors: the jump times on [0, t] merged
with the requested grid times.  Between consecutive anchors the path is a
Brownian bridge, whose maximum law is known in closed form, so whether the
level was reached in between is a single Bernoulli draw.  Nothing is
discretised.

Draws are addressed through :mod:`fptd.rng`: for path ``i`` the k-th
inter-arrival gap is ``(GAP, k)``, the k-th jump size ``(JUMP, k)``, and the
Gaussian increment and crossing uniform of segment j are ``(INC, j)`` and
``(BRIDGE, j)``.  The per-path functions and the vectorised engine
:func:`simulate_hits` therefore see the same path for the same
``(seed, i)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_ndtr, ndtr
from scipy.stats import truncnorm

from . import rng as _rng
from .errors import DomainError
from .model import FiniteMixture, JumpDiffusionModel

__all__ = [
    "PathSkeleton",
    "HitRecord",
    "HitArrays",
    "simulate_skeleton",
    "bridge_crossing_prob",
    "detect_hit",
    "refine_tau",
    "simulate_hits",
    "chunk_size_for",
    "chunk_starts",
    "run_chunks",
]


@dataclass(frozen=True)
class PathSkeleton:
    """Exact values of one path at its anchors.

    ``before[k]`` and ``after[k]`` are X at ``times[k]`` before and after a
    possible jump; they differ only where ``is_jump[k]``.  ``times[0] == 0``.
    """

    horizon: float
    times: np.ndarray
    before: np.ndarray
    after: np.ndarray
    is_jump: np.ndarray
    seed: int
    stream: int

    @property
    def jump_count(self) -> int:
        return int(self.is_jump.sum())

    @property
    def last_jump_index(self) -> int:
        idx = np.flatnonzero(self.is_jump)
        return int(idx[-1]) if idx.size else 0

    @property
    def last_jump_time(self) -> float:
        return float(self.times[self.last_jump_index])

    @property
    def last_jump_value(self) -> float:
        return float(self.after[self.last_jump_index])

    @property
    def value_at_horizon(self) -> float:
        return float(self.after[-1])

    @property
    def jump_sizes(self) -> np.ndarray:
        return (self.after - self.before)[self.is_jump]


@dataclass(frozen=True)
class HitRecord:
    hit_before_t: bool
    hit_before_last_jump: bool
    x_t: float
    t_last_jump: float
    x_last_jump: float
    tau_sample: Optional[float] = None
    # anchor index closing the segment (or jump) where the level was reached
    hit_anchor: Optional[int] = None
    hit_by_jump: bool = False


def _check_grid(t, grid):
    if not t > 0:
        raise DomainError("horizon t must be > 0")
    g = np.asarray(sorted(set(float(s) for s in grid)), dtype=float)
    if g.size and (g[0] <= 0 or g[-1] > t):
        raise DomainError("grid times must lie in (0, t]")
    return g


def simulate_skeleton(model: JumpDiffusionModel, t: float, grid, rng: _rng.RandomStream) -> PathSkeleton:
    """Sample the path at jump times and ``grid`` (plus ``t``) exactly."""
    g = _check_grid(t, grid)
    a = model.a
    jump_times = []
    if a > 0:
        s = 0.0
        k = 0
        while True:
            s += float(-np.log(rng.uniform(_rng.GAP, k)) / a)
            if s > t:
                break
            jump_times.append(s)
            k += 1
    jump_times = np.asarray(jump_times)
    anchors = np.union1d(np.union1d(g, [t]), jump_times)
    times = np.concatenate([[0.0], anchors])
    is_jump = np.isin(times, jump_times)
    is_jump[0] = False

    n_seg = times.size - 1
    seg = np.arange(n_seg)
    d = np.diff(times)
    incr = model.m * d + np.sqrt(d) * rng.normal(_rng.INC, seg)
    nj = jump_times.size
    if nj:
        u = rng.uniform(_rng.JUMP, np.arange(nj))
        v = rng.uniform(_rng.JUMP_AUX, np.arange(nj)) if isinstance(model.jumps, FiniteMixture) else None
        ys = np.asarray(model.jumps.from_uniforms(u, v), dtype=float)
    before = np.zeros(times.size)
    after = np.zeros(times.size)
    jk = 0
    for j in range(1, times.size):
        before[j] = after[j - 1] + incr[j - 1]
        if is_jump[j]:
            after[j] = before[j] + ys[jk]
            jk += 1
        else:
            after[j] = before[j]
    return PathSkeleton(float(t), times, before, after, is_jump, rng.seed, rng.stream)


def bridge_crossing_prob(x, v0, v1, delta):
    """P(max of a Brownian bridge from v0 to v1 over time delta >= x).

    exp(-2 (x - v0)(x - v1) / delta) when both ends are below x, else 1.
    The drift of the unconditioned motion drops out given both endpoints.
    """
    d = np.asarray(delta, dtype=float)
    if np.any(d <= 0):
        raise DomainError("delta must be > 0")
    return _bridge_prob(x, v0, v1, d)


def _bridge_prob(x, v0, v1, d):
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    above = (v0 >= x) | (v1 >= x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        p = np.exp(-2.0 * (x - v0) * (x - v1) / d)
    p = np.where(above, 1.0, np.where(d > 0, p, 0.0))
    return float(p) if p.ndim == 0 else p


def _scan(skel: PathSkeleton, x: float, rng: _rng.RandomStream):
    """Index of the anchor closing the first crossing, and whether by jump."""
    d = np.diff(skel.times)
    p = _bridge_prob(x, skel.after[:-1], skel.before[1:], d)
    u = rng.uniform(_rng.BRIDGE, np.arange(d.size))
    crossed = (skel.before[1:] >= x) | (u < p)
    by_jump = skel.is_jump[1:] & (skel.after[1:] >= x)
    for j in range(d.size):
        if crossed[j]:
            return j + 1, False
        if by_jump[j]:
            return j + 1, True
    return None, False


def detect_hit(skel: PathSkeleton, x: float, rng: _rng.RandomStream) -> HitRecord:
    """Hitting indicators of level ``x`` by the horizon and by the last jump."""
    if not x > 0:
        raise DomainError("level x must be > 0")
    anchor, by_jump = _scan(skel, x, rng)
    last = skel.last_jump_index
    hit_t = anchor is not None
    return HitRecord(
        hit_before_t=hit_t,
        hit_before_last_jump=hit_t and anchor <= last,
        x_t=skel.value_at_horizon,
        t_last_jump=skel.last_jump_time,
        x_last_jump=skel.last_jump_value,
        hit_anchor=anchor,
        hit_by_jump=by_jump,
    )


def refine_tau(skel: PathSkeleton, x: float, segment: int, rng: _rng.RandomStream, tol: float) -> float:
    """Localise the first crossing inside segment ``segment`` to within ``tol``.

    ``segment`` is the anchor index closing the crossing segment (``hit_anchor``
    of :func:`detect_hit`).  The bridge midpoint is drawn conditionally on
    the segment crossing, then the half holding the first crossing is
    chosen with its exact conditional probability; bisection stops once the
    interval is no longer than ``tol`` and its midpoint is returned.
    """
    if not tol > 0:
        raise DomainError("tol must be > 0")
    j = int(segment)
    if not 1 <= j < skel.times.size:
        raise DomainError("segment index out of range")
    anchor, by_jump = _scan(skel, x, rng)
    if anchor != j or by_jump:
        raise DomainError("segment was not flagged as a continuous crossing")
    out = _refine_batch(
        rng.seed,
        np.array([rng.stream]),
        np.array([skel.times[j - 1]]),
        np.array([skel.times[j]]),
        np.array([skel.after[j - 1]]),
        np.array([skel.before[j]]),
        x,
        tol,
    )
    return float(out[0])


def _refine_batch(seed, streams, s0, s1, v0, v1, x, tol):
    s0 = s0.astype(float).copy()
    s1 = s1.astype(float).copy()
    v0 = v0.astype(float).copy()
    v1 = v1.astype(float).copy()
    counter = np.zeros(streams.size, dtype=np.int64)
    active = np.flatnonzero(s1 - s0 > tol)
    while active.size:
        st = streams[active]
        a0, a1, w0, w1 = s0[active], s1[active], v0[active], v1[active]
        h = 0.5 * (a1 - a0)
        mid_mean = 0.5 * (w0 + w1)
        sd = np.sqrt(0.5 * h)
        vmid = np.empty(active.size)
        pending = np.arange(active.size)
        c = counter[active]
        while pending.size:
            idx = pending
            cc = c[idx]
            u_comp = _rng.uniforms(seed, st[idx], _rng.REFINE, 4 * cc)
            u_val = _rng.uniforms(seed, st[idx], _rng.REFINE, 4 * cc + 1)
            u_acc = _rng.uniforms(seed, st[idx], _rng.REFINE, 4 * cc + 2)
            v, ok = _conditional_midpoint(x, w0[idx], w1[idx], h[idx], mid_mean[idx], sd[idx], u_comp, u_val, u_acc)
            vmid[idx[ok]] = v[ok]
            c[idx[~ok]] += 1
            pending = idx[~ok]
        # first crossing in the left half?
        u_half = _rng.uniforms(seed, st, _rng.REFINE, 4 * c + 3)
        counter[active] = c + 1
        below = vmid < x
        with np.errstate(over="ignore"):
            p_l = np.where(below, np.exp(-2.0 * (x - w0) * (x - vmid) / h), 1.0)
            p_r = np.where(below & (w1 < x), np.exp(-2.0 * (x - vmid) * (x - w1) / h), 1.0)
        q = p_l + p_r - p_l * p_r
        left = (~below) | (u_half * q < p_l)
        s1[active] = np.where(left, a0 + h, a1)
        s0[active] = np.where(left, a0, a0 + h)
        v1[active] = np.where(left, vmid, w1)
        v0[active] = np.where(left, w0, vmid)
        active = active[(s1[active] - s0[active]) > tol]
    return 0.5 * (s0 + s1)


def _conditional_midpoint(x, w0, w1, h, mean, sd, u_comp, u_val, u_acc):
    """One rejection step for the bridge midpoint given that the bridge crosses x.

    Target density is phi(v) q(v) with q the probability that either half
    crosses.  The envelope phi(v) (1{v>=x} + (p_L + p_R) 1{v<x}) is a
    mixture of three truncated Gaussians because each p is exp-linear in v.
    """
    n = w0.size
    b_l = 2.0 * (x - w0) / h
    certain = w1 >= x
    b_r = np.where(certain, 0.0, 2.0 * (x - w1) / h)
    var = sd * sd
    log_w0 = log_ndtr((mean - x) / sd)
    log_wl = b_l * (mean - x) + 0.5 * b_l**2 * var + log_ndtr((x - mean - b_l * var) / sd)
    log_wr = b_r * (mean - x) + 0.5 * b_r**2 * var + log_ndtr((x - mean - b_r * var) / sd)
    # q == 1 everywhere when the right end is above the level: plain midpoint
    log_wl = np.where(certain, -np.inf, log_wl)
    log_wr = np.where(certain, log_ndtr((x - mean) / sd), log_wr)
    b_r = np.where(certain, 0.0, b_r)
    logs = np.stack([log_w0, log_wl, log_wr])
    top = logs.max(axis=0)
    w = np.exp(logs - top)
    cum = np.cumsum(w, axis=0) / w.sum(axis=0)
    comp = (u_comp > cum[0]).astype(int) + (u_comp > cum[1]).astype(int)
    shift = np.where(comp == 1, b_l, np.where(comp == 2, b_r, 0.0)) * var
    loc = mean + shift
    z_bound = (x - loc) / sd
    v = np.empty(n)
    upper = comp == 0
    if np.any(upper):
        v[upper] = loc[upper] + sd[upper] * truncnorm.ppf(u_val[upper], z_bound[upper], np.inf)
    lower = ~upper
    if np.any(lower):
        v[lower] = loc[lower] + sd[lower] * truncnorm.ppf(u_val[lower], -np.inf, z_bound[lower])
        v[lower] = np.minimum(v[lower], x)
    with np.errstate(over="ignore"):
        p_l = np.exp(-2.0 * (x - w0) * (x - v) / h)
        p_r = np.where(certain, 1.0, np.exp(-2.0 * (x - v) * (x - w1) / h))
    ratio = np.where(upper | certain, 1.0, (p_l + p_r - p_l * p_r) / (p_l + p_r))
    return v, u_acc < ratio


@dataclass
class HitArrays:
    """Per-path, per-grid-time quantities from the vectorised engine.

    Rows are paths, columns grid times.  ``t_last``/``x_last`` are T_{N_t}
    and X at that time (0, 0 without jumps).  With ``track_states=False``
    only ``hit_t`` is filled.
    """

    hit_t: np.ndarray
    hit_last: np.ndarray
    x_t: np.ndarray
    t_last: np.ndarray
    x_last: np.ndarray


def simulate_hits(model: JumpDiffusionModel, x: float, grid, seed: int, paths, track_states=True) -> HitArrays:
    """Vectorised skeleton simulation and crossing detection.

    Each loop iteration advances every active path to its next anchor
    (jump or grid time), so memory is linear in the number of paths.
    Without ``track_states`` a path is retired as soon as it has hit.
    """
    grid = np.asarray(grid, dtype=float)
    ids = np.asarray(paths, dtype=np.int64)
    n, J = ids.size, grid.size
    m, a = model.m, model.a
    jumps = model.jumps
    mixture = isinstance(jumps, FiniteMixture)

    hit_t = np.zeros((n, J), dtype=bool)
    hit_last = np.zeros((n, J), dtype=bool)
    if track_states:
        x_t = np.zeros((n, J))
        t_last = np.zeros((n, J))
        x_last = np.zeros((n, J))
    else:
        x_t = t_last = x_last = np.zeros((0, J))

    cur_t = np.zeros(n)
    cur_v = np.zeros(n)
    seg = np.zeros(n, dtype=np.int64)
    k = np.zeros(n, dtype=np.int64)
    gptr = np.zeros(n, dtype=np.int64)
    last_T = np.zeros(n)
    last_X = np.zeros(n)
    hit = np.zeros(n, dtype=bool)
    hit_end = np.full(n, np.inf)
    if a > 0:
        next_jump = -np.log(_rng.uniforms(seed, ids, _rng.GAP, 0)) / a
    else:
        next_jump = np.full(n, np.inf)

    active = np.arange(n)
    while active.size:
        idx = active
        sid = ids[idx]
        g = grid[gptr[idx]]
        nj = next_jump[idx]
        is_jump = nj < g
        s_new = np.where(is_jump, nj, g)
        d = s_new - cur_t[idx]
        v_pre = cur_v[idx] + m * d + np.sqrt(d) * _rng.normals(seed, sid, _rng.INC, seg[idx])

        live = ~hit[idx]
        if np.any(live):
            li = idx[live]
            p = _bridge_prob(x, cur_v[li], v_pre[live], d[live])
            u = _rng.uniforms(seed, ids[li], _rng.BRIDGE, seg[li])
            crossed = (v_pre[live] >= x) | (u < p)
            ci = li[crossed]
            hit[ci] = True
            hit_end[ci] = s_new[live][crossed]

        v_new = v_pre.copy()
        if np.any(is_jump):
            ji = idx[is_jump]
            kk = k[ji]
            uj = _rng.uniforms(seed, ids[ji], _rng.JUMP, kk)
            vj = _rng.uniforms(seed, ids[ji], _rng.JUMP_AUX, kk) if mixture else None
            v_post = v_pre[is_jump] + jumps.from_uniforms(uj, vj)
            sj = s_new[is_jump]
            by_jump = (~hit[ji]) & (v_post >= x)
            hit[ji[by_jump]] = True
            hit_end[ji[by_jump]] = sj[by_jump]
            last_T[ji] = sj
            last_X[ji] = v_post
            k[ji] = kk + 1
            next_jump[ji] = sj - np.log(_rng.uniforms(seed, ids[ji], _rng.GAP, kk + 1)) / a
            v_new[is_jump] = v_post
        cur_v[idx] = v_new
        cur_t[idx] = s_new
        seg[idx] += 1

        gi = idx[~is_jump]
        if gi.size:
            col = gptr[gi]
            hit_t[gi, col] = hit[gi]
            hit_last[gi, col] = hit_end[gi] <= last_T[gi]
            if track_states:
                x_t[gi, col] = v_pre[~is_jump]
                t_last[gi, col] = last_T[gi]
                x_last[gi, col] = last_X[gi]
            gptr[gi] = col + 1

        done = gptr[idx] >= J
        if not track_states:
            retire = hit[idx] & ~done
            ri = idx[retire]
            if ri.size:
                hit_t[ri] |= np.arange(J)[None, :] >= gptr[ri][:, None]
            done |= hit[idx]
        active = idx[~done]

    return HitArrays(hit_t, hit_last, x_t, t_last, x_last)


def chunk_size_for(n_grid: int) -> int:
    """Paths per work unit.  Depends on the problem only, never on threads."""
    return int(max(1024, min(1 << 15, (1 << 21) // max(n_grid, 1))))


def chunk_starts(n_paths: int, chunk: int):
    return list(range(0, n_paths, chunk))


def run_chunks(fn, n_paths: int, chunk: int, threads: int = 1):
    """Apply ``fn(start, stop)`` to fixed chunks; results come back in chunk order."""
    starts = chunk_starts(n_paths, chunk)
    bounds = [(s, min(s + chunk, n_paths)) for s in starts]
    threads = max(1, int(threads))
    if threads == 1 or len(bounds) == 1:
        return [fn(s, e) for s, e in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
