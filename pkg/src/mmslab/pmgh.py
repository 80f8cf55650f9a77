"""A computable surrogate for pointed measured Gromov-Hausdorff distance.

The surrogate compares dyadic balls around the basepoints through a
correspondence: half the metric distortion plus a teleportation-style
transport discrepancy between the ball measures, summed over surviving
radii with weights 2^-k and capped at 1 per radius. Exhaustive mode
certifies the infimum on tiny balls; anneal mode returns an upper bound
together with its certificate correspondence.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import PointedSpace

__all__ = [
    "Correspondence",
    "PmghEstimate",
    "CoverageError",
    "PmghBudgetError",
    "distortion",
    "measure_gap",
    "pmgh_distance",
    "convergence_diagnostic",
]

DEFAULT_RADII = (1.0, 2.0, 4.0, 8.0)
EXACT_CAP = 900          # per-side ball size for the exact gap LP
TELEPORT_COST = 1.0
EXHAUSTIVE_POINT_LIMIT = 9


class CoverageError(ValueError):
    """Correspondence fails to cover the compared balls (or misses the base pair)."""


class PmghBudgetError(RuntimeError):
    """Exhaustive search exceeded its budget or size limit."""


@dataclass(frozen=True)
class Correspondence:
    """Relation between two spaces as an array of global index pairs."""

    pairs: np.ndarray  # (k, 2) ints: (index in A, index in B)

    def __post_init__(self) -> None:
        p = np.asarray(self.pairs, dtype=int).reshape(-1, 2).copy()
        p.setflags(write=False)
        object.__setattr__(self, "pairs", p)

    def swap(self) -> "Correspondence":
        return Correspondence(self.pairs[:, ::-1])


@dataclass(frozen=True)
class _Ball:
    idx: np.ndarray      # global indices
    D: np.ndarray        # restricted metric
    w: np.ndarray        # weights
    base: int            # local index of the basepoint


def _ball(ps: PointedSpace, R: float) -> _Ball:
    """Extract the open R-ball in canonical point order.

    Points are sorted by (distance to base, weight, sorted distance row),
    base first, so the downstream correspondence search is invariant under
    relabelings of the input space (up to genuine symmetry orbits).
    """
    d = ps.base_distances()
    idx = np.flatnonzero(d < R)
    D = ps.space.metric[np.ix_(idx, idx)]
    w = ps.space.weights[idx]
    base = int(np.searchsorted(idx, ps.base))
    rows_sorted = np.sort(D, axis=1)
    profile = np.unique(rows_sorted.round(12), axis=0, return_inverse=True)[1]
    order = np.lexsort((profile, w.round(12), D[base].round(12)))
    order = np.concatenate(([base], order[order != base]))
    return _Ball(idx=idx[order], D=D[np.ix_(order, order)], w=w[order], base=0)


def _local_pairs(ball_a: _Ball, ball_b: _Ball, corr: Correspondence) -> np.ndarray:
    """Map global pairs to ball-local ones, checking coverage and the base pair."""
    pos_a = {int(g): k for k, g in enumerate(ball_a.idx)}
    pos_b = {int(g): k for k, g in enumerate(ball_b.idx)}
    loc = []
    for ga, gb in corr.pairs:
        ka, kb = pos_a.get(int(ga)), pos_b.get(int(gb))
        if ka is not None and kb is not None:
            loc.append((ka, kb))
    if not loc:
        raise CoverageError("correspondence has no pair inside the balls")
    loc_arr = np.asarray(loc, dtype=int)
    if not np.isin(np.arange(len(ball_a.idx)), loc_arr[:, 0]).all():
        raise CoverageError("correspondence does not cover the first ball")
    if not np.isin(np.arange(len(ball_b.idx)), loc_arr[:, 1]).all():
        raise CoverageError("correspondence does not cover the second ball")
    if not ((loc_arr[:, 0] == ball_a.base) & (loc_arr[:, 1] == ball_b.base)).any():
        raise CoverageError("correspondence misses the basepoint pair")
    return loc_arr


def _distortion_local(DA: np.ndarray, DB: np.ndarray, loc: np.ndarray) -> float:
    xs, ys = loc[:, 0], loc[:, 1]
    m = len(xs)
    worst = 0.0
    step = max(1, 4_000_000 // max(m, 1))
    for k0 in range(0, m, step):
        k1 = min(m, k0 + step)
        block = np.abs(DA[np.ix_(xs[k0:k1], xs)] - DB[np.ix_(ys[k0:k1], ys)])
        worst = max(worst, float(block.max()))
    return 0.5 * worst


def distortion(A: PointedSpace, B: PointedSpace, corr: Correspondence, R: float) -> float:
    """Half the worst metric mismatch of the correspondence on the R-balls."""
    ball_a, ball_b = _ball(A, R), _ball(B, R)
    loc = _local_pairs(ball_a, ball_b, corr)
    return _distortion_local(ball_a.D, ball_b.D, loc)


def _glued_cost(DA: np.ndarray, DB: np.ndarray, loc: np.ndarray) -> np.ndarray:
    """min over corr pairs of d_A(i, x) + d_B(y, j), capped at the teleport cost."""
    na, nb = DA.shape[0], DB.shape[0]
    M = DA[:, loc[:, 0]]          # (na, k)
    N = DB[loc[:, 1], :]          # (k, nb)
    out = np.full((na, nb), np.inf)
    step = max(1, 4_000_000 // max(na * nb, 1))
    for p0 in range(0, loc.shape[0], step):
        p1 = min(loc.shape[0], p0 + step)
        cand = M[:, p0:p1, None] + N[p0:p1, :][None, :, :]
        np.minimum(out, cand.min(axis=1), out=out)
    return np.minimum(out, TELEPORT_COST)


def _gap_lp(DA, DB, wa, wb, loc) -> float:
    """Teleportation transport LP between ball measures through the relation.

    Mass moves at the glued cost (zero along corr pairs, capped at 1);
    creating or destroying mass costs 1 per unit. Zero exactly iff the
    relation transports one measure onto the other.
    """
    if loc.shape[0] == len(wa) == len(wb):
        # bijective relation with identical masses transports exactly
        if len(np.unique(loc[:, 0])) == len(wa) and len(np.unique(loc[:, 1])) == len(wb):
            if np.array_equal(wa[loc[:, 0]], wb[loc[:, 1]]):
                return 0.0
    cost = _glued_cost(DA, DB, loc)
    na, nb = cost.shape
    nn = na * nb
    rows_i = np.repeat(np.arange(na), nb)
    cols_i = np.tile(np.arange(nb), na)
    A1 = sparse.hstack([
        sparse.coo_matrix((np.ones(nn), (rows_i, np.arange(nn))), shape=(na, nn)),
        sparse.eye(na), sparse.coo_matrix((na, nb)),
    ])
    A2 = sparse.hstack([
        sparse.coo_matrix((np.ones(nn), (cols_i, np.arange(nn))), shape=(nb, nn)),
        sparse.coo_matrix((nb, na)), sparse.eye(nb),
    ])
    A = sparse.vstack([A1, A2]).tocsr()
    c = np.concatenate([cost.ravel(), np.full(na + nb, TELEPORT_COST)])
    res = linprog(c, A_eq=A, b_eq=np.concatenate([wa, wb]), bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"measure-gap LP failed: {res.message}")
    return float(res.fun)


def measure_gap(A: PointedSpace, B: PointedSpace, corr: Correspondence, R: float) -> float:
    """Transport-with-teleportation discrepancy of the ball measures through corr."""
    ball_a, ball_b = _ball(A, R), _ball(B, R)
    loc = _local_pairs(ball_a, ball_b, corr)
    return _gap_lp(ball_a.D, ball_b.D, ball_a.w, ball_b.w, loc)


def _aggregate(ball: _Ball, k: int) -> tuple[_Ball, np.ndarray, float]:
    """Farthest-point anchors with mass assignment; returns the movement slack."""
    n = len(ball.w)
    anchors = [ball.base]
    dist_to = ball.D[ball.base].copy()
    while len(anchors) < min(k, n):
        nxt = int(np.argmax(dist_to))
        if dist_to[nxt] <= 0:
            break
        anchors.append(nxt)
        np.minimum(dist_to, ball.D[nxt], out=dist_to)
    anchors_arr = np.array(sorted(set(anchors)), dtype=int)
    assign = np.argmin(ball.D[:, anchors_arr], axis=1)
    w_agg = np.zeros(len(anchors_arr))
    np.add.at(w_agg, assign, ball.w)
    move = float((ball.w * ball.D[np.arange(n), anchors_arr[assign]]).sum())
    agg = _Ball(idx=ball.idx[anchors_arr],
                D=ball.D[np.ix_(anchors_arr, anchors_arr)],
                w=w_agg,
                base=int(np.searchsorted(anchors_arr, ball.base)))
    return agg, anchors_arr, move


def _gap_upper(ball_a: _Ball, ball_b: _Ball, loc: np.ndarray) -> tuple[float, bool]:
    """Measure gap, exact below EXACT_CAP, else an aggregated upper bound."""
    na, nb = len(ball_a.w), len(ball_b.w)
    if na <= EXACT_CAP and nb <= EXACT_CAP:
        return _gap_lp(ball_a.D, ball_b.D, ball_a.w, ball_b.w, loc), False
    agg_a, anchors_a, move_a = _aggregate(ball_a, EXACT_CAP)
    agg_b, anchors_b, move_b = _aggregate(ball_b, EXACT_CAP)
    pos_a = {int(g): i for i, g in enumerate(anchors_a)}
    pos_b = {int(g): i for i, g in enumerate(anchors_b)}
    assign_a = np.argmin(ball_a.D[:, anchors_a], axis=1)
    assign_b = np.argmin(ball_b.D[:, anchors_b], axis=1)
    loc_agg = np.unique(np.stack([assign_a[loc[:, 0]], assign_b[loc[:, 1]]], axis=1), axis=0)
    gap = _gap_lp(agg_a.D, agg_b.D, agg_a.w, agg_b.w, loc_agg)
    return gap + move_a + move_b, True


# ---------------------------------------------------------------------------
# Correspondence search
# ---------------------------------------------------------------------------

def _features(D: np.ndarray, w: np.ndarray, base: int) -> np.ndarray:
    mass = max(float(w.sum()), 1e-300)
    mean_d = (D * w[None, :]).sum(axis=1) / mass
    rms_d = np.sqrt((D**2 * w[None, :]).sum(axis=1) / mass)
    return np.stack([D[base], mean_d, rms_d], axis=1)


def _mds_embedding(D: np.ndarray, dims: int = 3) -> np.ndarray:
    n = D.shape[0]
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D**2) @ J
    vals, vecs = np.linalg.eigh(B)
    order = np.argsort(vals)[::-1][:dims]
    vals, vecs = vals[order], vecs[:, order]
    keep = vals > max(float(vals.max()), 0.0) * 1e-9 if vals.size else np.zeros(0, bool)
    if not keep.any():
        return np.zeros((n, 1))
    return vecs[:, keep] * np.sqrt(vals[keep])[None, :]


class _CorrState:
    """Mapping-pair correspondence with an incrementally updated objective.

    The relation is graph(fa) union transpose(graph(gb)), stored as parallel
    pair arrays xs, ys of length na+nb (base pair pinned). The smooth
    objective is mean squared distortion over the pair list plus the
    pushforward TV mismatch; both admit O(na+nb) deltas per reassignment.
    """

    def __init__(self, DA, DB, wa, wb, fa, gb, base_a, base_b):
        self.DA, self.DB, self.wa, self.wb = DA, DB, wa, wb
        self.na, self.nb = len(wa), len(wb)
        fa = fa.copy()
        gb = gb.copy()
        fa[base_a] = base_b
        gb[base_b] = base_a
        self.base_a, self.base_b = base_a, base_b
        self.xs = np.concatenate([np.arange(self.na), gb])
        self.ys = np.concatenate([fa, np.arange(self.nb)])
        self.m = self.na + self.nb
        delta = self.DA[np.ix_(self.xs, self.xs)] - self.DB[np.ix_(self.ys, self.ys)]
        self.S = float((delta**2).sum())
        self.push_a = np.zeros(self.nb)
        np.add.at(self.push_a, self.ys[: self.na], self.wa)
        self.push_b = np.zeros(self.na)
        np.add.at(self.push_b, self.xs[self.na:], self.wb)

    def objective(self) -> float:
        tv = float(np.abs(self.push_a - self.wb).sum() + np.abs(self.push_b - self.wa).sum())
        return self.S / (self.m * self.m) + tv

    def _dS(self, k: int, x_new: int, y_new: int) -> float:
        old = self.DA[self.xs[k], self.xs] - self.DB[self.ys[k], self.ys]
        xs2 = self.xs.copy()
        ys2 = self.ys.copy()
        xs2[k], ys2[k] = x_new, y_new
        new = self.DA[x_new, xs2] - self.DB[y_new, ys2]
        return 2.0 * float((new**2).sum() - (old**2).sum())

    def delta_a(self, i: int, j_new: int) -> float:
        j_old = int(self.ys[i])
        dS = self._dS(i, i, j_new)
        wi = self.wa[i]
        tv_old = abs(self.push_a[j_old] - self.wb[j_old]) + abs(self.push_a[j_new] - self.wb[j_new])
        tv_new = (abs(self.push_a[j_old] - wi - self.wb[j_old])
                  + abs(self.push_a[j_new] + wi - self.wb[j_new]))
        if j_old == j_new:
            return 0.0
        return dS / (self.m * self.m) + (tv_new - tv_old)

    def apply_a(self, i: int, j_new: int):
        j_old = int(self.ys[i])
        self.push_a[j_old] -= self.wa[i]
        self.push_a[j_new] += self.wa[i]
        self.ys[i] = j_new

    def delta_b(self, j: int, i_new: int) -> float:
        k = self.na + j
        i_old = int(self.xs[k])
        if i_old == i_new:
            return 0.0
        dS = self._dS(k, i_new, j)
        wj = self.wb[j]
        tv_old = abs(self.push_b[i_old] - self.wa[i_old]) + abs(self.push_b[i_new] - self.wa[i_new])
        tv_new = (abs(self.push_b[i_old] - wj - self.wa[i_old])
                  + abs(self.push_b[i_new] + wj - self.wa[i_new]))
        return dS / (self.m * self.m) + (tv_new - tv_old)

    def apply_b(self, j: int, i_new: int):
        k = self.na + j
        i_old = int(self.xs[k])
        self.push_b[i_old] -= self.wb[j]
        self.push_b[i_new] += self.wb[j]
        self.xs[k] = i_new

    def pairs_local(self) -> np.ndarray:
        return np.unique(np.stack([self.xs, self.ys], axis=1), axis=0)

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        return self.ys[: self.na].copy(), self.xs[self.na:].copy()


def _init_candidates(DA, DB, wa, wb, base_a, base_b):
    """fa/gb proposals plus the MDS embeddings used to produce them.

    Candidates: identity, profile matching, and aligned MDS embeddings at
    every truncation depth with all axis permutations, sign flips and
    sampled rotations of the leading eigenplane — degenerate eigenspaces
    (circle harmonics, cone symmetry) leave rotations that sign/permutation
    alignment cannot reach.
    """
    from itertools import permutations, product as iproduct

    from scipy.spatial import cKDTree

    na, nb = len(wa), len(wb)
    cands = []
    if na == nb:
        cands.append((np.arange(na), np.arange(nb)))
    FA = _features(DA, wa, base_a)
    FB = _features(DB, wb, base_b)
    scale = np.maximum(np.abs(FA).max(axis=0), np.abs(FB).max(axis=0))
    scale[scale == 0] = 1.0
    fa = cKDTree(FB / scale).query(FA / scale)[1].astype(int)
    gb = cKDTree(FA / scale).query(FB / scale)[1].astype(int)
    cands.append((fa, gb))

    EA_full = _mds_embedding(DA)
    EB_full = _mds_embedding(DB)
    d = min(EA_full.shape[1], EB_full.shape[1])
    if d < 1:
        return cands, None, None
    if True:
        EA_full = EA_full[:, :d] - EA_full[base_a, :d]
        EB_full = EB_full[:, :d] - EB_full[base_b, :d]
        for used in range(1, d + 1):
            EA = EA_full[:, :used]
            EB = EB_full[:, :used]
            tree_b = cKDTree(EB)
            tree_a = cKDTree(EA)
            for perm in permutations(range(used)):
                for signs in iproduct(*([(1.0, -1.0)] * used)):
                    s = np.asarray(signs)[None, :]
                    fa = tree_b.query(EA[:, list(perm)] * s)[1].astype(int)
                    gb = tree_a.query(EB[:, list(perm)] * s)[1].astype(int)
                    cands.append((fa, gb))
        if d >= 2:
            # degenerate eigenplanes (rotational symmetry: circles, cones)
            # leave an arbitrary rotation between the two leading axes that
            # sign/permutation candidates cannot reach
            tree_b2 = cKDTree(EB_full[:, :2])
            tree_a2 = cKDTree(EA_full[:, :2])
            E2 = EA_full[:, :2]
            for k in range(12):
                ang = 2.0 * np.pi * k / 12.0
                R = np.array([[np.cos(ang), -np.sin(ang)],
                              [np.sin(ang), np.cos(ang)]])
                for refl in (1.0, -1.0):
                    T = E2 @ R.T * np.array([[1.0, refl]])
                    fa = tree_b2.query(T)[1].astype(int)
                    TB = (EB_full[:, :2] * np.array([[1.0, refl]])) @ R
                    gb = tree_a2.query(TB)[1].astype(int)
                    cands.append((fa, gb))
    return cands, EA_full, EB_full


def _icp_refine(EA, EB, fa, gb, rounds: int = 4):
    """Procrustes refinement: align the embeddings on the current matching,
    re-match by nearest neighbor, repeat. Fixes residual rotations that the
    sampled candidates leave behind."""
    from scipy.spatial import cKDTree

    d = min(EA.shape[1], EB.shape[1])
    EA = EA[:, :d]
    EB = EB[:, :d]
    tree_b = cKDTree(EB)
    tree_a = cKDTree(EA)
    for _ in range(rounds):
        C = EA.T @ EB[fa]
        U, _, Vt = np.linalg.svd(C)
        R = U @ Vt
        fa = tree_b.query(EA @ R)[1].astype(int)
        gb = tree_a.query(EB @ R.T)[1].astype(int)
    return fa, gb


def _anneal_radius(ball_a: _Ball, ball_b: _Ball, seed: int,
                   proposals: int = 10_000, restarts: int = 2) -> np.ndarray:
    """Best correspondence found for one radius (local pair list)."""
    DA, DB, wa, wb = ball_a.D, ball_b.D, ball_a.w, ball_b.w
    base_a, base_b = ball_a.base, ball_b.base
    na, nb = len(wa), len(wb)
    if na == 1 or nb == 1:
        xs = np.concatenate([np.arange(na), np.full(nb, base_a)])
        ys = np.concatenate([np.full(na, base_b), np.arange(nb)])
        return np.unique(np.stack([xs, ys], axis=1), axis=0)

    best_init = None
    best_obj = math.inf
    cands, EA, EB = _init_candidates(DA, DB, wa, wb, base_a, base_b)
    for fa, gb in cands:
        st = _CorrState(DA, DB, wa, wb, fa, gb, base_a, base_b)
        obj = st.objective()
        if obj < best_obj:
            best_obj, best_init = obj, st.snapshot()
    assert best_init is not None
    if EA is not None and EB is not None:
        fa, gb = _icp_refine(EA, EB, best_init[0], best_init[1])
        st = _CorrState(DA, DB, wa, wb, fa, gb, base_a, base_b)
        if st.objective() < best_obj:
            best_obj, best_init = st.objective(), st.snapshot()

    overall: list[tuple[float, np.ndarray]] = []
    for r in range(restarts):
        st = _CorrState(DA, DB, wa, wb, best_init[0], best_init[1], base_a, base_b)
        cur = st.objective()
        best_val = cur
        best_pairs = st.pairs_local()
        temp = max(cur, 1e-6) * (0.3 if r == 0 else 1.0)
        rng = np.random.default_rng(seed + 101 * r)
        side_a = rng.random(proposals) < na / (na + nb)
        picks = rng.integers(0, 1 << 30, size=(proposals, 2))
        accept_u = rng.random(proposals)
        for step in range(proposals):
            temp *= 0.99
            if side_a[step]:
                i = int(picks[step, 0] % na)
                if i == base_a:
                    continue
                j_new = int(picks[step, 1] % nb)
                d = st.delta_a(i, j_new)
                if d <= 0 or accept_u[step] < math.exp(-d / max(temp, 1e-300)):
                    st.apply_a(i, j_new)
                    cur += d
                else:
                    continue
            else:
                j = int(picks[step, 0] % nb)
                if j == base_b:
                    continue
                i_new = int(picks[step, 1] % na)
                d = st.delta_b(j, i_new)
                if d <= 0 or accept_u[step] < math.exp(-d / max(temp, 1e-300)):
                    st.apply_b(j, i_new)
                    cur += d
                else:
                    continue
            if cur < best_val - 1e-15:
                best_val = cur
                best_pairs = st.pairs_local()
        overall.append((best_val, best_pairs))
    overall.sort(key=lambda t: t[0])
    return overall[0][1]


def _free_flow(wa: np.ndarray, wb: np.ndarray, loc: np.ndarray) -> float:
    """Maximum mass transportable along the relation arcs alone.

    Exact max-flow (BFS augmenting paths) on source -> A -> B -> sink with
    node capacities wa, wb and uncapacitated relation arcs; sizes are tiny.
    """
    na, nb = len(wa), len(wb)
    n = na + nb + 2
    s, t = na + nb, na + nb + 1
    cap = {}

    def add(u, v, c):
        cap[(u, v)] = cap.get((u, v), 0.0) + c
        cap.setdefault((v, u), 0.0)

    for i in range(na):
        add(s, i, float(wa[i]))
    for j in range(nb):
        add(na + j, t, float(wb[j]))
    big = float(wa.sum() + wb.sum() + 1.0)
    for i, j in loc:
        add(int(i), na + int(j), big)
    adj: list[list[int]] = [[] for _ in range(n)]
    for (u, v) in cap:
        if v not in adj[u]:
            adj[u].append(v)
    flow = 0.0
    while True:
        parent = [-1] * n
        parent[s] = s
        queue = [s]
        while queue and parent[t] == -1:
            u = queue.pop(0)
            for v in adj[u]:
                if parent[v] == -1 and cap.get((u, v), 0.0) > 1e-15:
                    parent[v] = u
                    queue.append(v)
        if parent[t] == -1:
            break
        push = math.inf
        v = t
        while v != s:
            u = parent[v]
            push = min(push, cap[(u, v)])
            v = u
        v = t
        while v != s:
            u = parent[v]
            cap[(u, v)] -= push
            cap[(v, u)] += push
            v = u
        flow += push
    return flow


def _exhaustive_radius(ball_a: _Ball, ball_b: _Ball, budget: int,
                       upper_pairs: np.ndarray | None) -> tuple[float, np.ndarray, dict]:
    """Exact infimum of distortion + gap over all covering relations (tiny balls)."""
    na, nb = len(ball_a.w), len(ball_b.w)
    if na + nb > EXHAUSTIVE_POINT_LIMIT:
        raise PmghBudgetError(
            f"exhaustive mode limited to {EXHAUSTIVE_POINT_LIMIT} total ball points, got {na + nb}")
    pairs = [(i, j) for i in range(na) for j in range(nb)]
    base_pair = (ball_a.base, ball_b.base)
    pairs.remove(base_pair)
    pairs.insert(0, base_pair)
    P = len(pairs)
    M = np.zeros((P, P))
    for p in range(P):
        ip, jp = pairs[p]
        for q in range(P):
            iq, jq = pairs[q]
            M[p, q] = abs(ball_a.D[ip, iq] - ball_b.D[jp, jq])
    row_bit = np.array([1 << i for i, _ in pairs], dtype=np.int64)
    col_bit = np.array([1 << j for _, j in pairs], dtype=np.int64)
    # suffix coverage: what rows/cols the remaining pairs can still cover
    suf_rows = np.zeros(P + 1, dtype=np.int64)
    suf_cols = np.zeros(P + 1, dtype=np.int64)
    for p in range(P - 1, -1, -1):
        suf_rows[p] = suf_rows[p + 1] | row_bit[p]
        suf_cols[p] = suf_cols[p + 1] | col_bit[p]
    full_rows, full_cols = (1 << na) - 1, (1 << nb) - 1

    best = math.inf
    best_pairs: np.ndarray | None = None
    if upper_pairs is not None:
        d0 = _distortion_local(ball_a.D, ball_b.D, upper_pairs)
        g0 = _gap_lp(ball_a.D, ball_b.D, ball_a.w, ball_b.w, upper_pairs)
        best = d0 + g0
        best_pairs = upper_pairs
    nodes = 0
    # cheapest possible off-relation move: any non-relation arc pays at least
    # the smaller positive point separation on either side
    offs = []
    for D in (ball_a.D, ball_b.D):
        pos = D[D > 0]
        if pos.size:
            offs.append(float(pos.min()))
    eta = min(min(offs) if offs else 0.0, TELEPORT_COST)
    mass_a, mass_b = float(ball_a.w.sum()), float(ball_b.w.sum())

    def leaf(chosen: list[int], dist: float):
        nonlocal best, best_pairs
        loc = np.array([pairs[p] for p in chosen], dtype=int)
        # sound lower bound: net mass difference pays the teleport cost and
        # mass that cannot ride free relation arcs pays at least eta
        leftover = min(mass_a, mass_b) - _free_flow(ball_a.w, ball_b.w, loc)
        lb = abs(mass_a - mass_b) * TELEPORT_COST + max(leftover, 0.0) * eta
        if 0.5 * dist + lb >= best:
            return
        gap = _gap_lp(ball_a.D, ball_b.D, ball_a.w, ball_b.w, loc)
        val = 0.5 * dist + gap
        if val < best:
            best = val
            best_pairs = loc

    def dfs(pos: int, chosen: list[int], dist: float, rows: int, cols: int):
        nonlocal nodes
        nodes += 1
        if nodes > budget:
            raise PmghBudgetError("exhaustive enumeration budget exceeded")
        if best == 0.0:
            return
        if 0.5 * dist >= best:
            return
        if pos == P:
            if rows == full_rows and cols == full_cols:
                leaf(chosen, dist)
            return
        if (rows | suf_rows[pos]) != full_rows or (cols | suf_cols[pos]) != full_cols:
            return
        # include pairs[pos]
        new_dist = dist
        for p in chosen:
            v = M[p, pos]
            if v > new_dist:
                new_dist = v
        if 0.5 * new_dist < best:
            chosen.append(pos)
            dfs(pos + 1, chosen, new_dist, rows | row_bit[pos], cols | col_bit[pos])
            chosen.pop()
        # exclude pairs[pos] (the base pair at pos 0 is mandatory)
        if pos > 0:
            dfs(pos + 1, chosen, dist, rows, cols)

    dfs(1, [0], 0.0, int(row_bit[0]), int(col_bit[0]))
    assert best_pairs is not None
    return best, best_pairs, {"nodes": nodes}


# ---------------------------------------------------------------------------
# The surrogate distance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadiusTerm:
    radius: float
    weight: float
    distortion: float
    measure_gap: float
    term: float              # min(1, distortion + measure_gap)
    aggregated: bool


@dataclass(frozen=True)
class PmghEstimate:
    """Surrogate distance with its per-radius breakdown and certificate."""

    value: float
    per_radius: tuple
    certificates: tuple       # Correspondence per surviving radius
    lower_bound: float | None
    mode: str
    swapped: bool             # True if inputs were reordered internally

    def to_json(self) -> str:
        return json.dumps({
            "value": self.value,
            "mode": self.mode,
            "lower_bound": self.lower_bound,
            "per_radius": [
                {"radius": t.radius, "weight": t.weight, "distortion": t.distortion,
                 "measure_gap": t.measure_gap, "term": t.term, "aggregated": t.aggregated}
                for t in self.per_radius
            ],
            "certificates": [c.pairs.tolist() for c in self.certificates],
        }, indent=2, sort_keys=True)


def _content_key(ps: PointedSpace) -> tuple:
    """Label-invariant ordering key; ties mean the canonical balls coincide."""
    return (
        ps.n,
        float(ps.space.mass),
        float(ps.space.metric.sum()),
        np.sort(ps.space.metric, axis=None).tobytes(),
        np.sort(ps.space.weights).tobytes(),
        np.sort(ps.base_distances()).tobytes(),
    )


def _surviving_radii(A: PointedSpace, B: PointedSpace, grid: Sequence[float]) -> list[float]:
    """Drop saturated radii: keep a radius only if either ball grew."""
    out: list[float] = []
    prev_sizes = (-1, -1)
    for R in sorted(grid):
        sizes = (int((A.base_distances() < R).sum()), int((B.base_distances() < R).sum()))
        if not out:
            out.append(R)
            prev_sizes = sizes
            continue
        if sizes != prev_sizes:
            out.append(R)
            prev_sizes = sizes
    return out


def pmgh_distance(
    A: PointedSpace,
    B: PointedSpace,
    R_grid: Sequence[float] | None = None,
    mode: str = "anneal",
    seed: int = 0,
    proposals: int = 10_000,
    restarts: int = 2,
    budget: int = 2_000_000,
) -> PmghEstimate:
    """Surrogate pmGH distance between normalized pointed spaces.

    D = sum_k 2^-k * min(1, inf_corr [distortion + measure_gap at R_k]) over
    the surviving grid radii. Symmetry is exact: inputs are reordered by a
    canonical content key before optimization and the certificate mirrored
    back, so D(A, B) and D(B, A) run the identical computation.
    """
    if mode not in ("anneal", "exhaustive"):
        raise ValueError("mode must be 'anneal' or 'exhaustive'")
    swapped = _content_key(B) < _content_key(A)
    X, Y = (B, A) if swapped else (A, B)

    grid = DEFAULT_RADII if R_grid is None else tuple(R_grid)
    radii = _surviving_radii(X, Y, grid)

    value = 0.0
    terms: list[RadiusTerm] = []
    certs: list[Correspondence] = []
    exact = mode == "exhaustive"
    for k, R in enumerate(radii, start=1):
        ball_x, ball_y = _ball(X, R), _ball(Y, R)
        weight = 2.0 ** (-k)
        if exact:
            seed_pairs = _anneal_radius(ball_x, ball_y, seed + k, proposals=2000, restarts=1)
            _, loc, _ = _exhaustive_radius(ball_x, ball_y, budget, seed_pairs)
            dist = _distortion_local(ball_x.D, ball_y.D, loc)
            gap = _gap_lp(ball_x.D, ball_y.D, ball_x.w, ball_y.w, loc)
            aggregated = False
        else:
            loc = _anneal_radius(ball_x, ball_y, seed + k, proposals=proposals, restarts=restarts)
            dist = _distortion_local(ball_x.D, ball_y.D, loc)
            gap, aggregated = _gap_upper(ball_x, ball_y, loc)
        term = min(1.0, dist + gap)
        value += weight * term
        terms.append(RadiusTerm(radius=R, weight=weight, distortion=dist,
                                measure_gap=gap, term=term, aggregated=aggregated))
        pairs_global = np.stack([ball_x.idx[loc[:, 0]], ball_y.idx[loc[:, 1]]], axis=1)
        certs.append(Correspondence(pairs_global))

    if swapped:
        certs = [c.swap() for c in certs]
    return PmghEstimate(
        value=value,
        per_radius=tuple(terms),
        certificates=tuple(certs),
        lower_bound=value if exact else None,
        mode=mode,
        swapped=swapped,
    )


def convergence_diagnostic(
    members: Sequence[tuple[float, PointedSpace]],
    target: PointedSpace,
    **kwargs,
) -> dict:
    """Surrogate distance of each (label, space) member to the target.

    Returns rows (label, value) plus a coarse trend flag: 'constant' when
    everything is numerically zero, 'decreasing' when values mostly shrink
    and end well below the start, else 'none'.
    """
    rows = []
    for label, ps in members:
        est = pmgh_distance(ps, target, **kwargs)
        rows.append((label, est.value, est))
    vals = np.array([v for _, v, _ in rows])
    if len(vals) == 0:
        trend = "none"
    elif np.all(np.abs(vals) < 1e-12):
        trend = "constant"
    elif len(vals) >= 2:
        diffs = np.diff(vals)
        mostly_down = (diffs <= 1e-12).sum() >= (diffs > 1e-12).sum()
        if mostly_down and vals[-1] <= 0.7 * vals[0] + 1e-12:
            trend = "decreasing"
        else:
            trend = "none"
    else:
        trend = "none"
    return {"rows": rows, "trend": trend}
