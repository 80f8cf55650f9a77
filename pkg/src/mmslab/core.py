"""Finite pointed metric measure spaces.

The basic value types of the lab: a finite metric with nonnegative point
weights (``FiniteSpace``), the same with a basepoint (``PointedSpace``),
plus the operations every experiment builds on — rescaling, basepoint
normalization, ball restriction, doubling profiling and metric products.

All values are immutable after construction (arrays are frozen), so
everything here is safe to share across parallel workers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "FiniteSpace",
    "PointedSpace",
    "ValidationReport",
    "DoublingProfile",
    "validate",
    "rescale",
    "normalize_at",
    "ball_restrict",
    "doubling_profile",
    "product",
    "load_space",
    "space_to_dict",
]

DEFAULT_TRIANGLE_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FiniteSpace:
    """A finite metric measure space (X, d, m).

    points   -- opaque point ids (kept only for reporting/round-trips)
    metric   -- (n, n) symmetric matrix of distances
    weights  -- (n,) nonnegative measure weights; support = {w > 0}
    coords   -- optional coordinate tags, shape (n, k)
    interpolator -- optional geodesic oracle (see mmslab.transport)
    resolution   -- declared sample spacing, if the space came from a sampler
    """

    points: tuple
    metric: np.ndarray
    weights: np.ndarray
    coords: np.ndarray | None = None
    interpolator: Any = None
    resolution: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "metric", _frozen(self.metric))
        object.__setattr__(self, "weights", _frozen(self.weights))
        if self.coords is not None:
            c = np.asarray(self.coords, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            object.__setattr__(self, "coords", _frozen(c))
        n = len(self.points)
        if self.metric.shape != (n, n):
            raise ValueError(f"metric shape {self.metric.shape} does not match {n} points")
        if self.weights.shape != (n,):
            raise ValueError(f"weights shape {self.weights.shape} does not match {n} points")

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def support(self) -> np.ndarray:
        """Indices with positive weight."""
        return np.flatnonzero(self.weights > 0)

    @property
    def diameter(self) -> float:
        return float(self.metric.max()) if self.n else 0.0

    def ball_mass(self, center: int, r: float, closed: bool = False) -> float:
        d = self.metric[center]
        inside = d <= r if closed else d < r
        return float(self.weights[inside].sum())

    def min_positive_distance(self) -> float:
        d = self.metric[np.triu_indices(self.n, 1)]
        d = d[d > 0]
        return float(d.min()) if d.size else 0.0

    def declared_resolution(self) -> float:
        """Resolution metadata, falling back to the min positive distance."""
        if self.resolution is not None:
            return float(self.resolution)
        return self.min_positive_distance()

    def subset(self, idx: np.ndarray) -> "FiniteSpace":
        """Restriction to ``idx`` with the ambient (restricted-matrix) metric."""
        idx = np.asarray(idx, dtype=int)
        interp = self.interpolator
        if interp is not None and hasattr(interp, "restrict"):
            interp = interp.restrict(idx)
        return FiniteSpace(
            points=tuple(self.points[i] for i in idx),
            metric=self.metric[np.ix_(idx, idx)],
            weights=self.weights[idx],
            coords=None if self.coords is None else self.coords[idx],
            interpolator=interp,
            resolution=self.resolution,
        )

    def scaled(self, metric_factor: float, weight_factor: float = 1.0) -> "FiniteSpace":
        interp = self.interpolator  # index-level oracle; invariant under scaling
        res = None if self.resolution is None else self.resolution * metric_factor
        return FiniteSpace(
            points=self.points,
            metric=self.metric * metric_factor,
            weights=self.weights * weight_factor,
            coords=self.coords,
            interpolator=interp,
            resolution=res,
        )


@dataclass(frozen=True)
class PointedSpace:
    """A pointed metric measure space (X, d, m, base)."""

    space: FiniteSpace
    base: int

    def __post_init__(self) -> None:
        if not (0 <= self.base < self.space.n):
            raise ValueError(f"basepoint {self.base} out of range")
        if self.space.weights[self.base] <= 0:
            raise ValueError("basepoint must lie in the support of the measure")

    @property
    def n(self) -> int:
        return self.space.n

    def base_distances(self) -> np.ndarray:
        return self.space.metric[self.base]


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate`; empty ``violations`` means a valid space."""

    violations: tuple
    triangle_tol: float
    triangle_mode: str  # "exhaustive" | "sampled"

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_kind(self, kind: str) -> list:
        return [v for v in self.violations if v[0] == kind]

    def summary(self) -> str:
        if self.ok:
            return "valid"
        kinds: dict[str, int] = {}
        for v in self.violations:
            kinds[v[0]] = kinds.get(v[0], 0) + 1
        return ", ".join(f"{k}: {c}" for k, c in sorted(kinds.items()))


def validate(
    space: FiniteSpace,
    triangle_tol: float = DEFAULT_TRIANGLE_TOL,
    exhaustive_limit: int = 400,
    sample_triples: int = 2_000_000,
    seed: int = 0,
) -> ValidationReport:
    """Check the FiniteSpace invariants and report every violation.

    Diagonal and symmetry are exact checks; the triangle inequality uses
    ``triangle_tol`` to absorb float round-off of sampled constructions.
    Above ``exhaustive_limit`` points the O(n^3) triple scan switches to a
    seeded sample of ``sample_triples`` triples.
    """
    D, w = space.metric, space.weights
    n = space.n
    out: list[tuple] = []

    diag = np.flatnonzero(np.diag(D) != 0)
    out.extend(("diagonal", (int(i),), float(D[i, i])) for i in diag)
    asym = np.argwhere(D != D.T)
    for i, j in asym[: 100]:
        if i < j:
            out.append(("symmetry", (int(i), int(j)), float(D[i, j] - D[j, i])))
    neg = np.argwhere(D < 0)
    for i, j in neg[: 100]:
        if i <= j:
            out.append(("negative_distance", (int(i), int(j)), float(D[i, j])))
    for i in np.flatnonzero(w < 0):
        out.append(("negative_weight", (int(i),), float(w[i])))
    if w.sum() <= 0:
        out.append(("total_mass", (), float(w.sum())))

    mode = "exhaustive"
    if n <= exhaustive_limit:
        # worst violation per (i,j): d(i,j) - min_k (d(i,k)+d(k,j)); chunk over k
        best = np.full((n, n), np.inf)
        for k0 in range(0, n, 64):
            k1 = min(n, k0 + 64)
            # cand[i, k, j] = d(i,k) + d(k,j)
            cand = D[:, k0:k1, None] + D[k0:k1, :][None, :, :]
            np.minimum(best, cand.min(axis=1), out=best)
        gap = D - best
        bad = np.argwhere(gap > triangle_tol)
        for i, j in bad[: 200]:
            k = int(np.argmin(D[i] + D[:, j]))
            out.append(("triangle", (int(i), k, int(j)), float(gap[i, j])))
    else:
        mode = "sampled"
        rng = np.random.default_rng(seed)
        m = min(sample_triples, n * n * 4)
        ii = rng.integers(0, n, size=m)
        jj = rng.integers(0, n, size=m)
        kk = rng.integers(0, n, size=m)
        gap = D[ii, jj] - (D[ii, kk] + D[kk, jj])
        bad = np.flatnonzero(gap > triangle_tol)
        for b in bad[: 200]:
            out.append(("triangle", (int(ii[b]), int(kk[b]), int(jj[b])), float(gap[b])))

    return ValidationReport(violations=tuple(out), triangle_tol=triangle_tol, triangle_mode=mode)


def rescale(ps: PointedSpace, r: float) -> PointedSpace:
    """The rescaled pointed space with metric d/r; weights and basepoint kept."""
    if r <= 0:
        raise ValueError("rescale factor must be positive")
    return PointedSpace(space=ps.space.scaled(metric_factor=1.0 / r), base=ps.base)


def normalization_constant(ps: PointedSpace, r: float) -> float:
    """The constant c with  c * sum_{d(y,base)<r} (1 - d(y,base)/r) w(y) = 1.

    Open ball as written in the defining integral; the basepoint always
    contributes w(base) > 0, so the sum is positive.
    """
    if r <= 0:
        raise ValueError("normalization radius must be positive")
    d = ps.base_distances()
    inside = d < r
    s = float(((1.0 - d[inside] / r) * ps.space.weights[inside]).sum())
    if s <= 0:
        raise ValueError("degenerate normalization sum; corrupt weights?")
    return 1.0 / s


def normalize_at(ps: PointedSpace, r: float) -> tuple[PointedSpace, float]:
    """Scale the measure so that the radius-r normalization identity holds.

    Returns the rescaled-measure space and the constant c applied to the
    weights. Composing with ``rescale(.., r)`` yields a normalized pointed
    space: sum over the open unit ball of (1 - d) w' equals 1.
    """
    c = normalization_constant(ps, r)
    return PointedSpace(space=ps.space.scaled(1.0, weight_factor=c), base=ps.base), c


def ball_restrict(ps: PointedSpace, r: float, mode: str = "open") -> PointedSpace:
    """Restrict to the metric ball around the basepoint.

    The result carries the ambient restricted matrix, not the induced path
    metric of the ball.
    """
    if r <= 0:
        raise ValueError("ball radius must be positive")
    if mode not in ("open", "closed"):
        raise ValueError("mode must be 'open' or 'closed'")
    d = ps.base_distances()
    keep = d <= r if mode == "closed" else d < r
    idx = np.flatnonzero(keep)
    new_base = int(np.searchsorted(idx, ps.base))
    return PointedSpace(space=ps.space.subset(idx), base=new_base)


@dataclass(frozen=True)
class DoublingProfile:
    """Sampled doubling ratios r -> max_x m(B_2r(x))/m(B_r(x)) and their envelope."""

    radii: np.ndarray
    ratios: np.ndarray
    envelope: np.ndarray           # running max of ratios, non-decreasing
    centers_used: int
    iterated_violations: tuple     # tuples (a, x, r, R, lhs, bound)
    iterated_checked: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "radii", _frozen(self.radii))
        object.__setattr__(self, "ratios", _frozen(self.ratios))
        object.__setattr__(self, "envelope", _frozen(self.envelope))

    def envelope_at(self, R: float) -> float:
        """Step-function value C(R): envelope at the largest profiled radius <= R."""
        i = int(np.searchsorted(self.radii, R, side="right")) - 1
        if i < 0:
            return float(self.envelope[0])
        return float(self.envelope[i])


def doubling_profile(
    space: FiniteSpace,
    radii: Sequence[float],
    centers: str | Sequence[int] = "auto",
    center_budget: int = 512,
    seed: int = 0,
    iterated_samples: int = 1000,
    iterated_tol: float = 1e-9,
) -> DoublingProfile:
    """Worst-case doubling ratios over sampled centers plus the iterated bound check.

    The iterated inequality m(B_R(a)) <= m(B_r(x)) * C(R)^(log2(R/r)+2) is
    verified on sampled tuples with x in B_R(a) and r <= R drawn from the
    profiled radii, C being the envelope.
    """
    radii = np.asarray(sorted(radii), dtype=float)
    if radii.size == 0 or radii[0] <= 0:
        raise ValueError("radii must be positive and non-empty")
    supp = space.support
    if isinstance(centers, str):
        if centers not in ("auto", "all"):
            raise ValueError("centers must be 'auto', 'all', or an index list")
        if centers == "all" or supp.size <= center_budget:
            cidx = supp
        else:
            rng = np.random.default_rng(seed)
            cidx = rng.choice(supp, size=center_budget, replace=False)
    else:
        cidx = np.asarray(list(centers), dtype=int)

    w = space.weights
    D = space.metric[cidx]  # (n_centers, n)
    ratios = np.empty(radii.size)
    for k, r in enumerate(radii):
        m_r = ((D < r) * w).sum(axis=1)
        m_2r = ((D < 2 * r) * w).sum(axis=1)
        ratios[k] = float((m_2r / m_r).max())
    envelope = np.maximum.accumulate(ratios)

    profile_env = np.maximum.accumulate(ratios)
    violations: list[tuple] = []
    checked = 0
    rng = np.random.default_rng(seed + 1)
    if iterated_samples > 0 and radii.size >= 1:
        for _ in range(iterated_samples):
            a = int(rng.choice(supp))
            iR = int(rng.integers(0, radii.size))
            ir = int(rng.integers(0, iR + 1))
            R, r = float(radii[iR]), float(radii[ir])
            in_R = np.flatnonzero((space.metric[a] < R) & (space.weights > 0))
            if in_R.size == 0:
                continue
            x = int(rng.choice(in_R))
            mR = space.ball_mass(a, R)
            mr = space.ball_mass(x, r)
            C = float(profile_env[iR])
            bound = mr * C ** (np.log2(R / r) + 2.0)
            checked += 1
            if mR > bound * (1 + iterated_tol) + iterated_tol:
                violations.append((a, x, r, R, mR, float(bound)))

    return DoublingProfile(
        radii=radii,
        ratios=ratios,
        envelope=envelope,
        centers_used=int(cidx.size),
        iterated_violations=tuple(violations),
        iterated_checked=checked,
    )


def product(a: FiniteSpace, b: FiniteSpace, max_points: int = 6000) -> FiniteSpace:
    """Pythagorean metric product with product weights.

    d((x,y),(x',y')) = sqrt(d_a(x,x')^2 + d_b(y,y')^2), w = w_a * w_b.
    """
    n = a.n * b.n
    if n > max_points:
        raise ValueError(f"product would have {n} points, above the budget {max_points}")
    D2 = (a.metric ** 2)[:, None, :, None] + (b.metric ** 2)[None, :, None, :]
    metric = np.sqrt(D2.reshape(n, n))
    weights = np.multiply.outer(a.weights, b.weights).reshape(n)
    points = tuple((p, q) for p in a.points for q in b.points)
    coords = None
    if a.coords is not None and b.coords is not None:
        ca = np.repeat(a.coords, b.n, axis=0)
        cb = np.tile(b.coords, (a.n, 1))
        coords = np.hstack([ca, cb])
    res = None
    if a.resolution is not None or b.resolution is not None:
        cand = [r for r in (a.resolution, b.resolution) if r is not None]
        res = min(cand)
    return FiniteSpace(points=points, metric=metric, weights=weights, coords=coords, resolution=res)


# ---------------------------------------------------------------------------
# JSON space format
# ---------------------------------------------------------------------------

def _metric_from_spec(spec: dict, n: int) -> np.ndarray:
    kind = spec.get("kind")
    if kind == "matrix":
        M = np.asarray(spec["data"], dtype=float)
        if M.shape != (n, n):
            raise ValueError("matrix metric has wrong shape")
        return M
    if kind == "euclidean":
        coords = np.asarray(spec["coords"], dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.shape[0] != n:
            raise ValueError("euclidean coords have wrong length")
        diff = coords[:, None, :] - coords[None, :, :]
        return np.linalg.norm(diff, axis=2)
    if kind == "graph":
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import shortest_path

        edges = spec["edges"]
        ii = [e[0] for e in edges] + [e[1] for e in edges]
        jj = [e[1] for e in edges] + [e[0] for e in edges]
        ll = [float(e[2]) for e in edges] * 2
        g = coo_matrix((ll, (ii, jj)), shape=(n, n))
        M = shortest_path(g, method="D", directed=False)
        if not np.isfinite(M).all():
            raise ValueError("graph metric is not connected")
        return np.minimum(M, M.T)  # exact symmetry despite float path sums
    raise ValueError(f"unknown metric kind {kind!r}")


def load_space(source: str | dict) -> PointedSpace | FiniteSpace:
    """Load a space from the JSON format (path, JSON string, or dict).

    Returns a PointedSpace when "base" is present, else a FiniteSpace.
    """
    if isinstance(source, dict):
        obj = source
    else:
        text = source
        if "{" not in text:
            with open(source) as fh:
                text = fh.read()
        obj = json.loads(text)
    points = obj["points"]
    n = len(points)
    metric = _metric_from_spec(obj["metric"], n)
    weights = np.asarray(obj["weights"], dtype=float)
    coords = None
    if obj["metric"].get("kind") == "euclidean":
        coords = np.asarray(obj["metric"]["coords"], dtype=float)
    space = FiniteSpace(
        points=points,
        metric=metric,
        weights=weights,
        coords=coords,
        resolution=obj.get("resolution"),
    )
    if "base" in obj and obj["base"] is not None:
        return PointedSpace(space=space, base=int(obj["base"]))
    return space


def space_to_dict(obj: PointedSpace | FiniteSpace) -> dict:
    space = obj.space if isinstance(obj, PointedSpace) else obj
    out = {
        "points": list(space.points),
        "metric": {"kind": "matrix", "data": space.metric.tolist()},
        "weights": space.weights.tolist(),
    }
    if space.resolution is not None:
        out["resolution"] = space.resolution
    if isinstance(obj, PointedSpace):
        out["base"] = int(obj.base)
    return out
