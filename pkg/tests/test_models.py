"""Model generators: validity, metric formulas, interpolation oracles, registry."""
import numpy as np
import pytest

from mmslab import core, models
from mmslab.models import ModelSpec, ground_truth, make, parse_spec


ALL_SPECS = [
    ModelSpec("euclidean-grid", dim=1, h=0.1, extent=1.0),
    ModelSpec("euclidean-grid", dim=2, h=0.2, extent=1.0, shape="ball"),
    ModelSpec("lp-plane", p=np.inf, h=0.25, extent=1.0),
    ModelSpec("lp-plane", p=3.0, h=0.25, extent=1.0),
    ModelSpec("sphere", n_points=200),
    ModelSpec("cone", angle=3 * np.pi / 2, h=0.2, extent=1.0),
    ModelSpec("cylinder", circumference=1.0, height=3.0, h=0.1),
    ModelSpec("weighted-segment", h=0.05, extent=1.0, profile="linear"),
    ModelSpec("graph", n_points=25, seed=3),
]


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.kind}")
def test_all_kinds_validate(spec):
    ps = make(spec)
    rep = core.validate(ps.space, triangle_tol=1e-9)
    assert rep.ok, rep.summary()
    assert ps.space.weights[ps.base] > 0


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.kind}")
def test_interpolator_endpoints(spec):
    ps = make(spec)
    interp = ps.space.interpolator
    if interp is None:
        pytest.skip("no oracle for this kind")
    n = ps.n
    rng = np.random.default_rng(0)
    for _ in range(10):
        i, j = int(rng.integers(n)), int(rng.integers(n))
        assert interp(i, j, 0.0) == i
        assert interp(i, j, 1.0) == j
        k = interp(i, j, 0.5)
        assert 0 <= k < n


def test_grid_point_count_1d():
    ps = make(ModelSpec("euclidean-grid", dim=1, h=0.01, extent=0.5))
    assert ps.n == 101
    D = ps.space.metric
    x = ps.space.coords[:, 0]
    assert np.allclose(D, np.abs(x[:, None] - x[None, :]))


def test_linf_plane_metric():
    ps = make(ModelSpec("lp-plane", p=np.inf, h=0.5, extent=1.0))
    c = ps.space.coords
    expect = np.abs(c[:, None, :] - c[None, :, :]).max(axis=2)
    assert np.allclose(ps.space.metric, expect)


def test_lp_plane_interpolation_stays_on_segment():
    ps = make(ModelSpec("lp-plane", p=np.inf, h=0.1, extent=1.0))
    interp = ps.space.interpolator
    c = ps.space.coords
    i = int(np.argmin(np.linalg.norm(c - np.array([-1, -1]), axis=1)))
    j = int(np.argmin(np.linalg.norm(c - np.array([1, 0.6]), axis=1)))
    for t in (0.25, 0.5, 0.75):
        k = interp(i, j, t)
        target = (1 - t) * c[i] + t * c[j]
        assert np.abs(c[k] - target).max() <= 0.05 + 1e-12


def test_cone_metric_against_unrolled_sectors():
    # oracle: for angular separation below pi, unroll the sector to the plane
    # and measure the straight segment
    spec = ModelSpec("cone", angle=3 * np.pi / 2, h=0.1, extent=1.0)
    ps = make(spec)
    polar = ps.space.coords
    rng = np.random.default_rng(1)
    for _ in range(60):
        a, b = rng.integers(ps.n, size=2)
        r1, p1 = polar[a]
        r2, p2 = polar[b]
        dphi = abs((p2 - p1 + spec.angle / 2) % spec.angle - spec.angle / 2)
        if dphi < np.pi:
            x1 = np.array([r1, 0.0])
            x2 = np.array([r2 * np.cos(dphi), r2 * np.sin(dphi)])
            expect = np.linalg.norm(x1 - x2)
        else:
            expect = r1 + r2
        assert ps.space.metric[a, b] == pytest.approx(expect, abs=1e-12)


def test_cone_apex_is_base():
    ps = make(ModelSpec("cone", angle=np.pi, h=0.2, extent=1.0))
    assert ps.space.coords[ps.base, 0] == 0.0


def test_sphere_metric_is_great_circle():
    ps = make(ModelSpec("sphere", n_points=150, radius=2.0))
    xyz = ps.space.coords
    rng = np.random.default_rng(2)
    for _ in range(40):
        a, b = rng.integers(150, size=2)
        cosang = np.clip(xyz[a] @ xyz[b] / 4.0, -1, 1)
        assert ps.space.metric[a, b] == pytest.approx(2.0 * np.arccos(cosang), abs=1e-9)
    assert ps.space.diameter <= 2.0 * np.pi + 1e-9


def test_sphere_interpolation_near_great_circle():
    ps = make(ModelSpec("sphere", n_points=500))
    interp = ps.space.interpolator
    D = ps.space.metric
    rng = np.random.default_rng(3)
    for _ in range(15):
        i, j = rng.integers(500, size=2)
        if D[i, j] < 0.3 or D[i, j] > 2.5:
            continue
        k = interp(i, j, 0.5)
        assert abs(D[i, k] - 0.5 * D[i, j]) <= 2.5 * ps.space.resolution


def test_cylinder_wraps_short_way():
    ps = make(ModelSpec("cylinder", circumference=1.0, height=2.0, h=0.1))
    c = ps.space.coords
    a = int(np.argmin(np.abs(c[:, 0]) + np.abs(c[:, 1] - 0.1)))
    b = int(np.argmin(np.abs(c[:, 0]) + np.abs(c[:, 1] - 0.9)))
    assert ps.space.metric[a, b] == pytest.approx(0.2, abs=1e-12)


def test_weighted_segment_profiles_positive():
    for profile in ("uniform", "linear", "quadratic", "exp"):
        ps = make(ModelSpec("weighted-segment", h=0.1, extent=1.0, profile=profile))
        assert (ps.space.weights > 0).all()
    with pytest.raises(ValueError):
        make(ModelSpec("weighted-segment", profile="bogus"))


def test_graph_deterministic_and_connected():
    a = make(ModelSpec("graph", n_points=20, seed=7))
    b = make(ModelSpec("graph", n_points=20, seed=7))
    assert np.array_equal(a.space.metric, b.space.metric)
    assert np.isfinite(a.space.metric).all()
    c = make(ModelSpec("graph", n_points=20, seed=8))
    assert not np.array_equal(a.space.metric, c.space.metric)


def test_grid_doubling_exponent():
    for dim, h, r in ((1, 0.005, 0.11), (2, 0.02, 0.21)):
        ps = make(ModelSpec("euclidean-grid", dim=dim, h=h, extent=1.0))
        interior = np.flatnonzero(
            np.abs(ps.space.coords).max(axis=1) < 1.0 - 2.2 * r)
        prof = core.doubling_profile(ps.space, [r], centers=interior[:200])
        assert prof.ratios[0] == pytest.approx(2.0**dim, rel=0.05)


def test_ground_truth_registry():
    gt = ground_truth("lp-plane")
    assert gt.tangent_model == "lp-plane:p"
    assert ground_truth("sphere").tangent_model == "euclidean:2"
    assert ground_truth("cone").exceptional == "apex"
    with pytest.raises(ValueError):
        ground_truth("nope")


def test_parse_spec_strings():
    s = parse_spec("euclidean-grid:3d,h=0.5,extent=4,shape=ball")
    assert (s.kind, s.dim, s.h, s.extent, s.shape) == ("euclidean-grid", 3, 0.5, 4.0, "ball")
    s = parse_spec("lp-plane:p=inf,h=0.05")
    assert np.isinf(s.p)
    s = parse_spec("cylinder:c=1,L=5,h=0.05")
    assert (s.circumference, s.height) == (1.0, 5.0)
    with pytest.raises(ValueError):
        parse_spec("torus:1d")


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        ModelSpec("euclidean-grid", h=-0.1)
    with pytest.raises(ValueError):
        ModelSpec("euclidean-grid", extent=0.0)
