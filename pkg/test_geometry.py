"""
測試目標流形的幾何運算與初始資料
"""

from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from errors import ConfigError, DistanceExceeded
from geometry import (
    ManifoldData, bump_data, check_compatibility, constant_data, data_from_table, geodesic_data,
    custom_manifold, measure_bounds, parse_target, smooth_approximate, sphere, traveling_wave_data,
    uniform_grid,
)

S2 = sphere(3)


@pytest.mark.parametrize("p, v, expected", [
    ((0, 0, 1), (1, 2, 3), (1, 2, 0)),
    ((1, 0, 0), (1, 0, 0), (0, 0, 0)),
    ((1 / np.sqrt(2), 1 / np.sqrt(2), 0), (1, 0, 0), (0.5, -0.5, 0)),
])
def test_tangent_project(p, v, expected):
    assert_allclose(S2.tangent_project(np.array(p), np.array(v, dtype=float)), expected, atol=1e-15)


@pytest.mark.parametrize("p, v, expected", [
    ((0, 0, 1), (1, 2, 3), (0, 0, 3)),
    ((1, 0, 0), (0, 1, 0), (0, 0, 0)),
    ((0, 1, 0), (2, 2, 0), (0, 2, 0)),
])
def test_normal_project(p, v, expected):
    assert_allclose(S2.normal_project(np.array(p, dtype=float), np.array(v, dtype=float)), expected, atol=1e-15)


def test_nearest_point():
    """徑向投影；流形上的點原樣回傳"""
    wide = replace(S2, tubular_radius_eps0=4.0)
    assert_allclose(wide.nearest_point(np.array([0.0, 0.0, 2.0])), [0, 0, 1])
    assert_allclose(wide.nearest_point(np.array([3.0, 4.0, 0.0])), [0.6, 0.8, 0.0], atol=1e-15)
    assert_allclose(S2.nearest_point(np.array([0.6, 0.8, 0.0])), [0.6, 0.8, 0.0], atol=1e-15)


def test_nearest_point_outside_tube():
    with pytest.raises(DistanceExceeded) as info:
        S2.nearest_point(np.array([0.0, 0.0, 2.0]))
    assert info.value.details['distance'] == pytest.approx(1.0)
    with pytest.raises(DistanceExceeded):
        S2.tangent_project(np.array([0.0, 0.0, 0.2]), np.array([1.0, 0.0, 0.0]))


def test_christoffel_form():
    e1, e2, e3 = np.eye(3)
    assert_allclose(S2.christoffel_form(e3, e1, e1), [0, 0, -1])
    assert_allclose(S2.christoffel_form(e3, e1, e2), [0, 0, 0])
    assert_allclose(S2.christoffel_form(e1, e2, e2), [-1, 0, 0])


@pytest.mark.parametrize("p, f, expected", [
    ((0, 0, 1), (0, 0, 5), (0, 0, 0)),
    ((0, 0, 1), (1, 1, 0), (1, 1, 0)),
    ((1, 0, 0), (1, 1, 1), (0, 1, 1)),
])
def test_forcing_project(p, f, expected):
    assert_allclose(S2.forcing_project(np.array(p, dtype=float), np.array(f, dtype=float)), expected)


def test_projection_identities_on_random_points():
    """切向投影冪等且與法向分量正交；nearest_point 冪等；Γ 平行於 p"""
    rng = np.random.Generator(np.random.Philox(7))
    q = rng.standard_normal((500, 3))
    q = q / np.linalg.norm(q, axis=1, keepdims=True) * rng.uniform(0.8, 1.2, (500, 1))
    v = rng.standard_normal((500, 3))
    p = S2.nearest_point(q)
    assert np.max(np.abs(np.linalg.norm(p, axis=1) - 1.0)) <= 1e-14
    assert_allclose(S2.nearest_point(p), p, atol=1e-15)

    t = S2.tangent_project(q, v)
    n = S2.normal_project(q, v)
    assert_allclose(t + n, v, atol=1e-14)
    assert np.max(np.abs(np.sum(t * n, axis=1))) <= 1e-13
    assert_allclose(S2.tangent_project(q, t), t, atol=1e-14)

    X = S2.tangent_project(p, rng.standard_normal((500, 3)))
    Y = S2.tangent_project(p, rng.standard_normal((500, 3)))
    gamma = S2.christoffel_form(p, X, Y)
    assert_allclose(np.cross(gamma, p), 0.0, atol=1e-13)


def test_extended_coefficients():
    """管狀鄰域內與 Γ、π 一致；鄰域外為零且不報錯"""
    e1, e2, e3 = np.eye(3)
    assert_allclose(S2.extended_christoffel(e3, e1, e1), S2.christoffel_form(e3, e1, e1))
    assert_allclose(S2.extended_forcing(e1, np.array([1.0, 1.0, 1.0])), [0, 1, 1])
    far = np.array([0.0, 0.0, 2.0])
    assert_array_equal(S2.extended_christoffel(far, e1, e1), 0.0)
    assert_array_equal(S2.extended_forcing(far, e1), 0.0)


def test_measured_bounds_within_fixed_constants():
    bounds = measure_bounds(S2, radius=0.1, samples=2000, seed=3)
    assert bounds['gamma'] <= S2.sup_bound_gamma + 1e-12
    assert 0.0 < bounds['lipschitz'] <= S2.lipschitz_bound_L


def test_parse_target():
    assert parse_target("sphere:4").ambient_dim == 4
    assert parse_target("sphere").ambient_dim == 3
    with pytest.raises(ConfigError):
        parse_target("torus:2")
    with pytest.raises(ConfigError):
        parse_target("sphere:x")


def test_uniform_grid():
    x = uniform_grid(-1.0, 1.0, 0.25)
    assert x.size == 9
    assert x[-1] == 1.0
    with pytest.raises(ConfigError):
        uniform_grid(-1.0, 1.0, 0.3)


def test_compatibility_examples():
    x = uniform_grid(-1.0, 1.0, 1 / 16)
    still = constant_data(x, (0.0, 0.0, 1.0))
    moving = ManifoldData(x, still.u0, np.tile([1.0, 0.0, 0.0], (x.size - 1, 1)))
    assert check_compatibility(moving, 1e-12).max_defect == 0.0
    normal = ManifoldData(x, still.u0, np.tile([0.0, 0.0, 1.0], (x.size - 1, 1)))
    report = check_compatibility(normal, 1e-8)
    assert report.max_defect == pytest.approx(1.0)
    assert not report.ok

    circle = ManifoldData.from_functions(
        x, lambda s: (np.cos(s), np.sin(s), 0.0), lambda s: (-np.sin(s), np.cos(s), 0.0))
    assert check_compatibility(circle, 1e-14).max_defect <= 1e-14


def test_builtin_data():
    x = uniform_grid(-1.0, 1.0, 1 / 32)
    geo = geodesic_data(x, 2.0)
    assert_allclose(geo.v0, np.tile([0.0, 2.0, 0.0], (64, 1)))
    assert geo.masses()['g_plus'] == pytest.approx(4.0)

    wave = traveling_wave_data(x, 1.0)
    assert wave.masses()['g_minus'] == 0.0
    assert check_compatibility(wave, 1e-12).ok

    bump = bump_data(x, 0.05, S2, support=(-0.5, 0.5))
    assert check_compatibility(bump, 1e-12).ok
    assert_allclose(bump.u0[0], [0, 0, 1])
    assert_array_equal(bump.v0[:8], 0.0)


def test_restrict_and_shapes():
    x = uniform_grid(0.0, 1.0, 0.125)
    data = geodesic_data(x, 1.0)
    part = data.restrict(2, 6)
    assert part.n_cells == 4
    assert part.base == (0.25, 0.75)
    with pytest.raises(ConfigError):
        data.restrict(3, 9)
    with pytest.raises(ConfigError):
        ManifoldData(x, data.u0, data.v0[:-1])


def test_data_from_table(tmp_path):
    path = tmp_path / "data.csv"
    rows = ["x,u1,u2,u3,v1,v2,v3"]
    for k, s in enumerate(np.linspace(0.0, 1.0, 5)):
        rows.append(f"{s},0,0,1,{0.5 * k},0,0")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    data = data_from_table(path)
    assert data.n_cells == 4
    assert_allclose(data.v0[:, 0], [0.0, 0.5, 1.0, 1.5])
    with pytest.raises(ConfigError):
        data_from_table(tmp_path / "missing.csv")


def test_smooth_approximate_constant_is_unchanged():
    x = uniform_grid(-2.0, 2.0, 1 / 16)
    data = constant_data(x, (0.0, 0.6, 0.8))
    out = smooth_approximate(data, 1)
    assert_allclose(out.u0, data.u0, atol=1e-14)
    assert_array_equal(out.v0, 0.0)


def test_smooth_approximate_great_circle():
    x = uniform_grid(-3.0, 3.0, 1 / 32)
    data = ManifoldData.from_functions(
        x, lambda s: (np.cos(s), np.sin(s), 0.0), lambda s: (-np.sin(s), np.cos(s), 0.0))
    out = smooth_approximate(data, 10)
    assert np.max(S2.distance(out.u0)) <= 1e-14
    assert np.max(np.linalg.norm(out.u0 - data.u0, axis=1)) <= S2.tubular_radius_eps0 / 3
    assert check_compatibility(out, 1e-13).ok


def test_smooth_approximate_keeps_velocity_mass():
    x = uniform_grid(-3.0, 3.0, 1 / 32)
    mid = 0.5 * (x[:-1] + x[1:])
    v0 = np.where((np.abs(mid) < 1.0)[:, None], [0.5, 0.0, 0.0], 0.0)
    data = ManifoldData(x, np.tile([0.0, 0.0, 1.0], (x.size, 1)), v0)
    out = smooth_approximate(data, 2)
    assert np.sum(np.abs(out.v0)) * data.h == pytest.approx(1.0, abs=1e-12)
    assert check_compatibility(out, 1e-15).ok


def _unit_circle_callbacks():
    def distance(q):
        return np.abs(np.linalg.norm(q, axis=-1) - 1.0)

    def nearest(q):
        return q / np.linalg.norm(q, axis=-1, keepdims=True)

    def tangent(p, v):
        return v - np.sum(v * p, axis=-1, keepdims=True) * p

    def christoffel(p, X, Y):
        return -np.sum(X * Y, axis=-1, keepdims=True) * p

    return custom_manifold(2, distance, nearest, tangent, christoffel,
                           lipschitz_bound_L=3.0, sup_bound_gamma=1.0, tubular_radius_eps0=0.5)


def test_custom_manifold_matches_closed_form():
    """以 callback 實作的單位圓與 sphere(2) 的封閉公式一致"""
    circle = _unit_circle_callbacks()
    closed = sphere(2)
    assert circle.name == "custom"
    rng = np.random.Generator(np.random.Philox(9))
    angle = rng.uniform(0.0, 2 * np.pi, 200)
    q = np.column_stack([np.cos(angle), np.sin(angle)]) * rng.uniform(0.8, 1.2, (200, 1))
    v = rng.standard_normal((200, 2))
    assert_allclose(circle.nearest_point(q), closed.nearest_point(q), atol=1e-15)
    assert_allclose(circle.tangent_project(q, v), closed.tangent_project(q, v), atol=1e-14)
    p = closed.nearest_point(q)
    assert_allclose(circle.christoffel_form(p, v, v), closed.christoffel_form(p, v, v), atol=1e-14)
    assert_allclose(circle.extended_forcing(q, v), closed.extended_forcing(q, v), atol=1e-14)
    far = np.array([[0.0, 2.0]])
    assert_array_equal(circle.extended_christoffel(far, v[:1], v[:1]), 0.0)
    with pytest.raises(DistanceExceeded):
        circle.nearest_point(far)
