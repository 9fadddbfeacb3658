"""
測試梯形、依存三角形、小梯形覆蓋與零座標
"""

import math

import numpy as np
import pytest

from domain import (
    INF, Trapezoid, decompose_unbounded, dependence_triangle, from_null, tile_cover, to_null,
)
from errors import CausalityViolated, ConfigError, DeltaTooLarge, OutsideDomain

K2 = Trapezoid.compact(0.0, 2.0, 2.0)


def test_slice():
    assert K2.slice(1.0) == (-1.0, 1.0)
    assert K2.slice(3.0) is None
    assert Trapezoid.semi_up(0.0).slice(2.0) == (2.0, INF)
    assert Trapezoid.semi_down(1.0).slice(0.5) == (-INF, 0.5)
    assert Trapezoid.unbounded(5.0).slice(6.0) is None


def test_contains():
    assert K2.contains((2.0, 0.0))
    assert not K2.contains((1.0, 1.5))
    assert Trapezoid.unbounded(5.0).contains((5.0, 100.0))
    assert not Trapezoid.semi_up(0.0).contains((1.0, 0.5))


def test_compact_height_bounded_by_half_length():
    with pytest.raises(ConfigError):
        Trapezoid.compact(0.0, 1.0, 2.0)
    with pytest.raises(ConfigError):
        Trapezoid.compact(0.0, -1.0)
    assert Trapezoid.compact(0.0, 1.0).height == 1.0


def test_dependence_triangle():
    assert dependence_triangle(K2, 1.0, 0.0).base_interval == (-1.0, 1.0)
    assert dependence_triangle(K2, 0.0, 0.5).is_degenerate
    assert dependence_triangle(Trapezoid.unbounded(), 3.0, 5.0).base_interval == (2.0, 8.0)
    with pytest.raises(OutsideDomain):
        dependence_triangle(K2, 1.0, 1.5)


@pytest.mark.parametrize("K", [
    Trapezoid.compact(0.5, 3.0, 2.5),
    Trapezoid.unbounded(4.0),
    Trapezoid.semi_up(-1.0, 4.0),
    Trapezoid.semi_down(2.0, 4.0),
])
def test_causal_shift_closure(K):
    """(t, x) ∈ K ⇒ 沿兩條特徵線往下的點也在 K 內"""
    rng = np.random.Generator(np.random.Philox(11))
    checked = 0
    for t, x in zip(rng.uniform(0.0, 4.0, 400), rng.uniform(-5.0, 5.0, 400)):
        if not K.contains((t, x)):
            continue
        checked += 1
        for s in np.linspace(0.0, t, 7):
            assert K.contains((s, x + t - s))
            assert K.contains((s, x - t + s))
    assert checked > 50


def test_tile_cover_centers():
    tiles = tile_cover(K2, 1.0)
    assert [tile.x0 for tile in tiles] == [-1.0, -0.5, 0.0, 0.5, 1.0]
    assert all(tile.L == 1.0 and tile.height == 0.5 for tile in tiles)


def test_tile_cover_limits():
    single = tile_cover(K2, 2.0, strict=False)
    assert len(single) == 1
    assert single[0].height == 2.0
    with pytest.raises(DeltaTooLarge):
        tile_cover(K2, 1.5)


def test_tile_cover_is_exact_on_probe_grid():
    """聯集與 K ∩ [0, δ/2] 逐點相同"""
    K = Trapezoid.compact(0.3, 2.5, 2.0)
    delta = 0.75
    tiles = tile_cover(K, delta)
    top = delta / 2
    # 探針不落在任何邊界上
    for t in np.linspace(0.0, 1.0, 41) + 0.003:
        for x in np.linspace(-3.0, 3.5, 131) + 0.0123:
            in_union = any(tile.contains((t, x)) for tile in tiles)
            expected = K.contains((t, x)) and t <= top
            assert in_union == expected, (t, x)


def test_decompose_unbounded():
    left, core, right = decompose_unbounded(Trapezoid.unbounded(), -4.0, 4.0, 1.0)
    assert left.base == (-4.0, -2.0)
    assert right.base == (2.0, 4.0)
    assert core.base == (-3.0, 3.0)
    assert left.height == core.height == 0.5
    with pytest.raises(ConfigError):
        decompose_unbounded(Trapezoid.unbounded(), -1.0, 1.0, 1.0)


def test_truncate():
    K = Trapezoid.semi_up(-1.0).truncate(3.0)
    assert K.is_compact
    assert K.base == (-1.0, 3.0)
    assert K.height == 2.0
    assert Trapezoid.unbounded(1.0).truncate(4.0).height == 1.0
    assert K2.truncate(0.5) is K2


def test_null_coordinates():
    assert to_null((1.0, 2.0)) == (3.0, 1.0)
    assert from_null((0.0, 0.0)) == (0.0, 0.0)
    assert from_null((2.0, -2.0)) == (2.0, 0.0)
    with pytest.raises(CausalityViolated):
        from_null((-1.0, 1.0))
    for t, x in [(0.25, -3.5), (1.5, 0.125), (math.ldexp(1, -10), 7.0)]:
        assert from_null(to_null((t, x))) == (t, x)
