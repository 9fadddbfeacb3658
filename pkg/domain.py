"""
梯形區域（因果時空區域）的運算

包含切片、依存三角形、包含判斷、覆蓋用的小梯形 (tile)、無界區域的分解，
以及零座標 (a, b) = (x + t, x − t) 的轉換。
"""

import math
from dataclasses import dataclass
from enum import Enum

from errors import CausalityViolated, ConfigError, DeltaTooLarge, OutsideDomain

INF = math.inf

# 比較端點時容許的相對誤差
_EDGE_TOL = 1e-12


class TrapezoidKind(Enum):
    COMPACT = "Compact"
    UNBOUNDED = "Unbounded"
    SEMI_UP = "SemiBoundedUp"
    SEMI_DOWN = "SemiBoundedDown"


@dataclass(frozen=True)
class Trapezoid:
    """
    時空梯形 K

    Compact:   {(t,x): 0 ≤ t ≤ t0, x0 − L + t ≤ x ≤ x0 + L − t}
    Unbounded: {(t,x): 0 ≤ t ≤ height}
    SemiBoundedUp:   {(t,x): 0 ≤ t ≤ height, x ≥ b + t}
    SemiBoundedDown: {(t,x): 0 ≤ t ≤ height, x ≤ a − t}
    """

    kind: TrapezoidKind
    height: float
    x0: float = 0.0
    L: float = INF
    b: float = -INF
    a: float = INF

    @classmethod
    def compact(cls, x0, L, height=None):
        height = L if height is None else height
        if L <= 0 or height <= 0:
            raise ConfigError(f"緊緻梯形需要 L > 0 且高度 > 0（L={L}, height={height}）")
        if height > L * (1 + _EDGE_TOL):
            raise ConfigError(f"緊緻梯形高度 {height} 超過半長 {L}")
        return cls(TrapezoidKind.COMPACT, float(min(height, L)), x0=float(x0), L=float(L))

    @classmethod
    def unbounded(cls, height=INF):
        if height <= 0:
            raise ConfigError(f"高度必須 > 0，收到 {height}")
        return cls(TrapezoidKind.UNBOUNDED, float(height))

    @classmethod
    def semi_up(cls, b, height=INF):
        if height <= 0:
            raise ConfigError(f"高度必須 > 0，收到 {height}")
        return cls(TrapezoidKind.SEMI_UP, float(height), b=float(b))

    @classmethod
    def semi_down(cls, a, height=INF):
        if height <= 0:
            raise ConfigError(f"高度必須 > 0，收到 {height}")
        return cls(TrapezoidKind.SEMI_DOWN, float(height), a=float(a))

    @property
    def is_compact(self):
        return self.kind is TrapezoidKind.COMPACT

    @property
    def base(self):
        return self.slice(0.0)

    def slice(self, t):
        """
        K_t = {x : (t, x) ∈ K}

        Args:
            t: 時間（≥ 0）

        Returns:
            tuple | None: 閉區間 (lo, hi)，端點可為 ±inf；空集合回傳 None
        """
        if t < 0 or t > self.height:
            return None
        if self.kind is TrapezoidKind.COMPACT:
            lo, hi = self.x0 - self.L + t, self.x0 + self.L - t
        elif self.kind is TrapezoidKind.UNBOUNDED:
            lo, hi = -INF, INF
        elif self.kind is TrapezoidKind.SEMI_UP:
            lo, hi = self.b + t, INF
        else:
            lo, hi = -INF, self.a - t
        if lo > hi:
            return None
        return lo, hi

    def contains(self, point):
        """閉集合的精確包含判斷；point = (t, x)"""
        t, x = point
        interval = self.slice(t)
        return interval is not None and interval[0] <= x <= interval[1]

    def truncate(self, cutoff):
        """
        以 |x| ≤ cutoff 截斷成緊緻梯形（無界與半無界區域的計算形式）

        Args:
            cutoff: 截斷半徑 X_max

        Returns:
            Trapezoid: 底為 K₀ ∩ [−cutoff, cutoff] 的緊緻梯形
        """
        if self.is_compact:
            return self
        lo, hi = self.base
        lo = max(lo, -cutoff)
        hi = min(hi, cutoff)
        if hi <= lo:
            raise ConfigError(f"截斷半徑 {cutoff} 與區域底邊不相交")
        half = 0.5 * (hi - lo)
        return Trapezoid.compact(0.5 * (lo + hi), half, min(self.height, half))


@dataclass(frozen=True)
class DependenceTriangle:
    """依存三角形 T_(t0,x0)，底為 [x0 − t0, x0 + t0]"""

    apex: tuple
    base_interval: tuple

    @property
    def is_degenerate(self):
        return self.base_interval[0] == self.base_interval[1]


def dependence_triangle(K, t0, x0):
    """
    (t0, x0) 的依存三角形

    Raises:
        OutsideDomain: (t0, x0) 不在 K 內
    """
    if not K.contains((t0, x0)):
        raise OutsideDomain(f"點 ({t0}, {x0}) 不在區域內", {'t': t0, 'x': x0})
    return DependenceTriangle(apex=(t0, x0), base_interval=(x0 - t0, x0 + t0))


def tile_cover(K, delta, strict=True, height=None):
    """
    以底寬 2δ、步長 δ/2 的小梯形覆蓋 K 的底層

    Args:
        K: 緊緻梯形
        delta: 小梯形的半長 δ
        strict: True 時要求 δ ≤ L/2；False 時允許 δ ≤ L
        height: 小梯形高度，預設 δ/2（覆蓋 K ∩ [0, δ/2]）；δ = L 時預設為 δ

    Returns:
        list[Trapezoid]: 由左到右排列的小梯形

    Raises:
        DeltaTooLarge: δ 超過允許範圍
    """
    if not K.is_compact:
        raise ConfigError("tile_cover 只接受緊緻梯形")
    if delta <= 0:
        raise ConfigError(f"δ 必須 > 0，收到 {delta}")
    cap = K.L / 2 if strict else K.L
    if delta > cap * (1 + _EDGE_TOL):
        raise DeltaTooLarge(
            f"δ = {delta} 超過上限 {cap}",
            {'delta': delta, 'cap': cap, 'strict': strict},
        )
    if delta >= K.L * (1 - _EDGE_TOL):
        top = min(K.height, delta if height is None else height)
        return [Trapezoid.compact(K.x0, K.L, top)]

    top = min(K.height, delta / 2 if height is None else height, delta)
    first = K.x0 - K.L + delta
    last = K.x0 + K.L - delta
    stride = delta / 2
    count = int(math.floor((last - first) / stride * (1 + _EDGE_TOL))) + 1
    centers = [first + k * stride for k in range(count)]
    if last - centers[-1] > _EDGE_TOL * max(1.0, abs(last)):
        centers.append(last)
    return [Trapezoid.compact(y, delta, top) for y in centers]


def decompose_unbounded(K, lo, hi, Lbar):
    """
    無界區域（已截斷成底 [lo, hi]）的分解：左尾、核心、右尾

    左尾底為 [lo, lo + 2L̄]，右尾底為 [hi − 2L̄, hi]，核心底為 [lo + L̄, hi − L̄]；
    三者在高度 L̄/2 以下覆蓋整個區域。

    Returns:
        tuple[Trapezoid, Trapezoid, Trapezoid]: (left_tail, core, right_tail)
    """
    if hi - lo < 4 * Lbar * (1 - _EDGE_TOL):
        raise ConfigError(f"底邊 [{lo}, {hi}] 太短，無法分出寬度 {Lbar} 的尾端")
    top = min(K.height, Lbar / 2)
    left = Trapezoid.compact(lo + Lbar, Lbar, top)
    right = Trapezoid.compact(hi - Lbar, Lbar, top)
    core = Trapezoid.compact(0.5 * (lo + hi), 0.5 * (hi - lo) - Lbar, top)
    return left, core, right


def to_null(point):
    """(t, x) → (a, b) = (x + t, x − t)"""
    t, x = point
    return x + t, x - t


def from_null(coords):
    """
    (a, b) → (t, x) = ((a − b)/2, (a + b)/2)

    Raises:
        CausalityViolated: a < b（對應負時間）
    """
    a, b = coords
    if a < b:
        raise CausalityViolated(f"零座標 a={a} < b={b}", {'a': a, 'b': b})
    return (a - b) / 2, (a + b) / 2
