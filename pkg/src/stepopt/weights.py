"""Solver weights for multistep exponential-integrator updates.

Each step of the sampler replaces the prediction function on one
log-SNR interval by a local polynomial built from the most recent
function values, either the interpolating (Lagrange) polynomial through
those values or a Taylor polynomial whose derivatives are estimated by
finite-difference stencils.  The update coefficient attached to each
function value is the exact integral of ``exp(lam)`` times the matching
basis polynomial over the step interval.

Because raw coefficients carry a factor ``exp(lam)`` that can overflow
for schedules reaching large log-SNR, every table stores weights
pre-multiplied by ``exp(-scale_anchor)``.  The anchor defaults to the
largest grid value, keeping all stored magnitudes of order one; the
downstream objective is scale invariant in its minimizer, so the anchor
never changes any decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .schedules import LambdaGrid

__all__ = [
    "OrderSchedule",
    "WeightTable",
    "AggregatedCoefficients",
    "exp_poly_integral",
    "lagrange_basis",
    "weights_lagrange",
    "weights_taylor",
    "aggregate",
]

MAX_ORDER = 4
MAX_TAYLOR_ORDER = 3

# Below this interval width the antiderivative difference cancels
# (absolute error ~ eps * m! against a value ~ h^(m+1)); switch to a
# positive-term series, which is uniformly accurate there.
_SERIES_WIDTH = 0.25


@dataclass(frozen=True)
class OrderSchedule:
    """Per-step local orders ``k_1 .. k_N`` with ``k_n <= n``."""

    k: tuple[int, ...]

    def __post_init__(self):
        k = tuple(int(v) for v in self.k)
        object.__setattr__(self, "k", k)
        if len(k) < 1:
            raise ValueError("order schedule must cover at least one step")
        for n, kn in enumerate(k, start=1):
            if not 1 <= kn <= n:
                raise ValueError(f"step {n} has order {kn}; need 1 <= order <= {n}")
            if kn > MAX_ORDER:
                raise ValueError(f"order {kn} exceeds the implementation cap {MAX_ORDER}")

    @classmethod
    def warmup(cls, n_steps: int, max_order: int) -> "OrderSchedule":
        """The usual ramp: order n on step n until ``max_order`` is reached."""
        return cls(tuple(min(n, max_order) for n in range(1, n_steps + 1)))

    def __len__(self) -> int:
        return len(self.k)


@dataclass(frozen=True)
class WeightTable:
    """Scaled solver weights keyed by (step index n, basis index j)."""

    entries: dict[tuple[int, int], float]
    scale_anchor: float

    def step_weights(self, n: int) -> np.ndarray:
        js = sorted(j for (m, j) in self.entries if m == n)
        return np.array([self.entries[(n, j)] for j in js])


@dataclass(frozen=True)
class AggregatedCoefficients:
    """Absolute per-evaluation-point weight totals, same scale anchor."""

    c: np.ndarray
    scale_anchor: float

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "c", c)
        c.setflags(write=False)


def exp_poly_integral(coeffs, a: float, b: float, shift: float = 0.0) -> float:
    """Exact integral of ``exp(lam - shift) * p(lam)`` over [a, b].

    ``coeffs`` are ascending polynomial coefficients, degree at most 3.
    The integral is evaluated in the local coordinate ``u = lam - a``:
    re-expand the polynomial around ``a``, then combine the moments
    ``int_0^h exp(u) u^m du`` via the closed-form antiderivative

        d/du [exp(u) * (u^m - m u^(m-1) + m(m-1) u^(m-2) - ...)] = exp(u) u^m,

    switching to the (all-positive) power series of those moments on
    narrow intervals where the antiderivative difference cancels.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 1 or coeffs.size == 0 or coeffs.size > 4:
        raise ValueError("polynomial degree must be between 0 and 3")
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")

    h = b - a
    q = _shift_poly(coeffs, a)
    try:
        total = 0.0
        for m, qm in enumerate(q):
            if qm != 0.0:
                total += qm * _exp_moment(m, h)
        value = math.exp(a - shift) * total
    except OverflowError:
        raise OverflowError(
            f"integral of exp(lam - {shift}) over [{a}, {b}] is not finite"
        ) from None
    if not math.isfinite(value):
        raise OverflowError(
            f"integral of exp(lam - {shift}) over [{a}, {b}] is not finite"
        )
    return value


def _shift_poly(coeffs, a: float) -> list[float]:
    """Coefficients of p(a + u) in powers of u (repeated synthetic division)."""
    q = list(map(float, coeffs))
    d = len(q) - 1
    for i in range(d):
        for j in range(d - 1, i - 1, -1):
            q[j] += a * q[j + 1]
    return q


def _exp_moment(m: int, h: float) -> float:
    """int_0^h exp(u) u^m du, exact to round-off for any h > 0."""
    if h >= _SERIES_WIDTH:
        # exp(h) * S_m(h) - S_m(0) with S_m the antiderivative polynomial
        s_h = (
            1.0,
            h - 1.0,
            h * h - 2.0 * h + 2.0,
            ((h - 3.0) * h + 6.0) * h - 6.0,
        )[m]
        s_0 = (1.0, -1.0, 2.0, -6.0)[m]
        return math.exp(h) * s_h - s_0
    term = h ** (m + 1) / (m + 1)
    total = term
    k = 1
    while True:
        term *= h * (m + k) / (k * (m + k + 1))
        total += term
        if term <= 1e-18 * total or k > 60:
            return total
        k += 1


def lagrange_basis(nodes, j: int) -> np.ndarray:
    """Ascending coefficients of the j-th Lagrange basis polynomial."""
    nodes = np.asarray(nodes, dtype=float)
    if not 0 <= j < nodes.size:
        raise ValueError(f"basis index {j} out of range for {nodes.size} nodes")
    if np.unique(nodes).size != nodes.size:
        raise ValueError("interpolation nodes must be distinct")
    return np.array(_lagrange_coeffs(list(map(float, nodes)), j))


def _lagrange_coeffs(nodes: list[float], j: int) -> list[float]:
    coeffs = [1.0]
    denom = 1.0
    for i, node in enumerate(nodes):
        if i == j:
            continue
        # multiply by (u - node)
        coeffs = [0.0] + coeffs
        for m in range(len(coeffs) - 1):
            coeffs[m] -= node * coeffs[m + 1]
        denom *= nodes[j] - node
    return [c / denom for c in coeffs]


def _taylor_value_polys(local_nodes: list[float]) -> list[list[float]]:
    """Per-function-value coefficient polynomials of the Taylor variant.

    ``local_nodes`` are the evaluation points relative to the newest one
    (so the last entry is 0).  The constant term sits entirely on the
    newest value; the first derivative uses the two newest values and the
    second derivative the three newest, with stencils that vanish on
    constants.
    """
    k = len(local_nodes)
    if k == 1:
        return [[1.0]]
    a = -local_nodes[-2]  # gap to the previous node
    if k == 2:
        return [[0.0, -1.0 / a], [1.0, 1.0 / a]]
    b = local_nodes[-2] - local_nodes[-3]  # gap between the two older nodes
    return [
        [0.0, 0.0, 1.0 / (b * (a + b))],
        [0.0, -1.0 / a, -1.0 / (a * b)],
        [1.0, 1.0 / a, 1.0 / (a * (a + b))],
    ]


def _step_weights(lam, n: int, k: int, kind: str, shift: float) -> list[float]:
    """Scaled weights of step ``n`` (1-based), one per basis index j.

    Work happens in the local coordinate ``u = lam - lam[n-1]`` so the
    polynomial expansion stays well conditioned regardless of where the
    grid sits on the log-SNR axis.  All basis polynomials of the step
    share the same exponential moments.
    """
    origin = lam[n - 1]
    h = lam[n] - origin
    local_nodes = [lam[n - k + i] - origin for i in range(k)]
    if kind == "lagrange":
        polys = [_lagrange_coeffs(local_nodes, j) for j in range(k)]
    elif kind == "taylor":
        if k > MAX_TAYLOR_ORDER:
            raise ValueError(
                f"taylor weights support order <= {MAX_TAYLOR_ORDER}, got {k}"
            )
        polys = _taylor_value_polys(local_nodes)
    else:
        raise ValueError(f"unknown polynomial kind {kind!r}")
    try:
        scale = math.exp(origin - shift)
        moments = [_exp_moment(m, h) for m in range(k)]
    except OverflowError:
        raise OverflowError(
            f"weights of step {n} are not finite at scale anchor {shift}"
        ) from None
    return [scale * math.fsum(c * moments[m] for m, c in enumerate(p)) for p in polys]


def _table_entries(lam: np.ndarray, orders: OrderSchedule, kind: str, anchor: float) -> dict:
    if len(orders) != lam.size - 1:
        raise ValueError(
            f"order schedule covers {len(orders)} steps but grid has {lam.size - 1}"
        )
    entries: dict[tuple[int, int], float] = {}
    for n, k in enumerate(orders.k, start=1):
        for j, w in enumerate(_step_weights(lam, n, k, kind, anchor)):
            entries[(n, j)] = float(w)
    return entries


def _build_table(grid: LambdaGrid, orders: OrderSchedule, kind: str, scale_anchor) -> WeightTable:
    anchor = float(grid.lam[-1]) if scale_anchor is None else float(scale_anchor)
    entries = _table_entries(grid.lam, orders, kind, anchor)
    return WeightTable(entries=entries, scale_anchor=anchor)


def weights_lagrange(grid: LambdaGrid, orders: OrderSchedule, scale_anchor=None) -> WeightTable:
    """Weights of the interpolating-polynomial solver on the given grid."""
    return _build_table(grid, orders, "lagrange", scale_anchor)


def weights_taylor(grid: LambdaGrid, orders: OrderSchedule, scale_anchor=None) -> WeightTable:
    """Weights of the Taylor-expansion solver on the given grid."""
    return _build_table(grid, orders, "taylor", scale_anchor)


def _signed_group_sums(entries: dict, orders: OrderSchedule) -> np.ndarray:
    """Total weight multiplying each evaluation point i = n - k_n + j."""
    sums = np.zeros(len(orders))
    for (n, j), w in entries.items():
        sums[n - orders.k[n - 1] + j] += w
    return sums


def aggregate(table: WeightTable, orders: OrderSchedule) -> AggregatedCoefficients:
    """Absolute per-evaluation-point totals of the table's weights."""
    signed = _signed_group_sums(table.entries, orders)
    return AggregatedCoefficients(c=np.abs(signed), scale_anchor=table.scale_anchor)
