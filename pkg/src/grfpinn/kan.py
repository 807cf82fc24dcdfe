"""Kolmogorov-Arnold layers with clamped uniform cubic B-splines.

Each layer computes

    out_j = sum_i base_w[j, i] * silu(x_i) + spline_w[j, i] * sum_b coef[j, i, b] * B_b(x_i)

on inputs clamped to the grid range. Besides the forward map, a layer exposes
its analytic input Jacobian (needed for gravity from the potential and for the
inertia derivatives); both are registered as tape primitives, the Jacobian one
carrying second-derivative information so parameters of earlier layers in a
stack still receive exact gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor

__all__ = [
    "SplineGrid",
    "KanLayer",
    "KanStack",
    "bspline_basis",
    "bspline_basis_derivative",
    "kan_forward",
    "kan_input_jacobian",
]


@dataclass(frozen=True)
class SplineGrid:
    """Clamped uniform knot vector over [lo, hi].

    ``grid_size`` is the number of knot intervals G; the basis has G + degree
    functions.
    """

    degree: int = 3
    grid_size: int = 8
    lo: float = -1.0
    hi: float = 1.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if self.grid_size < 1:
            raise ValueError(f"grid_size must be >= 1, got {self.grid_size}")
        if not self.lo < self.hi:
            raise ValueError(f"grid range needs lo < hi, got [{self.lo}, {self.hi}]")
        inner = np.linspace(self.lo, self.hi, self.grid_size + 1)
        knots = np.concatenate([np.full(self.degree, self.lo), inner, np.full(self.degree, self.hi)])
        object.__setattr__(self, "knots", knots)
        table = _piecewise_table(knots, self.degree, self.grid_size, self.lo, self.hi)
        h = (self.hi - self.lo) / self.grid_size
        object.__setattr__(self, "_poly_flat", _derivative_tables(table, h))

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.degree

    def to_dict(self) -> dict:
        return {"degree": self.degree, "grid_size": self.grid_size, "lo": self.lo, "hi": self.hi}


def _basis_of_degree(x: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    """Cox-de Boor recursion up to ``degree``; x already inside [knots[0], knots[-1]]."""
    t = knots
    n0 = len(t) - 1
    # degree 0: half-open intervals, with the last non-empty interval closed at hi
    B = ((x[..., None] >= t[:-1]) & (x[..., None] < t[1:])).astype(np.float64)
    nonempty = np.nonzero(t[1:] > t[:-1])[0]
    last = nonempty[-1]
    at_end = x >= t[-1]
    if np.any(at_end):
        B[at_end] = 0.0
        B[at_end, last] = 1.0
    xe = x[..., None]
    for p in range(1, degree + 1):
        m = n0 - p
        left_den = t[p:p + m] - t[:m]
        right_den = t[p + 1:p + 1 + m] - t[1:1 + m]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (xe - t[:m]) / np.where(left_den > 0, left_den, 1.0), 0.0)
            right = np.where(right_den > 0, (t[p + 1:p + 1 + m] - xe) / np.where(right_den > 0, right_den, 1.0), 0.0)
        B = left * B[..., :m] + right * B[..., 1:m + 1]
    return B


def _piecewise_table(knots, degree, grid_size, lo, hi) -> np.ndarray:
    """Basis polynomials per knot interval: table[p, j, b] multiplies u**p on interval j.

    u in [0, 1] is the position inside interval j. Fitted from the Cox-de Boor
    values at interior points, which determines each cubic piece exactly up to
    rounding.
    """
    h = (hi - lo) / grid_size
    u = (np.arange(degree + 1) + 0.5) / (degree + 1)
    V = np.vander(u, degree + 1, increasing=True)
    table = np.empty((degree + 1, grid_size, grid_size + degree))
    for j in range(grid_size):
        vals = _basis_of_degree(lo + (j + u) * h, knots, degree)  # (k+1, nb)
        table[:, j, :] = np.linalg.solve(V, vals)
    return table


def _derivative_tables(table: np.ndarray, h: float) -> np.ndarray:
    """Stack d^r/dx^r of the interval polynomials for r = 0..k, still in powers of u.

    Returns (G * (k+1), (k+1) * nb): row j*(k+1)+p multiplies u**p on interval j,
    column block r holds the r-th derivative.
    """
    kp1, G, nb = table.shape
    blocks = []
    cur = table
    for r in range(kp1):
        blocks.append(cur.transpose(1, 0, 2).reshape(G * kp1, nb))
        nxt = np.zeros_like(cur)
        nxt[:-1] = cur[1:] * np.arange(1, kp1)[:, None, None] / h
        cur = nxt
    return np.concatenate(blocks, axis=1)


def _fast_basis(xc: np.ndarray, grid: SplineGrid, orders=(0,)) -> list:
    """Basis values / derivatives at clamped x from the piecewise table.

    The powers of the local coordinate are scattered into an interval-indexed
    row so that every requested order comes out of one matmul.
    """
    k, G, nb = grid.degree, grid.grid_size, grid.n_basis
    h = (grid.hi - grid.lo) / G
    s = ((xc - grid.lo) / h).ravel()
    j = np.clip(np.floor(s).astype(np.intp), 0, G - 1)
    u = s - j
    M = s.size
    A = np.zeros((M, G * (k + 1)))
    flat = A.reshape(-1)
    base = np.arange(M) * (G * (k + 1)) + j * (k + 1)
    up = np.ones(M)
    for p in range(k + 1):
        flat[base + p] = up
        up = up * u
    want = [r for r in orders if r <= k]
    cols = np.concatenate([np.arange(r * nb, (r + 1) * nb) for r in want]) if want else np.zeros(0, int)
    vals = A @ grid._poly_flat[:, cols]
    out, at = [], 0
    for r in orders:
        if r > k:
            out.append(np.zeros(xc.shape + (nb,)))
        else:
            out.append(np.ascontiguousarray(vals[:, at * nb:(at + 1) * nb]).reshape(xc.shape + (nb,)))
            at += 1
    return out


def _basis_derivative(x: np.ndarray, grid: SplineGrid, order: int) -> np.ndarray:
    """``order``-th derivative of every degree-k basis function at clamped x."""
    k = grid.degree
    t = grid.knots
    if order > k:
        return np.zeros(x.shape + (grid.n_basis,))
    F = _basis_of_degree(x, t, k - order)
    for p in range(k - order + 1, k + 1):
        m = len(t) - 1 - p
        den_a = t[p:p + m] - t[:m]
        den_b = t[p + 1:p + 1 + m] - t[1:1 + m]
        ca = np.where(den_a > 0, p / np.where(den_a > 0, den_a, 1.0), 0.0)
        cb = np.where(den_b > 0, p / np.where(den_b > 0, den_b, 1.0), 0.0)
        F = ca * F[..., :m] - cb * F[..., 1:m + 1]
    return F


def bspline_basis(x, grid: SplineGrid) -> np.ndarray:
    """Basis values at x (scalar or array); trailing axis has length G + k.

    Inputs outside [lo, hi] are clamped to the boundary first.
    """
    xc = np.clip(np.asarray(x, dtype=np.float64), grid.lo, grid.hi)
    return _basis_of_degree(xc, grid.knots, grid.degree)


def bspline_basis_derivative(x, grid: SplineGrid, order: int = 1) -> np.ndarray:
    """d^order B_b / dx^order; identically zero where x lies outside [lo, hi]."""
    xa = np.asarray(x, dtype=np.float64)
    xc = np.clip(xa, grid.lo, grid.hi)
    d = _basis_derivative(xc, grid, order)
    outside = (xa < grid.lo) | (xa > grid.hi)
    if np.any(outside):
        d = np.where(outside[..., None], 0.0, d)
    return d


def _silu_derivs(x: np.ndarray):
    s = 1.0 / (1.0 + np.exp(-x))
    f = x * s
    d1 = s * (1.0 + x * (1.0 - s))
    d2 = s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
    return f, d1, d2


class KanLayer:
    """One KAN layer; parameters are diffcore leaves named ``<prefix>.<field>``."""

    def __init__(self, in_dim: int, out_dim: int, grid: SplineGrid | None = None,
                 rng: np.random.Generator | None = None, prefix: str = "kan",
                 init_scale: float = 1.0):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.grid = grid or SplineGrid()
        self.prefix = prefix
        rng = rng if rng is not None else np.random.default_rng(0)
        nb = self.grid.n_basis
        bound = init_scale / np.sqrt(self.in_dim)
        self.base_w = dc.parameter(rng.uniform(-bound, bound, (out_dim, in_dim)), f"{prefix}.base_w")
        self.spline_w = dc.parameter(np.full((out_dim, in_dim), init_scale), f"{prefix}.spline_w")
        self.coef = dc.parameter(rng.normal(0.0, 0.1 / np.sqrt(self.in_dim), (out_dim, in_dim, nb)),
                                 f"{prefix}.coef")
        self._last = None

    def parameters(self) -> list[Tensor]:
        return [self.base_w, self.spline_w, self.coef]

    def _check(self, x: Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.prefix}: expected batch of shape (N, {self.in_dim}), got {x.shape}")

    def _cache(self, xv: np.ndarray) -> dict:
        """Per-input quantities shared by forward, Jacobian and their VJPs."""
        c = self._last
        # identity plus content check: callers may perturb inputs in place
        if c is not None and c["x"] is xv and np.array_equal(c["copy"], xv):
            return c
        g = self.grid
        inside = (xv >= g.lo) & (xv <= g.hi)
        xc = np.clip(xv, g.lo, g.hi)
        S, dS, d2S = _silu_derivs(xc)
        c = {"x": xv, "copy": xv.copy(), "xc": xc, "mask": inside.astype(np.float64), "S": S, "dS": dS, "d2S": d2S}
        self._last = c
        return c

    def _basis(self, c: dict, order: int) -> np.ndarray:
        """Basis in (N, in, nb) layout."""
        key = f"B{order}"
        if key not in c:
            c[key] = np.ascontiguousarray(self._basis_t(c, order).transpose(1, 0, 2))
        return c[key]

    def _W(self) -> np.ndarray:
        return self.coef.value * self.spline_w.value[:, :, None]  # (out, in, nb)

    def forward(self, x) -> Tensor:
        x = dc.tensor(x)
        self._check(x)
        xv = x.value
        N = xv.shape[0]
        out_d, in_d, nb = self.out_dim, self.in_dim, self.grid.n_basis
        c = self._cache(xv)
        S, dS, mask = c["S"], c["dS"], c["mask"]
        B = self._basis(c, 0)  # (N, in, nb)
        bw, sw, cf = self.base_w.value, self.spline_w.value, self.coef.value
        W = self._W().reshape(out_d, in_d * nb)
        Bf = B.reshape(N, in_d * nb)
        value = S @ bw.T + Bf @ W.T

        def vjp(g):
            g_bw = g.T @ S
            gW = (g.T @ Bf).reshape(out_d, in_d, nb)
            g_sw = (gW * cf).sum(axis=2)
            g_cf = gW * sw[:, :, None]
            g_x = None
            if x.requires_grad:
                dBt = self._basis_t(c, 1)  # (in, N, nb)
                gWx = (g @ W).reshape(N, in_d, nb).transpose(1, 0, 2)
                g_x = ((g @ bw) * dS + (gWx * dBt).sum(axis=2).T) * mask
            return g_x, g_bw, g_sw, g_cf

        return dc.custom(value, (x, self.base_w, self.spline_w, self.coef), vjp)

    def _basis_t(self, c: dict, order: int) -> np.ndarray:
        """Basis in (in, N, nb) layout, contiguous, for per-input batched matmuls.

        Values, first and second derivatives come out of one table product.
        """
        key = f"Bt{order}"
        if key not in c:
            orders = (0, 1, 2) if order <= 2 else (order,)
            vals = _fast_basis(np.ascontiguousarray(c["xc"].T), self.grid, orders)
            for o, v in zip(orders, vals):
                c[f"Bt{o}"] = v
        return c[key]

    def input_jacobian(self, x) -> Tensor:
        """Per-sample d out / d in, shape (N, out, in); a tape primitive."""
        x = dc.tensor(x)
        self._check(x)
        xv = x.value
        c = self._cache(xv)
        dS, d2S, mask = c["dS"], c["d2S"], c["mask"]
        dBt = self._basis_t(c, 1)  # (in, N, nb)
        bw, sw, cf = self.base_w.value, self.spline_w.value, self.coef.value
        W = self._W()
        Wt = np.ascontiguousarray(W.transpose(1, 2, 0))  # (in, nb, out)
        spl = np.matmul(dBt, Wt).transpose(1, 2, 0)  # (N, out, in)
        value = (bw[None] * dS[:, None, :] + spl) * mask[:, None, :]

        def vjp(G):
            Gm = G * mask[:, None, :]
            Gt = np.ascontiguousarray(Gm.transpose(2, 0, 1))  # (in, N, out)
            g_bw = np.einsum("noi,ni->oi", Gm, dS)
            gW = np.matmul(Gt.transpose(0, 2, 1), dBt).transpose(1, 0, 2)  # (out, in, nb)
            g_sw = (gW * cf).sum(axis=2)
            g_cf = gW * sw[:, :, None]
            g_x = None
            if x.requires_grad:
                d2Bt = self._basis_t(c, 2)
                GW = np.matmul(Gt, np.ascontiguousarray(W.transpose(1, 0, 2)))  # (in, N, nb)
                g_x = np.einsum("noi,oi->ni", Gm, bw) * d2S + (GW * d2Bt).sum(axis=2).T
            return g_x, g_bw, g_sw, g_cf

        return dc.custom(value, (x, self.base_w, self.spline_w, self.coef), vjp)

    def state(self) -> dict:
        return {p.name: p.value for p in self.parameters()}


class KanStack:
    """Chain of KAN layers, widths ``[in, h1, ..., out]``."""

    def __init__(self, widths, grid: SplineGrid | None = None,
                 rng: np.random.Generator | None = None, prefix: str = "kan"):
        widths = [int(w) for w in widths]
        if len(widths) < 2:
            raise ValueError("a KAN stack needs at least input and output widths")
        self.widths = widths
        self.grid = grid or SplineGrid()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = [KanLayer(a, b, self.grid, rng, prefix=f"{prefix}.{i}")
                       for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x) -> Tensor:
        h = dc.tensor(x)
        for layer in self.layers:
            h = layer.forward(h)
        return h

    def forward_and_jacobian(self, x) -> tuple[Tensor, Tensor]:
        """Output (N, out) and input Jacobian (N, out, in) in one pass."""
        h = dc.tensor(x)
        jac = None
        for layer in self.layers:
            D = layer.input_jacobian(h)
            jac = D if jac is None else dc.matmul(D, jac)
            h = layer.forward(h)
        return h, jac


def kan_forward(layer: KanLayer | KanStack, batch) -> Tensor:
    return layer.forward(batch)


def kan_input_jacobian(layer: KanLayer | KanStack, x) -> np.ndarray:
    """Analytic d out / d x at a single input vector, shape (out, in)."""
    xv = np.asarray(dc.tensor(x).value, dtype=np.float64)
    if xv.ndim != 1 or xv.shape[0] != layer.in_dim:
        raise ShapeError(f"expected input vector of length {layer.in_dim}, got shape {xv.shape}")
    if isinstance(layer, KanStack):
        _, jac = layer.forward_and_jacobian(xv[None])
    else:
        jac = layer.input_jacobian(xv[None])
    return jac.value[0]
