"""Structured inverse-dynamics head.

Learned inertia M(q) = L(q) L(q)^T + eps*I with a softplus-positive diagonal,
gravity as the gradient of a learned potential, Coriolis via Christoffel
symbols of the learned M, and the contact-force recovery

    tau_c = M qdd + C qd + G - tau_eff
    f_raw = (J J^T + lam^2 I)^{-1} J tau_c
    f_z   = max(f_raw, 0)

Batched functions take arrays of shape (N, n) and return diffcore tensors so
the same code serves training (tape active) and evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor
from .kan import KanStack, SplineGrid

__all__ = [
    "InputAffine",
    "InertiaHead",
    "PotentialHead",
    "DlsConfig",
    "factor_from_entries",
    "inertia_from_factor",
    "assemble_inertia",
    "gravity_vector",
    "potential_energy",
    "inertia_derivatives",
    "coriolis_matrix",
    "coriolis_from_derivatives",
    "contact_generalized_force",
    "dls_matrix",
    "dls_solve",
    "project_nonneg",
]


class InputAffine:
    """Maps raw features onto [-1, 1] using training-set min/max."""

    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        span = hi - lo
        # constant features: unit span so the map stays finite
        span = np.where(span > 1e-12, span, 1.0)
        self.lo = lo
        self.hi = lo + span
        self.scale = 2.0 / span
        self.shift = -1.0 - self.scale * lo

    @classmethod
    def identity(cls, dim: int) -> "InputAffine":
        return cls(-np.ones(dim), np.ones(dim))

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return v * self.scale + self.shift


def _tril_indices(n: int):
    rows, cols = np.tril_indices(n, k=-1)
    return rows, cols


def _placement(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Constant maps from (diag entries, strict-lower entries) to flat n*n."""
    m_off = n * (n - 1) // 2
    P_diag = np.zeros((n, n * n))
    P_diag[np.arange(n), np.arange(n) * n + np.arange(n)] = 1.0
    rows, cols = _tril_indices(n)
    P_off = np.zeros((m_off, n * n))
    P_off[np.arange(m_off), rows * n + cols] = 1.0
    return P_diag, P_off


def factor_from_entries(raw, n: int) -> Tensor:
    """Lower-triangular L from raw head outputs (..., n(n+1)/2).

    The first n entries are the diagonal before softplus; the rest fill the
    strict lower triangle row by row.
    """
    raw = dc.tensor(raw)
    m = n * (n + 1) // 2
    if raw.shape[-1] != m:
        raise ShapeError(f"expected {m} factor entries for n={n}, got shape {raw.shape}")
    P_diag, P_off = _placement(n)
    lead = raw.shape[:-1]
    flat = dc.reshape(raw, (-1, m))
    diag = dc.softplus(dc.index(flat, (slice(None), slice(0, n))))
    L = dc.matmul(diag, P_diag)
    if n > 1:
        L = dc.add(L, dc.matmul(dc.index(flat, (slice(None), slice(n, m))), P_off))
    return dc.reshape(L, lead + (n, n))


def inertia_from_factor(L, eps: float) -> Tensor:
    L = dc.tensor(L)
    n = L.shape[-1]
    return dc.add(dc.matmul(L, dc.transpose(L, tuple(range(L.ndim - 2)) + (L.ndim - 1, L.ndim - 2))),
                  eps * np.eye(n))


def _placement_all(n: int) -> np.ndarray:
    P_diag, P_off = _placement(n)
    return np.vstack([P_diag, P_off]) if n > 1 else P_diag


def _swap_last(t: Tensor) -> Tensor:
    axes = tuple(range(t.ndim - 2)) + (t.ndim - 1, t.ndim - 2)
    return dc.transpose(t, axes)


@dataclass
class DlsConfig:
    damping: float = 0.05

    def __post_init__(self):
        if not self.damping > 0:
            raise ValueError(f"DLS damping must be > 0, got {self.damping}")


class InertiaHead:
    """DynamicsKAN: q -> n(n+1)/2 factor entries -> M(q)."""

    def __init__(self, n: int, hidden=(16,), grid: SplineGrid | None = None,
                 eps: float = 1e-3, affine: InputAffine | None = None,
                 rng: np.random.Generator | None = None):
        if eps <= 0:
            raise ValueError("inertia floor eps must be > 0")
        self.n = int(n)
        self.eps = float(eps)
        self.affine = affine or InputAffine.identity(self.n)
        m = self.n * (self.n + 1) // 2
        self.kan = KanStack([self.n, *hidden, m], grid, rng, prefix="inertia")

    def parameters(self) -> list[Tensor]:
        return self.kan.parameters()

    def _check_finite(self, raw: np.ndarray, q: np.ndarray) -> None:
        if np.isfinite(raw).all():
            return
        bad = [p.name for p in self.parameters() if not np.isfinite(p.value).all()]
        detail = f"non-finite parameters: {bad}" if bad else "all parameters finite"
        raise FloatingPointError(f"inertia head produced non-finite output ({detail}); "
                                 f"q range [{np.min(q)}, {np.max(q)}]")

    def evaluate(self, q: np.ndarray, derivatives: bool = True) -> tuple[Tensor, Tensor | None]:
        """M (N, n, n) and, optionally, dM (N, k, i, j) = dM_ij / dq_k."""
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != self.n:
            raise ShapeError(f"inertia head expects q of shape (N, {self.n}), got {q.shape}")
        n = self.n
        x = self.affine(q)
        if not derivatives:
            raw = self.kan.forward(x)
            self._check_finite(raw.value, q)
            return inertia_from_factor(factor_from_entries(raw, n), self.eps), None
        raw, jac = self.kan.forward_and_jacobian(x)
        self._check_finite(raw.value, q)
        L = factor_from_entries(raw, n)
        M = inertia_from_factor(L, self.eps)
        # chain through the input affine: d raw / d q = d raw / d x * scale
        draw = dc.mul(jac, self.affine.scale[None, None, :])  # (N, m, k)
        # softplus' = sigmoid on the diagonal entries
        d_diag = dc.mul(dc.index(draw, (slice(None), slice(0, n), slice(None))), _sigmoid_col(raw, n))
        if n > 1:
            m = n * (n + 1) // 2
            d_fac = dc.concat([d_diag, dc.index(draw, (slice(None), slice(n, m), slice(None)))], axis=1)
        else:
            d_fac = d_diag
        # one placement matmul: (N, k, m) @ (m, n*n)
        dL = dc.matmul(_swap_last(d_fac), _placement_all(n))
        dL = dc.reshape(dL, (q.shape[0], n, n, n))  # (N, k, i, j)
        A = dc.matmul(dL, dc.reshape(_swap_last(L), (q.shape[0], 1, n, n)))
        dM = dc.add(A, _swap_last(A))
        return M, dM


def _sigmoid_col(raw: Tensor, n: int) -> Tensor:
    s = dc.sigmoid(dc.index(raw, (slice(None), slice(0, n))))
    return dc.reshape(s, (raw.shape[0], n, 1))


class PotentialHead:
    """PotentialKAN: q -> scalar V(q); G = dV/dq."""

    def __init__(self, n: int, hidden=(16,), grid: SplineGrid | None = None,
                 affine: InputAffine | None = None, rng: np.random.Generator | None = None,
                 scale: float = 1.0):
        self.n = int(n)
        self.affine = affine or InputAffine.identity(self.n)
        self.scale = float(scale)
        self.kan = KanStack([self.n, *hidden, 1], grid, rng, prefix="potential")

    def parameters(self) -> list[Tensor]:
        return self.kan.parameters()

    def evaluate(self, q: np.ndarray) -> tuple[Tensor, Tensor]:
        """V (N,) and G (N, n)."""
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != self.n:
            raise ShapeError(f"potential head expects q of shape (N, {self.n}), got {q.shape}")
        V, jac = self.kan.forward_and_jacobian(self.affine(q))
        N = q.shape[0]
        G = dc.mul(dc.reshape(jac, (N, self.n)), self.scale * self.affine.scale[None, :])
        return dc.scale(dc.reshape(V, (N,)), self.scale), G


def coriolis_from_derivatives(dM, qd) -> Tensor:
    """C_ij = sum_k 1/2 (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i) qd_k, batched."""
    qd = np.asarray(dc.tensor(qd).value)
    dM = dc.tensor(dM)
    N, n = qd.shape
    # t1_ij = sum_k d_k M_ij qd_k;  t3_ij = sum_k d_i M_jk qd_k;  the middle term is t3 transposed
    # because every d_k M is symmetric
    t1 = dc.reshape(dc.matmul(qd[:, None, :], dc.reshape(dM, (N, n, n * n))), (N, n, n))
    t3 = dc.reshape(dc.matmul(dc.reshape(dM, (N, n * n, n)), qd[:, :, None]), (N, n, n))
    return dc.scale(dc.add(t1, dc.sub(_swap_last(t3), t3)), 0.5)


def _single(q, n: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (n,):
        raise ShapeError(f"expected a vector of length {n}, got shape {q.shape}")
    return q[None]


def assemble_inertia(head: InertiaHead, q) -> np.ndarray:
    M, _ = head.evaluate(_single(q, head.n), derivatives=False)
    return M.value[0]


def inertia_derivatives(head: InertiaHead, q) -> np.ndarray:
    """dM[k] = dM/dq_k at one configuration, shape (n, n, n)."""
    _, dM = head.evaluate(_single(q, head.n))
    return dM.value[0]


def potential_energy(head: PotentialHead, q) -> float:
    V, _ = head.evaluate(_single(q, head.n))
    return float(V.value[0])


def gravity_vector(head: PotentialHead, q) -> np.ndarray:
    _, G = head.evaluate(_single(q, head.n))
    return G.value[0]


def coriolis_matrix(head: InertiaHead, q, qd) -> np.ndarray:
    qd = _single(qd, head.n)
    _, dM = head.evaluate(_single(q, head.n))
    return coriolis_from_derivatives(dM, qd).value[0]


def contact_generalized_force(M, C, G, qdd, qd, tau_eff):
    """tau_c = M qdd + C qd + G - tau_eff; works on single vectors or batches.

    Returns a Tensor when any argument is one, otherwise an ndarray.
    """
    want_tensor = any(isinstance(a, Tensor) for a in (M, C, G, qdd, qd, tau_eff))
    M, C, G, qdd, qd, tau_eff = (dc.tensor(a) for a in (M, C, G, qdd, qd, tau_eff))
    n = M.shape[-1]
    for name, a in (("C", C),):
        if a.shape != M.shape:
            raise ShapeError(f"{name} shape {a.shape} does not match M shape {M.shape}")
    if M.shape[-2] != n:
        raise ShapeError(f"M must be square, got {M.shape}")
    for name, a in (("G", G), ("qdd", qdd), ("qd", qd), ("tau_eff", tau_eff)):
        if a.shape != M.shape[:-1]:
            raise ShapeError(f"{name} shape {a.shape} does not match M shape {M.shape}")
    if M.ndim == 2:
        Mq = dc.einsum("ij,j->i", M, qdd)
        Cq = dc.einsum("ij,j->i", C, qd)
    else:
        Mq = dc.einsum("nij,nj->ni", M, qdd)
        Cq = dc.einsum("nij,nj->ni", C, qd)
    out = dc.sub(dc.add(dc.add(Mq, Cq), G), tau_eff)
    return out if want_tensor else out.value


def dls_matrix(J_n, damping: float) -> np.ndarray:
    """(J J^T + lam^2 I)^{-1} J for a single (2, n) Jacobian or a batch (N, 2, n)."""
    J = np.asarray(J_n, dtype=np.float64)
    if J.shape[-2] != 2:
        raise ShapeError(f"contact Jacobian must have 2 rows, got shape {J.shape}")
    if not damping > 0:
        raise ValueError(f"DLS damping must be > 0, got {damping}")
    A = J @ np.swapaxes(J, -1, -2) + damping ** 2 * np.eye(2)
    return np.linalg.solve(A, J)


def dls_solve(J_n, tau_c, cfg: DlsConfig | float = DlsConfig()):
    """f_raw = (J J^T + lam^2 I)^{-1} J tau_c. Tensor in, Tensor out."""
    lam = cfg.damping if isinstance(cfg, DlsConfig) else float(cfg)
    J = np.asarray(J_n, dtype=np.float64)
    want_tensor = isinstance(tau_c, Tensor)
    tau = dc.tensor(tau_c)
    if tau.shape[-1] != J.shape[-1] or tau.shape[:-1] != J.shape[:-2]:
        raise ShapeError(f"tau_c shape {tau.shape} does not match J_n shape {J.shape}")
    D = dls_matrix(J, lam)
    out = dc.einsum("fi,i->f", D, tau) if J.ndim == 2 else dc.einsum("nfi,ni->nf", D, tau)
    return out if want_tensor else out.value


def project_nonneg(f_raw):
    """Componentwise max(f, 0); idempotent."""
    if isinstance(f_raw, Tensor):
        return dc.relu(f_raw)
    return np.maximum(np.asarray(f_raw, dtype=np.float64), 0.0)
