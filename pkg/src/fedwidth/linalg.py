"""Dense double-precision kernels: norms, symmetric eigensolver, matrix functions.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_FLOOR = 1e-10


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class EigDecomp:
    eigvals: np.ndarray  # ascending
    eigvecs: np.ndarray  # columns are eigenvectors

    @property
    def lambda_min(self) -> float:
        return float(self.eigvals[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigvals[-1])

    def reconstruct(self) -> np.ndarray:
        q = self.eigvecs
        return (q * self.eigvals) @ q.T


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-d matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: left is {a.shape[0]}x{a.shape[1]}, right is {b.shape[0]}x{b.shape[1]}; "
            f"inner dimensions {a.shape[1]} != {b.shape[0]}"
        )
    return a @ b


def _spectral_norm(a: np.ndarray, rtol: float = 1e-10, max_iter: int = 100_000) -> float:
    # power iteration on A^T A from the normalized all-ones vector
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return 0.0
    a = a / scale  # keeps A^T A away from underflow and overflow
    n = a.shape[1]
    starts = [np.full(n, 1.0 / np.sqrt(n))] + list(np.eye(n))
    for v in starts:
        if np.any(a.T @ (a @ v)):
            break
    est = 0.0
    for _ in range(max_iter):
        w = a.T @ (a @ v)
        v = w / np.linalg.norm(w)
        av = a @ v
        new = float(av @ av)  # Rayleigh quotient of A^T A
        if abs(new - est) <= rtol * new:
            return scale * float(np.sqrt(new))
        est = new
    return scale * float(np.sqrt(est))


def norm(a, kind: str = "frobenius") -> float:
    a = np.asarray(a, dtype=np.float64)
    if kind == "frobenius":
        if a.ndim != 2:
            raise DimensionError("frobenius norm needs a matrix")
        return float(np.sqrt(np.sum(a * a)))
    if kind == "spectral":
        if a.ndim != 2:
            raise DimensionError("spectral norm needs a matrix")
        return _spectral_norm(a)
    if kind == "l2":
        if a.ndim != 1:
            raise DimensionError("l2 norm needs a vector")
        return float(np.sqrt(a @ a))
    raise ValueError(f"unknown norm kind {kind!r}")


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for one cyclic sweep: n-1 rounds of disjoint (p, q) pairs, p < q."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            i, j = players[k], players[m - 1 - k]
            if i < n and j < n:
                ps.append(min(i, j))
                qs.append(max(i, j))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def eigh_sym(a, max_sweeps: int = 60) -> EigDecomp:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Each sweep visits every off-diagonal pair once, grouped into rounds of
    disjoint pairs so a whole round is applied as one vectorized rotation.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionError(f"eigh_sym needs a square matrix, got {n}x{m}")
    fro = norm(a)
    asym = norm(a - a.T)
    if asym > 1e-8 * fro:
        raise ValueError(f"matrix is not symmetric: ||A - A^T||_F = {asym:.3e} > 1e-8 * {fro:.3e}")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n == 1 or fro == 0.0:
        return EigDecomp(np.diag(a).copy(), v)

    rounds = _round_robin(n)
    tol = 1e-15 * fro
    for _ in range(max_sweeps):
        off = a - np.diag(np.diag(a))
        if np.sqrt(np.sum(off * off)) <= tol:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return EigDecomp(w[order], v[:, order])


def spectral_apply(e: EigDecomp, fn: Callable[[np.ndarray], np.ndarray],
                   floor: float = 0.0) -> np.ndarray:
    """Q diag(fn(max(lambda, floor * lambda_max))) Q^T."""
    if floor < 0:
        raise ValueError("floor must be >= 0")
    lam = e.eigvals
    if floor > 0:
        lam = np.maximum(lam, floor * max(e.lambda_max, 0.0))
    vals = np.asarray(fn(lam), dtype=np.float64)
    q = e.eigvecs
    return (q * vals) @ q.T


def expm(a) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a plain Taylor sum."""
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionError(f"expm needs a square matrix, got {n}x{m}")
    if not np.all(np.isfinite(a)):
        raise ValueError("expm: matrix has non-finite entries")
    fro = norm(a)
    s = 0
    while fro / 2.0**s > 0.5:
        s += 1
    x = a / 2.0**s
    total = np.eye(n)
    term = np.eye(n)
    k = 1
    while True:
        term = term @ x / k
        if norm(term) < 1e-16 * norm(total):
            break
        total = total + term
        k += 1
        if k > 200:
            break
    for _ in range(s):
        total = total @ total
    return total
