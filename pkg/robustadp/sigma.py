"""
robustadp/sigma.py
The worst-case expectation sigma_P(v) = inf { p . v : p in P } for every
supported uncertainty-set variant, plus a vertex-enumeration oracle used to
cross-check the interval solver.

All functions are pure. Callers pass v over the same outcomes as the set
(X ∪ Z, with terminal coordinates already set to zero).
"""

from __future__ import annotations
from dataclasses import dataclass

import numpy as np

from robustadp.errors import DimensionError, EmptyVertexListError, InfeasibleSetError, SupportTooLargeError
from robustadp.model import DIST_TOL, IntervalBox, Singleton, UncertaintySet, VertexList

ORACLE_MAX_SUPPORT = 12


@dataclass(frozen=True, eq=False)
class SigmaResult:
    """The infimum and a distribution attaining it."""
    value: float
    minimizer: np.ndarray


def _check_dims(v: np.ndarray, *vectors: np.ndarray) -> None:
    for w in vectors:
        if w.shape != v.shape:
            raise DimensionError(f"value vector has shape {v.shape}, distribution {w.shape}")


def sigma_singleton(v: np.ndarray, p: np.ndarray) -> SigmaResult:
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    _check_dims(v, p)
    return SigmaResult(float(p @ v), p.copy())


def _check_box(lo: np.ndarray, hi: np.ndarray) -> None:
    if np.any(lo > hi + DIST_TOL):
        raise InfeasibleSetError("interval box has lo > hi")
    if float(lo.sum()) > 1.0 + DIST_TOL:
        raise InfeasibleSetError(f"interval box infeasible: sum(lo) = {lo.sum():.12g} > 1")
    if float(hi.sum()) < 1.0 - DIST_TOL:
        raise InfeasibleSetError(f"interval box infeasible: sum(hi) = {hi.sum():.12g} < 1")


def sigma_interval(v: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> SigmaResult:
    """
    Minimise p . v over the box {lo <= p <= hi, sum(p) = 1}.

    Sort-greedy: start at lo and pour the free mass 1 - sum(lo) into the
    outcomes in ascending order of v, each up to its upper bound. Equal
    values are filled in index order.
    """
    v = np.asarray(v, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    _check_dims(v, lo, hi)
    _check_box(lo, hi)

    p = lo.copy()
    remaining = 1.0 - float(lo.sum())
    for i in np.argsort(v, kind="stable"):
        if remaining <= 0.0:
            break
        add = min(hi[i] - lo[i], remaining)
        p[i] += add
        remaining -= add
    return SigmaResult(float(p @ v), p)


def sigma_vertices(v: np.ndarray, vertices: np.ndarray) -> SigmaResult:
    """Minimum over the listed vertices; ties go to the lowest index."""
    v = np.asarray(v, dtype=float)
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[0] == 0:
        raise EmptyVertexListError("vertex list is empty")
    if vertices.shape[1] != v.shape[0]:
        raise DimensionError(f"value vector has shape {v.shape}, vertices {vertices.shape}")
    values = vertices @ v
    best = int(np.argmin(values))
    return SigmaResult(float(values[best]), vertices[best].copy())


def sigma(uset: UncertaintySet, v: np.ndarray) -> SigmaResult:
    """Dispatch to the solver for the set's variant."""
    match uset:
        case Singleton(p=p):
            return sigma_singleton(v, p)
        case IntervalBox(lo=lo, hi=hi):
            return sigma_interval(v, lo, hi)
        case VertexList(vertices=vertices):
            return sigma_vertices(v, vertices)
    raise TypeError(f"unknown uncertainty set {type(uset).__name__}")


def box_vertices(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """
    All vertices of {lo <= p <= hi, sum(p) = 1}.

    A vertex has every coordinate at a bound except at most one; that free
    coordinate is fixed by the sum constraint and must land inside its own
    bounds. Duplicates are not removed.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.shape[0]
    if n > ORACLE_MAX_SUPPORT:
        raise SupportTooLargeError(
            f"vertex enumeration supports at most {ORACLE_MAX_SUPPORT} outcomes, got {n}"
        )
    if n == 1:
        return np.ones((1, 1)) if lo[0] <= 1.0 + DIST_TOL and hi[0] >= 1.0 - DIST_TOL else np.zeros((0, 1))

    # bit patterns choosing lo (0) or hi (1) for the n - 1 fixed coordinates
    bits = (np.arange(2 ** (n - 1))[:, None] >> np.arange(n - 1)) & 1
    found = []
    for free in range(n):
        fixed = [i for i in range(n) if i != free]
        at_bounds = np.where(bits == 1, hi[fixed], lo[fixed])
        rest = 1.0 - at_bounds.sum(axis=1)
        ok = (rest >= lo[free] - DIST_TOL) & (rest <= hi[free] + DIST_TOL)
        block = np.empty((int(ok.sum()), n))
        block[:, fixed] = at_bounds[ok]
        block[:, free] = np.clip(rest[ok], lo[free], hi[free])
        found.append(block)
    return np.vstack(found)


def sigma_oracle(v: np.ndarray, uset: UncertaintySet) -> SigmaResult:
    """
    Brute-force sigma for verification.

    Interval boxes are solved by enumerating every vertex of the feasible
    polytope; the other variants defer to their direct solvers.
    """
    v = np.asarray(v, dtype=float)
    if uset.size > ORACLE_MAX_SUPPORT:
        raise SupportTooLargeError(
            f"vertex enumeration supports at most {ORACLE_MAX_SUPPORT} outcomes, got {uset.size}"
        )
    match uset:
        case IntervalBox(lo=lo, hi=hi):
            _check_dims(v, lo, hi)
            _check_box(lo, hi)
            vertices = box_vertices(lo, hi)
            values = vertices @ v
            best = int(np.argmin(values))
            return SigmaResult(float(values[best]), vertices[best])
    return sigma(uset, v)
