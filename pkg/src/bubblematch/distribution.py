"""Exact evolution of the extended type distribution.

All maps accept arrays with leading batch dimensions: a distribution has shape
``(..., K, K+1)`` and the tables the shapes documented on
:class:`~bubblematch.core.ProbabilityTable` with the same leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .core import TOLERANCES, TimeGrid, TypeSpace, _fmt

__all__ = [
    "post_mutation", "post_matching", "breakup_map", "gamma_step", "transition_matrix",
    "transition_matrix_closed_form", "evolve", "Evolution", "TransitionMatrix", "cell_index",
]


def _check_mass(p: np.ndarray, where: str) -> np.ndarray:
    """Clamp round-off negatives and raise on genuine mass drift or negativity."""
    drift = np.abs(p.sum(axis=(-1, -2)) - 1.0)
    if np.any(drift > TOLERANCES["normalization"]):
        raise FloatingPointError(f"{where}: mass drift {drift.max():.3e} exceeds tolerance")
    if np.any(p < -TOLERANCES["table"]):
        raise FloatingPointError(f"{where}: negative mass {p.min():.3e}")
    return np.maximum(p, 0.0)


def post_mutation(p, eta) -> np.ndarray:
    """Apply independent mutation to both members of matched pairs and to single agents."""
    p = np.asarray(p, dtype=float)
    eta = np.asarray(eta, dtype=float)
    K = p.shape[-2]
    out = np.empty(np.broadcast_shapes(p.shape, eta.shape[:-2] + p.shape[-2:]))
    etaT = np.swapaxes(eta, -1, -2)
    out[..., :K] = etaT @ p[..., :K] @ eta
    out[..., K] = (etaT @ p[..., K, None])[..., 0]
    return out


def post_matching(pt, theta, check: bool = True) -> np.ndarray:
    """Move ``theta_kl * p_kJ`` from the unmatched cell into cell (k, l)."""
    pt = np.asarray(pt, dtype=float)
    theta = np.asarray(theta, dtype=float)
    K = pt.shape[-2]
    pJ = pt[..., K]
    out = np.empty(np.broadcast_shapes(pt.shape, theta.shape[:-2] + pt.shape[-2:]))
    out[..., :K] = pt[..., :K] + theta * pJ[..., :, None]
    out[..., K] = (1.0 - theta.sum(axis=-1)) * pJ
    if check:
        m = out[..., :K]
        asym = np.abs(m - np.swapaxes(m, -1, -2))
        if np.any(asym > TOLERANCES["table"]):
            raise ValueError(f"matching table breaks pair symmetry by {asym.max():.3e}"
                             " (detailed balance fails)")
    return out


def breakup_map(ptt, xi, sigma, varsigma) -> np.ndarray:
    """End-of-period distribution from the post-matching one."""
    ptt = np.asarray(ptt, dtype=float)
    K = ptt.shape[-2]
    m = ptt[..., :K]
    stay = (1.0 - xi) * m
    split = xi * m
    out = np.empty(np.broadcast_shapes(ptt.shape, np.shape(xi)[:-2] + ptt.shape[-2:]))
    out[..., :K] = np.einsum("...ab,...abkl->...kl", stay, sigma)
    out[..., K] = ptt[..., K] + np.einsum("...ab,...abk->...k", split, varsigma)
    return out


def gamma_step(p, model, scn, n) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One period: returns ``(post-mutation, post-matching, end-of-period)``.

    Tables are evaluated in order: mutation at ``p``, matching at the
    post-mutation distribution, break-up at the post-matching one.
    """
    p = np.asarray(p, dtype=float)
    pt = post_mutation(p, model.mutation(scn, n, p))
    ptt = post_matching(pt, model.matching(scn, n, pt))
    xi, sigma, vs = model.breakup(scn, n, ptt)
    new = breakup_map(ptt, xi, sigma, vs)
    return pt, ptt, _check_mass(new, f"period {n}")


def cell_index(k: int, l: Optional[int], K: int) -> int:
    """Flat index of cell (k, l) (0-based, ``l=None`` for J) in row-major order."""
    return k * (K + 1) + (K if l is None else l)


@dataclass
class TransitionMatrix:
    z: np.ndarray
    period: int
    state: object = None

    def row_sums(self) -> np.ndarray:
        return self.z.sum(axis=-1)


def _kernels(p, model, scn, n):
    p = np.asarray(p, dtype=float)
    eta = model.mutation(scn, n, p)
    pt = post_mutation(p, eta)
    theta = model.matching(scn, n, pt)
    ptt = post_matching(pt, theta)
    xi, sigma, vs = model.breakup(scn, n, ptt)
    return eta, theta, xi, sigma, vs


def transition_matrix(p, model, scn, n, state=None) -> TransitionMatrix:
    """Single-agent extended-type transition matrix as a product of three kernels."""
    eta, theta, xi, sigma, vs = _kernels(p, model, scn, n)
    K = eta.shape[-1]
    E = K * (K + 1)
    m1 = np.zeros((E, E))
    m2 = np.zeros((E, E))
    m3 = np.zeros((E, E))
    b = 1.0 - theta.sum(axis=-1)
    for k in range(K):
        kJ = cell_index(k, None, K)
        for k2 in range(K):
            m1[kJ, cell_index(k2, None, K)] = eta[k, k2]
        m2[kJ, kJ] = b[k]
        m3[kJ, kJ] = 1.0
        for l in range(K):
            kl = cell_index(k, l, K)
            m1[kl].reshape(K, K + 1)[:, :K] = np.outer(eta[k], eta[l])
            m2[kJ, kl] = theta[k, l]
            m2[kl, kl] = 1.0
            row = m3[kl].reshape(K, K + 1)
            row[:, :K] = (1.0 - xi[k, l]) * sigma[k, l]
            row[:, K] = xi[k, l] * vs[k, l]
    z = m1 @ m2 @ m3
    if np.any(np.abs(z.sum(axis=1) - 1.0) > TOLERANCES["table"]):
        raise ValueError("transition matrix rows do not sum to 1")
    return TransitionMatrix(z, n, state)


def transition_matrix_closed_form(p, model, scn, n) -> np.ndarray:
    """Entry-by-entry evaluation of the four closed-form cases.

    Row labels (k', l') / (k', J) are fixed; the sums run over the intermediate
    pair (k1, l1) only, and the matching probability in the unmatched-to-unmatched
    case is ``theta_{k1 l1}``.
    """
    eta, theta, xi, sigma, vs = _kernels(p, model, scn, n)
    K = eta.shape[-1]
    b = 1.0 - theta.sum(axis=-1)
    E = K * (K + 1)
    z = np.zeros((E, E))
    for kp in range(K):
        for k in range(K):
            for l in range(K):
                acc = 0.0
                for k1 in range(K):
                    for l1 in range(K):
                        acc += (1 - xi[k1, l1]) * sigma[k1, l1, k, l] * theta[k1, l1] * eta[kp, k1]
                z[cell_index(kp, None, K), cell_index(k, l, K)] = acc
            acc = b[k] * eta[kp, k]
            for k1 in range(K):
                for l1 in range(K):
                    acc += xi[k1, l1] * vs[k1, l1, k] * theta[k1, l1] * eta[kp, k1]
            z[cell_index(kp, None, K), cell_index(k, None, K)] = acc
        for lp in range(K):
            for k in range(K):
                for l in range(K):
                    acc = 0.0
                    for k1 in range(K):
                        for l1 in range(K):
                            acc += (1 - xi[k1, l1]) * sigma[k1, l1, k, l] * eta[kp, k1] * eta[lp, l1]
                    z[cell_index(kp, lp, K), cell_index(k, l, K)] = acc
                acc = 0.0
                for k1 in range(K):
                    for l1 in range(K):
                        acc += xi[k1, l1] * vs[k1, l1, k] * eta[kp, k1] * eta[lp, l1]
                z[cell_index(kp, lp, K), cell_index(k, None, K)] = acc
    return z


@dataclass
class Evolution:
    """Distributions along a scenario path; index 0 of ``p`` is the start."""

    p: np.ndarray          # (..., N+1, K, K+1)
    post_mutation: np.ndarray   # (..., N, K, K+1), entry n-1 is period n
    post_matching: np.ndarray

    def fraction_difference(self) -> np.ndarray:
        fr = self.p.sum(axis=-1)
        return fr[..., 0] - fr[..., -1]

    def to_csv(self) -> str:
        """Unbatched evolution as CSV: period, every end-of-period cell, p1 - p3."""
        if self.p.ndim != 3:
            raise ValueError("CSV export expects a single trajectory")
        K = self.p.shape[-2]
        return "".join(evolution_csv_rows(self.p, K))


def evolution_csv_rows(p_seq, K: int) -> Iterator[str]:
    yield "period," + ",".join(TypeSpace(K).cell_labels()) + ",p1_minus_p3\n"
    for n, p in enumerate(p_seq):
        fr = p.sum(axis=-1)
        cells = ",".join(_fmt(x) for x in p.ravel())
        yield f"{n},{cells},{_fmt(fr[0] - fr[-1])}\n"


def evolve(p0, model, scenario, grid: Optional[TimeGrid] = None, periods: Optional[int] = None) -> Evolution:
    """Iterate :func:`gamma_step` along ``scenario`` (a possibly batched ScenarioPath)."""
    p0 = np.asarray(p0, dtype=float)
    N = scenario.N if grid is None else grid.N
    if periods is not None:
        N = min(N, int(periods))
    if grid is not None and scenario.N < N:
        raise ValueError("scenario shorter than the time grid")
    lead = None
    vals = list(scenario.values.values()) + list(scenario.states.values())
    lead = vals[0].shape[:-1] if vals else ()
    p = np.broadcast_to(p0, lead + p0.shape).copy()
    ps = [p]
    pts, ptts = [], []
    for n in range(1, N + 1):
        pt, ptt, p = gamma_step(p, model, scenario.at(n), n)
        ps.append(p)
        pts.append(pt)
        ptts.append(ptt)
    ax = len(lead)
    empty = np.zeros(lead + (0,) + p0.shape)
    return Evolution(
        np.stack(ps, axis=ax),
        np.stack(pts, axis=ax) if pts else empty,
        np.stack(ptts, axis=ax) if ptts else empty,
    )
