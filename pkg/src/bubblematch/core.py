"""Shared domain types: extended type distributions, probability tables, time grids.

An extended type distribution over ``S x (S u {J})`` is stored as a ``K x (K+1)``
array.  Column ``l < K`` holds the mass of agents of type ``k`` matched to a
partner of type ``l``; the last column holds the unmatched mass of type ``k``.
Types are 1-based in the maths and 0-based in every array.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

# Tolerances for identities that hold exactly in exact arithmetic.
TOLERANCES = {
    "normalization": 1e-12,
    "table": 1e-10,
    "negativity": 1e-15,
}


def set_tolerance(name: str, value: float) -> None:
    if name not in TOLERANCES:
        raise KeyError(f"unknown tolerance {name!r}")
    TOLERANCES[name] = float(value)


@dataclass(frozen=True)
class TypeSpace:
    """The finite type space ``S = {1..K}`` plus the unmatched marker ``J``."""

    K: int = 3
    J: str = "J"

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValueError("K must be >= 1")
        if self.J in range(1, self.K + 1):
            raise ValueError("J must not be a type label")

    @property
    def n_extended(self) -> int:
        return self.K * (self.K + 1)

    def cell_labels(self) -> List[str]:
        labels = []
        for k in range(1, self.K + 1):
            for l in range(1, self.K + 1):
                labels.append(f"k{k}_l{l}")
            labels.append(f"k{k}_{self.J}")
        return labels


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ExtendedTypeDistribution:
    """Immutable ``K x (K+1)`` matrix of population fractions."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[1] != a.shape[0] + 1:
            raise ValueError(f"expected a K x (K+1) matrix, got shape {a.shape}")
        object.__setattr__(self, "entries", _readonly(a))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def matched(self) -> np.ndarray:
        return self.entries[:, :-1]

    @property
    def unmatched(self) -> np.ndarray:
        return self.entries[:, -1]

    @classmethod
    def all_unmatched(cls, fractions: Sequence[float]) -> "ExtendedTypeDistribution":
        f = np.asarray(fractions, dtype=float)
        m = np.zeros((f.size, f.size + 1))
        m[:, -1] = f
        return cls(m)

    def fractions(self) -> "TypeFractions":
        return fractions(self)

    def to_csv_row(self) -> str:
        return ",".join(_fmt(x) for x in self.entries.ravel())

    def to_csv(self) -> str:
        header = ",".join(TypeSpace(self.K).cell_labels())
        return header + "\n" + self.to_csv_row() + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ExtendedTypeDistribution":
        rows = list(csv.reader(io.StringIO(text.strip())))
        header, values = rows[0], rows[1]
        n = len(header)
        # n = K(K+1)
        K = int(round((-1 + np.sqrt(1 + 4 * n)) / 2))
        if K * (K + 1) != n or header != TypeSpace(K).cell_labels():
            raise ValueError("malformed distribution header")
        return cls(np.array([float(v) for v in values]).reshape(K, K + 1))


@dataclass(frozen=True)
class TypeFractions:
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _readonly(self.p))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.p, dtype=dtype)

    def __getitem__(self, i):
        return self.p[i]

    def __len__(self):
        return self.p.size


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two points")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        object.__setattr__(self, "times", _readonly(t))

    @classmethod
    def uniform(cls, N: int, T: float = 1.0) -> "TimeGrid":
        if N < 1 or T <= 0:
            raise ValueError("need N >= 1 and T > 0")
        t = np.arange(N + 1) * (T / N)
        t[-1] = T
        return cls(t)

    @property
    def N(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass
class ProbabilityTable:
    """One period's transition probabilities.

    Shapes (``K`` types): ``eta (K, K)``, ``theta (K, K)``, ``xi (K, K)``,
    ``sigma (K, K, K, K)`` indexed ``[k, l, r, s]`` and ``varsigma (K, K, K)``
    indexed ``[k, l, r]``.  Leading batch dimensions are allowed.
    """

    eta: np.ndarray
    theta: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray
    varsigma: np.ndarray

    @property
    def b(self) -> np.ndarray:
        return 1.0 - self.theta.sum(axis=-1)

    @property
    def K(self) -> int:
        return self.eta.shape[-1]

    @classmethod
    def degenerate(cls, K: int) -> "ProbabilityTable":
        """Identity mutation, no matching, certain break-up keeping types."""
        eye = np.eye(K)
        return cls(
            eta=eye.copy(),
            theta=np.zeros((K, K)),
            xi=np.ones((K, K)),
            sigma=keep_pair_sigma(K),
            varsigma=keep_type_varsigma(K),
        )


def keep_pair_sigma(K: int) -> np.ndarray:
    s = np.zeros((K, K, K, K))
    for k in range(K):
        for l in range(K):
            s[k, l, k, l] = 1.0
    return s


def keep_type_varsigma(K: int) -> np.ndarray:
    v = np.zeros((K, K, K))
    for k in range(K):
        v[k, :, k] = 1.0
    return v


@dataclass
class Violation:
    invariant: str
    index: tuple
    magnitude: float

    def __str__(self):
        return f"{self.invariant} at {self.index}: {self.magnitude:.3e}"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def invariants(self) -> set:
        return {v.invariant for v in self.violations}

    def add(self, invariant: str, index: tuple, magnitude: float) -> None:
        self.violations.append(Violation(invariant, tuple(index), float(magnitude)))

    def __str__(self):
        if self.ok:
            return "pass"
        return "fail: " + "; ".join(str(v) for v in self.violations)


def validate_distribution(d, tol: Optional[float] = None) -> ValidationReport:
    """Check non-negativity, normalisation and pair symmetry of ``d``."""
    tol = TOLERANCES["normalization"] if tol is None else tol
    a = np.asarray(d, dtype=float)
    rep = ValidationReport()
    if a.ndim != 2 or a.shape[1] != a.shape[0] + 1:
        rep.add("shape", a.shape, float("nan"))
        return rep
    K = a.shape[0]
    for idx in zip(*np.nonzero(a < -TOLERANCES["negativity"])):
        rep.add("nonnegativity", idx, a[idx])
    total = a.sum()
    if abs(total - 1.0) > tol:
        rep.add("normalization", (), 1.0 - total)
    m = a[:, :K]
    for k in range(K):
        for l in range(k + 1, K):
            diff = m[k, l] - m[l, k]
            if abs(diff) > tol:
                rep.add("symmetry", (k + 1, l + 1), diff)
    return rep


def validate_table(t: ProbabilityTable, d, tol: Optional[float] = None) -> ValidationReport:
    """Check every table constraint, with detailed balance evaluated at ``d``."""
    tol = TOLERANCES["table"] if tol is None else tol
    rep = ValidationReport()
    p = np.asarray(d, dtype=float)
    K = t.K
    named = {"eta": t.eta, "theta": t.theta, "xi": t.xi, "sigma": t.sigma, "varsigma": t.varsigma}
    for name, arr in named.items():
        bad = np.nonzero((arr < -tol) | (arr > 1 + tol))
        for idx in zip(*bad):
            rep.add(f"{name} range", tuple(i + 1 for i in idx), arr[idx])
    for k, s in enumerate(t.eta.sum(axis=1)):
        if abs(s - 1) > tol:
            rep.add("eta normalization", (k + 1,), 1 - s)
    for k, s in enumerate(t.theta.sum(axis=1)):
        if s > 1 + tol:
            rep.add("theta total", (k + 1,), s - 1)
    pJ = p[:, -1]
    for k in range(K):
        for l in range(k + 1, K):
            lhs = pJ[k] * t.theta[k, l]
            rhs = pJ[l] * t.theta[l, k]
            if abs(lhs - rhs) > tol:
                rep.add("detailed balance", (k + 1, l + 1), lhs - rhs)
            if abs(t.xi[k, l] - t.xi[l, k]) > tol:
                rep.add("xi symmetry", (k + 1, l + 1), t.xi[k, l] - t.xi[l, k])
    sig_sum = t.sigma.sum(axis=(2, 3))
    for k in range(K):
        for l in range(K):
            if abs(sig_sum[k, l] - 1) > tol:
                rep.add("sigma normalization", (k + 1, l + 1), 1 - sig_sum[k, l])
    asym = t.sigma - t.sigma.transpose(1, 0, 3, 2)
    for idx in zip(*np.nonzero(np.abs(asym) > tol)):
        k, l, r, s = idx
        if (k, l, r, s) < (l, k, s, r):
            rep.add("sigma symmetry", (k + 1, l + 1, r + 1, s + 1), asym[idx])
    vs = t.varsigma.sum(axis=2)
    for k in range(K):
        for l in range(K):
            if abs(vs[k, l] - 1) > tol:
                rep.add("varsigma normalization", (k + 1, l + 1), 1 - vs[k, l])
    return rep


def fractions(d) -> TypeFractions:
    """Marginal type fractions ``p_k = sum_l d(k, l) + d(k, J)``."""
    return TypeFractions(np.asarray(d, dtype=float).sum(axis=-1))


def type_fractions(d) -> np.ndarray:
    """Batch-friendly version of :func:`fractions` returning a bare array."""
    return np.asarray(d, dtype=float).sum(axis=-1)


def _fmt(x: float) -> str:
    return repr(float(x)) if np.isfinite(x) else str(x)


def distributions_to_csv(rows: Iterable, K: int) -> str:
    out = [",".join(TypeSpace(K).cell_labels())]
    for r in rows:
        out.append(",".join(_fmt(x) for x in np.asarray(r, dtype=float).ravel()))
    return "\n".join(out) + "\n"
