"""Krylov solves for the dense symmetric Galerkin systems."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

DENSE_LIMIT = 6000
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LinearSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        b = np.asarray(self.rhs, dtype=float).ravel()
        if a.ndim != 2 or a.shape != (b.size, b.size):
            raise ValueError(f"matrix shape {a.shape} does not match rhs length {b.size}")
        asym = np.max(np.abs(a - a.T)) if a.size else 0.0
        if asym > SYMMETRY_TOL * max(1.0, np.max(np.abs(a))):
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "rhs", b)

    @property
    def size(self) -> int:
        return self.rhs.size

    def residual(self, x) -> float:
        nb = np.linalg.norm(self.rhs)
        r = np.linalg.norm(self.matrix @ x - self.rhs)
        return r / nb if nb > 0 else r

    def dump(self, stem) -> None:
        """Row-major float64 matrix, then rhs, plus a JSON header."""
        stem = Path(stem)
        with open(Path(f"{stem}.bin"), "wb") as fh:
            fh.write(np.ascontiguousarray(self.matrix, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.rhs, dtype="<f8").tobytes())
        header = {"n": self.size, "dtype": "<f8", "order": "row-major",
                  "layout": ["matrix", "rhs"], "labels": list(self.labels)}
        Path(f"{stem}.json").write_text(json.dumps(header, default=_plain))

    @classmethod
    def load(cls, stem) -> "LinearSystem":
        stem = Path(stem)
        header = json.loads(Path(f"{stem}.json").read_text())
        n = header["n"]
        data = np.fromfile(Path(f"{stem}.bin"), dtype="<f8")
        return cls(data[: n * n].reshape(n, n), data[n * n:], header.get("labels", []))


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


@dataclass(frozen=True, eq=False)
class SolveReport:
    solution: np.ndarray
    iterations: int
    residual: float
    converged: bool
    method: str = "gmres"
    history: list = field(default_factory=list, repr=False)  # relative residual per iteration

    def to_json(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual,
                "converged": self.converged, "method": self.method}


def solve(system: LinearSystem, tol: float = 1e-2, max_iter: int = 1000,
          method: str = "gmres", restart: int = 50) -> SolveReport:
    """Iterate until ||Ax - b|| <= tol ||b|| or ``max_iter`` Krylov steps.

    ``method`` is "gmres" (restarted) or "cg". Non-convergence is reported in
    the returned flag; NaN or Inf raises FloatingPointError.
    """
    a, b = system.matrix, system.rhs
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise FloatingPointError("non-finite entries in linear system")
    if not np.any(b):
        return SolveReport(np.zeros_like(b), 0, 0.0, True, method)

    history = []
    nb = np.linalg.norm(b)
    op = spla.aslinearoperator(a)
    x0 = np.zeros_like(b)
    if method == "gmres":
        restart = max(1, min(restart, b.size, max_iter))
        # gmres reports the relative residual estimate of each inner step
        x, _ = spla.gmres(op, b, x0=x0, rtol=tol, atol=0.0, restart=restart,
                          maxiter=math.ceil(max_iter / restart), callback=history.append,
                          callback_type="pr_norm")
    elif method == "cg":
        x, _ = spla.cg(op, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter,
                       callback=lambda xk: history.append(np.linalg.norm(a @ xk - b) / nb))
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("solver produced non-finite iterate")
    res = system.residual(x)
    return SolveReport(x, len(history), float(res), bool(res <= tol), method,
                       [float(h) for h in history])


@dataclass(frozen=True)
class ConditionReport:
    diagonal_ratio: float
    min_ritz: float
    max_ritz: float

    @property
    def positive_definite(self) -> bool:
        return self.min_ritz > 0


def gram_condition_report(system: LinearSystem, dense_limit: int = DENSE_LIMIT,
                          lanczos_steps: int = 30) -> ConditionReport:
    """Diagonal spread and extreme Ritz values. Advisory only."""
    a = system.matrix
    n = system.size
    if n > dense_limit:
        raise ValueError(f"system size {n} exceeds dense limit {dense_limit}")
    d = np.abs(np.diag(a))
    ratio = float(d.max() / d.min()) if d.min() > 0 else math.inf
    if n <= 200:
        ev = scipy.linalg.eigvalsh(a)
        lo, hi = ev[0], ev[-1]
    else:
        k = min(lanczos_steps, n - 1)
        v0 = np.ones(n)
        lo = spla.eigsh(a, k=1, which="SA", v0=v0, ncv=k)[0][0]
        hi = spla.eigsh(a, k=1, which="LA", v0=v0, ncv=k)[0][0]
    return ConditionReport(ratio, float(lo), float(hi))
