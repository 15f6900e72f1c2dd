"""Small SDP modelling layer on top of cvxpy.

Complex Hermitian matrices are handled through the real embedding
``X -> [[Re X, -Im X], [Im X, Re X]]``: each :class:`HermitianVar` is stored as a
real symmetric ``2N x 2N`` variable with the block structure enforced by linear
equalities, and every complex LMI is compiled to a real symmetric PSD block.
Scalar variables and affine expressions are plain cvxpy objects.
"""

from __future__ import annotations

import itertools
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np

_ids = itertools.count()

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_LIMIT = "numerical-limit"


def embed_hermitian(h: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(h - h.conj().T), initial=0.0) > tol * (1.0 + np.max(np.abs(h), initial=0.0)):
        raise ValueError("matrix is not Hermitian")
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


def unembed(z: np.ndarray) -> np.ndarray:
    n = z.shape[0] // 2
    re = 0.5 * (z[:n, :n] + z[n:, n:])
    im = 0.5 * (z[n:, :n] - z[:n, n:])
    h = re + 1j * im
    return 0.5 * (h + h.conj().T)


def check_psd(m: np.ndarray, tol: float = 1e-9) -> bool:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    if m.size == 0:
        return True
    sym = 0.5 * (m + m.conj().T)
    eig = np.linalg.eigvalsh(sym)
    return bool(eig[0] >= -tol * (1.0 + np.max(np.abs(eig))))


def embed_expr(re, im):
    """Real symmetric embedding of a complex affine expression given as (Re, Im)."""
    blk = cp.bmat([[re, -im], [im, re]])
    return 0.5 * (blk + blk.T)


class HermitianVar:
    """Complex Hermitian ``dim x dim`` matrix variable.

    Scalarization is cvxpy's symmetric storage of the real ``2N x 2N`` block
    (lower triangle, column-major); Re/Im parts are slices of that block.
    """

    def __init__(self, dim: int, name: str | None = None, role: str = ""):
        self.id = next(_ids)
        self.dim = dim
        self.role = role
        self.name = name or f"H{self.id}"
        self.z = cp.Variable((2 * dim, 2 * dim), symmetric=True, name=self.name)

    @property
    def re(self):
        return self.z[: self.dim, : self.dim]

    @property
    def im(self):
        return self.z[self.dim :, : self.dim]

    def structure_constraints(self):
        n = self.dim
        return [
            self.z[:n, :n] == self.z[n:, n:],
            self.z[:n, n:] + self.z[:n, n:].T == 0,
        ]

    def quad(self, h: np.ndarray):
        """Real affine expression ``h^H X h``."""
        h = np.asarray(h, dtype=complex)
        v = np.concatenate([h.real, h.imag])
        return v @ self.z @ v

    def matvec(self, h: np.ndarray):
        """``(Re(X h), Im(X h))`` as real affine vectors."""
        h = np.asarray(h, dtype=complex)
        return self.re @ h.real - self.im @ h.imag, self.re @ h.imag + self.im @ h.real

    def trace(self):
        return cp.trace(self.re)

    @property
    def value(self) -> np.ndarray | None:
        if self.z.value is None:
            return None
        return unembed(self.z.value)


class HermExpr:
    """Affine complex expression stored as a pair of real cvxpy expressions."""

    def __init__(self, re, im):
        self.re = re
        self.im = im

    @classmethod
    def of(cls, var: HermitianVar) -> "HermExpr":
        return cls(var.re, var.im)

    @classmethod
    def const(cls, m: np.ndarray) -> "HermExpr":
        m = np.asarray(m, dtype=complex)
        return cls(m.real, m.imag)

    def __add__(self, other):
        return HermExpr(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return HermExpr(self.re - other.re, self.im - other.im)

    def scale(self, c: float):
        return HermExpr(c * self.re, c * self.im)

    def quad(self, h: np.ndarray):
        h = np.asarray(h, dtype=complex)
        a, b = h.real, h.imag
        return a @ self.re @ a + b @ self.re @ b + b @ self.im @ a - a @ self.im @ b

    def matvec(self, h: np.ndarray):
        h = np.asarray(h, dtype=complex)
        return self.re @ h.real - self.im @ h.imag, self.re @ h.imag + self.im @ h.real

    def trace_with(self, m: np.ndarray):
        """``Re Tr(M X)`` for a constant Hermitian ``M``."""
        m = np.asarray(m, dtype=complex)
        # Tr(M X) real part = sum(Re M * Re X) + sum(Im M * Im X) for Hermitian M, X
        return cp.sum(cp.multiply(m.real, self.re)) + cp.sum(cp.multiply(m.imag, self.im))

    def trace_with_complex(self, m: np.ndarray):
        """``(Re, Im)`` of ``Tr(M X)`` for an arbitrary constant ``M``."""
        m = np.asarray(m, dtype=complex)
        mt = m.T
        re = cp.sum(cp.multiply(mt.real, self.re)) - cp.sum(cp.multiply(mt.imag, self.im))
        im = cp.sum(cp.multiply(mt.real, self.im)) + cp.sum(cp.multiply(mt.imag, self.re))
        return re, im


def epigraph_inverse(u):
    """Return ``(v, constraint)`` with ``[[v, 1], [1, u]] >> 0``, i.e. ``v >= 1/u`` for ``u > 0``."""
    v = cp.Variable(name=f"inv{next(_ids)}")
    blk = cp.bmat([[cp.reshape(v, (1, 1), order="F"), np.ones((1, 1))], [np.ones((1, 1)), cp.reshape(u, (1, 1), order="F")]])
    return v, (0.5 * (blk + blk.T)) >> 0


@dataclass
class PsdBlock:
    name: str
    expr: object  # real symmetric cvxpy expression

    @property
    def size(self) -> int:
        return self.expr.shape[0]


@dataclass
class SdpProblem:
    """Maximize a linear/concave objective subject to PSD blocks and scalar constraints."""

    objective: object = 0.0
    hermitian_vars: list = field(default_factory=list)
    psd_blocks: list = field(default_factory=list)
    constraints: list = field(default_factory=list)

    def hermitian(self, dim: int, name: str, role: str = "") -> HermitianVar:
        var = HermitianVar(dim, name, role)
        self.hermitian_vars.append(var)
        self.psd_blocks.append(PsdBlock(f"{name}>=0", var.z))
        self.constraints.extend(var.structure_constraints())
        return var

    def add_psd(self, name: str, expr) -> PsdBlock:
        if expr.shape[0] != expr.shape[1]:
            raise ValueError(f"PSD block {name} is not square")
        blk = PsdBlock(name, expr)
        self.psd_blocks.append(blk)
        return blk

    def add_complex_psd(self, name: str, re, im) -> PsdBlock:
        return self.add_psd(name, embed_expr(re, im))

    def add(self, *cons) -> None:
        self.constraints.extend(cons)

    def to_cvxpy(self) -> cp.Problem:
        cons = list(self.constraints)
        for blk in self.psd_blocks:
            cons.append(blk.expr >> 0)
        return cp.Problem(cp.Maximize(self.objective), cons)


@dataclass
class SolveOutcome:
    status: str
    objective: float | None
    values: dict
    iterations: int | None
    wall_time: float
    raw_status: str = ""
    diagnostics: str = ""
    min_block_eig: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _solver_kwargs(solver: str, tol: float) -> dict:
    if solver == "CLARABEL":
        return dict(tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=500)
    if solver == "SCS":
        return dict(eps_abs=tol, eps_rel=tol, max_iters=200000)
    if solver == "CVXOPT":
        return dict(abstol=tol, reltol=tol, feastol=tol)
    return {}


def solve(p: SdpProblem, tol: float = 1e-8, solver: str = "CLARABEL") -> SolveOutcome:
    problem = p.to_cvxpy()
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings():
            # reduced accuracy is reported through SolveOutcome.diagnostics
            warnings.filterwarnings("ignore", message="Solution may be inaccurate")
            problem.solve(solver=solver, **_solver_kwargs(solver, tol))
    except cp.error.SolverError as exc:
        return SolveOutcome(NUMERICAL_LIMIT, None, {}, None, time.perf_counter() - t0, "solver_error", str(exc))
    wall = time.perf_counter() - t0
    raw = problem.status
    iters = getattr(problem.solver_stats, "num_iters", None)
    if raw in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SolveOutcome(INFEASIBLE, None, {}, iters, wall, raw)
    if raw == cp.UNBOUNDED:
        return SolveOutcome(NUMERICAL_LIMIT, None, {}, iters, wall, raw, "problem is unbounded")
    if raw not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return SolveOutcome(NUMERICAL_LIMIT, None, {}, iters, wall, raw)
    values = {v.name: v.value for v in p.hermitian_vars}
    for v in problem.variables():
        values.setdefault(v.name(), v.value)
    min_eig = np.inf
    for blk in p.psd_blocks:
        m = np.asarray(blk.expr.value, dtype=float)
        eig = np.linalg.eigvalsh(0.5 * (m + m.T))
        min_eig = min(min_eig, eig[0] / (1.0 + np.max(np.abs(eig))))
    status = OPTIMAL
    diag = ""
    if min_eig < -1e-6:
        status = NUMERICAL_LIMIT
        diag = f"PSD block violated (relative min eigenvalue {min_eig:.3g})"
    elif raw == cp.OPTIMAL_INACCURATE:
        diag = "solver reported reduced accuracy"
    return SolveOutcome(status, float(problem.value), values, iters, wall, raw, diag, float(min_eig))


def dump_problem(p: SdpProblem, path: str | Path, solver: str = "SCS") -> None:
    """Write the compiled conic form as text: header, cone sizes, then sparse triplets.

    Layout::

        # iscsc conic dump v1
        dims <n_vars> <n_rows>
        cones zero=<z> nonneg=<l> exp=<e> psd=<s1,s2,...>
        c <j> <value>          (objective to minimize)
        b <i> <value>
        A <i> <j> <value>
    """
    problem = p.to_cvxpy()
    data, _, _ = problem.get_problem_data(solver)
    A = data["A"].tocoo()
    b, c = data["b"], data["c"]
    dims = data["dims"]
    lines = ["# iscsc conic dump v1", f"dims {A.shape[1]} {A.shape[0]}"]
    psd = ",".join(str(s) for s in dims.psd) or "-"
    lines.append(f"cones zero={dims.zero} nonneg={dims.nonneg} exp={dims.exp} psd={psd}")
    lines += [f"c {j} {v:.17g}" for j, v in enumerate(c) if v != 0]
    lines += [f"b {i} {v:.17g}" for i, v in enumerate(b) if v != 0]
    order = np.lexsort((A.col, A.row))
    lines += [f"A {A.row[i]} {A.col[i]} {A.data[i]:.17g}" for i in order]
    Path(path).write_text("\n".join(lines) + "\n")
