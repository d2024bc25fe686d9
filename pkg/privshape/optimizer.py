"""Convex QP interior-point solver and branch-and-bound for binary variables."""

import heapq
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.linalg import eigvalsh
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .config import settings
from .exceptions import NonConvexProgramError
from .models import SolverStatus

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-12
PSD_TOLERANCE = 1e-9
INTEGRALITY_TOLERANCE = 1e-6
FEASIBILITY_TOLERANCE = 1e-6
MAX_BINARIES = 64


def _stack(blocks: Sequence[sp.spmatrix], n: int) -> sp.csr_matrix:
    blocks = [block for block in blocks if block.shape[0]]
    if not blocks:
        return sp.csr_matrix((0, n))
    return sp.vstack(blocks, format="csr")


class QuadraticProgram(BaseModel):
    """
    min 0.5 x'Px + q'x + constant
    s.t. Ax = b, Gx <= h, lb <= x <= ub
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    constant: float = 0.0
    binaries: Tuple[int, ...] = ()
    names: Tuple[str, ...] = ()

    @field_validator("q", "b", "h", "lb", "ub", mode="before")
    @classmethod
    def _vector(cls, value) -> np.ndarray:
        return np.asarray(value, dtype=float).reshape(-1)

    @field_validator("P", mode="before")
    @classmethod
    def _csc(cls, value) -> sp.csc_matrix:
        return sp.csc_matrix(value, dtype=float)

    @field_validator("A", "G", mode="before")
    @classmethod
    def _csr(cls, value) -> sp.csr_matrix:
        return sp.csr_matrix(value, dtype=float)

    @model_validator(mode="after")
    def _check_dimensions(self) -> "QuadraticProgram":
        n = self.q.size
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.A.shape[1] != n or self.G.shape[1] != n:
            raise ValueError("constraint matrices must have one column per variable")
        if self.A.shape[0] != self.b.size or self.G.shape[0] != self.h.size:
            raise ValueError("constraint right-hand sides do not match row counts")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds must have one entry per variable")
        asymmetry = abs(self.P - self.P.T)
        if asymmetry.nnz and asymmetry.max() > SYMMETRY_TOLERANCE:
            raise ValueError(f"P is not symmetric (max asymmetry {asymmetry.max():.3e})")
        return self

    @property
    def n_vars(self) -> int:
        return self.q.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.constant)

    def max_violation(self, x: np.ndarray) -> float:
        parts = [0.0]
        if self.b.size:
            parts.append(float(np.max(np.abs(self.A @ x - self.b))))
        if self.h.size:
            parts.append(float(np.max(self.G @ x - self.h)))
        parts.append(float(np.max(self.lb - x, initial=0.0)))
        parts.append(float(np.max(x - self.ub, initial=0.0)))
        return max(parts)

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "QuadraticProgram":
        return self.model_copy(update={"lb": np.asarray(lb, float), "ub": np.asarray(ub, float)})


class ProgramBuilder:
    """Accumulates named variable blocks and sparse rows into a QuadraticProgram."""

    def __init__(self):
        self._lb: List[float] = []
        self._ub: List[float] = []
        self._names: List[str] = []
        self._binaries: List[int] = []
        self._q: Dict[int, float] = {}
        self._p_rows: List[np.ndarray] = []
        self._p_cols: List[np.ndarray] = []
        self._p_vals: List[np.ndarray] = []
        self._eq: List[Tuple[np.ndarray, np.ndarray, float]] = []
        self._ineq: List[Tuple[np.ndarray, np.ndarray, float]] = []
        self.constant = 0.0

    @property
    def n_vars(self) -> int:
        return len(self._lb)

    def add_variables(
        self,
        name: str,
        count: int,
        lb: Union[float, Sequence[float]] = 0.0,
        ub: Union[float, Sequence[float]] = np.inf,
        binary: bool = False,
    ) -> np.ndarray:
        start = self.n_vars
        self._lb.extend(np.broadcast_to(np.asarray(lb, float), (count,)).tolist())
        self._ub.extend(np.broadcast_to(np.asarray(ub, float), (count,)).tolist())
        self._names.extend(f"{name}[{k}]" for k in range(count))
        indices = np.arange(start, start + count)
        if binary:
            self._binaries.extend(indices.tolist())
        return indices

    def add_linear(self, indices: Sequence[int], coefficients: Sequence[float]) -> None:
        for i, c in zip(np.atleast_1d(indices), np.atleast_1d(coefficients)):
            self._q[int(i)] = self._q.get(int(i), 0.0) + float(c)

    def add_quadratic(self, rows: Sequence[int], cols: Sequence[int], values: Sequence[float]) -> None:
        """Entries of P in 0.5 x'Px; the caller supplies both triangles."""
        self._p_rows.append(np.asarray(rows, dtype=int).ravel())
        self._p_cols.append(np.asarray(cols, dtype=int).ravel())
        self._p_vals.append(np.asarray(values, dtype=float).ravel())

    def add_equality(self, cols: Sequence[int], values: Sequence[float], rhs: float) -> None:
        self._eq.append((np.asarray(cols, dtype=int), np.asarray(values, dtype=float), float(rhs)))

    def add_inequality(self, cols: Sequence[int], values: Sequence[float], rhs: float) -> None:
        """sum(values * x[cols]) <= rhs"""
        self._ineq.append((np.asarray(cols, dtype=int), np.asarray(values, dtype=float), float(rhs)))

    @staticmethod
    def _rows_to_matrix(rows, n: int) -> Tuple[sp.csr_matrix, np.ndarray]:
        if not rows:
            return sp.csr_matrix((0, n)), np.zeros(0)
        row_index = np.concatenate([np.full(cols.size, r) for r, (cols, _, _) in enumerate(rows)])
        col_index = np.concatenate([cols for cols, _, _ in rows])
        values = np.concatenate([vals for _, vals, _ in rows])
        matrix = sp.csr_matrix((values, (row_index, col_index)), shape=(len(rows), n))
        return matrix, np.array([rhs for _, _, rhs in rows])

    def build(self) -> QuadraticProgram:
        n = self.n_vars
        q = np.zeros(n)
        for i, c in self._q.items():
            q[i] = c
        if self._p_rows:
            P = sp.csc_matrix(
                (np.concatenate(self._p_vals), (np.concatenate(self._p_rows), np.concatenate(self._p_cols))),
                shape=(n, n),
            )
        else:
            P = sp.csc_matrix((n, n))
        A, b = self._rows_to_matrix(self._eq, n)
        G, h = self._rows_to_matrix(self._ineq, n)
        return QuadraticProgram(
            P=P, q=q, A=A, b=b, G=G, h=h,
            lb=np.array(self._lb), ub=np.array(self._ub),
            constant=self.constant,
            binaries=tuple(self._binaries),
            names=tuple(self._names),
        )


class QpTolerances(BaseModel):
    """Stopping rules for solve_qp."""
    max_iter: int = Field(default_factory=lambda: settings.QP_MAX_ITER)
    tolerance: float = Field(default_factory=lambda: settings.QP_TOLERANCE)
    kkt_tolerance: float = Field(default_factory=lambda: settings.KKT_TOLERANCE)
    regularization: float = 1e-10
    check_convexity: bool = True


class KktResiduals(BaseModel):
    stationarity: float = np.inf
    primal: float = np.inf
    dual: float = np.inf
    complementarity: float = np.inf

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


class QpSolution(BaseModel):
    """Primal/dual point and status of one QP solve."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: SolverStatus
    x: Optional[np.ndarray] = None
    objective: float = np.inf
    eq_duals: Optional[np.ndarray] = None
    ineq_duals: Optional[np.ndarray] = None
    lower_duals: Optional[np.ndarray] = None
    upper_duals: Optional[np.ndarray] = None
    iterations: int = 0
    residuals: KktResiduals = Field(default_factory=KktResiduals)


def min_eigenvalue(P: sp.spmatrix) -> float:
    """Smallest eigenvalue of a symmetric matrix, one connected block at a time."""
    P = sp.csr_matrix(P)
    support = np.unique(P.nonzero()[0])
    if support.size == 0:
        return 0.0
    sub = P[support][:, support]
    count, labels = connected_components(abs(sub) > 0, directed=False)
    smallest = np.inf
    for component in range(count):
        members = np.flatnonzero(labels == component)
        block = sub[members][:, members].toarray()
        value = float(eigvalsh(block, subset_by_index=[0, 0])[0])
        smallest = min(smallest, value)
    return smallest


def check_convexity(P: sp.spmatrix) -> float:
    """Raise NonConvexProgramError unless P is PSD; returns the smallest eigenvalue."""
    value = min_eigenvalue(P)
    scale = max(1.0, float(abs(P).max()) if P.nnz else 1.0)
    if value < -PSD_TOLERANCE * scale:
        raise NonConvexProgramError(value)
    return value


def _is_infeasible(qp: QuadraticProgram) -> bool:
    """Phase-one feasibility check with HiGHS."""
    bounds = [
        (None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
        for lo, hi in zip(qp.lb, qp.ub)
    ]
    result = linprog(
        np.zeros(qp.n_vars),
        A_ub=qp.G if qp.h.size else None,
        b_ub=qp.h if qp.h.size else None,
        A_eq=qp.A if qp.b.size else None,
        b_eq=qp.b if qp.b.size else None,
        bounds=bounds,
        method="highs",
    )
    return result.status == 2


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    negative = dv < 0
    if not np.any(negative):
        return np.inf
    return float(np.min(-v[negative] / dv[negative]))


def _kkt_matrix(H: sp.spmatrix, A: sp.spmatrix, reg_primal: float, reg_dual: float) -> sp.csc_matrix:
    n = H.shape[0]
    top = H + reg_primal * sp.identity(n)
    if A.shape[0] == 0:
        return sp.csc_matrix(top)
    bottom_right = -reg_dual * sp.identity(A.shape[0]) if reg_dual else sp.csr_matrix((A.shape[0], A.shape[0]))
    return sp.bmat([[top, A.T], [A, bottom_right]], format="csc")


def kkt_residuals(qp: QuadraticProgram, solution: QpSolution) -> KktResiduals:
    """Absolute KKT residuals of a primal/dual point against the original program."""
    x = solution.x
    stationarity = qp.P @ x + qp.q
    if qp.b.size:
        stationarity = stationarity + qp.A.T @ solution.eq_duals
    if qp.h.size:
        stationarity = stationarity + qp.G.T @ solution.ineq_duals
    stationarity = stationarity + solution.upper_duals - solution.lower_duals

    duals = [solution.ineq_duals, solution.lower_duals, solution.upper_duals]
    dual = max(float(np.max(-d, initial=0.0)) for d in duals)

    complementarity = 0.0
    if qp.h.size:
        complementarity = float(np.max(np.abs(solution.ineq_duals * (qp.h - qp.G @ x)), initial=0.0))
    for d, gap in ((solution.lower_duals, x - qp.lb), (solution.upper_duals, qp.ub - x)):
        active = d != 0
        if np.any(active):
            complementarity = max(complementarity, float(np.max(np.abs(d[active] * gap[active]))))

    return KktResiduals(
        stationarity=float(np.max(np.abs(stationarity), initial=0.0)),
        primal=qp.max_violation(x),
        dual=dual,
        complementarity=complementarity,
    )


def solve_qp(qp: QuadraticProgram, tolerances: Optional[QpTolerances] = None) -> QpSolution:
    """
    Mehrotra predictor-corrector interior point on the reduced KKT system.

    Variables with lb == ub become equality rows; finite bounds become
    inequality rows. Infeasibility is confirmed by a phase-one LP before
    it is reported.
    """
    tol = tolerances or QpTolerances()
    if tol.check_convexity:
        check_convexity(qp.P)

    n = qp.n_vars
    if np.any(qp.lb > qp.ub + SYMMETRY_TOLERANCE):
        return QpSolution(status=SolverStatus.INFEASIBLE)

    finite_lb = np.isfinite(qp.lb)
    finite_ub = np.isfinite(qp.ub)
    fixed = finite_lb & finite_ub & (qp.ub - qp.lb <= SYMMETRY_TOLERANCE)
    fixed_idx = np.flatnonzero(fixed)
    lower_idx = np.flatnonzero(finite_lb & ~fixed)
    upper_idx = np.flatnonzero(finite_ub & ~fixed)
    eye = sp.identity(n, format="csr")

    # zero equality rows are dropped, or make the program infeasible
    eq_nnz = np.diff(qp.A.indptr)
    empty_eq = eq_nnz == 0
    if np.any(np.abs(qp.b[empty_eq]) > FEASIBILITY_TOLERANCE):
        return QpSolution(status=SolverStatus.INFEASIBLE)
    kept_eq = np.flatnonzero(~empty_eq)

    A = _stack([qp.A[kept_eq], eye[fixed_idx]], n)
    b = np.concatenate([qp.b[kept_eq], qp.lb[fixed_idx]])
    C = _stack([qp.G, eye[upper_idx], -eye[lower_idx]], n)
    d = np.concatenate([qp.h, qp.ub[upper_idx], -qp.lb[lower_idx]])
    P = sp.csr_matrix(qp.P)
    q = qp.q
    p, m = A.shape[0], C.shape[0]
    reg = tol.regularization

    # starting point: least-squares fit to the constraints
    K0 = _kkt_matrix(P + C.T @ C, A, reg + 1e-8, reg)
    start = splu(K0).solve(np.concatenate([-q + C.T @ d, b]))
    x = start[:n]
    y = np.zeros(p)
    s = np.maximum(d - C @ x, 1.0)
    lam = np.ones(m)

    b_scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
    d_scale = 1.0 + float(np.max(np.abs(d), initial=0.0))
    q_scale = 1.0 + float(np.max(np.abs(q), initial=0.0))

    status = SolverStatus.ITERATION_LIMIT
    stalls = 0
    checked_feasibility = False
    iteration = 0
    for iteration in range(1, tol.max_iter + 1):
        r_d = P @ x + q + A.T @ y + C.T @ lam
        r_p = A @ x - b
        r_c = C @ x + s - d
        mu = float(s @ lam) / m if m else 0.0

        if (
            np.max(np.abs(r_p), initial=0.0) <= tol.tolerance * b_scale
            and np.max(np.abs(r_c), initial=0.0) <= tol.tolerance * d_scale
            and np.max(np.abs(r_d), initial=0.0) <= tol.tolerance * q_scale
            and mu <= tol.tolerance
        ):
            status = SolverStatus.OPTIMAL
            break

        if not checked_feasibility and iteration > 10 and (
            np.max(lam, initial=0.0) > 1e8 or stalls >= 3
        ):
            checked_feasibility = True
            if _is_infeasible(qp):
                logger.debug(f"QP infeasible (detected at iteration {iteration})")
                return QpSolution(status=SolverStatus.INFEASIBLE, iterations=iteration)

        w = lam / s
        H = P + C.T @ sp.diags(w) @ C
        K_exact = _kkt_matrix(H, A, 0.0, 0.0)
        try:
            lu = splu(_kkt_matrix(H, A, reg, reg))
        except RuntimeError:
            logger.warning(f"KKT factorization failed at iteration {iteration}")
            break

        def newton(r_s: np.ndarray):
            rhs = np.concatenate([-r_d - C.T @ ((r_s + lam * r_c) / s), -r_p])
            sol = lu.solve(rhs)
            for _ in range(2):
                sol = sol + lu.solve(rhs - K_exact @ sol)
            dx, dy = sol[:n], sol[n:]
            ds = -r_c - C @ dx
            dlam = (r_s - lam * ds) / s
            return dx, dy, ds, dlam

        dx, dy, ds, dlam = newton(-s * lam)
        if m:
            alpha_aff = min(1.0, _max_step(s, ds), _max_step(lam, dlam))
            mu_aff = float((s + alpha_aff * ds) @ (lam + alpha_aff * dlam)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, ds, dlam = newton(-s * lam - ds * dlam + sigma * mu)
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(lam, dlam)))
        else:
            alpha = 1.0

        stalls = stalls + 1 if alpha < 1e-8 else 0
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        lam = lam + alpha * dlam
        if stalls >= 5:
            break

    n_eq = kept_eq.size
    eq_duals = np.zeros(qp.b.size)
    eq_duals[kept_eq] = y[:n_eq]
    n_g = qp.h.size
    ineq_duals = lam[:n_g]
    upper_duals = np.zeros(n)
    lower_duals = np.zeros(n)
    upper_duals[upper_idx] = lam[n_g:n_g + upper_idx.size]
    lower_duals[lower_idx] = lam[n_g + upper_idx.size:]
    # fixed variables carry their multiplier in the extra equality rows
    fixed_duals = y[n_eq:]
    upper_duals[fixed_idx] = np.maximum(fixed_duals, 0.0)
    lower_duals[fixed_idx] = np.maximum(-fixed_duals, 0.0)

    solution = QpSolution(
        status=status,
        x=x,
        objective=qp.objective(x),
        eq_duals=eq_duals,
        ineq_duals=ineq_duals,
        lower_duals=lower_duals,
        upper_duals=upper_duals,
        iterations=iteration,
    )
    solution.residuals = kkt_residuals(qp, solution)

    if solution.residuals.worst <= tol.kkt_tolerance:
        solution.status = SolverStatus.OPTIMAL
    else:
        if solution.status == SolverStatus.OPTIMAL:
            logger.warning(
                f"QP stopped with KKT residual {solution.residuals.worst:.2e} above contract"
            )
        solution.status = SolverStatus.ITERATION_LIMIT
        if not checked_feasibility and _is_infeasible(qp):
            return QpSolution(status=SolverStatus.INFEASIBLE, iterations=iteration)
    return solution


class MipNode(BaseModel):
    """One branch-and-bound node: partial binary fixings and its relaxation bound."""
    fixings: Dict[int, int] = Field(default_factory=dict)
    bound: float = -np.inf
    depth: int = 0


class MiqpSolution(BaseModel):
    """Incumbent, global bound and search statistics."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: SolverStatus
    x: Optional[np.ndarray] = None
    objective: float = np.inf
    bound: float = -np.inf
    gap: float = np.inf
    nodes: int = 0
    iterations: int = 0
    branching: List[int] = Field(default_factory=list)
    explored: List[MipNode] = Field(default_factory=list)


Heuristic = Callable[[np.ndarray], Optional[np.ndarray]]


def _relative_gap(incumbent: float, bound: float) -> float:
    if not np.isfinite(incumbent):
        return np.inf
    return max(0.0, (incumbent - bound) / max(1.0, abs(incumbent)))


def solve_miqp(
    qp: QuadraticProgram,
    binaries: Optional[Sequence[int]] = None,
    tolerances: Optional[QpTolerances] = None,
    node_limit: Optional[int] = None,
    gap: Optional[float] = None,
    heuristic: Optional[Heuristic] = None,
) -> MiqpSolution:
    """
    Best-first branch and bound over binary variables.

    Branches on the most fractional binary (lowest index on ties) and
    explores the 0-branch first. `heuristic` may map a fractional relaxation
    to a candidate point; it is accepted only if integral and feasible.
    """
    binaries = tuple(sorted(int(i) for i in (qp.binaries if binaries is None else binaries)))
    if len(binaries) > MAX_BINARIES:
        raise ValueError(f"solve_miqp supports at most {MAX_BINARIES} binaries, got {len(binaries)}")
    tol = tolerances or QpTolerances()
    node_limit = node_limit or settings.MIQP_NODE_LIMIT
    gap = settings.MIQP_GAP if gap is None else gap

    if tol.check_convexity:
        check_convexity(qp.P)
    node_tol = tol.model_copy(update={"check_convexity": False})

    index = np.array(binaries, dtype=int)
    base_lb = qp.lb.copy()
    base_ub = qp.ub.copy()
    base_lb[index] = np.maximum(base_lb[index], 0.0)
    base_ub[index] = np.minimum(base_ub[index], 1.0)

    result = MiqpSolution(status=SolverStatus.INFEASIBLE)
    incumbent_x: Optional[np.ndarray] = None
    incumbent = np.inf
    counter = 0
    heap: List[Tuple[float, int, MipNode]] = [(-np.inf, counter, MipNode())]
    # parent bounds of nodes whose relaxation stopped unresolved
    pending_bounds: List[float] = []
    hit_limit = False

    def accept(candidate: np.ndarray) -> None:
        nonlocal incumbent, incumbent_x
        value = qp.objective(candidate)
        if value < incumbent:
            incumbent, incumbent_x = value, candidate

    def prunable(bound: float) -> bool:
        return np.isfinite(incumbent) and bound >= incumbent - gap * max(1.0, abs(incumbent))

    while heap:
        key, _, node = heap[0]
        if prunable(key):
            break
        if result.nodes >= node_limit:
            hit_limit = True
            break
        heapq.heappop(heap)

        lb, ub = base_lb.copy(), base_ub.copy()
        for var, value in node.fixings.items():
            lb[var] = ub[var] = float(value)
        relaxed = solve_qp(qp.with_bounds(lb, ub), node_tol)
        result.nodes += 1
        result.iterations += relaxed.iterations
        if relaxed.status == SolverStatus.INFEASIBLE:
            continue
        if relaxed.status != SolverStatus.OPTIMAL:
            logger.warning(
                f"Node at depth {node.depth} stopped with {relaxed.status.value} "
                f"(KKT {relaxed.residuals.worst:.2e}); subtree left open"
            )
            pending_bounds.append(node.bound)
            continue

        node.bound = relaxed.objective
        result.explored.append(node)
        if prunable(node.bound):
            continue

        values = relaxed.x[index]
        fractionality = np.abs(values - np.round(values))
        if np.all(fractionality <= INTEGRALITY_TOLERANCE):
            candidate = relaxed.x.copy()
            candidate[index] = np.round(values)
            accept(candidate)
            continue

        if heuristic is not None:
            candidate = heuristic(relaxed.x)
            if candidate is not None:
                integral = np.all(np.abs(candidate[index] - np.round(candidate[index])) <= 1e-9)
                if integral and qp.max_violation(candidate) <= FEASIBILITY_TOLERANCE:
                    accept(candidate)
            if prunable(node.bound):
                continue

        branch = int(index[int(np.argmax(fractionality))])
        result.branching.append(branch)
        for value in (0, 1):
            counter += 1
            child = MipNode(fixings={**node.fixings, branch: value}, bound=node.bound, depth=node.depth + 1)
            heapq.heappush(heap, (node.bound, counter, child))

    remaining = [entry[0] for entry in heap]
    open_bounds = [bound for bound in pending_bounds if not prunable(bound)]
    if hit_limit:
        limited = SolverStatus.NODE_LIMIT
    elif open_bounds:
        limited = SolverStatus.ITERATION_LIMIT
    else:
        limited = None

    if incumbent_x is None:
        result.status = limited or SolverStatus.INFEASIBLE
        unresolved = remaining + open_bounds
        result.bound = min(unresolved) if unresolved else np.inf
        return result

    result.x = incumbent_x
    result.objective = incumbent
    result.bound = min([incumbent] + remaining + open_bounds)
    result.gap = _relative_gap(incumbent, result.bound)
    result.status = limited or SolverStatus.OPTIMAL
    if hit_limit:
        logger.warning(f"Branch and bound hit node limit {node_limit}; gap {result.gap:.2e}")
    elif open_bounds:
        logger.warning(f"Branch and bound left {len(open_bounds)} unresolved subtrees; gap {result.gap:.2e}")
    return result


def _format(value: float) -> str:
    return format(float(value), ".17g")


def dump_program(qp: QuadraticProgram, path: Union[str, Path]) -> None:
    """Write a program as sparse (row, col, value) triplets."""
    lines = [f"# n_vars {qp.n_vars}", f"constant {_format(qp.constant)}", "[P]"]
    P = sp.coo_matrix(qp.P)
    lines += [f"{i} {j} {_format(v)}" for i, j, v in zip(P.row, P.col, P.data)]
    lines.append("[q]")
    lines += [f"{i} {_format(v)}" for i, v in enumerate(qp.q) if v != 0]
    for label, matrix, rhs in (("A", qp.A, qp.b), ("G", qp.G, qp.h)):
        coo = sp.coo_matrix(matrix)
        lines.append(f"[{label}]")
        lines += [f"{i} {j} {_format(v)}" for i, j, v in zip(coo.row, coo.col, coo.data)]
        lines.append(f"[{'b' if label == 'A' else 'h'}]")
        lines += [f"{i} {_format(v)}" for i, v in enumerate(rhs)]
    lines.append("[bounds]")
    lines += [f"{i} {_format(lo)} {_format(hi)}" for i, (lo, hi) in enumerate(zip(qp.lb, qp.ub))]
    lines.append("[binaries]")
    lines += [str(i) for i in qp.binaries]
    if qp.names:
        lines.append("[names]")
        lines += [f"{i} {name}" for i, name in enumerate(qp.names)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def dump_solution(x: np.ndarray, path: Union[str, Path], objective: Optional[float] = None) -> None:
    lines = ["[x]"] + [f"{i} {_format(v)}" for i, v in enumerate(x)]
    if objective is not None:
        lines.append(f"objective {_format(objective)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_program(path: Union[str, Path]) -> QuadraticProgram:
    """Read a program written by dump_program."""
    section = None
    n = 0
    constant = 0.0
    triplets: Dict[str, List[Tuple[int, int, float]]] = {"P": [], "A": [], "G": []}
    vectors: Dict[str, Dict[int, float]] = {"q": {}, "b": {}, "h": {}}
    bounds: Dict[int, Tuple[float, float]] = {}
    binaries: List[int] = []
    names: List[str] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("# n_vars"):
            n = int(line.split()[-1])
        elif line.startswith("constant"):
            constant = float(line.split()[1])
        elif line.startswith("["):
            section = line.strip("[]")
        elif section in triplets:
            i, j, v = line.split()
            triplets[section].append((int(i), int(j), float(v)))
        elif section in vectors:
            i, v = line.split()
            vectors[section][int(i)] = float(v)
        elif section == "bounds":
            i, lo, hi = line.split()
            bounds[int(i)] = (float(lo), float(hi))
        elif section == "binaries":
            binaries.append(int(line))
        elif section == "names":
            names.append(line.split(maxsplit=1)[1])

    def matrix(key: str, rows: int) -> sp.csr_matrix:
        entries = triplets[key]
        if not entries:
            return sp.csr_matrix((rows, n))
        i, j, v = zip(*entries)
        return sp.csr_matrix((v, (i, j)), shape=(rows, n))

    def vector(key: str, size: int) -> np.ndarray:
        out = np.zeros(size)
        for i, v in vectors[key].items():
            out[i] = v
        return out

    n_eq = len(vectors["b"])
    n_ineq = len(vectors["h"])
    return QuadraticProgram(
        P=sp.csc_matrix(matrix("P", n)),
        q=vector("q", n),
        A=matrix("A", n_eq),
        b=vector("b", n_eq),
        G=matrix("G", n_ineq),
        h=vector("h", n_ineq),
        lb=np.array([bounds[i][0] for i in range(n)]),
        ub=np.array([bounds[i][1] for i in range(n)]),
        constant=constant,
        binaries=tuple(binaries),
        names=tuple(names),
    )
