"""Relaxed histogram MI surrogate used as the controller's privacy objective."""

import logging
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict

from .core import bin_indices
from .exceptions import ColdStartError, InfeasibleAssignmentError, ProfileError
from .metrics import estimate_pdf
from .models import BinningScheme
from .optimizer import ProgramBuilder, QuadraticProgram

logger = logging.getLogger(__name__)

NU = 1.0 / np.log(2.0)
ASSIGNMENT_TOLERANCE = 1e-8


class HistogramConstants(BaseModel):
    """Smoothed joint and marginal frequencies of the trailing history window."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    a: np.ndarray  # m x n joint
    b: np.ndarray  # n, Y marginal
    c: np.ndarray  # m, X marginal
    n_eff: float
    nu: float = NU
    window: int
    smoothing: float

    @property
    def log_ratio(self) -> np.ndarray:
        """log2(a / (b c)) per cell."""
        return np.log2(self.a / (self.c[:, np.newaxis] * self.b[np.newaxis, :]))


def update_constants(
    history_x: Sequence[float],
    history_y: Sequence[float],
    binning: BinningScheme,
    smoothing: float,
    window: int = 168,
) -> HistogramConstants:
    """Constants from the trailing `window` samples; shorter history is a cold start."""
    if len(history_x) != len(history_y):
        raise ProfileError(f"History length mismatch: {len(history_x)} vs {len(history_y)}")
    if len(history_x) < window:
        raise ColdStartError(len(history_x), window)
    hx = np.asarray(history_x, dtype=float)[-window:]
    hy = np.asarray(history_y, dtype=float)[-window:]

    a = estimate_pdf((hx, hy), binning, smoothing).probabilities
    if np.any(a <= 0):
        raise ProfileError("History leaves empty cells; a positive smoothing constant is required")
    return HistogramConstants(
        a=a,
        b=a.sum(axis=0),
        c=a.sum(axis=1),
        n_eff=window + smoothing * binning.m * binning.n,
        window=window,
        smoothing=smoothing,
    )


class MiApproxProgram(BaseModel):
    """
    Quadratic form of the surrogate over the relaxed indicators z[t, j].

    Only the row i*_t of each step's indicator matrix is a variable; the
    other rows are fixed at zero. z is flattened as t * n + j. The value is
        constant + linear @ z + 0.5 * z @ hessian @ z
    and `convex_hessian` is the PSD projection handed to the solver.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    horizon: int
    n: int
    x_bins: np.ndarray
    y_edges: np.ndarray
    gap: float
    constants: HistogramConstants
    linear: np.ndarray
    constant: float
    hessian: sp.csr_matrix
    convex_hessian: sp.csr_matrix
    min_eigenvalue: float
    projection_magnitude: float

    @property
    def size(self) -> int:
        return self.horizon * self.n

    def z_index(self, step: int, j: int) -> int:
        return step * self.n + j

    def quadratic_value(self, z: np.ndarray, convex: bool = False) -> float:
        z = np.asarray(z, dtype=float).reshape(-1)
        hessian = self.convex_hessian if convex else self.hessian
        return float(self.constant + self.linear @ z + 0.5 * z @ (hessian @ z))

    def assignment_for(self, y: Sequence[float]) -> np.ndarray:
        """One-hot z placing each y in its own bin."""
        z = np.zeros((self.horizon, self.n))
        z[np.arange(self.horizon), bin_indices(y, self.y_edges)] = 1.0
        return z

    def add_to(self, builder: ProgramBuilder, y_indices: np.ndarray, weight: float) -> np.ndarray:
        """
        Add z variables, the per-step simplex, the link between z and y, and
        `weight` times the convexified surrogate to `builder`.
        """
        z = builder.add_variables("z", self.size, 0.0, 1.0)
        lower = self.y_edges[:-1]
        upper = self.y_edges[1:]
        for t in range(self.horizon):
            cols = z[t * self.n:(t + 1) * self.n]
            builder.add_equality(cols, np.ones(self.n), 1.0)
            # sum_j z ybar_{j-1} <= y_t
            builder.add_inequality(np.append(cols, y_indices[t]), np.append(lower, -1.0), 0.0)
            # y_t <= sum_j z ybar_j - gap
            builder.add_inequality(np.append(cols, y_indices[t]), np.append(-upper, 1.0), -self.gap)
        if weight:
            coo = sp.coo_matrix(self.convex_hessian)
            builder.add_quadratic(z[coo.row], z[coo.col], weight * coo.data)
            builder.add_linear(z, weight * self.linear)
            builder.constant += weight * self.constant
        return z

    def standalone(self, y_min: float, y_max: float) -> QuadraticProgram:
        """The surrogate with its z/y constraints as a program of its own, for dumps."""
        builder = ProgramBuilder()
        y = builder.add_variables("y", self.horizon, y_min, y_max)
        self.add_to(builder, y, 1.0)
        return builder.build()


def build_mi_program(
    x_forecast: Sequence[float],
    constants: HistogramConstants,
    binning: BinningScheme,
    gap: float = 1e-6,
) -> MiApproxProgram:
    """
    Expand the surrogate into linear and quadratic coefficients in z.

    With u_ij = S_ij / N (S_ij the horizon sum of z at X-bin i, Y-bin j) and
    v_j = sum_i u_ij, each cell contributes
        (a + u) * (log2(a / (b c)) + nu u / a - nu v / b)
    which expands to a constant, a linear term and, per Y-bin j, the
    quadratic nu * (sum_i u_ij^2 / a_ij - v_j^2 / b_j).
    """
    x_bins = bin_indices(x_forecast, binning.x_edges)
    horizon = x_bins.size
    n = binning.n
    a, b = constants.a, constants.b
    N, nu = constants.n_eff, constants.nu
    log_ratio = constants.log_ratio
    column_mass = a.sum(axis=0)

    linear = ((nu + log_ratio[x_bins, :]) - nu * column_mass[np.newaxis, :] / b[np.newaxis, :]) / N
    constant = float(np.sum(a * log_ratio))

    same_bin = (x_bins[:, np.newaxis] == x_bins[np.newaxis, :]).astype(float)
    steps = np.arange(horizon)
    rows, cols = np.meshgrid(steps, steps, indexing="ij")
    raw_rows, raw_cols, raw_vals, convex_vals = [], [], [], []
    min_eigenvalue = np.inf
    projection = 0.0
    scale = 2.0 * nu / N**2
    for j in range(n):
        block = scale * (same_bin / a[x_bins, j][:, np.newaxis] - 1.0 / b[j])
        block = 0.5 * (block + block.T)
        eigenvalues, vectors = np.linalg.eigh(block)
        min_eigenvalue = min(min_eigenvalue, float(eigenvalues[0]))
        clipped = np.maximum(eigenvalues, 0.0)
        convex_block = (vectors * clipped) @ vectors.T
        convex_block = 0.5 * (convex_block + convex_block.T)
        projection += float(np.sum((block - convex_block) ** 2))
        raw_rows.append((rows * n + j).ravel())
        raw_cols.append((cols * n + j).ravel())
        raw_vals.append(block.ravel())
        convex_vals.append(convex_block.ravel())

    size = horizon * n
    index = (np.concatenate(raw_rows), np.concatenate(raw_cols))
    hessian = sp.csr_matrix((np.concatenate(raw_vals), index), shape=(size, size))
    convex_hessian = sp.csr_matrix((np.concatenate(convex_vals), index), shape=(size, size))
    projection_magnitude = float(np.sqrt(projection))
    if projection_magnitude > 1e-9:
        logger.debug(f"Surrogate Hessian projected onto PSD cone (Frobenius shift {projection_magnitude:.3e})")

    return MiApproxProgram(
        horizon=horizon,
        n=n,
        x_bins=x_bins,
        y_edges=np.asarray(binning.y_edges, dtype=float),
        gap=gap,
        constants=constants,
        linear=linear.ravel(),
        constant=constant,
        hessian=hessian,
        convex_hessian=convex_hessian,
        min_eigenvalue=min_eigenvalue,
        projection_magnitude=projection_magnitude,
    )


def _compact_assignment(program: MiApproxProgram, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    m = program.constants.a.shape[0]
    if z.ndim == 3:
        if z.shape != (program.horizon, m, program.n):
            raise InfeasibleAssignmentError(f"z has shape {z.shape}, expected {(program.horizon, m, program.n)}")
        mask = np.ones(z.shape, dtype=bool)
        mask[np.arange(program.horizon), program.x_bins, :] = False
        stray = np.max(np.abs(z[mask]), initial=0.0)
        if stray > ASSIGNMENT_TOLERANCE:
            raise InfeasibleAssignmentError(f"z has mass {stray:.3e} outside the forecast X-bin rows")
        z = z[np.arange(program.horizon), program.x_bins, :]
    z = z.reshape(program.horizon, program.n)
    if np.any(z < -ASSIGNMENT_TOLERANCE) or np.any(z > 1 + ASSIGNMENT_TOLERANCE):
        raise InfeasibleAssignmentError("z entries must lie in [0, 1]")
    row_error = np.max(np.abs(z.sum(axis=1) - 1.0))
    if row_error > ASSIGNMENT_TOLERANCE:
        raise InfeasibleAssignmentError(f"z rows must sum to 1 (off by {row_error:.3e})")
    return z


def evaluate_mi_approx(program: MiApproxProgram, z: np.ndarray) -> float:
    """
    Surrogate value at `z`, evaluated term by term over all cells.

    Accepts the compact (horizon, n) form or the full (horizon, m, n) form.
    """
    compact = _compact_assignment(program, z)
    constants = program.constants
    a, b = constants.a, constants.b
    N, nu = constants.n_eff, constants.nu

    sums = np.zeros_like(a)
    np.add.at(sums, program.x_bins, compact)
    column_sums = sums.sum(axis=0)
    value = (a + sums / N) * (
        constants.log_ratio + nu * sums / (a * N) - nu * column_sums[np.newaxis, :] / (b[np.newaxis, :] * N)
    )
    return float(np.sum(value))
