"""Histogram privacy metrics: PDFs, entropy, i.i.d. and first-order Markov MI."""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.stats import entropy as shannon_entropy

from .core import bin_indices
from .exceptions import ProfileError
from .models import BinningScheme, MiReport

logger = logging.getLogger(__name__)

NEGATIVE_CLIP = 1e-12


class EmpiricalPdf(BaseModel):
    """Smoothed histogram estimate over one or two binned axes."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    axes: Tuple[str, ...]
    counts: np.ndarray
    probabilities: np.ndarray
    sample_count: int
    smoothing: float

    @property
    def dims(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.probabilities.shape

    def marginal(self, axis: int) -> np.ndarray:
        if self.dims == 1:
            return self.probabilities
        return self.probabilities.sum(axis=1 - axis)


def _clip(value: float, label: str) -> float:
    if value < 0:
        if value < -NEGATIVE_CLIP:
            logger.debug(f"{label} came out at {value:.3e} bits; clipped to 0")
        return 0.0
    return float(value)


def _as_sample_matrix(samples) -> np.ndarray:
    try:
        array = np.asarray(samples, dtype=float)
    except ValueError as e:
        raise ProfileError("PDF samples must be equal-length sequences") from e
    if array.ndim == 1:
        array = array[np.newaxis, :]
    if array.ndim != 2 or array.shape[0] not in (1, 2):
        raise ProfileError("estimate_pdf takes one or two aligned sequences")
    if array.shape[1] == 0:
        raise ProfileError("estimate_pdf needs at least one sample")
    return array


def estimate_pdf(
    samples,
    binning: BinningScheme,
    smoothing: float = 0.0,
    axes: Optional[Sequence[str]] = None,
) -> EmpiricalPdf:
    """
    Histogram PDF with additive smoothing.

    Args:
        samples: one sequence, or two aligned sequences for a joint PDF
        binning: bin edges for the axes
        smoothing: count added to every cell
        axes: which binning axis each sequence uses; defaults to "x" for one
            sequence and ("x", "y") for two

    Returns:
        EmpiricalPdf with cell p = (count + smoothing) / (k + smoothing * cells)
    """
    matrix = _as_sample_matrix(samples)
    if axes is None:
        axes = ("x",) if matrix.shape[0] == 1 else ("x", "y")
    axes = tuple(axes)
    if len(axes) != matrix.shape[0]:
        raise ProfileError(f"{matrix.shape[0]} sequences given for axes {axes}")

    indices = [bin_indices(row, binning.edges(axis)) for row, axis in zip(matrix, axes)]
    shape = tuple(binning.edges(axis).size - 1 for axis in axes)
    flat = np.ravel_multi_index(indices, shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape).astype(float)

    k = matrix.shape[1]
    probabilities = (counts + smoothing) / (k + smoothing * counts.size)
    return EmpiricalPdf(
        axes=axes,
        counts=counts,
        probabilities=probabilities,
        sample_count=k,
        smoothing=smoothing,
    )


def entropy(pdf: EmpiricalPdf) -> float:
    """Shannon entropy in bits."""
    return float(shannon_entropy(pdf.probabilities.ravel(), base=2))


def mutual_information_from_joint(joint: np.ndarray) -> float:
    """MI in bits of a 2-D joint probability table, by the direct double sum."""
    joint = np.asarray(joint, dtype=float)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    rows, cols = np.nonzero(joint > 0)
    p = joint[rows, cols]
    value = float(np.sum(p * np.log2(p / (px[rows] * py[cols]))))
    return _clip(value, "MI")


def mi_iid(x: Sequence[float], y: Sequence[float], binning: BinningScheme, smoothing: float = 0.0) -> float:
    """MI between X and Y treating each step as a draw from one pooled joint."""
    if len(x) != len(y):
        raise ProfileError(f"Length mismatch: x has {len(x)} samples, y has {len(y)}")
    if len(x) < 2:
        raise ProfileError("mi_iid needs at least 2 samples")
    joint = estimate_pdf((x, y), binning, smoothing)
    return mutual_information_from_joint(joint.probabilities)


def _sparse_entropy(counts: np.ndarray, total_cells: int, smoothing: float) -> float:
    """Entropy of a smoothed histogram given only its occupied-cell counts."""
    k = counts.sum()
    denominator = k + smoothing * total_cells
    p = (counts + smoothing) / denominator
    value = -float(np.sum(p * np.log2(p)))
    empty = total_cells - counts.size
    if smoothing > 0 and empty > 0:
        q = smoothing / denominator
        value -= empty * q * np.log2(q)
    return value


def _tuple_entropy(columns: Sequence[np.ndarray], sizes: Sequence[int], smoothing: float) -> float:
    codes = np.ravel_multi_index(tuple(columns), tuple(sizes))
    _, counts = np.unique(codes, return_counts=True)
    return _sparse_entropy(counts.astype(float), int(np.prod(sizes)), smoothing)


def mi_markov(
    x: Sequence[float],
    y: Sequence[float],
    binning: BinningScheme,
    smoothing: float = 0.0,
    asymptotic: bool = False,
) -> float:
    """
    First-order stationary Markov MI in bits.

    Pairwise terms use pooled histograms of consecutive tuples (x_t, x_t-1,
    y_t, y_t-1); single-step terms use the pooled joint of all k samples:
        ((k-1) * I_pair - (k-2) * I_single) / k
    With asymptotic=True the large-k limit I_pair - I_single is returned.
    Occupied cells only are stored, so memory is O(k).
    """
    if len(x) != len(y):
        raise ProfileError(f"Length mismatch: x has {len(x)} samples, y has {len(y)}")
    k = len(x)
    if k < 3:
        raise ProfileError(f"mi_markov needs at least 3 samples, got {k}")

    ix = bin_indices(x, binning.x_edges)
    iy = bin_indices(y, binning.y_edges)
    m, n = binning.m, binning.n

    h_x = _tuple_entropy([ix], [m], smoothing)
    h_y = _tuple_entropy([iy], [n], smoothing)
    h_xy = _tuple_entropy([ix, iy], [m, n], smoothing)
    i_single = h_x + h_y - h_xy

    h_xx = _tuple_entropy([ix[1:], ix[:-1]], [m, m], smoothing)
    h_yy = _tuple_entropy([iy[1:], iy[:-1]], [n, n], smoothing)
    h_xxyy = _tuple_entropy([ix[1:], ix[:-1], iy[1:], iy[:-1]], [m, m, n, n], smoothing)
    i_pair = h_xx + h_yy - h_xxyy

    if asymptotic:
        value = i_pair - i_single
    else:
        value = ((k - 1) * i_pair - (k - 2) * i_single) / k
    return _clip(value, "Markov MI")


def score(
    x: Sequence[float],
    y: Sequence[float],
    binning: BinningScheme,
    smoothing: float = 0.0,
) -> MiReport:
    """IID MI, Markov MI and H(X) of one profile pair."""
    return MiReport(
        iid_mi=mi_iid(x, y, binning, smoothing),
        markov_mi=mi_markov(x, y, binning, smoothing),
        entropy_x=entropy(estimate_pdf(x, binning, smoothing, axes=("x",))),
        sample_count=len(x),
    )
