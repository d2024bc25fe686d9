"""Ideal-regime oracles: flat-target ESS and FTL policies and their leakage."""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import brentq
from scipy.stats import entropy as shannon_entropy

from .devices.ess import ess_step
from .exceptions import ProfileError
from .metrics import mi_iid, mi_markov, mutual_information_from_joint
from .models import BinningScheme, EssModel

logger = logging.getLogger(__name__)

PROBABILITY_TOLERANCE = 1e-9
TARGET_TOLERANCE = 1e-12

# (a) no wastage, (b) power covers the load range, (c) known efficiencies,
# (d) known load and mean, (e) unbounded ESS capacity, (f) unbounded FTL
# capacity, (g) continuous FTL demand, (h) half-full initial state
ASSUMPTIONS = ("a", "b", "c", "d", "e", "f", "g", "h")


class DiscreteDistribution(BaseModel):
    """Finite-support distribution of the sensitive load, kW."""
    model_config = ConfigDict(frozen=True)

    support: Tuple[float, ...]
    probabilities: Tuple[float, ...]

    @model_validator(mode="after")
    def _check(self) -> "DiscreteDistribution":
        if len(self.support) != len(self.probabilities) or not self.support:
            raise ProfileError("support and probabilities must be non-empty and of equal length")
        if len(set(self.support)) != len(self.support):
            raise ProfileError("support atoms must be distinct")
        p = np.asarray(self.probabilities)
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise ProfileError(f"probabilities must be non-negative and sum to 1 (sum {p.sum():.12f})")
        return self

    @classmethod
    def uniform(cls, support: Sequence[float]) -> "DiscreteDistribution":
        return cls(support=tuple(float(v) for v in support), probabilities=(1.0 / len(support),) * len(support))

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> "DiscreteDistribution":
        values, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
        if values.size == 0:
            raise ProfileError("cannot build a distribution from no samples")
        return cls(support=tuple(values.tolist()), probabilities=tuple((counts / counts.sum()).tolist()))

    @property
    def atoms(self) -> np.ndarray:
        return np.asarray(self.support, dtype=float)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=float)

    @property
    def mean(self) -> float:
        return float(self.atoms @ self.p)

    @property
    def minimum(self) -> float:
        return float(np.min(self.atoms[self.p > 0]))

    @property
    def maximum(self) -> float:
        return float(np.max(self.atoms[self.p > 0]))

    @property
    def entropy(self) -> float:
        return float(shannon_entropy(self.p, base=2))

    @property
    def is_degenerate(self) -> bool:
        return int(np.sum(self.p > 0)) < 2

    def exceedance(self, threshold: float) -> float:
        """P(X > threshold)."""
        return float(self.p[self.atoms > threshold].sum())

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.atoms, size=k, p=self.p)


class IdealRegime(BaseModel):
    """
    Idealized setting in which both device families could hold a flat grid
    load: y*_ess = X^mean + l_ess and y*_th = D_th^mean + X^mean.
    """
    model_config = ConfigDict(frozen=True)

    distribution: DiscreteDistribution
    thermal_demand_mean: float = Field(default=0.0, ge=0)  # D_th^mean, kW electrical
    round_trip_loss: float = Field(default=0.0, ge=0)       # l_ess, kW
    assumptions: Dict[str, bool] = Field(default_factory=lambda: {a: True for a in ASSUMPTIONS})

    @property
    def x_mean(self) -> float:
        return self.distribution.mean

    @property
    def x_min(self) -> float:
        return self.distribution.minimum

    @property
    def x_max(self) -> float:
        return self.distribution.maximum

    @property
    def y_star_ess(self) -> float:
        return self.x_mean + self.round_trip_loss

    @property
    def y_star_th(self) -> float:
        return self.thermal_demand_mean + self.x_mean

    @classmethod
    def from_samples(
        cls,
        x: Sequence[float],
        thermal_demand_mean: float = 0.0,
        ess: Optional[EssModel] = None,
    ) -> "IdealRegime":
        """Regime of an observed load; with an ESS the loss is the throughput-balancing offset."""
        loss = 0.0
        if ess is not None:
            loss = max(ess_target(x, ess) - float(np.mean(x)), 0.0)
        return cls(
            distribution=DiscreteDistribution.from_samples(x),
            thermal_demand_mean=thermal_demand_mean,
            round_trip_loss=loss,
        )


def _net_energy(y: float, x: np.ndarray, model: EssModel) -> float:
    charge = np.clip(y - x, 0.0, None)
    discharge = np.clip(x - y, 0.0, None)
    return float(model.charge_efficiency * charge.sum() - model.discharge_coefficient * discharge.sum())


def ess_target(x: Sequence[float], model: EssModel) -> float:
    """
    Flat grid load whose charging exactly refills what serving x discharges,
    so the stored energy ends where it started. Found by bracketing between
    min(x), where the battery only discharges, and the charging-only point.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ProfileError("ess_target needs at least one sample")
    low, high = float(np.min(x)), float(np.max(x))
    if high - low <= TARGET_TOLERANCE:
        return low
    if model.discharge_coefficient == 0:
        return low
    return float(brentq(_net_energy, low, high, args=(x, model), xtol=TARGET_TOLERANCE))


class IdealEssResult(BaseModel):
    """Flat ESS policy and the storage trajectory it implies."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    y: np.ndarray
    energy: np.ndarray  # kWh after each step; unbounded storage unless a model is given
    capacity_violation_step: Optional[int] = None
    power_violation_step: Optional[int] = None

    @property
    def feasible(self) -> bool:
        return self.capacity_violation_step is None and self.power_violation_step is None


def ideal_ess_policy(x: Sequence[float], regime: IdealRegime, model: Optional[EssModel] = None) -> IdealEssResult:
    """
    y = y*_ess at every step. The battery absorbs y - x; with a finite
    `model` the first step leaving [0, E_max] or exceeding a power rating is
    flagged (the trajectory continues unclipped).
    """
    x = np.asarray(x, dtype=float)
    y = np.full(x.size, regime.y_star_ess)
    charge = np.clip(y - x, 0.0, None)
    discharge = np.clip(x - y, 0.0, None)
    result = IdealEssResult(y=y, energy=np.zeros(x.size))

    if model is None:
        result.energy = np.cumsum(charge - discharge)
        return result
    energy = model.initial_energy
    for t in range(x.size):
        energy = ess_step(model, energy, charge[t], discharge[t], 1.0)
        result.energy[t] = energy
        if result.capacity_violation_step is None and not 0.0 <= energy <= model.capacity_kwh:
            result.capacity_violation_step = t
        if result.power_violation_step is None and (
            charge[t] > model.charge_power_kw or discharge[t] > model.discharge_power_kw
        ):
            result.power_violation_step = t
    if not result.feasible:
        logger.debug(
            f"Flat ESS target {regime.y_star_ess:.3f} kW leaves the storage limits "
            f"(capacity at {result.capacity_violation_step}, power at {result.power_violation_step})"
        )
    return result


def ideal_ftl_policy(x: Sequence[float], regime: IdealRegime) -> np.ndarray:
    """y = max(x, y*_th): flat where the load allows it, passthrough above."""
    return np.maximum(np.asarray(x, dtype=float), regime.y_star_th)


def _policy_joint(distribution: DiscreteDistribution, y_star: float) -> np.ndarray:
    y_values = np.maximum(distribution.atoms, y_star)
    columns, inverse = np.unique(y_values, return_inverse=True)
    joint = np.zeros((distribution.atoms.size, columns.size))
    joint[np.arange(distribution.atoms.size), inverse] = distribution.p
    return joint


class LeakageComparison(BaseModel):
    """The g(k)/k H(X) leakage prediction beside the exact MI of the induced joint."""
    exceedance: float
    entropy_x: float
    predicted: float
    exact: float


def ftl_leakage_prediction(distribution: DiscreteDistribution, y_star: float) -> LeakageComparison:
    """
    Predicted FTL leakage P(X > y*) * H(X), and the exact MI of (X, max(X, y*)).

    The two agree when no atom exceeds y* and differ otherwise: the exact
    value is H(Y), which also counts the uncertainty of whether x > y*.
    """
    exceedance = distribution.exceedance(y_star)
    h_x = distribution.entropy
    return LeakageComparison(
        exceedance=exceedance,
        entropy_x=h_x,
        predicted=exceedance * h_x,
        exact=mutual_information_from_joint(_policy_joint(distribution, y_star)),
    )


class MarkovCounts(BaseModel):
    """Consecutive-pair pattern counts of an ideal FTL trajectory."""
    g1: int  # y_t flat
    g2: int  # y_t passthrough after a flat y_t-1
    g3: int  # y_t and y_t-1 both passthrough
    k: int

    @property
    def total(self) -> int:
        return self.g1 + self.g2 + self.g3


def markov_decomposition_counts(x: Sequence[float], y: Sequence[float], y_star: float) -> MarkovCounts:
    """
    Classify the pairs (y_t, y_t-1) for t = 3..k (k - 2 pairs, 1-based).

    A step is flat when y_t == y* and passthrough otherwise.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise ProfileError(f"Length mismatch: x has {x.size} samples, y has {y.size}")
    k = x.size
    if k < 3:
        raise ProfileError(f"markov_decomposition_counts needs at least 3 samples, got {k}")
    flat = np.abs(y - y_star) <= TARGET_TOLERANCE
    current, previous = flat[2:], flat[1:-1]
    return MarkovCounts(
        g1=int(np.sum(current)),
        g2=int(np.sum(~current & previous)),
        g3=int(np.sum(~current & ~previous)),
        k=k,
    )


def _plugin_entropy(*columns: np.ndarray) -> float:
    _, counts = np.unique(np.column_stack(columns), axis=0, return_counts=True)
    return float(shannon_entropy(counts, base=2))


def markov_ftl_prediction(x: Sequence[float], y: Sequence[float], y_star: float) -> float:
    """((g2 - g3)/k) H(X_t) + (g3/k) H(X_t, X_t-1), with plug-in entropies over the observed atoms."""
    x = np.asarray(x, dtype=float)
    counts = markov_decomposition_counts(x, y, y_star)
    h_single = _plugin_entropy(x)
    h_pair = _plugin_entropy(x[1:], x[:-1])
    return (counts.g2 - counts.g3) / counts.k * h_single + counts.g3 / counts.k * h_pair


def atom_binning(x: Sequence[float], y: Sequence[float]) -> BinningScheme:
    """Binning with one bin per distinct value, so histogram estimates become plug-in estimates."""

    def edges(values: Sequence[float]) -> Tuple[float, ...]:
        atoms = np.unique(np.asarray(values, dtype=float))
        if atoms.size == 1:
            return (float(atoms[0]) - 0.5, float(atoms[0]) + 0.5)
        gaps = np.diff(atoms)
        inner = atoms[:-1] + gaps / 2.0
        return tuple([float(atoms[0] - gaps[0] / 2.0)] + inner.tolist() + [float(atoms[-1] + gaps[-1] / 2.0)])

    return BinningScheme(x_edges=edges(x), y_edges=edges(y))


class PropositionReport(BaseModel):
    """Checks of the two minimal-MI constructions on one X distribution."""
    entropy_x: float
    constant_y_mi: float
    passthrough_mi: float
    random_mi: List[float]
    uniform_conditional_mi: float
    uniform_conditional_needs_discharge: bool
    minimal_entropy_holds: bool
    maximal_conditional_entropy_holds: bool


def verify_propositions(samples: Sequence[float], trials: int = 50, seed: int = 0) -> PropositionReport:
    """
    A constant Y leaks nothing and no random p(y|x) leaks less; a uniform
    p(y|x) also leaks nothing but needs y below some x, i.e. discharging.
    """
    distribution = DiscreteDistribution.from_samples(samples)
    if distribution.is_degenerate:
        raise ProfileError("Proposition checks need an X with at least two outcomes")
    rng = np.random.default_rng(seed)
    p_x = distribution.p
    atoms = distribution.atoms

    constant_mi = mutual_information_from_joint(p_x[:, np.newaxis])
    passthrough_mi = mutual_information_from_joint(np.diag(p_x))

    random_mi = []
    for _ in range(trials):
        outcomes = int(rng.integers(2, atoms.size + 3))
        conditional = rng.dirichlet(np.ones(outcomes), size=atoms.size)
        random_mi.append(mutual_information_from_joint(p_x[:, np.newaxis] * conditional))

    # y on an evenly spaced grid spanning the X range; every x maps uniformly onto it
    y_support = np.linspace(distribution.minimum, distribution.maximum, atoms.size + 1)
    uniform = p_x[:, np.newaxis] * np.full((atoms.size, y_support.size), 1.0 / y_support.size)
    uniform_mi = mutual_information_from_joint(uniform)

    return PropositionReport(
        entropy_x=distribution.entropy,
        constant_y_mi=constant_mi,
        passthrough_mi=passthrough_mi,
        random_mi=random_mi,
        uniform_conditional_mi=uniform_mi,
        uniform_conditional_needs_discharge=bool(np.min(y_support) < distribution.maximum),
        minimal_entropy_holds=constant_mi <= min(random_mi, default=np.inf) + PROBABILITY_TOLERANCE,
        maximal_conditional_entropy_holds=uniform_mi <= PROBABILITY_TOLERANCE,
    )


class SampledCheck(BaseModel):
    """Closed-form vs sampled values of the ideal policies."""
    k: int
    ess_mi: float
    ftl_exact_mi: float
    ftl_sampled_mi: float
    ftl_predicted_mi: float
    sampled_exceedance: float
    counts: MarkovCounts
    markov_prediction: float
    markov_sampled_mi: float


def sampled_check(regime: IdealRegime, k: int, seed: int = 0) -> SampledCheck:
    """Draw k i.i.d. samples and score both ideal policies with the package estimators."""
    rng = np.random.default_rng(seed)
    x = regime.distribution.sample(k, rng)
    y_ess = ideal_ess_policy(x, regime).y
    y_ftl = ideal_ftl_policy(x, regime)
    leakage = ftl_leakage_prediction(regime.distribution, regime.y_star_th)
    ftl_binning = atom_binning(x, y_ftl)
    return SampledCheck(
        k=k,
        ess_mi=mi_iid(x, y_ess, atom_binning(x, y_ess)),
        ftl_exact_mi=leakage.exact,
        ftl_sampled_mi=mi_iid(x, y_ftl, ftl_binning),
        ftl_predicted_mi=leakage.predicted,
        sampled_exceedance=float(np.mean(x > regime.y_star_th)),
        counts=markov_decomposition_counts(x, y_ftl, regime.y_star_th),
        markov_prediction=markov_ftl_prediction(x, y_ftl, regime.y_star_th),
        markov_sampled_mi=mi_markov(x, y_ftl, ftl_binning),
    )


class TheoryReport(BaseModel):
    """Everything the `theory` command reports."""
    support: Tuple[float, ...]
    probabilities: Tuple[float, ...]
    y_star_ess: float
    y_star_th: float
    leakage: LeakageComparison
    propositions: PropositionReport
    sampled: SampledCheck
    separation_holds: bool


def run_theory_checks(
    distribution: Optional[DiscreteDistribution] = None,
    y_star_th: Optional[float] = None,
    k: int = 100_000,
    seed: int = 0,
) -> TheoryReport:
    """
    Default regime: X uniform on {1, 2, 3, 4} kW with y*_th = 3 kW, where one
    atom in four exceeds the flat target.
    """
    distribution = distribution or DiscreteDistribution.uniform([1.0, 2.0, 3.0, 4.0])
    if y_star_th is None:
        y_star_th = 3.0
    regime = IdealRegime(distribution=distribution, thermal_demand_mean=max(y_star_th - distribution.mean, 0.0))
    y_star_th = regime.y_star_th
    leakage = ftl_leakage_prediction(distribution, y_star_th)
    propositions = verify_propositions(distribution.sample(max(k, 1), np.random.default_rng(seed)), seed=seed)
    sampled = sampled_check(regime, k, seed)
    separation = (leakage.exact > 0) == (distribution.exceedance(y_star_th) > 0) and sampled.ess_mi <= PROBABILITY_TOLERANCE
    logger.info(
        f"[Theory] exact FTL MI {leakage.exact:.6f} bits, predicted {leakage.predicted:.6f} bits, "
        f"sampled {sampled.ftl_sampled_mi:.6f} bits at k={k}"
    )
    return TheoryReport(
        support=distribution.support,
        probabilities=distribution.probabilities,
        y_star_ess=regime.y_star_ess,
        y_star_th=y_star_th,
        leakage=leakage,
        propositions=propositions,
        sampled=sampled,
        separation_holds=separation,
    )
