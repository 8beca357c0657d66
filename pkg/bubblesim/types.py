from dataclasses import dataclass
from dataclasses_json import DataClassJsonMixin
from typing import Final, List, Optional, Sequence, Tuple, final
import numpy as np
from numpy.typing import ArrayLike, NDArray
from ensure import check  # type: ignore

from bubblesim.errors import InvalidDistributionError, InvalidTableError, MisalignedInputError

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]
BoolArray = NDArray[np.bool_]

# Digits used for every numeric CSV cell
CSV_DIGITS: Final = 15


def format_float(value: float) -> str:
    return format(float(value), f'.{CSV_DIGITS}g')


## Numerical tolerances shared by every engine. Distribution sums are exact identities
## in the model, so drift beyond `normalization` signals a bug, never rounding.
@final
@dataclass(frozen=True)
class Tolerances(DataClassJsonMixin):
    normalization: float = 1e-12
    table: float = 1e-10
    negativity: float = 1e-15

DEFAULT_TOLERANCES: Final = Tolerances()


def _readonly(values: ArrayLike) -> FloatArray:
    array = np.array(values, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


## Agent types are the labels 1..K. Arrays index them 0..K-1 and the unmatched marker J
## is the extra column K of an extended type distribution.
@final
@dataclass(frozen=True)
class TypeSpace:
    num_types: int

    def __post_init__(self) -> None:
        check(self.num_types).is_a(int).or_raise(
            lambda _: InvalidDistributionError(f"Number of types must be an integer, got {self.num_types}"))
        check(self.num_types).is_greater_than(0).or_raise(
            lambda _: InvalidDistributionError(f"Number of types must be positive, got {self.num_types}"))

    @property
    def unmatched(self) -> int:
        return self.num_types

    def label(self, column: int) -> str:
        return "J" if column == self.num_types else str(column + 1)

    def cell_names(self) -> List[str]:
        return [f"{k + 1}_{self.label(l)}" for k in range(self.num_types) for l in range(self.num_types + 1)]


@final
class ExtendedTypeDistribution:
    def __init__(self, entries: ArrayLike):
        array = _readonly(entries)
        if array.ndim != 2 or array.shape[1] != array.shape[0] + 1:
            raise InvalidDistributionError(f"Extended type distribution must have shape (K, K+1), got {array.shape}")
        self._entries: Final = array
        self._space: Final = TypeSpace(int(array.shape[0]))

    @staticmethod
    def all_unmatched(fractions: Sequence[float]) -> 'ExtendedTypeDistribution':
        num_types = len(fractions)
        entries = np.zeros((num_types, num_types + 1))
        entries[:, num_types] = fractions
        return ExtendedTypeDistribution(entries)

    @property
    def entries(self) -> FloatArray:
        return self._entries

    @property
    def space(self) -> TypeSpace:
        return self._space

    @property
    def num_types(self) -> int:
        return self._space.num_types

    @property
    def matched(self) -> FloatArray:
        return self._entries[:, :self.num_types]

    @property
    def unmatched(self) -> FloatArray:
        return self._entries[:, self.num_types]

    def to_csv_row(self) -> List[str]:
        return [format_float(value) for value in self._entries.reshape(-1)]

    @staticmethod
    def csv_header(num_types: int) -> List[str]:
        return TypeSpace(num_types).cell_names()

    @staticmethod
    def from_csv_row(row: Sequence[str], num_types: int) -> 'ExtendedTypeDistribution':
        if len(row) != num_types * (num_types + 1):
            raise InvalidDistributionError(f"Expected {num_types * (num_types + 1)} cells, got {len(row)}")
        return ExtendedTypeDistribution(np.array([float(cell) for cell in row]).reshape(num_types, num_types + 1))

    def __repr__(self) -> str:
        return f"ExtendedTypeDistribution({self._entries.tolist()})"


@final
class TypeFractions:
    def __init__(self, values: ArrayLike):
        self._values: Final = _readonly(values)

    @property
    def values(self) -> FloatArray:
        return self._values

    def __getitem__(self, label: int) -> float:
        return float(self._values[label - 1])

    def difference(self, first: int, second: int) -> float:
        return self[first] - self[second]

    def __repr__(self) -> str:
        return f"TypeFractions({self._values.tolist()})"


@final
class TimeGrid:
    def __init__(self, times: ArrayLike):
        array = _readonly(times)
        if array.ndim != 1 or array.shape[0] < 2:
            raise MisalignedInputError(f"Time grid needs at least two points, got {array.shape}")
        if array[0] != 0.0:
            raise MisalignedInputError(f"Time grid must start at 0, got {array[0]}")
        if not np.all(np.diff(array) > 0):
            raise MisalignedInputError("Time grid must be strictly increasing")
        self._times: Final = array
        self._deltas: Final = _readonly(np.diff(array))

    @staticmethod
    def uniform(periods: int, horizon: float) -> 'TimeGrid':
        check(periods).is_greater_than(0).or_raise(
            lambda _: MisalignedInputError(f"Number of periods must be positive, got {periods}"))
        check(horizon).is_greater_than(0).or_raise(
            lambda _: MisalignedInputError(f"Horizon must be positive, got {horizon}"))
        # Exact multiples so that the uniform grid has identical deltas
        return TimeGrid(np.arange(periods + 1) * (horizon / periods))

    @property
    def times(self) -> FloatArray:
        return self._times

    @property
    def deltas(self) -> FloatArray:
        return self._deltas

    @property
    def periods(self) -> int:
        return int(self._times.shape[0] - 1)

    @property
    def horizon(self) -> float:
        return float(self._times[-1])

    def delta(self, period: int) -> float:
        return float(self._deltas[period - 1])


## The five kernels of one period, evaluated at one scenario state.
## `sigma` may be None, meaning every staying pair keeps its types (sigma[k][l][k][l] = 1);
## models with immediate break-up use this to avoid materialising a K^4 table.
@final
class ProbabilityTable:
    def __init__(self, eta: ArrayLike, theta: ArrayLike, xi: ArrayLike, sigma: Optional[ArrayLike], varsigma: ArrayLike):
        self.eta: Final = _readonly(eta)
        self.theta: Final = _readonly(theta)
        self.xi: Final = _readonly(xi)
        self.sigma: Final = None if sigma is None else _readonly(sigma)
        self.varsigma: Final = _readonly(varsigma)
        num_types = self.eta.shape[-1]
        expected = {
            "eta": (self.eta, 2),
            "theta": (self.theta, 2),
            "xi": (self.xi, 2),
            "varsigma": (self.varsigma, 3),
        }
        for name, (array, rank) in expected.items():
            if array.shape != (num_types,) * rank:
                raise InvalidTableError(f"{name} has shape {array.shape}, expected {(num_types,) * rank}")
        if self.sigma is not None and self.sigma.shape != (num_types,) * 4:
            raise InvalidTableError(f"sigma has shape {self.sigma.shape}, expected {(num_types,) * 4}")

    @property
    def num_types(self) -> int:
        return int(self.eta.shape[0])

    @property
    def b(self) -> FloatArray:
        return 1.0 - self.theta.sum(axis=-1)

    def dense_sigma(self) -> FloatArray:
        if self.sigma is not None:
            return self.sigma
        return keep_pair_sigma(self.num_types)


def keep_pair_sigma(num_types: int) -> FloatArray:
    sigma = np.zeros((num_types,) * 4)
    for k in range(num_types):
        for l in range(num_types):
            sigma[k, l, k, l] = 1.0
    return sigma

def keep_type_varsigma(num_types: int) -> FloatArray:
    varsigma = np.zeros((num_types,) * 3)
    for k in range(num_types):
        varsigma[k, :, k] = 1.0
    return varsigma


@final
@dataclass(frozen=True)
class Violation:
    invariant: str
    # 1-based type labels; K+1 denotes J
    indices: Tuple[int, ...]
    magnitude: float

    def describe(self) -> str:
        where = ",".join(str(index) for index in self.indices)
        return f"{self.invariant} at ({where}): {self.magnitude:.3g}"


@final
@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0

    def invariants(self) -> List[str]:
        return sorted({violation.invariant for violation in self.violations})

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        return "; ".join(violation.describe() for violation in self.violations)


def _labels(index: Tuple[int, ...]) -> Tuple[int, ...]:
    return tuple(int(i) + 1 for i in index)

def _excess(name: str, deviation: FloatArray, tolerance: float) -> List[Violation]:
    return [
        Violation(name, _labels(tuple(index)), float(deviation[tuple(index)]))
        for index in np.argwhere(np.abs(deviation) > tolerance)
    ]

def _negative(name: str, values: FloatArray, tolerance: float) -> List[Violation]:
    return [
        Violation(name, _labels(tuple(index)), float(values[tuple(index)]))
        for index in np.argwhere(values < -tolerance)
    ]


def validate_distribution(d: ExtendedTypeDistribution, tolerances: Tolerances = DEFAULT_TOLERANCES) -> ValidationReport:
    violations = _negative("negativity", d.entries, tolerances.negativity)
    deficit = 1.0 - float(d.entries.sum())
    if abs(deficit) > tolerances.normalization:
        violations.append(Violation("normalization", (), deficit))
    asymmetry = np.triu(d.matched - d.matched.T, k=1)
    violations += _excess("symmetry", asymmetry, tolerances.normalization)
    return ValidationReport(tuple(violations))


def validate_table(table: ProbabilityTable, d: ExtendedTypeDistribution, tolerances: Tolerances = DEFAULT_TOLERANCES) -> ValidationReport:
    tol = tolerances.table
    violations: List[Violation] = []

    violations += _negative("eta range", table.eta, tol)
    violations += _excess("eta normalization", table.eta.sum(axis=1) - 1.0, tol)

    violations += _negative("theta range", table.theta, tol)
    violations += _negative("theta residual", table.b, tol)
    flow = d.unmatched[:, None] * table.theta
    violations += _excess("theta detailed balance", np.triu(flow - flow.T, k=1), tol)

    violations += _negative("xi range", table.xi, tol)
    violations += _negative("xi range", 1.0 - table.xi, tol)
    violations += _excess("xi symmetry", np.triu(table.xi - table.xi.T, k=1), tol)

    if table.sigma is not None:
        violations += _negative("sigma range", table.sigma, tol)
        violations += _excess("sigma normalization", table.sigma.sum(axis=(2, 3)) - 1.0, tol)
        mirrored = table.sigma.transpose(1, 0, 3, 2)
        violations += _excess("sigma pair symmetry", table.sigma - mirrored, tol)

    violations += _negative("varsigma range", table.varsigma, tol)
    violations += _excess("varsigma normalization", table.varsigma.sum(axis=2) - 1.0, tol)

    return ValidationReport(tuple(violations))


def ensure_valid_distribution(d: ExtendedTypeDistribution, tolerances: Tolerances = DEFAULT_TOLERANCES) -> None:
    report = validate_distribution(d, tolerances)
    if not report.ok:
        raise InvalidDistributionError(f"Invalid extended type distribution: {report}")

def ensure_valid_table(table: ProbabilityTable, d: ExtendedTypeDistribution, tolerances: Tolerances = DEFAULT_TOLERANCES) -> None:
    report = validate_table(table, d, tolerances)
    if not report.ok:
        raise InvalidTableError(f"Invalid probability table: {report}")


def fractions(d: ExtendedTypeDistribution) -> TypeFractions:
    return TypeFractions(d.entries.sum(axis=1))
