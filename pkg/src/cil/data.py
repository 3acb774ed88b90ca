"""Core data model: datasets, model indicators, prior settings, theta vectors."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "ModelIndicator",
    "PriorSpec",
    "ThetaVector",
    "validate_dataset",
    "standardize_controls",
]

MEAN_TOL = 1e-10
SD_TOL = 1e-8


class DataError(ValueError):
    """Invalid input data (bad shapes, non-finite entries, constant columns)."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Outcome y (n,), treatments D (n, T) and controls X (n, J).

    Binary treatments are stored as 0/1 floats. ``standardized`` records
    whether the control columns were centered and scaled to unit sample sd;
    ``constant_controls`` lists columns exempt from that check.
    """

    y: np.ndarray
    D: np.ndarray
    X: np.ndarray
    treatment_names: tuple[str, ...]
    control_names: tuple[str, ...]
    standardized: bool = False
    constant_controls: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.D.shape[1]

    @property
    def J(self) -> int:
        return self.X.shape[1]

    def binary_treatments(self) -> np.ndarray:
        """Boolean mask of treatments whose values are all in {0, 1}."""
        out = np.zeros(self.T, dtype=bool)
        for t in range(self.T):
            col = self.D[:, t]
            out[t] = bool(np.all((col == 0.0) | (col == 1.0)))
        return out


def _check_finite(name: str, a: np.ndarray) -> None:
    bad = ~np.isfinite(a)
    if bad.any():
        loc = np.argwhere(bad)[0]
        if a.ndim == 1:
            raise DataError(f"non-finite value in {name} at row {int(loc[0])}")
        raise DataError(f"non-finite value in {name} at row {int(loc[0])}, column {int(loc[1])}")


def validate_dataset(
    y,
    D=None,
    X=None,
    treatment_names=None,
    control_names=None,
    standardize: bool = False,
) -> Dataset:
    """Build a validated Dataset from raw arrays.

    Accepts an existing Dataset as the single argument, in which case its
    invariants are re-checked and an identical object is returned.
    With ``standardize=True`` the control columns are centered and scaled
    (constant columns are an error).
    """
    if isinstance(y, Dataset):
        ds = y
        if standardize and not ds.standardized:
            return standardize_controls(ds)
        validate_dataset(ds.y, ds.D, ds.X, ds.treatment_names, ds.control_names)
        return ds

    y = np.asarray(y, dtype=float).reshape(-1)
    D = np.asarray(D, dtype=float)
    if D.ndim == 1:
        D = D[:, None]
    X = np.zeros((y.shape[0], 0)) if X is None else np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]

    n = y.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 rows, got {n}")
    if D.shape[0] != n:
        raise DataError(f"treatment rows {D.shape[0]} != outcome rows {n}")
    if X.shape[0] != n:
        raise DataError(f"control rows {X.shape[0]} != outcome rows {n}")
    if D.shape[1] < 1:
        raise DataError("need at least one treatment column")

    _check_finite("y", y)
    _check_finite("D", D)
    _check_finite("X", X)

    T, J = D.shape[1], X.shape[1]
    tnames = tuple(treatment_names) if treatment_names else tuple(f"d{t + 1}" for t in range(T))
    cnames = tuple(control_names) if control_names else tuple(f"x{j + 1}" for j in range(J))
    if len(tnames) != T:
        raise DataError(f"{len(tnames)} treatment names for {T} columns")
    if len(cnames) != J:
        raise DataError(f"{len(cnames)} control names for {J} columns")

    ds = Dataset(_frozen(y), _frozen(D), _frozen(X), tnames, cnames)
    if standardize:
        ds = standardize_controls(ds)
    return ds


def standardize_controls(ds: Dataset) -> Dataset:
    """Center each control column and scale it to unit sample sd."""
    if ds.standardized:
        return ds
    X = np.array(ds.X)
    mu = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1) if ds.n > 1 else np.zeros(ds.J)
    const = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(mu)))
    if const.size:
        cols = ", ".join(ds.control_names[j] for j in const)
        raise DataError(f"cannot standardize constant control column(s): {cols}")
    X = (X - mu) / sd
    return replace(ds, X=_frozen(X), standardized=True)


@dataclass(frozen=True, order=True)
class ModelIndicator:
    """Inclusion bits for one model: delta over treatments, gamma over controls.

    Ordering is lexicographic on the concatenated bits, giving deterministic
    map keys.
    """

    delta: tuple[int, ...]
    gamma: tuple[int, ...]

    def __post_init__(self):
        for bits in (self.delta, self.gamma):
            if any(b not in (0, 1) for b in bits):
                raise ValueError("indicator bits must be 0 or 1")

    @classmethod
    def from_arrays(cls, delta, gamma) -> "ModelIndicator":
        return cls(tuple(int(b) for b in delta), tuple(int(b) for b in gamma))

    @classmethod
    def null(cls, T: int, J: int) -> "ModelIndicator":
        return cls((0,) * T, (0,) * J)

    @classmethod
    def full(cls, T: int, J: int) -> "ModelIndicator":
        return cls((1,) * T, (1,) * J)

    @property
    def size(self) -> int:
        return sum(self.delta) + sum(self.gamma)

    def to_bitstrings(self) -> tuple[str, str]:
        d = "".join(str(b) for b in self.delta) or "-"
        g = "".join(str(b) for b in self.gamma) or "-"
        return d, g


@dataclass(frozen=True)
class PriorSpec:
    """Fixed hyperparameters of the outcome-model prior.

    ``rho=None`` means the per-dataset default 1/(J^2+1). ``model_prior``
    selects the prior over inclusion indicators: "cil" (feature-driven
    control probabilities), "betabinomial" (exchangeable over controls,
    parameters bb_a/bb_b) or "uniform".
    """

    tau: float = 0.348
    rho: float | None = None
    a_phi: float = 0.01
    b_phi: float = 0.01
    treat_incl: float = 0.5
    model_prior: str = "cil"
    bb_a: float = 1.0
    bb_b: float = 1.0
    include_intercept: bool = True
    intercept_scale: float = 1e6

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.rho is not None and not 0.0 < self.rho < 0.5:
            raise ValueError(f"rho must lie in (0, 1/2), got {self.rho}")
        if not (self.a_phi > 0 and self.b_phi > 0):
            raise ValueError("a_phi and b_phi must be positive")
        if not 0.0 < self.treat_incl < 1.0:
            raise ValueError(f"treat_incl must lie in (0, 1), got {self.treat_incl}")
        if self.model_prior not in ("cil", "betabinomial", "uniform"):
            raise ValueError(f"unknown model prior {self.model_prior!r}")
        if self.model_prior == "betabinomial" and not (self.bb_a > 0 and self.bb_b > 0):
            raise ValueError("beta-binomial parameters must be positive")

    def rho_for(self, J: int) -> float:
        """Concrete rho for a dataset with J controls."""
        if self.rho is not None:
            return self.rho
        if J == 0:
            return 0.25  # never used without controls; any interior value works
        return 1.0 / (J * J + 1.0)


@dataclass(frozen=True)
class ThetaVector:
    """Hyperparameters of the control-inclusion model.

    ``theta0`` is the offset; ``theta[g]`` multiplies the features of every
    treatment mapped to group g by ``group_map`` (length T, values 0..G-1,
    identity by default so G = T).
    """

    theta0: float
    theta: np.ndarray
    group_map: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        theta = _frozen(np.atleast_1d(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "theta", theta)
        gm = self.group_map
        if gm is None:
            gm = np.arange(theta.shape[0])
        gm = np.ascontiguousarray(gm, dtype=np.int64)
        gm.flags.writeable = False
        object.__setattr__(self, "group_map", gm)
        if not np.isfinite(self.theta0) or not np.all(np.isfinite(theta)):
            raise ValueError("theta entries must be finite")
        G = theta.shape[0]
        if gm.ndim != 1 or gm.size == 0:
            raise ValueError("group_map must be a non-empty 1-d index array")
        if gm.min() < 0 or gm.max() >= G:
            raise ValueError("group_map indices must lie in 0..G-1")
        if np.unique(gm).size != G:
            raise ValueError("every group needs at least one treatment")

    @property
    def T(self) -> int:
        return int(self.group_map.shape[0])

    @property
    def G(self) -> int:
        return int(self.theta.shape[0])

    @classmethod
    def zero(cls, T: int, group_map=None) -> "ThetaVector":
        if group_map is None:
            return cls(0.0, np.zeros(T))
        gm = np.asarray(group_map, dtype=np.int64)
        return cls(0.0, np.zeros(int(gm.max()) + 1), gm)

    @classmethod
    def from_flat(cls, x, group_map=None) -> "ThetaVector":
        """Build from the stacked vector (theta0, theta_1..theta_G)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(float(x[0]), x[1:], group_map)

    def to_flat(self) -> np.ndarray:
        return np.concatenate(([self.theta0], self.theta))
