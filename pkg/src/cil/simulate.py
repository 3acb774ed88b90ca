"""Synthetic designs and the replication harness.

Single- and multi-treatment linear designs with a controllable level of
confounding (overlap between outcome-active and treatment-active
controls), artificial-control augmentation, and a driver that runs method
comparisons over seeded replicates and aggregates RMSE relative to an
oracle least-squares benchmark.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.special import expit

from .baselines import dml_double_selection, oracle_ols, outcome_lasso
from .data import Dataset, PriorSpec, validate_dataset
from .rng import derive_seed, substream
from .sampler import inclusion_probabilities
from .workflow import FitConfig, run_fit

__all__ = [
    "SimDesign",
    "Truth",
    "HarnessOptions",
    "ExperimentReport",
    "generate_single_treatment",
    "generate_multi_treatment",
    "generate_augmented",
    "generate_dataset",
    "augment_artificial_controls",
    "run_experiment",
    "summarize_records",
    "scenario",
    "SCENARIOS",
]


@dataclass(frozen=True)
class SimDesign:
    """One simulation cell: dimensions, activity pattern and effect sizes."""

    kind: str = "single"  # "single" | "multi" | "augmented"
    n: int = 100
    J: int = 49
    T: int = 1
    num_active_controls: int = 6
    confounding_overlap: int = 6
    alpha_true: tuple = (1.0,)
    seed: int = 0
    replicates: int = 50
    augment: int = 0  # artificial controls appended (augmented kind)

    def __post_init__(self):
        if self.kind not in ("single", "multi", "augmented"):
            raise ValueError(f"unknown design kind {self.kind!r}")
        if self.confounding_overlap > self.num_active_controls:
            raise ValueError("overlap cannot exceed the number of active controls")
        if len(self.alpha_true) != self.T:
            raise ValueError(f"{len(self.alpha_true)} effects for {self.T} treatments")


@dataclass(frozen=True)
class Truth:
    gamma_true: np.ndarray  # bool (J,)
    d_parents: np.ndarray  # bool (T, J): controls feeding each treatment
    alpha: np.ndarray


def generate_single_treatment(design: SimDesign) -> tuple[Dataset, Truth]:
    """Standard-normal controls; treatment and outcome both linear in
    disjoint-except-for-``overlap`` active sets of equal size, unit
    coefficients and unit noise."""
    if design.kind != "single":
        raise ValueError(f"expected a 'single' design, got {design.kind!r}")
    k, ov, J, n = design.num_active_controls, design.confounding_overlap, design.J, design.n
    if 2 * k - ov > J:
        raise ValueError(f"J={J} too small for two size-{k} sets with overlap {ov}")
    rng = substream(design.seed, "sg")
    y_active = np.arange(k)
    d_active = np.arange(k - ov, 2 * k - ov)
    X = rng.standard_normal((n, J))
    d = X[:, d_active].sum(axis=1) + rng.standard_normal(n)
    alpha = float(design.alpha_true[0])
    y = alpha * d + X[:, y_active].sum(axis=1) + rng.standard_normal(n)
    data = validate_dataset(y, d, X)
    gamma = np.zeros(J, dtype=bool)
    gamma[y_active] = True
    parents = np.zeros((1, J), dtype=bool)
    parents[0, d_active] = True
    return data, Truth(gamma, parents, np.array([alpha]))


def generate_multi_treatment(design: SimDesign) -> tuple[Dataset, Truth]:
    """Twenty outcome-active controls in five blocks of four; treatment t is
    driven by block t plus a growing slice of inactive controls, all with
    unit coefficients and unit noise."""
    if design.kind != "multi":
        raise ValueError(f"expected a 'multi' design, got {design.kind!r}")
    T, J, n = design.T, design.J, design.n
    if not 2 <= T <= 5:
        warnings.warn(f"multi-treatment pattern is defined for T in 2..5; generating T={T} anyway")
    need = max(20, 20 + 4 * T)
    if J < need:
        raise ValueError(f"need J >= {need} controls for T={T}, got {J}")
    rng = substream(design.seed, "mt")
    X = rng.standard_normal((n, J))
    parents = np.zeros((T, J), dtype=bool)
    D = np.empty((n, T))
    for t in range(T):
        parents[t, 4 * t : 4 * t + 4] = True
        parents[t, 20 : 20 + 4 * (t + 1)] = True
        D[:, t] = X[:, parents[t]].sum(axis=1) + rng.standard_normal(n)
    alpha = np.asarray(design.alpha_true, dtype=float)
    y = D @ alpha + X[:, :20].sum(axis=1) + rng.standard_normal(n)
    data = validate_dataset(y, D, X)
    gamma = np.zeros(J, dtype=bool)
    gamma[:20] = True
    return data, Truth(gamma, parents, alpha)


def generate_augmented(design: SimDesign) -> tuple[Dataset, Truth]:
    """Binary-treatment base design plus ``design.augment`` artificial
    controls that track the treatment but never touch the outcome.

    The base draw does not depend on ``augment``, so designs differing only
    in the augmentation count share the same underlying data."""
    if design.kind != "augmented":
        raise ValueError(f"expected an 'augmented' design, got {design.kind!r}")
    k, ov, J, n = design.num_active_controls, design.confounding_overlap, design.J, design.n
    if 2 * k - ov > J:
        raise ValueError(f"J={J} too small for two size-{k} sets with overlap {ov}")
    rng = substream(design.seed, "sg")
    y_active = np.arange(k)
    d_active = np.arange(k - ov, 2 * k - ov)
    X = rng.standard_normal((n, J))
    lin = 0.5 * X[:, d_active].sum(axis=1)
    d = (rng.random(n) < expit(lin)).astype(float)
    alpha = float(design.alpha_true[0])
    y = alpha * d + X[:, y_active].sum(axis=1) + rng.standard_normal(n)
    data = validate_dataset(y, d, X)
    if design.augment:
        data = augment_artificial_controls(
            data, {0: design.augment}, seed=derive_seed(design.seed, "aug")
        )
    gamma = np.zeros(data.J, dtype=bool)
    gamma[y_active] = True
    parents = np.zeros((1, data.J), dtype=bool)
    parents[0, d_active] = True
    return data, Truth(gamma, parents, np.array([alpha]))


_GENERATORS = {
    "single": generate_single_treatment,
    "multi": generate_multi_treatment,
    "augmented": generate_augmented,
}


def generate_dataset(design: SimDesign) -> tuple[Dataset, Truth]:
    return _GENERATORS[design.kind](design)


def augment_artificial_controls(data: Dataset, counts, seed: int = 0) -> Dataset:
    """Append controls correlated with binary treatments but not the outcome.

    For each targeted treatment t, ``counts[t]`` new columns are drawn
    N(1.5, 1) on treated rows and N(-1.5, 1) on untreated rows. Original
    columns are untouched; the result is marked unstandardized.
    """
    if not isinstance(counts, dict):
        counts = {t: int(c) for t, c in enumerate(counts)}
    counts = {t: c for t, c in counts.items() if c}
    if not counts:
        return data
    binary = data.binary_treatments()
    rng = substream(seed, "artificial-controls")
    cols = [np.asarray(data.X)]
    names = list(data.control_names)
    for t in sorted(counts):
        if not 0 <= t < data.T:
            raise ValueError(f"treatment index {t} out of range")
        if not binary[t]:
            raise ValueError(
                f"artificial controls need a binary target; treatment "
                f"{data.treatment_names[t]!r} is not 0/1"
            )
        c = counts[t]
        center = 3.0 * data.D[:, t] - 1.5  # +1.5 when treated, -1.5 otherwise
        cols.append(center[:, None] + rng.standard_normal((data.n, c)))
        names.extend(f"z_{data.treatment_names[t]}_{i + 1}" for i in range(c))
    X_new = np.hstack(cols)
    return validate_dataset(
        data.y, data.D, X_new, data.treatment_names, names, standardize=False
    )


@dataclass(frozen=True)
class HarnessOptions:
    """Desk-scale method settings used inside the harness."""

    iterations: int = 2_000
    burn_in: int = 500
    n_draws: int = 1_500
    theta_mode: str = "ep"
    level: float = 0.95


def _fit_config(opts: HarnessOptions, seed: int, theta_mode: str) -> FitConfig:
    return FitConfig(
        theta_mode=theta_mode,
        iterations=opts.iterations,
        burn_in=opts.burn_in,
        n_draws=opts.n_draws,
        levels=(0.5, opts.level),
        seed=seed,
    )


def _run_method(method: str, data: Dataset, truth: Truth, opts: HarnessOptions, seed: int):
    """Returns (alpha_hat, model_size, selected, width) for one replicate."""
    level = opts.level
    if method == "oracle":
        fit = oracle_ols(data, truth.gamma_true, level=level)
        return fit.alpha_hat, float(truth.gamma_true.sum()), fit.pvalues < 0.05, fit.ci_upper - fit.ci_lower
    if method == "dml":
        fit = dml_double_selection(data, level=level)
        return fit.alpha_hat, float(fit.selected.sum()), fit.pvalues < 0.05, fit.ci_upper - fit.ci_lower
    if method == "lasso":
        fit = outcome_lasso(data, seed=seed)
        return fit.alpha_hat, float(np.count_nonzero(fit.control_coef)), fit.alpha_hat != 0, None
    if method in ("cil", "cil_eb", "bma"):
        if method == "bma":
            spec = PriorSpec(model_prior="betabinomial", bb_a=1.0, bb_b=1.0)
            mode = "ep"
        else:
            spec = PriorSpec()
            mode = "eb" if method == "cil_eb" else opts.theta_mode
        res = run_fit(data, spec, _fit_config(opts, seed, mode))
        _, q = inclusion_probabilities(res.samples)
        bounds = res.inference.intervals[level]
        return (
            res.inference.alpha_hat,
            float(q.sum()),
            res.inference.inclusion > 0.5,
            bounds[:, 1] - bounds[:, 0],
        )
    raise ValueError(f"unknown method {method!r}")


def _run_replicate(job):
    cell, design, r, methods, opts, master_seed = job
    rep_seed = derive_seed(master_seed, cell, r)
    data, truth = generate_dataset(replace(design, seed=rep_seed))
    T = data.T
    alpha = truth.alpha
    records = []
    for method in methods:
        start = time.perf_counter()
        rec = {
            "cell": cell,
            "method": method,
            "replicate": r,
            "seed": rep_seed,
            "true_size": float(truth.gamma_true.sum()),
            "error": "",
        }
        try:
            alpha_hat, size, selected, width = _run_method(
                method, data, truth, opts, derive_seed(rep_seed, method)
            )
            rec["sq_err"] = float(np.sum((alpha_hat - alpha) ** 2)) / T
            rec["model_size"] = size
            for t in range(T):
                rec[f"alpha_hat_{t + 1}"] = float(alpha_hat[t])
                rec[f"selected_{t + 1}"] = float(selected[t]) if selected is not None else np.nan
                rec[f"width_{t + 1}"] = float(width[t]) if width is not None else np.nan
        except Exception as exc:  # noqa: BLE001 - failures become records
            rec["sq_err"] = np.nan
            rec["model_size"] = np.nan
            rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["elapsed"] = time.perf_counter() - start
        records.append(rec)
    return records


def summarize_records(records: pd.DataFrame) -> pd.DataFrame:
    """Aggregate per-replicate records into per-(cell, method) rows.

    RMSE is sqrt(mean ||alpha_hat - alpha||^2 / T) over successful
    replicates; ratios divide by the oracle RMSE of the same cell. A cell is
    flagged when any method failed on more than 5% of its replicates.
    """
    rows = []
    sel_cols = [c for c in records.columns if c.startswith("selected_")]
    width_cols = [c for c in records.columns if c.startswith("width_")]
    for (cell, method), grp in records.groupby(["cell", "method"], sort=True):
        ok = grp[grp["error"] == ""]
        n_fail = len(grp) - len(ok)
        rmse = float(np.sqrt(ok["sq_err"].mean())) if len(ok) else np.nan
        row = {
            "cell": cell,
            "method": method,
            "replicates": len(grp),
            "failures": n_fail,
            "rmse": rmse,
            "model_size": float(ok["model_size"].mean()) if len(ok) else np.nan,
            "size_ratio": float((ok["model_size"] / ok["true_size"]).mean()) if len(ok) else np.nan,
            "select_freq": float(ok[sel_cols].mean(axis=1).mean()) if len(ok) else np.nan,
            "mean_width": float(ok[width_cols].mean(axis=1).mean()) if len(ok) else np.nan,
            "elapsed": float(grp["elapsed"].sum()),
            "flagged": bool(n_fail > 0.05 * len(grp)),
        }
        rows.append(row)
    summary = pd.DataFrame(rows)
    oracle = summary[summary["method"] == "oracle"].set_index("cell")["rmse"]
    summary["rmse_ratio"] = [
        row.rmse / oracle[row.cell] if row.cell in oracle.index and oracle[row.cell] > 0 else np.nan
        for row in summary.itertuples()
    ]
    return summary


@dataclass
class ExperimentReport:
    records: pd.DataFrame
    designs: dict[str, SimDesign]
    methods: list[str]
    options: HarnessOptions
    seed: int
    summary: pd.DataFrame = field(init=False)

    def __post_init__(self):
        self.summary = summarize_records(self.records)

    def plot_data(self) -> pd.DataFrame:
        """Summary joined with per-cell design coordinates, for plotting."""
        meta = pd.DataFrame(
            {
                "cell": name,
                "kind": d.kind,
                "n": d.n,
                "J": d.J,
                "T": d.T,
                "active": d.num_active_controls,
                "overlap": d.confounding_overlap,
                "alpha": d.alpha_true[0],
                "augment": d.augment,
            }
            for name, d in self.designs.items()
        )
        return meta.merge(
            self.summary[["cell", "method", "rmse_ratio", "size_ratio", "select_freq"]], on="cell"
        )


def run_experiment(
    designs: dict[str, SimDesign],
    methods: list[str],
    R: int | None = None,
    seed: int = 0,
    workers: int = 1,
    options: HarnessOptions = HarnessOptions(),
) -> ExperimentReport:
    """Run every method on R replicates of every design cell.

    Replicate r of cell c sees a dataset that depends only on (seed, c, r),
    so reports are reproducible and independent of scheduling. The oracle
    benchmark is always included. Failures are recorded per replicate, not
    raised.
    """
    if not methods:
        raise ValueError("need at least one method")
    methods = list(methods)
    if "oracle" not in methods:
        methods.insert(0, "oracle")
    jobs = []
    for cell, design in designs.items():
        reps = R if R is not None else design.replicates
        for r in range(reps):
            jobs.append((cell, design, r, methods, options, seed))

    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_replicate, jobs, chunksize=1))
    else:
        chunks = [_run_replicate(job) for job in jobs]
    records = pd.DataFrame([rec for chunk in chunks for rec in chunk])
    records = records.sort_values(["cell", "method", "replicate"], kind="stable").reset_index(
        drop=True
    )
    return ExperimentReport(
        records=records, designs=dict(designs), methods=methods, options=options, seed=seed
    )


def scenario(name: str, alpha: float | None = None, R: int | None = None, seed: int = 0):
    """Named design grids mirroring the simulation studies.

    Returns (designs, methods). ``alpha`` filters the fig1 grid to one
    effect size.
    """
    if name == "fig1":
        alphas = (1.0, 1.0 / 3.0, 0.0) if alpha is None else (float(alpha),)
        designs = {
            f"fig1_a{a:g}_ov{ov}": SimDesign(
                kind="single", n=100, J=49, T=1, num_active_controls=6,
                confounding_overlap=ov, alpha_true=(a,), replicates=R or 50, seed=seed,
            )
            for a in alphas
            for ov in range(7)
        }
        return designs, ["oracle", "cil", "bma", "dml", "lasso"]
    if name == "growing-dim":
        dims = ((50, 24), (100, 99), (100, 199))
        designs = {
            f"grow_J{J}_ov{ov}": SimDesign(
                kind="single", n=n, J=J, T=1, num_active_controls=6,
                confounding_overlap=ov, alpha_true=(1.0,), replicates=R or 50, seed=seed,
            )
            for n, J in dims
            for ov in range(7)
        }
        return designs, ["oracle", "cil", "cil_eb", "bma", "dml", "lasso"]
    if name == "sparsity":
        designs = {
            f"sparse_k{k}_ov{ov}": SimDesign(
                kind="single", n=100, J=99, T=1, num_active_controls=k,
                confounding_overlap=ov, alpha_true=(1.0,), replicates=R or 50, seed=seed,
            )
            for k in (6, 12, 18)
            for ov in sorted({int(round(v)) for v in np.linspace(0, k, 7)})
        }
        return designs, ["oracle", "cil", "bma", "dml", "lasso"]
    if name == "multitreat":
        designs = {
            f"multi_T{T}": SimDesign(
                kind="multi", n=100, J=95, T=T, num_active_controls=20,
                confounding_overlap=20, alpha_true=(1.0,) * T, replicates=R or 25, seed=seed,
            )
            for T in (2, 3, 4, 5)
        }
        return designs, ["oracle", "cil", "bma", "dml", "lasso"]
    if name == "augmented":
        designs = {
            f"aug{c}": SimDesign(
                kind="augmented", n=2000, J=20, T=1, num_active_controls=6,
                confounding_overlap=3, alpha_true=(0.1,), replicates=R or 3,
                seed=seed, augment=c,
            )
            for c in (0, 50)
        }
        return designs, ["oracle", "cil", "dml"]
    raise ValueError(f"unknown scenario {name!r}")


SCENARIOS = ("fig1", "growing-dim", "sparsity", "multitreat", "augmented")
