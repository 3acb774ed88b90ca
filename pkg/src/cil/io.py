"""CSV input/output.

All emitted files start with '#' comment lines recording the package
version, the seed and the resolved configuration, and numbers are written
with 17 significant digits so round-trips are exact at double precision.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from ._version import __version__
from .data import DataError, Dataset, validate_dataset
from .inference import TreatmentInference
from .priors import FeatureMatrix

__all__ = [
    "write_csv_with_header",
    "read_csv_any",
    "dataset_to_csv",
    "dataset_from_csv",
    "features_to_csv",
    "features_from_csv",
    "inference_to_csv",
]

FLOAT_FMT = "%.17g"


def standard_header(kind: str, seed, config_items=()) -> list[str]:
    lines = [f"cil {kind} v1", f"version: {__version__}", f"seed: {seed}"]
    lines += [f"config: {k}={v}" for k, v in config_items]
    return lines


def write_csv_with_header(df: pd.DataFrame, path, header_lines=()) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        df.to_csv(fh, index=False, float_format=FLOAT_FMT, lineterminator="\n")


def read_csv_any(path) -> tuple[pd.DataFrame, list[str]]:
    """Read a CSV, returning the frame and any leading '#' comment lines."""
    comments = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            else:
                break
    try:
        df = pd.read_csv(path, comment="#")
    except Exception as exc:
        raise DataError(f"malformed CSV {path}: {exc}") from exc
    return df, comments


def dataset_to_csv(data: Dataset, path, outcome_name: str = "y", extra_header=()) -> None:
    cols = {outcome_name: data.y}
    for t, name in enumerate(data.treatment_names):
        cols[name] = data.D[:, t]
    for j, name in enumerate(data.control_names):
        cols[name] = data.X[:, j]
    header = list(extra_header) + [
        f"outcome: {outcome_name}",
        "treatments: " + ",".join(data.treatment_names),
        "controls: " + ",".join(data.control_names),
        f"standardized: {str(data.standardized).lower()}",
    ]
    write_csv_with_header(pd.DataFrame(cols), path, header)


def _parse_role(comments: list[str], key: str) -> list[str] | None:
    for line in comments:
        if line.startswith(f"{key}:"):
            value = line.split(":", 1)[1].strip()
            return [v.strip() for v in value.split(",") if v.strip()]
    return None


def dataset_from_csv(
    path,
    outcome: str | None = None,
    treatments: list[str] | None = None,
    controls: list[str] | None = None,
    standardize: bool = False,
) -> Dataset:
    """Load a dataset, resolving column roles from arguments or from the
    role comments written by :func:`dataset_to_csv`.

    With ``controls`` unset, every column that is neither the outcome nor a
    treatment is a control.
    """
    df, comments = read_csv_any(path)
    outcome = outcome or (_parse_role(comments, "outcome") or [None])[0]
    treatments = treatments or _parse_role(comments, "treatments")
    controls = controls if controls is not None else _parse_role(comments, "controls")
    if outcome is None or not treatments:
        raise DataError(f"{path}: outcome/treatment columns not specified and not recorded in the file")
    for name in [outcome, *treatments, *(controls or [])]:
        if name not in df.columns:
            raise DataError(f"{path}: column {name!r} not found")
    if controls is None:
        controls = [c for c in df.columns if c != outcome and c not in treatments]
    try:
        y = df[outcome].to_numpy(dtype=float)
        D = df[treatments].to_numpy(dtype=float)
        X = df[controls].to_numpy(dtype=float) if controls else None
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: non-numeric data ({exc})") from exc
    return validate_dataset(y, D, X, treatments, controls, standardize=standardize)


def features_to_csv(F: FeatureMatrix, data: Dataset, path, header_lines=()) -> None:
    df = pd.DataFrame(F.F, columns=list(data.treatment_names))
    df.insert(0, "control", list(data.control_names))
    header = list(header_lines) + [
        f"method: {F.method}",
        "families: " + ",".join(F.families),
    ]
    write_csv_with_header(df, path, header)


def features_from_csv(path) -> tuple[pd.DataFrame, list[str]]:
    return read_csv_any(path)


def inference_to_csv(inference: TreatmentInference, names, path, header_lines=()) -> None:
    cols = {
        "treatment": list(names),
        "estimate": inference.alpha_hat,
        "mc_se": inference.alpha_se,
        "inclusion": inference.inclusion,
    }
    for level in sorted(inference.intervals):
        tag = f"{level * 100:g}"
        cols[f"lower{tag}"] = inference.intervals[level][:, 0]
        cols[f"upper{tag}"] = inference.intervals[level][:, 1]
    write_csv_with_header(pd.DataFrame(cols), path, header_lines)


def draws_to_csv(inference: TreatmentInference, names, path, header_lines=()) -> None:
    df = pd.DataFrame(inference.draws, columns=[f"alpha_{n}" for n in names])
    df.insert(0, "weight", inference.weights)
    write_csv_with_header(df, path, header_lines)
