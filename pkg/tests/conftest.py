import csv
import json
from pathlib import Path

import numpy as np
import pytest

from symreg.data import Dataset, Problem, ProblemSpec


def make_dataset(X, y, names=None) -> Dataset:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    names = names or tuple(f"x{i}" for i in range(X.shape[1]))
    return Dataset(features=X, target=np.asarray(y, dtype=float), feature_names=names)


def make_problem(
    dataset: Dataset,
    name="case",
    test: Dataset | None = None,
    variable_descriptions=None,
    target_description=None,
) -> Problem:
    spec = ProblemSpec(
        name=name,
        instructions=f"recover the law behind {name}",
        data_path=Path(f"{name}.csv"),
        variable_descriptions=variable_descriptions or dataset.feature_names,
        target_description=target_description or dataset.target_name,
    )
    return Problem(spec=spec, train=dataset, test=test)


def write_csv(path: Path, X, y, header=None) -> Path:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    header = header or [f"x{i}" for i in range(X.shape[1])] + ["target"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row, t in zip(X, np.asarray(y, dtype=float)):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(t))])
    return path


def write_problem_files(tmp: Path, name: str, X, y, X_test=None, y_test=None) -> Path:
    write_csv(tmp / f"{name}.csv", X, y)
    spec = {
        "name": name,
        "instructions": f"recover the law behind {name}",
        "data_path": f"{name}.csv",
    }
    if X_test is not None:
        write_csv(tmp / f"{name}_test.csv", X_test, y_test)
        spec["test_path"] = f"{name}_test.csv"
    path = tmp / f"{name}.json"
    path.write_text(json.dumps(spec))
    return path


@pytest.fixture
def linear_dataset():
    rng = np.random.default_rng(11)
    X = rng.uniform(-3, 3, size=(60, 1))
    return make_dataset(X, 2.0 * X[:, 0])


@pytest.fixture
def kepler_dataset():
    rng = np.random.default_rng(0)
    X = rng.uniform(0.4, 30.0, size=(80, 1))
    return make_dataset(X, X[:, 0] ** 1.5, names=("R",))
