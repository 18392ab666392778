#!/usr/bin/env python3
"""Regenerate the bundled desk-scale problems under problems/.

Every dataset is a noiseless draw from a known closed form, written with
full-precision reprs so regeneration is byte-stable for a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import json
from pathlib import Path

import numpy as np


def _write_csv(path: Path, header: list[str], X: np.ndarray, y: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row, target in zip(X, y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def _emit(
    out_dir: Path,
    name: str,
    instructions: str,
    variable_descriptions: list[str],
    target_description: str,
    ground_truth: str,
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    y_test: np.ndarray,
) -> None:
    header = [f"x{i}" for i in range(X_train.shape[1])] + ["target"]
    _write_csv(out_dir / f"{name}.csv", header, X_train, y_train)
    _write_csv(out_dir / f"{name}_test.csv", header, X_test, y_test)
    (out_dir / f"{name}.json").write_text(
        json.dumps(
            {
                "name": name,
                "instructions": instructions,
                "data_path": f"{name}.csv",
                "test_path": f"{name}_test.csv",
                "variable_descriptions": variable_descriptions,
                "target_description": target_description,
                "ground_truth": ground_truth,
            },
            indent=2,
        )
        + "\n"
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "problems"))
    parser.add_argument("--rows", type=int, default=200, help="training rows per problem")
    parser.add_argument("--test-rows", type=int, default=100)
    parser.add_argument("--seed", type=int, default=20240)
    args = parser.parse_args()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    n, m = args.rows, args.test_rows

    # Orbital period against orbit size: T = R^(3/2)
    R = rng.uniform(0.4, 30.0, size=(n + m, 1))
    T = R[:, 0] ** 1.5
    _emit(
        out_dir,
        "kepler",
        "Relate a planet's orbital period to the size of its orbit.",
        ["semi-major axis of the orbit (astronomical units)"],
        "orbital period (years)",
        "x0 ^ 1.5",
        R[:n], T[:n], R[n:], T[n:],
    )

    # Product-over-product ratio law
    Z = rng.uniform(1.0, 5.0, size=(n + m, 4))
    y = Z[:, 0] * Z[:, 1] / (Z[:, 2] * Z[:, 3])
    _emit(
        out_dir,
        "power_ratio",
        "The response scales with two drivers and is diluted by two others.",
        [
            "first driving factor",
            "second driving factor",
            "first diluting factor",
            "second diluting factor",
        ],
        "dimensionless response",
        "(x0 * x1) / (x2 * x3)",
        Z[:n], y[:n], Z[n:], y[n:],
    )

    # Plain linear mixture
    L = rng.uniform(-4.0, 4.0, size=(n + m, 2))
    y = 2.5 * L[:, 0] - 1.3 * L[:, 1] + 0.7
    _emit(
        out_dir,
        "linear_mix",
        "A weighted combination of two influences plus a constant offset.",
        ["first influence", "second influence"],
        "combined response",
        "2.5*x0 - 1.3*x1 + 0.7",
        L[:n], y[:n], L[n:], y[n:],
    )

    # Exponentially damped oscillation
    t = rng.uniform(0.0, 10.0, size=(n + m, 1))
    y = np.exp(-0.3 * t[:, 0]) * np.cos(2.2 * t[:, 0])
    _emit(
        out_dir,
        "damped_oscillation",
        "A displacement that swings back and forth while dying away.",
        ["elapsed time (seconds)"],
        "displacement",
        "exp(-0.3*x0) * cos(2.2*x0)",
        t[:n], y[:n], t[n:], y[n:],
    )

    # Saturating exponential growth
    s = rng.uniform(0.0, 8.0, size=(n + m, 1))
    y = 3.0 * (1.0 - np.exp(-0.8 * s[:, 0]))
    _emit(
        out_dir,
        "saturating_growth",
        "A quantity that rises quickly at first and levels off at a ceiling.",
        ["dose"],
        "observed effect",
        "3.0 * (1.0 - exp(-0.8*x0))",
        s[:n], y[:n], s[n:], y[n:],
    )

    print(f"wrote 5 problems to {out_dir}")


if __name__ == "__main__":
    main()
