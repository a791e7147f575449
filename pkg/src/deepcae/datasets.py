"""Small CSV datasets for smoke runs and tests.

``export_public`` writes the tabular datasets bundled with scikit-learn
(no download needed). ``write_abalone_like`` synthesizes a file with the
column layout of UCI Abalone: one categorical column, seven measurements
and an integer target.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

PUBLIC = {
    "diabetes": ("load_diabetes", "regression"),
    "wine": ("load_wine", "classification"),
    "breast_cancer": ("load_breast_cancer", "classification"),
    "digits": ("load_digits", "classification"),
}


def _write(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def export_public(out_dir: str | Path, names=tuple(PUBLIC)) -> dict[str, dict]:
    """Write each named dataset to ``out_dir/<name>.csv``; returns config entries."""
    from sklearn import datasets as skd

    out_dir = Path(out_dir)
    entries = {}
    for name in names:
        loader, task = PUBLIC[name]
        bunch = getattr(skd, loader)()
        cols = [f"f{i}" for i in range(bunch.data.shape[1])]
        rows = [[repr(float(v)) for v in x] + [str(t)] for x, t in zip(bunch.data, bunch.target)]
        path = out_dir / f"{name}.csv"
        _write(path, cols + ["target"], rows)
        entries[name] = {"name": name, "path": str(path), "target": "target", "task": task}
    return entries


def write_abalone_like(path: str | Path, n: int = 300, seed: int = 0) -> Path:
    rng = np.random.default_rng(seed)
    sex = rng.choice(["M", "F", "I"], size=n)
    length = rng.uniform(0.1, 0.8, size=n)
    diameter = 0.8 * length + rng.normal(0, 0.02, size=n)
    height = 0.25 * length + rng.normal(0, 0.01, size=n)
    whole = 2.0 * length ** 3 + rng.normal(0, 0.02, size=n)
    shucked, viscera, shell = 0.45 * whole, 0.22 * whole, 0.3 * whole
    rings = np.round(3 + 20 * length + rng.normal(0, 1.5, size=n)).astype(int)
    header = ["Sex", "Length", "Diameter", "Height", "Whole", "Shucked", "Viscera", "Shell", "Rings"]
    rows = [[s, *(f"{v:.4f}" for v in vals), str(r)]
            for s, *vals, r in zip(sex, length, diameter, height, whole, shucked, viscera, shell, rings)]
    _write(Path(path), header, rows)
    return Path(path)
