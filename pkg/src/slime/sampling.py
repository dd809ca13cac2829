"""Perturbation sampling around an instance, with extendable datasets.

Rows are drawn as ``instance + feature_scales * z`` with z standard normal.
The generator is counter based (Philox keyed by the dataset seed, one child
stream per fixed-size block of rows), so the sample is a pure function of
``(seed, row index, p)``: growing a dataset from n to n' regenerates rows
``n..n'-1`` exactly as a single draw of n' rows would have produced them,
and the first n rows are reused untouched.  That property is what makes the
adaptive sample-growing loop cheap and reproducible.

Kernel weights follow the usual locality kernel
``exp(-d^2 / width^2)`` with d the Euclidean distance measured in
scale-normalized coordinates, so the instance itself would get weight 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, ModelQueryError, ValidationError
from .models import Model

__all__ = [
    "InstanceSpec",
    "PerturbationDataset",
    "default_kernel_width",
    "gaussian_perturb",
    "kernel_weights",
    "query_model",
    "build_dataset",
    "extend_dataset",
    "scales_from_csv",
]

_BLOCK = 1024            # rows per generator block; fixed, part of the stream format
_MIN_WEIGHT = np.finfo(float).tiny   # keep weights strictly positive even at extreme distance


@dataclass(frozen=True)
class InstanceSpec:
    """The point to explain plus per-feature names and perturbation scales."""

    values: np.ndarray
    feature_names: tuple[str, ...] | None = None
    feature_scales: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size < 1:
            raise ValidationError("instance values must be a non-empty 1-d vector")
        if not np.isfinite(values).all():
            raise ValidationError("instance values must be finite")
        p = values.size
        names = self.feature_names
        if names is None:
            names = tuple(f"x{i + 1}" for i in range(p))
        else:
            names = tuple(names)
            if len(names) != p:
                raise ValidationError("feature_names length must match the instance")
            if len(set(names)) != p:
                raise ValidationError("feature names must be unique")
        object.__setattr__(self, "feature_names", names)
        scales = self.feature_scales
        if scales is None:
            scales = np.ones(p)
        else:
            scales = np.asarray(scales, dtype=float)
            if scales.shape != (p,):
                raise ValidationError("feature_scales length must match the instance")
            if not np.isfinite(scales).all() or (scales <= 0).any():
                raise ValidationError("feature_scales must be finite and strictly positive")
        object.__setattr__(self, "feature_scales", scales)

    @property
    def n_features(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class PerturbationDataset:
    """Synthetic neighborhood: rows, model answers, kernel weights, lineage.

    ``seed`` and ``kernel_width`` are carried along so the dataset can be
    extended later without re-querying existing rows.
    """

    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    seed: int
    n: int
    instance: InstanceSpec
    kernel_width: float

    def __post_init__(self):
        if self.X.shape != (self.n, self.instance.n_features):
            raise ValidationError("X shape must be (n, p)")
        if self.y.shape != (self.n,) or self.weights.shape != (self.n,):
            raise ValidationError("y and weights must have one entry per row")
        if not np.isfinite(self.y).all():
            raise ValidationError("responses must be finite")
        if (self.weights <= 0).any() or (self.weights > 1).any():
            raise ValidationError("weights must lie in (0, 1]")


def default_kernel_width(p: int) -> float:
    """Conventional locality kernel width, 0.75 * sqrt(p)."""
    if p < 1:
        raise ValidationError("p must be at least 1")
    return 0.75 * math.sqrt(p)


def _block_rows(seed: int, block: int, p: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(block,))
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.standard_normal((_BLOCK, p))


def _standard_rows(seed: int, start: int, stop: int, p: int) -> np.ndarray:
    """Rows [start, stop) of the infinite standard-normal table for this seed."""
    out = np.empty((stop - start, p))
    first = start // _BLOCK
    last = (stop - 1) // _BLOCK
    for block in range(first, last + 1):
        rows = _block_rows(seed, block, p)
        lo = max(start, block * _BLOCK)
        hi = min(stop, (block + 1) * _BLOCK)
        out[lo - start:hi - start] = rows[lo - block * _BLOCK:hi - block * _BLOCK]
    return out


def gaussian_perturb(instance: InstanceSpec, n: int, seed: int, *,
                     start: int = 0) -> np.ndarray:
    """Draw perturbation rows ``start .. start+n-1`` around the instance.

    Deterministic in ``(seed, row index, p)``; the default ``start=0`` yields
    the first n rows.  The instance itself is never injected.
    """
    if n < 1:
        raise ValidationError("n must be at least 1")
    if start < 0:
        raise ValidationError("start must be nonnegative")
    z = _standard_rows(int(seed), start, start + n, instance.n_features)
    return instance.values + instance.feature_scales * z


def kernel_weights(X: np.ndarray, instance: InstanceSpec, width: float) -> np.ndarray:
    """Locality weights ``exp(-d^2 / width^2)`` in scale-normalized coordinates."""
    if not (width > 0 and math.isfinite(width)):
        raise ValidationError("kernel width must be positive and finite")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != instance.n_features:
        raise ValidationError("X must be 2-d with one column per feature")
    z = (X - instance.values) / instance.feature_scales
    d2 = np.einsum("ij,ij->i", z, z)
    return np.maximum(np.exp(-d2 / (width * width)), _MIN_WEIGHT)


def query_model(model: Model, X: np.ndarray) -> np.ndarray:
    """Ask the model for predictions and insist on a sane answer.

    For classifiers the convention is that predictions are positive-class
    probabilities, so they arrive as plain floats like any regression output.
    """
    X = np.asarray(X, dtype=float)
    predictions = np.asarray(model.predict_batch(X), dtype=float)
    if predictions.shape != (X.shape[0],):
        raise ModelQueryError(
            f"model returned shape {predictions.shape} for {X.shape[0]} rows")
    if not np.isfinite(predictions).all():
        raise ModelQueryError("model returned non-finite predictions")
    return predictions


def build_dataset(model: Model, instance: InstanceSpec, n: int, seed: int,
                  kernel_width: float | None = None) -> PerturbationDataset:
    """Sample n rows, query the model once, attach kernel weights."""
    if n < 2:
        raise DegenerateInputError("a usable dataset needs at least 2 rows")
    width = default_kernel_width(instance.n_features) if kernel_width is None else kernel_width
    X = gaussian_perturb(instance, n, seed)
    y = query_model(model, X)
    w = kernel_weights(X, instance, width)
    return PerturbationDataset(X=X, y=y, weights=w, seed=int(seed), n=n,
                               instance=instance, kernel_width=float(width))


def extend_dataset(model: Model, dataset: PerturbationDataset,
                   new_n: int) -> PerturbationDataset:
    """Grow a dataset to ``new_n`` rows, querying the model only for new rows.

    The first ``dataset.n`` rows are reused bit for bit; the added rows are
    exactly those a fresh ``build_dataset(..., new_n, same seed)`` would have
    produced, by the prefix property of the row generator.
    """
    if new_n <= dataset.n:
        raise ValidationError(
            f"new_n must exceed the current {dataset.n} rows, got {new_n}")
    X_new = gaussian_perturb(dataset.instance, new_n - dataset.n, dataset.seed,
                             start=dataset.n)
    y_new = query_model(model, X_new)
    w_new = kernel_weights(X_new, dataset.instance, dataset.kernel_width)
    return PerturbationDataset(
        X=np.vstack([dataset.X, X_new]),
        y=np.concatenate([dataset.y, y_new]),
        weights=np.concatenate([dataset.weights, w_new]),
        seed=dataset.seed,
        n=new_n,
        instance=dataset.instance,
        kernel_width=dataset.kernel_width,
    )


def scales_from_csv(path: str | Path) -> tuple[tuple[str, ...], np.ndarray]:
    """Estimate per-feature scales from background data.

    The file must be UTF-8 CSV with a header row, one feature per column,
    and '.' as the decimal separator.  Returns the header names and the
    sample standard deviation of each column; constant columns fall back to
    scale 1 so downstream validation (scales > 0) holds.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValidationError(f"background file {path} is empty") from None
            rows = list(reader)
    except OSError as exc:
        raise ValidationError(f"cannot read background file {path}: {exc}") from exc
    if not header or any(not name.strip() for name in header):
        raise ValidationError("background file needs a header row of feature names")
    if len(rows) < 2:
        raise ValidationError("background file needs at least 2 data rows")
    p = len(header)
    data = np.empty((len(rows), p))
    for i, row in enumerate(rows):
        if len(row) != p:
            raise ValidationError(
                f"background row {i + 2} has {len(row)} fields, expected {p}")
        try:
            data[i] = [float(v) for v in row]
        except ValueError as exc:
            raise ValidationError(f"background row {i + 2}: {exc}") from None
    if not np.isfinite(data).all():
        raise ValidationError("background data must be finite")
    scales = data.std(axis=0, ddof=1)
    scales[scales <= 0] = 1.0
    return tuple(name.strip() for name in header), scales
