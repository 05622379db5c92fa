"""Synthetic and CSV datasets for desk-scale runs."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from ..training import Dataset

__all__ = ["DatasetError", "blobs", "spirals", "seqcopy", "from_csv", "gen_dataset"]


class DatasetError(ValueError):
    pass


def blobs(centers: int, spread: float, count: int, rng: np.random.Generator, dim: int = 2,
          radius: float = 1.0) -> Dataset:
    """Isotropic Gaussian clusters with centers evenly spaced on a circle.

    Labels cycle through the centers before shuffling, so class counts differ
    by at most one.
    """
    if centers < 2 or count < centers or spread <= 0 or dim < 2:
        raise DatasetError(f"invalid blobs parameters: centers={centers}, spread={spread}, count={count}")
    angles = 2 * math.pi * np.arange(centers) / centers
    mu = np.zeros((centers, dim))
    mu[:, 0] = radius * np.cos(angles)
    mu[:, 1] = radius * np.sin(angles)
    labels = rng.permutation(np.arange(count) % centers)
    X = mu[labels] + spread * rng.standard_normal((count, dim))
    return Dataset(X, labels.astype(np.int64), "blobs", centers)


def spirals(count: int, noise: float, rng: np.random.Generator, turns: float = 1.5) -> Dataset:
    """Two interleaved Archimedean spirals in the plane."""
    if count < 2 or noise < 0:
        raise DatasetError(f"invalid spirals parameters: count={count}, noise={noise}")
    labels = rng.permutation(np.arange(count) % 2)
    t = np.sqrt(rng.uniform(0.0, 1.0, count)) * turns * 2 * math.pi
    phase = labels * math.pi
    r = t / (turns * 2 * math.pi)
    X = np.stack([r * np.cos(t + phase), r * np.sin(t + phase)], axis=1)
    X += noise * rng.standard_normal(X.shape)
    return Dataset(X, labels.astype(np.int64), "spirals", 2)


def seqcopy(vocab: int, length: int, count: int, rng: np.random.Generator) -> Dataset:
    """Next-token prediction on ``p + p`` for a random prefix ``p`` of ``length // 2`` tokens.

    Inputs are ``length - 1`` positions of one-hot token plus one-hot position
    features (width ``vocab + length - 1``). Targets are the next token; only
    positions whose target lies in the repeated half are labelled, the rest
    carry -1. Every labelled target therefore occurs earlier in the input.
    """
    if vocab < 2 or length < 4 or length % 2 or count < 1:
        raise DatasetError(f"invalid seqcopy parameters: vocab={vocab}, length={length}, count={count}")
    half = length // 2
    prefix = rng.integers(0, vocab, size=(count, half))
    seq = np.concatenate([prefix, prefix], axis=1)
    inp, tgt = seq[:, :-1], seq[:, 1:].copy()
    tgt[:, : half - 1] = -1
    steps = length - 1
    X = np.zeros((count, steps, vocab + steps))
    X[np.arange(count)[:, None], np.arange(steps)[None, :], inp] = 1.0
    X[:, np.arange(steps), vocab + np.arange(steps)] = 1.0
    return Dataset(X, tgt.astype(np.int64), "seqcopy", vocab)


def from_csv(path, label_column: str) -> Dataset:
    """Numeric feature matrix plus integer labels; any bad cell names its row and column."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DatasetError(f"{path}: no label column {label_column!r} in header {header}")
        li = header.index(label_column)
        feats, labels = [], []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}: row {rowno} has {len(row)} fields, expected {len(header)}")
            vals = []
            for ci, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(f"{path}: row {rowno}, column {header[ci]!r}: not numeric: {cell!r}") from None
                if not math.isfinite(v):
                    raise DatasetError(f"{path}: row {rowno}, column {header[ci]!r}: not finite")
                if ci == li:
                    if v != int(v) or v < 0:
                        raise DatasetError(f"{path}: row {rowno}, column {header[ci]!r}: label must be a nonnegative integer")
                    labels.append(int(v))
                else:
                    vals.append(v)
            feats.append(vals)
    if not feats:
        raise DatasetError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(feats, dtype=np.float64), y, "csv", int(y.max()) + 1)


def gen_dataset(kind: str, params: dict, rng: np.random.Generator) -> Dataset:
    params = dict(params)
    if kind == "blobs":
        return blobs(int(params.pop("centers", 2)), float(params.pop("spread", 0.5)),
                     int(params.pop("count", 1000)), rng, **params)
    if kind == "spirals":
        return spirals(int(params.pop("count", 1000)), float(params.pop("noise", 0.05)), rng, **params)
    if kind == "seqcopy":
        return seqcopy(int(params.pop("vocab", 8)), int(params.pop("length", 16)), int(params.pop("count", 512)), rng)
    if kind == "csv":
        return from_csv(params["path"], params["label_column"])
    raise DatasetError(f"unknown dataset kind {kind!r}")
