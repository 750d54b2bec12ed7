"""Shapley-value feature attribution: an exact coalition-enumeration oracle
for small feature counts, an unbiased Monte Carlo permutation estimator,
and per-class mean-|value| summaries over an evaluation sample.

Absent features are replaced by the background feature means (a single
reference baseline): cheap, deterministic, and sufficient for ranking-level
claims, at the cost of ignoring feature dependence.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model import VariantSpec, forward
from .numerics import RngStream

EXACT_FEATURE_CAP = 12


@dataclass
class ShapleySettings:
    n_instances: int = 200
    n_permutations: int = 2000
    batch_size: int = 2048


@dataclass
class Attribution:
    """Mean absolute Shapley value per (feature, class) over a sample."""

    values: np.ndarray           # (n_features, n_classes), all >= 0
    feature_names: list[str]
    class_names: list[str]
    n_instances: int
    n_permutations: int

    def ranking(self, class_index: int | None = None) -> np.ndarray:
        """Feature indices sorted by importance, strongest first; overall
        importance (mean across classes) when class_index is None."""
        score = self.values.mean(axis=1) if class_index is None else self.values[:, class_index]
        return np.argsort(-score, kind="stable")

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "class", "mean_abs_value"])
            for i, fname in enumerate(self.feature_names):
                for j, cname in enumerate(self.class_names):
                    writer.writerow([fname, cname, repr(float(self.values[i, j]))])

    def top_k_json(self, path, k: int = 10) -> None:
        order = self.ranking()[:k]
        payload = {
            "n_instances": self.n_instances,
            "n_permutations": self.n_permutations,
            "top_features": [
                {
                    "feature": self.feature_names[i],
                    "overall": float(self.values[i].mean()),
                    "per_class": {c: float(self.values[i, j])
                                  for j, c in enumerate(self.class_names)},
                }
                for i in order
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)


def _as_2d(vals: np.ndarray) -> np.ndarray:
    vals = np.asarray(vals, dtype=np.float64)
    return vals[:, None] if vals.ndim == 1 else vals


def shapley_exact_small(f, x: np.ndarray, background_mean: np.ndarray) -> np.ndarray:
    """Exact Shapley values by enumerating all 2^m coalitions (m <= 12).

    f maps a (k, m) batch of feature rows to (k,) or (k, p) outputs; absent
    features take the background mean. Returns (m,) or (m, p) values.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    bg = np.asarray(background_mean, dtype=np.float64).reshape(-1)
    m = x.size
    if m > EXACT_FEATURE_CAP:
        raise ValueError(f"shapley_exact_small: {m} features exceeds the "
                         f"2^{EXACT_FEATURE_CAP} enumeration cap")
    masks = np.arange(2 ** m, dtype=np.int64)
    present = (masks[:, None] >> np.arange(m)) & 1       # (2^m, m)
    rows = np.where(present.astype(bool), x, bg)
    vals = _as_2d(f(rows))                               # (2^m, p)
    sizes = present.sum(axis=1)
    fact = [math.factorial(i) for i in range(m + 1)]
    weight_by_size = np.array([fact[s] * fact[m - 1 - s] / fact[m] for s in range(m)])

    out = np.zeros((m, vals.shape[1]))
    for i in range(m):
        without = masks[(masks >> i) & 1 == 0]
        w = weight_by_size[sizes[without]]
        diff = vals[without + (1 << i)] - vals[without]
        out[i] = (w[:, None] * diff).sum(axis=0)
    return out[:, 0] if out.shape[1] == 1 else out


def shapley_permutation(f, x: np.ndarray, background_mean: np.ndarray,
                        n_permutations: int, rng: RngStream,
                        batch_size: int = 2048) -> np.ndarray:
    """Monte Carlo permutation estimator, unbiased for the exact values under
    the background-mean replacement scheme.

    Each sampled feature ordering contributes the marginal f(coalition + i)
    - f(coalition) for every feature; evaluations are batched through f and
    reduced in a fixed order. Returns (m,) or (m, p) values.
    """
    if n_permutations < 1:
        raise ValueError("shapley_permutation: n_permutations must be >= 1")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    bg = np.asarray(background_mean, dtype=np.float64).reshape(-1)
    m = x.size
    perms_per_chunk = max(1, batch_size // (m + 1))
    totals = None
    done = 0
    while done < n_permutations:
        p = min(perms_per_chunk, n_permutations - done)
        perms = np.stack([rng.permutation(m) for _ in range(p)])   # (p, m)
        ranks = np.argsort(perms, axis=1)                           # rank of feature i
        grown = ranks[:, None, :] < np.arange(m + 1)[None, :, None]  # (p, m+1, m)
        rows = np.where(grown, x, bg).reshape(p * (m + 1), m)
        vals = _as_2d(f(rows)).reshape(p, m + 1, -1)
        diffs = vals[:, 1:] - vals[:, :-1]                          # (p, m, out)
        if totals is None:
            totals = np.zeros((m, diffs.shape[2]))
        np.add.at(totals, perms.reshape(-1), diffs.reshape(p * m, -1))
        done += p
    totals /= n_permutations
    return totals[:, 0] if totals.shape[1] == 1 else totals


def model_value_fn(params: dict, spec: VariantSpec, batch_size: int = 2048):
    """Wrap the model as a batched feature-row function: (k, T) -> (k, c)
    eval-mode class probabilities."""
    def f(rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        outs = []
        for start in range(0, rows.shape[0], batch_size):
            chunk = rows[start:start + batch_size]
            probs, _ = forward(params, spec, chunk.reshape(chunk.shape[0], -1, 1))
            outs.append(probs)
        return np.concatenate(outs)
    return f


def background_mean_of(background) -> np.ndarray:
    if isinstance(background, Dataset):
        feats = background.features()
    else:
        feats = np.asarray(background, dtype=np.float64)
    if feats.size == 0:
        raise ValueError("shapley: background sample is empty")
    return feats.mean(axis=0)


def shapley_estimate(params: dict, spec: VariantSpec, background, x,
                     class_index: int, n_permutations: int, rng: RngStream,
                     batch_size: int = 2048) -> np.ndarray:
    """Per-feature Shapley values of the predicted probability of one class
    for a single instance. x is (T,), (T, 1) or a 1-row batch."""
    bg = background_mean_of(background)
    f = model_value_fn(params, spec, batch_size=batch_size)
    values = shapley_permutation(lambda rows: f(rows)[:, class_index],
                                 np.asarray(x).reshape(-1), bg,
                                 n_permutations, rng, batch_size=batch_size)
    return values


def attribution_summary(params: dict, spec: VariantSpec, eval_sample: Dataset,
                        settings: ShapleySettings, rng: RngStream,
                        background: Dataset | None = None) -> Attribution:
    """Mean |Shapley| per (feature, class) over an evaluation sample; all
    class outputs share each permutation walk, so one pass covers every
    class column of the summary."""
    if len(eval_sample) == 0:
        raise ValueError("attribution_summary: evaluation sample is empty")
    bg = background_mean_of(background if background is not None else eval_sample)
    f = model_value_fn(params, spec, batch_size=settings.batch_size)
    n = min(settings.n_instances, len(eval_sample))
    pick = rng.permutation(len(eval_sample))[:n]
    feats = eval_sample.features()
    acc = np.zeros((eval_sample.seq_len, eval_sample.n_classes))
    for row in pick:
        values = shapley_permutation(f, feats[row], bg, settings.n_permutations,
                                     rng, batch_size=settings.batch_size)
        acc += np.abs(values)
    acc /= n
    return Attribution(
        values=acc,
        feature_names=[f"f{j}" for j in range(eval_sample.seq_len)],
        class_names=list(eval_sample.codec.classes),
        n_instances=int(n),
        n_permutations=settings.n_permutations,
    )
