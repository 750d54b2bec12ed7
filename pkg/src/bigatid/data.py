"""Flow-record ingestion and preparation: CSV loading with type inference,
cleaning, label/categorical encoding, min-max scaling, sequence reshaping,
stratified splitting, class balancing (random oversampling and SMOTE), and
a synthetic desk-scale dataset generator."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .numerics import RngStream


class DataError(Exception):
    """Base class for dataset pipeline failures."""


class MissingLabelError(DataError):
    pass


class RaggedRowError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class UnknownClassError(DataError):
    pass


class StratifyError(DataError):
    pass


# ---------------------------------------------------------------------------
# tables and codecs
# ---------------------------------------------------------------------------

@dataclass
class RawTable:
    """A typed view of one CSV: feature columns plus the label column.
    kinds[i] is 'numeric' when every non-empty cell of column i parses as a
    real number, else 'categorical'."""

    columns: list[str]
    kinds: list[str]
    rows: list[list[str]]
    label_column: str

    @property
    def label_index(self) -> int:
        return self.columns.index(self.label_column)

    def feature_indices(self) -> list[int]:
        li = self.label_index
        return [i for i in range(len(self.columns)) if i != li]


@dataclass(frozen=True)
class LabelCodec:
    """Bijective class-name <-> index map; indices follow lexicographic name order."""

    classes: tuple[str, ...]

    @classmethod
    def fit(cls, names) -> "LabelCodec":
        return cls(classes=tuple(sorted(set(names))))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def to_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise UnknownClassError(f"label {name!r} not in codec classes {self.classes}") from None

    def from_index(self, idx: int) -> str:
        return self.classes[idx]

    def encode(self, names) -> np.ndarray:
        lut = {c: i for i, c in enumerate(self.classes)}
        try:
            return np.array([lut[n] for n in names], dtype=np.int64)
        except KeyError as exc:
            raise UnknownClassError(f"label {exc.args[0]!r} not in codec classes "
                                    f"{self.classes}") from None

    def to_dict(self) -> dict:
        return {"classes": list(self.classes)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelCodec":
        return cls(classes=tuple(d["classes"]))


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature min/max fitted on the training split only."""

    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(mins=np.asarray(d["mins"], dtype=np.float64),
                   maxs=np.asarray(d["maxs"], dtype=np.float64))


@dataclass
class Dataset:
    """Model-ready samples: X (n, T, 1) float64, y (n,) int64, label codec."""

    X: np.ndarray
    y: np.ndarray
    codec: LabelCodec

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def seq_len(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return self.codec.n_classes

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def features(self) -> np.ndarray:
        """Flattened (n, T) feature view of the sequence tensor."""
        return self.X.reshape(self.X.shape[0], -1)

    def subset(self, idx) -> "Dataset":
        return Dataset(X=self.X[idx], y=self.y[idx], codec=self.codec)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _parses_as_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(path, label_column: str = "Label") -> RawTable:
    """Read a header-first CSV into a typed table. Column kinds are inferred:
    numeric when every non-empty cell parses as a real, else categorical."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                columns = next(reader)
            except StopIteration:
                raise DataError(f"{path}: file is empty, expected a header row") from None
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(columns):
                    raise RaggedRowError(f"{path}:{lineno}: expected {len(columns)} fields, "
                                         f"got {len(row)}")
                rows.append(row)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if label_column not in columns:
        raise MissingLabelError(f"{path}: label column {label_column!r} not found in "
                                f"header {columns}")
    kinds = []
    for j in range(len(columns)):
        cells = [r[j] for r in rows if r[j] != ""]
        kinds.append("numeric" if cells and all(_parses_as_float(c) for c in cells)
                     else "categorical" if cells else "numeric")
    kinds[columns.index(label_column)] = "categorical"
    return RawTable(columns=columns, kinds=kinds, rows=rows, label_column=label_column)


def clean(t: RawTable) -> tuple[RawTable, dict]:
    """Drop rows with non-finite numeric cells or empty labels, then exact
    duplicates. Returns the cleaned table plus drop counts."""
    li = t.label_index
    numeric_idx = [i for i in t.feature_indices() if t.kinds[i] == "numeric"]
    kept = []
    n_bad = 0
    for row in t.rows:
        if row[li] == "":
            n_bad += 1
            continue
        ok = True
        for j in numeric_idx:
            cell = row[j]
            if cell == "" or not math.isfinite(float(cell)):
                ok = False
                break
        if ok:
            kept.append(row)
        else:
            n_bad += 1
    seen = set()
    deduped = []
    for row in kept:
        key = tuple(row)
        if key not in seen:
            seen.add(key)
            deduped.append(row)
    n_dup = len(kept) - len(deduped)
    if not deduped:
        raise EmptyDatasetError("cleaning removed every row")
    return replace(t, rows=deduped), {"dropped_invalid": n_bad, "dropped_duplicate": n_dup}


def encode(t: RawTable, codec: LabelCodec | None = None):
    """Map the table to numbers: categorical feature columns to integer codes
    in lexicographic value order, labels through the (fitted or given) codec.
    Returns (features (n, T), labels (n,), codec)."""
    li = t.label_index
    feat_idx = t.feature_indices()
    n = len(t.rows)
    features = np.empty((n, len(feat_idx)), dtype=np.float64)
    for out_j, j in enumerate(feat_idx):
        col = [row[j] for row in t.rows]
        if t.kinds[j] == "numeric":
            features[:, out_j] = [float(c) if c != "" else 0.0 for c in col]
        else:
            order = {v: k for k, v in enumerate(sorted(set(col)))}
            features[:, out_j] = [order[c] for c in col]
    labels_raw = [row[li] for row in t.rows]
    if codec is None:
        codec = LabelCodec.fit(labels_raw)
    labels = codec.encode(labels_raw)
    return features, labels, codec


# ---------------------------------------------------------------------------
# scaling / reshaping / encoding helpers
# ---------------------------------------------------------------------------

def fit_scaler(train_features: np.ndarray) -> ScalerParams:
    f = np.asarray(train_features, dtype=np.float64)
    return ScalerParams(mins=f.min(axis=0), maxs=f.max(axis=0))


def apply_scaler(p: ScalerParams, features: np.ndarray) -> np.ndarray:
    """Min-max map to [0, 1]; constant features go to 0, out-of-range
    test-time values are clamped."""
    f = np.asarray(features, dtype=np.float64)
    span = p.maxs - p.mins
    safe = np.where(span > 0, span, 1.0)
    scaled = (f - p.mins) / safe
    scaled = np.where(span > 0, scaled, 0.0)
    return np.clip(scaled, 0.0, 1.0)


def to_sequences(features: np.ndarray) -> np.ndarray:
    """(n, T) -> (n, T, 1): the feature axis becomes the time axis."""
    f = np.asarray(features, dtype=np.float64)
    return f.reshape(f.shape[0], f.shape[1], 1)


def one_hot(labels: np.ndarray, c: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"one_hot: labels outside [0, {c})")
    out = np.zeros((labels.shape[0], c))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# splitting and balancing
# ---------------------------------------------------------------------------

def stratified_split(ds: Dataset, train_frac: float, rng: RngStream):
    """Per-class split preserving proportions within one sample; shuffled
    within class by the rng. Returns (train, test)."""
    if not 0.0 < train_frac < 1.0:
        raise StratifyError(f"train_frac must be in (0, 1), got {train_frac}")
    train_idx = []
    test_idx = []
    for k in range(ds.n_classes):
        members = np.flatnonzero(ds.y == k)
        if members.size < 2:
            raise StratifyError(f"class {ds.codec.from_index(k)!r} has {members.size} "
                                "sample(s); need at least 2 to stratify")
        perm = members[rng.permutation(members.size)]
        n_train = int(round(train_frac * members.size))
        n_train = min(max(n_train, 1), members.size - 1)  # both splits keep every class
        train_idx.append(perm[:n_train])
        test_idx.append(perm[n_train:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    return ds.subset(train_idx), ds.subset(test_idx)


def ros_balance(ds: Dataset, rng: RngStream) -> Dataset:
    """Random oversampling: duplicate minority rows (with replacement) until
    every class matches the majority count."""
    counts = ds.class_counts()
    if (counts == 0).any():
        missing = ds.codec.from_index(int(np.argmin(counts)))
        raise DataError(f"ros_balance: class {missing!r} has no samples")
    target = counts.max()
    extra = []
    for k in range(ds.n_classes):
        need = int(target - counts[k])
        if need <= 0:
            continue
        members = np.flatnonzero(ds.y == k)
        picks = members[rng.integers(0, members.size, size=need)]
        extra.append(picks)
    if not extra:
        return ds
    idx = np.concatenate([np.arange(len(ds))] + extra)
    return ds.subset(idx)


def smote_balance(ds: Dataset, rng: RngStream, k: int = 5) -> Dataset:
    """SMOTE: upsample each minority class by interpolating between a member
    and one of its k nearest same-class neighbors (Euclidean on the
    flattened features), x + lambda*(z - x), lambda ~ U[0, 1). Classes of
    size 1 fall back to duplication with a warning."""
    if k < 1:
        raise DataError(f"smote_balance: k must be >= 1, got {k}")
    counts = ds.class_counts()
    if (counts == 0).any():
        missing = ds.codec.from_index(int(np.argmin(counts)))
        raise DataError(f"smote_balance: class {missing!r} has no samples")
    target = counts.max()
    feats = ds.features()
    new_X = [ds.X]
    new_y = [ds.y]
    for cls in range(ds.n_classes):
        need = int(target - counts[cls])
        if need <= 0:
            continue
        members = np.flatnonzero(ds.y == cls)
        if members.size == 1:
            warnings.warn(f"smote_balance: class {ds.codec.from_index(cls)!r} has a single "
                          "sample; duplicating instead of interpolating", stacklevel=2)
            picks = np.repeat(members, need)
            new_X.append(ds.X[picks])
            new_y.append(ds.y[picks])
            continue
        pts = feats[members]                       # (m, T)
        k_eff = min(k, members.size - 1)
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        neigh = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]  # (m, k_eff)
        base = rng.integers(0, members.size, size=need)
        pick = rng.integers(0, k_eff, size=need)
        lam = rng.uniform(size=(need, 1))
        x0 = pts[base]
        x1 = pts[neigh[base, pick]]
        synth = x0 + lam * (x1 - x0)
        new_X.append(to_sequences(synth))
        new_y.append(np.full(need, cls, dtype=np.int64))
    return Dataset(X=np.concatenate(new_X), y=np.concatenate(new_y), codec=ds.codec)


# ---------------------------------------------------------------------------
# synthetic desk-scale data
# ---------------------------------------------------------------------------

def synth_generate(c: int, n_per_class: int, seq_len: int, separation: float,
                   rng: RngStream, imbalance: list[float] | None = None) -> Dataset:
    """Class-conditional Gaussians around well-separated prototypes.

    Prototype directions are orthonormal (scaled by `separation`, in noise
    standard deviations) so separation=0 is chance level and separation >= 5
    is near-perfectly separable. Classes are 'normal' plus attack_01..; the
    `imbalance` fractions follow generation order (normal first, then attacks).
    """
    if c < 2 or seq_len < 4:
        raise DataError("synth_generate: need c >= 2 and seq_len >= 4")
    if imbalance is not None and len(imbalance) != c:
        raise DataError(f"synth_generate: imbalance must list {c} fractions")
    names = ["normal"] + [f"attack_{i:02d}" for i in range(1, c)]
    codec = LabelCodec.fit(names)

    if c <= seq_len:
        basis, _ = np.linalg.qr(rng.normal(size=(seq_len, c)))
        prototypes = separation * basis.T          # (c, T), orthonormal rows
    else:
        raw = rng.normal(size=(c, seq_len))
        prototypes = separation * raw / np.linalg.norm(raw, axis=1, keepdims=True)

    xs = []
    ys = []
    for cls_pos, name in enumerate(names):
        frac = 1.0 if imbalance is None else float(imbalance[cls_pos])
        n_k = max(2, int(round(n_per_class * frac)))
        pts = prototypes[cls_pos] + rng.normal(size=(n_k, seq_len))
        xs.append(pts)
        ys.extend([name] * n_k)
    features = np.concatenate(xs)
    labels = codec.encode(ys)
    return Dataset(X=to_sequences(features), y=labels, codec=codec)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_dataset_csv(ds: Dataset, csv_path, sidecar_path=None,
                     scaler: ScalerParams | None = None) -> None:
    """Write features as f0..f{T-1} plus a Label column; the JSON sidecar
    carries the codec (and scaler parameters when given)."""
    feats = ds.features()
    t = feats.shape[1]
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(t)] + ["Label"])
        for i in range(len(ds)):
            writer.writerow([repr(float(v)) for v in feats[i]]
                            + [ds.codec.from_index(int(ds.y[i]))])
    if sidecar_path is not None:
        sidecar = {"codec": ds.codec.to_dict()}
        if scaler is not None:
            sidecar["scaler"] = scaler.to_dict()
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2)
