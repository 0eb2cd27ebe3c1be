"""Dataset ingestion (CSV and binary sidecar) and the synthetic generator."""

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

DEFAULT_MODALITIES = ("fmri", "smri", "pheno")

SIDECAR_MAGIC = b"EGCN"
SIDECAR_VERSION = 1
_SIDECAR_HEADER = struct.Struct("<4sIQQ")


class DataError(ValueError):
    """Malformed or inconsistent input files."""


@dataclass
class MultimodalDataset:
    subject_ids: list
    modalities: list  # [(name, Tensor n x d)]
    site_labels: list
    labels: np.ndarray

    def __post_init__(self):
        n = len(self.subject_ids)
        if len(set(self.subject_ids)) != n:
            raise DataError("subject ids must be unique")
        for name, x in self.modalities:
            if x.shape[0] != n:
                raise DataError(f"modality {name} has {x.shape[0]} rows, expected {n}")
        if len(self.site_labels) != n:
            raise DataError("site label count does not match subject count")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (n,) or not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be one 0/1 value per subject")

    @property
    def n(self):
        return len(self.subject_ids)

    @property
    def dims(self):
        return [x.shape[1] for _, x in self.modalities]

    @property
    def tensors(self):
        return [x for _, x in self.modalities]

    def subset_order(self, order):
        """Dataset with rows reordered (or selected) by ``order``."""
        order = np.asarray(order, dtype=np.int64)
        return MultimodalDataset(
            [self.subject_ids[i] for i in order],
            [(name, Tensor(x.data[order])) for name, x in self.modalities],
            [self.site_labels[i] for i in order],
            self.labels[order],
        )

    def aligned_to(self, subject_ids):
        """Reorder rows to follow ``subject_ids``; the id sets must match."""
        index = {s: i for i, s in enumerate(self.subject_ids)}
        missing = [s for s in subject_ids if s not in index]
        extra = set(self.subject_ids) - set(subject_ids)
        if missing or extra:
            raise DataError(f"subject sets differ: missing {sorted(missing)[:10]}, "
                            f"unexpected {sorted(extra)[:10]}")
        return self.subset_order([index[s] for s in subject_ids])


@dataclass
class SynthSpec:
    n_subjects: int = 870
    modality_dims: list = field(default_factory=lambda: [4000, 1200, 6])
    n_sites: int = 20
    class_balance: float = 0.5
    signal_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError("class_balance must be in (0, 1)")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be >= 0")
        if self.n_subjects < 2 or self.n_sites < 1:
            raise ValueError("need at least 2 subjects and 1 site")


def synth_dataset(spec):
    """Gaussian features; class 1 is shifted by +s/2 and class 0 by -s/2 on a
    random 10% of each modality's features, so class means differ by s."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_subjects
    n_pos = min(max(int(round(spec.class_balance * n)), 1), n - 1)
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_pos] = 1
    labels = rng.permutation(labels)
    sign = np.where(labels == 1, 0.5, -0.5)[:, None]
    modalities = []
    names = list(DEFAULT_MODALITIES) if len(spec.modality_dims) == 3 else [
        f"mod{m}" for m in range(len(spec.modality_dims))]
    for name, d in zip(names, spec.modality_dims):
        x = rng.standard_normal((n, d))
        k = max(1, int(round(0.1 * d)))
        cols = rng.choice(d, size=k, replace=False)
        x[:, cols] += spec.signal_strength * sign
        modalities.append((name, Tensor(x)))
    width = len(str(n))
    ids = [f"sub{i:0{width}d}" for i in range(n)]
    sites = [f"site{i % spec.n_sites:02d}" for i in range(n)]
    return MultimodalDataset(ids, modalities, sites, labels)


def standardize(ds, train_idx):
    """Z-score every feature with statistics from ``train_idx`` rows only."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    mods = []
    for name, x in ds.modalities:
        mu = x.data[train_idx].mean(axis=0)
        sd = x.data[train_idx].std(axis=0)
        sd[sd == 0] = 1.0
        mods.append((name, Tensor((x.data - mu) / sd)))
    return MultimodalDataset(list(ds.subject_ids), mods, list(ds.site_labels), ds.labels.copy())


# -- file formats ---------------------------------------------------------

def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file (a header row is required)")
    return rows[0], [r for r in rows[1:] if r]


def _check_ids(path, ids):
    seen = set()
    for row, sid in enumerate(ids, start=1):
        if not sid:
            raise DataError(f"{path}: missing subject_id at row {row}")
        if sid in seen:
            raise DataError(f"{path}: duplicate subject_id {sid!r} at row {row}")
        seen.add(sid)


def write_sidecar(path, array):
    a = np.ascontiguousarray(array, dtype="<f8")
    if a.ndim != 2:
        raise ValueError("sidecar arrays must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_SIDECAR_HEADER.pack(SIDECAR_MAGIC, SIDECAR_VERSION, a.shape[0], a.shape[1]))
        fh.write(a.tobytes())


def read_sidecar(path):
    with open(path, "rb") as fh:
        head = fh.read(_SIDECAR_HEADER.size)
        if len(head) != _SIDECAR_HEADER.size:
            raise DataError(f"{path}: truncated sidecar header")
        magic, version, rows, cols = _SIDECAR_HEADER.unpack(head)
        if magic != SIDECAR_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        if version != SIDECAR_VERSION:
            raise DataError(f"{path}: unsupported sidecar version {version}")
        body = fh.read()
    if len(body) != rows * cols * 8:
        raise DataError(f"{path}: expected {rows * cols * 8} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(rows, cols)


def load_modality_csv(path, expected_dim=None, use_sidecar=True):
    """Read ``subject_id,f0,f1,...`` into (ids, Tensor).

    Rows and columns in error messages are 1-based; rows count data lines
    (header excluded) and columns count file columns (subject_id is column 1).
    If ``<path>.bin`` exists it supplies the matrix and only the id column of
    the CSV is parsed.
    """
    header, rows = _read_rows(path)
    if len(header) < 2 or header[0] != "subject_id":
        raise DataError(f"{path}: header must start with subject_id followed by features")
    dim = len(header) - 1
    if expected_dim is not None and dim != expected_dim:
        raise DataError(f"{path}: dimension mismatch, expected {expected_dim} features, found {dim}")
    ids = [r[0].strip() for r in rows]
    _check_ids(path, ids)
    sidecar = str(path) + ".bin"
    if use_sidecar and os.path.exists(sidecar):
        data = read_sidecar(sidecar)
        if data.shape != (len(ids), dim):
            raise DataError(f"{sidecar}: shape {data.shape} disagrees with CSV ({len(ids)}, {dim})")
    else:
        data = np.empty((len(ids), dim))
        for r, row in enumerate(rows, start=1):
            if len(row) != dim + 1:
                raise DataError(f"{path}: row {r} has {len(row) - 1} features, expected {dim}")
            for c in range(1, dim + 1):
                try:
                    data[r - 1, c - 1] = float(row[c])
                except ValueError:
                    raise DataError(f"{path}: non-numeric cell {row[c]!r} at row {r}, "
                                    f"column {c + 1}") from None
    if not np.all(np.isfinite(data)):
        r, c = np.argwhere(~np.isfinite(data))[0]
        raise DataError(f"{path}: non-finite value at row {r + 1}, column {c + 2}")
    return ids, Tensor(data)


def _load_keyed(path, column):
    header, rows = _read_rows(path)
    if header[:2] != ["subject_id", column]:
        raise DataError(f"{path}: header must be subject_id,{column}")
    ids = [r[0].strip() for r in rows]
    _check_ids(path, ids)
    values = []
    for r, row in enumerate(rows, start=1):
        if len(row) < 2:
            raise DataError(f"{path}: row {r} has no {column} value")
        values.append(row[1].strip())
    return ids, values


def load_sites_csv(path):
    return _load_keyed(path, "site")


def load_labels_csv(path):
    ids, raw = _load_keyed(path, "label")
    labels = []
    for r, v in enumerate(raw, start=1):
        if v not in ("0", "1"):
            raise DataError(f"{path}: label {v!r} at row {r} is not 0 or 1")
        labels.append(int(v))
    return ids, np.array(labels, dtype=np.int64)


def assemble_dataset(modality_paths, sites_path, labels_path, expected_dims=None):
    """Load and align every file to the subject order of the labels file.

    ``modality_paths`` is an ordered mapping name -> path. A subject missing
    from any file is an error; nothing is imputed.
    """
    label_ids, labels = load_labels_csv(labels_path)
    order = {s: i for i, s in enumerate(label_ids)}

    def align(path, ids):
        diff = set(ids) ^ set(label_ids)
        if diff:
            raise DataError(f"{path}: subject set differs from {labels_path}; "
                            f"symmetric difference: {sorted(diff)}")
        perm = np.empty(len(ids), dtype=np.int64)
        for i, s in enumerate(ids):
            perm[order[s]] = i
        return perm

    modalities = []
    expected_dims = list(expected_dims) if expected_dims is not None else [None] * len(modality_paths)
    for (name, path), dim in zip(modality_paths.items(), expected_dims):
        ids, x = load_modality_csv(path, dim)
        modalities.append((name, Tensor(x.data[align(path, ids)])))
    site_ids, sites = load_sites_csv(sites_path)
    perm = align(sites_path, site_ids)
    return MultimodalDataset(list(label_ids), modalities, [sites[i] for i in perm], labels)


def write_modality_csv(path, ids, array, sidecar=False):
    array = np.asarray(array, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id"] + [f"f{j}" for j in range(array.shape[1])])
        for sid, row in zip(ids, array):
            w.writerow([sid] + [repr(float(v)) for v in row])
    if sidecar:
        write_sidecar(str(path) + ".bin", array)


def write_dataset(ds, out_dir, sidecar=False):
    """Write the dataset in the CSV interchange formats; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, x in ds.modalities:
        p = os.path.join(out_dir, f"{name}.csv")
        write_modality_csv(p, ds.subject_ids, x.data, sidecar=sidecar)
        paths[name] = p
    sites = os.path.join(out_dir, "sites.csv")
    with open(sites, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "site"])
        w.writerows(zip(ds.subject_ids, ds.site_labels))
    labels = os.path.join(out_dir, "labels.csv")
    with open(labels, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "label"])
        w.writerows(zip(ds.subject_ids, (int(v) for v in ds.labels)))
    return {"modalities": paths, "sites": sites, "labels": labels}
