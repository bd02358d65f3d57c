"""Interaction logs, modal feature files, splits and graph construction."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import SparseMatrix
from .errors import DataError

log = logging.getLogger(__name__)

FMAT_MAGIC = b"FMAT1"
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class InteractionRecord:
    user_id: int
    item_id: int
    timestamp: int | None = None


@dataclass(frozen=True)
class IdMap:
    """Raw id strings in dense-id order."""

    raw: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.raw)

    def index(self) -> dict[str, int]:
        return {r: k for k, r in enumerate(self.raw)}


@dataclass
class InteractionDataset:
    user_count: int
    item_count: int
    train: list[InteractionRecord]
    val: list[InteractionRecord]
    test: list[InteractionRecord]
    user_map: IdMap | None = None
    item_map: IdMap | None = None
    variant: str = "FID"
    _neighbors: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    @property
    def sparsity(self) -> float:
        n = len(self.train) + len(self.val) + len(self.test)
        return 1.0 - n / (self.user_count * self.item_count)

    def neighbors(self) -> list[np.ndarray]:
        """Sorted train item ids per user (N_u)."""
        if self._neighbors is None:
            self._neighbors = _group_items(self.train, self.user_count)
        return self._neighbors

    def items_by_user(self, part: str) -> list[np.ndarray]:
        return _group_items(getattr(self, part), self.user_count)


def _group_items(records, user_count: int) -> list[np.ndarray]:
    buckets: list[list[int]] = [[] for _ in range(user_count)]
    for r in records:
        buckets[r.user_id].append(r.item_id)
    return [np.array(sorted(set(b)), dtype=np.int64) for b in buckets]


# -- loading -----------------------------------------------------------------


def _raw_sort_key(raw: str):
    # numeric ids sort numerically so precomputed feature rows line up
    try:
        return (0, int(raw), "")
    except ValueError:
        return (1, 0, raw)


def load_interactions(path) -> tuple[list[InteractionRecord], IdMap, IdMap]:
    """Parse ``user<TAB>item[<TAB>unix_timestamp]`` lines.

    Dense ids follow ascending raw-id order. A repeated (user, item) pair is
    kept once, at its first position, with the earliest timestamp seen.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"interaction file not found: {path}")
    rows: list[tuple[str, str, int | None]] = []
    first_pos: dict[tuple[str, str], int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
            ts = None
            if len(parts) == 3 and parts[2] != "":
                try:
                    ts = int(float(parts[2]))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad timestamp {parts[2]!r}") from None
            key = (parts[0], parts[1])
            pos = first_pos.get(key)
            if pos is None:
                first_pos[key] = len(rows)
                rows.append((parts[0], parts[1], ts))
            elif ts is not None:
                prev = rows[pos][2]
                if prev is None or ts < prev:
                    rows[pos] = (key[0], key[1], ts)
    users = IdMap(tuple(sorted({r[0] for r in rows}, key=_raw_sort_key)))
    items = IdMap(tuple(sorted({r[1] for r in rows}, key=_raw_sort_key)))
    uidx, iidx = users.index(), items.index()
    records = [InteractionRecord(uidx[u], iidx[i], ts) for u, i, ts in rows]
    return records, users, items


@dataclass
class ModalFeatureTable:
    modality: str
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def write_fmat(path, matrix) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise DataError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(FMAT_MAGIC)
        fh.write(struct.pack("<QQ", *matrix.shape))
        fh.write(matrix.tobytes())


def load_modal_features(path, item_count: int, modality: str | None = None) -> ModalFeatureTable:
    path = Path(path)
    if modality is None:
        # features.<modality>.fmat
        parts = path.name.split(".")
        modality = parts[1] if len(parts) >= 3 else path.stem
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from None
    if blob[:5] != FMAT_MAGIC or len(blob) < 21:
        raise DataError(f"{path}: not an FMAT1 file")
    rows, cols = struct.unpack("<QQ", blob[5:21])
    if rows != item_count:
        raise DataError(f"{path}: {rows} feature rows for {item_count} items")
    if cols == 0:
        raise DataError(f"{path}: zero feature columns")
    if len(blob) != 21 + 4 * rows * cols:
        raise DataError(f"{path}: payload size does not match header")
    mat = np.frombuffer(blob, dtype="<f4", offset=21).reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(mat)):
        raise DataError(f"{path}: non-finite feature value")
    return ModalFeatureTable(modality, mat)


# -- splitting ----------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def partition_sizes(n: int, ratios=(8, 1, 1)) -> tuple[int, int, int]:
    """(train, val, test) counts for a history of length ``n``.

    Short histories fill train first, then test, then val.
    """
    total = float(sum(ratios))
    n_test = max(1, _round_half_up(n * ratios[2] / total)) if n >= 2 and ratios[2] > 0 else 0
    n_val = max(1, _round_half_up(n * ratios[1] / total)) if n >= 3 and ratios[1] > 0 else 0
    while n - n_test - n_val < 1:
        if n_val:
            n_val -= 1
        else:
            n_test -= 1
    return n - n_val - n_test, n_val, n_test


def split_dataset(
    records, ratios=(8, 1, 1), seed: int = 0, user_map: IdMap | None = None, item_map: IdMap | None = None
) -> InteractionDataset:
    """Random per-user train/val/test partition."""
    records = list(records)
    if not records:
        raise DataError("cannot split an empty interaction list")
    user_count = (len(user_map) if user_map else 0) or 1 + max(r.user_id for r in records)
    item_count = (len(item_map) if item_map else 0) or 1 + max(r.item_id for r in records)
    by_user: list[list[InteractionRecord]] = [[] for _ in range(user_count)]
    for r in records:
        by_user[r.user_id].append(r)
    rng = np.random.default_rng(seed)
    parts = {name: [] for name in SPLIT_NAMES}
    for u, recs in enumerate(by_user):
        if not recs:
            raise DataError(f"user {u} has no interactions")
        n_tr, n_va, _ = partition_sizes(len(recs), ratios)
        order = rng.permutation(len(recs))
        shuffled = [recs[k] for k in order]
        parts["train"].extend(shuffled[:n_tr])
        parts["val"].extend(shuffled[n_tr : n_tr + n_va])
        parts["test"].extend(shuffled[n_tr + n_va :])
    return InteractionDataset(user_count, item_count, user_map=user_map, item_map=item_map, **parts)


# -- graph ----------------------------------------------------------------------


@dataclass
class NormalizedAdjacency:
    """Symmetric ``D^-1/2 A D^-1/2`` over users followed by items."""

    matrix: SparseMatrix
    user_count: int
    item_count: int
    degree: np.ndarray

    @property
    def user_block(self) -> SparseMatrix:
        """The |U| x |I| user-to-item slice."""
        u = self.user_count
        return self.matrix.row_slice(0, u).col_slice(u, u + self.item_count)

    @property
    def item_block(self) -> SparseMatrix:
        u = self.user_count
        return self.matrix.row_slice(u, u + self.item_count).col_slice(0, u)


def build_normalized_adjacency(ds: InteractionDataset) -> NormalizedAdjacency:
    if not ds.train:
        raise DataError("train partition is empty")
    pairs = np.array(sorted({(r.user_id, r.item_id) for r in ds.train}), dtype=np.int64)
    u, i = pairs[:, 0], pairs[:, 1] + ds.user_count
    n = ds.user_count + ds.item_count
    deg = np.bincount(np.concatenate([u, i]), minlength=n).astype(np.float64)
    w = 1.0 / np.sqrt(deg[u] * deg[i])
    mat = SparseMatrix.from_coo(n, n, np.concatenate([u, i]), np.concatenate([i, u]), np.concatenate([w, w]))
    return NormalizedAdjacency(mat, ds.user_count, ds.item_count, deg)


def user_mean_matrix(ds: InteractionDataset) -> SparseMatrix:
    """|U| x |I| operator averaging item rows over each user's train neighbors."""
    rows, cols, vals = [], [], []
    for u, items in enumerate(ds.neighbors()):
        if len(items):
            rows.extend([u] * len(items))
            cols.extend(items.tolist())
            vals.extend([1.0 / len(items)] * len(items))
    return SparseMatrix.from_coo(ds.user_count, ds.item_count, rows, cols, vals)


# -- negative sampling ---------------------------------------------------------


def sample_bpr_triples(ds: InteractionDataset, count: int, seed) -> np.ndarray:
    """Draw ``count`` (user, positive item, negative item) rows.

    Users are drawn uniformly among those with at least one train item and at
    least one non-interacted item. ``seed`` may be an int or a Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    neigh = ds.neighbors()
    eligible = []
    for u, items in enumerate(neigh):
        if len(items) == 0:
            continue
        if len(items) >= ds.item_count:
            log.warning("user %d interacted with every item; skipped for negative sampling", u)
            continue
        eligible.append(u)
    if not eligible or count <= 0:
        return np.zeros((0, 3), dtype=np.int64)
    eligible = np.array(eligible, dtype=np.int64)
    users = eligible[rng.integers(0, len(eligible), size=count)]
    out = np.empty((count, 3), dtype=np.int64)
    for k, u in enumerate(users):
        items = neigh[u]
        pos = items[rng.integers(0, len(items))]
        while True:
            neg = int(rng.integers(0, ds.item_count))
            j = np.searchsorted(items, neg)
            if j == len(items) or items[j] != neg:
                break
        out[k] = (u, pos, neg)
    return out


# -- masked variants -------------------------------------------------------------


def mask_dataset(ds: InteractionDataset, mode: str, k_or_l: int) -> InteractionDataset:
    """Drop recent train history (``recent-k``) or keep only it (``keep-last-L``).

    Validation and test partitions are untouched and every user keeps at least
    one train record.
    """
    if mode not in ("recent-k", "keep-last-L"):
        raise ValueError(f"unknown mask mode {mode!r}")
    if k_or_l < 0:
        raise ValueError("mask size must be non-negative")
    if any(r.timestamp is None for r in ds.train):
        raise DataError("masking needs timestamps on every train record")
    by_user: dict[int, list[InteractionRecord]] = {}
    for r in ds.train:
        by_user.setdefault(r.user_id, []).append(r)
    kept: set[InteractionRecord] = set()
    for recs in by_user.values():
        recs = sorted(recs, key=lambda r: (r.timestamp, r.item_id))
        n = len(recs)
        if mode == "recent-k":
            keep = recs[: max(1, n - k_or_l)]
        else:
            keep = recs[-max(1, k_or_l) :] if k_or_l < n else recs
        kept.update(keep)
    train = [r for r in ds.train if r in kept]
    tag = "RBM-D" if mode == "recent-k" else "LHM-D"
    return replace(ds, train=train, variant=tag, _neighbors=None)


def dataset_variant(ds: InteractionDataset, name: str, k: int = 2, last: int = 5) -> InteractionDataset:
    if name == "FID":
        return ds
    if name == "RBM-D":
        return mask_dataset(ds, "recent-k", k)
    if name == "LHM-D":
        return mask_dataset(ds, "keep-last-L", last)
    raise ValueError(f"unknown dataset variant {name!r}")


# -- persistence -----------------------------------------------------------------


def _write_records(path: Path, records, user_map: IdMap, item_map: IdMap) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            ts = "" if r.timestamp is None else str(r.timestamp)
            fh.write(f"{user_map.raw[r.user_id]}\t{item_map.raw[r.item_id]}\t{ts}\n")


def _read_records(path: Path, uidx, iidx) -> list[InteractionRecord]:
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: malformed split record")
            try:
                u, i = uidx[parts[0]], iidx[parts[1]]
            except KeyError:
                raise DataError(f"{path}:{lineno}: id not in id map") from None
            out.append(InteractionRecord(u, i, int(parts[2]) if parts[2] else None))
    return out


def save_prepared(out_dir, ds: InteractionDataset, seed: int, ratios, features: dict[str, str]) -> Path:
    """Write split files, id maps and a JSON manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "user_ids.txt").write_text("".join(f"{r}\n" for r in ds.user_map.raw), encoding="utf-8")
    (out / "item_ids.txt").write_text("".join(f"{r}\n" for r in ds.item_map.raw), encoding="utf-8")
    for name in SPLIT_NAMES:
        _write_records(out / f"{name}.tsv", getattr(ds, name), ds.user_map, ds.item_map)
    manifest = {
        "seed": seed,
        "ratios": list(ratios),
        "user_count": ds.user_count,
        "item_count": ds.item_count,
        "counts": {name: len(getattr(ds, name)) for name in SPLIT_NAMES},
        "id_maps": {"user": "user_ids.txt", "item": "item_ids.txt"},
        "splits": {name: f"{name}.tsv" for name in SPLIT_NAMES},
        "features": dict(sorted(features.items())),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


@dataclass
class PreparedData:
    dataset: InteractionDataset
    features: dict[str, ModalFeatureTable]
    manifest: dict


def load_prepared(data_dir) -> PreparedData:
    root = Path(data_dir)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DataError(f"no manifest.json in {root}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{mpath}: {exc}") from None
    users = IdMap(tuple((root / manifest["id_maps"]["user"]).read_text(encoding="utf-8").splitlines()))
    items = IdMap(tuple((root / manifest["id_maps"]["item"]).read_text(encoding="utf-8").splitlines()))
    uidx, iidx = users.index(), items.index()
    parts = {name: _read_records(root / manifest["splits"][name], uidx, iidx) for name in SPLIT_NAMES}
    ds = InteractionDataset(len(users), len(items), user_map=users, item_map=items, **parts)
    feats = {}
    for modality, rel in manifest.get("features", {}).items():
        fpath = Path(rel) if Path(rel).is_absolute() else root / rel
        feats[modality] = load_modal_features(fpath, ds.item_count, modality)
    return PreparedData(ds, feats, manifest)
