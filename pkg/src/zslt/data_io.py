"""Dataset ingestion, the planted-attribute synthetic generator, checkpoints.

ZSLT tensor container (all integers little-endian)::

    offset 0   magic   b"ZSLT"
    offset 4   version u16   (currently 1)
    offset 6   dtype   u16   (1 = float32, 2 = float64)
    offset 8   rank    u16
    offset 10  dims    rank x u64, each >= 1
    then       row-major payload, product(dims) elements

Dataset directory layout read by :func:`assemble_dataset`::

    features/<image_id>.zslt    (H, W, C0) grid features per image
    class_semantics.zslt        (|C|, A), names in class_semantics.names
    attributes.zslt             (A, d_w), names in attributes.names
    split.txt                   class_name<TAB>seen|unseen
                                image_id<TAB>class_name<TAB>train|test
"""

from __future__ import annotations

import io
import json
import struct
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .avt import AttributeVocabulary
from .errors import ConfigError, DataError, FormatError, ParameterError
from .model import ModelConfig, ModelDims, ModelState
from .numerics import AdamState, Tensor
from .objectives import ClassSemanticBank
from .streams import stream

MAGIC = b"ZSLT"
ZSLT_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
CHECKPOINT_VERSION = 1


# -- ZSLT container -------------------------------------------------------


def encode_tensor(t) -> bytes:
    arr = np.asarray(t.data if isinstance(t, Tensor) else t)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"ZSLT stores float32 or float64, not {arr.dtype}")
    if any(n < 1 for n in arr.shape):
        raise FormatError(f"ZSLT dims must be positive, got {arr.shape}")
    header = MAGIC + struct.pack("<HHH", ZSLT_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode_tensor(buf: bytes, expected_dtype=None) -> Tensor:
    n = len(buf)
    if n < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic; not a ZSLT file", 0)
    if n < 10:
        raise FormatError(f"truncated header: {n} bytes", n)
    version, code, rank = struct.unpack_from("<HHH", buf, 4)
    if version != ZSLT_VERSION:
        raise FormatError(f"unsupported ZSLT version {version}", 4)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}", 6)
    dims_end = 10 + 8 * rank
    if n < dims_end:
        raise FormatError(f"truncated header: rank {rank} needs {dims_end} bytes, file has {n}", n)
    dims = struct.unpack_from(f"<{rank}Q", buf, 10)
    for i, dim in enumerate(dims):
        if dim < 1:
            raise FormatError(f"dimension {i} is zero", 10 + 8 * i)
    count = 1
    for dim in dims:
        count *= dim
    dtype = _DTYPES[code]
    payload = n - dims_end
    if payload != count * dtype.itemsize:
        have = payload / dtype.itemsize
        have = int(have) if have.is_integer() else have
        raise FormatError(f"header declares {count} elements but payload holds {have}", dims_end)
    if expected_dtype is not None and np.dtype(expected_dtype) != dtype.newbyteorder("="):
        raise FormatError(f"expected {np.dtype(expected_dtype)}, file holds {dtype.newbyteorder('=')}", 6)
    arr = np.frombuffer(buf, dtype=dtype, offset=dims_end).reshape(dims).astype(dtype.newbyteorder("="))
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise FormatError("payload contains non-finite values", dims_end + bad * dtype.itemsize)
    return Tensor(arr)


def save_tensor_file(path, t) -> None:
    Path(path).write_bytes(encode_tensor(t))


def load_tensor_file(path, expected_dtype=None) -> Tensor:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return decode_tensor(buf, expected_dtype)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def names_path(path) -> Path:
    return Path(path).with_suffix(".names")


def read_names(path) -> list[str]:
    try:
        return [line.rstrip("\n") for line in Path(path).read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read name list {path}: {exc}") from exc


def write_names(path, names) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in names))


def attribute_vectors_from_words(attribute_names, word_vectors, normalize: bool = False) -> np.ndarray:
    """Average the word vectors of each attribute name's words.

    Names are split on whitespace and underscores; ``word_vectors`` maps a
    lower-cased word to a vector.
    """
    rows = []
    for name in attribute_names:
        words = [w.lower() for w in name.replace("_", " ").replace("::", " ").split()]
        vecs = [np.asarray(word_vectors[w], dtype=np.float64) for w in words if w in word_vectors]
        if not vecs:
            raise DataError(f"no word vectors for any word of attribute {name!r}")
        v = np.mean(vecs, axis=0)
        if normalize:
            v = v / max(np.linalg.norm(v), 1e-12)
        rows.append(v)
    return np.stack(rows)


# -- datasets -------------------------------------------------------------


@dataclass
class DatasetBundle:
    features: np.ndarray              # (N, K, C0)
    grid_shape: tuple[int, int]
    labels: np.ndarray                # (N,) class indices into bank
    image_ids: list[str]
    split: np.ndarray                 # (N,) "train" | "test"
    bank: ClassSemanticBank
    vocab: AttributeVocabulary
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split)
        self.validate()

    def validate(self) -> None:
        n = len(self.image_ids)
        h, w = self.grid_shape
        if self.features.ndim != 3 or self.features.shape[:2] != (n, h * w):
            raise DataError(f"features {self.features.shape} do not match {n} images on a {h}x{w} grid")
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise DataError("labels/split length differs from the number of images")
        if len(set(self.image_ids)) != n:
            raise DataError("duplicate image ids")
        if self.bank.a != self.vocab.a:
            raise DataError(f"class semantics have A={self.bank.a}, attribute vocabulary has A={self.vocab.a}")
        if np.any(self.labels < 0) or np.any(self.labels >= self.bank.n_classes):
            raise DataError("label outside the class bank")
        bad = set(self.split.tolist()) - {"train", "test"}
        if bad:
            raise DataError(f"unknown split tags {sorted(bad)}")
        train_unseen = (self.split == "train") & ~self.bank.seen_mask[self.labels]
        if train_unseen.any():
            raise DataError(f"training image {self.image_ids[int(np.flatnonzero(train_unseen)[0])]} belongs to an unseen class")
        counts = np.bincount(self.labels, minlength=self.bank.n_classes)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise DataError(f"class {self.bank.names[int(empty[0])]} has no samples")
        if not np.any(~self.bank.seen_mask) or not np.any(self.bank.seen_mask):
            raise DataError("need at least one seen and one unseen class")

    @property
    def train_idx(self) -> np.ndarray:
        return np.flatnonzero(self.split == "train")

    @property
    def test_idx(self) -> np.ndarray:
        return np.flatnonzero(self.split == "test")

    @property
    def test_seen_idx(self) -> np.ndarray:
        return np.flatnonzero((self.split == "test") & self.bank.seen_mask[self.labels])

    @property
    def test_unseen_idx(self) -> np.ndarray:
        return np.flatnonzero((self.split == "test") & ~self.bank.seen_mask[self.labels])

    @property
    def c0(self) -> int:
        return self.features.shape[2]

    def dims(self) -> ModelDims:
        h, w = self.grid_shape
        return ModelDims(c0=self.c0, a=self.bank.a, d_w=self.vocab.d_w, grid_h=h, grid_w=w)

    def summary(self) -> dict:
        return {
            "classes": self.bank.n_classes,
            "seen": int(self.bank.seen_mask.sum()),
            "unseen": int((~self.bank.seen_mask).sum()),
            "attributes": self.bank.a,
            "grid": list(self.grid_shape),
            "channels": self.c0,
            "train": int(self.train_idx.size),
            "test_seen": int(self.test_seen_idx.size),
            "test_unseen": int(self.test_unseen_idx.size),
        }


def read_split_file(path) -> tuple[dict[str, str], list[tuple[str, str, str]]]:
    classes: dict[str, str] = {}
    images: list[tuple[str, str, str]] = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read split file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) == 2:
            name, status = fields
            if status not in ("seen", "unseen"):
                raise DataError(f"{path}:{lineno}: class status must be seen|unseen, got {status!r}")
            if name in classes and classes[name] != status:
                raise DataError(f"{path}:{lineno}: class {name!r} listed as both seen and unseen")
            classes[name] = status
        elif len(fields) == 3:
            image_id, name, part = fields
            if part not in ("train", "test"):
                raise DataError(f"{path}:{lineno}: image split must be train|test, got {part!r}")
            images.append((image_id, name, part))
        else:
            raise DataError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
    return classes, images


def assemble_dataset(feature_dir, semantics_file, vocab_file, split_file, dtype=np.float32,
                     normalize_vocab: bool = False) -> DatasetBundle:
    semantics = load_tensor_file(semantics_file)
    class_names = read_names(names_path(semantics_file))
    vocab_t = load_tensor_file(vocab_file)
    attr_names = read_names(names_path(vocab_file))
    if semantics.ndim != 2 or vocab_t.ndim != 2:
        raise DataError("class semantics and attribute vectors must be matrices")
    if semantics.shape[1] != vocab_t.shape[0]:
        raise DataError(f"class semantics have A={semantics.shape[1]}, vocabulary has A={vocab_t.shape[0]}")
    if len(class_names) != semantics.shape[0] or len(attr_names) != vocab_t.shape[0]:
        raise DataError("name sidecar length does not match its matrix")
    classes, images = read_split_file(split_file)
    missing = [c for c in class_names if c not in classes]
    extra = [c for c in classes if c not in class_names]
    if missing or extra:
        raise DataError(f"split file and class semantics disagree (missing {missing[:3]}, unknown {extra[:3]})")
    index = {c: i for i, c in enumerate(class_names)}
    seen_mask = np.array([classes[c] == "seen" for c in class_names])
    feats, labels, ids, parts = [], [], [], []
    grid = None
    for image_id, cname, part in images:
        if cname not in index:
            raise DataError(f"image {image_id} refers to unknown class {cname!r}")
        path = Path(feature_dir) / f"{image_id}.zslt"
        if not path.exists():
            raise DataError(f"missing feature file for image {image_id}: {path}")
        t = load_tensor_file(path)
        if t.ndim != 3:
            raise DataError(f"{path}: grid features must be (H, W, C0), got {t.shape}")
        if grid is None:
            grid = t.shape
        elif t.shape != grid:
            raise DataError(f"{path}: grid shape {t.shape} differs from {grid}")
        feats.append(t.data.reshape(grid[0] * grid[1], grid[2]).astype(dtype))
        labels.append(index[cname])
        ids.append(image_id)
        parts.append(part)
    if not feats:
        raise DataError("split file lists no images")
    vectors = vocab_t.data.astype(np.float64)
    if normalize_vocab:
        vectors = vectors / np.maximum(np.linalg.norm(vectors, axis=1, keepdims=True), 1e-12)
    bank = ClassSemanticBank(Tensor(semantics.data.astype(np.float64)), seen_mask, class_names)
    return DatasetBundle(np.stack(feats), (grid[0], grid[1]), np.array(labels), ids, np.array(parts),
                         bank, AttributeVocabulary(Tensor(vectors), attr_names))


def load_bundle_dir(root, **kwargs) -> DatasetBundle:
    root = Path(root)
    return assemble_dataset(root / "features", root / "class_semantics.zslt", root / "attributes.zslt",
                            root / "split.txt", **kwargs)


def write_bundle(bundle: DatasetBundle, root) -> Path:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    h, w = bundle.grid_shape
    for image_id, f in zip(bundle.image_ids, bundle.features):
        save_tensor_file(root / "features" / f"{image_id}.zslt", f.reshape(h, w, -1))
    save_tensor_file(root / "class_semantics.zslt", bundle.bank.Z.data)
    write_names(root / "class_semantics.names", bundle.bank.names)
    save_tensor_file(root / "attributes.zslt", bundle.vocab.vectors.data)
    write_names(root / "attributes.names", bundle.vocab.names)
    lines = [f"{n}\t{'seen' if s else 'unseen'}\n" for n, s in zip(bundle.bank.names, bundle.bank.seen_mask)]
    lines += [f"{i}\t{bundle.bank.names[c]}\t{p}\n" for i, c, p in zip(bundle.image_ids, bundle.labels, bundle.split)]
    (root / "split.txt").write_text("".join(lines))
    return root


# -- synthetic data -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    a: int = 16
    grid_h: int = 3
    grid_w: int = 3
    c0: int = 32
    d_w: int = 32
    n_seen: int = 12
    n_unseen: int = 4
    images_per_class: int = 40
    density: float = 0.5
    value_floor: float = 0.5   # smallest nonzero signature entry before rescaling
    noise: float = 0.3
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if min(self.a, self.grid_h, self.grid_w, self.c0, self.d_w, self.n_seen, self.n_unseen,
               self.images_per_class) < 1:
            raise ParameterError("synthetic sizes must all be >= 1")
        if not 0.0 < self.density <= 1.0:
            raise ParameterError(f"density must be in (0, 1], got {self.density}")
        if not 0.0 < self.value_floor <= 1.0:
            raise ParameterError(f"value_floor must be in (0, 1], got {self.value_floor}")
        if self.noise < 0:
            raise ParameterError("noise scale must be >= 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ParameterError("train_fraction must be in (0, 1)")


ACTIVE_THRESHOLD = 0.5


def _signature(rng, spec: SyntheticSpec) -> np.ndarray:
    nonzero = rng.random(spec.a) < spec.density
    if not nonzero.any():
        nonzero[rng.integers(spec.a)] = True
    z = np.where(nonzero, rng.uniform(spec.value_floor, 1.0, spec.a), 0.0)
    return z / z.max()


def _near_orthogonal(rng, a: int, d_w: int) -> np.ndarray:
    g = rng.standard_normal((d_w, a))
    if d_w >= a:
        q, _ = np.linalg.qr(g)
        v = q.T + 0.01 * rng.standard_normal((a, d_w))
    else:
        v = g.T
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec(), max_tries: int = 100_000) -> DatasetBundle:
    """Classes are distinct sets of 'active' attributes (score > 0.5).

    Every image of a class carries, for each active attribute, one region
    holding B @ v_a plus noise, with B a fixed random linear map; the
    other regions are pure noise. Unseen classes only use attributes that
    are active in some seen class.
    """
    rng = stream(spec.seed, "synth")
    k = spec.grid_h * spec.grid_w
    n_classes = spec.n_seen + spec.n_unseen
    signatures, active_sets = [], set()
    seen_attrs = np.zeros(spec.a, dtype=bool)
    tries = 0
    while len(signatures) < n_classes:
        tries += 1
        if tries > max_tries:
            raise ParameterError("infeasible synthetic spec: cannot draw enough distinct class signatures "
                                 f"with at most {k} active attributes")
        z = _signature(rng, spec)
        active = z > ACTIVE_THRESHOLD
        key = active.tobytes()
        if active.sum() > k or key in active_sets:
            continue
        if len(signatures) >= spec.n_seen and not np.all(seen_attrs[active]):
            continue
        signatures.append(z)
        active_sets.add(key)
        if len(signatures) <= spec.n_seen:
            seen_attrs |= active
    Z = np.stack(signatures)
    vocab = _near_orthogonal(rng, spec.a, spec.d_w)
    planted = rng.standard_normal((spec.c0, spec.d_w))
    prototypes = vocab @ planted.T                         # (A, C0) = (B v_a)^T

    n_train = max(1, min(spec.images_per_class - 1, int(round(spec.train_fraction * spec.images_per_class))))
    feats, labels, parts = [], [], []
    planted_at = []
    for c in range(n_classes):
        active = np.flatnonzero(Z[c] > ACTIVE_THRESHOLD)
        for i in range(spec.images_per_class):
            x = spec.noise * rng.standard_normal((k, spec.c0))
            regions = rng.permutation(k)[:active.size]
            x[regions] += prototypes[active]
            where = np.full(spec.a, -1)
            where[active] = regions
            planted_at.append(where)
            feats.append(x)
            labels.append(c)
            parts.append("train" if c < spec.n_seen and i < n_train else "test")
    names = [f"seen{c:02d}" for c in range(spec.n_seen)] + [f"unseen{c:02d}" for c in range(spec.n_unseen)]
    seen_mask = np.arange(n_classes) < spec.n_seen
    ids = [f"img{i:05d}" for i in range(len(feats))]
    bank = ClassSemanticBank(Tensor(Z), seen_mask, names)
    attr = AttributeVocabulary(Tensor(vocab), [f"attr{a:02d}" for a in range(spec.a)])
    return DatasetBundle(np.stack(feats), (spec.grid_h, spec.grid_w), np.array(labels), ids, np.array(parts),
                         bank, attr, extras={"prototypes": prototypes, "planted_regions": np.stack(planted_at), "spec": spec})


# -- checkpoints ----------------------------------------------------------


def checkpoint_save(path, state: ModelState, run_config: dict | None = None) -> None:
    meta = {
        "format": "zslt-checkpoint",
        "version": CHECKPOINT_VERSION,
        "model": state.snapshot(),
        "run_config": run_config or {},
        "epoch": state.epoch,
        "dtype": str(state.dtype),
        "adam": {"lr": state.adam.lr, "beta1": state.adam.beta1, "beta2": state.adam.beta2,
                 "eps": state.adam.eps, "step": state.adam.step},
        "rng_state": state.rng_state,
        "vocab_names": state.vocab.names,
        "params": sorted(state.params),
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
              "vocab_vectors": state.vocab.vectors.data}
    for name, t in state.params.items():
        arrays[f"param/{name}"] = t.data
        if name in state.adam.m:
            arrays[f"adam_m/{name}"] = state.adam.m[name]
            arrays[f"adam_v/{name}"] = state.adam.v[name]
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def checkpoint_load(path, expect_dims: ModelDims | None = None, expect_config: ModelConfig | None = None):
    """Returns (ModelState, run_config dict)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        with np.load(io.BytesIO(raw), allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        meta = json.loads(arrays["meta"].tobytes().decode())
    except (zipfile.BadZipFile, ValueError, KeyError, OSError, EOFError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt or truncated checkpoint ({exc})") from None
    if meta.get("format") != "zslt-checkpoint":
        raise FormatError(f"{path}: not a zslt checkpoint")
    if meta.get("version", 0) > CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {meta['version']} is newer than supported {CHECKPOINT_VERSION}")
    config = ModelConfig(**meta["model"]["config"])
    dims = ModelDims(**meta["model"]["dims"])
    if expect_dims is not None and dims != expect_dims:
        raise ConfigError(f"checkpoint dims {asdict(dims)} do not match expected {asdict(expect_dims)}")
    if expect_config is not None and config != expect_config:
        raise ConfigError(f"checkpoint model config {asdict(config)} differs from {asdict(expect_config)}")
    try:
        params = {name: Tensor(arrays[f"param/{name}"]) for name in meta["params"]}
        adam = AdamState(**meta["adam"])
        for name in meta["params"]:
            if f"adam_m/{name}" in arrays:
                adam.m[name] = arrays[f"adam_m/{name}"].copy()
                adam.v[name] = arrays[f"adam_v/{name}"].copy()
        vocab = AttributeVocabulary(Tensor(arrays["vocab_vectors"]), meta["vocab_names"])
    except KeyError as exc:
        raise FormatError(f"{path}: checkpoint is missing array {exc}") from None
    state = ModelState(config, dims, params, vocab, adam, meta["epoch"], meta["rng_state"])
    return state, meta["run_config"]
