"""Dataset container, on-disk formats, split validation, and the seeded
synthetic benchmark generator.

On-disk layout of a bundle directory:
  manifest.json   versioned manifest: dims, per-tensor file names,
                  preprocessing descriptor, seed provenance
  *.gzs           one binary tensor per file: magic "GZS1", u32 LE rank,
                  u32 LE dims, then the payload row-major little-endian
                  (float tensors as f32, labels/indices as u32)

Class ids are 1..S+T with source classes first; split index lists are
0-based row indices into X.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .ndcore import make_rng

MAGIC = b"GZS1"
MANIFEST_VERSION = 1

BUNDLE_TENSORS = ("X", "y", "V", "source_ids", "target_ids",
                  "train_idx", "val_idx", "test_seen_idx", "test_unseen_idx")
FLOAT_TENSORS = ("X", "V")


class BundleFormatError(Exception):
    """Malformed manifest or tensor file."""


class BundleValidationError(Exception):
    """Structurally valid files whose contents violate a bundle invariant."""


# -- binary tensor files -----------------------------------------------------

def write_tensor(path, arr, integer=False):
    """Write one tensor: magic, u32 rank, u32 dims, raw LE payload."""
    if integer:
        a = np.asarray(arr)
        if a.size and (a.min() < 0 or a.max() > np.iinfo(np.uint32).max):
            raise BundleFormatError(f"{path}: value out of u32 range")
        payload = np.ascontiguousarray(a, dtype="<u4")
    else:
        payload = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", payload.ndim))
        fh.write(struct.pack(f"<{payload.ndim}I", *payload.shape))
        fh.write(payload.tobytes())


def read_tensor(path, integer=False):
    """Read one tensor back; floats come out float64, ints int64."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8 or head[:4] != MAGIC:
            raise BundleFormatError(f"{path}: bad or missing GZS1 magic")
        rank = struct.unpack("<I", head[4:])[0]
        if rank > 8:
            raise BundleFormatError(f"{path}: implausible rank {rank}")
        raw = fh.read(4 * rank)
        if len(raw) < 4 * rank:
            raise BundleFormatError(f"{path}: truncated dimension header")
        shape = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        body = fh.read(4 * count)
        if len(body) != 4 * count:
            raise BundleFormatError(
                f"{path}: truncated payload ({len(body)} of {4 * count} "
                "bytes)")
        if fh.read(1):
            raise BundleFormatError(f"{path}: trailing bytes after payload")
    dtype = "<u4" if integer else "<f4"
    arr = np.frombuffer(body, dtype=dtype).reshape(shape)
    return arr.astype(np.int64 if integer else np.float64)


# -- bundle ------------------------------------------------------------------

@dataclass
class DatasetBundle:
    """Visual features, labels, attribute table, and the GZSL splits."""

    X: np.ndarray             # (N, P) float64
    y: np.ndarray             # (N,) int64, 1-based class ids
    V: np.ndarray             # (S+T, Q) float64, row c-1 = class c
    source_ids: np.ndarray    # (S,)
    target_ids: np.ndarray    # (T,)
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_seen_idx: np.ndarray
    test_unseen_idx: np.ndarray
    preprocessing: dict = field(default_factory=lambda: {"mode": "none"})
    provenance: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p_dim(self):
        return self.X.shape[1]

    @property
    def q_dim(self):
        return self.V.shape[1]

    @property
    def n_source(self):
        return len(self.source_ids)

    @property
    def n_target(self):
        return len(self.target_ids)

    def dims(self):
        return {"N": self.n, "P": self.p_dim, "Q": self.q_dim,
                "S": self.n_source, "T": self.n_target}


@dataclass
class GeneratedSet:
    """Externally generated feature vectors labeled with target classes."""

    X: np.ndarray   # (M, P)
    y: np.ndarray   # (M,)

    @property
    def m(self):
        return self.X.shape[0]


def validate_bundle(b):
    """Raise BundleValidationError naming the first violated invariant."""
    if b.X.ndim != 2:
        raise BundleValidationError("X must be 2-D")
    if b.y.shape != (b.n,):
        raise BundleValidationError("y length does not match X rows")
    if not np.all(np.isfinite(b.X)) or not np.all(np.isfinite(b.V)):
        raise BundleValidationError("non-finite feature or attribute values")
    src, tgt = set(b.source_ids.tolist()), set(b.target_ids.tolist())
    if not src or not tgt:
        raise BundleValidationError("source and target id lists must be "
                                    "non-empty")
    if src & tgt:
        raise BundleValidationError("source and target ids overlap")
    n_classes = len(src) + len(tgt)
    if sorted(src | tgt) != list(range(1, n_classes + 1)):
        raise BundleValidationError(
            "class ids must cover 1..S+T exactly (sources first)")
    if max(src) != len(src):
        raise BundleValidationError("source ids must be 1..S (sources first)")
    if b.V.shape[0] != n_classes:
        raise BundleValidationError("attribute table row count != S+T")
    bad = ~np.isin(b.y, np.arange(1, n_classes + 1))
    if bad.any():
        raise BundleValidationError(
            f"label {int(b.y[bad][0])} outside 1..{n_classes}")
    splits = {"train_idx": b.train_idx, "val_idx": b.val_idx,
              "test_seen_idx": b.test_seen_idx,
              "test_unseen_idx": b.test_unseen_idx}
    seen_union = np.zeros(b.n, dtype=bool)
    for name, idx in splits.items():
        if idx.size and (idx.min() < 0 or idx.max() >= b.n):
            raise BundleValidationError(f"{name} contains an index out of "
                                        f"range 0..{b.n - 1}")
        if len(np.unique(idx)) != len(idx):
            raise BundleValidationError(f"{name} contains duplicate indices")
        if seen_union[idx].any():
            raise BundleValidationError(
                f"{name} overlaps another split (index lists must be "
                "pairwise disjoint)")
        seen_union[idx] = True
    for name in ("train_idx", "val_idx", "test_seen_idx"):
        labels = b.y[splits[name]]
        if not np.all(np.isin(labels, b.source_ids)):
            raise BundleValidationError(
                f"{name} contains a point labeled with a target class")
    if not np.all(np.isin(b.y[b.test_unseen_idx], b.target_ids)):
        raise BundleValidationError(
            "test_unseen_idx contains a point labeled with a source class")
    mode = b.preprocessing.get("mode")
    if mode not in ("none", "max_norm_scale"):
        raise BundleValidationError(f"unknown preprocessing mode {mode!r}")
    if mode == "max_norm_scale" and "scale" not in b.preprocessing:
        raise BundleValidationError("max_norm_scale preprocessing lacks the "
                                    "recorded scale")


def save_bundle(b, dirpath):
    """Write manifest.json plus one GZS1 tensor file per field."""
    os.makedirs(dirpath, exist_ok=True)
    files = {name: f"{name}.gzs" for name in BUNDLE_TENSORS}
    manifest = {
        "version": MANIFEST_VERSION,
        "dims": b.dims(),
        "files": files,
        "preprocessing": b.preprocessing,
        "provenance": b.provenance,
    }
    for name in BUNDLE_TENSORS:
        write_tensor(os.path.join(dirpath, files[name]), getattr(b, name),
                     integer=name not in FLOAT_TENSORS)
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(dirpath):
    path = os.path.join(dirpath, "manifest.json")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise BundleFormatError(f"{path}: missing manifest")
    except json.JSONDecodeError as e:
        raise BundleFormatError(f"{path}: invalid JSON ({e})")
    if manifest.get("version") != MANIFEST_VERSION:
        raise BundleFormatError(
            f"{path}: unsupported manifest version "
            f"{manifest.get('version')!r}")
    return manifest


def load_bundle(dirpath):
    """Load and validate a bundle; dims must match the payloads exactly."""
    manifest = read_manifest(dirpath)
    dims = manifest["dims"]
    tensors = {}
    for name in BUNDLE_TENSORS:
        fname = manifest["files"][name]
        tensors[name] = read_tensor(os.path.join(dirpath, fname),
                                    integer=name not in FLOAT_TENSORS)
    expect = {
        "X": (dims["N"], dims["P"]),
        "y": (dims["N"],),
        "V": (dims["S"] + dims["T"], dims["Q"]),
        "source_ids": (dims["S"],),
        "target_ids": (dims["T"],),
    }
    for name, shape in expect.items():
        if tensors[name].shape != shape:
            raise BundleFormatError(
                f"{manifest['files'][name]}: shape {tensors[name].shape} "
                f"does not match manifest dims {shape}")
    b = DatasetBundle(
        preprocessing=manifest.get("preprocessing", {"mode": "none"}),
        provenance=manifest.get("provenance", {}),
        **tensors,
    )
    validate_bundle(b)
    return b


# -- CSV fixtures ------------------------------------------------------------

def _read_csv_matrix(path, dtype):
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [dtype(tok) for tok in line.split(",")]
            except ValueError:
                raise BundleFormatError(
                    f"{path}:{lineno}: unparseable value")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise BundleFormatError(
                    f"{path}:{lineno}: ragged row ({len(row)} fields, "
                    f"expected {width})")
            rows.append(row)
    return np.asarray(rows, dtype=np.float64 if dtype is float else np.int64)


def load_csv_bundle(dirpath):
    """Load a bundle from headerless CSV files (hand-written fixtures).

    Same file roles as the binary layout, named <tensor>.csv; index and id
    files hold one integer per line.
    """

    def path(name):
        return os.path.join(dirpath, f"{name}.csv")

    X = _read_csv_matrix(path("X"), float)
    V = _read_csv_matrix(path("V"), float)
    vectors = {}
    for name in BUNDLE_TENSORS:
        if name in FLOAT_TENSORS:
            continue
        vectors[name] = _read_csv_matrix(path(name), int).reshape(-1)
    b = DatasetBundle(X=X, V=V, **vectors)
    validate_bundle(b)
    return b


# -- preprocessing -----------------------------------------------------------

def preprocess_features(b, mode="max_norm_scale"):
    """Return a new bundle with the feature preprocessing applied.

    max_norm_scale divides every feature row by the largest train-split L2
    norm and records the scalar so generated sets can be scaled identically.
    """
    if mode not in ("none", "max_norm_scale"):
        raise ValueError(f"unknown preprocessing mode {mode!r}")
    if mode == "none":
        return b
    if b.preprocessing.get("mode") != "none":
        raise ValueError("bundle features are already preprocessed")
    norms = np.linalg.norm(b.X[b.train_idx], axis=1)
    scale = float(norms.max()) if norms.size else 0.0
    if scale == 0.0:
        raise ValueError("max train-split feature norm is zero")
    return DatasetBundle(
        X=b.X / scale, y=b.y, V=b.V,
        source_ids=b.source_ids, target_ids=b.target_ids,
        train_idx=b.train_idx, val_idx=b.val_idx,
        test_seen_idx=b.test_seen_idx, test_unseen_idx=b.test_unseen_idx,
        preprocessing={"mode": "max_norm_scale", "scale": scale},
        provenance=b.provenance,
    )


# -- synthetic benchmark -----------------------------------------------------

def synth_benchmark(seed, S=12, T=4, Q=16, P=32, n_per_class=150,
                    noise_sigma=0.15):
    """Seeded synthetic GZSL benchmark.

    Source attributes are uniform on [0,1]^Q; each target attribute is a
    Dirichlet-weighted convex combination of 2-3 source attributes, so the
    semantic relation carries real transfer signal. A fixed random linear
    map lifts attributes to class means tanh(v @ G); G entries carry a
    positive location (ResNet-like mostly-positive features) and enough
    spread that the tanh saturates, which keeps naive attribute-space
    interpolation from solving the unseen classes by itself. Features are
    the mean plus isotropic Gaussian noise. Source points split 70/10/20
    into train/val/test_seen per class; every target point goes to
    test_unseen. Features are left on their raw scale (preprocessing mode
    "none"): under dot-product scores the feature norm acts as the softmax
    temperature, and shrinking it to unit norm leaves the clamped
    asymmetric score unable to dominate the exp(0) floor of suppressed
    classes. Fully determined by the seed.
    """
    if S < 4 or T < 2:
        raise ValueError("need S >= 4 and T >= 2")
    if Q < 1 or P < 1 or n_per_class < 10:
        raise ValueError("invalid benchmark sizes")
    rng = make_rng(seed)
    v_src = rng.uniform(0.0, 1.0, size=(S, Q))
    v_tgt = np.empty((T, Q))
    for i in range(T):
        k = int(rng.integers(2, 4))
        picks = rng.choice(S, size=k, replace=False)
        w = rng.dirichlet(np.ones(k))
        v_tgt[i] = w @ v_src[picks]
    V = np.vstack([v_src, v_tgt])

    g = rng.normal(0.1, np.sqrt(1.0 / Q), size=(Q, P))
    means = np.tanh(V @ g)

    n_classes = S + T
    X = np.empty((n_classes * n_per_class, P))
    y = np.empty(n_classes * n_per_class, dtype=np.int64)
    for c in range(n_classes):
        lo = c * n_per_class
        noise = rng.normal(0.0, noise_sigma, size=(n_per_class, P))
        X[lo:lo + n_per_class] = means[c] + noise
        y[lo:lo + n_per_class] = c + 1

    train, val, test_seen, test_unseen = [], [], [], []
    n_tr = round(0.7 * n_per_class)
    n_val = round(0.1 * n_per_class)
    for c in range(n_classes):
        lo = c * n_per_class
        rows = np.arange(lo, lo + n_per_class)
        if c < S:
            train.extend(rows[:n_tr])
            val.extend(rows[n_tr:n_tr + n_val])
            test_seen.extend(rows[n_tr + n_val:])
        else:
            test_unseen.extend(rows)

    b = DatasetBundle(
        X=X, y=y, V=V,
        source_ids=np.arange(1, S + 1, dtype=np.int64),
        target_ids=np.arange(S + 1, S + T + 1, dtype=np.int64),
        train_idx=np.asarray(train, dtype=np.int64),
        val_idx=np.asarray(val, dtype=np.int64),
        test_seen_idx=np.asarray(test_seen, dtype=np.int64),
        test_unseen_idx=np.asarray(test_unseen, dtype=np.int64),
        provenance={"generator": "synth_benchmark", "seed": int(seed),
                    "S": S, "T": T, "Q": Q, "P": P,
                    "n_per_class": n_per_class,
                    "noise_sigma": noise_sigma},
    )
    validate_bundle(b)
    return b


def synth_generated_set(bundle, seed, n_per_class=300, noise_scale=1.0,
                        mode="means"):
    """Desk-scale stand-in for externally generated target features.

    mode='means' samples around the true target-class feature means with
    noise_scale times the class's own per-dimension std (an oracle
    generator); mode='uniform' draws feature-range uniform noise (an
    adversarial one). Output lives on the bundle's current feature scale,
    ready for direct use in training.
    """
    if mode not in ("means", "uniform"):
        raise ValueError(f"unknown generated mode {mode!r}")
    rng = make_rng(seed)
    tgt = bundle.target_ids
    m = len(tgt) * n_per_class
    Xg = np.empty((m, bundle.p_dim))
    yg = np.empty(m, dtype=np.int64)
    lo_all, hi_all = bundle.X.min(), bundle.X.max()
    for i, c in enumerate(tgt):
        rows = bundle.X[bundle.y == c]
        sl = slice(i * n_per_class, (i + 1) * n_per_class)
        if mode == "means":
            sigma = noise_scale * rows.std(axis=0)
            Xg[sl] = rows.mean(axis=0) + sigma * rng.standard_normal(
                (n_per_class, bundle.p_dim))
        else:
            Xg[sl] = rng.uniform(lo_all, hi_all,
                                 size=(n_per_class, bundle.p_dim))
        yg[sl] = c
    return GeneratedSet(Xg, yg)


# -- generated-set files -----------------------------------------------------

def save_generated(gen, dirpath, preprocessing=None):
    """Write a generated set; preprocessing records which feature scale the
    stored values are on (default raw, i.e. mode 'none')."""
    os.makedirs(dirpath, exist_ok=True)
    manifest = {
        "version": MANIFEST_VERSION,
        "dims": {"M": int(gen.m), "P": int(gen.X.shape[1])},
        "files": {"X": "gen_X.gzs", "y": "gen_y.gzs"},
        "preprocessing": preprocessing or {"mode": "none"},
    }
    write_tensor(os.path.join(dirpath, "gen_X.gzs"), gen.X)
    write_tensor(os.path.join(dirpath, "gen_y.gzs"), gen.y, integer=True)
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_generated(dirpath, bundle):
    """Load a generated set and align it with the bundle's feature scale.

    Raw-coordinate sets (the normal case for externally produced features)
    get the bundle's recorded preprocessing scalar applied; sets already on
    the bundle's scale pass through after a scale cross-check. Labels must
    all be target classes of the bundle.
    """
    manifest = read_manifest(dirpath)
    Xg = read_tensor(os.path.join(dirpath, manifest["files"]["X"]))
    yg = read_tensor(os.path.join(dirpath, manifest["files"]["y"]),
                     integer=True)
    if Xg.shape != (manifest["dims"]["M"], manifest["dims"]["P"]):
        raise BundleFormatError(
            f"{manifest['files']['X']}: shape does not match manifest dims")
    if Xg.shape[1] != bundle.p_dim:
        raise BundleFormatError(
            f"generated feature dim {Xg.shape[1]} != bundle P "
            f"{bundle.p_dim}")
    if yg.shape != (Xg.shape[0],):
        raise BundleFormatError("generated labels length != feature rows")
    if yg.size and not np.all(np.isin(yg, bundle.target_ids)):
        bad = yg[~np.isin(yg, bundle.target_ids)][0]
        raise BundleValidationError(
            f"generated label {int(bad)} is not a target class")
    gen_prep = manifest.get("preprocessing", {"mode": "none"})
    bundle_prep = bundle.preprocessing
    if gen_prep.get("mode") == "none":
        if bundle_prep.get("mode") == "max_norm_scale":
            Xg = Xg / bundle_prep["scale"]
    elif gen_prep.get("mode") == bundle_prep.get("mode"):
        if not np.isclose(gen_prep.get("scale", 0.0),
                          bundle_prep.get("scale", 0.0)):
            raise BundleValidationError(
                "generated set was preprocessed with a different scale "
                "than the bundle")
    else:
        raise BundleValidationError(
            f"generated preprocessing {gen_prep.get('mode')!r} is "
            f"incompatible with bundle {bundle_prep.get('mode')!r}")
    return GeneratedSet(Xg, yg)
