"""Self-contained writer for the GZS1 bundle layout.

Implements the published on-disk contract (see the main package README):
manifest.json plus one tensor per file -- magic "GZS1", u32 LE rank,
u32 LE dims, payload row-major little-endian, f32 for float tensors and
u32 for labels/indices. Kept independent of the consumer package so the
converter only talks to it through files.
"""

import json
import os
import struct

import numpy as np

MAGIC = b"GZS1"
MANIFEST_VERSION = 1

TENSOR_ORDER = ("X", "y", "V", "source_ids", "target_ids",
                "train_idx", "val_idx", "test_seen_idx", "test_unseen_idx")
FLOAT_TENSORS = ("X", "V")


def write_tensor(path, arr, integer=False):
    payload = np.ascontiguousarray(arr, dtype="<u4" if integer else "<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", payload.ndim))
        fh.write(struct.pack(f"<{payload.ndim}I", *payload.shape))
        fh.write(payload.tobytes())


def write_bundle(dirpath, tensors, provenance):
    """tensors: dict with the nine TENSOR_ORDER entries."""
    os.makedirs(dirpath, exist_ok=True)
    n, p = tensors["X"].shape
    s = len(tensors["source_ids"])
    t = len(tensors["target_ids"])
    manifest = {
        "version": MANIFEST_VERSION,
        "dims": {"N": int(n), "P": int(p), "Q": int(tensors["V"].shape[1]),
                 "S": int(s), "T": int(t)},
        "files": {name: f"{name}.gzs" for name in TENSOR_ORDER},
        "preprocessing": {"mode": "none"},
        "provenance": provenance,
    }
    for name in TENSOR_ORDER:
        write_tensor(os.path.join(dirpath, f"{name}.gzs"), tensors[name],
                     integer=name not in FLOAT_TENSORS)
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
