"""Binary tensor records, dataset bundles, MPCA bases and model checkpoints.

A record is a little-endian header followed by the C-order payload::

    magic   4s   b"UGWT"
    version u16  FORMAT_VERSION
    dtype   u8   0 = float32, 1 = float64
    ndims   u8   1..3
    dims    ndims x u32

Dataset images are stored as float32. Bases and checkpoint parameters use
float64 so that they load back bit for bit.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dataset import DomainDataset
from .mpca import ModeBasis
from .neural_net.layers import LAYER_TYPES, Conv2D
from .neural_net.model import Model, ModelSpec

MAGIC = b"UGWT"
FORMAT_VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_HEAD = struct.Struct("<4sHBB")


class BundleError(ValueError):
    pass


def encode_array(arr, dtype=np.float32) -> bytes:
    arr = np.asarray(arr)
    code = CODES[np.dtype(dtype)]
    if not 1 <= arr.ndim <= 3:
        raise BundleError(f"records hold 1 to 3 dims, got {arr.ndim}")
    if any(d >= 2 ** 32 for d in arr.shape):
        raise BundleError("dimension too large for u32")
    out = arr.astype(DTYPES[code], copy=False)
    header = _HEAD.pack(MAGIC, FORMAT_VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(out).tobytes()


def decode_array(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one record at ``offset``; returns the array and the offset after it."""
    if len(buf) - offset < _HEAD.size:
        raise BundleError("truncated header")
    magic, version, code, ndims = _HEAD.unpack_from(buf, offset)
    if magic != MAGIC:
        raise BundleError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise BundleError(f"unsupported format version {version}")
    if code not in DTYPES:
        raise BundleError(f"unknown dtype code {code}")
    if not 1 <= ndims <= 3:
        raise BundleError(f"bad dimension count {ndims}")
    offset += _HEAD.size
    dims = struct.unpack_from(f"<{ndims}I", buf, offset)
    offset += 4 * ndims
    dt = DTYPES[code]
    n = int(np.prod(dims))
    end = offset + n * dt.itemsize
    if end > len(buf):
        raise BundleError(f"payload needs {n * dt.itemsize} bytes, {len(buf) - offset} available")
    arr = np.frombuffer(buf, dtype=dt, count=n, offset=offset).reshape(dims).copy()
    return arr, end


def write_array(path, arr, dtype=np.float32) -> None:
    Path(path).write_bytes(encode_array(arr, dtype))


def read_array(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_array(buf)
    if end != len(buf):
        raise BundleError(f"{len(buf) - end} trailing bytes in {path}")
    return arr


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


# --- datasets ------------------------------------------------------------------

def save_dataset(ds: DomainDataset, out_dir, dtype=None) -> Path:
    """Write manifest.json, images.ugwt and labels.csv into ``out_dir``.

    Raw images go to disk as float32; projected ones keep float64.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if dtype is None:
        dtype = np.float32 if ds.stage == "raw" else np.float64
    write_array(out / "images.ugwt", ds.images, dtype)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("index", "site", "x_mm", "y_mm"))
    for i, (g, (x, y)) in enumerate(zip(ds.groups, ds.labels)):
        w.writerow((i, g, _fmt(x), _fmt(y)))
    (out / "labels.csv").write_text(buf.getvalue())
    meta = {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in ds.meta.items()}
    _dump_json(out / "manifest.json", {
        "format": "ugw-dataset", "version": FORMAT_VERSION,
        "material": ds.material, "network": ds.network, "stage": ds.stage,
        "n_images": len(ds), "image_dims": list(ds.image_dims), "meta": meta,
    })
    return out


def load_dataset(path) -> DomainDataset:
    root = Path(path)
    if not (root / "manifest.json").is_file():
        raise FileNotFoundError(f"no dataset bundle at {root}")
    man = json.loads((root / "manifest.json").read_text())
    if man.get("format") != "ugw-dataset":
        raise BundleError(f"{root} is not a dataset bundle")
    images = read_array(root / "images.ugwt").astype(np.float64)
    with open(root / "labels.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != len(images) or len(images) != man["n_images"]:
        raise BundleError("manifest, images and labels disagree on the sample count")
    labels = np.array([(float(r["x_mm"]), float(r["y_mm"])) for r in rows]).reshape(-1, 2)
    return DomainDataset(images, labels, tuple(r["site"] for r in rows), material=man["material"],
                         network=man["network"], stage=man["stage"], meta=man.get("meta", {}))


# --- MPCA bases ------------------------------------------------------------------

def save_basis(basis: ModeBasis, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_array(out / "basis.ugwt", basis.basis, np.float64)
    write_array(out / "mean.ugwt", basis.mean_vector, np.float64)
    write_array(out / "eigenvalues.ugwt", basis.eigenvalues, np.float64)
    _dump_json(out / "basis.json", {
        "format": "ugw-basis", "version": FORMAT_VERSION, "i2": basis.i2, "p2": basis.p2,
        "q_percent": basis.q_percent, "retained_fraction": basis.retained_fraction,
        "fingerprint": basis.fingerprint(),
    })
    return out


def load_basis(path) -> ModeBasis:
    root = Path(path)
    if not (root / "basis.json").is_file():
        raise FileNotFoundError(f"no basis at {root}")
    man = json.loads((root / "basis.json").read_text())
    arrays = [read_array(root / f) for f in ("basis.ugwt", "eigenvalues.ugwt", "mean.ugwt")]
    for arr in arrays:
        arr.setflags(write=False)
    basis = ModeBasis(arrays[0], arrays[1], arrays[2], man["retained_fraction"], man["q_percent"])
    if basis.fingerprint() != man["fingerprint"]:
        raise BundleError("basis fingerprint mismatch")
    return basis


# --- model checkpoints -------------------------------------------------------------

def _record_shape(layer, name: str, arr: np.ndarray) -> np.ndarray:
    # records hold at most 3 dims; conv kernels fold (kh, kw) together
    if isinstance(layer, Conv2D) and name == "W":
        return arr.reshape(-1, arr.shape[2], arr.shape[3])
    return arr


def save_model(model: Model, out_dir, meta: dict | None = None) -> Path:
    """Manifest of the layer chain and frozen mask plus one record per tensor.

    ``meta`` is free-form JSON kept alongside (the CLI stores the target axis).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries, blob = [], bytearray()
    for i, layer in enumerate(model.spec.layers):
        for group, table in (("param", model.params[i]), ("state", model.state[i])):
            for name in sorted(table):
                arr = np.asarray(table[name], dtype=np.float64)
                entries.append({"layer": i, "kind": group, "name": name, "shape": list(arr.shape)})
                blob += encode_array(_record_shape(layer, name, arr), np.float64)
    (out / "tensors.ugwt").write_bytes(bytes(blob))
    _dump_json(out / "model.json", {
        "format": "ugw-model", "version": FORMAT_VERSION,
        "layers": [{"type": type(ly).__name__, "args": asdict(ly)} for ly in model.spec.layers],
        "frozen": list(model.frozen), "tensors": entries, "history": model.history,
        "meta": meta or {},
    })
    return out


def load_model(path) -> Model:
    root = Path(path)
    if not (root / "model.json").is_file():
        raise FileNotFoundError(f"no model checkpoint at {root}")
    man = json.loads((root / "model.json").read_text())
    if man.get("format") != "ugw-model":
        raise BundleError(f"{root} is not a model checkpoint")
    layers = tuple(LAYER_TYPES[e["type"]](**e["args"]) for e in man["layers"])
    spec = ModelSpec(layers)
    params = [dict() for _ in layers]
    state = [dict() for _ in layers]
    buf = (root / "tensors.ugwt").read_bytes()
    offset = 0
    for e in man["tensors"]:
        arr, offset = decode_array(buf, offset)
        target = params if e["kind"] == "param" else state
        target[e["layer"]][e["name"]] = arr.reshape(e["shape"])
    if offset != len(buf):
        raise BundleError("trailing bytes in tensors.ugwt")
    return Model(spec, params, state, tuple(man["frozen"]), man.get("history", []))


def read_model_meta(path) -> dict:
    root = Path(path)
    if not (root / "model.json").is_file():
        raise FileNotFoundError(f"no model checkpoint at {root}")
    return json.loads((root / "model.json").read_text()).get("meta", {})
