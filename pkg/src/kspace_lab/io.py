"""On-disk formats.

* CGRID v1: ``<path>`` holds little-endian float32 ``(re, im)`` pairs in
  row-major order; ``<path>.json`` holds ``{"width", "height", "domain",
  "dtype": "c64"}``.
* Masks: 8-bit binary PGM (255 = sampled) plus ``<path>.json`` with the
  pattern, ACS size, seed and target fraction.
* Parameter checkpoints: ``<stem>.json`` manifest plus ``<stem>.bin``
  float32 blob in manifest order (parameters, then buffers).
* GRAPPA kernels: ``<path>`` JSON plus ``<path>.bin`` complex64 weights.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grappa import GrappaKernel, KernelGeometry
from .kcore import ComplexGrid, Domain
from .nn.params import ParamStore
from .sampling import AcsRegion, Mask, Pattern


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return path.read_bytes()


def _complex_to_blob(data: np.ndarray) -> bytes:
    inter = np.empty(data.shape + (2,), dtype="<f4")
    inter[..., 0] = data.real
    inter[..., 1] = data.imag
    return inter.tobytes()


def _blob_to_complex(raw: bytes, shape) -> np.ndarray:
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    expected = 2 * int(np.prod(shape))
    if arr.size != expected:
        raise ValueError(f"blob holds {arr.size} floats, expected {expected}")
    arr = arr.reshape(tuple(shape) + (2,))
    return arr[..., 0] + 1j * arr[..., 1]


def write_cgrid(path, grid: ComplexGrid) -> None:
    path = Path(path)
    meta = {"width": grid.width, "height": grid.height, "domain": grid.domain.value, "dtype": "c64"}
    sidecar(path).write_text(json.dumps(meta))
    path.write_bytes(_complex_to_blob(grid.data))


def read_cgrid(path) -> ComplexGrid:
    meta_raw = _read_bytes(sidecar(path))
    meta = json.loads(meta_raw)
    if meta.get("dtype", "c64") != "c64":
        raise ValueError(f"unsupported CGRID dtype {meta.get('dtype')!r}")
    data = _blob_to_complex(_read_bytes(path), (meta["height"], meta["width"]))
    return ComplexGrid(data, Domain(meta["domain"]))


def write_pgm(path, img8: np.ndarray) -> None:
    img8 = np.asarray(img8, dtype=np.uint8)
    h, w = img8.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img8.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = _read_bytes(path)
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    if tokens[0] != "P5" or int(tokens[3]) > 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    return data.reshape(h, w).copy()


def to_uint8(img, ref=None, symmetric: bool = False) -> np.ndarray:
    """Scale for display: min-max from ``ref`` (default ``img``), or symmetric about zero."""
    img = np.asarray(img, dtype=np.float64)
    src = img if ref is None else np.asarray(ref, dtype=np.float64)
    if symmetric:
        m = float(np.abs(src).max()) or 1.0
        scaled = (img / m + 1.0) * 127.5
    else:
        lo, hi = float(src.min()), float(src.max())
        scaled = (img - lo) / ((hi - lo) or 1.0) * 255.0
    return np.clip(np.round(scaled), 0, 255).astype(np.uint8)


def write_mask(path, m: Mask) -> None:
    write_pgm(path, np.where(m.keep, 255, 0))
    meta = {
        "pattern": m.pattern.value,
        "acs_rows": m.acs.rows,
        "acs_cols": m.acs.cols,
        "seed": int(m.seed),
        "target_fraction": float(m.target_fraction),
    }
    if m.accel is not None:
        meta["accel"] = int(m.accel)
    sidecar(path).write_text(json.dumps(meta))


def read_mask(path) -> Mask:
    keep = read_pgm(path) >= 128
    meta = json.loads(_read_bytes(sidecar(path)))
    h, w = keep.shape
    region = AcsRegion(int(meta["acs_rows"]), int(meta["acs_cols"]), h, w)
    return Mask(keep, region, Pattern(meta["pattern"]), int(meta["seed"]), float(meta["target_fraction"]), meta.get("accel"))


def save_params(directory, stem: str, store: ParamStore, config: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "layers": [{"name": n, "shape": list(s)} for n, s in store.manifest],
        "buffers": [{"name": n, "shape": list(v.shape)} for n, v in store.buffers.items()],
        "step": int(store.step),
        "config": config or {},
    }
    (directory / f"{stem}.json").write_text(json.dumps(meta, indent=1))
    parts = [store.values] + [v.ravel() for v in store.buffers.values()]
    (directory / f"{stem}.bin").write_bytes(np.concatenate(parts).astype("<f4").tobytes())


def load_params(directory, stem: str) -> tuple[ParamStore, dict]:
    directory = Path(directory)
    meta = json.loads(_read_bytes(directory / f"{stem}.json"))
    manifest = [(e["name"], tuple(e["shape"])) for e in meta["layers"]]
    blob = np.frombuffer(_read_bytes(directory / f"{stem}.bin"), dtype="<f4").astype(np.float64)
    store = ParamStore(manifest)
    off = store.size
    store.values[:] = blob[:off]
    for e in meta.get("buffers", []):
        n = int(np.prod(e["shape"]))
        store.buffers[e["name"]] = blob[off : off + n].reshape(e["shape"]).copy()
        off += n
    if off != blob.size:
        raise ValueError(f"checkpoint blob has {blob.size} values, manifest describes {off}")
    store.step = int(meta.get("step", 0))
    return store, meta.get("config", {})


def save_kernel(path, k: GrappaKernel) -> None:
    path = Path(path)
    meta = {"geometry": k.geometry.to_dict(), "fit_residual": k.fit_residual, "shape": list(k.weights.shape)}
    path.write_text(json.dumps(meta))
    path.with_name(path.name + ".bin").write_bytes(_complex_to_blob(k.weights))


def load_kernel(path) -> GrappaKernel:
    path = Path(path)
    meta = json.loads(_read_bytes(path))
    geom = KernelGeometry(**meta["geometry"])
    shape = (geom.accel - 1, geom.coils, geom.unknowns)
    w = _blob_to_complex(_read_bytes(path.with_name(path.name + ".bin")), shape)
    return GrappaKernel(geom, w, float(meta["fit_residual"]))
