"""Binary file formats: "LCED" datasets and "LCEM" checkpoints.

Both formats are little-endian with fixed headers and round-trip byte
exactly.  Checkpoints store every learnable as a named tensor so models can
be inspected and partially consumed without knowing the writer's code.
"""

from __future__ import annotations

import struct

import numpy as np

from .channel import PathSet
from .datasets import ChannelDataset
from .hyper import ConditionBounds, HyperModel, HyperParams
from .network import DomainTransform, ListaParams, NetConfig, TransformParams

DATASET_MAGIC = b"LCED"
CHECKPOINT_MAGIC = b"LCEM"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {"f32": 0, "f64": 1}
_DTYPE_NAMES = {v: k for k, v in _DTYPE_CODES.items()}
_NP_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

_HEADER_FMT = "<4sIBBBBIIIIQqd"
_ANCHOR_CODES = {"as_written": 0, "primed": 1}
_ANCHOR_NAMES = {v: k for k, v in _ANCHOR_CODES.items()}


class FileFormatError(ValueError):
    """Unrecognized magic, version, or structurally invalid content."""


def _read_exact(fh, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise FileFormatError("file truncated")
    return data


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------


def write_dataset(path, ds: ChannelDataset, dtype: str | None = None):
    """Write a dataset; dtype ("f32" or "f64") controls channel storage only.

    Path metadata (gains, delays, angles) always stays at full precision.
    """
    dtype = ds.dtype if dtype is None else dtype
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPE_CODES)}")
    np_dt = _NP_DTYPES[dtype]
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                _HEADER_FMT,
                DATASET_MAGIC,
                DATASET_VERSION,
                1,  # little-endian marker
                _DTYPE_CODES[dtype],
                0 if ds.l_mode == "fixed" else 1,
                0 if ds.snr_mode == "fixed" else 1,
                ds.n,
                ds.m,
                ds.q,
                ds.n_rf,
                len(ds),
                ds.base_seed,
                ds.tau_max,
            )
        )
        for i in range(len(ds)):
            p = ds.paths[i]
            fh.write(struct.pack("<Id", int(ds.n_paths[i]), float(ds.snr_db[i])))
            fh.write(np.ascontiguousarray(ds.h[i], dtype=np_dt).tobytes())
            fh.write(np.ascontiguousarray(p.gains, dtype="<c16").tobytes())
            fh.write(np.ascontiguousarray(p.delays, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(p.angles, dtype="<f8").tobytes())


def read_dataset(path) -> ChannelDataset:
    with open(path, "rb") as fh:
        head = _read_exact(fh, struct.calcsize(_HEADER_FMT))
        (
            magic,
            version,
            endian,
            dtype_code,
            l_mode,
            snr_mode,
            n,
            m,
            q,
            n_rf,
            count,
            base_seed,
            tau_max,
        ) = struct.unpack(_HEADER_FMT, head)
        if magic != DATASET_MAGIC:
            raise FileFormatError(f"bad dataset magic {magic!r}")
        if version != DATASET_VERSION:
            raise FileFormatError(f"unsupported dataset version {version}")
        if endian != 1:
            raise FileFormatError("only little-endian dataset files are supported")
        if dtype_code not in _DTYPE_NAMES:
            raise FileFormatError(f"unknown dtype code {dtype_code}")
        np_dt = _NP_DTYPES[_DTYPE_NAMES[dtype_code]]
        h = np.empty((count, n, 2 * m))
        ls = np.empty(count, dtype=np.int64)
        snrs = np.empty(count)
        paths = []
        h_bytes = n * 2 * m * np_dt.itemsize
        for i in range(count):
            l_i, snr_i = struct.unpack("<Id", _read_exact(fh, 12))
            ls[i] = l_i
            snrs[i] = snr_i
            h[i] = np.frombuffer(_read_exact(fh, h_bytes), dtype=np_dt).reshape(n, 2 * m)
            gains = np.frombuffer(_read_exact(fh, 16 * l_i), dtype="<c16")
            delays = np.frombuffer(_read_exact(fh, 8 * l_i), dtype="<f8")
            angles = np.frombuffer(_read_exact(fh, 8 * l_i), dtype="<f8")
            paths.append(PathSet(gains=gains, delays=delays, angles=angles))
        if fh.read(1):
            raise FileFormatError("trailing bytes after the last record")
    return ChannelDataset(
        h=h,
        n_paths=ls,
        snr_db=snrs,
        paths=paths,
        n=n,
        m=m,
        q=q,
        n_rf=n_rf,
        base_seed=base_seed,
        tau_max=tau_max,
        l_mode="fixed" if l_mode == 0 else "per-sample",
        snr_mode="fixed" if snr_mode == 0 else "per-sample",
        dtype=_DTYPE_NAMES[dtype_code],
    )


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------

_CKPT_FMT = "<4sIIIIBBII"


def _write_tensor(fh, name: str, arr: np.ndarray):
    data = np.ascontiguousarray(arr, dtype="<f8")
    name_b = name.encode("utf-8")
    fh.write(struct.pack("<H", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<B", data.ndim))
    fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
    fh.write(struct.pack("<B", _DTYPE_CODES["f64"]))
    fh.write(data.tobytes())


def _read_tensor(fh):
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (rank,) = struct.unpack("<B", _read_exact(fh, 1))
    dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
    (dtype_code,) = struct.unpack("<B", _read_exact(fh, 1))
    if dtype_code not in _DTYPE_NAMES:
        raise FileFormatError(f"unknown tensor dtype code {dtype_code}")
    np_dt = _NP_DTYPES[_DTYPE_NAMES[dtype_code]]
    size = int(np.prod(dims, dtype=np.int64)) if rank else 1
    arr = np.frombuffer(_read_exact(fh, size * np_dt.itemsize), dtype=np_dt)
    return name, arr.reshape(dims).astype(np.float64)


def write_checkpoint(path, netcfg: NetConfig, params: ListaParams, hyper: HyperModel | None = None):
    """Write the estimator (and optionally its hypernetwork) as named tensors."""
    sections = ["lista"] + (["hyper"] if hyper is not None else [])
    tensors: list[tuple[str, np.ndarray]] = list(params.tensors().items())
    if hyper is not None:
        tensors += list(hyper.hyper.tensors().items())
        b = hyper.bounds
        tensors.append(
            ("hyper.bounds", np.array([b.l_min, b.l_max, b.snr_min, b.snr_max]))
        )
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                _CKPT_FMT,
                CHECKPOINT_MAGIC,
                CHECKPOINT_VERSION,
                netcfg.t_layers,
                netcfg.w1,
                netcfg.w2,
                1 if netcfg.share_transforms else 0,
                _ANCHOR_CODES[netcfg.anchor_mode],
                netcfg.n,
                netcfg.m,
            )
        )
        fh.write(struct.pack("<I", len(sections)))
        for tag in sections:
            tag_b = tag.encode("utf-8")
            fh.write(struct.pack("<H", len(tag_b)))
            fh.write(tag_b)
        fh.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors:
            _write_tensor(fh, name, arr)


def _params_from_tensors(tensors: dict[str, np.ndarray], cfg: NetConfig) -> ListaParams:
    def domain(prefix: str) -> DomainTransform:
        try:
            return DomainTransform(
                a=tensors[prefix + ".a"],
                b=tensors[prefix + ".b"],
                b_inv=tensors[prefix + ".b_inv"],
                a_inv=tensors[prefix + ".a_inv"],
            )
        except KeyError as exc:
            raise FileFormatError(f"checkpoint is missing tensor {exc}") from exc

    if cfg.share_transforms:
        transforms = TransformParams(freq=domain("freq"), beam=domain("beam"))
    else:
        transforms = [
            TransformParams(freq=domain(f"layer{t}.freq"), beam=domain(f"layer{t}.beam"))
            for t in range(cfg.t_layers)
        ]
    try:
        return ListaParams(
            rho=tensors["rho"],
            rho_p=tensors["rho_p"],
            theta=tensors["theta"],
            theta_p=tensors["theta_p"],
            transforms=transforms,
        )
    except KeyError as exc:
        raise FileFormatError(f"checkpoint is missing tensor {exc}") from exc


def read_checkpoint(path):
    """Read a checkpoint: returns (netcfg, params, hyper_model_or_None)."""
    with open(path, "rb") as fh:
        head = _read_exact(fh, struct.calcsize(_CKPT_FMT))
        magic, version, t_layers, w1, w2, share, anchor, n, m = struct.unpack(
            _CKPT_FMT, head
        )
        if magic != CHECKPOINT_MAGIC:
            raise FileFormatError(f"bad checkpoint magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise FileFormatError(f"unsupported checkpoint version {version}")
        if anchor not in _ANCHOR_NAMES:
            raise FileFormatError(f"unknown anchor mode code {anchor}")
        (n_sections,) = struct.unpack("<I", _read_exact(fh, 4))
        sections = []
        for _ in range(n_sections):
            (tag_len,) = struct.unpack("<H", _read_exact(fh, 2))
            sections.append(_read_exact(fh, tag_len).decode("utf-8"))
        (n_tensors,) = struct.unpack("<Q", _read_exact(fh, 8))
        tensors = {}
        for _ in range(n_tensors):
            name, arr = _read_tensor(fh)
            tensors[name] = arr
        if fh.read(1):
            raise FileFormatError("trailing bytes after the tensor table")
    netcfg = NetConfig(
        t_layers=t_layers,
        w1=w1,
        w2=w2,
        share_transforms=bool(share),
        anchor_mode=_ANCHOR_NAMES[anchor],
        n=n,
        m=m,
    )
    params = _params_from_tensors(tensors, netcfg)
    hyper_model = None
    if "hyper" in sections:
        try:
            bounds_arr = tensors["hyper.bounds"]
            hp = HyperParams(
                w1=tensors["hyper.w1"], w2=tensors["hyper.w2"], w3=tensors["hyper.w3"]
            )
        except KeyError as exc:
            raise FileFormatError(f"checkpoint is missing tensor {exc}") from exc
        hyper_model = HyperModel(
            base=params,
            hyper=hp,
            bounds=ConditionBounds(*[float(v) for v in bounds_arr]),
        )
    return netcfg, params, hyper_model
