"""Versioned binary containers for datasets (``AVC1``) and learner checkpoints (``HAIL``).

Layout, all integers little-endian::

    offset 0   4 bytes   magic
    offset 4   uint16    format version
    offset 6   uint16    reserved (0)
    offset 8   uint64    header length H
    offset 16  H bytes   UTF-8 JSON header {"meta": {...}, "arrays": [...]}
    offset 16+H          array payload, C order, little-endian

Each ``arrays`` entry is ``{"name", "dtype", "shape", "offset", "nbytes"}``
with ``offset`` relative to the start of the payload.  JSON keys are
sorted, so identical state always serializes to identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

DATASET_MAGIC = b"AVC1"
CHECKPOINT_MAGIC = b"HAIL"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHHQ")


class FormatError(ValueError):
    """File is not a valid container (bad magic, version, or truncated)."""


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_container(magic: bytes, meta: dict, arrays: dict[str, np.ndarray], version: int = FORMAT_VERSION) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset,
                        "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(magic, version, 0, len(header)) + header + b"".join(chunks)


def decode_container(data: bytes, magic: bytes, version: int = FORMAT_VERSION):
    if len(data) < _PREFIX.size:
        raise FormatError("file too short for a container header (truncated?)")
    got_magic, got_version, _, hlen = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise FormatError(f"bad magic {got_magic!r}, expected {magic!r}")
    if got_version != version:
        raise FormatError(f"unsupported format version {got_version} (this build reads version {version})")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise FormatError("truncated header")
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from None
    payload = memoryview(data)[start:]
    expected = sum(e["nbytes"] for e in header["arrays"])
    if len(payload) != expected:
        raise FormatError(f"payload is {len(payload)} bytes, header declares {expected} (truncated file?)")
    arrays = {}
    for e in header["arrays"]:
        buf = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], arrays


def read_container(path, magic: bytes):
    return decode_container(Path(path).read_bytes(), magic)


# ---------------------------------------------------------------- datasets


def encode_split(stages: Sequence, which: str, synth_cfg) -> bytes:
    """One split of every stage as a columnar ``AVC1`` container."""
    from .synth import flatten_stages

    audio, visual, labels, species = flatten_stages(stages, which)
    meta = {
        "kind": "dataset",
        "split": which,
        "d": int(audio.shape[1]),
        "L": int(visual.shape[1]),
        "S": int(visual.shape[2]),
        "n_samples": int(len(labels)),
        "counts": {str(s.species_id): len(s.split(which)) for s in stages},
        "species_names": [s.name for s in stages],
        "seed": int(synth_cfg.seed),
        "config": synth_cfg.to_dict(),
    }
    return encode_container(DATASET_MAGIC, meta, {
        "species": species.astype("<i8"), "labels": labels.astype("<i8"),
        "audio": audio.astype("<f8"), "visual": visual.astype("<f8"),
    })


def write_split_file(path, stages: Sequence, which: str, synth_cfg) -> int:
    """Write one split of every stage into a single ``AVC1`` file; returns its size."""
    data = encode_split(stages, which, synth_cfg)
    atomic_write_bytes(path, data)
    return len(data)


def read_split_file(path):
    """Return ``(meta, {species_id: Split})``."""
    from .synth import Split

    meta, arr = read_container(path, DATASET_MAGIC)
    out = {}
    for k in sorted(set(arr["species"].tolist())):
        rows = arr["species"] == k
        out[int(k)] = Split(arr["audio"][rows], arr["visual"][rows], arr["labels"][rows], int(k))
    return meta, out


def write_dataset(out_dir, stages: Sequence, synth_cfg) -> dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {}
    for which in ("train", "val", "test"):
        p = out_dir / f"dataset_{which}.avc"
        write_split_file(p, stages, which, synth_cfg)
        paths[which] = p
    return paths


def read_dataset(out_dir) -> list:
    from .synth import SpeciesStage

    splits = {w: read_split_file(Path(out_dir) / f"dataset_{w}.avc") for w in ("train", "val", "test")}
    names = splits["train"][0]["species_names"]
    return [
        SpeciesStage(k, splits["train"][1][k], splits["val"][1][k], splits["test"][1][k], names[k])
        for k in sorted(splits["train"][1])
    ]


# ------------------------------------------------------------- checkpoints


def _map_meta(emap) -> dict:
    return {"d_in": emap.d_in, "d_out": emap.d_out, "seed": emap.seed, "scale": emap.scale}


def hail_state(learner) -> dict[str, np.ndarray]:
    """Every array a HAIL learner retains between stages.

    Expansion matrices are not included: they are regenerated from their
    seeds (see :func:`hail_meta`).
    """
    out = {f"fusion.{k}": v for k, v in learner.extractor.fusion.as_dict().items()}
    if learner.model.W_av is not None:
        out["W_av"] = learner.model.W_av
    for k, head in sorted(learner.model.species_heads.items()):
        out[f"species.{k}.W_a"] = head.W_a
        out[f"species.{k}.W_v"] = head.W_v
    for k, w in sorted(learner.model.balancer.w.items()):
        out[f"balancer.{k}"] = w
    for i, p in sorted(learner.bank.general.items()):
        out[f"proto.general.{i}"] = p
    for k, entry in sorted(learner.bank.species.items()):
        for i, (pa, pv) in sorted(entry.items()):
            out[f"proto.species.{k}.{i}.audio"] = pa
            out[f"proto.species.{k}.{i}.visual"] = pv
    return out


def hail_meta(learner) -> dict:
    from dataclasses import asdict

    m = learner.model
    return {
        "kind": "hail",
        "config": asdict(learner.cfg),
        "seed": learner.seed,
        "extractor_seed": learner.extractor.seed,
        "stage": learner.stage,
        "species_order": list(m.species_heads),
        "gamma": {"gamma_max": m.gamma.gamma_max, "gamma_min": m.gamma.gamma_min, "K": m.gamma.K},
        "default_beta": m.balancer.default_beta,
        "eta": m.ridge.eta,
        "modality": m.modality,
        "m": learner.bank.m,
        "alpha": learner.bank.alpha,
        "d": learner.extractor.fusion.d,
        "maps": {k: _map_meta(v) for k, v in learner.extractor.maps.items()},
    }


def _hail_from(meta: dict, arrays: dict):
    from .fusion import FusionParams
    from .hail import ExpansionMap, SpeciesHead
    from .inference import GammaSchedule
    from .pipeline import FeatureExtractor, HailConfig, HailLearner

    cfg = HailConfig(**meta["config"])
    ext = FeatureExtractor.__new__(FeatureExtractor)
    ext.cfg = cfg
    ext.seed = meta["extractor_seed"]
    ext.loss_trace = []
    ext.fusion = FusionParams(*(arrays[f"fusion.{k}"] for k in ("W_a", "W_v", "U_a", "U_v")))
    ext.maps = {k: ExpansionMap.create(v["d_in"], v["d_out"], seed=v["seed"], scale=v["scale"])
                for k, v in meta["maps"].items()}
    learner = HailLearner(ext, cfg, n_stages=meta["gamma"]["K"] + 1, seed=meta["seed"])
    learner.model.gamma = GammaSchedule(**meta["gamma"])
    learner.model.balancer.default_beta = meta["default_beta"]
    learner.model.W_av = arrays.get("W_av")
    learner.stage = meta["stage"]
    for k in meta["species_order"]:
        learner.model.species_heads[k] = SpeciesHead(arrays[f"species.{k}.W_a"], arrays[f"species.{k}.W_v"])
        if f"balancer.{k}" in arrays:
            learner.model.balancer.w[k] = arrays[f"balancer.{k}"]
        entry = {}
        for i in range(4):
            if f"proto.species.{k}.{i}.audio" in arrays:
                entry[i] = (arrays[f"proto.species.{k}.{i}.audio"], arrays[f"proto.species.{k}.{i}.visual"])
        learner.bank.species[k] = entry
    for i in range(4):
        if f"proto.general.{i}" in arrays:
            learner.bank.general[i] = arrays[f"proto.general.{i}"]
    return learner


def _baseline_meta(learner) -> dict:
    meta = {"kind": learner.name, "n_learned": getattr(learner, "n_learned", 0)}
    for attr in ("steps", "lr", "lam", "T", "lambda_ewc", "budget"):
        if hasattr(learner, attr):
            meta[attr] = getattr(learner, attr)
    if learner.name == "joint_upper":
        meta["eta"] = learner.cfg.eta
    return meta


def _baseline_from(meta: dict, arrays: dict):
    from . import baselines as B

    kind = meta["kind"]
    if kind == "joint_upper":
        lr = B.JointLearner(meta["eta"])
        lr.X, lr.y, lr.W = [arrays["X"]], [arrays["y"]], arrays["W"]
        return lr
    dim = arrays["W"].shape[0]
    kw = {"steps": meta["steps"], "lr": meta["lr"]}
    if kind == "finetune":
        lr = B.SoftmaxHeadLearner(dim, **kw)
    elif kind == "lwf":
        lr = B.LwFLearner(dim, lam=meta["lam"], temperature=meta["T"], **kw)
    elif kind == "ewc":
        lr = B.EWCLearner(dim, lambda_ewc=meta["lambda_ewc"], **kw)
        for k in ("theta_W", "theta_b", "fisher_W", "fisher_b"):
            setattr(lr, k, arrays[k])
    elif kind == "icarl_nme":
        lr = B.ICaRLLearner(dim, budget_per_class=meta["budget"], **kw)
        for name, rows in arrays.items():
            if name.startswith("exemplars_"):
                _, k, i = name.split("_")
                lr.exemplars[(int(k), int(i))] = rows
    else:
        raise FormatError(f"unknown learner kind {kind!r}")
    lr.W, lr.b, lr.n_learned = arrays["W"], arrays["b"], meta["n_learned"]
    return lr


def encode_checkpoint(learner) -> bytes:
    if learner.name == "hail":
        return encode_container(CHECKPOINT_MAGIC, hail_meta(learner), hail_state(learner))
    return encode_container(CHECKPOINT_MAGIC, _baseline_meta(learner), learner.state_dict())


def save_checkpoint(learner, path) -> int:
    data = encode_checkpoint(learner)
    atomic_write_bytes(path, data)
    return len(data)


def load_checkpoint(path):
    meta, arrays = read_container(path, CHECKPOINT_MAGIC)
    if meta.get("kind") == "hail":
        return _hail_from(meta, arrays)
    return _baseline_from(meta, arrays)


def inspect_checkpoint(path) -> dict:
    """Header summary: kind, version, array names/shapes, total bytes."""
    data = Path(path).read_bytes()
    meta, arrays = decode_container(data, CHECKPOINT_MAGIC)
    return {
        "magic": CHECKPOINT_MAGIC.decode(),
        "version": FORMAT_VERSION,
        "kind": meta.get("kind"),
        "bytes": len(data),
        "meta": meta,
        "arrays": {k: list(v.shape) for k, v in arrays.items()},
        "n_values": int(sum(v.size for v in arrays.values())),
    }
