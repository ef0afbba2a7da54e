import struct

import numpy as np
import pytest

from avcil.baselines import EWCLearner, FineTuneLearner, ICaRLLearner, JointLearner, LwFLearner
from avcil.pipeline import FeatureExtractor, HailConfig, HailLearner
from avcil.storage import (
    CHECKPOINT_MAGIC,
    DATASET_MAGIC,
    FormatError,
    decode_container,
    encode_checkpoint,
    encode_container,
    inspect_checkpoint,
    load_checkpoint,
    read_dataset,
    save_checkpoint,
    write_dataset,
)
from avcil.synth import generate


@pytest.fixture(scope="module")
def stages(small_synth):
    return generate(small_synth)


@pytest.fixture(scope="module")
def extracted(stages, small_synth):
    ext = FeatureExtractor(small_synth.d, HailConfig(fusion_steps=10), seed=0).fit(stages[0].train)
    return ext, [{w: ext.transform(s.split(w)) for w in ("train", "val", "test")} for s in stages]


def test_container_round_trip_preserves_dtypes_and_shapes():
    arrays = {"a": np.arange(6, dtype=np.int64).reshape(2, 3), "b": np.linspace(0, 1, 5), "e": np.zeros((0, 3))}
    meta, out = decode_container(encode_container(b"TEST", {"x": 1}, arrays), b"TEST")
    assert meta == {"x": 1}
    for k, v in arrays.items():
        assert out[k].dtype == v.dtype and np.array_equal(out[k], v)


def test_container_rejects_bad_inputs():
    data = encode_container(CHECKPOINT_MAGIC, {}, {"w": np.ones(4)})
    with pytest.raises(FormatError, match="magic"):
        decode_container(b"XXXX" + data[4:], CHECKPOINT_MAGIC)
    bumped = data[:4] + struct.pack("<H", 99) + data[6:]
    with pytest.raises(FormatError, match="version 99"):
        decode_container(bumped, CHECKPOINT_MAGIC)
    with pytest.raises(FormatError, match="truncated"):
        decode_container(data[:-3], CHECKPOINT_MAGIC)
    with pytest.raises(FormatError):
        decode_container(data[:10], CHECKPOINT_MAGIC)
    with pytest.raises(FormatError):
        decode_container(data[:20], CHECKPOINT_MAGIC)


def test_dataset_round_trip(tmp_path, stages, small_synth):
    paths = write_dataset(tmp_path, stages, small_synth)
    assert paths["train"].read_bytes()[:4] == DATASET_MAGIC
    back = read_dataset(tmp_path)
    assert [s.name for s in back] == [s.name for s in stages]
    for a, b in zip(stages, back):
        for w in ("train", "val", "test"):
            assert np.array_equal(a.split(w).audio, b.split(w).audio)
            assert np.array_equal(a.split(w).visual, b.split(w).visual)
            assert np.array_equal(a.split(w).labels, b.split(w).labels)
    meta = decode_container(paths["test"].read_bytes(), DATASET_MAGIC)[0]
    assert meta["seed"] == small_synth.seed and meta["d"] == small_synth.d
    assert not list(tmp_path.glob("*.tmp"))


def make_learner(name, ext, D):
    return {
        "hail": lambda: HailLearner(ext, HailConfig(balancer_steps=10), n_stages=3, seed=0),
        "finetune": lambda: FineTuneLearner(D, steps=20),
        "lwf": lambda: LwFLearner(D, steps=20),
        "ewc": lambda: EWCLearner(D, steps=20),
        "icarl_nme": lambda: ICaRLLearner(D, budget_per_class=3, steps=20),
        "joint_upper": lambda: JointLearner(),
    }[name]()


@pytest.mark.parametrize("name", ["hail", "finetune", "lwf", "ewc", "icarl_nme", "joint_upper"])
def test_checkpoint_round_trip_bitwise_predictions(tmp_path, stages, extracted, name):
    ext, feats = extracted
    D = feats[0]["train"].av.shape[1]
    learner = make_learner(name, ext, D)
    for k in range(2):
        learner.learn_species(feats[k]["train"], stages[k].train.labels, k,
                              val=(feats[k]["val"], stages[k].val.labels))
    path = tmp_path / f"{name}.ckpt"
    size = save_checkpoint(learner, path)
    assert size == path.stat().st_size
    loaded = load_checkpoint(path)
    probe = feats[2]["test"]
    assert np.array_equal(learner.predict(probe), loaded.predict(probe))
    for k in range(2):
        assert np.array_equal(learner.predict(feats[k]["test"], species=k), loaded.predict(feats[k]["test"], species=k))
    # re-encoding the loaded state gives the same bytes
    assert encode_checkpoint(loaded) == path.read_bytes()
    info = inspect_checkpoint(path)
    assert info["magic"] == "HAIL" and info["kind"] == name and info["bytes"] == size


def test_retained_state_is_c_ordered(stages, extracted):
    # decoded arrays are C ordered; live state must match or BLAS may round differently
    ext, feats = extracted
    L = make_learner("hail", ext, 0)
    for k in range(2):
        L.learn_species(feats[k]["train"], stages[k].train.labels, k)
    assert all(a.flags.c_contiguous for a in L.state_dict().values())


def test_loaded_hail_keeps_learning_identically(stages, extracted, tmp_path):
    ext, feats = extracted
    a = make_learner("hail", ext, 0)
    a.learn_species(feats[0]["train"], stages[0].train.labels, 0)
    save_checkpoint(a, tmp_path / "h.ckpt")
    b = load_checkpoint(tmp_path / "h.ckpt")
    for L in (a, b):
        L.learn_species(feats[1]["train"], stages[1].train.labels, 1)
    assert np.array_equal(a.predict(feats[1]["test"]), b.predict(feats[1]["test"]))


def test_load_rejects_corrupt_magic(tmp_path, extracted):
    ext, feats = extracted
    L = FineTuneLearner(feats[0]["train"].av.shape[1])
    p = tmp_path / "x.ckpt"
    save_checkpoint(L, p)
    raw = bytearray(p.read_bytes())
    raw[0:4] = b"NOPE"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(p)
