from dataclasses import replace

import numpy as np
import pytest

from avcil.kernels import RidgeConfig, one_hot, ridge_solve
from avcil.synth import (
    ConfigError,
    SynthConfig,
    asymmetric_noise_config,
    degrade,
    flatten_stages,
    generate,
    modality_snr,
)

SMALL = SynthConfig(n_species=3, samples_per_class_train=40, samples_per_class_val=5, samples_per_class_test=20)


def probe_accuracy(Xtr, ytr, Xte, yte, eta=1e-6):
    def lift(X):
        return np.hstack([X, np.ones((len(X), 1))])

    W = ridge_solve(lift(Xtr), one_hot(ytr), RidgeConfig(eta))
    return float(np.mean((lift(Xte) @ W).argmax(1) == yte))


def visual_mean(split):
    return split.visual.mean(axis=(1, 2))


def test_noiseless_species_is_linearly_separable():
    cfg = replace(SMALL, audio_noise=0.0, visual_noise=0.0)
    st = generate(cfg)[0]
    X = lambda sp: np.hstack([sp.audio, visual_mean(sp)])
    assert probe_accuracy(X(st.train), st.train.labels, X(st.test), st.test.labels) == 1.0


def test_same_seed_is_bit_identical_and_other_seed_differs():
    a, b = generate(SMALL), generate(SMALL)
    c = generate(replace(SMALL, seed=1))
    for x, y in zip(a, b):
        for w in ("train", "val", "test"):
            assert np.array_equal(x.split(w).audio, y.split(w).audio)
            assert np.array_equal(x.split(w).visual, y.split(w).visual)
            assert np.array_equal(x.split(w).labels, y.split(w).labels)
    assert not np.array_equal(a[0].train.audio, c[0].train.audio)


def test_shapes_order_and_balance():
    stages = generate(SMALL)
    assert [s.species_id for s in stages] == [0, 1, 2]
    assert stages[0].name == "Red_Tilapia"
    st = stages[1]
    assert st.train.audio.shape == (160, SMALL.d)
    assert st.train.visual.shape == (160, SMALL.L, SMALL.S, SMALL.d)
    for w, n in (("train", 40), ("val", 5), ("test", 20)):
        assert np.array_equal(np.bincount(st.split(w).labels, minlength=4), [n] * 4)
    pair = st.test[3]
    assert pair.species_id == 1 and pair.intensity_label == st.test.labels[3]
    a, v, y, s = flatten_stages(stages, "test")
    assert len(a) == len(v) == len(y) == len(s) == 240 and list(np.unique(s)) == [0, 1, 2]


@pytest.mark.parametrize(
    "kw",
    [
        dict(d=6),
        dict(n_species=0),
        dict(audio_noise=-1.0),
        dict(visual_noise=(1.0, 2.0)),
        dict(samples_per_class_val=0),
        dict(species_rotation_strength=-0.1),
        dict(modes_per_class=0),
    ],
)
def test_invalid_configs_rejected(kw):
    with pytest.raises(ConfigError):
        generate(replace(SMALL, **kw))


def test_minimum_d_message():
    with pytest.raises(ConfigError, match="need d >= 10"):
        replace(SynthConfig(), d=9).validate()


def test_config_dict_round_trip():
    cfg = asymmetric_noise_config(SMALL)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


def test_audio_probe_beats_visual_probe_when_only_visual_is_noisy():
    cfg = replace(SMALL, audio_noise=0.0, visual_noise=(2.0, 8.0, 2.0))
    st = generate(cfg)[1]
    acc_a = probe_accuracy(st.train.audio, st.train.labels, st.test.audio, st.test.labels)
    acc_v = probe_accuracy(visual_mean(st.train), st.train.labels, visual_mean(st.test), st.test.labels)
    assert acc_a > acc_v


def test_degrade_zero_is_identical_copy_and_original_untouched():
    st = generate(SMALL)[0]
    before = st.train.audio.copy()
    same = degrade(st, 0.0, 0.0)
    assert np.array_equal(same.train.audio, st.train.audio)
    assert np.array_equal(same.test.visual, st.test.visual)
    assert same.train.audio is not st.train.audio
    noisy = degrade(st, 1.0, 1.0)
    assert np.array_equal(st.train.audio, before)
    assert not np.array_equal(noisy.train.audio, before)
    with pytest.raises(ConfigError):
        degrade(st, -1.0, 0.0)


def test_turbidity_lowers_visual_snr():
    st = generate(SMALL)[0]
    snrs = [modality_snr(degrade(st, t, 0.0).test, "visual") for t in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(snrs, snrs[1:]))
    assert modality_snr(degrade(st, 2.0, 0.0).test, "audio") == modality_snr(st.test, "audio")


def test_turbidity_never_helps_visual_probe_on_average():
    levels = (0.0, 0.5, 1.0, 2.0)
    acc = np.zeros(len(levels))
    for seed in range(3):
        st = generate(replace(SMALL, seed=seed))[0]
        for i, t in enumerate(levels):
            dg = degrade(st, t, 0.0, seed=seed)
            acc[i] += probe_accuracy(visual_mean(dg.train), dg.train.labels, visual_mean(dg.test), dg.test.labels, 1.0)
    assert all(a >= b for a, b in zip(acc, acc[1:]))


def test_intensity_directions_shared_across_species():
    cfg = replace(SMALL, audio_noise=0.0, visual_noise=0.0, mode_spread=0.0, species_rotation_strength=0.0)
    stages = generate(cfg)
    means = [np.stack([s.train.audio[s.train.labels == i][0] for i in range(4)]) for s in stages]
    # without rotation, species differ only by a constant offset
    diffs = [m - m[0] for m in means]
    assert np.allclose(diffs[0], diffs[1]) and np.allclose(diffs[0], diffs[2])


def test_species_identifiable_at_default_noise():
    stages = generate(SynthConfig())
    feat = lambda sp: np.hstack([sp.audio, visual_mean(sp)])
    means = np.stack([feat(s.train).mean(axis=0) for s in stages])
    correct = total = 0
    for s in stages:
        X = feat(s.test)
        pred = np.argmin(((X[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
        correct += int(np.sum(pred == s.species_id))
        total += len(X)
    assert correct / total > 0.9


def test_asymmetric_noise_alternates():
    cfg = asymmetric_noise_config(SynthConfig(n_species=4))
    assert cfg.audio_noise == (4.0, 0.5, 4.0, 0.5)
    assert cfg.visual_noise == (0.5, 4.0, 0.5, 4.0)
