"""Seeded synthetic audio-visual feature streams, one species per stage.

Each modality has its own random orthonormal basis of ``R^d``.  The first
four basis vectors ``mu_i`` carry the intensity signal shared by every
species; the next ``n_species`` carry per-species offsets ``o_k``.  A second
set of intensity directions ``nu_i`` is turned by a species rotation
``R_k = expm(strength * A_k)`` (``A_k`` skew-symmetric, ``R_0 = I``), giving
each species its own way of expressing an intensity.  Every (species,
intensity) class is a mixture of ``modes_per_class`` sub-modes placed
``mode_spread`` away from the class centre in random directions.

A sample of intensity ``i`` from species ``k`` in sub-mode ``c`` has mean
``m = mu_i + R_k nu_i + o_k + e_kic`` and is

* audio: ``m + audio_noise[k] * N(0, I)``
* visual cell ``(l, s)``: ``g_ls m + visual_noise[k] * N(0, I)``
  with a per-cell gain ``g_ls ~ U(0.5, 1.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np
import scipy.linalg

from .fusion import N_CLASSES, FeaturePair
from .kernels import make_rng

SPECIES_NAMES = ("Red_Tilapia", "Tilapia", "Jade_Perch", "Black_Perch", "Lotus_Carp", "Sunfish")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_species: int = 6
    samples_per_class_train: int = 200
    samples_per_class_val: int = 30
    samples_per_class_test: int = 60
    d: int = 16
    L: int = 4
    S: int = 4
    audio_noise: float | tuple[float, ...] = 1.0
    visual_noise: float | tuple[float, ...] = 2.0
    species_rotation_strength: float = 1.2
    signal: float = 1.0
    species_signal: float = 2.0
    offset: float = 2.5
    modes_per_class: int = 3
    mode_spread: float = 2.0
    seed: int = 0

    def noise_for(self, modality: str) -> np.ndarray:
        raw = self.audio_noise if modality == "audio" else self.visual_noise
        vals = np.broadcast_to(np.asarray(raw, dtype=np.float64), (self.n_species,)).copy()
        return vals

    def validate(self):
        if self.n_species < 1:
            raise ConfigError("n_species must be >= 1")
        if min(self.samples_per_class_train, self.samples_per_class_val, self.samples_per_class_test) < 1:
            raise ConfigError("every split needs at least one sample per class")
        if self.L < 1 or self.S < 1:
            raise ConfigError("L and S must be >= 1")
        need = N_CLASSES + self.n_species
        if self.d < need:
            raise ConfigError(
                f"d={self.d} too small: need d >= {need} (4 intensity directions + {self.n_species} species offsets)"
            )
        for m in ("audio", "visual"):
            raw = np.asarray(self.audio_noise if m == "audio" else self.visual_noise, dtype=np.float64)
            if raw.ndim > 1 or (raw.ndim == 1 and raw.size != self.n_species):
                raise ConfigError(f"{m}_noise must be a scalar or one value per species")
            if np.any(raw < 0):
                raise ConfigError(f"{m}_noise must be non-negative")
        if self.species_rotation_strength < 0:
            raise ConfigError("species_rotation_strength must be non-negative")
        if self.modes_per_class < 1 or self.mode_spread < 0:
            raise ConfigError("need modes_per_class >= 1 and mode_spread >= 0")

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        data = dict(data)
        for k in ("audio_noise", "visual_noise"):
            if isinstance(data.get(k), list):
                data[k] = tuple(float(x) for x in data[k])
        return cls(**data)


@dataclass
class Split:
    """Class-balanced samples of one species; iterates as :class:`FeaturePair`."""

    audio: np.ndarray  # (n, d)
    visual: np.ndarray  # (n, L, S, d)
    labels: np.ndarray  # (n,)
    species_id: int

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> FeaturePair:
        return FeaturePair(self.audio[i], self.visual[i], int(self.labels[i]), self.species_id)

    def __iter__(self) -> Iterator[FeaturePair]:
        return (self[i] for i in range(len(self)))

    def copy(self) -> "Split":
        return Split(self.audio.copy(), self.visual.copy(), self.labels.copy(), self.species_id)


@dataclass
class SpeciesStage:
    species_id: int
    train: Split
    val: Split
    test: Split
    name: str = ""

    def split(self, which: str) -> Split:
        return {"train": self.train, "val": self.val, "test": self.test}[which]


@dataclass
class _Modality:
    mu: np.ndarray  # (4, d)
    nu: np.ndarray  # (4, d)
    offsets: np.ndarray  # (n_species, d)
    rotations: np.ndarray  # (n_species, d, d)
    modes: np.ndarray  # (n_species, 4, modes_per_class, d)

    def class_mean(self, k: int, i: int) -> np.ndarray:
        return self.mu[i] + self.rotations[k] @ self.nu[i] + self.offsets[k]


def _modality_geometry(cfg: SynthConfig, rng: np.random.Generator) -> _Modality:
    d = cfg.d
    basis, _ = np.linalg.qr(rng.normal(size=(d, d)))
    mu = cfg.signal * basis[:, :N_CLASSES].T
    offsets = cfg.offset * basis[:, N_CLASSES : N_CLASSES + cfg.n_species].T
    nu_basis, _ = np.linalg.qr(rng.normal(size=(d, N_CLASSES)))
    nu = cfg.species_signal * nu_basis.T
    rots = np.empty((cfg.n_species, d, d))
    for k in range(cfg.n_species):
        G = rng.normal(size=(d, d)) / np.sqrt(d)
        # the first species keeps the reference orientation
        A = 0.0 if k == 0 else cfg.species_rotation_strength * (G - G.T) / 2.0
        rots[k] = scipy.linalg.expm(np.zeros((d, d)) + A)
    dirs = rng.normal(size=(cfg.n_species, N_CLASSES, cfg.modes_per_class, d))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return _Modality(mu, nu, offsets, rots, cfg.mode_spread * dirs)


def _sample_split(cfg, geo_a, geo_v, k, per_class, rng) -> Split:
    n = per_class * N_CLASSES
    labels = np.repeat(np.arange(N_CLASSES), per_class)
    labels = labels[rng.permutation(n)]
    mode = rng.integers(cfg.modes_per_class, size=n)
    mean_a = np.stack([geo_a.class_mean(k, i) for i in range(N_CLASSES)])[labels] + geo_a.modes[k, labels, mode]
    mean_v = np.stack([geo_v.class_mean(k, i) for i in range(N_CLASSES)])[labels] + geo_v.modes[k, labels, mode]
    audio = mean_a + cfg.noise_for("audio")[k] * rng.normal(size=(n, cfg.d))
    gain = rng.uniform(0.5, 1.5, size=(n, cfg.L, cfg.S, 1))
    visual = gain * mean_v[:, None, None, :] + cfg.noise_for("visual")[k] * rng.normal(size=(n, cfg.L, cfg.S, cfg.d))
    return Split(audio, visual, labels.astype(np.int64), k)


def generate(cfg: SynthConfig = SynthConfig()) -> list[SpeciesStage]:
    """Ordered species stages; identical configs give bit-identical data."""
    cfg.validate()
    rng = make_rng(cfg.seed)
    geo_a = _modality_geometry(cfg, rng)
    geo_v = _modality_geometry(cfg, rng)
    stages = []
    for k in range(cfg.n_species):
        srng = make_rng(int(rng.integers(2**63)))
        tr = _sample_split(cfg, geo_a, geo_v, k, cfg.samples_per_class_train, srng)
        va = _sample_split(cfg, geo_a, geo_v, k, cfg.samples_per_class_val, srng)
        te = _sample_split(cfg, geo_a, geo_v, k, cfg.samples_per_class_test, srng)
        name = SPECIES_NAMES[k] if k < len(SPECIES_NAMES) else f"species_{k}"
        stages.append(SpeciesStage(k, tr, va, te, name))
    return stages


def degrade(stage: SpeciesStage, turbidity: float, acoustic_noise: float, seed: int = 0) -> SpeciesStage:
    """Copy of ``stage`` with extra Gaussian noise on visual and/or audio features.

    Noise standard deviation is the factor times the RMS of that modality in
    the split being degraded, so factors are comparable across datasets.
    """
    if turbidity < 0 or acoustic_noise < 0:
        raise ConfigError("degradation factors must be non-negative")
    rng = make_rng(seed)
    out = {}
    for which in ("train", "val", "test"):
        sp = stage.split(which).copy()
        na = rng.normal(size=sp.audio.shape)
        nv = rng.normal(size=sp.visual.shape)
        if acoustic_noise > 0:
            sp.audio = sp.audio + acoustic_noise * np.sqrt(np.mean(sp.audio**2)) * na
        if turbidity > 0:
            sp.visual = sp.visual + turbidity * np.sqrt(np.mean(sp.visual**2)) * nv
        out[which] = sp
    return replace(stage, **out)


def modality_snr(split: Split, modality: str) -> float:
    """Between-class over within-class power of a modality's features."""
    x = split.audio if modality == "audio" else split.visual.reshape(len(split), -1)
    means = np.stack([x[split.labels == i].mean(axis=0) for i in range(N_CLASSES)])
    grand = x.mean(axis=0)
    between = np.mean(np.sum((means - grand) ** 2, axis=1))
    within = np.mean(np.sum((x - means[split.labels]) ** 2, axis=1))
    return float(between / within)


def asymmetric_noise_config(base: SynthConfig = SynthConfig(), low: float = 0.5, high: float = 4.0) -> SynthConfig:
    """Alternate species between noisy audio and noisy visual channels."""
    n = base.n_species
    audio = tuple(high if k % 2 == 0 else low for k in range(n))
    visual = tuple(low if k % 2 == 0 else high for k in range(n))
    return replace(base, audio_noise=audio, visual_noise=visual)


def flatten_stages(stages: Sequence[SpeciesStage], which: str):
    """Concatenate one split across stages into arrays ``(audio, visual, labels, species)``."""
    sps = [s.split(which) for s in stages]
    return (
        np.concatenate([s.audio for s in sps]),
        np.concatenate([s.visual for s in sps]),
        np.concatenate([s.labels for s in sps]),
        np.concatenate([np.full(len(s), s.species_id, dtype=np.int64) for s in sps]),
    )
