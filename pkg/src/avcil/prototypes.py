"""Two-tier prototype memory: general intensity prototypes and frozen per-species ones."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .fusion import N_CLASSES
from .kernels import NumericError, as_matrix, cosine_matrix, kmeans


def _sub_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys]).generate_state(1, np.uint64)[0])


def cluster_means(F: np.ndarray, m: int, seed: int) -> np.ndarray:
    """``m`` k-means centroids of ``F``; with fewer than ``m`` rows the centroids repeat cyclically."""
    k = min(m, F.shape[0])
    centroids = kmeans(F, k, seed=seed).centroids
    if k < m:
        centroids = centroids[np.arange(m) % k]
    return centroids


def _per_intensity(F, labels, m, seed, tag):
    F = as_matrix(F, "features")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (F.shape[0],):
        raise NumericError("one label per feature row required")
    out = {}
    for i in range(N_CLASSES):
        rows = F[labels == i]
        if rows.shape[0] == 0:
            warnings.warn(f"no samples for intensity {i}; {tag} prototypes omitted", stacklevel=3)
            continue
        out[i] = cluster_means(rows, m, _sub_seed(seed, i))
    return out


@dataclass
class PrototypeBank:
    m: int = 5
    alpha: float = 0.7
    general: dict[int, np.ndarray] = field(default_factory=dict)
    species: dict[int, dict[int, tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 1:
            raise NumericError("m must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise NumericError("alpha must lie in [0, 1]")

    def general_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked general prototypes (intensity-major) and their intensity labels."""
        keys = sorted(self.general)
        protos = np.vstack([self.general[i] for i in keys])
        labels = np.repeat(np.array(keys, dtype=np.int64), [len(self.general[i]) for i in keys])
        return protos, labels

    def species_matrices(self, species_id: int) -> tuple[np.ndarray, np.ndarray]:
        entry = self.species[species_id]
        keys = sorted(entry)
        return (np.vstack([entry[i][0] for i in keys]), np.vstack([entry[i][1] for i in keys]))

    def n_vectors(self) -> int:
        n = sum(len(p) for p in self.general.values())
        for entry in self.species.values():
            n += sum(len(a) + len(v) for a, v in entry.values())
        return n


def build_general(F_av, labels, m: int = 5, seed: int = 0) -> dict[int, np.ndarray]:
    return _per_intensity(F_av, labels, m, seed, "general")


def build_species(F_a, F_v, labels, species_id: int, m: int = 5, seed: int = 0):
    """Per-intensity audio and visual prototypes for one species, clustered independently."""
    s = _sub_seed(seed, 1_000 + species_id)
    audio = _per_intensity(F_a, labels, m, s, f"species {species_id} audio")
    visual = _per_intensity(F_v, labels, m, s, f"species {species_id} visual")
    return {i: (audio[i], visual[i]) for i in audio}


def greedy_match(new: np.ndarray, old: np.ndarray) -> list[tuple[int, int]]:
    """Pairs ``(new_idx, old_idx)`` chosen by ascending Euclidean distance, each used once."""
    d = np.linalg.norm(new[:, None, :] - old[None, :, :], axis=2)
    order = np.argsort(d, axis=None, kind="stable")
    used_new, used_old, pairs = set(), set(), []
    for flat in order:
        i, j = divmod(int(flat), old.shape[0])
        if i in used_new or j in used_old:
            continue
        pairs.append((i, j))
        used_new.add(i)
        used_old.add(j)
        if len(pairs) == min(new.shape[0], old.shape[0]):
            break
    return pairs


def ema_update(bank: PrototypeBank, F_new, labels, seed: int = 0) -> dict[int, np.ndarray]:
    """Blend general prototypes toward cluster means of new data, in place.

    Each new cluster mean is matched to an old prototype of the same
    intensity; the matched prototype becomes ``alpha*old + (1-alpha)*mean``.
    """
    if not bank.general:
        raise NumericError("ema_update needs a populated general bank")
    F_new = as_matrix(F_new, "F_new")
    labels = np.asarray(labels, dtype=np.int64)
    a = float(bank.alpha)
    # complement taken on the decimal value, so alpha=0.7 blends with weight 0.3 rather than 0.30000000000000004
    b = float(1 - Fraction(repr(a)))
    for i, old in bank.general.items():
        rows = F_new[labels == i]
        if rows.shape[0] == 0:
            continue
        k = min(bank.m, rows.shape[0])
        means = kmeans(rows, k, seed=_sub_seed(seed, i)).centroids
        updated = old.copy()
        for ni, oj in greedy_match(means, old):
            updated[oj] = a * old[oj] + b * means[ni]
        bank.general[i] = updated
    return bank.general


def similarity_to_bank(mu_new, bank: PrototypeBank) -> float | None:
    """Mean cosine between ``mu_new`` and every general prototype; ``None`` if the bank is empty."""
    if not bank.general:
        return None
    protos, _ = bank.general_matrix()
    mu = np.asarray(mu_new, dtype=np.float64).reshape(1, -1)
    return float(np.mean(cosine_matrix(mu, protos)))
