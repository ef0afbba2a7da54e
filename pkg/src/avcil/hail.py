"""Feature expansion and closed-form (ridge) classifiers with prototype replay.

The general-intensity head is refit at every stage on the new species'
expanded features stacked with the bank's general prototypes, scaled by a
similarity weight ``lambda_p``.  Species heads are fit once per species on
that species' audio and visual features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .fusion import N_CLASSES, FusionParams, fuse_batch
from .kernels import NumericError, RidgeConfig, as_matrix, make_rng, relu, ridge_solve

if TYPE_CHECKING:
    from .inference import GammaSchedule, ModalityBalancer
    from .prototypes import PrototypeBank

LAMBDA_P_FLOOR = 0.2


@dataclass(frozen=True)
class ExpansionMap:
    """Fixed random projection ``W_up`` (d x d_up), drawn once from ``seed``.

    Entries are uniform in ``[-scale, scale]``; the default scale is
    ``1/sqrt(d)``.  Only ``(d_in, d_out, seed, scale)`` need to be stored: the
    matrix is regenerated bit-identically from them.
    """

    d_in: int
    d_out: int
    seed: int
    scale: float
    W_up: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def create(cls, d_in: int, d_out: int | None = None, seed: int = 0, ratio: int = 10,
               scale: float | None = None) -> "ExpansionMap":
        d_out = d_in * ratio if d_out is None else d_out
        if d_out < d_in:
            raise NumericError(f"expansion must not shrink: {d_in} -> {d_out}")
        scale = 1.0 / np.sqrt(d_in) if scale is None else float(scale)
        if scale <= 0:
            raise NumericError("expansion scale must be positive")
        W = make_rng(seed).uniform(-scale, scale, size=(d_in, d_out))
        return cls(d_in, d_out, int(seed), scale, W)


def expand(f, emap: ExpansionMap) -> np.ndarray:
    """``ReLU(f @ W_up)`` for a vector or a batch of row vectors."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != emap.d_in:
        raise NumericError(f"expected input dim {emap.d_in}, got {f.shape[-1]}")
    return relu(f @ emap.W_up)


def _check_onehot(Y: np.ndarray):
    if Y.shape[1] != N_CLASSES or not np.all((Y == 0) | (Y == 1)) or not np.all(Y.sum(axis=1) == 1):
        raise NumericError("labels must be one-hot over the 4 intensity classes")


def fit_general(F_av, Y, cfg: RidgeConfig = RidgeConfig()) -> np.ndarray:
    F_av = as_matrix(F_av, "F_av")
    Y = as_matrix(Y, "Y")
    if F_av.shape[0] < 1:
        raise NumericError("need at least one sample")
    _check_onehot(Y)
    return ridge_solve(F_av, Y, cfg)


def fit_species(F_a, F_v, Y, cfg: RidgeConfig = RidgeConfig()) -> tuple[np.ndarray, np.ndarray]:
    return fit_general(F_a, Y, cfg), fit_general(F_v, Y, cfg)


@dataclass
class AugmentedBatch:
    features: np.ndarray
    labels: np.ndarray
    lambda_p: float


def lambda_from_similarity(similarity: float | None) -> float:
    """Replay weight: ``max(0.2, similarity)`` capped at 1; no bank means 1."""
    if similarity is None:
        return 1.0
    return float(min(1.0, max(LAMBDA_P_FLOOR, similarity)))


def build_augmented(F_k, Y_k, bank: "PrototypeBank | None") -> AugmentedBatch:
    F_k = as_matrix(F_k, "F_k")
    Y_k = as_matrix(Y_k, "Y_k")
    if F_k.shape[0] != Y_k.shape[0]:
        raise NumericError(f"{F_k.shape[0]} feature rows vs {Y_k.shape[0]} label rows")
    if bank is None or not bank.general:
        return AugmentedBatch(F_k, Y_k, 1.0)
    from .prototypes import similarity_to_bank

    protos, proto_labels = bank.general_matrix()
    if protos.shape[1] != F_k.shape[1]:
        raise NumericError(f"prototype dim {protos.shape[1]} != feature dim {F_k.shape[1]}")
    lam = lambda_from_similarity(similarity_to_bank(F_k.mean(axis=0), bank))
    Y_p = np.zeros((len(proto_labels), Y_k.shape[1]))
    Y_p[np.arange(len(proto_labels)), proto_labels] = 1.0
    return AugmentedBatch(np.vstack([F_k, lam * protos]), np.vstack([Y_k, Y_p]), lam)


MODALITIES = ("av", "audio", "visual")


@dataclass
class Features:
    """Expanded fused (``av``), audio (``a``) and visual (``v``) features, one row per sample."""

    av: np.ndarray
    a: np.ndarray
    v: np.ndarray

    @property
    def n(self) -> int:
        return self.av.shape[0]

    def take(self, rows) -> "Features":
        return Features(self.av[rows], self.a[rows], self.v[rows])

    @classmethod
    def concat(cls, parts) -> "Features":
        parts = list(parts)
        return cls(*(np.vstack([getattr(p, k) for p in parts]) for k in ("av", "a", "v")))


def mask_modality(audio: np.ndarray, visual: np.ndarray, modality: str):
    """Zero the missing modality for single-modality configurations."""
    if modality == "audio":
        visual = np.zeros_like(visual)
    elif modality == "visual":
        audio = np.zeros_like(audio)
    return audio, visual


def extract_features(fusion: FusionParams, model: "HailModel", audio, visual) -> Features:
    """Fuse, then expand the fused vector and the two per-modality projection branches."""
    audio, visual = mask_modality(np.asarray(audio, float), np.asarray(visual, float), model.modality)
    out = fuse_batch(audio, visual, fusion)
    return Features(
        expand(out.fused, model.expansion_av),
        expand(out.branch_audio, model.expansion_a),
        expand(out.branch_visual, model.expansion_v),
    )


@dataclass
class SpeciesHead:
    W_a: np.ndarray
    W_v: np.ndarray


@dataclass
class HailModel:
    expansion_av: ExpansionMap
    expansion_a: ExpansionMap
    expansion_v: ExpansionMap
    gamma: "GammaSchedule"
    balancer: "ModalityBalancer"
    ridge: RidgeConfig = field(default_factory=RidgeConfig)
    modality: str = "av"
    W_av: np.ndarray | None = None
    species_heads: dict[int, SpeciesHead] = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise NumericError(f"modality must be one of {MODALITIES}")

    @property
    def initialized(self) -> bool:
        return self.W_av is not None


def incremental_update(model: HailModel, F_k, Y_k, bank: "PrototypeBank | None") -> np.ndarray:
    """Refit the general head on new data plus replayed prototypes; stores and returns it."""
    if not model.initialized:
        raise NumericError("incremental_update needs a model whose first species is fitted")
    aug = build_augmented(F_k, Y_k, bank)
    model.W_av = ridge_solve(aug.features, aug.labels, model.ridge)
    return model.W_av
