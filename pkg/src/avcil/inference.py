"""Hierarchical prediction: general head + species heads with modality balancing.

The modality weights are per class: for species ``k`` and class ``i``,
``beta_a[i] = sigmoid(w[k, i] . [F_a; F_v])`` scales the audio head's class-``i``
logit and ``1 - beta_a[i]`` the visual head's.  Species identity at test
time comes either from the nearest species prototype or from an oracle label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import N_CLASSES, FeaturePair, FusionParams
from .hail import Features, HailModel, extract_features
from .kernels import NumericError, cosine_matrix, log_softmax, one_hot, sigmoid, softmax
from .prototypes import PrototypeBank


@dataclass(frozen=True)
class GammaSchedule:
    gamma_max: float = 0.8
    gamma_min: float = 0.3
    K: int = 5

    def __post_init__(self):
        if not 0.0 <= self.gamma_min <= self.gamma_max <= 1.0:
            raise NumericError("need 0 <= gamma_min <= gamma_max <= 1")
        if self.K < 1:
            raise NumericError("K must be >= 1")


def gamma_at(sched: GammaSchedule, k: int) -> float:
    """Linear decay from ``gamma_max`` at stage 0 to ``gamma_min`` at stage ``K``."""
    if not 0 <= k <= sched.K:
        raise NumericError(f"stage {k} outside [0, {sched.K}]")
    if k == sched.K:
        return sched.gamma_min
    # monotone in k for any floats; the clamp guards the last rounding step
    step = (sched.gamma_max - sched.gamma_min) * (k / sched.K)
    return max(sched.gamma_min, sched.gamma_max - step)


@dataclass
class ModalityBalancer:
    w: dict[int, np.ndarray] = field(default_factory=dict)  # species -> (4, d_a + d_v)
    default_beta: float = 0.5


def beta_weights(F_a, F_v, balancer: ModalityBalancer, species: int, strict: bool = False):
    """Audio/visual class weights for one species; batched if ``F_a`` is 2-D."""
    F_a = np.asarray(F_a, dtype=np.float64)
    F_v = np.asarray(F_v, dtype=np.float64)
    x = np.concatenate([F_a, F_v], axis=-1)
    if species not in balancer.w:
        if strict:
            raise NumericError(f"no balancer weights for species {species}")
        beta_a = np.full(x.shape[:-1] + (N_CLASSES,), balancer.default_beta)
    else:
        w = balancer.w[species]
        if w.shape[1] != x.shape[-1]:
            raise NumericError(f"balancer expects {w.shape[1]} features, got {x.shape[-1]}")
        beta_a = sigmoid(x @ w.T)
    return beta_a, 1.0 - beta_a


class NoSpeciesError(NumericError):
    pass


def route_species(F_a, F_v, bank: PrototypeBank) -> np.ndarray | int:
    """Species whose prototypes are most similar to the query.

    Per species, the score is the mean of the best audio-prototype cosine and
    the best visual-prototype cosine.  Ties go to the lowest species id.
    """
    if not bank.species:
        raise NoSpeciesError("species prototype bank is empty")
    F_a = np.asarray(F_a, dtype=np.float64)
    F_v = np.asarray(F_v, dtype=np.float64)
    single = F_a.ndim == 1
    F_a, F_v = np.atleast_2d(F_a), np.atleast_2d(F_v)
    ids = sorted(bank.species)
    scores = np.empty((F_a.shape[0], len(ids)))
    for col, k in enumerate(ids):
        pa, pv = bank.species_matrices(k)
        scores[:, col] = 0.5 * (cosine_matrix(F_a, pa).max(axis=1) + cosine_matrix(F_v, pv).max(axis=1))
    routed = np.asarray(ids)[np.argmax(scores, axis=1)]
    return int(routed[0]) if single else routed


@dataclass
class Prediction:
    probs: np.ndarray
    predicted_intensity: int
    routed_species: int
    gamma_used: float
    beta_a: np.ndarray


def species_logits(model: HailModel, feats: Features, species: int):
    """Audio and visual head logits ``(y_a, y_v)`` for one species, each (n, 4)."""
    head = model.species_heads[species]
    return feats.a @ head.W_a, feats.v @ head.W_v


def _modality_beta(model: HailModel, feats: Features, species: int):
    if model.modality == "audio":
        return np.ones((feats.n, N_CLASSES))
    if model.modality == "visual":
        return np.zeros((feats.n, N_CLASSES))
    return beta_weights(feats.a, feats.v, model.balancer, species)[0]


def predict_features(model: HailModel, bank: PrototypeBank, feats: Features, stage: int,
                     routing: str = "prototype", species=None):
    """Batched prediction on precomputed features.

    Returns ``(probs (n,4), routed (n,), gamma, beta_a (n,4))``.
    """
    if not model.species_heads:
        raise NumericError("model has no species learned")
    if routing == "oracle":
        if species is None:
            raise NumericError("oracle routing needs species ids")
        routed = np.broadcast_to(np.asarray(species, dtype=np.int64), (feats.n,)).copy()
    elif routing == "prototype":
        routed = np.atleast_1d(route_species(feats.a, feats.v, bank))
    else:
        raise NumericError(f"unknown routing mode {routing!r}")
    gamma = gamma_at(model.gamma, stage)
    y_av = feats.av @ model.W_av
    y_sp = np.zeros_like(y_av)
    beta_a = np.zeros_like(y_av)
    for k in np.unique(routed):
        rows = routed == k
        sub = feats.take(rows)
        ya, yv = species_logits(model, sub, int(k))
        b = _modality_beta(model, sub, int(k))
        beta_a[rows] = b
        y_sp[rows] = b * ya + (1.0 - b) * yv
    probs = softmax(gamma * y_av + (1.0 - gamma) * y_sp, axis=1)
    return probs, routed, gamma, beta_a


def predict(model: HailModel, bank: PrototypeBank, sample: FeaturePair, fusion: FusionParams,
            stage: int, routing: str = "prototype", species_id: int | None = None) -> Prediction:
    feats = extract_features(fusion, model, sample.audio[None], sample.visual[None])
    probs, routed, gamma, beta_a = predict_features(
        model, bank, feats, stage, routing, None if species_id is None else [species_id]
    )
    return Prediction(probs[0], int(np.argmax(probs[0])), int(routed[0]), gamma, beta_a[0])


def balancer_loss_and_grad(w: np.ndarray, X: np.ndarray, ya: np.ndarray, yv: np.ndarray, labels):
    """Cross-entropy of ``softmax(beta*ya + (1-beta)*yv)`` and its gradient in ``w`` (4, D)."""
    Y = one_hot(labels, N_CLASSES)
    n = X.shape[0]
    beta = sigmoid(X @ w.T)
    s = beta * ya + (1.0 - beta) * yv
    loss = float(-np.sum(Y * log_softmax(s, axis=1)) / n)
    ds = (softmax(s, axis=1) - Y) / n
    dt = ds * (ya - yv) * beta * (1.0 - beta)
    return loss, dt.T @ X


def train_balancer(balancer: ModalityBalancer, species: int, feats: Features, labels,
                   model: HailModel, steps: int = 200, lr: float = 0.5) -> ModalityBalancer:
    """Full-batch gradient descent on the species-head cross-entropy; updates ``balancer.w[species]``."""
    if species not in model.species_heads:
        raise NumericError(f"species {species} has no fitted heads")
    ya, yv = species_logits(model, feats, species)
    X = np.concatenate([feats.a, feats.v], axis=1)
    w = balancer.w.get(species)
    w = np.zeros((N_CLASSES, X.shape[1])) if w is None else w.copy()
    for step in range(steps):
        loss, g = balancer_loss_and_grad(w, X, ya, yv, labels)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite balancer loss at step {step}")
        w = w - lr * g
    balancer.w[species] = w
    return balancer
