"""Frozen feature extractor and the hierarchical analytic learner built on it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import N_CLASSES, FusionParams, train_fusion
from .hail import (
    ExpansionMap,
    Features,
    HailModel,
    SpeciesHead,
    extract_features,
    fit_general,
    fit_species,
    incremental_update,
    lambda_from_similarity,
    mask_modality,
)
from .inference import GammaSchedule, ModalityBalancer, predict_features, train_balancer
from .kernels import RidgeConfig, make_rng, one_hot
from .prototypes import PrototypeBank, build_general, build_species, ema_update, similarity_to_bank
from .synth import Split


@dataclass(frozen=True)
class HailConfig:
    eta: float = 1.0
    m: int = 5
    alpha: float = 0.7
    gamma_max: float = 0.8
    gamma_min: float = 0.3
    expansion_ratio: int = 10
    lambda_sim: float = 0.1
    routing: str = "prototype"
    modality: str = "av"
    use_prototypes: bool = True
    fusion_steps: int = 300
    fusion_lr: float = 0.5
    fusion_batch: int = 64
    balancer_steps: int = 200
    balancer_lr: float = 0.5


class FeatureExtractor:
    """Fusion parameters and expansion maps, trained on the first stage then frozen."""

    def __init__(self, d: int, cfg: HailConfig = HailConfig(), seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        rng = make_rng(seed)
        seeds = rng.integers(2**62, size=4)
        self.fusion = FusionParams.random(d, int(seeds[0]))
        d_up = d * cfg.expansion_ratio
        self.maps = {
            "av": ExpansionMap.create(d, d_up, seed=int(seeds[1])),
            "a": ExpansionMap.create(d, d_up, seed=int(seeds[2])),
            "v": ExpansionMap.create(d, d_up, seed=int(seeds[3])),
        }
        self.loss_trace: list[float] = []

    def _shell(self) -> HailModel:
        return HailModel(
            self.maps["av"], self.maps["a"], self.maps["v"],
            GammaSchedule(), ModalityBalancer(), modality=self.cfg.modality,
        )

    def fit(self, split: Split) -> "FeatureExtractor":
        audio, visual = mask_modality(split.audio, split.visual, self.cfg.modality)
        masked = Split(audio, visual, split.labels, split.species_id)
        head = make_rng(self.seed + 1).normal(0.0, 0.1, size=(self.fusion.d, N_CLASSES))
        self.fusion, _, self.loss_trace = train_fusion(
            masked, self.fusion, head, self.cfg.fusion_steps, self.cfg.fusion_lr,
            lambda_sim=self.cfg.lambda_sim, batch_size=self.cfg.fusion_batch, seed=self.seed,
        )
        return self

    def transform(self, split: Split) -> Features:
        return extract_features(self.fusion, self._shell(), split.audio, split.visual)


class IncrementalLearner:
    """Shared contract: learn one species at a time, predict intensity probabilities."""

    name = "base"
    exemplar_free = True

    def learn_species(self, feats: Features, labels, species_id: int, val=None):
        raise NotImplementedError

    def predict(self, feats: Features, species=None) -> np.ndarray:
        raise NotImplementedError

    def state_dict(self) -> dict[str, np.ndarray]:
        """Arrays retained between stages (what a checkpoint must hold)."""
        raise NotImplementedError

    def storage_footprint(self) -> int:
        return int(sum(np.asarray(v).nbytes for v in self.state_dict().values()))


class HailLearner(IncrementalLearner):
    """General ridge head with prototype replay, per-species modality heads, balancing."""

    name = "hail"

    def __init__(self, extractor: FeatureExtractor, cfg: HailConfig = HailConfig(), n_stages: int = 6,
                 seed: int = 0):
        self.cfg = cfg
        self.extractor = extractor
        self.seed = seed
        self.model = HailModel(
            extractor.maps["av"], extractor.maps["a"], extractor.maps["v"],
            GammaSchedule(cfg.gamma_max, cfg.gamma_min, max(1, n_stages - 1)),
            ModalityBalancer(), RidgeConfig(cfg.eta), modality=cfg.modality,
        )
        self.bank = PrototypeBank(m=cfg.m, alpha=cfg.alpha)
        self.stage = -1
        self.lambda_trace: list[float] = []

    def learn_species(self, feats: Features, labels, species_id: int, val=None):
        labels = np.asarray(labels, dtype=np.int64)
        Y = one_hot(labels)
        cfg, seed = self.cfg, self.seed + 7919 * (species_id + 1)
        if not self.model.initialized:
            self.model.W_av = fit_general(feats.av, Y, self.model.ridge)
            self.bank.general = build_general(feats.av, labels, cfg.m, seed)
        elif cfg.use_prototypes:
            sim = similarity_to_bank(feats.av.mean(axis=0), self.bank)
            self.lambda_trace.append(lambda_from_similarity(sim))
            incremental_update(self.model, feats.av, Y, self.bank)
            ema_update(self.bank, feats.av, labels, seed)
        else:
            incremental_update(self.model, feats.av, Y, None)
        W_a, W_v = fit_species(feats.a, feats.v, Y, self.model.ridge)
        self.model.species_heads[species_id] = SpeciesHead(W_a, W_v)
        self.bank.species[species_id] = build_species(feats.a, feats.v, labels, species_id, cfg.m, seed)
        bal_feats, bal_labels = (feats, labels) if val is None else val
        if cfg.modality == "av" and cfg.balancer_steps > 0:
            train_balancer(self.model.balancer, species_id, bal_feats, bal_labels, self.model,
                           cfg.balancer_steps, cfg.balancer_lr)
        self.stage += 1

    def predict(self, feats: Features, species=None) -> np.ndarray:
        probs, *_ = predict_features(self.model, self.bank, feats, self.stage, self.cfg.routing, species)
        return probs

    def state_dict(self) -> dict[str, np.ndarray]:
        from .storage import hail_state

        return hail_state(self)
