"""Reference incremental learners on the shared expanded fused features.

Fine-tuning, LwF and EWC train a linear softmax head by full-batch gradient
descent; iCaRL keeps herded exemplars per (species, intensity) class and
classifies by nearest exemplar mean; the joint learner refits a ridge head on
everything seen so far and serves as an upper-bound reference.
"""

from __future__ import annotations

import numpy as np

from .fusion import N_CLASSES
from .hail import Features, fit_general
from .kernels import NumericError, RidgeConfig, log_softmax, one_hot, softmax
from .pipeline import IncrementalLearner


class TrainingDiverged(RuntimeError):
    pass


def ce_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray):
    """Mean cross-entropy of ``softmax(XW + b)`` and its gradients."""
    z = X @ W + b
    loss = float(-np.sum(Y * log_softmax(z, axis=1)) / len(X))
    g = (softmax(z, axis=1) - Y) / len(X)
    return loss, X.T @ g, g.sum(axis=0)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise ``KL(p || q)`` for probability rows."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


class SoftmaxHeadLearner(IncrementalLearner):
    """Linear softmax head trained on the current species only."""

    name = "finetune"

    def __init__(self, dim: int, steps: int = 300, lr: float = 0.5):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        self.W = np.zeros((dim, N_CLASSES))
        self.b = np.zeros(N_CLASSES)
        self.steps = steps
        self.lr = lr
        self.n_learned = 0

    def _grad(self, X, Y):
        return ce_grad(self.W, self.b, X, Y)

    def _step(self, gW, gb):
        self.W = self.W - self.lr * gW
        self.b = self.b - self.lr * gb

    def _before(self, X, Y):
        pass

    def _after(self, X, Y):
        pass

    def learn_species(self, feats: Features, labels, species_id: int, val=None):
        X = feats.av
        Y = one_hot(labels)
        self._before(X, Y)
        for step in range(self.steps):
            loss, gW, gb = self._grad(X, Y)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"{self.name}: non-finite loss at step {step}")
            self._step(gW, gb)
        self._after(X, Y)
        self.n_learned += 1

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W + self.b

    def predict(self, feats: Features, species=None) -> np.ndarray:
        return softmax(self.logits(feats.av), axis=1)

    def state_dict(self):
        return {"W": self.W, "b": self.b}


FineTuneLearner = SoftmaxHeadLearner


class LwFLearner(SoftmaxHeadLearner):
    """``lam * CE(new) + (1 - lam) * KL(old_T || new_T)`` with temperature-scaled softmax."""

    name = "lwf"

    def __init__(self, dim: int, lam: float = 0.5, temperature: float = 2.0, **kw):
        if not 0.0 <= lam <= 1.0:
            raise NumericError(f"LwF lambda must lie in [0, 1], got {lam}")
        if temperature <= 0:
            raise NumericError("temperature must be positive")
        super().__init__(dim, **kw)
        self.lam = lam
        self.T = temperature
        self._old_soft = None

    def _before(self, X, Y):
        self._old_soft = softmax(self.logits(X) / self.T, axis=1) if self.n_learned else None

    def distill_loss(self, X) -> float:
        if self._old_soft is None:
            return 0.0
        new_soft = softmax(self.logits(X) / self.T, axis=1)
        return float(np.mean(kl_divergence(self._old_soft, new_soft)))

    def _grad(self, X, Y):
        loss, gW, gb = ce_grad(self.W, self.b, X, Y)
        if self._old_soft is None:
            return loss, gW, gb
        new_soft = softmax(self.logits(X) / self.T, axis=1)
        g = (new_soft - self._old_soft) / (self.T * len(X))
        kl = float(np.mean(kl_divergence(self._old_soft, new_soft)))
        lam = self.lam
        return lam * loss + (1 - lam) * kl, lam * gW + (1 - lam) * (X.T @ g), lam * gb + (1 - lam) * g.sum(axis=0)


class EWCLearner(SoftmaxHeadLearner):
    """Cross-entropy plus a diagonal-Fisher quadratic anchor to the previous optimum.

    The quadratic term is applied as a proximal step, which is stable for any
    penalty strength (plain gradient steps diverge once ``lr*lam*F > 2``).
    """

    name = "ewc"

    def __init__(self, dim: int, lambda_ewc: float = 100.0, **kw):
        if lambda_ewc < 0:
            raise NumericError("lambda_ewc must be non-negative")
        super().__init__(dim, **kw)
        self.lambda_ewc = lambda_ewc
        self.theta_W = np.zeros_like(self.W)
        self.theta_b = np.zeros_like(self.b)
        self.fisher_W = np.zeros_like(self.W)
        self.fisher_b = np.zeros_like(self.b)

    def penalty(self) -> float:
        return float(0.5 * self.lambda_ewc * (
            np.sum(self.fisher_W * (self.W - self.theta_W) ** 2)
            + np.sum(self.fisher_b * (self.b - self.theta_b) ** 2)
        ))

    def _step(self, gW, gb):
        lr, lam = self.lr, self.lambda_ewc
        self.W = (self.W - lr * gW + lr * lam * self.fisher_W * self.theta_W) / (1.0 + lr * lam * self.fisher_W)
        self.b = (self.b - lr * gb + lr * lam * self.fisher_b * self.theta_b) / (1.0 + lr * lam * self.fisher_b)

    def _after(self, X, Y):
        # empirical diagonal Fisher: mean squared per-sample log-likelihood gradient
        r = softmax(self.logits(X), axis=1) - Y
        self.fisher_W = (X**2).T @ (r**2) / len(X)
        self.fisher_b = np.mean(r**2, axis=0)
        self.theta_W = self.W.copy()
        self.theta_b = self.b.copy()

    def state_dict(self):
        return {"W": self.W, "b": self.b, "theta_W": self.theta_W, "theta_b": self.theta_b,
                "fisher_W": self.fisher_W, "fisher_b": self.fisher_b}


def herding_select(X: np.ndarray, m: int) -> np.ndarray:
    """Indices of up to ``m`` rows picked greedily so their running mean tracks the mean of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    chosen: list[int] = []
    total = np.zeros_like(mu)
    available = np.ones(len(X), dtype=bool)
    for t in range(min(m, len(X))):
        cand = (total[None, :] + X) / (t + 1)
        dist = np.linalg.norm(mu[None, :] - cand, axis=1)
        dist[~available] = np.inf
        i = int(np.argmin(dist))
        chosen.append(i)
        available[i] = False
        total += X[i]
    return np.array(chosen, dtype=np.int64)


class ICaRLLearner(SoftmaxHeadLearner):
    """Herded exemplars per (species, intensity) and nearest-mean-of-exemplars prediction.

    A linear head is also trained on new data plus replayed exemplars; it is
    kept for reference, while :meth:`predict` uses the NME rule.
    """

    name = "icarl_nme"
    exemplar_free = False

    def __init__(self, dim: int, budget_per_class: int = 20, **kw):
        if budget_per_class < 1:
            raise NumericError("budget_per_class must be >= 1")
        super().__init__(dim, **kw)
        self.budget = budget_per_class
        self.exemplars: dict[tuple[int, int], np.ndarray] = {}

    @property
    def class_keys(self) -> list[tuple[int, int]]:
        return sorted(self.exemplars)

    @property
    def class_means(self) -> np.ndarray:
        return np.stack([self.exemplars[k].mean(axis=0) for k in self.class_keys])

    def set_budget(self, budget: int):
        """Shrink (or grow the cap of) every exemplar set; lowest herding ranks are kept."""
        self.budget = budget
        for k in self.exemplars:
            self.exemplars[k] = self.exemplars[k][:budget]

    def learn_species(self, feats: Features, labels, species_id: int, val=None):
        X = feats.av
        labels = np.asarray(labels, dtype=np.int64)
        if self.exemplars:
            keys = self.class_keys
            replay_X = np.vstack([self.exemplars[k] for k in keys])
            replay_y = np.concatenate([np.full(len(self.exemplars[k]), k[1]) for k in keys])
            train = Features(np.vstack([X, replay_X]), np.empty((0, 0)), np.empty((0, 0)))
            super().learn_species(train, np.concatenate([labels, replay_y]), species_id)
        else:
            super().learn_species(feats, labels, species_id)
        for i in range(N_CLASSES):
            rows = X[labels == i]
            if len(rows):
                self.exemplars[(species_id, i)] = rows[herding_select(rows, self.budget)].copy()

    def predict(self, feats: Features, species=None) -> np.ndarray:
        if not self.exemplars:
            raise NumericError("no classes registered")
        X = feats.av
        means = self.class_means
        d = np.sqrt(np.maximum(
            np.sum(X**2, axis=1)[:, None] - 2 * X @ means.T + np.sum(means**2, axis=1)[None, :], 0.0))
        intens = np.array([k[1] for k in self.class_keys])
        scores = np.full((len(X), N_CLASSES), -np.inf)
        for i in range(N_CLASSES):
            cols = intens == i
            if cols.any():
                scores[:, i] = -d[:, cols].min(axis=1)
        return softmax(scores, axis=1)

    def nearest_class(self, feats: Features) -> list[tuple[int, int]]:
        means = self.class_means
        d = np.linalg.norm(feats.av[:, None, :] - means[None], axis=2)
        return [self.class_keys[j] for j in np.argmin(d, axis=1)]

    def state_dict(self):
        out = {"W": self.W, "b": self.b}
        for (k, i), rows in self.exemplars.items():
            out[f"exemplars_{k}_{i}"] = rows
        return out


class JointLearner(IncrementalLearner):
    """Ridge head refit on all data seen so far (non-incremental reference).

    It sees the same expanded fused, audio and visual features that HAIL
    uses, concatenated into one design matrix.
    """

    name = "joint_upper"
    exemplar_free = False

    def __init__(self, eta: float = 1.0):
        self.cfg = RidgeConfig(eta)
        self.X: list[np.ndarray] = []
        self.y: list[np.ndarray] = []
        self.W = None

    @staticmethod
    def design(feats: Features) -> np.ndarray:
        return np.hstack([feats.av, feats.a, feats.v])

    def learn_species(self, feats: Features, labels, species_id: int, val=None):
        self.X.append(self.design(feats))
        self.y.append(np.asarray(labels, dtype=np.int64))
        self.W = fit_general(np.vstack(self.X), one_hot(np.concatenate(self.y)), self.cfg)

    def predict(self, feats: Features, species=None) -> np.ndarray:
        return softmax(self.design(feats) @ self.W, axis=1)

    def state_dict(self):
        return {"W": self.W, "X": np.vstack(self.X), "y": np.concatenate(self.y)}


def joint_upper_bound(all_stage_data, eta: float = 1.0) -> JointLearner:
    """Single ridge fit over ``[(features, labels), ...]`` from every species."""
    learner = JointLearner(eta)
    feats = Features.concat([f for f, _ in all_stage_data])
    y = np.concatenate([np.asarray(l) for _, l in all_stage_data])
    learner.learn_species(feats, y, 0)
    return learner
