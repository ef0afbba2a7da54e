"""Prototype memory in isolation: clustering, replay weight and the EMA update.

Run from the repository root:  python3 demos/02_prototype_memory.py
"""

import numpy as np

from avcil.hail import build_augmented, lambda_from_similarity
from avcil.kernels import make_rng, one_hot
from avcil.prototypes import PrototypeBank, build_general, ema_update, similarity_to_bank

rng = make_rng(0)

# two species share intensity structure but sit in different places
old = np.abs(rng.normal(size=(200, 8))) + np.repeat(np.eye(4, 8) * 3, 50, axis=0)
labels = np.repeat(np.arange(4), 50)
new = old + 0.5 * rng.normal(size=old.shape)

bank = PrototypeBank(m=5, alpha=0.7, general=build_general(old, labels, m=5, seed=0))
print("prototypes per intensity:", {i: p.shape for i, p in bank.general.items()})

sim = similarity_to_bank(new.mean(axis=0), bank)
print(f"cosine(new mean, bank mean) = {sim:.3f} -> replay weight {lambda_from_similarity(sim):.3f}")

# replayed rows are appended under the new species' data
aug = build_augmented(new, one_hot(labels), bank)
print("augmented design:", aug.features.shape, "of which replayed:", aug.features.shape[0] - len(new))

before = {i: p.copy() for i, p in bank.general.items()}
ema_update(bank, new, labels, seed=1)
drift = max(np.abs(bank.general[i] - before[i]).max() for i in before)
print(f"largest prototype move after EMA: {drift:.3f}")

# a weight of 0.7 keeps 70% of the old prototype, exactly
tiny = PrototypeBank(m=1, alpha=0.7, general={0: np.array([[1.0, 0.0]])})
ema_update(tiny, np.array([[0.0, 1.0]]), [0])
print("EMA of [1, 0] toward [0, 1]:", tiny.general[0].tolist())
