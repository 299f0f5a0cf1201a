"""Train the learned quality metric on frozen embeddings and score with it.

Uses the deterministic hash-based embedding provider, so the whole demo is
reproducible bit-for-bit. Shows the reference-based single-task model, the
reference-free (QE) model's invariance to the reference text, the
multi-task model's uniform head averaging, and checkpoint round-tripping.

Run: python demos/02_train_and_score.py
"""
import tempfile
from pathlib import Path

import numpy as np

from mtevalkit.corpus import LanguagePair, TranslationTriple
from mtevalkit.embeddings import DeterministicTestProvider
from mtevalkit.estimator import (
    EstimatorModel,
    TrainConfig,
    dataset_mse,
    grad_check,
    load_model,
    prepare_features,
    save_model,
    train,
)

rng = np.random.default_rng(0)
provider = DeterministicTestProvider(dim=16, identity="demo-encoder-v1")
lp = LanguagePair("eng", "hau")


def random_words(k):
    return " ".join(f"w{rng.integers(0, 200)}" for _ in range(k))


# ----------------------------------------------------------------- dataset
print("== synthetic training data ==")
triples = [
    TranslationTriple(f"t{i:04d}", lp, random_words(6), random_words(6), random_words(6))
    for i in range(600)
]
# ground truth: a fixed linear judge over the model's own feature space,
# squashed to [0, 1] like min-max-scaled human scores
probe = EstimatorModel("stl_ref", dim=16, hidden=(32, 16), seed=0)
features, _ = prepare_features(probe, provider, [(t, 0.5) for t in triples])
judge = rng.normal(size=features["src_mt_ref"].shape[1])
judge /= np.linalg.norm(judge)
targets = 1.0 / (1.0 + np.exp(-4.0 * features["src_mt_ref"] @ judge))
examples = [(t, float(y)) for t, y in zip(triples, targets)]
train_set, val_set = examples[:500], examples[500:]
print(f"{len(train_set)} train / {len(val_set)} validation examples")

# ----------------------------------------------------------------- training
print("\n== gradient sanity, then training ==")
model = EstimatorModel("stl_ref", dim=16, hidden=(32, 16), seed=0)
err = grad_check(model, provider, train_set[:4], epsilon=1e-5)
print(f"analytic vs finite-difference gradient, max relative error: {err:.2e}")

config = TrainConfig(batch_size=16, grad_accumulation=2, learning_rate=0.5, epochs=20, rng_seed=0)
initial = dataset_mse(model, provider, train_set)
model, history = train(model, provider, train_set, config, val_set)
print(f"train MSE: {initial:.4f} -> {history[-1].train_mse:.4f}")
best = max(h.val_spearman for h in history if h.val_spearman is not None)
print(f"best validation Spearman: {best:.3f}")

# ----------------------------------------------------------------- scoring
print("\n== scoring ==")
example = triples[0]
result = model.score_triple(provider, example)
print(f"{example.segment_id}: score {result.final:.4f} (target {targets[0]:.4f})")

# ----------------------------------------------------------- reference-free mode
print("\n== reference-free (QE) model ==")
qe_model = EstimatorModel("stl_qe", dim=16, hidden=(32, 16), seed=0)
qe_model, _ = train(qe_model, provider, train_set, config, val_set)
a = qe_model.score(provider, example.src, example.mt, "completely unrelated reference")
b = qe_model.score(provider, example.src, example.mt, None)
print(f"score with a bogus reference: {a.final:.6f}")
print(f"score with no reference:      {b.final:.6f}")
assert a.final == b.final, "QE scores must ignore the reference bit-for-bit"
print("identical: the reference never enters the computation")

# ----------------------------------------------------------------- multi-task
print("\n== multi-task model ==")
mtl = EstimatorModel("mtl", dim=16, hidden=(32, 16), seed=1)
full = mtl.score_triple(provider, example)
print("head scores:", {k: round(v, 4) for k, v in full.heads.items()})
print(f"final = uniform mean = {full.final:.4f}")
qe_view = mtl.score(provider, example.src, example.mt, qe=True)
print(f"same model, QE inference -> only the <src, mt> head: {qe_view.final:.4f}")

# ----------------------------------------------------------------- checkpoints
print("\n== checkpoint round trip ==")
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.bin"
    save_model(model, path)
    loaded = load_model(path)
    again = loaded.score_triple(provider, example)
    print(f"size on disk: {path.stat().st_size} bytes")
    assert again.final == result.final
    print("reloaded model scores bit-identically")
