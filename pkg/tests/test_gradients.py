"""Finite-difference validation of every analytic gradient in the model."""

import numpy as np

from ctikit.annotate import LabelSchema
from ctikit.embed import EmbedderConfig
from ctikit.model.network import SequenceModel

SCHEMA_K3 = LabelSchema(entity_types=("X",))  # O, B-X, I-X -> K = 3


def small_model(use_crf: bool = True, seed: int = 0) -> SequenceModel:
    config = EmbedderConfig(backend="hashed", dim=3, vocab_buckets=7, seed=seed)
    return SequenceModel.create(
        config, SCHEMA_K3, hidden_size=2, seed=seed, use_crf=use_crf
    )


BATCH = [
    (("apt41", "breached", "the", "network"), (1, 2, 0, 0)),
    (("files", "from", "10.0.0.1"), (0, 0, 1)),
]


def batch_loss(model: SequenceModel, batch) -> float:
    return sum(model.sequence_nll(t, list(l)) for t, l in batch) / len(batch)


def numerical_gradients(model: SequenceModel, batch, eps: float = 1e-4):
    grads = {}
    for name, arr in model.params().items():
        mask = model.trainable_mask(name)
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            if mask is not None and mask[idx]:
                continue
            original = arr[idx]
            arr[idx] = original + eps
            up = batch_loss(model, batch)
            arr[idx] = original - eps
            down = batch_loss(model, batch)
            arr[idx] = original
            g[idx] = (up - down) / (2.0 * eps)
        grads[name] = g
    return grads


def assert_gradients_close(analytic, numerical, rel=1e-3, floor=1e-6):
    worst = ("", 0.0)
    for name in numerical:
        a, f = analytic[name], numerical[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        err = np.abs(a - f) / denom
        peak = float(err.max()) if err.size else 0.0
        if peak > worst[1]:
            worst = (name, peak)
        assert np.all(np.abs(a - f) <= np.maximum(rel * np.maximum(np.abs(a), np.abs(f)), floor)), (
            f"{name}: max relative error {peak:.3e}"
        )
    return worst


class TestFullModelGradients:
    def test_crf_model_every_parameter(self):
        model = small_model(use_crf=True)
        _, analytic = model.loss_and_grads(BATCH)
        numerical = numerical_gradients(model, BATCH)
        assert set(numerical) == set(analytic)
        assert_gradients_close(analytic, numerical)

    def test_softmax_baseline_every_parameter(self):
        model = small_model(use_crf=False)
        _, analytic = model.loss_and_grads(BATCH)
        numerical = numerical_gradients(model, BATCH)
        assert_gradients_close(analytic, numerical)

    def test_gradients_after_some_training_steps(self):
        # re-check at a non-initial point in parameter space
        model = small_model(use_crf=True, seed=3)
        for _ in range(5):
            _, grads = model.loss_and_grads(BATCH)
            for name, arr in model.params().items():
                mask = model.trainable_mask(name)
                g = grads[name]
                if mask is not None:
                    g = g.copy()
                    g[mask] = 0.0
                arr -= 0.05 * g
        _, analytic = model.loss_and_grads(BATCH)
        numerical = numerical_gradients(model, BATCH)
        assert_gradients_close(analytic, numerical)


class TestSparseEmbeddingUpdates:
    def test_only_touched_rows_receive_gradient(self):
        model = small_model()
        tokens = ("apt41", "breached")
        _, grads = model.loss_and_grads([(tokens, (1, 0))])
        touched = set(int(i) for i in model.embedder.row_indices(tokens))
        g = grads["embed.table"]
        for row in range(g.shape[0]):
            if row in touched:
                assert np.any(g[row] != 0.0)
            else:
                assert np.all(g[row] == 0.0)

    def test_collision_rows_accumulate(self):
        # "a" and "i" share bucket 4 when vocab_buckets=8 (pinned pair)
        config = EmbedderConfig(backend="hashed", dim=3, vocab_buckets=8, seed=0)
        model = SequenceModel.create(config, SCHEMA_K3, hidden_size=2, seed=0)
        _, grads = model.loss_and_grads([(("a", "i"), (1, 0))])
        nonzero_rows = {int(r) for r in np.nonzero(np.any(grads["embed.table"] != 0, axis=1))[0]}
        assert nonzero_rows == {4}


def test_emission_grad_rows_sum_to_zero_through_network():
    model = small_model()
    em, _ = model.emissions(BATCH[0][0])
    from ctikit.model.crf import nll_gradients

    _, d_em, _ = nll_gradients(em, model.transitions, list(BATCH[0][1]))
    np.testing.assert_allclose(d_em.sum(axis=1), 0.0, atol=1e-10)


def test_table_rows_unchanged_after_optimizer_step():
    """Sparse-update invariant: one step only moves rows the batch touched."""
    from ctikit.model.training import Adam

    model = small_model()
    before = model.embedder.table.copy()
    tokens = ("apt41", "breached")
    touched = set(int(i) for i in model.embedder.row_indices(tokens))
    _, grads = model.loss_and_grads([(tokens, (1, 0))])
    params = model.params()
    for name in grads:
        mask = model.trainable_mask(name)
        if mask is not None:
            grads[name][mask] = 0.0
    Adam(lr=0.1).step(params, grads)
    after = model.embedder.table
    for row in range(after.shape[0]):
        if row in touched:
            assert np.any(after[row] != before[row])
        else:
            np.testing.assert_array_equal(after[row], before[row])
