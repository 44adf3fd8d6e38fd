import dataclasses
import itertools

import numpy as np
import pytest

from sharedenc.config import DataConfig, TrainConfig
from sharedenc.data import generate_dataset
from sharedenc.encoder import ModelConfig
from sharedenc.errors import ConfigError, DivergenceError, InputError
from sharedenc.train import I2T, T2I, build_model, evaluate_retrieval, recall_at_k, train

from helpers import recall_brute_force


def tiny_config(**kw):
    model = ModelConfig(d=16, n_heads=2, layers_shared=1, identifier="vector")
    base = dict(steps=3, batch_size=8, model=model, data=DataConfig(size=40))
    base.update(kw)
    return TrainConfig(**base)


def test_zero_steps_returns_initialisation():
    cfg = tiny_config(steps=0)
    result = train(cfg)
    fresh = build_model(cfg)
    assert result.loss_trace == []
    for name, p in fresh.params.items():
        assert result.model.params[name].data.tobytes() == p.data.tobytes()


def test_trace_length_matches_steps():
    assert len(train(tiny_config(steps=7)).loss_trace) == 7


def test_batch_size_one_is_rejected():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)


def test_nan_loss_aborts_with_step():
    cfg = tiny_config(steps=5)
    model = build_model(cfg)
    model.params["proj"].data[...] = np.nan
    with pytest.raises(DivergenceError) as info:
        train(cfg, model=model)
    assert info.value.step == 0


def test_checkpoint_written_when_path_given(tmp_path):
    cfg = tiny_config(checkpoint_path=str(tmp_path / "final.ckpt"))
    train(cfg)
    assert (tmp_path / "final.ckpt").stat().st_size > 0


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_training_lowers_loss(seed):
    cfg = TrainConfig(steps=300, batch_size=64, seed=seed,
                      model=ModelConfig(d=32, n_heads=2, layers_shared=2, identifier="vector"),
                      data=DataConfig(size=640, seed=seed))
    data = generate_dataset(640, seed)
    assert len(data.splits["train"]) == 512
    trace = train(cfg, data).loss_trace
    assert np.mean(trace[-10:]) < np.mean(trace[:10])
    assert trace[-1] < trace[0]


def test_untrained_recall_is_near_chance():
    data = generate_dataset(2560, 0)
    model = build_model(TrainConfig(model=ModelConfig(d=32, n_heads=2, layers_shared=2)))
    i2t, t2i = evaluate_retrieval(model, data, "test", (1, 5, 10))
    assert i2t.n_queries == t2i.n_queries == 256
    for rep in (i2t, t2i):
        assert 0 <= rep.recall[1] <= 5 / 256


def test_report_directions_and_monotonicity():
    cfg = tiny_config(steps=5)
    data = generate_dataset(40, 0)
    i2t, t2i = evaluate_retrieval(train(cfg, data).model, data, "train", (1, 2, 5, 100))
    assert (i2t.direction, t2i.direction) == (I2T, T2I)
    for rep in (i2t, t2i):
        vals = [rep.recall[k] for k in sorted(rep.recall)]
        assert vals == sorted(vals) and all(0 <= v <= 1 for v in vals)
        assert rep.recall[100] == 1.0


def test_directions_are_transposes(rng):
    sim = rng.standard_normal((7, 7))
    for k in range(1, 8):
        assert recall_at_k(sim.T, k) == recall_brute_force(sim.T, k)
        assert recall_at_k(sim, k) == recall_brute_force(sim, k)


def test_identity_and_full_k():
    assert recall_at_k(np.eye(5), 1) == 1.0
    rng = np.random.default_rng(0)
    assert recall_at_k(rng.standard_normal((5, 5)), 5) == 1.0


def test_three_by_three_example():
    s = np.array([[.9, .1, .0], [.8, .2, .1], [.0, .1, .9]])
    # ranks of the diagonal: row 0 -> 1, row 1 -> 2 (behind .8), row 2 -> 1
    assert recall_brute_force(s, 1) == pytest.approx(2 / 3)
    assert recall_at_k(s, 1) == pytest.approx(2 / 3)
    assert recall_at_k(s, 2) == 1.0


def test_ties_go_to_lower_column():
    s = np.array([[1.0, 1.0], [1.0, 1.0]])
    # row 0: column 0 wins the tie; row 1: column 0 ranks first, so the true match is 2nd
    assert recall_at_k(s, 1) == 0.5


def test_six_by_six_with_ties_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(300):
        sim = rng.integers(0, 3, size=(6, 6)).astype(float)
        for k in range(1, 7):
            assert recall_at_k(sim, k) == recall_brute_force(sim, k)


@pytest.mark.parametrize("k", [0, 4, -1])
def test_k_out_of_range(k):
    with pytest.raises(InputError):
        recall_at_k(np.eye(3), k)


def test_non_square_rejected():
    with pytest.raises(InputError):
        recall_at_k(np.zeros((2, 3)), 1)


def test_same_seed_same_reports():
    cfg = tiny_config(steps=4)
    runs = []
    for _ in range(2):
        data = generate_dataset(40, 0)
        r = train(cfg, data)
        runs.append((r.loss_trace, evaluate_retrieval(r.model, data, "test", (1, 2))))
    assert runs[0] == runs[1]


def test_periodic_evaluation():
    r = train(tiny_config(steps=4, eval_every=2, eval_split="val", eval_k=(1,)))
    assert [step for step, _, _ in r.evals] == [2, 4]
