import numpy as np
import pytest

from switchseg.config import TrainConfig
from switchseg.errors import ConfigError, InvalidInputError, NumericalError
from switchseg.metrics import EvalReport
from switchseg.synthgen import GenConfig, gen_corpora, make_spec
from switchseg.trainer import (AdamHyper, TaskData, adam_state, adam_update, build_model,
                               evaluate_all, history_tsv, make_batch, make_examples,
                               run_training, sample_tasks, segment, step_gradients,
                               steps_per_epoch, task_weights, train_step, transfer_fit,
                               worker_count)


@pytest.fixture(scope="module")
def data():
    gen = GenConfig(alphabet_size=16, n_train=40, n_dev=10, n_test=10, sentence_units=(2, 4))
    return gen_corpora(make_spec(gen), gen)


def datasets(data, names=("A", "B")):
    return [TaskData(c, data.split(c, "train"), data.split(c, "dev"), data.split(c, "test"))
            for c in names]


def tiny(**kw):
    base = dict(k=2, d_e=4, d_bi=0, d_h=4, d_m=3, batch_size=8, lr=0.01, max_epochs=3)
    return TrainConfig(**{**base, **kw})


def fixed_f(values):
    """evaluate_fn that reports the given avg F per epoch."""
    def fn(model, epoch):
        f = values(epoch)
        return {"A": EvalReport(f, f, f, None, 1, 1, 1)}
    return fn


# -- sampling ------------------------------------------------------------------

def test_sampling_frequencies_equal_tasks():
    rng = np.random.default_rng(0)
    draws = np.array([sample_tasks(task_weights([100] * 8), 6, rng) for _ in range(100000 // 6 + 1)])
    freq = np.bincount(draws.ravel(), minlength=8) / draws.size
    assert np.all(np.abs(freq - 1 / 8) <= 0.01)


def test_sampling_frequencies_skewed():
    rng = np.random.default_rng(1)
    draws = np.array(sample_tasks(task_weights([900, 100]), 100000, rng))
    assert abs(np.mean(draws == 0) - 0.9) <= 0.01


def test_single_task_fills_every_slot():
    assert sample_tasks(task_weights([5]), 6, None) == [0] * 6


@pytest.mark.parametrize("sizes", [[], [0, 0]])
def test_empty_pool(sizes):
    with pytest.raises(InvalidInputError):
        task_weights(sizes)


# -- adam ----------------------------------------------------------------------

def test_zero_lr_leaves_params_unchanged():
    p = {"w": np.arange(4.0)}
    before = p["w"].copy()
    adam_update(p, {"w": np.ones(4)}, adam_state(), AdamHyper(lr=0.0))
    np.testing.assert_array_equal(p["w"], before)


def test_first_step_closed_form():
    g = np.array([0.3, -2.0, 1e-3])
    p = {"w": np.zeros(3)}
    h = AdamHyper(lr=0.1, clip=100.0)
    adam_update(p, {"w": g}, adam_state(), h)
    np.testing.assert_allclose(p["w"], -0.1 * g / (np.abs(g) + h.eps), rtol=1e-12)


def test_clipping_scales_to_threshold():
    g = {"a": np.array([30.0]), "b": np.array([40.0])}          # norm 50
    state = adam_state()
    adam_update({"a": np.zeros(1), "b": np.zeros(1)}, g, state, AdamHyper(clip=5.0))
    assert state["m"]["a"][0] == pytest.approx(0.1 * 3.0)
    assert state["m"]["b"][0] == pytest.approx(0.1 * 4.0)


def test_zero_gradients_decay_moments():
    state = adam_state()
    p = {"w": np.zeros(2)}
    adam_update(p, {"w": np.array([1.0, -1.0])}, state)
    m, v = state["m"]["w"].copy(), state["v"]["w"].copy()
    adam_update(p, {"w": np.zeros(2)}, state)
    np.testing.assert_allclose(state["m"]["w"], 0.9 * m)
    np.testing.assert_allclose(state["v"]["w"], 0.999 * v)


def test_shape_mismatch_rejected():
    with pytest.raises(InvalidInputError):
        adam_update({"w": np.zeros(2)}, {"w": np.zeros(3)}, adam_state())


# -- synchronous step --------------------------------------------------------------

def slot(model, data, task="A", n=5):
    ex = make_examples(data.split(task, "train")[:n])
    batch, gold = make_batch(model, ex)
    return (model.task_id(task), batch, gold, ex)


def test_duplicated_batch_scales_gradient(data):
    cfg = tiny(dropout=0.0)
    model = build_model(cfg, datasets(data))
    b = slot(model, data)
    _, g1 = step_gradients(model, [b], np.random.default_rng(0))
    _, g6 = step_gradients(model, [b] * 6, np.random.default_rng(0))
    for name in g1:
        np.testing.assert_allclose(g6[name], 6 * g1[name], rtol=1e-12, atol=1e-15)


def test_gradient_sum_is_order_invariant(data):
    cfg = tiny(dropout=0.0)
    model = build_model(cfg, datasets(data))
    slots = [slot(model, data, t, n) for t, n in [("A", 3), ("B", 5), ("A", 7), ("B", 2)]]
    _, ga = step_gradients(model, slots, np.random.default_rng(0))
    _, gb = step_gradients(model, slots[::-1], np.random.default_rng(0))
    for name in ga:
        np.testing.assert_allclose(ga[name], gb[name], rtol=0, atol=1e-12)


def test_threaded_step_matches_serial(data):
    from concurrent.futures import ThreadPoolExecutor
    cfg = tiny()
    model = build_model(cfg, datasets(data))
    slots = [slot(model, data, t) for t in "ABAB"]
    _, ga = step_gradients(model, slots, np.random.default_rng(4))
    with ThreadPoolExecutor(3) as pool:
        _, gb = step_gradients(model, slots, np.random.default_rng(4), pool=pool)
    for name in ga:
        np.testing.assert_array_equal(ga[name], gb[name])


def test_non_finite_loss_reports_step_task_sentence(data):
    cfg = tiny()
    model = build_model(cfg, datasets(data))
    model.params["crf.trans"][0, 0] = np.nan
    with pytest.raises(NumericalError) as info:
        train_step(model, [slot(model, data, "B")], adam_state(), AdamHyper(),
                   np.random.default_rng(0), step=17)
    err = info.value
    assert err.step == 17 and err.task == "B" and err.sentence is not None


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("SWITCHSEG_THREADS", "2")
    assert worker_count(8) == 2
    monkeypatch.setenv("SWITCHSEG_THREADS", "lots")
    with pytest.raises(ConfigError):
        worker_count(1)


# -- training loop ----------------------------------------------------------------------

def test_fixed_seed_loss_trace_is_reproducible(data):
    runs = [run_training(tiny(seed=5, max_epochs=20), datasets(data), max_steps=10,
                         evaluate_fn=fixed_f(lambda e: 0.5)).losses for _ in range(2)]
    assert len(runs[0]) == 10 and runs[0] == runs[1]


def test_constant_dev_f_stops_after_patience(data):
    cfg = tiny(patience=7, max_epochs=50, batch_size=64, tasks_per_step=1)
    res = run_training(cfg, datasets(data), evaluate_fn=fixed_f(lambda e: 0.5))
    assert len(res.epoch_scores) == 8 and res.best_epoch == 1


def test_increasing_dev_f_runs_every_epoch(data):
    cfg = tiny(patience=2, max_epochs=10, batch_size=64, tasks_per_step=1)
    res = run_training(cfg, datasets(data), evaluate_fn=fixed_f(lambda e: e / 10))
    assert len(res.epoch_scores) == 10 and res.best_epoch == 10


def test_best_params_restored(data):
    cfg = tiny(patience=3, max_epochs=6, batch_size=64, tasks_per_step=1)
    seen = {}
    scores = {1: 0.2, 2: 0.9, 3: 0.4, 4: 0.3, 5: 0.1}

    def fn(model, epoch):
        seen[epoch] = {k: v.copy() for k, v in model.params.items()}
        f = scores[epoch]
        return {"A": EvalReport(f, f, f, None, 1, 1, 1)}

    res = run_training(cfg, datasets(data), evaluate_fn=fn)
    assert res.best_metric == max(res.epoch_scores) == 0.9 and res.best_epoch == 2
    for name, arr in res.model.params.items():
        np.testing.assert_array_equal(arr, seen[2][name])
    assert res.checkpoint.best_metric == 0.9


def test_real_evaluation_and_history(data):
    ds = datasets(data)
    res = run_training(tiny(max_epochs=2), ds)
    tsv = history_tsv(res.history).splitlines()
    assert tsv[0].split("\t") == ["epoch", "task", "P", "R", "F", "OOV", "avg_F"]
    assert len(tsv) == 1 + 2 * len(res.epoch_scores)
    reports = evaluate_all(res.model, ds, "test")
    assert set(reports) == {"A", "B"}


def test_steps_per_epoch():
    assert steps_per_epoch([1000, 536], TrainConfig()) == 2
    assert steps_per_epoch([1000, 537], TrainConfig()) == 3
    assert steps_per_epoch([1], TrainConfig()) == 1


def test_segment_empty_strings(data):
    model = build_model(tiny(), datasets(data))
    out = segment(model, ["", data.split("A", "dev")[0][0], ""], "A")
    assert out[0] == [] and out[2] == [] and out[1]


# -- transfer ---------------------------------------------------------------------------

def test_transfer_touches_only_the_new_row(data):
    base = run_training(tiny(max_epochs=1), datasets(data)).model
    snapshot = {k: v.copy() for k, v in base.params.items()}
    cfg = tiny(max_epochs=4, patience=10, lr=0.05, batch_size=8, tasks_per_step=6)
    dev = data.split("B", "dev")
    res = transfer_fit(base, data.split("B", "train"), dev, cfg, name="C", n_instances=20)
    assert res.trainable_count == 3 and res.frozen_before == res.frozen_after
    model = res.train.model
    tid = model.task_id("C")
    assert not np.allclose(model.params["emb.task"][tid], 0.0)
    for name, arr in snapshot.items():                       # base untouched
        np.testing.assert_array_equal(base.params[name], arr)


def test_transfer_trainable_count_default_dim(data):
    base = run_training(tiny(max_epochs=1, d_m=20), datasets(data)).model
    res = transfer_fit(base, data.split("A", "train"), data.split("A", "dev"),
                       tiny(max_epochs=1, d_m=20), n_instances=10)
    assert res.trainable_count == 20


def test_transfer_needs_multi_base(data):
    base = run_training(tiny(max_epochs=1, multi=False), datasets(data, ("A",))).model
    with pytest.raises(ConfigError):
        transfer_fit(base, data.split("A", "train"), None, tiny())


def test_transfer_instance_count_bounds(data):
    base = build_model(tiny(), datasets(data))
    with pytest.raises(InvalidInputError):
        transfer_fit(base, data.split("A", "train"), None, tiny(), n_instances=10 ** 6)
