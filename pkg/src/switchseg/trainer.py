"""Multi-criteria training: proportional task sampling, synchronous updates,
early stopping on the averaged dev F, and task-embedding-only transfer."""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from switchseg.checkpoint import from_model, tensor_digest, to_model
from switchseg.corpus import chars_of, from_bmes, label_ids, oov_words, split_long, to_bmes
from switchseg.embeddings import build_vocab
from switchseg.errors import ConfigError, InvalidInputError, NumericalError
from switchseg.metrics import average_f, evaluate
from switchseg.model import SwitchSegModel

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "task", "P", "R", "F", "OOV", "avg_F")


@dataclass
class TaskData:
    name: str
    train: list            # word lists
    dev: list = None
    test: list = None


def task_weights(sizes):
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0 or np.any(sizes < 0) or sizes.sum() <= 0:
        raise InvalidInputError("task pool is empty")
    return sizes / sizes.sum()


def sample_tasks(weights, count=6, rng=None):
    """``count`` i.i.d. task ids drawn with probabilities ``weights``."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        raise InvalidInputError("task pool is empty")
    if weights.size == 1:
        return [0] * count
    return rng.choice(weights.size, size=count, p=weights / weights.sum()).tolist()


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0


def adam_state():
    return {"t": 0, "m": {}, "v": {}}


def global_norm(grads):
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def adam_update(params, grads, state, hyper=None):
    """One bias-corrected Adam step, in place, after global-norm clipping.

    Only names present in ``grads`` are updated. Returns ``(params, state)``.
    """
    hyper = hyper or AdamHyper()
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise InvalidInputError(f"{name}: grad shape {g.shape} != param {params[name].shape}")
    norm = global_norm(grads)
    scale = hyper.clip / norm if hyper.clip and norm > hyper.clip else 1.0
    state["t"] += 1
    t = state["t"]
    b1, b2 = hyper.beta1, hyper.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, g in grads.items():
        if scale != 1.0:
            g = g * scale
        m = state["m"].get(name)
        if m is None or m.shape != g.shape:
            m = state["m"][name] = np.zeros_like(g)
            state["v"][name] = np.zeros_like(g)
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if hyper.lr:
            params[name] -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return params, state


# -- data --------------------------------------------------------------------

@dataclass
class Example:
    chars: str
    gold: np.ndarray      # label ids
    index: int            # sentence index in the task's training corpus


def make_examples(corpus, max_len=300):
    out = []
    for i, words in enumerate(corpus):
        for piece in split_long(words, max_len):
            if piece:
                out.append(Example(chars_of(piece), np.array(label_ids(to_bmes(piece))), i))
    return out


class BatchSampler:
    """Shuffled pass over one task's examples, reshuffled whenever exhausted."""

    def __init__(self, examples, rng):
        if not examples:
            raise InvalidInputError("task has no training sentences")
        self.examples = examples
        self.rng = rng
        self.order, self.pos = self.rng.permutation(len(examples)), 0

    def next(self, size):
        size = min(size, len(self.examples))
        if self.pos + size > len(self.order):
            self.order, self.pos = self.rng.permutation(len(self.examples)), 0
        idx = self.order[self.pos:self.pos + size]
        self.pos += size
        return [self.examples[i] for i in idx]


def make_batch(model, examples):
    batch = model.encode_batch([e.chars for e in examples])
    gold = np.zeros(batch.ids.shape, dtype=np.int64)
    for b, e in enumerate(examples):
        gold[: len(e.gold), b] = e.gold
    return batch, gold


# -- one synchronous step --------------------------------------------------------

def worker_count(config_threads=1):
    env = os.environ.get("SWITCHSEG_THREADS")
    n = config_threads
    if env:
        try:
            n = min(n, int(env)) if n else int(env)
        except ValueError:
            raise ConfigError(f"SWITCHSEG_THREADS must be an integer, got {env!r}") from None
    return max(1, n)


def restrict(grads, trainable):
    """Sub-gradients for ``trainable`` (name -> row index or None for whole tensor)."""
    if trainable is None:
        return grads
    out = {}
    for name, row in trainable.items():
        out[name] = grads[name] if row is None else grads[name][row:row + 1]
    return out


def param_views(params, trainable):
    if trainable is None:
        return params
    return {name: (params[name] if row is None else params[name][row:row + 1])
            for name, row in trainable.items()}


def step_gradients(model, batches, rng, step=0, pool=None, trainable=None):
    """Per-token losses and the slot-ordered gradient sum over ``batches``.

    ``batches`` is a list of ``(task_id, Batch, gold, examples)``. Every
    batch sees the same parameters. Returns ``(losses, grads)``.
    """
    seeds = rng.integers(0, 2 ** 63, size=len(batches))
    params = model.params

    def run(slot):
        tid, batch, gold, _ = batches[slot]
        return model.loss_and_grad(batch, gold, tid, train=True,
                                   rng=np.random.default_rng(seeds[slot]), params=params)

    slots = range(len(batches))
    results = list(pool.map(run, slots)) if pool is not None else [run(s) for s in slots]

    total, losses = None, []
    for slot, (loss, nll, grads) in enumerate(results):
        tid, _, _, examples = batches[slot]
        if not np.isfinite(loss):
            bad = np.flatnonzero(~np.isfinite(nll))
            sent = examples[int(bad[0])].index if bad.size else examples[0].index
            name = model.task_names[tid] if tid is not None else "-"
            raise NumericalError(f"non-finite loss at step {step}, task {name}, sentence {sent}",
                                 step=step, task=name, sentence=sent)
        losses.append(loss)
        grads = restrict(grads, trainable)
        if total is None:
            total = {k: g.copy() for k, g in grads.items()}
        else:
            for k, g in grads.items():
                total[k] += g
    return losses, total


def train_step(model, batches, state, hyper, rng, step=0, pool=None, trainable=None):
    """One synchronous update from all ``batches``; returns the mean per-token loss."""
    losses, total = step_gradients(model, batches, rng, step, pool, trainable)
    adam_update(param_views(model.params, trainable), total, state, hyper)
    return float(np.mean(losses))


# -- evaluation --------------------------------------------------------------------

def segment(model, sentences, task, batch_size=256, rng=None):
    """Word lists for raw character strings (empty strings give empty lists)."""
    out = [[] for _ in sentences]
    idx = [i for i, s in enumerate(sentences) if s]
    for s in range(0, len(idx), batch_size):
        chunk = idx[s:s + batch_size]
        labels = model.predict([sentences[i] for i in chunk], task, rng=rng)
        for i, lab in zip(chunk, labels):
            out[i] = from_bmes(sentences[i], lab)
    return out


def evaluate_task(model, gold, task, train=None, batch_size=256, rng=None):
    if not gold:
        raise InvalidInputError("cannot evaluate an empty corpus")
    pred = segment(model, [chars_of(w) for w in gold], task, batch_size, rng)
    oov = oov_words(train, gold)[0] if train is not None else None
    return evaluate(gold, pred, oov)


def evaluate_all(model, datasets, split="dev", batch_size=256, rng=None):
    reports = {}
    for i, d in enumerate(datasets):
        gold = getattr(d, split)
        task = d.name if model.config.multi else None
        reports[d.name] = evaluate_task(model, gold, task, d.train, batch_size, rng)
    return reports


def history_tsv(history):
    lines = ["\t".join(HISTORY_HEADER)]
    for row in history:
        oov = "NA" if row["oov"] is None else f"{row['oov']:.4f}"
        lines.append(f"{row['epoch']}\t{row['task']}\t{row['P']:.4f}\t{row['R']:.4f}\t"
                     f"{row['F']:.4f}\t{oov}\t{row['avg_F']:.4f}")
    return "\n".join(lines) + "\n"


# -- training loop --------------------------------------------------------------

@dataclass
class TrainResult:
    model: SwitchSegModel          # holds the best parameters
    checkpoint: object
    history: list                  # rows per (epoch, task)
    epoch_scores: list             # avg dev F per epoch
    best_epoch: int
    best_metric: float
    losses: list = field(default_factory=list)


def hyper_of(config):
    return AdamHyper(config.lr, config.beta1, config.beta2, config.eps, config.clip)


def steps_per_epoch(sizes, config):
    return max(1, math.ceil(sum(sizes) / (config.tasks_per_step * config.batch_size)))


def build_model(config, datasets, seed=None):
    corpora = [d.train for d in datasets]
    char_vocab = build_vocab(corpora, config.min_count, "char")
    bigram_vocab = build_vocab(corpora, config.min_count, "bigram") if config.d_bi > 0 else None
    model = SwitchSegModel(config.model_config(), char_vocab, bigram_vocab,
                           seed=config.seed if seed is None else seed)
    if config.multi:
        for d in datasets:
            model.register_task(d.name)
    return model


def run_training(config, datasets, model=None, evaluate_fn=None, max_steps=None,
                 trainable=None, on_epoch=None):
    """Train until the average dev F stops improving for ``patience`` epochs.

    ``evaluate_fn(model, epoch)`` may replace dev evaluation; it returns
    ``{task: EvalReport}``. ``max_steps`` caps the total number of steps
    (for smoke runs). Returns a :class:`TrainResult` whose model carries the
    best parameters.
    """
    if not datasets:
        raise InvalidInputError("need at least one dataset")
    ss = np.random.SeedSequence(config.seed)
    data_rng, step_rng, eval_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    if model is None:
        model = build_model(config, datasets)
    examples = [make_examples(d.train, config.max_len) for d in datasets]
    sizes = [len(e) for e in examples]
    weights = task_weights(sizes)
    samplers = [BatchSampler(e, data_rng) for e in examples]
    tids = [model.task_id(d.name) if config.multi else None for d in datasets]
    n_steps = steps_per_epoch(sizes, config)
    hyper = hyper_of(config)
    state = adam_state()
    if evaluate_fn is None:
        def evaluate_fn(m, epoch):
            return evaluate_all(m, datasets, "dev", config.eval_batch, eval_rng)

    history, scores, losses = [], [], []
    best, best_epoch, best_params, since = -math.inf, 0, None, 0
    workers = worker_count(config.threads)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    step = 0
    try:
        for epoch in range(1, config.max_epochs + 1):
            for _ in range(n_steps):
                if max_steps is not None and step >= max_steps:
                    break
                chosen = sample_tasks(weights, config.tasks_per_step, data_rng)
                batches = []
                for t in chosen:
                    ex = samplers[t].next(config.batch_size)
                    batch, gold = make_batch(model, ex)
                    batches.append((tids[t], batch, gold, ex))
                losses.append(train_step(model, batches, state, hyper, step_rng, step, pool,
                                         trainable))
                step += 1
            reports = evaluate_fn(model, epoch)
            avg = average_f(reports.values())
            scores.append(avg)
            for task, r in reports.items():
                history.append({"epoch": epoch, "task": task, "P": r.precision, "R": r.recall,
                                "F": r.f, "oov": r.oov_recall, "avg_F": avg})
            log.info("epoch %d: avg dev F %.4f (loss %.4f)", epoch, avg,
                     losses[-1] if losses else float("nan"))
            if avg > best:
                best, best_epoch, since = avg, epoch, 0
                best_params = {k: v.copy() for k, v in model.params.items()}
            else:
                since += 1
            if on_epoch is not None:
                on_epoch(epoch, avg, reports)
            if since >= config.patience or (max_steps is not None and step >= max_steps):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    for k, v in best_params.items():
        model.params[k][...] = v
    ck = from_model(model, best, config.to_dict(), {"best_epoch": best_epoch})
    return TrainResult(model, ck, history, scores, best_epoch, best, losses)


# -- transfer ------------------------------------------------------------------------

@dataclass
class TransferResult:
    train: TrainResult
    task: str
    trainable_count: int
    frozen_before: str
    frozen_after: str


def frozen_tensors(model, tid):
    """Every tensor except row ``tid`` of the task table."""
    out = {}
    for name, arr in model.params.items():
        if name == "emb.task":
            out[name] = np.delete(arr, tid, axis=0)
        else:
            out[name] = arr
    return out


def transfer_fit(base, train, dev, config, name="new", n_instances=None):
    """Fit only a freshly registered task embedding on a new corpus.

    ``base`` is a checkpoint (or model) trained in multi-criteria mode; it is
    not modified. ``n_instances`` truncates ``train`` to its first N sentences.
    """
    model = to_model(base if not isinstance(base, SwitchSegModel) else from_model(base))
    if not model.config.multi:
        raise ConfigError("transfer needs a multi-criteria base (no task table)")
    if n_instances is not None:
        if n_instances > len(train):
            raise InvalidInputError(f"asked for {n_instances} instances, corpus has {len(train)}")
        train = train[:n_instances]
    tid = model.register_task(name, np.random.default_rng(config.seed))
    trainable = {"emb.task": tid}
    before = tensor_digest(frozen_tensors(model, tid))
    cfg = config.replace(multi=True, k=model.config.k)
    result = run_training(cfg, [TaskData(name, train, dev)], model=model, trainable=trainable)
    after = tensor_digest(frozen_tensors(result.model, tid))
    count = int(sum(param_views(model.params, trainable)[n].size for n in trainable))
    return TransferResult(result, name, count, before, after)


DEFAULT_INSTANCE_COUNTS = (100, 300, 500, 700, 1000)
