"""Model training and subject-independent evaluation.

Cross-entropy loss, bias-corrected Adam, the seeded epoch loop (batch-norm
running statistics are folded in after every batch), and a leave-one-subject-
out harness that records per-epoch test accuracy for every (subject, repeat)
pair.  Folds are embarrassingly parallel; results are keyed by (subject,
repeat) so thread count never changes the report.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .network import (
    NetConfig,
    init_params,
    model_forward,
    model_gradients,
    updated_running_stats,
)
from .numerics import Rng, paired_t_test

EVAL_CHUNK = 256


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 50
    max_epochs: int = 50
    repeats: int = 10
    seed: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1/beta2 must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2 (batch norm)")
        if not 1 <= self.max_epochs <= 50:
            raise ValueError("max_epochs must lie in [1, 50]")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            m={name: np.zeros_like(tensor) for name, tensor in params.learnable_items()},
            v={name: np.zeros_like(tensor) for name, tensor in params.learnable_items()},
        )


def cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood; probabilities clamped at 1e-12."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    picked = probabilities[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-12))))


def adam_step(params, grads: dict, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, applied to params in place."""
    state.t += 1
    c1 = 1.0 - config.beta1 ** state.t
    c2 = 1.0 - config.beta2 ** state.t
    for name, tensor in params.learnable_items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        tensor -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return params


def train(params, train_set, config: TrainConfig, rng: Rng, on_epoch=None,
          net_config: NetConfig | None = None):
    """Epoch loop: seeded shuffle, fixed-size batches, Adam per batch.

    The trailing short batch is dropped when it has fewer than 2 samples
    (batch norm needs at least 2).  Batch-norm running statistics are
    updated after every batch.  ``on_epoch(epoch, params, mean_loss)`` is
    called after each epoch with 1-based epoch numbers.  Returns params
    after the final epoch.
    """
    net_config = net_config or NetConfig()
    x = train_set.data.astype(np.float64)[:, None, :]
    y = train_set.labels.astype(np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if np.unique(y).size < 2:
        raise ValueError("training set contains a single class")

    state = AdamState.for_params(params)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if idx.size < 2:
                continue
            loss, grads, trace = model_gradients(x[idx], y[idx], params, net_config)
            params.bn_run_mean, params.bn_run_var = updated_running_stats(
                params, trace.bn_mean, trace.bn_var)
            adam_step(params, grads, state, config)
            losses.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, params, float(np.mean(losses)))
    return params


def evaluate(params, test_set, net_config: NetConfig | None = None) -> float:
    """Eval-mode accuracy; an exactly tied posterior predicts label 0."""
    net_config = net_config or NetConfig()
    n = len(test_set)
    if n == 0:
        raise ValueError("empty test set")
    x = test_set.data.astype(np.float64)[:, None, :]
    y = test_set.labels.astype(np.int64)
    correct = 0
    for start in range(0, n, EVAL_CHUNK):
        probs, _ = model_forward(x[start:start + EVAL_CHUNK], params, "eval", net_config)
        # np.argmax takes the first maximum, so a 0.5/0.5 tie predicts 0
        pred = np.argmax(probs, axis=1)
        correct += int((pred == y[start:start + EVAL_CHUNK]).sum())
    return correct / n


def loso_split(data, subject: int):
    """(train, test) split where ``subject`` is the held-out test subject."""
    test_mask = data.subjects == subject
    if not test_mask.any():
        raise ValueError(f"subject {subject} not present")
    return data.subset(~test_mask), data.subset(test_mask)


@dataclass
class CvReport:
    """Per-epoch accuracies for every (subject, repeat) of a LOSO run.

    accuracies is [n_subjects, n_repeats, n_epochs]; the summary statistics
    follow the mean-of-per-subject-means convention, with the SD taken
    across subjects (sample SD, ddof 1).
    """

    subjects: list
    accuracies: np.ndarray

    def per_subject_curve(self) -> np.ndarray:
        return self.accuracies.mean(axis=1)

    def mean_curve(self) -> np.ndarray:
        return self.per_subject_curve().mean(axis=0)

    def sd_curve(self) -> np.ndarray:
        return self.per_subject_curve().std(axis=0, ddof=1)

    def subject_accuracies(self, epoch: int) -> np.ndarray:
        """Per-subject mean accuracy at a 1-based epoch."""
        return self.per_subject_curve()[:, epoch - 1]


def _fold_job(args):
    data, subject, repeat, config, net_config = args
    train_set, test_set = loso_split(data, subject)
    rng = Rng(config.seed).split(int(subject), int(repeat))
    params = init_params(rng, net_config or NetConfig())
    accs = []

    def record(epoch, current, mean_loss):
        accs.append(evaluate(current, test_set, net_config))

    train(params, train_set, config, rng, on_epoch=record, net_config=net_config)
    return int(subject), int(repeat), accs


def run_loso(data, config: TrainConfig, threads: int = 1,
             net_config: NetConfig | None = None) -> CvReport:
    """Leave-one-subject-out evaluation with per-epoch accuracy recording.

    Every (subject, repeat) pair trains a fresh model from a seed derived
    from (config.seed, subject, repeat), so results are independent of both
    scheduling and thread count.
    """
    subjects = data.subject_ids()
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    jobs = [(data, subject, repeat, config, net_config)
            for subject in subjects for repeat in range(1, config.repeats + 1)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_fold_job, jobs))
    else:
        results = [_fold_job(job) for job in jobs]

    accuracies = np.zeros((len(subjects), config.repeats, config.max_epochs))
    row = {subject: i for i, subject in enumerate(subjects)}
    for subject, repeat, accs in results:
        accuracies[row[subject], repeat - 1, :] = accs
    return CvReport(subjects, accuracies)


def paired_comparison(acc_a: np.ndarray, acc_b: np.ndarray) -> tuple:
    """Paired t-test over per-subject accuracies (same subject order)."""
    return paired_t_test(acc_a, acc_b)


def write_report_csv(report: CvReport, path) -> None:
    """Detail CSV: one row per (subject, repeat, epoch), 6 significant digits."""
    n_subjects, n_repeats, n_epochs = report.accuracies.shape
    with open(path, "w") as fh:
        fh.write("subject_id,repeat,epoch,accuracy\n")
        for si in range(n_subjects):
            for r in range(n_repeats):
                for e in range(n_epochs):
                    fh.write(f"{report.subjects[si]},{r + 1},{e + 1},"
                             f"{report.accuracies[si, r, e]:.6g}\n")


def write_summary_csv(report: CvReport, path) -> None:
    """Summary CSV: per-epoch mean and SD across subjects."""
    mean = report.mean_curve()
    sd = report.sd_curve()
    with open(path, "w") as fh:
        fh.write("epoch,mean_acc,sd_acc\n")
        for e in range(mean.size):
            fh.write(f"{e + 1},{mean[e]:.6g},{sd[e]:.6g}\n")
