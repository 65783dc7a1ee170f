"""Training, evaluation and retaining-probability sweeps."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from mpdropout.arch import parse_arch
from mpdropout.data import batch_iter, load_dataset
from mpdropout.errors import ParameterError, TrainingDivergedError
from mpdropout.layers import MomentumSGD
from mpdropout.network import Network, PoolingConfig
from mpdropout.tensor import RngStream

log = logging.getLogger(__name__)

SWEEP_TEST_MODES = ("max", "scaled_max", "prob_weighted")
DEFAULT_P_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
DEFAULT_EPOCHS = {"mnist": 10, "cifar10": 15, "cifar100": 15}

# stream keys under the run seed
_INIT, _SHUFFLE, _BATCH = 0, 1, 2


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "mnist"
    arch: str | None = None  # preset name or architecture string; defaults to the dataset preset
    train_pool: str = "max_dropout"
    test_pool: str = "prob_weighted"
    p: float = 0.5
    fc_dropout: float | None = None
    epochs: int | None = None
    batch_size: int = 100
    lr: float = 0.1
    momentum: float = 0.95
    seed: int = 0
    data_dir: str | None = None
    allow_cross_pairing: bool = False
    record_time: bool = True

    def __post_init__(self):
        PoolingConfig(self.train_pool, self.test_pool, self.p, self.fc_dropout)
        stochastic = (self.train_pool == "stochastic", self.test_pool == "stochastic_weighted")
        if stochastic[0] != stochastic[1] and not self.allow_cross_pairing:
            raise ParameterError(
                "stochastic training pairs with stochastic_weighted testing; "
                "pass allow_cross_pairing for other combinations")
        if self.batch_size < 1 or self.n_epochs < 0:
            raise ParameterError("batch_size must be >= 1 and epochs >= 0")
        MomentumSGD(self.lr, self.momentum)

    @property
    def pooling(self):
        return PoolingConfig(self.train_pool, self.test_pool, self.p, self.fc_dropout)

    @property
    def arch_spec(self):
        return parse_arch(self.arch or self.dataset)

    @property
    def n_epochs(self):
        return DEFAULT_EPOCHS.get(self.dataset, 10) if self.epochs is None else self.epochs


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    test_error_percent: float
    wall_seconds: float


@dataclass
class TrainingResult:
    records: list
    network: Network
    config: ExperimentConfig
    final_errors: dict = field(default_factory=dict)

    @property
    def final_error(self):
        return self.records[-1].test_error_percent if self.records else float("nan")

    @property
    def best_error(self):
        return min(r.test_error_percent for r in self.records) if self.records else float("nan")


def evaluate(network, dataset, test_mode, p, fc_dropout=None, batch_size=1000):
    """Percentage of examples whose argmax prediction is wrong."""
    config = PoolingConfig("max", test_mode, p, fc_dropout)
    wrong = 0
    for start in range(0, len(dataset), batch_size):
        logits = network.predict(dataset.images[start:start + batch_size], config)
        wrong += int((logits.argmax(axis=1) != dataset.labels[start:start + batch_size]).sum())
    return 100.0 * wrong / max(len(dataset), 1)


def _load(config, train_set, test_set):
    if train_set is None or test_set is None:
        if config.data_dir is None:
            raise ParameterError("no datasets given and no data_dir configured")
        train_set, test_set = load_dataset(config.dataset, config.data_dir)
    return train_set, test_set


def run_training(config, train_set=None, test_set=None, extra_test_modes=()):
    """Train one network and evaluate it after every epoch.

    Deterministic given ``config.seed``. ``extra_test_modes`` are evaluated
    once on the final parameters and stored in ``final_errors``.
    """
    train_set, test_set = _load(config, train_set, test_set)
    arch = config.arch_spec
    root = RngStream(config.seed)
    net = Network(arch, root.child(_INIT))
    opt = MomentumSGD(config.lr, config.momentum)
    pooling = config.pooling
    records = []
    start = time.perf_counter()
    for epoch in range(1, config.n_epochs + 1):
        losses, counts = [], []
        batches = batch_iter(train_set, config.batch_size, root.child(_SHUFFLE, epoch))
        for b, (x, y) in enumerate(batches):
            loss, grads, _ = net.loss_and_grads(x, y, pooling, root.child(_BATCH, epoch, b))
            if grads is None or not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {b} "
                    f"(lr={config.lr}, momentum={config.momentum})")
            opt.step(net.params, grads)
            losses.append(loss)
            counts.append(len(y))
        train_loss = float(np.average(losses, weights=counts))
        err = evaluate(net, test_set, pooling.test_mode, pooling.p, pooling.fc_dropout_p)
        wall = time.perf_counter() - start if config.record_time else 0.0
        records.append(MetricsRecord(epoch, train_loss, err, wall))
        log.info("epoch %d  loss %.5f  test error %.2f%%  (%.0fs)", epoch, train_loss, err, wall)
    result = TrainingResult(records, net, config)
    for mode in extra_test_modes:
        if mode == pooling.test_mode and records:
            result.final_errors[mode] = records[-1].test_error_percent
        else:
            result.final_errors[mode] = evaluate(net, test_set, mode, pooling.p,
                                                 pooling.fc_dropout_p)
    return result


@dataclass
class SweepRow:
    p: float | None  # None for the stochastic-pooling baseline
    test_mode: str
    test_error_percent: float


def sweep(config, p_values, train_set=None, test_set=None, test_modes=SWEEP_TEST_MODES,
          on_run=None):
    """One max-pooling-dropout model per ``p`` evaluated under every test mode,
    plus one stochastic-pooling baseline run. All runs share ``config.seed``."""
    p_values = list(p_values)
    if not p_values:
        raise ParameterError("sweep needs at least one retaining probability")
    train_set, test_set = _load(config, train_set, test_set)
    rows = []
    for p in p_values:
        cfg = replace(config, train_pool="max_dropout", test_pool="prob_weighted", p=p,
                      allow_cross_pairing=False)
        result = run_training(cfg, train_set, test_set, extra_test_modes=test_modes)
        rows += [SweepRow(p, m, result.final_errors[m]) for m in test_modes]
        if on_run:
            on_run(result)
    cfg = replace(config, train_pool="stochastic", test_pool="stochastic_weighted",
                  allow_cross_pairing=False)
    result = run_training(cfg, train_set, test_set)
    rows.append(SweepRow(None, "stochastic_weighted", result.final_error))
    if on_run:
        on_run(result)
    return rows
