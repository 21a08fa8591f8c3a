"""Training loop for the joint softmax / constrained-triplet objective.

Phase 1 trains the streams and the bilinear classifier with Adam on plain
cross-entropy; the embedding head is frozen. Phase 2 trains every parameter
with SGD on ``alpha_t * weighted_softmax + (1 - alpha_t) * constrained_triplet``,
with triplets mined online from each batch's embeddings. The similarity
matrix is refreshed from training-split outputs at the end of every epoch.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig, Network, init_parameters
from .checkpoint import load_checkpoint, save_checkpoint
from .data import AugmentConfig, Dataset, SplitSpec, augment_batch, to_signed
from .losses import (Margins, SimilarityMatrix, constrained_triplet_loss, cross_entropy, joint_loss,
                     update_similarity_matrix, weighted_softmax_loss)
from .mining import SamplerConfig, TripletBatch, mine_hard_triplets, pairwise_distances, sample_batch
from .tensor import GradTape, NonFiniteError

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    phase1_epochs: int | None = None  # None: 20% of epochs
    learning_rate: float = 1e-4  # SGD, phase 2
    momentum: float = 0.0
    phase1_learning_rate: float = 1e-3  # Adam, phase 1
    margins: Margins = field(default_factory=Margins)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    hard_mining_after: int = 1  # phase-2 epochs mined with sampler.strategy before switching to hard; <0 never
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    seed: int = 0
    similarity_momentum: float = 0.9
    beta: float = 0.0  # accepted and reported; the joint objective has no term for it
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0 or self.phase1_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.phase1_epochs is not None and not 0 <= self.phase1_epochs <= self.epochs:
            raise ValueError("phase1_epochs must be in [0, epochs]")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    @property
    def phase1(self) -> int:
        if self.phase1_epochs is not None:
            return self.phase1_epochs
        return int(round(0.2 * self.epochs))

    def strategy_for(self, epoch: int) -> str:
        into_phase2 = epoch - self.phase1
        if self.hard_mining_after >= 0 and into_phase2 >= self.hard_mining_after:
            return "hard"
        return self.sampler.strategy


# --------------------------------------------------------------------------
# optimizers


class Adam:
    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, T.Tensor], grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for name, g in grads.items():
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.b1 * m + (1 - self.b1) * g
            v = self.b2 * v + (1 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            params[name].data = params[name].data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self, prefix="adam") -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array(self.t)}
        out.update({f"{prefix}.m.{k}": v for k, v in self.m.items()})
        out.update({f"{prefix}.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], prefix="adam"):
        self.t = int(np.asarray(state.get(f"{prefix}.t", 0)).reshape(-1)[0])
        self.m = {k[len(prefix) + 3:]: v for k, v in state.items() if k.startswith(f"{prefix}.m.")}
        self.v = {k[len(prefix) + 3:]: v for k, v in state.items() if k.startswith(f"{prefix}.v.")}


class SGD:
    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr, self.momentum = lr, momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, T.Tensor], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            if self.momentum:
                v = self.momentum * self.velocity.get(name, np.zeros_like(g)) + g
                self.velocity[name] = v
                g = v
            params[name].data = params[name].data - self.lr * g

    def state_dict(self, prefix="sgd") -> dict[str, np.ndarray]:
        return {f"{prefix}.vel.{k}": v for k, v in self.velocity.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix="sgd"):
        self.velocity = {k[len(prefix) + 5:]: v for k, v in state.items() if k.startswith(f"{prefix}.vel.")}


# --------------------------------------------------------------------------
# state


@dataclass
class TrainState:
    net: Network
    sm: SimilarityMatrix
    adam: Adam
    sgd: SGD
    rng: np.random.Generator
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    def save(self, path, config: TrainConfig | None = None) -> Path:
        state = {"similarity": self.sm.s, **self.adam.state_dict(), **self.sgd.state_dict()}
        meta = {
            "epoch": self.epoch,
            "history": self.history,
            "rng_state": self.rng.bit_generator.state,
            "similarity_momentum": self.sm.momentum,
        }
        if config is not None:
            from .config import config_to_dict
            meta["train_config"] = config_to_dict(config)
        return save_checkpoint(path, self.net, meta, state)

    @classmethod
    def load(cls, path, config: TrainConfig) -> "TrainState":
        net, meta, arrays = load_checkpoint(path)
        sm = SimilarityMatrix(arrays["similarity"], meta.get("similarity_momentum", config.similarity_momentum))
        adam = Adam(config.phase1_learning_rate)
        adam.load_state_dict(arrays)
        sgd = SGD(config.learning_rate, config.momentum)
        sgd.load_state_dict(arrays)
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
        return cls(net, sm, adam, sgd, rng, int(meta["epoch"]), list(meta["history"]))


def init_state(config: TrainConfig) -> TrainState:
    net = init_parameters(config.backbone, config.seed)
    sm = SimilarityMatrix.uniform(config.backbone.num_classes, config.similarity_momentum)
    return TrainState(net, sm, Adam(config.phase1_learning_rate), SGD(config.learning_rate, config.momentum),
                      np.random.default_rng([config.seed, 1]))


# --------------------------------------------------------------------------
# steps


def _batch_stats(batch: TripletBatch) -> str:
    return (f"batch of {len(batch.labels)} images, labels {np.bincount(batch.labels).tolist()}, "
            f"pixel range [{batch.images.min():.3g}, {batch.images.max():.3g}], "
            f"{len(batch.triplets)} triplets")


def batch_loss(net: Network, batch: TripletBatch, config: TrainConfig, sm: SimilarityMatrix | None,
               phase: int, rng: np.random.Generator | None, training: bool = True,
               strategy: str | None = None):
    """Forward one batch; returns (loss, parts dict). Mines triplets into ``batch`` when it has none."""
    out = net.forward(batch.images, training=training, rng=rng)
    if phase == 1:
        loss = cross_entropy(out.probs, batch.labels)
        return loss, {"softmax": loss.item(), "triplet": 0.0, "probs": out.probs.data}
    if not batch.triplets:
        strategy = strategy or config.sampler.strategy
        D = pairwise_distances(out.embeddings.data)
        batch.triplets = mine_hard_triplets(D, batch.labels, strategy, rng)
    trip = np.asarray(batch.triplets, dtype=np.intp)
    e = out.embeddings
    l_trip = constrained_triplet_loss(T.take(e, trip[:, 0]), T.take(e, trip[:, 1]), T.take(e, trip[:, 2]),
                                      config.margins)
    l_soft = weighted_softmax_loss(out.probs, batch.labels, sm)
    loss = joint_loss(l_soft, l_trip, config.margins.alpha_t)
    return loss, {"softmax": l_soft.item(), "triplet": l_trip.item(), "probs": out.probs.data}


def train_step(state: TrainState, batch: TripletBatch, config: TrainConfig, phase: int = 2,
               strategy: str | None = None) -> tuple[TrainState, dict]:
    """One forward/backward/update. Phase 1 updates only the classifier branch with Adam."""
    net = state.net
    names = net.classifier_branch() if phase == 1 else list(net.params)
    for name, p in net.params.items():
        p.requires_grad = False
    try:
        with GradTape({n: net.params[n] for n in names}) as tape:
            loss, parts = batch_loss(net, batch, config, state.sm, phase, state.rng, True, strategy)
        if not math.isfinite(loss.item()):
            raise NonFiniteError("loss is not finite")
        grads = tape.backward(loss)
    except NonFiniteError as e:
        raise TrainingError(f"non-finite value during training ({e}); {_batch_stats(batch)}") from e
    finally:
        for p in net.params.values():
            p.requires_grad = False
    gnorm = T.global_norm(grads.values())
    if config.clip_norm is not None and gnorm > config.clip_norm:
        grads = {k: g * (config.clip_norm / gnorm) for k, g in grads.items()}
    (state.adam if phase == 1 else state.sgd).step(net.params, grads)
    acc = float((parts["probs"].argmax(axis=1) == batch.labels).mean())
    return state, {"loss": loss.item(), "softmax": parts["softmax"], "triplet": parts["triplet"],
                   "accuracy": acc, "grad_norm": gnorm, "phase": phase}


def evaluate_split(net: Network, ds: Dataset) -> tuple[float, float, np.ndarray]:
    """(cross-entropy, accuracy, softmax outputs) in inference mode."""
    probs, _ = net.predict(to_signed(ds.images))
    p_true = np.maximum(probs[np.arange(len(ds)), ds.labels], 1e-12)
    return float(-np.log(p_true).mean()), float((probs.argmax(1) == ds.labels).mean()), probs


def fit_config(config: TrainConfig, train_ds: Dataset) -> TrainConfig:
    """Adopt the dataset's class count and image shape in the backbone config."""
    bb = replace(config.backbone, num_classes=train_ds.num_classes, input_size=train_ds.image_shape)
    return replace(config, backbone=bb)


def run_epoch(state: TrainState, train_ds: Dataset, config: TrainConfig) -> dict:
    epoch = state.epoch
    phase = 1 if epoch < config.phase1 else 2
    strategy = config.strategy_for(epoch)
    n_batches = max(1, math.ceil(len(train_ds) / config.sampler.batch_size))
    losses, accs = [], []
    for _ in range(n_batches):
        batch = sample_batch(train_ds, config.sampler, state.sm, state.rng)
        images = batch.images
        if config.augment is not None:
            images = augment_batch(images, config.augment, state.rng)
        batch.images = to_signed(images)
        _, m = train_step(state, batch, config, phase, strategy)
        losses.append(m["loss"])
        accs.append(m["accuracy"])
    return {"phase": phase, "train_loss": float(np.mean(losses)), "batch_acc": float(np.mean(accs)),
            "strategy": strategy if phase == 2 else "none"}


def train(train_ds: Dataset, val_ds: Dataset, config: TrainConfig, out_dir=None,
          state: TrainState | None = None, epochs: int | None = None) -> tuple[TrainState, list[dict]]:
    """Run (or continue) training up to ``config.epochs`` epochs.

    Each epoch ends with a similarity-matrix refresh from training-split
    outputs and a validation pass; history rows carry
    ``epoch, train_loss, val_loss, train_acc, val_acc``. When ``out_dir`` is
    given a checkpoint ``epoch_XXX.ckpt`` and ``history.csv`` are written
    after every epoch. ``epochs`` stops early after that many epochs of this
    call (used to simulate interrupted runs).
    """
    config = fit_config(config, train_ds)
    if state is None:
        state = init_state(config)
    out_dir = Path(out_dir) if out_dir else None
    stop = config.epochs if epochs is None else min(config.epochs, state.epoch + epochs)
    while state.epoch < stop:
        t0 = time.perf_counter()
        info = run_epoch(state, train_ds, config)
        train_loss_ce, train_acc, probs = evaluate_split(state.net, train_ds)
        state.sm = update_similarity_matrix(state.sm, probs, train_ds.labels)
        val_loss, val_acc, _ = evaluate_split(state.net, val_ds) if len(val_ds) else (0.0, 0.0, None)
        state.epoch += 1
        row = {"epoch": state.epoch, "train_loss": info["train_loss"], "val_loss": val_loss,
               "train_acc": train_acc, "val_acc": val_acc}
        state.history.append(row)
        logger.info("epoch %d phase %d (%s): train_loss %.4f val_loss %.4f train_acc %.3f val_acc %.3f [%.1fs]",
                    state.epoch, info["phase"], info["strategy"], row["train_loss"], val_loss, train_acc,
                    val_acc, time.perf_counter() - t0)
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            state.save(out_dir / f"epoch_{state.epoch:03d}.ckpt", config)
            state.save(out_dir / "last.ckpt", config)
            write_history(out_dir / "history.csv", state.history)
    return state, state.history


HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc")


def write_history(path, history: list[dict]):
    import csv
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


def read_history(path) -> list[dict]:
    import csv
    with open(path, newline="") as f:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in csv.DictReader(f)]


# --------------------------------------------------------------------------
# alpha sweep


def alpha_sweep(train_ds: Dataset, val_ds: Dataset, test_ds: Dataset, config: TrainConfig, alphas,
                out_dir=None) -> list[tuple[float, float]]:
    """Train one model per alpha_t (same seed) and report test accuracy."""
    alphas = [float(a) for a in alphas]
    if any(not 0.0 <= a <= 1.0 for a in alphas):
        raise ValueError("alphas must lie in [0, 1]")
    table = []
    for a in alphas:
        cfg = replace(config, margins=replace(config.margins, alpha_t=a))
        state, _ = train(train_ds, val_ds, cfg)
        _, acc, _ = evaluate_split(state.net, test_ds)
        logger.info("alpha %.3f: test accuracy %.4f", a, acc)
        table.append((a, acc))
    if out_dir is not None:
        from .plots import line_plot_svg
        import csv
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "alpha_sweep.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["alpha", "accuracy"])
            for a, acc in table:
                w.writerow([repr(a), repr(acc)])
        pts = sorted(table)
        (out_dir / "alpha_sweep.svg").write_text(line_plot_svg(
            {"accuracy": pts}, "alpha_t", "test accuracy", "Accuracy vs alpha_t", x_range=(0, 1), y_range=(0, 1)))
    return table
