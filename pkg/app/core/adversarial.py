"""
The adversarial game between a noise generator G and an identity classifier C.

Each outer iteration trains a freshly initialised classifier on locations
obfuscated by the current generator, then trains the generator against that
frozen classifier with

    Loss_G = alpha * softplus(empirical distortion, L) + beta * I(X;Y)

where I(X;Y) is the batch estimate computed from the classifier's
predictions. The generator sees (w_x, w_y, s) in normalized coordinates, with
one uniform seed s per sample, and outputs a displacement added to w.
"""

import math
import time
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator
from scipy.special import expit

from ..errors import ContractError
from ..utils.logging import get_logger, log_iteration
from ..utils.rng import SeedFanout
from .info_theory import BatchMats, batch_cross_entropy_grad, batch_mutual_info, batch_mutual_info_grad
from .mechanisms import PlanarLaplace, laplace_radius_quantile, parse_epsilon
from .model import DatasetSplits, Region
from .neural import (
    AdamState,
    Gradients,
    Mlp,
    TrainConfig,
    adam_step,
    backward,
    forward,
    glorot_init,
    one_hot_cross_entropy,
)

logger = get_logger(__name__)

GeneratorLossMode = Literal["mutual_info", "cross_entropy_unsound"]

SPIRAL_TURNS = 5
MIN_SAMPLES_PER_CLASS = 16


class GameConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    L: float = Field(gt=0.0, description="Distortion budget in meters")
    alpha: float = Field(default=1.0, ge=0.0, description="Weight of the utility penalty")
    beta: float = Field(default=2.0, ge=0.0, description="Weight of the privacy term")
    gen_cfg: TrainConfig = TrainConfig(batch_size=128, epochs=100, learning_rate=1e-4)
    clf_cfg: TrainConfig = TrainConfig(batch_size=512, epochs=3000, learning_rate=1e-3)
    max_iterations: PositiveInt = 200
    stop_delta: float = Field(default=0.02, gt=0.0, lt=0.5)
    stop_patience: PositiveInt = 3
    seeds_per_location: PositiveInt = 10
    generator_loss_mode: GeneratorLossMode = "mutual_info"
    generator_hidden: Tuple[int, ...] = (100, 100, 100)
    classifier_hidden: Tuple[int, ...] = (60, 100, 51)
    warm_start_epsilon: Optional[float] = Field(default=None, gt=0.0, description="Laplace epsilon G0 imitates")
    warm_start_cfg: TrainConfig = TrainConfig(batch_size=128, epochs=30, learning_rate=1e-3)
    budget_slack: float = Field(default=0.05, ge=0.0)
    checkpoint_every: int = Field(default=10, ge=0)
    proximal_radius_m: Optional[float] = Field(
        default=None, gt=0.0, description="Scale of the per-iteration move of G away from G_{i-1}, in meters"
    )
    target_accuracy: Optional[float] = Field(
        default=None, gt=0.0, lt=1.0, description="Validation accuracy the stop rule aims at (chance if unset)"
    )

    @field_validator("warm_start_epsilon", mode="before")
    @classmethod
    def _parse_epsilon(cls, value):
        return None if value is None else parse_epsilon(value)


class IterationLog(BaseModel):
    """
    Metrics of one outer iteration i.

    Accuracies are those of C_i on data obfuscated by G_{i-1}; mi_nats is the
    batch MI between identities and C_i's predictions on the validation split;
    distortion_m is the empirical test-split distortion of G_{i-1}.
    """

    model_config = ConfigDict(frozen=True)

    iteration: int = Field(ge=1)
    acc_train: float = Field(ge=0.0, le=1.0)
    acc_val: float = Field(ge=0.0, le=1.0)
    acc_test: float = Field(ge=0.0, le=1.0)
    mi_nats: float
    distortion_m: float = Field(ge=0.0)
    seconds: float = Field(ge=0.0)


class GameResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    generator: Mlp
    logs: List[IterationLog]
    converged: bool
    best_iteration: int


class GeneratorBatch(BaseModel):
    """Original locations (normalized), their seeds and class labels."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    w: np.ndarray
    seeds: np.ndarray
    labels: np.ndarray
    num_classes: int
    meters_per_unit: float = Field(gt=0.0)


def generator_inputs(w: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    return np.column_stack([w, seeds])


def generate(gen: Mlp, w: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Reported locations (normalized) for true locations `w` and seeds in [0, 1)."""
    return w + forward(gen, generator_inputs(w, seeds))


class GeneratorObfuscator:
    """Adapts a trained generator to the metric-coordinate Obfuscator interface."""

    name = "ours"

    def __init__(self, generator: Mlp, region: Region):
        self.generator = generator
        self.region = region

    def obfuscate(self, xy: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        w = self.region.normalize(xy)
        return self.region.denormalize(generate(self.generator, w, rng.random(len(w))))


def softplus_penalty(measured: float, L: float) -> float:
    """ln(1 + e^(measured - L)), evaluated without overflow."""
    return float(np.logaddexp(0.0, measured - L))


def _check_budget_batch(batch_size: int, num_classes: int) -> None:
    if batch_size < MIN_SAMPLES_PER_CLASS * num_classes:
        raise ContractError(
            f"generator batch size {batch_size} is below {MIN_SAMPLES_PER_CLASS} samples per class "
            f"({MIN_SAMPLES_PER_CLASS * num_classes} for {num_classes} classes)"
        )


def proximal_penalty(displacement: np.ndarray, anchored: np.ndarray, meters_per_unit: float,
                     radius_m: float) -> Tuple[float, np.ndarray]:
    """
    Mean squared move (in m^2) away from the anchor's displacements, over radius_m^2.

    Returns the penalty and its gradient with respect to `displacement`.
    """
    delta = displacement - anchored
    scale = meters_per_unit ** 2 / radius_m ** 2
    value = scale * float((delta ** 2).sum(axis=1).mean())
    return value, 2.0 * scale * delta / len(delta)


def generator_loss(gen: Mlp, clf: Mlp, batch: GeneratorBatch, cfg: GameConfig,
                   anchor: Optional[Mlp] = None) -> Tuple[float, Gradients]:
    """
    Loss_G on one batch and its gradients with respect to the generator.

    The classifier is frozen: its parameters only shape the gradient that
    flows back into the generator through the reported locations. With an
    `anchor` generator and cfg.proximal_radius_m set, the proximal penalty
    keeps the displacements close to the anchor's on the same inputs.
    """
    n = len(batch.labels)
    if len(np.unique(batch.labels)) < 2:
        logger.warning("Generator batch holds a single class, privacy term is zero", extra={"batch_size": n})

    inputs = generator_inputs(batch.w, batch.seeds)
    displacement = forward(gen, inputs)
    z = batch.w + displacement
    q = forward(clf, z)
    mats = BatchMats.from_labels(batch.labels, q)

    if cfg.generator_loss_mode == "mutual_info":
        privacy, d_q = batch_mutual_info_grad(mats)
    else:
        # Maximising the classifier's cross entropy is the unsound alternative objective.
        ce, d_ce = batch_cross_entropy_grad(mats)
        privacy, d_q = -ce, -d_ce

    norms = np.linalg.norm(displacement, axis=1)
    distortion = batch.meters_per_unit * norms.mean()
    utility = softplus_penalty(distortion, cfg.L)
    d_distortion = np.zeros_like(displacement)
    moved = norms > 0.0
    d_distortion[moved] = batch.meters_per_unit * displacement[moved] / norms[moved, None] / n

    d_z = np.zeros_like(z)
    if cfg.beta > 0.0:
        d_z += backward(clf, z, cfg.beta * d_q).inputs
    if cfg.alpha > 0.0:
        d_z += cfg.alpha * expit(distortion - cfg.L) * d_distortion

    loss = cfg.alpha * utility + cfg.beta * privacy
    if anchor is not None and cfg.proximal_radius_m is not None:
        proximal, d_proximal = proximal_penalty(displacement, forward(anchor, inputs), batch.meters_per_unit,
                                                cfg.proximal_radius_m)
        loss += proximal
        d_z += d_proximal

    grads = backward(gen, inputs, d_z)
    return loss, grads


def stratified_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator,
                       min_batch: int = 1) -> List[np.ndarray]:
    """
    Shuffled index batches in which every class is spread evenly.

    Each sample gets the key (rank within its shuffled class + jitter) / class
    size; sorting by that key interleaves the classes proportionally. A
    trailing batch smaller than `min_batch` is merged into its predecessor.
    """
    keys = np.empty(len(labels))
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        keys[members] = (np.arange(len(members)) + rng.random(len(members))) / len(members)
    order = np.argsort(keys, kind="stable")
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_batch:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def train_generator(gen: Mlp, clf: Mlp, w: np.ndarray, labels: np.ndarray, num_classes: int,
                    cfg: GameConfig, rng: np.random.Generator, meters_per_unit: float) -> Tuple[Mlp, float]:
    """
    Train G against the frozen classifier for gen_cfg.epochs epochs; returns (G, last batch loss).
    The incoming generator is the proximal anchor when cfg.proximal_radius_m is set.
    """
    train_cfg = cfg.gen_cfg
    anchor = gen if cfg.proximal_radius_m is not None else None
    state = AdamState.zeros_like(gen)
    loss = float("nan")
    for _ in range(train_cfg.epochs):
        for idx in stratified_batches(labels, train_cfg.batch_size, rng, MIN_SAMPLES_PER_CLASS * num_classes):
            batch = GeneratorBatch(w=w[idx], seeds=rng.random(len(idx)), labels=labels[idx],
                                   num_classes=num_classes, meters_per_unit=meters_per_unit)
            loss, grads = generator_loss(gen, clf, batch, cfg, anchor)
            gen, state = adam_step(gen, grads, state, train_cfg.learning_rate,
                                   train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    return gen, loss


def fit_classifier(clf: Mlp, inputs: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                   rng: np.random.Generator) -> Mlp:
    """Mini-batch Adam on the mean cross entropy against one-hot targets."""
    state = AdamState.zeros_like(clf)
    labels = np.asarray(labels, dtype=int)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, d_q = one_hot_cross_entropy(forward(clf, inputs[idx]), labels[idx])
            grads = backward(clf, inputs[idx], d_q)
            clf, state = adam_step(clf, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return clf


def train_classifier(clf0: Mlp, points: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                     rng: np.random.Generator) -> Mlp:
    """
    Train a freshly initialised classifier on obfuscated points (normalized coordinates).
    Args:
        clf0: Untrained classifier with a softmax head
        points: (N, 2) obfuscated locations
        labels: (N,) class ids
        cfg: Training schedule
        rng: Stream used for shuffling
    """
    if clf0.head != "softmax":
        raise ContractError("the classifier needs a softmax head")
    if len(points) != len(labels) or len(labels) == 0:
        raise ContractError("points and labels must be non-empty and of equal length")
    return fit_classifier(clf0, np.asarray(points, dtype=float), labels, cfg, rng)


def predict_labels(clf: Mlp, points: np.ndarray) -> np.ndarray:
    """Arg-max predictions; ties go to the lowest class index."""
    return forward(clf, points).argmax(axis=1)


def classifier_accuracy(clf: Mlp, points: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict_labels(clf, points) == np.asarray(labels)))


def spiral_laplace_targets(epsilon: float, seeds: np.ndarray, meters_per_unit: float) -> np.ndarray:
    """Deterministic displacement per seed whose radial law is the planar Laplace one."""
    radius = laplace_radius_quantile(PlanarLaplace(epsilon=epsilon), seeds) / meters_per_unit
    theta = 2.0 * math.pi * np.mod(SPIRAL_TURNS * seeds, 1.0)
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])


def warm_start_generator(gen: Mlp, w: np.ndarray, epsilon: float, cfg: TrainConfig,
                         rng: np.random.Generator, meters_per_unit: float) -> Mlp:
    """Regress the generator's displacement onto spiral Laplace targets (squared error)."""
    state = AdamState.zeros_like(gen)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(w))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            seeds = rng.random(len(idx))
            inputs = generator_inputs(w[idx], seeds)
            residual = forward(gen, inputs) - spiral_laplace_targets(epsilon, seeds, meters_per_unit)
            grads = backward(gen, inputs, residual / len(idx))
            gen, state = adam_step(gen, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return gen


def empirical_distortion_normalized(gen: Mlp, w: np.ndarray, seeds: np.ndarray, meters_per_unit: float) -> float:
    return float(meters_per_unit * np.linalg.norm(forward(gen, generator_inputs(w, seeds)), axis=1).mean())


IterationCallback = Callable[[IterationLog, Mlp], None]


def run_game(splits: DatasetSplits, cfg: GameConfig, fanout: SeedFanout,
             on_iteration: Optional[IterationCallback] = None) -> GameResult:
    """
    Alternate classifier and generator training with classifier reset.

    Iteration i trains C_i from a fresh Glorot draw on G_{i-1}'s output and
    measures it on all splits. The run converges once the validation
    accuracy stays within stop_delta of the target (chance unless
    cfg.target_accuracy is set) for stop_patience consecutive
    iterations while G_{i-1} keeps the test distortion within the budget
    slack; G_{i-1} is then returned. Otherwise G_i is trained against C_i and
    the loop continues until max_iterations, after which the best validated
    generator is returned with converged=False.
    """
    train = splits.train
    num_classes = train.num_classes
    region = train.region
    meters_per_unit = region.half_side
    _check_budget_batch(cfg.gen_cfg.batch_size, num_classes)
    budget = cfg.L * (1.0 + cfg.budget_slack)
    target = cfg.target_accuracy if cfg.target_accuracy is not None else 1.0 / num_classes
    k = cfg.seeds_per_location

    gen = glorot_init([3, *cfg.generator_hidden, 2], seed=fanout.seed("init-G"), head="linear")
    if cfg.warm_start_epsilon is not None:
        gen = warm_start_generator(gen, train.normalized_xy(), cfg.warm_start_epsilon, cfg.warm_start_cfg,
                                   fanout.stream("warm-start"), meters_per_unit)

    replicated = {
        name: (np.repeat(splits.by_name(name).normalized_xy(), k, axis=0),
               np.repeat(splits.by_name(name).class_ids, k))
        for name in ("train", "val", "test")
    }
    w_train, y_train = train.normalized_xy(), train.class_ids

    logs: List[IterationLog] = []
    best: Optional[Tuple[float, int, Mlp]] = None
    streak = 0
    for i in range(1, cfg.max_iterations + 1):
        started = time.perf_counter()
        rng = fanout.stream("train-C", i)
        clf0 = glorot_init([2, *cfg.classifier_hidden, num_classes], seed=fanout.seed("init-C", i), head="softmax")
        obfuscated = {
            name: generate(gen, points, rng.random(len(points)))
            for name, (points, _) in replicated.items()
        }
        clf = train_classifier(clf0, obfuscated["train"], replicated["train"][1], cfg.clf_cfg, rng)
        accuracy = {name: classifier_accuracy(clf, obfuscated[name], replicated[name][1]) for name in obfuscated}
        mi = batch_mutual_info(BatchMats.from_labels(replicated["val"][1], forward(clf, obfuscated["val"])))
        test_points = replicated["test"][0]
        distortion = float(meters_per_unit * np.linalg.norm(obfuscated["test"] - test_points, axis=1).mean())

        within_budget = distortion <= budget
        if within_budget and (best is None or accuracy["val"] < best[0]):
            best = (accuracy["val"], i, gen)
        streak = streak + 1 if within_budget and accuracy["val"] <= target + cfg.stop_delta else 0
        stop = streak >= cfg.stop_patience

        if not stop:
            gen, _ = train_generator(gen, clf, w_train, y_train, num_classes, cfg,
                                     fanout.stream("train-G", i), meters_per_unit)
            gen = gen.model_copy(update={"iteration": i})

        entry = IterationLog(
            iteration=i,
            acc_train=accuracy["train"],
            acc_val=accuracy["val"],
            acc_test=accuracy["test"],
            mi_nats=mi,
            distortion_m=distortion,
            seconds=time.perf_counter() - started,
        )
        logs.append(entry)
        log_iteration(entry)
        if on_iteration is not None:
            on_iteration(entry, gen)
        if stop:
            logger.info("Adversarial game converged", extra={"iteration": i, "acc_val": accuracy["val"]})
            return GameResult(generator=gen, logs=logs, converged=True,
                              best_iteration=i)

    logger.warning(
        "Adversarial game reached its iteration budget without converging",
        extra={"max_iterations": cfg.max_iterations, "best_iteration": best[1] if best else None},
    )
    if best is None:
        return GameResult(generator=gen, logs=logs, converged=False, best_iteration=cfg.max_iterations)
    return GameResult(generator=best[2], logs=logs, converged=False, best_iteration=best[1])
