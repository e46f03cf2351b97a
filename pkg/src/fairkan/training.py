"""Adversarial debiasing pipeline over a coarse-to-fine grid schedule.

One run is: pretrain the classifier on plain cross-entropy, then for each
grid level (refining both networks past the first level) pretrain the
adversary against the frozen classifier and run T debias epochs in which
the classifier minimizes

    L_Y(f(x), y) - sum_j lambda_j * L_Z,j(g(sigmoid(f(x))), z_j) + reg

with gradients flowing through the frozen adversary.  After every debias
epoch the fairness penalties move toward the target p%-rule.  The epoch
records collected here are what the command-line layer streams to disk,
so everything in them must be JSON-safe and deterministically ordered.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DivergenceError, ShapeError
from .fairness import auroc, evaluate_fairness, make_controller, update_lambda
from .network import (
    KanNetwork,
    calibrate_grid_domains,
    init_network,
    refine_network,
    regularization,
    serialize,
)
from .optim import OptimizerState, apply_step, make_optimizer

__all__ = [
    "bce_loss",
    "TrainConfig",
    "TrainState",
    "derive_seed",
    "make_state",
    "evaluate_model",
    "composite_objective",
    "pretrain_classifier",
    "pretrain_adversary",
    "debias_epoch",
    "train",
]

DIVERGENCE_LIMIT = 1e6


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def derive_seed(base: int, label: str) -> int:
    """Stable per-purpose seed: sha256 over the base seed and a label."""
    digest = hashlib.sha256(f"{base}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def bce_loss(scores, targets):
    """Binary cross-entropy on raw scores, mean-reduced.

    Uses the overflow-free form max(s,0) - s*t + log(1 + exp(-|s|)).
    Returns ``(loss, grad)`` with grad = (sigmoid(s) - t) / len(s).
    """
    s = np.asarray(scores, dtype=float)
    t = np.asarray(targets, dtype=float)
    if s.shape != t.shape or s.ndim != 1:
        raise ShapeError(f"scores/targets must be equal 1-D, got {s.shape}/{t.shape}")
    loss = np.maximum(s, 0.0) - s * t + np.log1p(np.exp(-np.abs(s)))
    grad = (sigmoid(s) - t) / s.size
    return float(loss.mean()), grad


@dataclass
class TrainConfig:
    """Everything a run needs; widths include the input layer."""

    classifier_widths: list = field(default_factory=lambda: [10, 16, 8, 1])
    adversary_widths: list = field(default_factory=lambda: [1, 32, 2])
    order: int = 3
    grid_schedule: list = field(default_factory=lambda: [5, 10])
    clf_optimizer: str = "adam"
    clf_lr: float = 0.02
    adv_optimizer: str = "adam"
    adv_lr: float = 0.01
    beta1: float = 0.9
    beta2: float | None = None      # per-optimizer default when None
    epsilon: float = 1e-8
    adopt_clip: bool = False
    epochs: int = 30                # debias epochs per grid level (T)
    pretrain_epochs: int = 30
    adversary_epochs: int = 100
    batch_size: int = 256
    eta: float = 0.04
    tau: float = 90.0
    lambda_init: float = 0.5
    lambda_shared: bool = False
    lambda_split: str = "train"     # or "test": which split drives updates
    l1: float = 0.0
    l2: float = 1e-4
    seed: int = 0
    eval_every: int = 1
    alternating: bool = False
    calibrate: bool = True

    def validate(self):
        if len(self.grid_schedule) < 1:
            raise ConfigError("grid schedule must name at least one level")
        if any(b <= a for a, b in zip(self.grid_schedule, self.grid_schedule[1:])):
            raise ConfigError(f"grid schedule must increase: {self.grid_schedule}")
        if self.epochs < 1:
            raise ConfigError(f"epochs (T) must be >= 1, got {self.epochs}")
        if self.classifier_widths[-1] != 1:
            raise ConfigError("classifier output width must be 1")
        if self.adversary_widths[0] != 1:
            raise ConfigError("adversary input width must be 1")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pretrain_epochs < 0 or self.adversary_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.lambda_split not in ("train", "test"):
            raise ConfigError(f"lambda_split must be train/test, got {self.lambda_split}")


@dataclass
class TrainState:
    config: TrainConfig
    classifier: KanNetwork
    adversary: KanNetwork
    clf_opt: OptimizerState
    adv_opt: OptimizerState
    controller: LambdaController
    epoch: int = 0                        # global, across all phases
    grid_level: int = 0                   # current interval count
    history: list = field(default_factory=list)
    shuffle_rng: np.random.Generator | None = None
    pretrained_snapshot: bytes | None = None
    on_record: object = None              # callable(record) streaming hook


def _make_optimizers(cfg: TrainConfig, clf: KanNetwork, adv: KanNetwork):
    clf_opt = make_optimizer(
        cfg.clf_optimizer, clf.parameters(), cfg.clf_lr, cfg.beta1,
        cfg.beta2, cfg.epsilon,
        clip_updates=cfg.adopt_clip and cfg.clf_optimizer == "adopt",
    )
    adv_opt = make_optimizer(
        cfg.adv_optimizer, adv.parameters(), cfg.adv_lr, cfg.beta1,
        cfg.beta2, cfg.epsilon,
        clip_updates=cfg.adopt_clip and cfg.adv_optimizer == "adopt",
    )
    return clf_opt, adv_opt


def make_state(config: TrainConfig, n_features: int, n_attrs: int) -> TrainState:
    config.validate()
    if config.classifier_widths[0] != n_features:
        raise ConfigError(
            f"classifier input width {config.classifier_widths[0]} != "
            f"{n_features} data features"
        )
    if config.adversary_widths[-1] != n_attrs:
        raise ConfigError(
            f"adversary output width {config.adversary_widths[-1]} != "
            f"{n_attrs} sensitive attributes"
        )
    g0 = config.grid_schedule[0]
    clf = init_network(
        config.classifier_widths, g0, config.order,
        derive_seed(config.seed, "classifier"), domain=(-1.0, 1.0),
    )
    adv = init_network(
        config.adversary_widths, g0, config.order,
        derive_seed(config.seed, "adversary"), domain=(0.0, 1.0),
    )
    clf_opt, adv_opt = _make_optimizers(config, clf, adv)
    controller = make_controller(
        n_attrs, eta=config.eta, tau=config.tau, initial=config.lambda_init,
        shared=config.lambda_shared,
    )
    return TrainState(
        config=config, classifier=clf, adversary=adv,
        clf_opt=clf_opt, adv_opt=adv_opt, controller=controller,
        grid_level=g0,
        shuffle_rng=np.random.default_rng(derive_seed(config.seed, "shuffle")),
    )


def _guard(loss: float, phase: str, epoch: int):
    if not np.isfinite(loss) or abs(loss) > DIVERGENCE_LIMIT:
        raise DivergenceError(phase, epoch, loss)


def _batches(m: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(m)
    for start in range(0, m, batch_size):
        yield perm[start:start + batch_size]


def evaluate_model(classifier: KanNetwork, data: Dataset):
    """Full-split scores, loss, and fairness report for the classifier."""
    raw, _ = classifier.forward(data.features)
    loss_y, _ = bce_loss(raw[:, 0], data.labels)
    probs = sigmoid(raw[:, 0])
    report = evaluate_fairness(probs, data.labels, data.sensitive)
    return report, loss_y, probs


def _adversary_loss(adversary: KanNetwork, probs: np.ndarray, z: np.ndarray):
    raw, _ = adversary.forward(probs[:, None])
    losses, scores = [], []
    for j in range(z.shape[1]):
        lz, _ = bce_loss(raw[:, j], z[:, j])
        losses.append(lz)
        scores.append(auroc(sigmoid(raw[:, j]), z[:, j]))
    return losses, scores


def _record(state: TrainState, phase: str, split: str, report, loss_y,
            loss_z, adv_auroc=None, extra=None) -> dict:
    def clean(v):
        if v is None:
            return None
        v = float(v)
        return v if np.isfinite(v) else None

    rec = {
        "phase": phase,
        "grid_level": int(state.grid_level),
        "epoch": int(state.epoch),
        "split": split,
        "loss_y": clean(loss_y),
        "loss_z": None if loss_z is None else [clean(v) for v in loss_z],
        "lambda": [float(v) for v in state.controller.lambdas],
        "adv_auroc": None if adv_auroc is None else [clean(v) for v in adv_auroc],
    }
    rec.update(report.to_dict())
    if extra:
        rec.update(extra)
    state.history.append(rec)
    if state.on_record is not None:
        state.on_record(rec)
    return rec


def _emit_epoch(state: TrainState, phase: str, data: Dataset,
                eval_data: Dataset | None, with_adversary: bool):
    """Train-split record (always) plus a test-split record when available.

    Returns the train-split fairness report (the lambda controller feeds
    on it).
    """
    report, loss_y, probs = evaluate_model(state.classifier, data)
    loss_z = adv_scores = None
    if with_adversary:
        loss_z, adv_scores = _adversary_loss(state.adversary, probs, data.sensitive)
    _record(state, phase, "train", report, loss_y, loss_z, adv_scores)
    test_report = None
    if eval_data is not None:
        test_report, test_loss, test_probs = evaluate_model(state.classifier, eval_data)
        t_loss_z = t_adv = None
        if with_adversary:
            t_loss_z, t_adv = _adversary_loss(
                state.adversary, test_probs, eval_data.sensitive
            )
        _record(state, phase, "test", test_report, test_loss, t_loss_z, t_adv)
    return report, test_report


# ---------------------------------------------------------------------------
# Phases
# ---------------------------------------------------------------------------

def pretrain_classifier(state: TrainState, data: Dataset,
                        epochs: int | None = None,
                        eval_data: Dataset | None = None) -> TrainState:
    """Plain cross-entropy training of the classifier; no adversarial term."""
    cfg = state.config
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    x, y = data.features, data.labels
    clf = state.classifier
    for e in range(epochs):
        if cfg.calibrate:
            calibrate_grid_domains(clf, x[: min(len(x), 2048)])
        for idx in _batches(data.n_rows, cfg.batch_size, state.shuffle_rng):
            raw, cache = clf.forward(x[idx], want_cache=True)
            loss_y, gy = bce_loss(raw[:, 0], y[idx])
            _guard(loss_y, "pretrain_classifier", state.epoch)
            grads = clf.backward(cache, gy[:, None])
            if cfg.l1 or cfg.l2:
                _, reg_grads = regularization(clf, cfg.l1, cfg.l2)
                grads.add_scaled(reg_grads)
            apply_step(state.clf_opt, clf.parameters(), grads.to_list())
        if (e + 1) % cfg.eval_every == 0 or e == epochs - 1:
            _emit_epoch(state, "pretrain_classifier", data, eval_data,
                        with_adversary=False)
        state.epoch += 1
    return state


def pretrain_adversary(state: TrainState, data: Dataset,
                       epochs: int | None = None,
                       eval_data: Dataset | None = None) -> TrainState:
    """Train the adversary against the frozen classifier's probabilities."""
    cfg = state.config
    epochs = cfg.adversary_epochs if epochs is None else epochs
    raw, _ = state.classifier.forward(data.features)
    probs = sigmoid(raw[:, 0])[:, None]     # fixed for the phase: frozen clf
    z = data.sensitive
    adv = state.adversary
    if cfg.calibrate and epochs > 0:
        calibrate_grid_domains(adv, probs[: min(len(probs), 2048)])
    for e in range(epochs):
        for idx in _batches(data.n_rows, cfg.batch_size, state.shuffle_rng):
            out, cache = adv.forward(probs[idx], want_cache=True)
            ga = np.zeros_like(out)
            for j in range(z.shape[1]):
                lz, gz = bce_loss(out[:, j], z[idx, j])
                _guard(lz, "pretrain_adversary", state.epoch)
                ga[:, j] = gz
            grads = adv.backward(cache, ga)
            apply_step(state.adv_opt, adv.parameters(), grads.to_list())
        if (e + 1) % cfg.eval_every == 0 or e == epochs - 1:
            _emit_epoch(state, "pretrain_adversary", data, eval_data,
                        with_adversary=True)
        state.epoch += 1
    return state


def composite_objective(classifier: KanNetwork, adversary: KanNetwork,
                        lambdas, x, y, z, l1: float = 0.0, l2: float = 0.0,
                        adversary_grads: bool = False):
    """Debiasing objective and its exact classifier gradients.

    Computes total = L_Y - sum_j lambda_j L_Z,j + reg with the adversary
    reading the classifier's post-sigmoid output; classifier gradients flow
    through the (frozen) adversary.  Returns
    ``(total, loss_y, loss_z_list, clf_grads, adv_min_grads_or_None)`` —
    the last entry, when requested, minimizes sum_j L_Z,j (the adversary's
    own objective).
    """
    lam = np.asarray(lambdas, dtype=float)
    raw, ccache = classifier.forward(x, want_cache=True)
    probs = sigmoid(raw)
    out, acache = adversary.forward(probs, want_cache=True)
    loss_y, gy = bce_loss(raw[:, 0], np.asarray(y))
    loss_z = []
    ga = np.zeros_like(out)
    for j in range(out.shape[1]):
        lz, gz = bce_loss(out[:, j], np.asarray(z)[:, j])
        loss_z.append(lz)
        ga[:, j] = gz
    adv_back = adversary.backward(acache, -lam[None, :] * ga)
    dscore = gy[:, None] + adv_back.input_grad * probs * (1.0 - probs)
    clf_grads = classifier.backward(ccache, dscore)
    total = loss_y - float(np.dot(lam, loss_z))
    if l1 or l2:
        reg_loss, reg_grads = regularization(classifier, l1, l2)
        clf_grads.add_scaled(reg_grads)
        total += reg_loss
    adv_min = adversary.backward(acache, ga) if adversary_grads else None
    return total, loss_y, loss_z, clf_grads, adv_min


def debias_epoch(state: TrainState, data: Dataset,
                 eval_data: Dataset | None = None) -> TrainState:
    """One adversarial epoch followed by the fairness-penalty update."""
    cfg = state.config
    x, y, z = data.features, data.labels, data.sensitive
    clf, adv = state.classifier, state.adversary
    if cfg.calibrate:
        # Track activation drift; the adversary's grids are left alone here
        # (the freeze contract covers its parameters during debias).
        calibrate_grid_domains(clf, x[: min(len(x), 2048)])
    for idx in _batches(data.n_rows, cfg.batch_size, state.shuffle_rng):
        total, loss_y, loss_z, clf_grads, adv_min = composite_objective(
            clf, adv, state.controller.lambdas, x[idx], y[idx], z[idx],
            cfg.l1, cfg.l2, adversary_grads=cfg.alternating,
        )
        _guard(loss_y, "debias", state.epoch)
        for lz in loss_z:
            _guard(lz, "debias", state.epoch)
        _guard(total, "debias", state.epoch)
        apply_step(state.clf_opt, clf.parameters(), clf_grads.to_list())
        if cfg.alternating:
            apply_step(state.adv_opt, adv.parameters(), adv_min.to_list())
    train_report, test_report = _emit_epoch(
        state, "debias", data, eval_data, with_adversary=True
    )
    driving = train_report
    if cfg.lambda_split == "test":
        if eval_data is None:
            raise ConfigError("lambda_split=test requires evaluation data")
        driving = test_report
    update_lambda(state.controller, driving.p_rule)
    state.epoch += 1
    return state


def train(config: TrainConfig, data: Dataset,
          eval_data: Dataset | None = None,
          on_record=None) -> TrainState:
    """Run the full pipeline; returns the finished state with history.

    The classifier is pretrained once at the first grid level; each level
    then gets its own adversary pretraining and T debias epochs, with both
    networks carried to the next level by least-squares grid refinement.
    """
    state = make_state(config, data.n_features, data.n_sensitive)
    state.on_record = on_record
    cfg = config
    if cfg.calibrate:
        calibrate_grid_domains(
            state.classifier, data.features[: min(data.n_rows, 2048)]
        )
    pretrain_classifier(state, data, eval_data=eval_data)
    state.pretrained_snapshot = serialize(state.classifier)

    probe = data.features[: min(data.n_rows, 256)]
    for li, level in enumerate(cfg.grid_schedule):
        if li > 0:
            before, _ = state.classifier.forward(probe)
            state.classifier, clf_bound = refine_network(state.classifier, level)
            after, _ = state.classifier.forward(probe)
            shift = float(np.max(np.abs(after - before)))
            state.adversary, adv_bound = refine_network(state.adversary, level)
            state.clf_opt, state.adv_opt = _make_optimizers(
                cfg, state.classifier, state.adversary
            )
            state.grid_level = level
            report, loss_y, _ = evaluate_model(state.classifier, data)
            _record(
                state, "refine", "train", report, loss_y, None,
                extra={
                    "probe_shift": shift,
                    "refine_bound": clf_bound,
                    "adversary_refine_bound": adv_bound,
                },
            )
        pretrain_adversary(state, data, eval_data=eval_data)
        for _ in range(cfg.epochs):
            debias_epoch(state, data, eval_data=eval_data)
    return state
