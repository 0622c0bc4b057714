"""ADAM fitting of the six denoiser parameters to recorded choices.

Training walks epochs of seeded-shuffled choice records, takes one ADAM
step per mini-batch on the batch-mean gradient, projects the parameters
back into their clamp box after every step, and logs one loss value and
one parameter vector per epoch. A stratified k-fold splitter provides the
train/validation/test roles, and a cross-evaluation helper scores saved
models against any user's held-out choices under the same loss variant.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backprop import GradientVector, backprop, forward_tape
from .errors import InputError, NumericError, ProtocolError
from .loss import LossVariant, batch_loss, candidate_errors, loss_gradient_weights
from .pyramid import DEFAULT_BOUNDS, NUM_LEVELS, ParamBounds, PyramidParams, denoise

_SALT_INIT = 17
_SALT_SHUFFLE = 19


@dataclass(frozen=True)
class AdamState:
    """First/second gradient moments plus the step counter."""

    m: tuple[float, ...]
    v: tuple[float, ...]
    t: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def initial(cls, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps_hat: float = 1e-8) -> "AdamState":
        zeros = (0.0,) * (2 * NUM_LEVELS)
        return cls(m=zeros, v=zeros, t=0, lr=lr, beta1=beta1, beta2=beta2,
                   eps_hat=eps_hat)


def clamp_params(params: PyramidParams, bounds: ParamBounds = DEFAULT_BOUNDS) -> PyramidParams:
    """Project the parameter vector into its clamp box, componentwise."""
    sigmas = tuple(
        min(max(s, bounds.sigma_min), bounds.sigma_max) for s in params.sigmas
    )
    epsilons = tuple(min(max(e, 0.0), bounds.eps_max) for e in params.epsilons)
    return PyramidParams(sigmas, epsilons)


def adam_step(
    state: AdamState,
    grad: GradientVector,
    params: PyramidParams,
    bounds: ParamBounds = DEFAULT_BOUNDS,
) -> tuple[AdamState, PyramidParams]:
    """One bias-corrected ADAM update followed by the bounds projection.

    Moments are not reset when the projection clips a component.
    """
    g = grad.as_vector()
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient: {g}")
    t = state.t + 1
    m = state.beta1 * np.asarray(state.m) + (1.0 - state.beta1) * g
    v = state.beta2 * np.asarray(state.v) + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    step = state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)
    new_params = clamp_params(
        PyramidParams.from_vector(params.as_vector() - step), bounds
    )
    new_state = replace(state, m=tuple(m), v=tuple(v), t=t)
    return new_state, new_params


def init_params(bounds: ParamBounds = DEFAULT_BOUNDS, seed=0) -> PyramidParams:
    """Uniform random start inside the clamp box; deterministic per seed."""
    rng = np.random.default_rng(seed)
    sigmas = tuple(rng.uniform(bounds.sigma_min, bounds.sigma_max) for _ in range(NUM_LEVELS))
    epsilons = tuple(rng.uniform(0.0, bounds.eps_max) for _ in range(NUM_LEVELS))
    return PyramidParams(sigmas, epsilons)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    lr: float = 1e-2
    batch_size: int = 50
    variant: LossVariant = LossVariant.HYBRID
    bounds: ParamBounds = DEFAULT_BOUNDS
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise InputError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")

    def config_hash(self) -> str:
        payload = json.dumps(
            {
                "epochs": self.epochs,
                "lr": self.lr,
                "batch_size": self.batch_size,
                "variant": self.variant.value,
                "bounds": [self.bounds.sigma_min, self.bounds.sigma_max, self.bounds.eps_max],
                "seed": self.seed,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("ascii")).hexdigest()[:12]


@dataclass
class ModelCheckpoint:
    """Trained parameters plus the per-epoch loss/parameter history."""

    params: PyramidParams
    variant: LossVariant
    user_id: str = ""
    train_loss_curve: list[float] = field(default_factory=list)
    param_trajectory: list[tuple[float, ...]] = field(default_factory=list)
    val_loss_curve: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    config_hash: str = ""
    split_id: str = ""


@dataclass(frozen=True)
class DataSplit:
    """Per-scenario fold index; roles rotate with the chosen fold id.

    Fold `fold_id` is the test set, the next fold is validation, and the
    remaining K-2 folds train. K=5 gives the 60/20/20 proportions.
    """

    folds: tuple[int, ...]
    num_folds: int
    seed: int = 0

    def role_indices(self, fold_id: int = 0) -> dict[str, list[int]]:
        if not 0 <= fold_id < self.num_folds:
            raise InputError(f"fold_id {fold_id} outside [0, {self.num_folds})")
        test_fold = fold_id
        val_fold = (fold_id + 1) % self.num_folds
        roles: dict[str, list[int]] = {"train": [], "val": [], "test": []}
        for idx, fold in enumerate(self.folds):
            if fold == test_fold:
                roles["test"].append(idx)
            elif fold == val_fold:
                roles["val"].append(idx)
            else:
                roles["train"].append(idx)
        return roles

    def split_id(self, fold_id: int = 0) -> str:
        return f"k{self.num_folds}-fold{fold_id}-seed{self.seed}"


def make_split(scenarios, k: int, strata, seed: int = 0) -> DataSplit:
    """Stratified k-fold assignment.

    `strata` is either a per-scenario label sequence or a callable mapping
    a scenario to its label. Members of each stratum are shuffled and
    dealt round-robin, carrying the fold pointer across strata so both
    per-stratum and total fold sizes stay within one of each other.
    """
    scenarios = list(scenarios)
    n = len(scenarios)
    if k < 3:
        raise InputError(f"need k >= 3 for train/val/test roles, got {k}")
    if n < k:
        raise InputError(f"need at least k={k} scenarios, got {n}")
    if callable(strata):
        labels = [strata(s) for s in scenarios]
    else:
        labels = list(strata)
        if len(labels) != n:
            raise InputError(
                f"strata length {len(labels)} != scenario count {n}"
            )
    groups: dict = {}
    for idx, label in enumerate(labels):
        groups.setdefault(label, []).append(idx)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 23]))
    folds = [0] * n
    pointer = 0
    for label in sorted(groups, key=str):
        members = groups[label]
        order = rng.permutation(len(members))
        for j in order:
            folds[members[j]] = pointer % k
            pointer += 1
    return DataSplit(folds=tuple(folds), num_folds=k, seed=int(seed))


def _output_resolver(resolve_scenario, params: PyramidParams, bounds: ParamBounds):
    """Adapt a frame_id -> CandidateSet resolver for batch_loss."""

    def resolve(frame_id):
        cset = resolve_scenario(frame_id)
        return denoise(cset.source, params, bounds), cset.candidates

    return resolve


def _record_gradient(record, resolve_scenario, params, variant, bounds) -> GradientVector:
    """Loss gradient for one choice: chain the per-candidate weights
    through d(error)/d(output) = 2*(output - candidate)/N into backprop."""
    cset = resolve_scenario(record.frame_id)
    output, tape = forward_tape(cset.source, params, bounds)
    errors = candidate_errors(output, cset.candidates)
    weights = loss_gradient_weights(errors, record.selected, variant)
    n_pixels = output.size
    d_output = np.zeros_like(output)
    for w, cand in zip(weights, cset.candidates):
        if w != 0.0:
            d_output += w * (2.0 / n_pixels) * (output - cand)
    return backprop(tape, d_output)


def train(
    records,
    resolve_scenario,
    config: TrainConfig,
    init: PyramidParams | None = None,
    val_records=None,
    user_id: str = "",
    split_id: str = "",
    progress=None,
) -> ModelCheckpoint:
    """Fit the parameters to the recorded choices.

    Per epoch: shuffle records with a seeded rng, step ADAM once per
    mini-batch on the batch-mean gradient, then log the full-train loss
    and the current parameters. When validation records are supplied, the
    checkpoint carries the parameters of the best validation epoch;
    otherwise it keeps the final ones (so evaluating the training records
    reproduces the last logged loss exactly).
    """
    records = list(records)
    if not records:
        raise InputError("no training records")
    bounds = config.bounds
    params = (init if init is not None
              else init_params(bounds, np.random.SeedSequence([config.seed, _SALT_INIT])))
    params = clamp_params(params, bounds).validate(bounds)
    state = AdamState.initial(config.lr)
    loss_curve: list[float] = []
    val_curve: list[float] = []
    trajectory: list[tuple[float, ...]] = []
    best_epoch = None
    best_val = np.inf
    best_params = params
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, _SALT_SHUFFLE, epoch])
        )
        order = rng.permutation(len(records))
        for start in range(0, len(order), config.batch_size):
            batch = [records[i] for i in order[start : start + config.batch_size]]
            total = np.zeros(2 * NUM_LEVELS)
            for rec in batch:
                total += _record_gradient(
                    rec, resolve_scenario, params, config.variant, bounds
                ).as_vector()
            mean_grad = GradientVector.from_vector(total / len(batch))
            state, params = adam_step(state, mean_grad, params, bounds)
        epoch_loss = batch_loss(
            records, _output_resolver(resolve_scenario, params, bounds), config.variant
        ).total
        loss_curve.append(float(epoch_loss))
        trajectory.append(tuple(float(x) for x in params.as_vector()))
        if val_records is not None:
            val_loss = batch_loss(
                val_records,
                _output_resolver(resolve_scenario, params, bounds),
                config.variant,
            ).total
            val_curve.append(val_loss)
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_params = params
        if progress is not None and (
            epoch % config.log_every == 0 or epoch == config.epochs
        ):
            progress(epoch, epoch_loss)
    final_params = best_params if val_records is not None else params
    return ModelCheckpoint(
        params=final_params,
        variant=config.variant,
        user_id=user_id,
        train_loss_curve=loss_curve,
        param_trajectory=trajectory,
        val_loss_curve=val_curve,
        best_epoch=best_epoch,
        config_hash=config.config_hash(),
        split_id=split_id,
    )


def evaluate(
    checkpoint: ModelCheckpoint,
    records,
    resolve_scenario,
    variant: LossVariant,
    bounds: ParamBounds = DEFAULT_BOUNDS,
) -> float:
    """Total loss of the checkpoint's parameters on held-out choices.

    Models are only comparable under the loss they were trained with, so
    a variant mismatch is a protocol violation, not a fallback.
    """
    if variant is not checkpoint.variant:
        raise ProtocolError(
            f"checkpoint trained with {checkpoint.variant.value!r} cannot be "
            f"evaluated with {variant.value!r}"
        )
    records = list(records)
    if not records:
        return 0.0
    return batch_loss(
        records, _output_resolver(resolve_scenario, checkpoint.params, bounds), variant
    ).total


CURVE_HEADER = "epoch,loss,sigma1,sigma2,sigma3,eps1,eps2,eps3"


def export_curves(checkpoint: ModelCheckpoint) -> str:
    """Per-epoch loss and parameter table as CSV text."""
    out = io.StringIO()
    out.write(CURVE_HEADER + "\n")
    for epoch, (loss, params) in enumerate(
        zip(checkpoint.train_loss_curve, checkpoint.param_trajectory), start=1
    ):
        values = ",".join(repr(float(v)) for v in (loss, *params))
        out.write(f"{epoch},{values}\n")
    return out.getvalue()


def save_checkpoint(checkpoint: ModelCheckpoint, path, curve_path=None) -> None:
    """Write the checkpoint JSON and its curve CSV next to it."""
    path = Path(path)
    if curve_path is None:
        curve_path = path.with_suffix(".curves.csv")
    curve_path = Path(curve_path)
    curve_path.write_text(export_curves(checkpoint), encoding="utf-8")
    payload = {
        "user_id": checkpoint.user_id,
        "variant": checkpoint.variant.value,
        "sigmas": list(checkpoint.params.sigmas),
        "epsilons": list(checkpoint.params.epsilons),
        "config_hash": checkpoint.config_hash,
        "split_id": checkpoint.split_id,
        "curve_path": curve_path.name,
        "best_epoch": checkpoint.best_epoch,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path) -> ModelCheckpoint:
    """Read a checkpoint JSON, restoring the curve CSV when present."""
    path = Path(path)
    obj = json.loads(path.read_text(encoding="utf-8"))
    checkpoint = ModelCheckpoint(
        params=PyramidParams(tuple(obj["sigmas"]), tuple(obj["epsilons"])),
        variant=LossVariant.parse(obj["variant"]),
        user_id=obj.get("user_id", ""),
        config_hash=obj.get("config_hash", ""),
        split_id=obj.get("split_id", ""),
        best_epoch=obj.get("best_epoch"),
    )
    curve_name = obj.get("curve_path")
    if curve_name:
        curve_file = path.parent / curve_name
        if curve_file.exists():
            lines = curve_file.read_text(encoding="utf-8").strip().splitlines()
            for line in lines[1:]:
                cells = line.split(",")
                checkpoint.train_loss_curve.append(float(cells[1]))
                checkpoint.param_trajectory.append(
                    tuple(float(c) for c in cells[2:8])
                )
    return checkpoint
