"""Student/teacher training on same-subject strip pairs, without augmentation or negatives.

The student path is encoder -> projector -> predictor; the teacher path is
encoder -> projector with weights tracking the student by an exponential
moving average after every batch. The loss is one minus the cosine
similarity between the student prediction for one strip and the teacher
projection of another strip from the same subject.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import vit1d
from .autodiff import ShapeMismatch, Tensor, as_tensor, gelu, gradients, maximum, no_grad, sqrt
from .io.strips import Strip, SubjectIndex, stack_values
from .vit1d import ModelConfig

log = logging.getLogger(__name__)


class NoValidPair(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class HeadConfig:
    projector_hidden: int | None = None  # None -> 2 * model_dim
    projector_out: int = 64
    predictor_hidden: int | None = None  # None -> 2 * model_dim
    predictor_out: int = 64

    def resolved(self, model_dim: int) -> "HeadConfig":
        return HeadConfig(
            projector_hidden=self.projector_hidden or 2 * model_dim,
            projector_out=self.projector_out,
            predictor_hidden=self.predictor_hidden or 2 * model_dim,
            predictor_out=self.predictor_out,
        )


@dataclass(frozen=True)
class SSLConfig:
    tau: float = 0.995
    eps: float = 1e-8
    symmetrize: bool = True
    prefer_different_records: bool = True

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    eval_every: int = 500
    eval_max_strips: int = 15000


# -- heads ----------------------------------------------------------------------------


def head_shapes(model_dim: int, heads: HeadConfig) -> dict[str, tuple[int, ...]]:
    h = heads.resolved(model_dim)
    return {
        "projector.fc1.weight": (model_dim, h.projector_hidden),
        "projector.fc1.bias": (h.projector_hidden,),
        "projector.fc2.weight": (h.projector_hidden, h.projector_out),
        "projector.fc2.bias": (h.projector_out,),
        "predictor.fc1.weight": (h.projector_out, h.predictor_hidden),
        "predictor.fc1.bias": (h.predictor_hidden,),
        "predictor.fc2.weight": (h.predictor_hidden, h.predictor_out),
        "predictor.fc2.bias": (h.predictor_out,),
    }


def init_heads(model_dim: int, heads: HeadConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        name: np.zeros(shape) if name.endswith(".bias") else vit1d.truncated_normal(rng, shape)
        for name, shape in head_shapes(model_dim, heads).items()
    }


def mlp(x: Tensor, params: Mapping, prefix: str) -> Tensor:
    p = {k: as_tensor(params[prefix + k]) for k in ("fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias")}
    return gelu(x @ p["fc1.weight"] + p["fc1.bias"]) @ p["fc2.weight"] + p["fc2.bias"]


# -- loss and EMA ---------------------------------------------------------------------------


def cosine_loss(x1, x2, eps: float = 1e-8) -> Tensor:
    """Row-wise ``1 - x1.x2 / max(|x1| |x2|, eps)`` over the last axis."""
    x1, x2 = as_tensor(x1), as_tensor(x2)
    if x1.shape[-1] != x2.shape[-1]:
        raise DimensionMismatch(f"vector dimensions differ: {x1.shape[-1]} vs {x2.shape[-1]}")
    dot = (x1 * x2).sum(axis=-1)
    norms = sqrt((x1 * x1).sum(axis=-1)) * sqrt((x2 * x2).sum(axis=-1))
    return 1.0 - dot / maximum(norms, eps)


def sbncl_loss(x1, x2, eps: float = 1e-8) -> float:
    x1, x2 = np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise DimensionMismatch(f"vector shapes differ: {x1.shape} vs {x2.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    with no_grad():
        return float(cosine_loss(x1, x2, eps).data)


def ema_update(teacher: Mapping[str, np.ndarray], student: Mapping[str, np.ndarray], tau: float) -> dict[str, np.ndarray]:
    """``tau * teacher + (1 - tau) * student`` for every teacher tensor."""
    out = {}
    for name, xi in teacher.items():
        theta = student[name]
        if xi.shape != theta.shape:
            raise ShapeMismatch(f"tensor {name!r}: teacher shape {xi.shape} != student shape {theta.shape}")
        out[name] = tau * xi + (1.0 - tau) * theta
    return out


# -- pair sampling ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PairSample:
    strip_a: Strip
    strip_b: Strip
    prefer_different_records: bool = True


def sample_pair(
    index: SubjectIndex, strips: Sequence[Strip], rng: np.random.Generator, prefer_different_records: bool = True
) -> PairSample:
    """Two distinct strips of one uniformly chosen subject, across cycles/records when possible."""
    eligible = [s for s, refs in index.entries.items() if len(refs) >= 2]
    if not eligible:
        raise NoValidPair("no subject has two or more strips")
    refs = index.entries[eligible[int(rng.integers(len(eligible)))]]

    groups: dict = {}
    if prefer_different_records:
        cycles = {r.cycle for r in refs}
        key = (lambda r: r.cycle) if {1, 2} <= cycles else (lambda r: r.record_id)
        for r in refs:
            groups.setdefault(key(r), []).append(r)
    if len(groups) >= 2:
        names = list(groups)
        ga, gb = rng.choice(len(names), size=2, replace=False)
        a = groups[names[ga]][int(rng.integers(len(groups[names[ga]])))]
        b = groups[names[gb]][int(rng.integers(len(groups[names[gb]])))]
    else:
        ia, ib = rng.choice(len(refs), size=2, replace=False)
        a, b = refs[ia], refs[ib]
    return PairSample(strips[a.position], strips[b.position], prefer_different_records)


def sample_batch(index, strips, batch_size: int, rng: np.random.Generator, prefer_different_records: bool = True):
    return [sample_pair(index, strips, rng, prefer_different_records) for _ in range(batch_size)]


# -- trainer state ------------------------------------------------------------------------------


@dataclass
class TrainerState:
    model: ModelConfig
    heads: HeadConfig
    student: dict[str, np.ndarray]
    teacher: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    iteration: int = 0
    tau: float = 0.995
    eps: float = 1e-8
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    symmetrize: bool = True

    def encoder_params(self, which: str = "student") -> dict[str, np.ndarray]:
        src = self.student if which == "student" else self.teacher
        return {k: src[k] for k in vit1d.param_shapes(self.model)}

    def metadata(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "heads": asdict(self.heads),
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "symmetrize": self.symmetrize,
        }


def init_state(model: ModelConfig, heads: HeadConfig, ssl: SSLConfig, train: TrainConfig) -> TrainerState:
    heads = heads.resolved(model.model_dim)
    student = vit1d.init_params(model, train.seed)
    student.update(init_heads(model.model_dim, heads, np.random.default_rng([train.seed, 1])))
    if sum(v.size for k, v in student.items() if not k.startswith(("projector.", "predictor."))) != vit1d.param_count(model):
        raise AssertionError("encoder tensor sizes disagree with the closed-form parameter count")
    teacher = {k: v.copy() for k, v in student.items() if not k.startswith("predictor.")}
    return TrainerState(
        model=model,
        heads=heads,
        student=student,
        teacher=teacher,
        adam_m={k: np.zeros_like(v) for k, v in student.items()},
        adam_v={k: np.zeros_like(v) for k, v in student.items()},
        iteration=0,
        tau=ssl.tau,
        eps=ssl.eps,
        seed=train.seed,
        lr=train.lr,
        beta1=train.beta1,
        beta2=train.beta2,
        adam_eps=train.adam_eps,
        symmetrize=ssl.symmetrize,
    )


def projection(values: np.ndarray, params: Mapping, model: ModelConfig) -> Tensor:
    return mlp(vit1d.forward(values, params, model), params, "projector.")


def adam_update(state: TrainerState, grads: Mapping[str, np.ndarray]) -> None:
    t = state.iteration + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for name, g in grads.items():
        m = state.adam_m[name] = b1 * state.adam_m[name] + (1.0 - b1) * g
        v = state.adam_v[name] = b2 * state.adam_v[name] + (1.0 - b2) * (g * g)
        state.student[name] = state.student[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.adam_eps)


def train_step(state: TrainerState, batch: Sequence[PairSample]) -> tuple[TrainerState, float]:
    """One optimizer update of the student, then one EMA update of the teacher."""
    if not batch:
        raise ValueError("empty batch")
    a = stack_values([p.strip_a for p in batch])
    b = stack_values([p.strip_b for p in batch])
    if state.symmetrize:
        online, target_in = np.concatenate([a, b]), np.concatenate([b, a])
    else:
        online, target_in = a, b

    with no_grad():
        target = projection(target_in, state.teacher, state.model).data

    def objective(params):
        pred = mlp(projection(online, params, state.model), params, "predictor.")
        return cosine_loss(pred, target, state.eps).mean()

    loss, grads = gradients(objective, state.student)
    adam_update(state, grads)
    state.teacher = ema_update(state.teacher, state.student, state.tau)
    state.iteration += 1
    return state, float(loss)


def embed(values: np.ndarray, encoder: Mapping, model: ModelConfig, batch_size: int = 256) -> np.ndarray:
    """Encoder representations for ``values`` of shape ``(n, input_len)``."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty((values.shape[0], model.model_dim))
    with no_grad():
        for i in range(0, values.shape[0], batch_size):
            out[i : i + batch_size] = vit1d.forward(values[i : i + batch_size], encoder, model).data
    return out


# -- training loop --------------------------------------------------------------------------------

EvalHook = Callable[[TrainerState], float]


@dataclass
class TrainResult:
    state: TrainerState
    losses: list[float] = field(default_factory=list)
    metric_curve: list[tuple[int, float]] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def gender_probe_hook(strips: Sequence[Strip], max_strips: int, seed: int, folds: int = 10, k: int = 5) -> EvalHook | None:
    """10-fold KNN gender accuracy on a fixed random subset of labeled strips."""
    from .evaluation import run_gender_probe

    labeled = [s for s in strips if s.labels.gender is not None]
    if len(labeled) < folds:
        return None
    rng = np.random.default_rng([seed, 2])
    pick = np.sort(rng.choice(len(labeled), size=min(max_strips, len(labeled)), replace=False))
    values = stack_values([labeled[i] for i in pick])
    genders = np.array([labeled[i].labels.gender for i in pick])

    def hook(state: TrainerState) -> float:
        emb = embed(values, state.encoder_params(), state.model)
        return run_gender_probe(emb, genders, seed=seed, folds=folds, k=k).aggregate["accuracy"]

    return hook


def train(
    model: ModelConfig,
    heads: HeadConfig,
    ssl: SSLConfig,
    config: TrainConfig,
    strips: Sequence[Strip],
    out_dir: str | os.PathLike | None = None,
    eval_hook: EvalHook | str | None = "gender",
    state: TrainerState | None = None,
) -> TrainResult:
    """Run ``config.iterations`` steps; a batch for iteration ``i`` is drawn from ``rng([seed, i])``."""
    from .checkpoint import checkpoint_save

    index = SubjectIndex.from_strips(strips)
    state = state or init_state(model, heads, ssl, config)
    if eval_hook == "gender":
        eval_hook = gender_probe_hook(strips, config.eval_max_strips, config.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    result = TrainResult(state=state)
    while state.iteration < config.iterations:
        rng = np.random.default_rng([config.seed, state.iteration])
        batch = sample_batch(index, strips, config.batch_size, rng, ssl.prefer_different_records)
        state, loss = train_step(state, batch)
        result.losses.append(loss)
        it = state.iteration
        if eval_hook is not None and config.eval_every and it % config.eval_every == 0:
            metric = float(eval_hook(state))
            result.metric_curve.append((it, metric))
            log.info("iteration %d loss %.5f probe %.4f", it, loss, metric)
        if out is not None and config.checkpoint_every and it % config.checkpoint_every == 0:
            path = out / f"checkpoint_{it:06d}.sbnc"
            checkpoint_save(state, path)
            result.checkpoints.append(path)

    if out is not None:
        final = out / "final.sbnc"
        checkpoint_save(state, final)
        result.checkpoints.append(final)
        write_curve(out / "metrics.csv", result.metric_curve, "gender_accuracy")
        write_curve(out / "loss.csv", list(enumerate(result.losses, start=1)), "loss")
    return result


def write_curve(path: str | os.PathLike, rows, metric: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", metric])
        for it, value in rows:
            w.writerow([it, repr(float(value))])


# -- gradient check ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict[str, float]
    n_scalars: int


def gradcheck_model(
    model_dim: int = 8,
    n_blocks: int = 1,
    input_len: int = 40,
    patch_size: int = 20,
    n_heads: int = 1,
    batch: int = 3,
    seed: int = 0,
    step: float = 1e-5,
    floor_rel: float = 1e-4,
) -> GradCheckResult:
    """Central-difference check of the full student objective on a small random model.

    Weights are drawn with std 0.5 rather than the training init so that
    gradients sit well above roundoff. Some entries are exactly zero (the key
    bias cannot change a softmax), so relative errors are floored at
    ``floor_rel`` times the largest gradient magnitude.
    """
    from .autodiff import grad_check

    model = ModelConfig(input_len=input_len, patch_size=patch_size, model_dim=model_dim, n_blocks=n_blocks, n_heads=n_heads)
    heads = HeadConfig(projector_out=model_dim, predictor_out=model_dim).resolved(model_dim)
    rng = np.random.default_rng(seed)
    shapes = {**vit1d.param_shapes(model), **head_shapes(model_dim, heads)}
    params = {k: rng.normal(0.0, 0.5, size=s) for k, s in shapes.items()}
    for k in params:
        if k.endswith(("ln1.weight", "ln2.weight", "norm.weight")):
            params[k] = 1.0 + 0.1 * rng.standard_normal(params[k].shape)
    online = rng.standard_normal((batch, input_len))
    target = rng.standard_normal((batch, model_dim))

    def objective(p):
        pred = mlp(projection(online, p, model), p, "predictor.")
        return cosine_loss(pred, target, 1e-8).mean()

    _, grads = gradients(objective, params)
    floor = floor_rel * max(float(np.abs(g).max()) for g in grads.values())
    per_tensor = {name: grad_check(objective, params, step=step, names=[name], floor=floor) for name in params}
    return GradCheckResult(max(per_tensor.values()), per_tensor, sum(v.size for v in params.values()))
