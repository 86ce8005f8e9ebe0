"""Two-stage bi-level training loop with eigenmode-conditioned decoupling.

Each step works on one mini-batch of videos (``rho`` strided views per
video):

1. Embed all views with the current encoder, estimate a one-step operator per
   view, eigendecompose, and pool every dynamic mode into ``Phi_dy``.
2. Inner stage: one or more gradient steps on the backdoor-adjusted
   contrastive loss (modes held fixed), yielding ``theta*``.
3. Outer stage: update ``theta`` along (an approximation of) the gradient of
   ``L_contrastive(theta*) + nu * L_dynamic(theta*)``.  ``first_order``
   ignores the inner dependence; ``finite_difference`` applies the two-point
   Hessian-vector correction with perturbation ``fd_epsilon / ||grad||``.

Disabling the bi-level machinery (``bold_di = False``) degenerates to plain
gradient descent on the contrastive loss; ``single_level = True`` instead
minimizes all three losses jointly in one step.

When a batch yields no dynamic modes the inner stage falls back to the plain
contrastive loss and the step is counted in ``backdoor_skipped``.

RNG protocol (reproducibility): parameter init uses seed ``[seed, 11]``,
epoch shuffling ``[seed, 13, epoch]``, and view sampling for batch slot ``j``
at step ``k`` uses ``[seed, 17, k, j]``.  All artifacts are byte-stable given
the config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import configio
from .autodiff import grad_and_value, sqrt, value_of
from .batch import BatchEmbeddings
from .encoder import (
    Checkpoint,
    EncoderParams,
    _mlp,
    copy_params,
    embed_frames,
    flatten_params,
    init_params,
    save_checkpoint,
    unflatten_params,
)
from .errors import InvalidInputError, NumericalFailureError
from .koopman import KoopmanEstimate, estimate_koopman, prediction_loss
from .objectives import SimilarityConfig, batch_contrastive_loss, momentum_update
from .static_objective import backdoor_loss
from .stratify import dynamic_modes, stratify
from .synth import Clip, sample_views

HYPERGRAD_MODES = ("finite_difference", "first_order")

METRIC_COLUMNS = (
    "step",
    "L_ct_do",
    "L_cl",
    "L_dynamic",
    "total",
    "J",
    "backdoor_skipped",
    "grad_norm",
)


@dataclass
class TrainerConfig:
    variant: str = "simclr"
    bold_di: bool = True
    single_level: bool = False
    nu: float = 0.1
    lr: float = 0.1
    inner_steps: int = 1
    hypergrad: str = "finite_difference"
    fd_epsilon: float = 0.01
    sigma_threshold: float = 0.9
    omega_threshold: float = 0.1
    stratify_rule: str = "complement"
    alpha: float = 0.1
    gamma_ema: float = 0.99
    rho: int = 2
    clip_len: int = 8
    stride: int = 2
    batch: int = 8
    epochs: int = 4
    max_steps: int = 0
    seed: int = 0
    aug_noise_std: float = 0.1
    hidden_dims: tuple[int, ...] = (64,)
    embed_dim: int = 8
    embed_gain: float = 1.0
    proj_dim: int = 0
    queue_size: int = 1024
    checkpoint_every: int = 0
    exclude_anchor_in_denominator: bool = False
    negate_distance: bool = False
    backdoor_fallback: bool = True

    @property
    def effective_proj_dim(self) -> int:
        return self.proj_dim if self.proj_dim > 0 else self.embed_dim

    def validate(self) -> None:
        if self.variant not in ("simclr", "moco", "byol"):
            raise InvalidInputError(f"unknown variant {self.variant!r}")
        if self.hypergrad not in HYPERGRAD_MODES:
            raise InvalidInputError(f"unknown hypergrad mode {self.hypergrad!r}")
        if self.stratify_rule not in ("complement", "conjunction"):
            raise InvalidInputError(f"unknown stratify_rule {self.stratify_rule!r}")
        if self.nu < 0:
            raise InvalidInputError("nu must be nonnegative")
        if self.lr < 0:
            raise InvalidInputError("lr must be nonnegative")
        if self.inner_steps < 1:
            raise InvalidInputError("inner_steps must be at least 1")
        if not self.fd_epsilon > 0:
            raise InvalidInputError("fd_epsilon must be positive")
        if not self.alpha > 0:
            raise InvalidInputError("alpha must be positive")
        if not 0.0 <= self.gamma_ema <= 1.0:
            raise InvalidInputError("gamma_ema must lie in [0, 1]")
        if self.rho < 2:
            raise InvalidInputError("rho must be at least 2 so every anchor has a positive")
        if self.clip_len < 2:
            raise InvalidInputError("clip_len must be at least 2")
        if self.stride < 1:
            raise InvalidInputError("stride must be positive")
        if self.batch < 2:
            raise InvalidInputError("batch must contain at least two videos")
        if self.epochs < 1 or self.max_steps < 0:
            raise InvalidInputError("epochs must be positive and max_steps nonnegative")
        if self.embed_dim < 1:
            raise InvalidInputError("embed_dim must be positive")
        if not self.embed_gain > 0:
            raise InvalidInputError("embed_gain must be positive")
        if self.aug_noise_std < 0:
            raise InvalidInputError("aug_noise_std must be nonnegative")
        if (self.bold_di or self.single_level) and self.effective_proj_dim != self.embed_dim:
            raise InvalidInputError(
                "mode-conditioned similarity needs proj_dim == embed_dim "
                f"(got proj {self.effective_proj_dim}, embed {self.embed_dim})"
            )

    def to_text(self) -> str:
        return configio.dumps(
            {
                "variant": self.variant,
                "bold_di": str(self.bold_di).lower(),
                "single_level": str(self.single_level).lower(),
                "nu": repr(self.nu),
                "lr": repr(self.lr),
                "inner_steps": str(self.inner_steps),
                "hypergrad": self.hypergrad,
                "fd_epsilon": repr(self.fd_epsilon),
                "sigma_threshold": repr(self.sigma_threshold),
                "omega_threshold": repr(self.omega_threshold),
                "stratify_rule": self.stratify_rule,
                "alpha": repr(self.alpha),
                "gamma_ema": repr(self.gamma_ema),
                "rho": str(self.rho),
                "clip_len": str(self.clip_len),
                "stride": str(self.stride),
                "batch": str(self.batch),
                "epochs": str(self.epochs),
                "max_steps": str(self.max_steps),
                "seed": str(self.seed),
                "aug_noise_std": repr(self.aug_noise_std),
                "hidden_dims": ", ".join(str(h) for h in self.hidden_dims),
                "embed_dim": str(self.embed_dim),
                "embed_gain": repr(self.embed_gain),
                "proj_dim": str(self.proj_dim),
                "queue_size": str(self.queue_size),
                "checkpoint_every": str(self.checkpoint_every),
                "exclude_anchor_in_denominator": str(self.exclude_anchor_in_denominator).lower(),
                "negate_distance": str(self.negate_distance).lower(),
                "backdoor_fallback": str(self.backdoor_fallback).lower(),
            }
        )

    @classmethod
    def from_text(cls, text: str) -> "TrainerConfig":
        pairs = configio.loads(text)
        parsers = {
            "variant": str,
            "bold_di": lambda v: configio.parse_bool("bold_di", v),
            "single_level": lambda v: configio.parse_bool("single_level", v),
            "nu": lambda v: configio.parse_float("nu", v),
            "lr": lambda v: configio.parse_float("lr", v),
            "inner_steps": lambda v: configio.parse_int("inner_steps", v),
            "hypergrad": str,
            "fd_epsilon": lambda v: configio.parse_float("fd_epsilon", v),
            "sigma_threshold": lambda v: configio.parse_float("sigma_threshold", v),
            "omega_threshold": lambda v: configio.parse_float("omega_threshold", v),
            "stratify_rule": str,
            "alpha": lambda v: configio.parse_float("alpha", v),
            "gamma_ema": lambda v: configio.parse_float("gamma_ema", v),
            "rho": lambda v: configio.parse_int("rho", v),
            "clip_len": lambda v: configio.parse_int("clip_len", v),
            "stride": lambda v: configio.parse_int("stride", v),
            "batch": lambda v: configio.parse_int("batch", v),
            "epochs": lambda v: configio.parse_int("epochs", v),
            "max_steps": lambda v: configio.parse_int("max_steps", v),
            "seed": lambda v: configio.parse_int("seed", v),
            "aug_noise_std": lambda v: configio.parse_float("aug_noise_std", v),
            "hidden_dims": lambda v: tuple(
                configio.parse_int("hidden_dims", part.strip()) for part in v.split(",") if part.strip()
            ),
            "embed_dim": lambda v: configio.parse_int("embed_dim", v),
            "embed_gain": lambda v: configio.parse_float("embed_gain", v),
            "proj_dim": lambda v: configio.parse_int("proj_dim", v),
            "queue_size": lambda v: configio.parse_int("queue_size", v),
            "checkpoint_every": lambda v: configio.parse_int("checkpoint_every", v),
            "exclude_anchor_in_denominator": lambda v: configio.parse_bool(
                "exclude_anchor_in_denominator", v
            ),
            "negate_distance": lambda v: configio.parse_bool("negate_distance", v),
            "backdoor_fallback": lambda v: configio.parse_bool("backdoor_fallback", v),
        }
        values = {}
        for key, raw in pairs.items():
            if key == "config_hash":
                continue
            if key not in parsers:
                raise InvalidInputError(f"unknown trainer config key '{key}'")
            values[key] = parsers[key](raw)
        config = replace(cls(), **values)
        config.validate()
        return config


@dataclass
class TrainerState:
    params: EncoderParams
    momentum_params: EncoderParams | None
    queue: np.ndarray | None
    step: int
    metrics: list[dict] = field(default_factory=list)
    backdoor_skipped_total: int = 0


# -- generic bi-level steps ---------------------------------------------------

def inner_step(theta: np.ndarray, loss_fn, lr: float, steps: int = 1) -> np.ndarray:
    """Plain gradient descent on the inner loss from ``theta``."""
    th = np.asarray(theta, dtype=float).copy()
    for _ in range(steps):
        _, g = grad_and_value(loss_fn, th)
        if not np.all(np.isfinite(g)):
            raise NumericalFailureError("non-finite inner gradient")
        th = th - lr * g
    return th


def outer_step(
    theta: np.ndarray,
    theta_star: np.ndarray,
    outer_loss_fn,
    inner_loss_fn,
    lr: float,
    hypergrad: str = "finite_difference",
    fd_epsilon: float = 0.01,
) -> tuple[np.ndarray, np.ndarray, float]:
    """One outer update; returns (new_theta, update_direction, outer_value).

    ``first_order`` uses the outer gradient at ``theta_star`` directly.
    ``finite_difference`` subtracts ``lr * H_inner(theta) @ v`` estimated with
    central differences at perturbation ``fd_epsilon / ||v||``.
    """
    if hypergrad not in HYPERGRAD_MODES:
        raise InvalidInputError(f"unknown hypergrad mode {hypergrad!r}")
    theta = np.asarray(theta, dtype=float)
    value, v = grad_and_value(outer_loss_fn, np.asarray(theta_star, dtype=float))
    if not np.all(np.isfinite(v)):
        raise NumericalFailureError("non-finite outer gradient")
    v_norm = float(np.linalg.norm(v))
    if hypergrad == "first_order" or v_norm == 0.0:
        h = v
    else:
        eps = fd_epsilon / v_norm
        _, g_plus = grad_and_value(inner_loss_fn, theta + eps * v)
        _, g_minus = grad_and_value(inner_loss_fn, theta - eps * v)
        if not (np.all(np.isfinite(g_plus)) and np.all(np.isfinite(g_minus))):
            raise NumericalFailureError("non-finite perturbed inner gradient")
        h = v - lr * (g_plus - g_minus) / (2.0 * eps)
    return theta - lr * h, h, value


# -- batch assembly -----------------------------------------------------------

_POOL_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _pooling_matrix(n_views: int, length: int) -> np.ndarray:
    key = (n_views, length)
    if key not in _POOL_CACHE:
        s = np.zeros((n_views * length, n_views))
        for v in range(n_views):
            s[v * length : (v + 1) * length, v] = 1.0 / length
        _POOL_CACHE[key] = s
    return _POOL_CACHE[key]


def _embed_view_matrix(params: EncoderParams, frames_all: np.ndarray):
    """Embeddings for a stack of views: (rows of clip embeddings, frame matrix)."""
    n, length, dim = frames_all.shape
    u_all = embed_frames(params, frames_all.reshape(n * length, dim))
    pooled = u_all @ _pooling_matrix(n, length)
    w, b = params.proj
    z_raw = w @ pooled + b.reshape((b.shape[0], 1))
    norms = sqrt((z_raw * z_raw).sum(axis=0, keepdims=True))
    if np.any(value_of(norms) == 0.0):
        raise InvalidInputError("zero-norm clip embedding; cannot normalize")
    z = z_raw / norms
    return z.T, u_all


def _build_batch(
    params: EncoderParams,
    frames_all: np.ndarray,
    video_ids: np.ndarray,
    view_ids: np.ndarray,
    config: TrainerConfig,
    momentum_params: EncoderParams | None,
    queue: np.ndarray | None,
):
    z, u_all = _embed_view_matrix(params, frames_all)
    targets = None
    predictions = None
    if config.variant in ("moco", "byol"):
        zt, _ = _embed_view_matrix(momentum_params, frames_all)
        targets = value_of(zt)
    if config.variant == "byol":
        predictions = _mlp(params.predictor, z.T).T
    batch = BatchEmbeddings(
        views=z,
        video_ids=video_ids,
        view_ids=view_ids,
        targets=targets,
        predictions=predictions,
        queue=queue,
    )
    return batch, u_all


def _collect_views(dataset, indices, config: TrainerConfig, step: int):
    frames, video_ids, view_ids = [], [], []
    for j, clip_index in enumerate(indices):
        vb = sample_views(
            dataset[clip_index],
            config.rho,
            config.clip_len,
            config.stride,
            config.aug_noise_std,
            seed=[config.seed, 17, step, j],
        )
        for view in vb.views:
            frames.append(view.frames)
            video_ids.append(view.video_id)
            view_ids.append(view.view_id)
    return np.stack(frames), np.asarray(video_ids), np.asarray(view_ids)


# -- metrics ------------------------------------------------------------------

def _fmt_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_metrics_csv(path, rows: list[dict], seed: int, config_hash: str) -> None:
    lines = [f"# seed={seed} config_hash={config_hash}"]
    lines.append(",".join(METRIC_COLUMNS))
    for row in rows:
        lines.append(",".join(_fmt_cell(row.get(col)) for col in METRIC_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- the training loop --------------------------------------------------------

def train(config: TrainerConfig, dataset: list[Clip], out_dir=None) -> TrainerState:
    """Run the configured training loop over a clip dataset."""
    config.validate()
    if not dataset:
        raise InvalidInputError("dataset is empty")
    if len(dataset) < config.batch:
        raise InvalidInputError("dataset has fewer clips than one batch")

    obs_dim = dataset[0].obs_dim
    init_rng = np.random.default_rng([config.seed, 11])
    theta_params = init_params(
        init_rng,
        obs_dim,
        config.embed_dim,
        hidden_dims=config.hidden_dims,
        proj_dim=config.effective_proj_dim,
        predictor=config.variant == "byol",
        embed_gain=config.embed_gain,
    )
    momentum_params = copy_params(theta_params) if config.variant in ("moco", "byol") else None

    sim_config = SimilarityConfig(alpha=config.alpha, variant=config.variant)
    template = theta_params
    theta = flatten_params(theta_params)
    queue: np.ndarray | None = None
    state = TrainerState(params=theta_params, momentum_params=momentum_params, queue=queue, step=0)
    cfg_hash = configio.config_hash(config.to_text())

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    def save_state(name: str):
        if out_path is None:
            return
        state.params = unflatten_params(template, theta)
        save_checkpoint(
            out_path / name,
            Checkpoint(
                params=state.params,
                seed=config.seed,
                config_hash=cfg_hash,
                momentum_params=state.momentum_params,
            ),
        )

    def finish(abort: NumericalFailureError | None = None):
        state.params = unflatten_params(template, theta)
        state.queue = queue
        if out_path is not None:
            write_metrics_csv(out_path / "metrics.csv", state.metrics, config.seed, cfg_hash)
        if abort is not None:
            raise abort

    step = 0
    try:
        for epoch in range(config.epochs):
            order = np.random.default_rng([config.seed, 13, epoch]).permutation(len(dataset))
            for chunk_start in range(0, len(order) - config.batch + 1, config.batch):
                indices = order[chunk_start : chunk_start + config.batch]
                step += 1
                state.step = step
                theta_prev = theta.copy()

                frames_all, video_ids, view_ids = _collect_views(dataset, indices, config, step)
                current_params = unflatten_params(template, theta)
                m_params = state.momentum_params

                def batch_of(params):
                    return _build_batch(
                        params, frames_all, video_ids, view_ids, config, m_params, queue
                    )

                def contrastive_flat(flat):
                    batch, _ = batch_of(unflatten_params(template, flat))
                    return batch_contrastive_loss(batch, sim_config)

                row: dict = {"step": step}

                if not (config.bold_di or config.single_level):
                    value, g = grad_and_value(contrastive_flat, theta)
                    if not np.all(np.isfinite(g)):
                        raise NumericalFailureError(f"non-finite gradient at step {step}")
                    theta = theta - config.lr * g
                    row.update(
                        L_ct_do=None,
                        L_cl=value,
                        L_dynamic=None,
                        total=value,
                        J=None,
                        backdoor_skipped=None,
                        grad_norm=float(np.linalg.norm(g)),
                    )
                else:
                    # Mode context from the pre-update encoder, fixed for the step.
                    estimates: list[KoopmanEstimate] = []
                    phis: list[np.ndarray] = []
                    _, u_now = _embed_view_matrix(current_params, frames_all)
                    u_now = value_of(u_now)
                    length = config.clip_len
                    for v in range(frames_all.shape[0]):
                        est = estimate_koopman(u_now[:, v * length : (v + 1) * length])
                        estimates.append(est)
                        spectrum = stratify(
                            est,
                            config.sigma_threshold,
                            config.omega_threshold,
                            config.stratify_rule,
                        )
                        phis.extend(dynamic_modes(spectrum))
                    j_count = len(phis)
                    skipped = 1 if j_count == 0 else 0

                    def inner_flat(flat):
                        batch, _ = batch_of(unflatten_params(template, flat))
                        if j_count > 0:
                            return backdoor_loss(
                                batch,
                                phis,
                                config.alpha,
                                exclude_anchor_in_denominator=config.exclude_anchor_in_denominator,
                                negate_distance=config.negate_distance,
                            )
                        if not config.backdoor_fallback:
                            raise NumericalFailureError(
                                f"no dynamic modes at step {step} and fallback disabled"
                            )
                        return batch_contrastive_loss(batch, sim_config)

                    def outer_components(flat):
                        params = unflatten_params(template, flat)
                        batch, u_all = batch_of(params)
                        cl = batch_contrastive_loss(batch, sim_config)
                        dyn = None
                        for v, est in enumerate(estimates):
                            term = prediction_loss(u_all[:, v * length : (v + 1) * length], est)
                            dyn = term if dyn is None else dyn + term
                        dyn = dyn / float(len(estimates))
                        return cl, dyn

                    def outer_flat(flat):
                        cl, dyn = outer_components(flat)
                        return cl + config.nu * dyn

                    inner_value = float(value_of(inner_flat(theta)))

                    if config.single_level:
                        def joint_flat(flat):
                            cl, dyn = outer_components(flat)
                            loss = cl + config.nu * dyn
                            if j_count > 0:
                                batch, _ = batch_of(unflatten_params(template, flat))
                                loss = loss + backdoor_loss(
                                    batch,
                                    phis,
                                    config.alpha,
                                    exclude_anchor_in_denominator=config.exclude_anchor_in_denominator,
                                    negate_distance=config.negate_distance,
                                )
                            return loss

                        total_value, g = grad_and_value(joint_flat, theta)
                        if not np.all(np.isfinite(g)):
                            raise NumericalFailureError(f"non-finite gradient at step {step}")
                        cl_value, dyn_value = outer_components(theta.copy())
                        theta = theta - config.lr * g
                        row.update(
                            L_ct_do=inner_value if j_count > 0 else None,
                            L_cl=float(value_of(cl_value)),
                            L_dynamic=float(value_of(dyn_value)),
                            total=total_value,
                            J=j_count,
                            backdoor_skipped=skipped,
                            grad_norm=float(np.linalg.norm(g)),
                        )
                    else:
                        theta_star = inner_step(theta, inner_flat, config.lr, config.inner_steps)
                        theta, h, outer_value = outer_step(
                            theta,
                            theta_star,
                            outer_flat,
                            inner_flat,
                            config.lr,
                            config.hypergrad,
                            config.fd_epsilon,
                        )
                        cl_value, dyn_value = outer_components(theta_star)
                        row.update(
                            L_ct_do=inner_value,
                            L_cl=float(value_of(cl_value)),
                            L_dynamic=float(value_of(dyn_value)),
                            total=outer_value,
                            J=j_count,
                            backdoor_skipped=skipped,
                            grad_norm=float(np.linalg.norm(h)),
                        )
                    state.backdoor_skipped_total += skipped

                if not np.all(np.isfinite(theta)):
                    theta = theta_prev
                    raise NumericalFailureError(f"non-finite parameters at step {step}")

                # Variant bookkeeping after the parameter update.
                if config.variant in ("moco", "byol"):
                    if config.variant == "moco":
                        keys, _ = _embed_view_matrix(state.momentum_params, frames_all)
                        keys = value_of(keys)
                        queue = keys if queue is None else np.concatenate([queue, keys])
                        if queue.shape[0] > config.queue_size:
                            queue = queue[-config.queue_size :]
                    state.momentum_params = momentum_update(
                        state.momentum_params,
                        unflatten_params(template, theta),
                        config.gamma_ema,
                    )

                state.metrics.append(row)
                if (
                    config.checkpoint_every > 0
                    and out_path is not None
                    and step % config.checkpoint_every == 0
                ):
                    save_state(f"step_{step:06d}.ckpt")
                if config.max_steps and step >= config.max_steps:
                    raise StopIteration
    except StopIteration:
        pass
    except NumericalFailureError as exc:
        save_state("last_good.ckpt")
        finish(abort=exc)

    finish()
    save_state("encoder.ckpt")
    return state
