"""DDPM core: linear noise schedule, U-Net denoiser, constraint-aware training,
ancestral sampling, checkpoints, and symmetric int8 weight quantization."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import struct
import time
import zlib
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .constraints import Constraint, GridContext, soft_readings, tensor_hinge
from .domain import CHANNELS, Catalog, Fixture, Planogram, decode, encode
from .evaluation import RevenueModel, tensor_revenue

log = logging.getLogger(__name__)

FULL_T = 1000
FULL_BETA1 = 1e-4
FULL_BETAT = 0.02


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# ----------------------------------------------------------------------------
# schedule and forward process


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return int(self.beta.size)


def build_schedule(T: int = FULL_T, beta1: float = FULL_BETA1, betaT: float = FULL_BETAT) -> NoiseSchedule:
    """Linear betas from ``beta1`` to ``betaT`` inclusive; ``alpha_bar`` is the running product."""
    if T < 2 or not 0 < beta1 < betaT < 1:
        raise ValueError(f"need T >= 2 and 0 < beta1 < betaT < 1, got T={T}, beta1={beta1}, betaT={betaT}")
    beta = np.linspace(beta1, betaT, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.flags.writeable = False
    return NoiseSchedule(beta, alpha, alpha_bar)


MAX_BETA = 0.5


def desk_schedule(T: int) -> NoiseSchedule:
    """Betas rescaled by ``1000 / T`` so short chains still end near pure noise.

    The last beta is capped at ``MAX_BETA`` for very short chains.
    """
    scale = FULL_T / T
    return build_schedule(T, min(FULL_BETA1 * scale, MAX_BETA / 2), min(FULL_BETAT * scale, MAX_BETA))


def _per_sample(values: np.ndarray, t, shape) -> np.ndarray:
    t = np.asarray(t)
    v = values[t]
    if t.ndim == 0:
        return np.full(shape, float(v))
    return v.reshape((-1,) + (1,) * (len(shape) - 1)) * np.ones(shape)


def _check_t(t, schedule: NoiseSchedule) -> None:
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= schedule.T):
        raise ValueError(f"step index out of range [0, {schedule.T})")


def forward_sample(x0, t, eps, schedule: NoiseSchedule) -> np.ndarray:
    """``sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps``.

    ``t`` is a scalar or one index per leading batch entry.
    """
    x0 = np.asarray(getattr(x0, "grid", x0), dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    _check_t(t, schedule)
    ab = _per_sample(schedule.alpha_bar, t, x0.shape)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(x_t, eps_hat, t, schedule: NoiseSchedule) -> np.ndarray:
    """Invert the forward process given a noise estimate."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != x_t.shape:
        raise ValueError(f"eps_hat shape {eps_hat.shape} != x_t shape {x_t.shape}")
    _check_t(t, schedule)
    ab = _per_sample(schedule.alpha_bar, t, x_t.shape)
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


# ----------------------------------------------------------------------------
# denoiser


@dataclass(frozen=True)
class DenoiserConfig:
    data_channels: int = len(CHANNELS)
    cond_channels: int = 5
    widths: tuple[int, int, int] = (16, 32, 64)
    time_dim: int = 32
    attention: bool = True

    @classmethod
    def from_dict(cls, obj: Mapping) -> DenoiserConfig:
        obj = dict(obj)
        obj["widths"] = tuple(obj["widths"])
        return cls(**obj)


def fixture_features(fixture: Fixture, revenue_model: RevenueModel | None = None) -> np.ndarray:
    """Conditioning planes ``(5, S, K)``: clearance, capacity, column width, shelf index, eye level."""
    revenue_model = revenue_model or RevenueModel()
    S, K = fixture.shelf_count, fixture.slot_columns
    rows = np.stack(
        [
            fixture.clearances / 40.0,
            fixture.capacities / 40.0,
            np.full(S, fixture.column_width / 8.0),
            np.arange(S) / 4.0,
            revenue_model.multipliers(fixture) - 1.0,
        ]
    )
    return np.repeat(rows[:, :, None], K, axis=2)


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _block_specs(cfg: DenoiserConfig) -> list[tuple[str, int, int]]:
    w0, w1, w2 = cfg.widths
    return [("down0", w0, w0), ("down1", w1, w1), ("mid", w2, w2), ("up1", 2 * w1, w1), ("up0", 2 * w0, w0)]


def init_params(cfg: DenoiserConfig, rng: np.random.Generator, zero_output: bool = True) -> dict[str, np.ndarray]:
    """He-style init; the output conv starts at zero unless ``zero_output`` is False."""
    w0, w1, w2 = cfg.widths
    hidden = 4 * cfg.time_dim
    p: dict[str, np.ndarray] = {}

    def conv(name, cin, cout, k=3, gain=1.0):
        p[f"{name}.w"] = rng.normal(0.0, gain * math.sqrt(1.0 / (cin * k * k)), (cout, cin, k, k))
        p[f"{name}.b"] = np.zeros(cout)

    def dense(name, din, dout, gain=1.0):
        p[f"{name}.w"] = rng.normal(0.0, gain * math.sqrt(1.0 / din), (din, dout))
        p[f"{name}.b"] = np.zeros(dout)

    dense("time1", cfg.time_dim, hidden)
    dense("time2", hidden, hidden)
    conv("in", cfg.data_channels + cfg.cond_channels, w0)
    for name, cin, cout in _block_specs(cfg):
        conv(f"{name}.conv1", cin, cout)
        dense(f"{name}.temb", hidden, cout)
        conv(f"{name}.conv2", cout, cout, gain=0.2)
        if cin != cout:
            conv(f"{name}.skip", cin, cout, k=1)
    conv("ds1", w0, w1)
    conv("ds2", w1, w2)
    if cfg.attention:
        for part in ("q", "k", "v", "o"):
            dense(f"attn.{part}", w2, w2, gain=0.5 if part == "o" else 1.0)
    conv("up1.pre", w2, w1)
    conv("up0.pre", w1, w0)
    conv("out", w0, cfg.data_channels, gain=0.0 if zero_output else 1.0)
    return p


def _conv(P, name, x, stride=1):
    return nx.add_bias(nx.conv2d(x, P[f"{name}.w"], stride=stride), P[f"{name}.b"])


def _dense(P, name, x):
    return nx.add_bias(nx.matmul(x, P[f"{name}.w"]), P[f"{name}.b"])


def _resblock(P, name, x, emb):
    h = _conv(P, f"{name}.conv1", nx.silu(x))
    h = nx.add_bias(h, _dense(P, f"{name}.temb", emb))
    h = _conv(P, f"{name}.conv2", nx.silu(h))
    skip = _conv(P, f"{name}.skip", x) if f"{name}.skip.w" in P else x
    return skip + h


def _attention(P, x):
    B, C, H, W = x.shape
    tokens = nx.transpose(nx.reshape(x, (B, C, H * W)), (0, 2, 1))
    q = _dense(P, "attn.q", tokens)
    k = _dense(P, "attn.k", tokens)
    v = _dense(P, "attn.v", tokens)
    scores = nx.matmul(q, nx.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(C))
    mixed = _dense(P, "attn.o", nx.matmul(nx.softmax(scores, axis=-1), v))
    return x + nx.reshape(nx.transpose(mixed, (0, 2, 1)), (B, C, H, W))


def apply_denoiser(cfg: DenoiserConfig, P: Mapping[str, nx.Tensor], x, t: np.ndarray, cond: np.ndarray) -> nx.Tensor:
    """Noise estimate for a ``(B, C, S, K)`` batch at steps ``t`` given fixture planes ``cond``."""
    x = nx.constant(x)
    B, _, S, K = x.shape
    if cond.shape != (B, cfg.cond_channels, S, K):
        raise nx.ShapeError(f"conditioning shape {cond.shape} does not match input {x.shape}")
    emb = nx.constant(timestep_embedding(np.asarray(t).reshape(B), cfg.time_dim))
    emb = _dense(P, "time2", nx.silu(_dense(P, "time1", emb)))
    emb = nx.silu(emb)

    h = _conv(P, "in", nx.concat([x, nx.constant(cond)], axis=1))
    h0 = _resblock(P, "down0", h, emb)
    h1 = _resblock(P, "down1", _conv(P, "ds1", h0, stride=2), emb)
    S1, K1 = h1.shape[2:]
    h = _resblock(P, "mid", _conv(P, "ds2", h1, stride=2), emb)
    if cfg.attention:
        h = _attention(P, h)
    h = nx.upsample_nearest(h, 2)[:, :, :S1, :K1]
    h = _resblock(P, "up1", nx.concat([_conv(P, "up1.pre", h), h1], axis=1), emb)
    h = nx.upsample_nearest(h, 2)[:, :, :S, :K]
    h = _resblock(P, "up0", nx.concat([_conv(P, "up0.pre", h), h0], axis=1), emb)
    return _conv(P, "out", nx.silu(h))


@dataclass
class DenoiserModel:
    config: DenoiserConfig
    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: DenoiserConfig | None = None, seed: int = 0, zero_output: bool = True) -> DenoiserModel:
        config = config or DenoiserConfig()
        return cls(config, init_params(config, np.random.default_rng(seed), zero_output))

    @property
    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def tensors(self, requires_grad: bool = False) -> dict[str, nx.Tensor]:
        return {k: nx.Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    def predict(self, x: np.ndarray, t, cond: np.ndarray) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t), (x.shape[0],))
        with nx.no_grad():
            return np.array(apply_denoiser(self.config, self.tensors(), x, t, cond).data)

    def snapshot(self) -> DenoiserModel:
        return DenoiserModel(self.config, {k: v.copy() for k, v in self.params.items()}, dict(self.metadata))


# ----------------------------------------------------------------------------
# training


CONSTRAINT_WEIGHTINGS = ("uniform", "alpha_bar", "snr")


def constraint_weights(schedule: NoiseSchedule, t: np.ndarray, kind: str) -> np.ndarray:
    """Per-sample weight of the x0-space penalty terms at steps ``t``.

    ``snr`` caps the weight at ``sqrt(alpha_bar / (1 - alpha_bar))``, which is
    the inverse of how strongly an error in the noise estimate is amplified
    in the x0 reconstruction; low-noise steps keep full weight.
    """
    ab = schedule.alpha_bar[np.asarray(t)]
    if kind == "uniform":
        return np.ones(ab.shape)
    if kind == "alpha_bar":
        return ab.copy()
    if kind == "snr":
        return np.minimum(1.0, np.sqrt(ab / (1.0 - ab)))
    raise ValueError(f"unknown constraint weighting {kind!r}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 16
    T: int = 200
    steps: int = 20_000
    lambda1: float = 1.0
    lambda2: float = 0.1
    rng_seed: int = 0
    beta1: float | None = None  # None: the 1000-step value rescaled by 1000 / T
    betaT: float | None = None
    grad_clip: float = 1.0
    augment_copies: int = 1
    constraint_weighting: str = "uniform"  # or "alpha_bar", "snr"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.T < 2 or self.steps < 0:
            raise ValueError("learning_rate, batch_size and T must be positive, steps >= 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if self.constraint_weighting not in CONSTRAINT_WEIGHTINGS:
            raise ValueError(f"unknown constraint weighting {self.constraint_weighting!r}")

    def schedule(self) -> NoiseSchedule:
        if self.beta1 is None and self.betaT is None:
            return desk_schedule(self.T)
        desk = desk_schedule(self.T)
        return build_schedule(
            self.T,
            self.beta1 if self.beta1 is not None else float(desk.beta[0]),
            self.betaT if self.betaT is not None else float(desk.beta[-1]),
        )

    def lr_at(self, step: int) -> float:
        """Cosine annealing from ``learning_rate`` to zero over ``steps``."""
        if self.steps <= 0:
            return self.learning_rate
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * min(step, self.steps) / self.steps))


@dataclass(frozen=True)
class LossBreakdown:
    diffusion: float
    constraint: float
    revenue: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], b1=0.9, b2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Trainer:
    """Holds model, optimizer and schedule; :meth:`train_step` runs one update."""

    def __init__(
        self,
        model: DenoiserModel,
        catalog: Catalog,
        constraints: Sequence[Constraint],
        config: TrainConfig = TrainConfig(),
        revenue_model: RevenueModel | None = None,
    ):
        self.model = model
        self.catalog = catalog
        self.constraints = tuple(constraints)
        self.config = config
        self.revenue_model = revenue_model or RevenueModel()
        self.schedule = config.schedule()
        self.optimizer = Adam(model.params)
        self.rng = np.random.default_rng(config.rng_seed)
        self.step_count = 0
        self._cond_cache: dict[Fixture, np.ndarray] = {}

    def cond(self, fixtures: Sequence[Fixture]) -> np.ndarray:
        out = []
        for f in fixtures:
            if f not in self._cond_cache:
                self._cond_cache[f] = fixture_features(f, self.revenue_model)
            out.append(self._cond_cache[f])
        return np.stack(out)

    def loss_graph(
        self,
        params: Mapping[str, nx.Tensor],
        x0: np.ndarray,
        fixtures: Sequence[Fixture],
        t: np.ndarray,
        eps: np.ndarray,
    ) -> tuple[nx.Tensor, nx.Tensor, nx.Tensor | None, nx.Tensor | None]:
        """``(total, diffusion, constraint, revenue)`` as graph nodes; unused terms are None."""
        cfg = self.config
        ab = _per_sample(self.schedule.alpha_bar, t, x0.shape)
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
        eps_hat = apply_denoiser(self.model.config, params, x_t, t, self.cond(fixtures))
        # squared norm per sample, averaged over the batch
        diffusion = nx.reduce_sum(nx.square(eps_hat - eps)) * (1.0 / x0.shape[0])
        total = diffusion
        constraint = revenue = None
        if cfg.lambda1 > 0 or cfg.lambda2 > 0:
            x0_hat = (x_t - eps_hat * np.sqrt(1.0 - ab)) * (1.0 / np.sqrt(ab))
            ctx = GridContext.build(self.catalog, fixtures)
            readings = soft_readings(x0_hat, ctx)
            B = x0.shape[0]
            w = constraint_weights(self.schedule, t, cfg.constraint_weighting) / B
            if cfg.lambda1 > 0:
                constraint = nx.reduce_sum(tensor_hinge(self.constraints, x0_hat, ctx) * w)
                total = total + constraint * cfg.lambda1
            if cfg.lambda2 > 0:
                revenue = -nx.reduce_sum(tensor_revenue(x0_hat, ctx, self.revenue_model, readings) * w)
                total = total + revenue * cfg.lambda2
        return total, diffusion, constraint, revenue

    def train_step(self, x0: np.ndarray, fixtures: Sequence[Fixture], t=None, eps=None) -> LossBreakdown:
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.ndim != 4 or x0.shape[0] == 0 or len(fixtures) != x0.shape[0]:
            raise ValueError("batch must be a nonempty (B, C, S, K) array with one fixture per element")
        B = x0.shape[0]
        t = self.rng.integers(0, self.schedule.T, size=B) if t is None else np.asarray(t)
        eps = self.rng.standard_normal(x0.shape) if eps is None else np.asarray(eps)
        params = self.model.tensors(requires_grad=True)
        try:
            total, diffusion, constraint, revenue = self.loss_graph(params, x0, fixtures, t, eps)
        except nx.NonFiniteError as exc:
            raise TrainingError(f"non-finite value at step {self.step_count}: {exc}, t={t.tolist()}") from exc
        parts = LossBreakdown(
            float(diffusion.item()),
            0.0 if constraint is None else float(constraint.item()),
            0.0 if revenue is None else float(revenue.item()),
            float(total.item()),
        )
        if not all(math.isfinite(v) for v in asdict(parts).values()):
            raise TrainingError(f"non-finite loss at step {self.step_count}: {parts}, t={t.tolist()}")
        grads = nx.backward(total, params)
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not math.isfinite(norm):
            raise TrainingError(f"non-finite gradient at step {self.step_count}: {parts}")
        if self.config.grad_clip and norm > self.config.grad_clip:
            scale = self.config.grad_clip / norm
            grads = {k: g * scale for k, g in grads.items()}
        self.optimizer.step(self.model.params, grads, self.config.lr_at(self.step_count))
        self.step_count += 1
        return parts


@dataclass
class TrainingData:
    """Encoded planograms bucketed by grid shape (one bucket per shelf count)."""

    buckets: dict[tuple[int, int], tuple[np.ndarray, list[Fixture]]]

    @classmethod
    def from_planograms(cls, planograms: Sequence[Planogram], catalog: Catalog) -> TrainingData:
        groups: dict[tuple[int, int], tuple[list, list]] = {}
        for pg in planograms:
            key = (pg.fixture.shelf_count, pg.fixture.slot_columns)
            xs, fs = groups.setdefault(key, ([], []))
            xs.append(encode(pg, catalog).grid)
            fs.append(pg.fixture)
        return cls({k: (np.stack(xs), fs) for k, (xs, fs) in sorted(groups.items())})

    def __len__(self) -> int:
        return sum(len(fs) for _, fs in self.buckets.values())

    def batch(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, list[Fixture]]:
        keys = list(self.buckets)
        sizes = np.array([len(self.buckets[k][1]) for k in keys], dtype=float)
        key = keys[int(rng.choice(len(keys), p=sizes / sizes.sum()))]
        xs, fs = self.buckets[key]
        idx = rng.choice(len(fs), size=size, replace=len(fs) < size)
        return xs[idx], [fs[i] for i in idx]


def training_data(dataset, config: TrainConfig) -> TrainingData:
    """Corpus planograms plus ``augment_copies`` augmented variants of each."""
    from .corpus import augment

    planograms = list(dataset.planograms)
    rng = np.random.default_rng([config.rng_seed, 0xA06])
    for _ in range(config.augment_copies):
        planograms += [augment(pg, rng, dataset.catalog, dataset.constraints) for pg in dataset.planograms]
    return TrainingData.from_planograms(planograms, dataset.catalog)


def train(
    dataset,
    config: TrainConfig = TrainConfig(),
    model_config: DenoiserConfig | None = None,
    revenue_model: RevenueModel | None = None,
    log_every: int = 500,
    callback=None,
) -> tuple[DenoiserModel, list[LossBreakdown]]:
    """Train a fresh denoiser on a corpus :class:`~planoforge.corpus.Dataset`."""
    model = DenoiserModel.create(model_config, seed=config.rng_seed)
    trainer = Trainer(model, dataset.catalog, dataset.constraints, config, revenue_model)
    data = training_data(dataset, config)
    history = []
    start = time.perf_counter()
    for step in range(config.steps):
        x0, fixtures = data.batch(trainer.rng, config.batch_size)
        parts = trainer.train_step(x0, fixtures)
        history.append(parts)
        if log_every and (step + 1) % log_every == 0:
            recent = history[-log_every:]
            log.info(
                "step %d  diffusion %.4f  constraint %.4f  revenue %.4f  (%.1fs)",
                step + 1,
                np.mean([h.diffusion for h in recent]),
                np.mean([h.constraint for h in recent]),
                np.mean([h.revenue for h in recent]),
                time.perf_counter() - start,
            )
        if callback is not None:
            callback(step, parts)
    model.metadata.update(
        {"train": asdict(config), "schedule": {"T": trainer.schedule.T,
                                               "beta1": float(trainer.schedule.beta[0]),
                                               "betaT": float(trainer.schedule.beta[-1])}}
    )
    return model, history


def schedule_for(model: DenoiserModel, default_T: int = 200) -> NoiseSchedule:
    sched = model.metadata.get("schedule")
    if sched:
        return build_schedule(int(sched["T"]), float(sched["beta1"]), float(sched["betaT"]))
    return desk_schedule(default_T)


# ----------------------------------------------------------------------------
# sampling


def sample_tensors(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    fixture: Fixture,
    seed: int,
    count: int,
    revenue_model: RevenueModel | None = None,
) -> np.ndarray:
    """Ancestral sampling with fixed variance ``beta_t``; returns ``(count, C, S, K)``."""
    rng = np.random.default_rng(seed)
    C = model.config.data_channels
    shape = (count, C, fixture.shelf_count, fixture.slot_columns)
    x = rng.standard_normal(shape)
    if count == 0:
        return x
    cond = np.repeat(fixture_features(fixture, revenue_model)[None], count, axis=0)
    for t in range(schedule.T - 1, -1, -1):
        x = _ancestral_step(model, schedule, x, t, cond, rng)
    return x


def sample_fixtures(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    fixtures: Sequence[Fixture],
    seed: int,
    revenue_model: RevenueModel | None = None,
    clip_x0: bool = False,
) -> list[np.ndarray]:
    """One sample per fixture, batched by grid shape; results follow input order."""
    groups: dict[tuple[int, int], list[int]] = {}
    for i, fx in enumerate(fixtures):
        groups.setdefault((fx.shelf_count, fx.slot_columns), []).append(i)
    out: list[np.ndarray | None] = [None] * len(fixtures)
    for g, (shape, idx) in enumerate(sorted(groups.items())):
        rng = np.random.default_rng([seed, g])
        full = (len(idx), model.config.data_channels) + shape
        cond = np.stack([fixture_features(fixtures[i], revenue_model) for i in idx])
        x = rng.standard_normal(full)
        for t in range(schedule.T - 1, -1, -1):
            x = _ancestral_step(model, schedule, x, t, cond, rng, clip_x0)
        for j, i in enumerate(idx):
            out[i] = x[j]
    return out


def _ancestral_step(model, schedule, x, t, cond, rng, clip_x0=False):
    eps_hat = model.predict(x, t, cond)
    beta, alpha, ab = schedule.beta[t], schedule.alpha[t], schedule.alpha_bar[t]
    if clip_x0:
        # posterior mean written through a clipped x0 estimate
        ab_prev = schedule.alpha_bar[t - 1] if t > 0 else 1.0
        x0 = np.clip((x - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab), -1.0, 1.0)
        mean = (beta * math.sqrt(ab_prev) * x0 + (1.0 - ab_prev) * math.sqrt(alpha) * x) / (1.0 - ab)
    else:
        mean = (x - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(alpha)
    return mean + math.sqrt(beta) * rng.standard_normal(x.shape) if t > 0 else mean


def sample(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    fixture: Fixture,
    catalog: Catalog,
    seed: int,
    count: int,
    revenue_model: RevenueModel | None = None,
    store_id: str = "",
) -> list[Planogram]:
    """Generate ``count`` planograms for ``fixture``; deterministic given ``seed``."""
    if model.config.data_channels != len(CHANNELS):
        raise nx.ShapeError(f"model produces {model.config.data_channels} channels, expected {len(CHANNELS)}")
    xs = sample_tensors(model, schedule, fixture, seed, count, revenue_model)
    return [decode(x, catalog, fixture, store_id) for x in xs]


# ----------------------------------------------------------------------------
# checkpoints and quantization

MAGIC = b"PLNFCKPT"
VERSION = 1
_DTYPES = {"f64": (0, "<f8"), "f32": (1, "<f4"), "i8": (2, "i1")}
_CODES = {code: (name, np_dtype) for name, (code, np_dtype) in _DTYPES.items()}


def _quantize_tensor(w: np.ndarray) -> tuple[np.ndarray, float]:
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    scale = peak / 127.0 if peak > 0 else 1.0
    return np.clip(np.round(w / scale), -127, 127).astype(np.int8), scale


def checkpoint_bytes(model: DenoiserModel, dtype: str = "f64") -> bytes:
    """Serialize to the container format.

    Layout: magic, u16 version, u8 payload dtype, u32 header length, JSON
    header (architecture, tensor table, metadata), little-endian payload,
    u32 CRC-32 of everything before it.  Int8 payloads store one symmetric
    scale per tensor in the header.
    """
    if dtype not in _DTYPES:
        raise CheckpointError(f"unknown payload dtype {dtype!r}")
    code, np_dtype = _DTYPES[dtype]
    table, chunks = [], []
    for name in sorted(model.params):
        w = model.params[name]
        entry = {"n": name, "s": list(w.shape)}
        if dtype == "i8":
            q, scale = _quantize_tensor(w)
            entry["q"] = scale
            chunks.append(q.tobytes())
        else:
            chunks.append(w.astype(np_dtype).tobytes())
        table.append(entry)
    header = json.dumps(
        {"arch": asdict(model.config), "tensors": table, "meta": model.metadata},
        separators=(",", ":"),
        sort_keys=True,
    ).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HBI", VERSION, code, len(header)))
    buf.write(header)
    for c in chunks:
        buf.write(c)
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(data: bytes) -> DenoiserModel:
    if len(data) < len(MAGIC) + 11 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a planoforge checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    version, code, hlen = struct.unpack_from("<HBI", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if code not in _CODES:
        raise CheckpointError(f"unknown payload dtype code {code}")
    _, np_dtype = _CODES[code]
    offset = len(MAGIC) + struct.calcsize("<HBI")
    header = json.loads(data[offset : offset + hlen].decode("utf-8"))
    offset += hlen
    itemsize = np.dtype(np_dtype).itemsize
    params = {}
    for entry in header["tensors"]:
        shape = tuple(entry["s"])
        n = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(body, dtype=np_dtype, count=n, offset=offset).reshape(shape)
        offset += n * itemsize
        if "q" in entry:
            params[entry["n"]] = raw.astype(np.float64) * float(entry["q"])
        else:
            params[entry["n"]] = raw.astype(np.float64)
    if offset != len(body):
        raise CheckpointError("checkpoint payload length does not match its header")
    meta = header.get("meta", {})
    meta["payload"] = _CODES[code][0]
    return DenoiserModel(DenoiserConfig.from_dict(header["arch"]), params, meta)


def save_checkpoint(model: DenoiserModel, path: str | Path, dtype: str = "f64") -> int:
    data = checkpoint_bytes(model, dtype)
    Path(path).write_bytes(data)
    return len(data)


def load_checkpoint(path: str | Path) -> DenoiserModel:
    return model_from_bytes(Path(path).read_bytes())


def version_id(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:12]


@dataclass(frozen=True)
class QuantizationReport:
    fp32_bytes: int
    int8_bytes: int
    max_abs_error: float
    tensors: int

    @property
    def size_ratio(self) -> float:
        return self.int8_bytes / self.fp32_bytes

    def to_dict(self) -> dict:
        return {**asdict(self), "size_ratio": self.size_ratio}


def quantize(model: DenoiserModel) -> tuple[bytes, QuantizationReport]:
    """Per-tensor symmetric int8 artifact plus a size/error report.

    All-zero tensors get scale 1 so they dequantize to exact zeros.
    """
    fp32 = checkpoint_bytes(model, "f32")
    int8 = checkpoint_bytes(model, "i8")
    restored = model_from_bytes(int8)
    err = max(float(np.max(np.abs(restored.params[k] - v))) if v.size else 0.0 for k, v in model.params.items())
    return int8, QuantizationReport(len(fp32), len(int8), err, len(model.params))


def dequantize(artifact: bytes) -> DenoiserModel:
    return model_from_bytes(artifact)


def with_params(model: DenoiserModel, params: Mapping[str, np.ndarray]) -> DenoiserModel:
    return replace(model, params=dict(params))
