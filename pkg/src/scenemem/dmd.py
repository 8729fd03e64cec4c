"""Distribution matching distillation at desk scale.

A 4-step generator is distilled against a frozen analytic real score and a
trainable fake score. The generator gradient is the Monte-Carlo estimate

    grad L = -E_{z,t} [ (s_real(x_t, t) - s_fake(x_t, t)) . dx_t/dtheta ]

with stochastic gradient truncation: the gradient flows only through the
final generator step. The fake score is fit by denoising score matching on
generator samples, 5 fake updates per generator update.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor, nn

from .errors import InputError, SceneMemError

GENERATOR_STEPS = 4
FAKE_UPDATES_PER_GENERATOR = 5
DIVERGENCE_LIMIT = 1e6


class DivergenceError(SceneMemError, RuntimeError):
    """Training loss exploded; aborts with the offending step for diagnosis."""


@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance-exploding forward kernel x_t = x + sigma(t) * eps, t ~ U(0, 1)."""

    sigma_min: float = 0.02
    sigma_max: float = 2.0

    def __post_init__(self):
        if not (0 < self.sigma_min < self.sigma_max):
            raise InputError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )

    def sigma(self, t: Tensor) -> Tensor:
        return self.sigma_min + (self.sigma_max - self.sigma_min) * t

    def sample_t(self, batch: int, gen: torch.Generator) -> Tensor:
        return torch.rand(batch, generator=gen, dtype=torch.float64)

    def perturb(self, x: Tensor, t: Tensor, eps: Tensor) -> Tensor:
        return x + self.sigma(t)[:, None] * eps


# --- score fields -----------------------------------------------------------------


class GaussianScore:
    """Frozen analytic score of N(mean, diag(std^2)) under the forward kernel.

    ``cfg_scale`` != 1 sharpens the score by a scalar (classifier-free
    guidance stand-in); off by default.
    """

    trainable = False

    def __init__(self, mean, std, schedule: DiffusionSchedule, cfg_scale: float = 1.0):
        self.mean = torch.as_tensor(mean, dtype=torch.float64).reshape(-1)
        self.std = torch.as_tensor(std, dtype=torch.float64).reshape(-1)
        if self.std.numel() == 1:
            self.std = self.std.expand_as(self.mean).clone()
        self.schedule = schedule
        self.cfg_scale = cfg_scale

    @property
    def dim(self) -> int:
        return self.mean.numel()

    def evaluate(self, x: Tensor, t: Tensor) -> Tensor:
        var = self.std[None, :] ** 2 + self.schedule.sigma(t)[:, None] ** 2
        return self.cfg_scale * -(x - self.mean[None, :]) / var

    def sample(self, n: int, gen: torch.Generator) -> Tensor:
        z = torch.randn(n, self.dim, generator=gen, dtype=torch.float64)
        return self.mean[None, :] + self.std[None, :] * z


class GaussianMixtureScore:
    """Frozen analytic score of a Gaussian mixture under the forward kernel."""

    trainable = False

    def __init__(self, weights, means, stds, schedule: DiffusionSchedule):
        self.weights = torch.as_tensor(weights, dtype=torch.float64)
        self.means = torch.as_tensor(means, dtype=torch.float64)
        self.stds = torch.as_tensor(stds, dtype=torch.float64)
        if not torch.isclose(self.weights.sum(), torch.tensor(1.0, dtype=torch.float64)):
            raise InputError("mixture weights must sum to 1")
        self.schedule = schedule

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def evaluate(self, x: Tensor, t: Tensor) -> Tensor:
        # Responsibility-weighted component scores.
        var = self.stds[None, :] ** 2 + self.schedule.sigma(t)[:, None] ** 2  # B x K
        diff = x[:, None, :] - self.means[None, :, :]  # B x K x d
        sq = (diff**2).sum(-1)  # B x K
        log_norm = -0.5 * self.dim * torch.log(2 * math.pi * var)
        log_p = torch.log(self.weights)[None, :] + log_norm - 0.5 * sq / var
        resp = torch.softmax(log_p, dim=1)  # B x K
        comp_scores = -diff / var[:, :, None]
        return (resp[:, :, None] * comp_scores).sum(1)

    def sample(self, n: int, gen: torch.Generator) -> Tensor:
        comp = torch.multinomial(
            self.weights.expand(n, -1), num_samples=1, generator=gen
        ).squeeze(1)
        z = torch.randn(n, self.dim, generator=gen, dtype=torch.float64)
        return self.means[comp] + self.stds[comp][:, None] * z


class GaussianScoreModel(nn.Module):
    """Trainable score restricted to the Gaussian family (closed-form setting)."""

    trainable = True

    def __init__(self, mean, std, schedule: DiffusionSchedule):
        super().__init__()
        mean = torch.as_tensor(mean, dtype=torch.float64).reshape(-1)
        std = torch.as_tensor(std, dtype=torch.float64).reshape(-1)
        if std.numel() == 1:
            std = std.expand_as(mean).clone()
        self.mean = nn.Parameter(mean.clone())
        self.log_std = nn.Parameter(std.log())
        self.schedule = schedule

    @property
    def dim(self) -> int:
        return self.mean.numel()

    def evaluate(self, x: Tensor, t: Tensor) -> Tensor:
        var = self.log_std.exp()[None, :] ** 2 + self.schedule.sigma(t)[:, None] ** 2
        return -(x - self.mean[None, :]) / var

    @staticmethod
    def from_real(real: GaussianScore) -> "GaussianScoreModel":
        return GaussianScoreModel(real.mean, real.std, real.schedule)


class MLPScoreModel(nn.Module):
    """Small dense network predicting the perturbation (epsilon-parameterized).

    score(x_t, t) = -net(x_t, sigma(t)) / sigma(t)
    """

    trainable = True

    def __init__(self, dim: int, schedule: DiffusionSchedule, hidden: int = 64):
        super().__init__()
        self.dim = dim
        self.schedule = schedule
        self.net = nn.Sequential(
            nn.Linear(dim + 1, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
            nn.SiLU(),
            nn.Linear(hidden, dim),
        ).double()

    def evaluate(self, x: Tensor, t: Tensor) -> Tensor:
        sigma = self.schedule.sigma(t)[:, None]
        eps_hat = self.net(torch.cat([x, sigma], dim=1))
        return -eps_hat / sigma


# --- generators --------------------------------------------------------------------


class FewStepGenerator(nn.Module):
    """4-step map z -> x with parameters shared across steps.

    ``sample(z, truncate=True)`` runs the first three steps without gradient
    tracking (stochastic gradient truncation): parameter gradients flow only
    through the final step's application.
    """

    steps = GENERATOR_STEPS

    def step(self, x: Tensor, k: int) -> Tensor:  # pragma: no cover - interface
        raise NotImplementedError

    def sample(self, z: Tensor, truncate: bool = False) -> Tensor:
        x = z
        if truncate:
            with torch.no_grad():
                for k in range(self.steps - 1):
                    x = self.step(x, k)
            x = x.detach()
            return self.step(x, self.steps - 1)
        for k in range(self.steps):
            x = self.step(x, k)
        return x

    def penultimate(self, z: Tensor) -> Tensor:
        """State entering the final step, without gradient tracking."""
        with torch.no_grad():
            x = z
            for k in range(self.steps - 1):
                x = self.step(x, k)
        return x.detach()


class AffineGenerator(FewStepGenerator):
    """x <- a * x + b applied four times with shared (a, b)."""

    def __init__(self, dim: int):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(dim, dtype=torch.float64))
        self.shift = nn.Parameter(torch.zeros(dim, dtype=torch.float64))

    def step(self, x: Tensor, k: int) -> Tensor:
        return self.scale[None, :] * x + self.shift[None, :]


class ResidualMLPGenerator(FewStepGenerator):
    """x <- x + net(x, k / steps) with the network shared across steps.

    The output layer starts at zero so the untrained generator is the
    identity map (samples stay standard normal), mirroring initialization
    from the teacher.
    """

    def __init__(self, dim: int, hidden: int = 64):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(
            nn.Linear(dim + 1, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
            nn.SiLU(),
            nn.Linear(hidden, dim),
        ).double()
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def step(self, x: Tensor, k: int) -> Tensor:
        phase = torch.full((x.shape[0], 1), k / self.steps, dtype=torch.float64)
        return x + self.net(torch.cat([x, phase], dim=1))


# --- gradients and training ----------------------------------------------------------


def dmd_generator_grad(
    gen: FewStepGenerator,
    s_real,
    s_fake,
    schedule: DiffusionSchedule,
    batch: int,
    rng: torch.Generator,
    sample_filter=None,
) -> tuple[list[Tensor], dict]:
    """Monte-Carlo DMD gradient with stochastic gradient truncation.

    Sampling order (stable contract for replay in tests): z ~ N(0, I), then
    t ~ U(0, 1), then eps ~ N(0, I). The score difference is detached, so the
    returned gradient is -mean[(s_real - s_fake)(x_t) . dx_t/dtheta] with
    dx_t/dtheta taken through the final generator step only.

    Returns:
        (grads, info): per-parameter gradient tensors (zeros where a
        parameter is unused) and a dict with the surrogate value and the
        mean score-difference norm.
    """
    if s_real.trainable:
        raise InputError("the real score must be frozen")
    dim = s_real.dim
    z = torch.randn(batch, dim, generator=rng, dtype=torch.float64)
    t = schedule.sample_t(batch, rng)
    eps = torch.randn(batch, dim, generator=rng, dtype=torch.float64)
    if sample_filter is not None:
        keep = sample_filter(z)
        z, t, eps = z[keep], t[keep], eps[keep]
        if z.shape[0] == 0:
            raise InputError("sample filter rejected the whole batch")

    x = gen.sample(z, truncate=True)
    x_t = schedule.perturb(x, t, eps)
    with torch.no_grad():
        diff = s_real.evaluate(x_t, t) - s_fake.evaluate(x_t, t)
    surrogate = -(diff * x_t).sum(dim=1).mean()
    params = list(gen.parameters())
    grads = torch.autograd.grad(surrogate, params, allow_unused=True)
    grads = [
        g if g is not None else torch.zeros_like(p) for g, p in zip(grads, params)
    ]
    info = {
        "surrogate": float(surrogate.detach()),
        "score_gap": float(diff.norm(dim=1).mean()),
    }
    return grads, info


def fake_score_loss(
    s_fake, x: Tensor, schedule: DiffusionSchedule, rng: torch.Generator
) -> Tensor:
    """Denoising score matching on given samples: E || sigma s_fake(x_t) + eps ||^2."""
    t = schedule.sample_t(x.shape[0], rng)
    eps = torch.randn(x.shape, generator=rng, dtype=torch.float64)
    x_t = schedule.perturb(x, t, eps)
    sigma = schedule.sigma(t)[:, None]
    return ((sigma * s_fake.evaluate(x_t, t) + eps) ** 2).sum(dim=1).mean()


def pretrain_fake_on_real(
    s_fake,
    s_real,
    schedule: DiffusionSchedule,
    steps: int = 500,
    batch: int = 256,
    lr: float = 2e-3,
    seed: int = 0,
) -> None:
    """Fit the fake score to real samples before distillation.

    Stand-in for initializing the fake score from the teacher when the fake
    parameterization (an MLP) cannot copy the analytic real score directly.
    """
    rng = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(s_fake.parameters(), lr=lr)
    for _ in range(steps):
        x = s_real.sample(batch, rng)
        loss = fake_score_loss(s_fake, x, schedule, rng)
        opt.zero_grad()
        loss.backward()
        opt.step()


@dataclass
class TrainConfig:
    iters: int = 2000
    batch: int = 256
    fake_per_gen: int = FAKE_UPDATES_PER_GENERATOR
    lr_gen: float = 0.02
    lr_fake: float = 0.05
    seed: int = 0


@dataclass
class TrainRecord:
    step: int
    gen_loss_proxy: float
    fake_loss: float
    grad_norm: float


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)
    fake_updates: int = 0
    gen_updates: int = 0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "gen_loss_proxy", "fake_loss", "grad_norm"])
            for r in self.records:
                writer.writerow([r.step, r.gen_loss_proxy, r.fake_loss, r.grad_norm])


def dmd_train(
    gen: FewStepGenerator,
    s_fake,
    s_real,
    schedule: DiffusionSchedule,
    config: TrainConfig,
    sample_filter=None,
) -> TrainLog:
    """Alternate 5 fake-score DSM updates per generator DMD update.

    The real score stays frozen throughout. Raises DivergenceError when
    either loss exceeds 1e6.
    """
    if not s_fake.trainable:
        raise InputError("the fake score must be trainable")
    if s_real.trainable:
        raise InputError("the real score must be frozen")
    rng = torch.Generator().manual_seed(config.seed)
    opt_gen = torch.optim.Adam(gen.parameters(), lr=config.lr_gen)
    opt_fake = torch.optim.Adam(s_fake.parameters(), lr=config.lr_fake)
    log = TrainLog()
    dim = s_real.dim

    for step in range(config.iters):
        fake_loss_value = float("nan")
        for _ in range(config.fake_per_gen):
            z = torch.randn(config.batch, dim, generator=rng, dtype=torch.float64)
            with torch.no_grad():
                x = gen.sample(z)
            if sample_filter is not None:
                keep = sample_filter(x)
                x = x[keep]
                if x.shape[0] == 0:
                    continue
            loss = fake_score_loss(s_fake, x, schedule, rng)
            opt_fake.zero_grad()
            loss.backward()
            opt_fake.step()
            log.fake_updates += 1
            fake_loss_value = float(loss.detach())
            if not math.isfinite(fake_loss_value) or fake_loss_value > DIVERGENCE_LIMIT:
                raise DivergenceError(
                    f"fake score loss diverged at step {step}: {fake_loss_value}"
                )

        grads, info = dmd_generator_grad(
            gen, s_real, s_fake, schedule, config.batch, rng, sample_filter
        )
        opt_gen.zero_grad()
        for p, g in zip(gen.parameters(), grads):
            p.grad = g
        opt_gen.step()
        log.gen_updates += 1
        grad_norm = float(torch.cat([g.reshape(-1) for g in grads]).norm())
        if not math.isfinite(info["surrogate"]) or abs(info["surrogate"]) > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"generator surrogate diverged at step {step}: {info['surrogate']}"
            )
        log.records.append(
            TrainRecord(step, info["score_gap"], fake_loss_value, grad_norm)
        )
    return log


# --- sample-distance utilities -------------------------------------------------------


def wasserstein2_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Exact 2-Wasserstein between equal-size 1-D empirical distributions."""
    if a.shape != b.shape:
        raise InputError("samples must have equal counts")
    return float(np.sqrt(np.mean((np.sort(a) - np.sort(b)) ** 2)))


def sliced_wasserstein2(
    a: np.ndarray, b: np.ndarray, n_projections: int = 128, seed: int = 0
) -> float:
    """Sliced 2-Wasserstein: average the exact 1-D metric over random directions."""
    if a.shape != b.shape:
        raise InputError("samples must have equal counts and dims")
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    total = 0.0
    for d in dirs:
        pa = np.sort(a @ d)
        pb = np.sort(b @ d)
        total += np.mean((pa - pb) ** 2)
    return float(np.sqrt(total / n_projections))
