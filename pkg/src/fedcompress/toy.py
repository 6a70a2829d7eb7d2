"""Desk-scale federated training that pushes real gradients through the codec.

Network: conv 1->4 channels (3x3, valid) on 8x8 images, ReLU, then a
fully connected layer from 144 features to 2 classes, softmax cross-entropy.
Data: two classes of Gaussian blobs with jittered centres and pixel noise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aggregate import DeviceUpload, aggregate, aggregate_dense
from .codec import CompressionConfig, CompressionLimitWarning, compress_model
from .fedsim import RoundLedger, SimulationError, ledger_for_round, round_plans
from .gradients import GradientTensor, LayerShape, ModelGradient
from .scenario import Scenario

IMAGE = 8
CHANNELS = 4
KERNEL = 3
FEATURES = CHANNELS * (IMAGE - KERNEL + 1) ** 2
CLASSES = 2

SHAPES = (
    LayerShape.conv(0, CHANNELS, 1, KERNEL),
    LayerShape.bias(1, CHANNELS),
    LayerShape.fc(2, CLASSES, FEATURES),
    LayerShape.bias(3, CLASSES),
)

TOY_STRATEGIES = ("fedgreen", "random", "uniform", "selection", "uncompressed")


class TrainingDiverged(SimulationError):
    pass


@dataclass(frozen=True)
class ToyTrainSpec:
    seed: int = 0
    rounds: int = 30
    samples_per_device: int = 32
    learning_rate: float = 0.02
    strategy: str = "fedgreen"
    fixed_alpha: float | None = None   # overrides the strategy's per-device ratios
    test_samples: int = 1000
    blob_separation: float = 1.6
    pixel_noise: float = 1.0
    compression: CompressionConfig = field(default_factory=CompressionConfig)

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.samples_per_device < 8:
            raise ValueError("samples_per_device must be >= 8")
        if self.strategy not in TOY_STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.fixed_alpha is not None and self.fixed_alpha < 1:
            raise ValueError("fixed_alpha must be >= 1")


@dataclass(frozen=True)
class ToyTrainResult:
    ledgers: list[RoundLedger]
    test_accuracy: list[float]
    train_loss: list[float]
    diverged: bool = False


def make_blobs(n: int, rng: np.random.Generator, separation: float = 1.6, noise: float = 1.0):
    """Images of one Gaussian bump per sample; the bump centre depends on the class."""
    y = rng.integers(0, CLASSES, size=n)
    mid = (IMAGE - 1) / 2
    centres = np.where(y[:, None] == 0, mid - separation / 2, mid + separation / 2) + rng.normal(0, 1.0, (n, 2))
    rr, cc = np.meshgrid(np.arange(IMAGE), np.arange(IMAGE), indexing="ij")
    d2 = (rr[None] - centres[:, 0, None, None]) ** 2 + (cc[None] - centres[:, 1, None, None]) ** 2
    x = np.exp(-d2 / 4.0) * 2.0 + rng.normal(0, noise, (n, IMAGE, IMAGE))
    return x.astype(np.float64), y


def init_params(rng: np.random.Generator) -> list[np.ndarray]:
    return [
        rng.normal(0, np.sqrt(2.0 / KERNEL ** 2), (CHANNELS, 1, KERNEL, KERNEL)),
        np.zeros(CHANNELS),
        rng.normal(0, 0.01, (CLASSES, FEATURES)),  # small head keeps early steps stable
        np.zeros(CLASSES),
    ]


def _patches(x: np.ndarray) -> np.ndarray:
    out = IMAGE - KERNEL + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (KERNEL, KERNEL), axis=(1, 2))
    return win.reshape(x.shape[0], out * out, KERNEL * KERNEL)


def forward(params, x):
    wc, bc, wf, bf = params
    pre = _patches(x) @ wc.reshape(CHANNELS, -1).T + bc          # (n, 36, 4)
    act = np.maximum(pre, 0.0)
    feats = act.transpose(0, 2, 1).reshape(x.shape[0], FEATURES)  # channel-major
    logits = feats @ wf.T + bf
    return pre, feats, logits


def loss_and_grads(params, x, y):
    wc, bc, wf, bf = params
    n = x.shape[0]
    pre, feats, logits = forward(params, x)
    z = logits - logits.max(axis=1, keepdims=True)
    prob = np.exp(z)
    prob /= prob.sum(axis=1, keepdims=True)
    loss = -np.mean(np.log(prob[np.arange(n), y] + 1e-12))
    dlog = prob
    dlog[np.arange(n), y] -= 1.0
    dlog /= n
    g_wf = dlog.T @ feats
    g_bf = dlog.sum(axis=0)
    dfeat = dlog @ wf
    dact = dfeat.reshape(n, CHANNELS, -1).transpose(0, 2, 1) * (pre > 0)
    g_wc = np.einsum("npc,npk->ck", dact, _patches(x)).reshape(wc.shape)
    g_bc = dact.sum(axis=(0, 1))
    return loss, [g_wc, g_bc, g_wf, g_bf]


def predict(params, x) -> np.ndarray:
    return forward(params, x)[2].argmax(axis=1)


def as_model_gradient(grads: Sequence[np.ndarray], data_count: int) -> ModelGradient:
    return ModelGradient(tuple(GradientTensor(s, g.reshape(-1)) for s, g in zip(SHAPES, grads)), data_count)


def global_update(gradients: Sequence[ModelGradient], alphas: Sequence[float] | None, config: CompressionConfig, seed: int) -> list[np.ndarray]:
    """Aggregated global gradient, per layer, as float32 arrays.

    With ``alphas=None`` the raw gradients are averaged (data-weighted FedAvg)
    through the same accumulation path as the masked aggregation.
    """
    if alphas is None:
        dense = [[t.values for t in g.layers] for g in gradients]
        masks = [[np.ones(t.shape.size, dtype=bool) for t in g.layers] for g in gradients]
        out = aggregate_dense(dense, masks, [g.data_count for g in gradients], SHAPES)
    else:
        uploads = []
        for i, (g, a) in enumerate(zip(gradients, alphas)):
            dev_seed = int(np.random.SeedSequence([seed & (2**64 - 1), i]).generate_state(1)[0])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", CompressionLimitWarning)
                blobs, _ = compress_model(g, a, config, dev_seed)
            uploads.append(DeviceUpload(i, blobs, g.data_count))
        out = aggregate(uploads)
    return [t.values for t in out.layers]


def shard_sizes(scenario: Scenario, samples_per_device: int) -> list[int]:
    mean_d = scenario.config.total_data / len(scenario.devices)
    return [max(8, int(round(samples_per_device * d.D / mean_d))) for d in scenario.devices]


def run_toy_training(scenario: Scenario, spec: ToyTrainSpec) -> ToyTrainResult:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed & (2**64 - 1), 7])))
    sizes = shard_sizes(scenario, spec.samples_per_device)
    x_all, y_all = make_blobs(sum(sizes) + spec.test_samples, rng, spec.blob_separation, spec.pixel_noise)
    x_test, y_test = x_all[sum(sizes):], y_all[sum(sizes):]
    bounds = np.cumsum([0] + sizes)
    shards = [(x_all[a:b], y_all[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    x_train, y_train = x_all[: sum(sizes)], y_all[: sum(sizes)]

    params = init_params(rng)
    ledgers, accs, losses = [], [], []
    cumulative = 0.0
    initial_loss = None
    bad_rounds = 0
    for t in range(spec.rounds):
        profiles, plans = round_plans(scenario, spec.strategy, t)
        ledger = ledger_for_round(scenario, profiles, plans, t, cumulative)
        cumulative = ledger.cumulative_energy
        ledgers.append(ledger)

        active = [i for i, rec in enumerate(ledger.devices) if rec.participating]
        grads = [as_model_gradient(loss_and_grads(params, *shards[i])[1], sizes[i]) for i in active]
        if spec.strategy == "uncompressed":
            alphas = None
        elif spec.fixed_alpha is not None:
            alphas = [spec.fixed_alpha] * len(active)
        else:
            alphas = [plans[i].alpha for i in active]
        round_seed = int(np.random.SeedSequence([spec.seed & (2**64 - 1), 8, t]).generate_state(1)[0])
        update = global_update(grads, alphas, spec.compression, round_seed)
        params = [p - spec.learning_rate * u.astype(np.float64).reshape(p.shape) for p, u in zip(params, update)]

        loss, _ = loss_and_grads(params, x_train, y_train)
        losses.append(float(loss))
        accs.append(float(np.mean(predict(params, x_test) == y_test)))
        if initial_loss is None:
            initial_loss = loss
        bad_rounds = bad_rounds + 1 if not np.isfinite(loss) or loss > 10 * initial_loss else 0
        if bad_rounds >= 10:
            return ToyTrainResult(ledgers, accs, losses, diverged=True)
    return ToyTrainResult(ledgers, accs, losses)
