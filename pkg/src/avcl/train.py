"""Pretraining loop, linear-probe evaluation, and the ablation harness.

Pretraining optimizes the weighted alignment + contrastive objective with
momentum SGD; the checkpoint kept is the one with the lowest validation
loss (labels are never touched at this stage). Representation quality is
then measured by a linear probe: encoders frozen, a single affine head
trained with softmax cross-entropy on the concatenated fused features,
selected by validation accuracy, reported on the test split.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .audio import StftParams
from .data import DatasetSplit, PairedBatch, SpectrogramCache, SyntheticSpec, batches, generate
from .errors import ConfigError, ContractError, NumericsError
from .losses import LossConfig, cgra_loss, cross_correlation, selfcl_loss_a, selfcl_loss_v
from .model import (AmfmParams, EncoderParams, ModelState, amfm_forward, config_hash,
                    encode, init_model, pool_audio)
from .tensor import Tensor, concat

LAMBDA_SWEEP = [(0.1, 0.9), (0.3, 0.7), (0.5, 0.5), (0.7, 0.3), (0.9, 0.1)]
METRICS_HEADER = "epoch,total,cgra,selfcl_v,selfcl_a,grad_norm,wall_ms"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    amfm_enabled: bool = True
    cgra_enabled: bool = True
    selfcl_enabled: bool = True
    embed_dim: int = 64
    hidden_dim: int = 64
    audio_pool: str = "mean"        # "mean" (per band) or "flatten"
    # sigmoid keeps gates strictly positive; the relu gate is implemented
    # and selectable but lets training drive feature columns to exact
    # zero norm, which the losses treat as degenerate
    gate_fn: str = "sigmoid"
    # fixed lean probe budget: organized features converge within a few
    # epochs while raw random-encoder features do not, which is the
    # separation the probe exists to measure
    probe_epochs: int = 30
    probe_lr: float = 0.005
    probe_weight_decay: float = 0.005  # applied to the probe head only
    probe_mode: str = "linear"      # "linear" or "finetune"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not (self.cgra_enabled or self.selfcl_enabled):
            raise ConfigError("at least one of the loss terms must stay enabled")
        if self.probe_mode not in ("linear", "finetune"):
            raise ConfigError(f"unknown probe_mode {self.probe_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsRecord:
    epoch: int
    total: float
    cgra: float
    selfcl_v: float
    selfcl_a: float
    grad_norm: float
    wall_ms: float

    def csv_row(self) -> str:
        return (f"{self.epoch},{self.total:.12g},{self.cgra:.12g},{self.selfcl_v:.12g},"
                f"{self.selfcl_a:.12g},{self.grad_norm:.12g},{self.wall_ms:.3f}")


# ------------------------------------------------------------------ optimizer

def sgd_step(params: list[Tensor], velocities: list[np.ndarray], lr: float,
             momentum: float, weight_decay: float) -> None:
    """v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v."""
    for p, v in zip(params, velocities):
        if p.grad is None:
            raise ContractError("sgd_step: a registered parameter has no gradient")
        v *= momentum
        v += p.grad + weight_decay * p.data
        p.data -= lr * v


class SGD:
    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        self.params = params
        self.velocities = [np.zeros_like(p.data) for p in params]
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay

    def step(self) -> None:
        sgd_step(self.params, self.velocities, self.lr, self.momentum, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -------------------------------------------------------------------- forward

def batch_features(state: ModelState, batch: PairedBatch,
                   cfg: TrainConfig) -> tuple[Tensor, Tensor]:
    """Encode both modalities and apply fusion when enabled."""
    audio_in = Tensor(np.stack([pool_audio(m.values, cfg.audio_pool) for m in batch.mel]))
    v_emb = encode(batch.visual, state.visual)
    a_emb = encode(audio_in, state.audio)
    if cfg.amfm_enabled:
        return amfm_forward(v_emb, a_emb, state.amfm, cfg.gate_fn)
    return v_emb, a_emb


def loss_terms(f_v: Tensor, f_a: Tensor,
               cfg: TrainConfig) -> tuple[Tensor, float, float, float]:
    """Weighted objective with disabled terms zero-weighted.

    Returns (total tensor, raw alignment value, raw contrastive values).
    """
    lc = cfg.loss
    total = None
    cgra_val = sv_val = sa_val = 0.0
    if cfg.cgra_enabled:
        corr = cgra_loss(cross_correlation(f_v, f_a, center=lc.center), lc.lambda_offdiag)
        cgra_val = corr.item()
        total = corr * lc.lambda_cor
    if cfg.selfcl_enabled:
        sv = selfcl_loss_v(f_v, f_a, lc.tau)
        sa = selfcl_loss_a(f_a, f_v, lc.tau)
        sv_val, sa_val = sv.item(), sa.item()
        contrastive = (sv + sa) * lc.lambda_self
        total = contrastive if total is None else total + contrastive
    return total, cgra_val, sv_val, sa_val


def _whole_split_batch(samples, cache: SpectrogramCache) -> PairedBatch:
    visual = Tensor(np.stack([s.visual.data for s in samples]))
    return PairedBatch(visual=visual, mel=[cache.get(s) for s in samples],
                       labels=np.array([s.label for s in samples], dtype=np.int64))


def evaluate_loss(state: ModelState, samples, cfg: TrainConfig,
                  cache: SpectrogramCache) -> float:
    batch = _whole_split_batch(samples, cache)
    f_v, f_a = batch_features(state, batch, cfg)
    total, _, _, _ = loss_terms(f_v, f_a, cfg)
    return total.item()


def clone_state(state: ModelState) -> ModelState:
    def clone_enc(enc: EncoderParams) -> EncoderParams:
        return EncoderParams(
            layers=[(Tensor(w.data.copy(), requires_grad=True),
                     Tensor(b.data.copy(), requires_grad=True)) for w, b in enc.layers],
            embed_dim=enc.embed_dim)

    return ModelState(
        visual=clone_enc(state.visual),
        audio=clone_enc(state.audio),
        amfm=AmfmParams(*[Tensor(t.data.copy(), requires_grad=True)
                          for t in state.amfm.parameters()]))


# ------------------------------------------------------------------- pretrain

@dataclass
class TrainResult:
    state: ModelState            # best-on-validation parameters
    records: list[MetricsRecord]
    best_val_loss: float
    best_epoch: int


def pretrain(cfg: TrainConfig, split: DatasetSplit, stft: StftParams | None = None,
             metrics_path=None, cache: SpectrogramCache | None = None) -> TrainResult:
    if cfg.batch_size > len(split.train):
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds train split size {len(split.train)}")
    cache = cache or SpectrogramCache(stft)
    cache.warm(split.train + split.val)

    params = StftParams() if stft is None else stft
    audio_dim = (params.n_bands if cfg.audio_pool == "mean"
                 else params.n_bands * params.target_frames)
    visual_dim = split.train[0].visual.size
    state = init_model(cfg.seed, visual_dim, audio_dim, cfg.hidden_dim, cfg.embed_dim)

    trainable = state.visual.parameters() + state.audio.parameters()
    if cfg.amfm_enabled:
        trainable += state.amfm.parameters()
    opt = SGD(trainable, cfg.lr, cfg.momentum, cfg.weight_decay)

    if metrics_path is not None:
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write(METRICS_HEADER + "\n")

    records: list[MetricsRecord] = []
    best_val = float("inf")
    best_state = clone_state(state)
    best_epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sums = np.zeros(5)
        epoch_batches = batches(split.train, cfg.batch_size, cfg.seed, epoch, cache)
        for bi, batch in enumerate(epoch_batches):
            f_v, f_a = batch_features(state, batch, cfg)
            total, cg, sv, sa = loss_terms(f_v, f_a, cfg)
            value = total.item()
            if not np.isfinite(value):
                raise NumericsError(
                    f"non-finite loss {value} at epoch {epoch}, batch {bi}")
            opt.zero_grad()
            total.backward()
            gn = float(np.sqrt(sum(float(np.sum(p.grad * p.grad))
                                   for p in opt.params if p.grad is not None)))
            opt.step()
            sums += (value, cg, sv, sa, gn)
        means = sums / max(len(epoch_batches), 1)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        rec = MetricsRecord(epoch, *means, wall_ms)
        records.append(rec)
        if metrics_path is not None:
            with open(metrics_path, "a", encoding="utf-8") as fh:
                fh.write(rec.csv_row() + "\n")
                fh.flush()

        if len(split.val) >= 2:
            val_loss = evaluate_loss(state, split.val, cfg, cache)
        else:
            val_loss = means[0]
        if val_loss < best_val:
            best_val = val_loss
            best_state = clone_state(state)
            best_epoch = epoch
    return TrainResult(state=best_state, records=records,
                       best_val_loss=best_val, best_epoch=best_epoch)


# ---------------------------------------------------------------- linear probe

@dataclass
class ProbeResult:
    accuracy: float
    val_accuracy: float
    best_epoch: int


def extract_features(state: ModelState, samples, cfg: TrainConfig,
                     cache: SpectrogramCache) -> tuple[np.ndarray, np.ndarray]:
    """Frozen concatenated [f_v, f_a] features plus labels."""
    batch = _whole_split_batch(samples, cache)
    f_v, f_a = batch_features(state, batch, cfg)
    x = concat(f_v, f_a, axis=1)
    return x.data.copy(), batch.labels


def _cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    rows, cols = logits.shape
    shift = logits.data.max(axis=1)  # constant: keeps exp() in range, gradient exact
    shifted = logits - Tensor(np.repeat(shift[:, None], cols, axis=1))
    lse = shifted.exp().sum(axis=1).log() + Tensor(shift)
    picked = (logits * Tensor(np.eye(cols)[labels])).sum(axis=1)
    return (lse - picked).sum() * (1.0 / rows)


def _accuracy(weights: Tensor, bias: Tensor, x: np.ndarray, y: np.ndarray) -> float:
    logits = x @ weights.data.T + bias.data
    return float(np.mean(np.argmax(logits, axis=1) == y))


def linear_probe(state: ModelState, split: DatasetSplit, cfg: TrainConfig,
                 stft: StftParams | None = None,
                 cache: SpectrogramCache | None = None) -> ProbeResult:
    """Train an affine head on frozen features; report test accuracy of the
    validation-selected epoch. Labels are used here and only here."""
    cache = cache or SpectrogramCache(stft)
    cache.warm(split.all_samples())

    all_labels = {s.label for s in split.all_samples()}
    train_labels = {s.label for s in split.train}
    missing = sorted(all_labels - train_labels)
    if missing:
        raise ConfigError(f"classes {missing} absent from the train split")
    n_classes = max(all_labels) + 1

    finetune = cfg.probe_mode == "finetune"
    x_tr, y_tr = extract_features(state, split.train, cfg, cache)
    x_va, y_va = extract_features(state, split.val, cfg, cache) if split.val else (None, None)
    x_te, y_te = extract_features(state, split.test, cfg, cache)

    rng = np.random.default_rng(int(cfg.seed) + 0x9E37)
    fan_in = x_tr.shape[1]
    bound = 1.0 / np.sqrt(fan_in)
    weights = Tensor(rng.uniform(-bound, bound, (n_classes, fan_in)), requires_grad=True)
    bias = Tensor(rng.uniform(-bound, bound, n_classes), requires_grad=True)

    head_opt = SGD([weights, bias], cfg.probe_lr, cfg.momentum, cfg.probe_weight_decay)
    body_opt = SGD(state.parameters(), cfg.probe_lr, cfg.momentum, 0.0) if finetune else None

    ones = Tensor(np.ones((x_tr.shape[0], 1)))
    best = (-1.0, None, None, 0)
    for epoch in range(1, cfg.probe_epochs + 1):
        if finetune:
            x_tr, y_tr = extract_features(state, split.train, cfg, cache)
        features = Tensor(x_tr)
        logits = features @ weights.T + ones @ bias.reshape(1, n_classes)
        loss = _cross_entropy(logits, y_tr)
        head_opt.zero_grad()
        if body_opt:
            body_opt.zero_grad()
        loss.backward()
        head_opt.step()
        if body_opt:
            body_opt.step()

        val_acc = (_accuracy(weights, bias, x_va, y_va) if x_va is not None
                   else _accuracy(weights, bias, x_tr, y_tr))
        if val_acc > best[0]:
            best = (val_acc, weights.data.copy(), bias.data.copy(), epoch)

    best_w = Tensor(best[1] if best[1] is not None else weights.data)
    best_b = Tensor(best[2] if best[2] is not None else bias.data)
    if finetune:
        x_te, y_te = extract_features(state, split.test, cfg, cache)
    return ProbeResult(accuracy=_accuracy(best_w, best_b, x_te, y_te),
                       val_accuracy=best[0], best_epoch=best[3])


# ------------------------------------------------------------------- ablation

VALID_AXES = ("amfm", "cgra", "selfcl", "lambda_sweep")


@dataclass
class AblationRow:
    variant: str
    seed: int
    accuracy: float


def _variants(base: TrainConfig, axes) -> list[tuple[str, TrainConfig]]:
    out = [("full", base)]
    for axis in axes:
        if axis not in VALID_AXES:
            raise ConfigError(f"unknown ablation axis {axis!r}; valid: {VALID_AXES}")
    if "amfm" in axes:
        out.append(("amfm_off", replace(base, amfm_enabled=False)))
    if "cgra" in axes:
        out.append(("cgra_off", replace(base, cgra_enabled=False)))
    if "selfcl" in axes:
        out.append(("selfcl_off", replace(base, selfcl_enabled=False)))
    if "lambda_sweep" in axes:
        for cor, self_w in LAMBDA_SWEEP:
            cfg = replace(base, loss=replace(base.loss, lambda_cor=cor, lambda_self=self_w))
            out.append((f"lambda_{cor:g}_{self_w:g}", cfg))
    return out


def ablate(base: TrainConfig, spec: SyntheticSpec, axes,
           seeds=(0, 1, 2), stft: StftParams | None = None,
           progress=None) -> tuple[list[AblationRow], list[tuple[str, float, float]]]:
    """Pretrain + probe every variant on paired seeds.

    All variants at a given seed share the dataset and the initial
    parameters, so accuracy deltas are attributable to the ablated module.
    """
    rows: list[AblationRow] = []
    variants = _variants(base, axes)
    for seed in seeds:
        split = generate(replace(spec, seed=seed))
        cache = SpectrogramCache(stft)
        cache.warm(split.all_samples())
        for name, cfg in variants:
            run_cfg = replace(cfg, seed=seed)
            result = pretrain(run_cfg, split, stft, cache=cache)
            probe = linear_probe(result.state, split, run_cfg, stft, cache=cache)
            rows.append(AblationRow(variant=name, seed=seed, accuracy=probe.accuracy))
            if progress:
                progress(rows[-1])
    summary = []
    for name, _ in variants:
        accs = np.array([r.accuracy for r in rows if r.variant == name])
        sd = float(np.std(accs, ddof=1)) if accs.size > 1 else 0.0
        summary.append((name, float(np.mean(accs)), sd))
    return rows, summary


def run_config_hash(cfg: TrainConfig, spec: SyntheticSpec | None,
                    stft: StftParams | None) -> str:
    payload = {"train": cfg.to_dict()}
    if spec is not None:
        payload["data"] = asdict(spec)
    if stft is not None:
        payload["stft"] = asdict(stft)
    return config_hash(payload)
