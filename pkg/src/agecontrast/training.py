"""Adam training loop over triplet batches.

One epoch passes every sample as anchor once. For each batch the anchors
(and, when contrastive weights are active, their positives/negatives)
run through the network in one tracked batched forward; the combined
loss backpropagates through the tape and Adam updates the parameters
in place. Everything is deterministic per (dataset, config): epoch
sampling uses seeds spawned from the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tape, Tensor
from .data import LabeledDataset, Triplet, has_triplet_negatives, iter_epoch_batches
from .errors import IncompatibleDataError, OptimizationError
from .losses import (NORM_FLOOR, PROB_FLOOR, LossBreakdown, LossWeights,
                     total_loss)
from .model import Model, ModelConfig, ParamView, forward_batch, init_model


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 30
    batch_size: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden_widths: tuple[int, ...] = (64,)
    feature_dim: int = 64
    supervise_all_triplet_members: bool = False
    triplets_per_anchor: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.triplets_per_anchor < 1:
            raise ValueError(f"triplets_per_anchor must be >= 1, got {self.triplets_per_anchor}")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))

    def model_config(self, ds: LabeledDataset) -> ModelConfig:
        return ModelConfig(ds.input_dim, self.hidden_widths, self.feature_dim, ds.num_ages)

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "weights": self.weights.to_dict(),
            "seed": self.seed,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "hidden_widths": list(self.hidden_widths),
            "feature_dim": self.feature_dim,
            "supervise_all_triplet_members": self.supervise_all_triplet_members,
            "triplets_per_anchor": self.triplets_per_anchor,
        }


@dataclass
class AdamState:
    """First/second moment accumulators aligned with Model.parameters()."""

    m: list[Array]
    v: list[Array]
    step: int = 0

    @classmethod
    def for_model(cls, model: Model) -> "AdamState":
        params = model.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(model: Model, grads: list[Array], state: AdamState,
              cfg: TrainConfig) -> tuple[Model, AdamState]:
    """Standard Adam update with bias correction; parameters update in place."""
    params = model.parameters()
    if len(grads) != len(params):
        raise ValueError(f"adam_step: {len(grads)} gradients for {len(params)} parameters")
    names = model.param_names()
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != {p.shape} for {names[i]}")
        if not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite gradient for {names[i]} at step {t}")
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return model, state


# ---------------------------------------------------------------------------
# Batched loss composition

def _batch_ce_sum(s_rows: Tensor, ages: Array) -> Tensor:
    onehot = np.zeros(s_rows.data.shape)
    onehot[np.arange(len(ages)), np.asarray(ages) - 1] = 1.0
    picked = ad.row_sum(s_rows * onehot)
    return -ad.sum_all(ad.log(ad.clamp_min(picked, PROB_FLOOR)))


def _batch_mean_sum(s_rows: Tensor, ages: Array, form: str) -> Tensor:
    labels = np.arange(1, s_rows.data.shape[1] + 1, dtype=np.float64)
    diff = ad.matmul(s_rows, labels) - np.asarray(ages, dtype=np.float64)
    if form == "squared":
        return 0.5 * ad.sum_all(diff * diff)
    return ad.sum_all(ad.relu(diff) + ad.relu(-diff))


def _batch_var_sum(s_rows: Tensor) -> Tensor:
    # Moment form E[j^2] - E[j]^2; equal to the per-sample definition on
    # the simplex, which softmax rows satisfy by construction.
    labels = np.arange(1, s_rows.data.shape[1] + 1, dtype=np.float64)
    mu = ad.matmul(s_rows, labels)
    second = ad.matmul(s_rows, labels * labels)
    return ad.sum_all(second - mu * mu)


def _batch_cosine_mean(f_anchor: Tensor, f_pos: Tensor, form: str) -> Tensor:
    dots = ad.row_sum(f_anchor * f_pos)
    # The squared norms are floored before the sqrt so a dead (all-zero)
    # feature row neither divides by zero nor feeds nan through the sqrt
    # pullback; such a pair contributes a constant and no gradient.
    na = ad.sqrt(ad.clamp_min(ad.row_sum(f_anchor * f_anchor), NORM_FLOOR))
    nb = ad.sqrt(ad.clamp_min(ad.row_sum(f_pos * f_pos), NORM_FLOOR))
    cos = dots / (na * nb)
    if form == "one_minus":
        per_pair = 1.0 - cos
    elif form == "negative":
        per_pair = -cos
    else:
        per_pair = cos
    return ad.sum_all(per_pair) * (1.0 / f_anchor.data.shape[0])


def _batch_kld_mean(s_anchor: Tensor, s_pos: Tensor) -> Tensor:
    num_ages = s_anchor.data.shape[1]
    log_a = ad.log(ad.clamp_min(s_anchor, PROB_FLOOR))
    log_p = ad.log(ad.clamp_min(s_pos, PROB_FLOOR))
    per_pair = ad.row_sum(s_pos * (log_p - log_a)) * (1.0 / num_ages)
    return ad.sum_all(per_pair) * (1.0 / s_anchor.data.shape[0])


def _batch_triplet_mean(s_a: Tensor, s_p: Tensor, s_n: Tensor, alpha: float) -> Tensor:
    dp = s_a - s_p
    dn = s_a - s_n
    gap = ad.row_sum(dp * dp) - ad.row_sum(dn * dn) + float(alpha)
    return ad.sum_all(ad.relu(gap)) * (1.0 / s_a.data.shape[0])


def build_batch_loss(params: Model | ParamView, ds: LabeledDataset,
                     triplets: list[Triplet], weights: LossWeights,
                     supervise_all: bool = False):
    """Forward the batch and compose the weighted loss.

    Anchors always receive the supervised terms; contrastive terms only
    cover triplet slots whose candidates existed. With supervise_all the
    forwarded positives/negatives are supervised too. Returns
    (total, LossBreakdown); total is a tracked scalar when params are.
    """
    anchors = np.array([t.a for t in triplets], dtype=np.int64)
    f_a, s_a = forward_batch(params, ds.inputs[anchors])
    need_pos = weights.lambda_c > 0 or weights.lambda_t > 0
    need_neg = weights.lambda_t > 0

    pos_rows = [(bi, t.p) for bi, t in enumerate(triplets) if t.p is not None]
    trip_rows = [(bi, t.p, t.n) for bi, t in enumerate(triplets)
                 if t.p is not None and t.n is not None]

    f_p = s_p = s_n = None
    pos_indices = np.array([p for _, p in pos_rows], dtype=np.int64)
    if need_pos and pos_rows:
        f_p, s_p = forward_batch(params, ds.inputs[pos_indices])
    neg_indices = np.array([n for _, _, n in trip_rows], dtype=np.int64)
    if need_neg and trip_rows:
        _, s_n = forward_batch(params, ds.inputs[neg_indices])

    supervised = [(s_a, ds.ages[anchors])]
    if supervise_all:
        if s_p is not None:
            supervised.append((s_p, ds.ages[pos_indices]))
        if s_n is not None:
            supervised.append((s_n, ds.ages[neg_indices]))
    count = sum(len(ages) for _, ages in supervised)
    l_s = _sum_terms(_batch_ce_sum(rows, ages) for rows, ages in supervised) * (1.0 / count)
    l_m = (_sum_terms(_batch_mean_sum(rows, ages, weights.mean_form) for rows, ages in supervised)
           * (1.0 / count)) if weights.lambda_m > 0 else 0.0
    l_v = (_sum_terms(_batch_var_sum(rows) for rows, _ in supervised)
           * (1.0 / count)) if weights.lambda_v > 0 else 0.0

    l_c = 0.0
    if weights.lambda_c > 0 and pos_rows:
        sel = [bi for bi, _ in pos_rows]
        if weights.pair_loss == "cosine":
            l_c = _batch_cosine_mean(ad.take_rows(f_a, sel), f_p, weights.cosine_form)
        else:
            l_c = _batch_kld_mean(ad.take_rows(s_a, sel), s_p)

    l_t = 0.0
    if weights.lambda_t > 0 and trip_rows:
        pos_slot = {bi: k for k, (bi, _) in enumerate(pos_rows)}
        a_sel = [bi for bi, _, _ in trip_rows]
        p_sel = [pos_slot[bi] for bi, _, _ in trip_rows]
        l_t = _batch_triplet_mean(
            ad.take_rows(s_a, a_sel), ad.take_rows(s_p, p_sel), s_n, weights.alpha)

    return total_loss(l_s, l_m, l_v, l_c, l_t, weights)


def _sum_terms(terms) -> Tensor:
    total = None
    for t in terms:
        total = t if total is None else total + t
    return total


# ---------------------------------------------------------------------------
# Training loop

def train(ds: LabeledDataset, cfg: TrainConfig) -> tuple[Model, list[LossBreakdown]]:
    """Train a fresh model on the dataset; returns it with the per-epoch
    loss history (term means recomposed into the weighted total)."""
    if cfg.weights.lambda_t > 0 and not has_triplet_negatives(ds):
        raise IncompatibleDataError(
            "triplet margin loss is active but no anchor has a valid negative "
            "(single identity or single age): dataset is protocol-incompatible")
    model = init_model(cfg.model_config(ds), cfg.seed)
    state = AdamState.for_model(model)
    history: list[LossBreakdown] = []
    epoch_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.epochs)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(epoch_seeds[epoch])
        sums = np.zeros(5)
        batches = 0
        for triplets in iter_epoch_batches(ds, cfg.batch_size, rng, cfg.triplets_per_anchor):
            breakdown = _train_step(model, state, ds, triplets, cfg)
            sums += [breakdown.l_s, breakdown.l_m, breakdown.l_v, breakdown.l_c, breakdown.l_t]
            batches += 1
        means = sums / batches
        _, epoch_breakdown = total_loss(*means, weights=cfg.weights)
        history.append(epoch_breakdown)
    return model, history


def _train_step(model: Model, state: AdamState, ds: LabeledDataset,
                triplets: list[Triplet], cfg: TrainConfig) -> LossBreakdown:
    tape = Tape()
    tracked = model.track(tape)
    total, breakdown = build_batch_loss(
        tracked, ds, triplets, cfg.weights, cfg.supervise_all_triplet_members)
    grad_map = tape.backward(total)
    grads = [grad_map.get(t.node, np.zeros(t.data.shape))
             for t in tracked.tracked_parameters()]
    adam_step(model, grads, state, cfg)
    return breakdown
