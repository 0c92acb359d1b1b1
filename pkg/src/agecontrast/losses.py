"""Training losses over features and age distributions.

Every loss returns a scalar tensor and is differentiable through the
gradient tape; all of them are non-negative at valid inputs and zero
exactly at their documented minimizer. ``total_loss`` combines them as

    total = l_s + lambda_m*l_m + lambda_v*l_v + lambda_c*l_c + lambda_t*l_t
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Probability floor applied before logarithms (cross-entropy and KL).
PROB_FLOOR = 1e-12

# Feature norms below this reject the cosine loss outright.
NORM_FLOOR = 1e-12

COSINE_FORMS = ("one_minus", "negative", "raw")
MEAN_FORMS = ("squared", "absolute")
PAIR_LOSSES = ("cosine", "kld")


@dataclass(frozen=True)
class LossWeights:
    """Weights for the combined objective, plus formulation switches.

    lambda_c weights the positive-pair loss (cosine by default, KL when
    pair_loss="kld"); lambda_t weights the triplet hinge with margin
    alpha. cosine_form and mean_form expose alternative formulations for
    ablation sweeps.
    """

    lambda_m: float = 0.2
    lambda_v: float = 0.05
    lambda_c: float = 0.0
    lambda_t: float = 0.0
    alpha: float = 0.2
    pair_loss: str = "cosine"
    cosine_form: str = "one_minus"
    mean_form: str = "squared"

    def __post_init__(self):
        for name in ("lambda_m", "lambda_v", "lambda_c", "lambda_t", "alpha"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"LossWeights: {name} must be finite and >= 0, got {v}")
        if self.pair_loss not in PAIR_LOSSES:
            raise ValueError(f"LossWeights: pair_loss must be one of {PAIR_LOSSES}")
        if self.cosine_form not in COSINE_FORMS:
            raise ValueError(f"LossWeights: cosine_form must be one of {COSINE_FORMS}")
        if self.mean_form not in MEAN_FORMS:
            raise ValueError(f"LossWeights: mean_form must be one of {MEAN_FORMS}")

    def to_dict(self) -> dict:
        return {
            "lambda_m": self.lambda_m, "lambda_v": self.lambda_v,
            "lambda_c": self.lambda_c, "lambda_t": self.lambda_t,
            "alpha": self.alpha, "pair_loss": self.pair_loss,
            "cosine_form": self.cosine_form, "mean_form": self.mean_form,
        }


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values and the weighted total for one step or epoch."""

    l_s: float
    l_m: float
    l_v: float
    l_c: float
    l_t: float
    total: float

    FIELDS = ("l_s", "l_m", "l_v", "l_c", "l_t", "total")

    def as_row(self) -> list[float]:
        return [self.l_s, self.l_m, self.l_v, self.l_c, self.l_t, self.total]


def _labels(num_ages: int) -> np.ndarray:
    return np.arange(1, num_ages + 1, dtype=np.float64)


def _check_age(y: int, num_ages: int) -> int:
    y = int(y)
    if not 1 <= y <= num_ages:
        raise ValueError(f"age label {y} out of range 1..{num_ages}")
    return y


def softmax_ce(s, y: int) -> Tensor:
    """Cross-entropy -log s_y against the true label."""
    st = s if isinstance(s, Tensor) else Tensor(s)
    y = _check_age(y, st.data.shape[0])
    onehot = np.zeros(st.data.shape[0])
    onehot[y - 1] = 1.0
    return -ad.log(ad.clamp_min(ad.dot(st, onehot), PROB_FLOOR))


def mean_loss(s, y: int, form: str = "squared") -> Tensor:
    """Penalty on the distribution mean missing the true age.

    "squared" is 0.5*(mean - y)^2; "absolute" is |mean - y|.
    """
    st = s if isinstance(s, Tensor) else Tensor(s)
    y = _check_age(y, st.data.shape[0])
    diff = ad.dot(st, _labels(st.data.shape[0])) - float(y)
    if form == "squared":
        return 0.5 * (diff * diff)
    if form == "absolute":
        return ad.relu(diff) + ad.relu(-diff)
    raise ValueError(f"mean_loss: unknown form {form!r}")


def variance_loss(s) -> Tensor:
    """Variance of the label distribution: sum_j s_j (j - mean)^2."""
    st = s if isinstance(s, Tensor) else Tensor(s)
    labels = _labels(st.data.shape[0])
    mu = ad.dot(st, labels)
    dev = ad.sub(labels, mu)
    return ad.dot(st, dev * dev)


def cosine_loss(f_a, f_p, form: str = "one_minus") -> Tensor:
    """Positive-pair feature alignment via cosine similarity.

    The default "one_minus" form is 1 - cos(f_a, f_p): zero iff the
    features are positive scalar multiples, 2 when antiparallel.
    "negative" (-cos) and "raw" (+cos) are ablation alternatives.
    """
    fa = f_a if isinstance(f_a, Tensor) else Tensor(f_a)
    fp = f_p if isinstance(f_p, Tensor) else Tensor(f_p)
    if fa.data.shape != fp.data.shape or fa.data.ndim != 1:
        raise ValueError(f"cosine_loss: shape mismatch {fa.data.shape} vs {fp.data.shape}")
    na = float(np.sqrt((fa.data ** 2).sum()))
    nb = float(np.sqrt((fp.data ** 2).sum()))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise ValueError(
            f"cosine_loss: input norm below floor {NORM_FLOOR:g} (got {na:.3g} and {nb:.3g})")
    cos = ad.div(ad.dot(fa, fp), ad.norm(fa) * ad.norm(fp))
    if form == "one_minus":
        return 1.0 - cos
    if form == "negative":
        return -cos
    if form == "raw":
        return cos
    raise ValueError(f"cosine_loss: unknown form {form!r}")


def triplet_margin_loss(s_a, s_p, s_n, alpha: float) -> Tensor:
    """Hinge on squared distances between age distributions:
    max(||s_a - s_p||^2 - ||s_a - s_n||^2 + alpha, 0).
    """
    sa = s_a if isinstance(s_a, Tensor) else Tensor(s_a)
    sp = s_p if isinstance(s_p, Tensor) else Tensor(s_p)
    sn = s_n if isinstance(s_n, Tensor) else Tensor(s_n)
    if not (sa.data.shape == sp.data.shape == sn.data.shape) or sa.data.ndim != 1:
        raise ValueError(
            f"triplet_margin_loss: shape mismatch {sa.data.shape}/{sp.data.shape}/{sn.data.shape}")
    if not np.isfinite(alpha) or alpha < 0:
        raise ValueError(f"triplet_margin_loss: alpha must be finite and >= 0, got {alpha}")
    gap = ad.norm_sq(sa - sp) - ad.norm_sq(sa - sn) + float(alpha)
    return ad.relu(gap)


def kld_loss(s_a, s_p) -> Tensor:
    """KL divergence of the anchor distribution from the positive's,
    scaled by 1/A, with entries floored at 1e-12 before the logs."""
    sa = s_a if isinstance(s_a, Tensor) else Tensor(s_a)
    sp = s_p if isinstance(s_p, Tensor) else Tensor(s_p)
    if sa.data.shape != sp.data.shape or sa.data.ndim != 1:
        raise ValueError(f"kld_loss: shape mismatch {sa.data.shape} vs {sp.data.shape}")
    num_ages = sa.data.shape[0]
    log_a = ad.log(ad.clamp_min(sa, PROB_FLOOR))
    log_p = ad.log(ad.clamp_min(sp, PROB_FLOOR))
    return ad.sum_all(sp * (log_p - log_a)) * (1.0 / num_ages)


def _scalar(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def total_loss(l_s, l_m=0.0, l_v=0.0, l_c=0.0, l_t=0.0,
               weights: LossWeights = LossWeights()):
    """Weighted combination of the loss terms.

    Terms whose weight is zero contribute nothing (and need not have
    been computed: pass 0.0). Accepts scalar tensors or plain floats;
    returns (total, LossBreakdown) where total has the same kind as the
    inputs so it can be backpropagated.
    """
    total = l_s
    for lam, term in ((weights.lambda_m, l_m), (weights.lambda_v, l_v),
                      (weights.lambda_c, l_c), (weights.lambda_t, l_t)):
        if lam != 0.0:
            total = total + term * lam
    breakdown = LossBreakdown(
        l_s=_scalar(l_s), l_m=_scalar(l_m), l_v=_scalar(l_v),
        l_c=_scalar(l_c), l_t=_scalar(l_t), total=_scalar(total),
    )
    return total, breakdown
