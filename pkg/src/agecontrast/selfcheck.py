"""Built-in verification suites.

Three suites back the ``selfcheck`` command: the gradient suite compares
every loss (and the whole composed batch loss through a tiny model)
against the central finite-difference oracle; the sampler suite checks
triplet constraints and candidate sets against a brute-force filter; the
split suite asserts the fold invariants of all three protocols.

Check points are seeded, and sampled away from non-smooth kinks (relu
preactivations, hinge boundaries) so the difference quotient is valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .data import (FaceSample, LabeledDataset, Triplet, negative_set, positive_set,
                   sample_triplet_batch)
from .losses import (LossWeights, cosine_loss, kld_loss, mean_loss, softmax_ce,
                     total_loss, triplet_margin_loss, variance_loss)
from .model import ModelConfig, forward_values, init_model, pack_params, unpack_params
from .synth import SynthConfig, generate_dataset
from .training import build_batch_loss
from .evaluation import split_lopo, split_protocol

GRAD_TOL = 1e-4
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _random_distribution(rng: np.random.Generator, num_ages: int) -> np.ndarray:
    return _softmax(rng.normal(0.0, 1.0, num_ages))


def _loss_cases(rng: np.random.Generator, num_ages: int = 7, feat_dim: int = 8):
    """Named scalar functions over a flat point, one per loss term."""

    def case_softmax_ce():
        y = int(rng.integers(1, num_ages + 1))
        return lambda x: softmax_ce(x, y), _random_distribution(rng, num_ages)

    def case_mean():
        y = int(rng.integers(1, num_ages + 1))
        return lambda x: mean_loss(x, y), _random_distribution(rng, num_ages)

    def case_variance():
        return variance_loss, _random_distribution(rng, num_ages)

    def case_cosine():
        point = rng.normal(0.0, 1.0, 2 * feat_dim)
        fn = lambda x: cosine_loss(ad.slice1d(x, 0, feat_dim),
                                   ad.slice1d(x, feat_dim, 2 * feat_dim))
        return fn, point

    def case_triplet():
        alpha = 0.2
        while True:
            sa = _random_distribution(rng, num_ages)
            sp = _random_distribution(rng, num_ages)
            sn = _random_distribution(rng, num_ages)
            gap = ((sa - sp) ** 2).sum() - ((sa - sn) ** 2).sum() + alpha
            if abs(gap) > KINK_MARGIN:  # keep the hinge clearly one-sided
                break
        point = np.concatenate([sa, sp, sn])
        a = num_ages
        fn = lambda x: triplet_margin_loss(
            ad.slice1d(x, 0, a), ad.slice1d(x, a, 2 * a), ad.slice1d(x, 2 * a, 3 * a), alpha)
        return fn, point

    def case_kld():
        point = np.concatenate([_random_distribution(rng, num_ages),
                                _random_distribution(rng, num_ages)])
        a = num_ages
        fn = lambda x: kld_loss(ad.slice1d(x, 0, a), ad.slice1d(x, a, 2 * a))
        return fn, point

    def case_total():
        # All five terms over one flat point holding (s_a, s_p, s_n, f_a, f_p).
        weights = LossWeights(lambda_c=10.0, lambda_t=1.0)
        y = int(rng.integers(1, num_ages + 1))
        while True:
            sa = _random_distribution(rng, num_ages)
            sp = _random_distribution(rng, num_ages)
            sn = _random_distribution(rng, num_ages)
            gap = ((sa - sp) ** 2).sum() - ((sa - sn) ** 2).sum() + weights.alpha
            if abs(gap) > KINK_MARGIN:
                break
        point = np.concatenate([sa, sp, sn, rng.normal(0.0, 1.0, 2 * feat_dim)])
        a = num_ages

        def fn(x):
            s_a = ad.slice1d(x, 0, a)
            s_p = ad.slice1d(x, a, 2 * a)
            s_n = ad.slice1d(x, 2 * a, 3 * a)
            f_a = ad.slice1d(x, 3 * a, 3 * a + feat_dim)
            f_p = ad.slice1d(x, 3 * a + feat_dim, 3 * a + 2 * feat_dim)
            total, _ = total_loss(
                softmax_ce(s_a, y), mean_loss(s_a, y), variance_loss(s_a),
                cosine_loss(f_a, f_p), triplet_margin_loss(s_a, s_p, s_n, weights.alpha),
                weights)
            return total

        return fn, point

    return {
        "softmax_ce": case_softmax_ce,
        "mean_loss": case_mean,
        "variance_loss": case_variance,
        "cosine_loss": case_cosine,
        "triplet_margin_loss": case_triplet,
        "kld_loss": case_kld,
        "total_loss": case_total,
    }


def _poison_gradient(fn: Callable) -> Callable:
    """Value-preserving wrapper whose tape gradient is shifted by 0.01 per
    coordinate; used as the corrupted-gradient test fixture."""

    def wrapped(x: Tensor):
        drift = (ad.sum_all(x) - float(x.data.sum())) * 0.01
        return fn(x) + drift

    return wrapped


def _end_to_end_points(rng: np.random.Generator, config: ModelConfig, weights: LossWeights):
    """A (flat_params, dataset, triplets) check point with every relu
    preactivation and the triplet hinge away from their kinks."""
    batch = 4
    while True:
        model = init_model(config, seed=int(rng.integers(2 ** 31)))
        for w in model.weights:
            w += 0.1 * rng.normal(0.0, 1.0, w.shape)
        for b in model.biases:
            b += 0.1 * rng.normal(0.0, 1.0, b.shape)
        samples = []
        for i in range(batch * 3):
            samples.append(FaceSample(
                rng.normal(0.0, 1.0, config.input_dim),
                int(rng.integers(1, config.num_ages + 1)),
                f"p{i}"))
        ds = LabeledDataset(samples, config.num_ages)
        triplets = [Triplet(i, batch + i, 2 * batch + i) for i in range(batch)]
        if _away_from_kinks(model, ds, triplets, weights):
            return pack_params(model), ds, triplets


def _away_from_kinks(model, ds, triplets, weights) -> bool:
    idx = np.array([[t.a, t.p, t.n] for t in triplets]).ravel()
    h = ds.inputs[idx]
    for w, b in list(zip(model.weights, model.biases))[:-1]:
        pre = h @ w + b
        if np.min(np.abs(pre)) < KINK_MARGIN:
            return False
        h = np.maximum(pre, 0.0)
    _, s = forward_values(model, ds.inputs)
    for t in triplets:
        gap = (((s[t.a] - s[t.p]) ** 2).sum() - ((s[t.a] - s[t.n]) ** 2).sum()
               + weights.alpha)
        if abs(gap) < KINK_MARGIN:
            return False
    return True


def gradient_suite(points: int = 100, eps: float = 1e-5, tol: float = GRAD_TOL,
                   inject_fault: str | None = None) -> list[CheckResult]:
    """grad_check every loss at seeded random points, then the composed
    batch loss through a tiny model via one flat parameter vector."""
    results = []
    rng = np.random.default_rng(20240)
    for name, make_case in _loss_cases(rng).items():
        worst = 0.0
        for _ in range(points):
            fn, point = make_case()
            if inject_fault == name:
                fn = _poison_gradient(fn)
            worst = max(worst, grad_check(fn, point, eps))
        results.append(CheckResult(
            f"gradients.{name}", worst < tol, f"max relative error {worst:.3g}"))

    config = ModelConfig(input_dim=8, hidden_widths=(16,), feature_dim=8, num_ages=5)
    weights = LossWeights(lambda_c=10.0, lambda_t=1.0)
    e2e_points = max(1, points // 10)
    worst = 0.0
    for _ in range(e2e_points):
        flat, ds, triplets = _end_to_end_points(rng, config, weights)

        def fn(x):
            total, _ = build_batch_loss(unpack_params(x, config), ds, triplets, weights)
            return total

        if inject_fault == "end_to_end":
            fn = _poison_gradient(fn)
        worst = max(worst, grad_check(fn, flat, eps))
    results.append(CheckResult(
        "gradients.end_to_end", worst < tol,
        f"max relative error {worst:.3g} over {e2e_points} parameter points"))
    return results


def sampler_suite(num_triplets: int = 100_000) -> list[CheckResult]:
    results = []
    cfg = SynthConfig(num_identities=40, samples_per_identity=5, num_ages=20,
                      input_dim=8, identity_dims=4, age_dims=2, noise_std=0.1)
    ds, _ = generate_dataset(cfg, seed=7)
    batch = len(ds)
    violations = 0
    seen = 0
    seed = 0
    while seen < num_triplets:
        for t in sample_triplet_batch(ds, batch, seed):
            if t.p is not None and not (
                    ds.ages[t.p] == ds.ages[t.a] and ds.identities[t.p] != ds.identities[t.a]):
                violations += 1
            if t.n is not None and not (
                    ds.ages[t.n] != ds.ages[t.a] and ds.identities[t.n] != ds.identities[t.a]):
                violations += 1
            seen += 1
        seed += 1
    results.append(CheckResult(
        "sampler.triplet_constraints", violations == 0,
        f"{violations} violations in {seen} triplets"))

    mismatches = 0
    for anchor in range(len(ds)):
        brute_pos = {j for j in range(len(ds))
                     if ds.ages[j] == ds.ages[anchor] and ds.identities[j] != ds.identities[anchor]}
        brute_neg = {j for j in range(len(ds))
                     if ds.ages[j] != ds.ages[anchor] and ds.identities[j] != ds.identities[anchor]}
        if positive_set(ds, anchor) != brute_pos or negative_set(ds, anchor) != brute_neg:
            mismatches += 1
    results.append(CheckResult(
        "sampler.candidate_sets_vs_brute_force", mismatches == 0,
        f"{mismatches} anchors disagree with the brute-force filter"))
    return results


def split_suite() -> list[CheckResult]:
    results = []
    cfg = SynthConfig(num_identities=82, samples_per_identity=3, num_ages=30,
                      input_dim=8, identity_dims=4, age_dims=2, noise_std=0.1)
    ds, _ = generate_dataset(cfg, seed=11)

    for protocol, k in (("rs", 5), ("se", 5), ("lopo", 0)):
        folds = split_protocol(ds, protocol, k, seed=3)
        covered = np.concatenate([f.test for f in folds])
        partition_ok = (len(covered) == len(ds) and
                        np.array_equal(np.sort(covered), np.arange(len(ds))))
        disjoint_ok = all(
            len(np.intersect1d(f.train, f.test)) == 0 and
            len(f.train) + len(f.test) == len(ds) for f in folds)
        results.append(CheckResult(
            f"splits.{protocol}_partition", partition_ok and disjoint_ok,
            f"{len(folds)} folds cover {len(covered)}/{len(ds)} samples"))

    se_ok = True
    for fold in split_protocol(ds, "se", 5, seed=3):
        train_ids = {ds.identities[i] for i in fold.train}
        test_ids = {ds.identities[i] for i in fold.test}
        if train_ids & test_ids:
            se_ok = False
    results.append(CheckResult("splits.se_identity_disjoint", se_ok))

    lopo = split_lopo(ds)
    lopo_ok = (len(lopo) == 82 and
               all(len({ds.identities[i] for i in f.test}) == 1 for f in lopo))
    results.append(CheckResult(
        "splits.lopo_one_fold_per_identity", lopo_ok, f"{len(lopo)} folds for 82 identities"))
    return results


def run_all(inject_fault: str | None = None,
            gradient_points: int = 100) -> list[CheckResult]:
    return (gradient_suite(points=gradient_points, inject_fault=inject_fault)
            + sampler_suite() + split_suite())
