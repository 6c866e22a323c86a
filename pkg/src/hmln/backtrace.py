"""Tracing generated captions back to influential training examples.

Sampling the model separately for every training example would be
wasteful, so one thinned Gibbs stream drawn under the test image's real
terms is reused: each sample is importance-weighted per example by
exp(U_train - U_test), the unnormalized log-probability gap between the
example's image terms and the test terms. Weights are clipped before
self-normalization so a few huge ratios cannot own the estimate. A
sample counts toward an example when every predicate of the example has
a semantically equivalent atom set to 1 in the sample; the
self-normalized weighted count estimates the density of the example
under the test-caption distribution. The examples with the largest and
smallest densities form the contrastive pair, compared by Hellinger
distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .model import (
    GroundPredicate,
    HmlnModel,
    World,
    sigmoid,
    unnormalized_log_prob,
    with_real_terms,
)
from .sampler import SamplerConfig, run_chain
from .similarity import SimilarityTable

__all__ = [
    "BacktraceConfig",
    "TraceExample",
    "WeightedSample",
    "ContrastiveResult",
    "contextually_relevant",
    "importance_weight",
    "clip_weight",
    "indicator",
    "hellinger_bernoulli",
    "similarity_report_x",
    "estimate_densities",
]

RELEVANCE_THRESHOLD = 0.75
CLIP_THRESHOLD = 1.0


@dataclass(frozen=True)
class BacktraceConfig:
    relevance_threshold: float = RELEVANCE_THRESHOLD
    clip_threshold: float = CLIP_THRESHOLD
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    # "floor" keeps weights >= clip_threshold instead of <=; it exists to
    # reproduce the uncapped variant of the estimator for comparison
    clip_mode: str = "cap"

    def __post_init__(self) -> None:
        if not (0.0 < self.relevance_threshold <= 1.0):
            raise ValidationError("relevance_threshold must be in (0, 1]")
        if not math.isfinite(self.clip_threshold) or self.clip_threshold <= 0.0:
            raise ValidationError("clip_threshold must be finite and > 0")
        if self.clip_mode not in ("cap", "floor"):
            raise ValidationError(f"unknown clip_mode {self.clip_mode!r}")


@dataclass(frozen=True)
class TraceExample:
    """One training example: its caption predicates and its image's terms.

    ``real_terms`` maps model atom ids to g under this example's image;
    atoms not listed fall back to the model's stored values, so their
    features drop out of the weight ratio.
    """

    example_id: str
    predicates: tuple[GroundPredicate, ...]
    real_terms: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.example_id:
            raise ValidationError("example_id must be non-empty")
        for k, g in self.real_terms.items():
            if not math.isfinite(g) or not (-1.0 <= g <= 1.0):
                raise ValidationError(f"real_terms[{k!r}] out of range: {g!r}")


@dataclass(frozen=True)
class WeightedSample:
    world: World
    raw_weight: float
    clipped_weight: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.raw_weight) or self.raw_weight < 0.0:
            raise ValidationError("raw_weight must be finite and >= 0")
        if self.clipped_weight > self.raw_weight + 1e-15:
            raise ValidationError("clipped_weight must not exceed raw_weight")


@dataclass(frozen=True)
class ContrastiveResult:
    per_example: Mapping[str, float]
    maximal: str
    minimal: str
    hellinger: float


def contextually_relevant(train: Sequence[TraceExample],
                          generated: Sequence[GroundPredicate],
                          sim: SimilarityTable,
                          threshold: float = RELEVANCE_THRESHOLD) -> list[TraceExample]:
    """Examples whose every predicate resembles some generated predicate.

    Resemblance is strict: min(subject, object) similarity must exceed
    the threshold, so one alien predicate disqualifies the example.
    An empty result is valid.
    """
    out = []
    for ex in train:
        if all(
            any(sim.predicate_score(x, y) > threshold for y in generated)
            for x in ex.predicates
        ):
            out.append(ex)
    return out


def importance_weight(model: HmlnModel, sample: World,
                      test_terms: Mapping[str, float],
                      train_terms: Mapping[str, float]) -> float:
    """exp(U_train(sample) - U_test(sample)); strictly positive.

    Both term maps must cover every atom of the model — a silent partial
    map would quietly zero out part of the ratio.
    """
    for name, terms in (("test_terms", test_terms), ("train_terms", train_terms)):
        missing = [a for a in model.atom_ids if a not in terms]
        if missing:
            raise ValidationError(f"{name} missing atoms: {missing[:3]}")
    u_train = unnormalized_log_prob(with_real_terms(model, train_terms), sample)
    u_test = unnormalized_log_prob(with_real_terms(model, test_terms), sample)
    return math.exp(u_train - u_test)


def clip_weight(w: float, tau: float = CLIP_THRESHOLD, mode: str = "cap") -> float:
    if mode == "cap":
        return min(w, tau)
    if mode == "floor":
        return max(w, tau)
    raise ValidationError(f"unknown clip_mode {mode!r}")


def indicator(example: TraceExample, sample: World, model: HmlnModel,
              sim: SimilarityTable,
              threshold: float = RELEVANCE_THRESHOLD) -> int:
    """1 iff every example predicate has an equivalent atom true in the sample."""
    for x in example.predicates:
        hit = False
        for atom_id, pred in model.atoms.items():
            if sim.predicate_score(x, pred) > threshold:
                if model.atom_value(atom_id, sample) == 1:
                    hit = True
                    break
        if not hit:
            return 0
    return 1


def hellinger_bernoulli(p: float, q: float) -> float:
    """Hellinger distance between Bernoulli(p) and Bernoulli(q)."""
    for v in (p, q):
        if not (0.0 <= v <= 1.0):
            raise ValidationError(f"probability out of [0, 1]: {v!r}")
    bc = math.sqrt(p * q) + math.sqrt((1.0 - p) * (1.0 - q))
    return min(1.0, math.sqrt(max(0.0, 1.0 - bc)))


def similarity_report_x(avg_sim: float) -> float:
    """Report axis for caption similarity: -log sigmoid(avg_sim).

    Monotone decreasing and always positive, so low-similarity captions
    land far right on the axis.
    """
    return -math.log(sigmoid(avg_sim))


def estimate_densities(model: HmlnModel,
                       generated: Sequence[GroundPredicate],
                       relevant: Sequence[TraceExample],
                       config: BacktraceConfig,
                       sim: SimilarityTable | None = None) -> ContrastiveResult:
    """Self-normalized importance-sampling density of each example.

    One chain targets the model's own (test) terms; every example
    reweights the same stream. With no similarity table, equivalence
    degrades to exact token matches. Ties for the extremes break toward
    the smaller example id.
    """
    if not relevant:
        raise ValidationError("need at least one relevant example")
    ids = [ex.example_id for ex in relevant]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate example ids")
    for p in generated:
        if p.id not in model.atoms:
            raise ValidationError(f"generated atom {p.id!r} not in model")
    if sim is None:
        sim = SimilarityTable()

    n_feat = len(model.features)
    atom_ids = model.atom_ids
    pos = {a: k for k, a in enumerate(atom_ids)}
    feat_pos = [(pos[p.atoms[0]], pos[p.atoms[1]]) for p in model.features]
    wc_test = np.array([p.weight * p.f_c_value for p in model.features])
    wx_test = np.array([p.weight * p.f_r_value for p in model.features])
    dc = np.empty((len(relevant), n_feat))
    dx = np.empty((len(relevant), n_feat))
    cand: list[list[list[int]]] = []
    for e, ex in enumerate(relevant):
        train = with_real_terms(model, ex.real_terms)
        dc[e] = [p.weight * p.f_c_value for p in train.features]
        dx[e] = [p.weight * p.f_r_value for p in train.features]
        cand.append([
            [pos[a] for a in atom_ids
             if sim.predicate_score(x, model.atoms[a]) > config.relevance_threshold]
            for x in ex.predicates
        ])
    dc -= wc_test
    dx -= wx_test

    state = [0] * len(atom_ids)
    for a, v in model.evidence.items():
        state[pos[a]] = int(v)
    num = np.zeros(len(relevant))
    den = np.zeros(len(relevant))
    s_conj = np.empty(n_feat)
    s_xor = np.empty(n_feat)
    tau = config.clip_threshold
    for world in run_chain(model, config.sampler):
        for a, v in world.assignment.items():
            state[pos[a]] = v
        for f, (p1, p2) in enumerate(feat_pos):
            v1, v2 = state[p1], state[p2]
            s_conj[f] = 1.0 if (v1 and v2) else 0.0
            s_xor[f] = 1.0 if v1 != v2 else 0.0
        w = np.exp(dc @ s_conj + dx @ s_xor)
        cw = np.minimum(w, tau) if config.clip_mode == "cap" else np.maximum(w, tau)
        den += cw
        for e in range(len(relevant)):
            for atom_positions in cand[e]:
                if not any(state[p] for p in atom_positions):
                    break
            else:
                num[e] += cw[e]
    if np.any(den <= 0.0):
        raise ValidationError("importance weights underflowed to zero")
    per_example = {ex.example_id: float(num[e] / den[e])
                   for e, ex in enumerate(relevant)}
    maximal = min(per_example, key=lambda k: (-per_example[k], k))
    minimal = min(per_example, key=lambda k: (per_example[k], k))
    return ContrastiveResult(
        per_example=per_example,
        maximal=maximal,
        minimal=minimal,
        hellinger=hellinger_bernoulli(per_example[maximal], per_example[minimal]),
    )
