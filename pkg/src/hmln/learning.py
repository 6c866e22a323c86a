"""Discriminative weight learning by contrastive divergence.

The conditional log-likelihood gradient for weight i is the empirical
expectation of feature i minus its model expectation. The model
expectation is intractable in general, so each step approximates it with
a few Gibbs sweeps started from the observed assignment (CD-n). Exact
CLL and its gradient are also provided via enumeration for small models;
they back the finite-difference checks and the optional per-iteration
diagnostic.

Feature values are instance-specific: every instance carries its own
real-valued terms, so the potentials are recomputed per instance before
taking expectations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import HmlnError, ValidationError
from .exact import ENUMERATION_GUARD, enumerate_exact, expected_feature_values
from .model import HmlnModel, World, f_c, f_r, unnormalized_log_prob, with_real_terms

__all__ = [
    "LearningConfig",
    "TrainingInstance",
    "DivergenceError",
    "empirical_expectation",
    "cd_step",
    "fit",
    "exact_cll",
    "exact_cll_gradient",
]

log = logging.getLogger(__name__)

WEIGHT_LIMIT = 1e6


class DivergenceError(HmlnError):
    """Weights blew past the sanity limit during learning."""


@dataclass(frozen=True)
class LearningConfig:
    learning_rate: float = 0.01
    iterations: int = 100
    cd_samples: int = 5
    seed: int = 0
    persistent: bool = False

    def __post_init__(self) -> None:
        # rate 0 is allowed: it turns fit into a no-op, which is handy for
        # pipeline dry runs
        if not (self.learning_rate >= 0.0) or not math.isfinite(self.learning_rate):
            raise ValidationError("learning_rate must be finite and >= 0")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.cd_samples < 1:
            raise ValidationError("cd_samples must be >= 1")


@dataclass(frozen=True)
class TrainingInstance:
    """One observed world plus the real-valued terms of its image.

    ``observed`` maps atom ids to 0/1; atoms not listed are 0 (closed
    world). ``real_terms`` overrides the model's stored g values for this
    instance; atoms not listed keep the stored value.
    """

    instance_id: str
    observed: Mapping[str, int] = field(default_factory=dict)
    real_terms: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.instance_id:
            raise ValidationError("instance_id must be non-empty")
        for k, v in self.observed.items():
            if v not in (0, 1):
                raise ValidationError(f"observed[{k!r}] must be 0 or 1, got {v!r}")
        for k, g in self.real_terms.items():
            if not math.isfinite(g) or not (-1.0 <= g <= 1.0):
                raise ValidationError(f"real_terms[{k!r}] out of range: {g!r}")


def _check_instances(model: HmlnModel, instances: Sequence[TrainingInstance]) -> None:
    if not instances:
        raise ValidationError("need at least one training instance")
    for inst in instances:
        for k in inst.observed:
            if k not in model.atoms:
                raise ValidationError(
                    f"instance {inst.instance_id!r}: observed atom {k!r} not in model"
                )
        for k in inst.real_terms:
            if k not in model.atoms:
                raise ValidationError(
                    f"instance {inst.instance_id!r}: term for unknown atom {k!r}"
                )


def _observed_value(model: HmlnModel, inst: TrainingInstance, atom_id: str) -> int:
    v = inst.observed.get(atom_id)
    if v is None:
        v = model.evidence.get(atom_id, 0)
    return int(v)


class _Compiled:
    """Per-model structures shared by every CD step.

    Potentials depend only on g and epsilon, so the per-instance f_c/f_r
    vectors are computed once; each step only rescales them by the
    current weights.
    """

    def __init__(self, model: HmlnModel, instances: Sequence[TrainingInstance]):
        _check_instances(model, instances)
        self.model = model
        self.free_ids = model.free_atom_ids
        all_ids = model.atom_ids
        pos = {a: k for k, a in enumerate(all_ids)}
        self.free_pos = [pos[a] for a in self.free_ids]
        self.n_features = len(model.features)
        self.feat_pos = [(pos[p.atoms[0]], pos[p.atoms[1]]) for p in model.features]
        # which feature/partner pairs touch each free atom
        free_index = {a: k for k, a in enumerate(self.free_ids)}
        adj: list[list[tuple[int, int]]] = [[] for _ in self.free_ids]
        for f, pair in enumerate(model.features):
            a1, a2 = pair.atoms
            for me, other in ((a1, a2), (a2, a1)):
                k = free_index.get(me)
                if k is not None:
                    adj[k].append((f, pos[other]))
        self.adj = adj
        self.fc: list[np.ndarray] = []
        self.fr: list[np.ndarray] = []
        self.starts: list[list[int]] = []
        self.emp: list[np.ndarray] = []
        for inst in instances:
            fc = np.empty(self.n_features)
            fr = np.empty(self.n_features)
            for f, pair in enumerate(model.features):
                a1, a2 = pair.atoms
                g1 = inst.real_terms.get(a1, model.atoms[a1].g)
                g2 = inst.real_terms.get(a2, model.atoms[a2].g)
                fc[f] = f_c(g1, g2, model.epsilon)
                fr[f] = f_r(g1, g2)
            state = [_observed_value(model, inst, a) for a in all_ids]
            self.fc.append(fc)
            self.fr.append(fr)
            self.starts.append(state)
            self.emp.append(self._feature_values(state, fc, fr))
        self.emp_mean = np.mean(self.emp, axis=0)

    def _feature_values(self, state: list[int], fc: np.ndarray, fr: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_features)
        for f, (p1, p2) in enumerate(self.feat_pos):
            v1, v2 = state[p1], state[p2]
            if v1 and v2:
                out[f] = fc[f]
            elif v1 != v2:
                out[f] = fr[f]
        return out

    def _sweep(self, state: list[int], wc: list, wx: list, dl: list,
               rng: np.random.Generator) -> None:
        n = len(self.free_ids)
        order = rng.permutation(n).tolist()
        uniforms = rng.random(n).tolist()
        adj = self.adj
        free_pos = self.free_pos
        exp = math.exp
        for t in range(n):
            k = order[t]
            z = 0.0
            for f, p in adj[k]:
                z += dl[f] if state[p] else wx[f]
            if z >= 0.0:
                p1 = 1.0 / (1.0 + exp(-z))
            else:
                ez = exp(z)
                p1 = ez / (1.0 + ez)
            state[free_pos[k]] = 1 if uniforms[t] < p1 else 0

    def step(self, weights: np.ndarray, config: LearningConfig,
             rng: np.random.Generator,
             chains: list[list[int]] | None = None) -> np.ndarray:
        """One CD update; mutates ``chains`` in place when persistent."""
        model_sum = np.zeros(self.n_features)
        for m in range(len(self.starts)):
            wc_a = weights * self.fc[m]
            wx_a = weights * self.fr[m]
            wc, wx = wc_a.tolist(), wx_a.tolist()
            dl = (wc_a - wx_a).tolist()
            state = chains[m] if chains is not None else list(self.starts[m])
            for _ in range(config.cd_samples):
                self._sweep(state, wc, wx, dl, rng)
            model_sum += self._feature_values(state, self.fc[m], self.fr[m])
        grad = self.emp_mean - model_sum / len(self.starts)
        new = weights + config.learning_rate * grad
        worst = float(np.max(np.abs(new))) if len(new) else 0.0
        if worst > WEIGHT_LIMIT:
            raise DivergenceError(
                f"weight magnitude {worst:.3g} exceeds {WEIGHT_LIMIT:.0e}; "
                "lower the learning rate"
            )
        return new


def empirical_expectation(model: HmlnModel, instances: Sequence[TrainingInstance],
                          pair_id: int) -> float:
    """Mean observed value of one feature across instances.

    The potential is recomputed under each instance's real terms, so this
    is the data-side term of the CLL gradient for that weight.
    """
    _check_instances(model, instances)
    pair = None
    for f, p in enumerate(model.features):
        if p.id == pair_id:
            pair, f_idx = p, f
            break
    if pair is None:
        raise ValidationError(f"no feature with id {pair_id}")
    a1, a2 = pair.atoms
    total = 0.0
    for inst in instances:
        g1 = inst.real_terms.get(a1, model.atoms[a1].g)
        g2 = inst.real_terms.get(a2, model.atoms[a2].g)
        v1 = _observed_value(model, inst, a1)
        v2 = _observed_value(model, inst, a2)
        if v1 and v2:
            total += f_c(g1, g2, model.epsilon)
        elif v1 != v2:
            total += f_r(g1, g2)
    return total / len(instances)


def cd_step(model: HmlnModel, instances: Sequence[TrainingInstance],
            config: LearningConfig,
            rng: np.random.Generator | None = None) -> HmlnModel:
    """One contrastive-divergence update of every weight.

    Negative chains start at each instance's observed assignment and run
    ``cd_samples`` sweeps. With the default rng this matches the first
    iteration of :func:`fit` under the same config.
    """
    compiled = _Compiled(model, instances)
    if rng is None:
        rng = np.random.Generator(np.random.Philox(config.seed))
    weights = np.array([p.weight for p in model.features], dtype=float)
    return model.replace_weights(compiled.step(weights, config, rng))


def fit(model: HmlnModel, instances: Sequence[TrainingInstance],
        config: LearningConfig) -> HmlnModel:
    """Run CD for ``config.iterations`` steps and return the learned model.

    ``persistent`` keeps the negative chains alive between steps instead
    of restarting them at the data. On models small enough to enumerate,
    the exact CLL is logged per iteration when debug logging is on (it
    costs a full enumeration per step, so it is diagnostic only).
    """
    compiled = _Compiled(model, instances)
    rng = np.random.Generator(np.random.Philox(config.seed))
    weights = np.array([p.weight for p in model.features], dtype=float)
    chains = [list(s) for s in compiled.starts] if config.persistent else None
    track = (log.isEnabledFor(logging.DEBUG)
             and len(model.free_atom_ids) <= ENUMERATION_GUARD)
    for it in range(config.iterations):
        weights = compiled.step(weights, config, rng, chains)
        if track:
            cll = exact_cll(model.replace_weights(weights), instances)
            log.debug("iteration %d: exact CLL %.6f", it + 1, cll)
    return model.replace_weights(weights)


def _logz_cache_key(inst: TrainingInstance) -> tuple:
    return tuple(sorted((k, float(v)) for k, v in inst.real_terms.items()))


def exact_cll(model: HmlnModel, instances: Sequence[TrainingInstance]) -> float:
    """Sum over instances of log P(observed | real terms), by enumeration."""
    _check_instances(model, instances)
    cache: dict[tuple, float] = {}
    total = 0.0
    for inst in instances:
        inst_model = with_real_terms(model, inst.real_terms)
        key = _logz_cache_key(inst)
        if key not in cache:
            cache[key] = enumerate_exact(inst_model)[0]
        world = World({a: _observed_value(model, inst, a) for a in model.free_atom_ids})
        total += unnormalized_log_prob(inst_model, world) - cache[key]
    return total


def exact_cll_gradient(model: HmlnModel,
                       instances: Sequence[TrainingInstance]) -> np.ndarray:
    """Gradient of :func:`exact_cll` in model feature order.

    Per instance this is the observed feature vector minus the exact
    model expectation (enumeration).
    """
    _check_instances(model, instances)
    cache: dict[tuple, np.ndarray] = {}
    grad = np.zeros(len(model.features))
    for inst in instances:
        inst_model = with_real_terms(model, inst.real_terms)
        key = _logz_cache_key(inst)
        if key not in cache:
            cache[key] = expected_feature_values(inst_model)
        world = World({a: _observed_value(model, inst, a) for a in model.free_atom_ids})
        observed = np.zeros(len(inst_model.features))
        for f, pair in enumerate(inst_model.features):
            v1 = inst_model.atom_value(pair.atoms[0], world)
            v2 = inst_model.atom_value(pair.atoms[1], world)
            if v1 and v2:
                observed[f] = pair.f_c_value
            elif v1 != v2:
                observed[f] = pair.f_r_value
            else:
                observed[f] = 0.0
        grad += observed - cache[key]
    return grad
