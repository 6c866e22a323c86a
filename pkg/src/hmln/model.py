"""Core model types and hybrid potentials.

A model couples binary ground predicates (extracted from captions) with
real-valued image-grounding scores. Every feature is a pair of predicates
sharing a token, carrying one conjunctive potential and one exclusion
(XOR) penalty under a single shared weight. The distribution over worlds
is log-linear: P(x) = exp(sum_i theta_i * s_i(x)) / Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import ValidationError

__all__ = [
    "GroundPredicate",
    "FeaturePair",
    "HmlnModel",
    "World",
    "DEFAULT_EPSILON",
    "f_c",
    "f_r",
    "feature_value",
    "unnormalized_log_prob",
    "ground_templates",
    "model_from_instances",
    "with_real_terms",
]

# Scale constant for the conjunctive potential's soft inequality g >= eps.
# Chosen as the typical magnitude of image-text cosine similarities.
DEFAULT_EPSILON = 0.3


def _softplus(t: float) -> float:
    # log(1 + e^t), stable for large |t|
    return max(t, 0.0) + math.log1p(math.exp(-abs(t)))


def sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def f_c(g1: float, g2: float, epsilon: float) -> float:
    """Conjunctive potential term: min over both atoms of -log sigmoid(eps - g).

    Equals softplus(min(g1, g2) - eps), so it is strictly increasing in
    min(g1, g2): the reward for a conjunction is capped by its worst
    image-grounded atom. Always > 0.
    """
    return _softplus(min(g1, g2) - epsilon)


def f_r(g1: float, g2: float) -> float:
    """Exclusion (XOR) penalty: -(g1 - g2)^2.

    Symmetric, <= 0, and 0 only when both atoms are equally grounded in
    the image; a Gaussian-style penalty on disagreement.
    """
    d = g1 - g2
    return -(d * d)


@dataclass(frozen=True)
class GroundPredicate:
    """A (subject, relation, object) instance with its image-grounding score.

    ``object`` may be empty for unary attributes (rendered as
    "<subject> is <attribute>" upstream, attribute in object position).
    ``g`` is the cosine similarity between the source image embedding and
    this predicate's text rendering, in [-1, 1].
    """

    id: str
    subject: str
    relation: str
    object: str = ""
    g: float = 0.0

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("ground predicate id must be non-empty")
        if not self.subject or not self.relation:
            raise ValidationError(
                f"predicate {self.id!r}: subject and relation must be non-empty"
            )
        if not math.isfinite(self.g) or not -1.0 <= self.g <= 1.0:
            raise ValidationError(
                f"predicate {self.id!r}: g={self.g!r} outside [-1, 1]"
            )

    def tokens(self) -> frozenset[str]:
        """Lowercased subject/object tokens used for the sharing test."""
        toks = {self.subject.lower()}
        if self.object:
            toks.add(self.object.lower())
        return frozenset(toks)


@dataclass(frozen=True)
class FeaturePair:
    """One grounding of the conjunctive + XOR template pair.

    Both formulas range over the same two atoms and share the weight:
    the feature's value in a world is f_c_value when both atoms are 1,
    f_r_value when exactly one is, and 0 when neither is.
    """

    id: int
    atoms: tuple[str, str]
    weight: float = 0.0
    f_c_value: float = 0.0
    f_r_value: float = 0.0

    def __post_init__(self) -> None:
        if len(self.atoms) != 2:
            raise ValidationError(f"feature {self.id}: exactly 2 atoms required")
        if self.atoms[0] == self.atoms[1]:
            raise ValidationError(f"feature {self.id}: atoms must be distinct")
        if not all(map(math.isfinite, (self.weight, self.f_c_value, self.f_r_value))):
            raise ValidationError(f"feature {self.id}: non-finite value")
        if self.f_r_value > 0.0:
            raise ValidationError(
                f"feature {self.id}: f_r_value={self.f_r_value!r} must be <= 0"
            )


@dataclass(frozen=True)
class World:
    """A 0/1 assignment to all non-evidence atoms.

    Evidence atoms are deliberately excluded; their values live in
    ``HmlnModel.evidence``.
    """

    assignment: Mapping[str, int]

    def __post_init__(self) -> None:
        for atom_id, v in self.assignment.items():
            if v not in (0, 1):
                raise ValidationError(f"world: atom {atom_id!r} has value {v!r}")


def _atom_value(atom_id: str, world: World, evidence: Mapping[str, int]) -> int:
    v = world.assignment.get(atom_id)
    if v is not None:
        return v
    ev = evidence.get(atom_id)
    if ev is not None:
        return int(ev)
    raise ValidationError(f"atom {atom_id!r} is neither assigned nor evidence")


@dataclass(frozen=True)
class HmlnModel:
    """Immutable bundle of atoms, weighted feature pairs, and evidence.

    All operations treat a model as read-only; reweighting or swapping the
    real-valued terms produces a new model.
    """

    atoms: Mapping[str, GroundPredicate]
    features: tuple[FeaturePair, ...]
    epsilon: float = DEFAULT_EPSILON
    evidence: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not math.isfinite(self.epsilon):
            raise ValidationError("epsilon must be finite")
        for atom_id, pred in self.atoms.items():
            if atom_id != pred.id:
                raise ValidationError(
                    f"atom key {atom_id!r} does not match predicate id {pred.id!r}"
                )
        seen_ids: set[int] = set()
        for pair in self.features:
            if pair.id in seen_ids:
                raise ValidationError(f"duplicate feature id {pair.id}")
            seen_ids.add(pair.id)
            a1, a2 = pair.atoms
            if a1 not in self.atoms or a2 not in self.atoms:
                raise ValidationError(
                    f"feature {pair.id} references unknown atom(s) {pair.atoms}"
                )
            if not (self.atoms[a1].tokens() & self.atoms[a2].tokens()):
                raise ValidationError(
                    f"feature {pair.id}: atoms {a1!r}, {a2!r} share no token"
                )
        for atom_id, v in self.evidence.items():
            if atom_id not in self.atoms:
                raise ValidationError(f"evidence on unknown atom {atom_id!r}")
            if v not in (0, 1):
                raise ValidationError(f"evidence value for {atom_id!r} must be 0/1")

    @property
    def atom_ids(self) -> list[str]:
        return sorted(self.atoms)

    @property
    def free_atom_ids(self) -> list[str]:
        return sorted(a for a in self.atoms if a not in self.evidence)

    def atom_value(self, atom_id: str, world: World) -> int:
        """Value of an atom under a world, falling back to evidence."""
        return _atom_value(atom_id, world, self.evidence)

    def replace_weights(self, weights: Sequence[float]) -> "HmlnModel":
        """New model with the i-th feature (in stored order) reweighted."""
        if len(weights) != len(self.features):
            raise ValidationError(
                f"expected {len(self.features)} weights, got {len(weights)}"
            )
        feats = tuple(
            FeaturePair(p.id, p.atoms, float(w), p.f_c_value, p.f_r_value)
            for p, w in zip(self.features, weights)
        )
        return HmlnModel(self.atoms, feats, self.epsilon, self.evidence)


def feature_value(
    pair: FeaturePair, world: World, evidence: Mapping[str, int] | None = None
) -> float:
    """Value of one conjunctive+XOR feature under a world.

    Returns f_c_value when both atoms are 1, f_r_value when exactly one
    is, 0 when both are 0. Atoms missing from the world must be covered
    by ``evidence``.
    """
    ev = evidence if evidence is not None else {}
    a1 = _atom_value(pair.atoms[0], world, ev)
    a2 = _atom_value(pair.atoms[1], world, ev)
    if a1 and a2:
        return pair.f_c_value
    if a1 != a2:
        return pair.f_r_value
    return 0.0


def unnormalized_log_prob(model: HmlnModel, world: World) -> float:
    """The exponent sum_i theta_i * s_i(world) of the log-linear form."""
    total = 0.0
    for pair in model.features:
        total += pair.weight * feature_value(pair, world, model.evidence)
    return total


def make_pair(
    pair_id: int,
    p1: GroundPredicate,
    p2: GroundPredicate,
    epsilon: float,
    weight: float = 0.0,
) -> FeaturePair:
    """Build a FeaturePair from two predicates, computing both potentials."""
    return FeaturePair(
        id=pair_id,
        atoms=(p1.id, p2.id),
        weight=weight,
        f_c_value=f_c(p1.g, p2.g, epsilon),
        f_r_value=f_r(p1.g, p2.g),
    )


def ground_templates(
    instances: Iterable[tuple[str, Sequence[GroundPredicate]]],
    epsilon: float = DEFAULT_EPSILON,
) -> list[FeaturePair]:
    """Slot-fill the template pair over every same-instance predicate pair.

    Emits one zero-weight FeaturePair (conjunctive + XOR grounding) per
    unordered pair of predicates from the same instance that share a
    subject/object token; chains are capped at two predicates. Output
    order is deterministic: sorted by the pair's atom ids, regardless of
    input ordering.
    """
    groundings: set[tuple[str, str]] = set()
    by_id: dict[str, GroundPredicate] = {}
    for instance_id, preds in instances:
        seen: set[str] = set()
        for p in preds:
            if p.id in seen:
                raise ValidationError(
                    f"instance {instance_id!r}: duplicate predicate id {p.id!r}"
                )
            seen.add(p.id)
        for i, p1 in enumerate(preds):
            for p2 in preds[i + 1 :]:
                if p1.tokens() & p2.tokens():
                    key = (p1.id, p2.id) if p1.id < p2.id else (p2.id, p1.id)
                    groundings.add(key)
        by_id.update({p.id: p for p in preds})
    pairs = []
    for idx, (a1, a2) in enumerate(sorted(groundings)):
        pairs.append(make_pair(idx, by_id[a1], by_id[a2], epsilon))
    return pairs


def model_from_instances(
    instances: Iterable[tuple[str, Sequence[GroundPredicate]]],
    epsilon: float = DEFAULT_EPSILON,
    evidence: Mapping[str, int] | None = None,
) -> HmlnModel:
    """Pool instances into one model: union of atoms + grounded templates."""
    instances = list(instances)
    atoms: dict[str, GroundPredicate] = {}
    for instance_id, preds in instances:
        for p in preds:
            prev = atoms.get(p.id)
            if prev is not None and prev != p:
                raise ValidationError(
                    f"predicate id {p.id!r} reused with different content"
                )
            atoms[p.id] = p
    features = tuple(ground_templates(instances, epsilon))
    return HmlnModel(
        atoms={a: atoms[a] for a in sorted(atoms)},
        features=features,
        epsilon=epsilon,
        evidence=dict(evidence or {}),
    )


def with_real_terms(model: HmlnModel, terms: Mapping[str, float]) -> HmlnModel:
    """New model whose g values (and hence potentials) come from ``terms``.

    Atoms absent from ``terms`` keep their stored g. Weights, evidence and
    epsilon carry over; every feature's f_c/f_r is recomputed.
    """
    for atom_id in terms:
        if atom_id not in model.atoms:
            raise ValidationError(f"real term for unknown atom {atom_id!r}")
    atoms = {}
    for atom_id, pred in model.atoms.items():
        g = terms.get(atom_id)
        if g is None or g == pred.g:
            atoms[atom_id] = pred
        else:
            atoms[atom_id] = GroundPredicate(
                pred.id, pred.subject, pred.relation, pred.object, float(g)
            )
    features = tuple(
        make_pair(
            p.id,
            atoms[p.atoms[0]],
            atoms[p.atoms[1]],
            model.epsilon,
            weight=p.weight,
        )
        for p in model.features
    )
    return HmlnModel(atoms, features, model.epsilon, model.evidence)
