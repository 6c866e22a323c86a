"""Gibbs sampling over the non-evidence atoms of a model.

Each update resamples one atom from its conditional given the rest, which
only involves the features touching the atom (its Markov blanket). Chains
run full sweeps (every free atom once, in a fresh random permutation per
sweep); samples are taken after a burn-in and separated by a thinning
interval of sweeps. All randomness comes from a counter-based Philox
generator so chains are reproducible and checkpointable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import ValidationError
from .model import HmlnModel, World, sigmoid

__all__ = ["SamplerConfig", "ChainState", "GibbsChain", "conditional", "run_chain"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    burn_in: int = 500
    thinning_interval: int = 10
    total_samples: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.burn_in < 0:
            raise ValidationError("burn_in must be >= 0")
        if self.thinning_interval < 1:
            raise ValidationError("thinning_interval must be >= 1")
        if self.total_samples < 1:
            raise ValidationError("total_samples must be >= 1")


@dataclass(frozen=True)
class ChainState:
    """Checkpoint of a running chain: current world, sweeps done, RNG state."""

    current: World
    step_count: int
    rng_state: Mapping


def conditional(model: HmlnModel, world: World, atom_id: str) -> float:
    """P(atom = 1 | rest of the world), from the atom's Markov blanket.

    Only features containing the atom contribute; an atom in no feature
    has probability exactly 0.5.
    """
    if atom_id in model.evidence:
        raise ValidationError(f"atom {atom_id!r} is evidence, not sampleable")
    if atom_id not in model.atoms:
        raise ValidationError(f"unknown atom {atom_id!r}")
    z = 0.0
    for pair in model.features:
        if atom_id == pair.atoms[0]:
            partner = pair.atoms[1]
        elif atom_id == pair.atoms[1]:
            partner = pair.atoms[0]
        else:
            continue
        v = model.atom_value(partner, world)
        wc = pair.weight * pair.f_c_value
        wx = pair.weight * pair.f_r_value
        # energy gain of setting the atom to 1: conj appears iff partner=1,
        # xor flips between the two cases
        z += (wc - wx) if v else wx
    return sigmoid(z)


class GibbsChain:
    """A single sequential chain over one model.

    Independent chains (distinct seeds or conditioning) may run in
    parallel; they share the model read-only and never share RNG state.
    """

    def __init__(self, model: HmlnModel, config: SamplerConfig):
        self.model = model
        self.config = config
        self._free_ids = model.free_atom_ids
        all_ids = model.atom_ids
        pos = {a: k for k, a in enumerate(all_ids)}
        self._free_pos = [pos[a] for a in self._free_ids]
        # adjacency per free atom: (partner slot, delta if partner=0/1)
        adj: list[list[tuple[int, float, float]]] = [[] for _ in self._free_ids]
        free_index = {a: k for k, a in enumerate(self._free_ids)}
        for pair in model.features:
            wc = pair.weight * pair.f_c_value
            wx = pair.weight * pair.f_r_value
            a1, a2 = pair.atoms
            for me, other in ((a1, a2), (a2, a1)):
                k = free_index.get(me)
                if k is not None:
                    adj[k].append((pos[other], wx, wc - wx))
        self._adj = adj
        self._rng = np.random.Generator(np.random.Philox(config.seed))
        self._state = [0] * len(all_ids)
        for atom_id, v in model.evidence.items():
            self._state[pos[atom_id]] = int(v)
        init = self._rng.integers(0, 2, size=len(self._free_ids))
        for p, v in zip(self._free_pos, init):
            self._state[p] = int(v)
        self._sweeps_done = 0

    def sweep(self) -> None:
        """Resample every free atom once, in a fresh random order."""
        n = len(self._free_ids)
        order = self._rng.permutation(n).tolist()
        uniforms = self._rng.random(n).tolist()
        state = self._state
        adj = self._adj
        free_pos = self._free_pos
        exp = math.exp
        for t in range(n):
            k = order[t]
            z = 0.0
            for p, d0, d1 in adj[k]:
                z += d1 if state[p] else d0
            if z >= 0.0:
                p1 = 1.0 / (1.0 + exp(-z))
            else:
                ez = exp(z)
                p1 = ez / (1.0 + ez)
            state[free_pos[k]] = 1 if uniforms[t] < p1 else 0
        self._sweeps_done += 1

    def current_world(self) -> World:
        return World({a: self._state[p] for a, p in zip(self._free_ids, self._free_pos)})

    @property
    def state(self) -> ChainState:
        return ChainState(
            current=self.current_world(),
            step_count=self._sweeps_done,
            rng_state=self._rng.bit_generator.state,
        )

    def restore(self, state: ChainState) -> None:
        for atom_id in self._free_ids:
            if atom_id not in state.current.assignment:
                raise ValidationError(f"checkpoint missing atom {atom_id!r}")
        for a, p in zip(self._free_ids, self._free_pos):
            self._state[p] = int(state.current.assignment[a])
        self._rng.bit_generator.state = state.rng_state
        self._sweeps_done = state.step_count

    def set_world(self, world: World) -> None:
        """Force the current assignment (e.g. to start from a data point)."""
        for a, p in zip(self._free_ids, self._free_pos):
            self._state[p] = int(world.assignment[a])

    def samples(self) -> Iterator[World]:
        """Burn in, then yield worlds separated by the thinning interval."""
        for _ in range(self.config.burn_in):
            self.sweep()
        for _ in range(self.config.total_samples):
            for _ in range(self.config.thinning_interval):
                self.sweep()
            yield self.current_world()


def run_chain(model: HmlnModel, config: SamplerConfig) -> Iterator[World]:
    """Stream ``total_samples`` worlds from a fresh seeded chain.

    With no free atoms there is nothing to sample: the stream is empty
    and a diagnostic is logged.
    """
    if not model.free_atom_ids:
        log.warning("run_chain: model has no free atoms; empty stream")
        return iter(())
    return GibbsChain(model, config).samples()
