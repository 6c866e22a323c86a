"""Exact enumeration over small models.

The partition function is intractable in general; for models with at most
ENUMERATION_GUARD free atoms this module computes it (and marginals,
expectations, exact samples) by summing all 2^n worlds. It is the oracle
the samplers and solvers are tested against.
"""

from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

from .errors import GuardError
from .model import HmlnModel, World

__all__ = [
    "ENUMERATION_GUARD",
    "enumerate_exact",
    "expected_feature_values",
    "sample_exact",
]

ENUMERATION_GUARD = 20
_CHUNK_BITS = 16


def _bit_chunks(n: int) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (offset, bits) blocks covering all 2^n assignments.

    bits has shape (block, n), column k holding atom k's value.
    """
    total = 1 << n
    step = min(total, 1 << _CHUNK_BITS)
    cols = np.arange(n, dtype=np.uint32)
    for offset in range(0, total, step):
        idx = np.arange(offset, offset + step, dtype=np.uint32)
        yield offset, ((idx[:, None] >> cols) & 1).astype(np.float64)


def _folded_terms(model: HmlnModel):
    """Fold evidence into (constant, linear, pairwise) energy terms.

    Returns (free_ids, const, linear-coef array over free atoms, and a
    list of (i, j, conj_coef, xor_coef) over free-atom index pairs), with
    coefficients already multiplied by the feature weights.
    """
    free_ids = model.free_atom_ids
    index = {a: k for k, a in enumerate(free_ids)}
    const = 0.0
    linear = np.zeros(len(free_ids))
    pairwise: list[tuple[int, int, float, float]] = []
    for pair in model.features:
        a1, a2 = pair.atoms
        wc = pair.weight * pair.f_c_value
        wx = pair.weight * pair.f_r_value
        v1 = model.evidence.get(a1)
        v2 = model.evidence.get(a2)
        if v1 is None and v2 is None:
            pairwise.append((index[a1], index[a2], wc, wx))
        elif v1 is not None and v2 is not None:
            if v1 and v2:
                const += wc
            elif v1 != v2:
                const += wx
        else:
            k = index[a2] if v1 is not None else index[a1]
            fixed = v1 if v1 is not None else v2
            if fixed:
                # partner b: conj iff b, xor iff not b
                const += wx
                linear[k] += wc - wx
            else:
                linear[k] += wx
    return free_ids, const, linear, pairwise


def _energies(model: HmlnModel) -> tuple[list[str], np.ndarray]:
    """Unnormalized log probability of every world, indexed by bit pattern."""
    free_ids, const, linear, pairwise = _folded_terms(model)
    n = len(free_ids)
    if n > ENUMERATION_GUARD:
        raise GuardError(
            f"exact enumeration refused: {n} free atoms exceeds the "
            f"{ENUMERATION_GUARD}-atom guard"
        )
    energies = np.empty(1 << n)
    for offset, bits in _bit_chunks(n):
        e = bits @ linear + const
        for i, j, wc, wx in pairwise:
            bi = bits[:, i]
            bj = bits[:, j]
            both = bi * bj
            e += wc * both + wx * (bi + bj - 2.0 * both)
        energies[offset : offset + bits.shape[0]] = e
    return free_ids, energies


def _probabilities(energies: np.ndarray) -> tuple[float, np.ndarray]:
    m = float(np.max(energies))
    raw = np.exp(energies - m)
    z = float(raw.sum())
    return m + np.log(z), raw / z


def enumerate_exact(model: HmlnModel) -> tuple[float, dict[str, float]]:
    """log Z and per-atom marginals P(atom = 1), by full enumeration.

    Evidence atoms report their evidence value as the marginal. Refuses
    models with more than ENUMERATION_GUARD free atoms.
    """
    free_ids, energies = _energies(model)
    log_z, probs = _probabilities(energies)
    n = len(free_ids)
    marg = np.zeros(n)
    for offset, bits in _bit_chunks(n):
        marg += probs[offset : offset + bits.shape[0]] @ bits
    marginals = {a: float(m) for a, m in zip(free_ids, marg)}
    for atom_id, v in model.evidence.items():
        marginals[atom_id] = float(v)
    return log_z, {a: marginals[a] for a in sorted(marginals)}


def expected_feature_values(model: HmlnModel) -> np.ndarray:
    """E[s_i] for every feature (model order), by full enumeration."""
    free_ids, energies = _energies(model)
    _, probs = _probabilities(energies)
    index = {a: k for k, a in enumerate(free_ids)}
    out = np.zeros(len(model.features))
    n = len(free_ids)
    for offset, bits in _bit_chunks(n):
        p = probs[offset : offset + bits.shape[0]]
        for fi, pair in enumerate(model.features):
            vals = []
            for atom_id in pair.atoms:
                ev = model.evidence.get(atom_id)
                if ev is None:
                    vals.append(bits[:, index[atom_id]])
                else:
                    vals.append(np.full(bits.shape[0], float(ev)))
            b1, b2 = vals
            both = b1 * b2
            s = pair.f_c_value * both + pair.f_r_value * (b1 + b2 - 2.0 * both)
            out[fi] += float(p @ s)
    return out


def sample_exact(
    model: HmlnModel, n_samples: int, rng: np.random.Generator
) -> list[World]:
    """Draw independent exact samples by enumerating the distribution."""
    free_ids, energies = _energies(model)
    _, probs = _probabilities(energies)
    picks = rng.choice(len(probs), size=n_samples, p=probs)
    worlds = []
    for pattern in picks:
        worlds.append(
            World({a: (int(pattern) >> k) & 1 for k, a in enumerate(free_ids)})
        )
    return worlds
