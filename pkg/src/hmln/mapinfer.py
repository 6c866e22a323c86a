"""MAP inference as a 0/1 integer linear program.

Every formula contributes two auxiliary binaries — one for the
conjunction (payoff weight * f_c) and one for the exclusive-or (payoff
weight * f_r) — tied to the atom variables by the usual linearization
constraints. Soft evidence about a generated/reference predicate pair
adds a biconditional auxiliary whose payoff is the pair's similarity
score. Atoms fixed by evidence are substituted out at encode time:
their formulas fold into linear terms or the objective constant.

The built-in solver is plain depth-first branch and bound over the atom
variables (aux values are implied), good for desk-scale problems; larger
instances should go through the LP writer to an external solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import GuardError, ValidationError
from .model import GroundPredicate, HmlnModel
from .similarity import SimilarityTable

__all__ = [
    "MAP_GUARD",
    "SCORE_FLOOR",
    "SoftEvidence",
    "Constraint",
    "AuxDef",
    "MapProblem",
    "MapSolution",
    "build_soft_evidence",
    "encode",
    "solve",
    "objective_at",
    "write_lp",
    "map_score",
]

MAP_GUARD = 40
SCORE_FLOOR = 0.35


@dataclass(frozen=True)
class SoftEvidence:
    """Similarity-weighted belief that two atoms agree.

    ``left == right`` is legal (a generated atom that literally appears in
    the reference); the agreement is then a tautology and the score is a
    constant payoff.
    """

    left: str
    right: str
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score) or not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"soft evidence score out of [0, 1]: {self.score!r}")


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: tuple[tuple[str, float], ...]
    sense: str  # "<=", ">=" or "="
    rhs: float


@dataclass(frozen=True)
class AuxDef:
    """How to evaluate one auxiliary from the atom variables.

    args are ("var", variable name) or ("const", 0/1) pairs; kind is
    "conj", "xor" or "eq".
    """

    var: str
    coef: float
    kind: str
    args: tuple[tuple[str, object], tuple[str, object]]


@dataclass(frozen=True)
class MapProblem:
    binary_vars: tuple[str, ...]  # one per free atom, branching order
    aux_vars: tuple[str, ...]
    objective: Mapping[str, float]
    constant: float
    constraints: tuple[Constraint, ...]
    atom_of: Mapping[str, str]
    fixed: Mapping[str, int]
    aux: tuple[AuxDef, ...] = field(default=())


@dataclass(frozen=True)
class MapSolution:
    assignment: Mapping[str, int]  # every atom, evidence included
    objective_value: float
    proof: str  # "optimal" or "bound-limit"


def build_soft_evidence(generated: Sequence[GroundPredicate],
                        reference: Sequence[GroundPredicate],
                        sim: SimilarityTable,
                        score_floor: float = SCORE_FLOOR) -> list[SoftEvidence]:
    """Score every generated/reference pair, dropping weak ones.

    The full cartesian product is scored; pairs below the floor are
    noise and would only pad the program. Unlike the sampling-side
    matchers, a token pair missing from the table is an error here —
    soft evidence built on silent zeros would misrank captions.
    """
    out = []
    for y in sorted(generated, key=lambda p: p.id):
        for ystar in sorted(reference, key=lambda p: p.id):
            for slot, a, b in (("subject", y.subject, ystar.subject),
                               ("object", y.object, ystar.object)):
                # arity mismatches (one empty object) score 0 structurally
                # and are not a table gap
                if a and b and not sim.covers(a, b):
                    raise ValidationError(
                        f"no similarity entry for {slot} pair {a!r}/{b!r}"
                    )
            score = sim.predicate_score(y, ystar)
            if score >= score_floor:
                out.append(SoftEvidence(y.id, ystar.id, score))
    return out


def encode(model: HmlnModel,
           evidence: Mapping[str, int] | None = None,
           soft: Iterable[SoftEvidence] = ()) -> MapProblem:
    """Build the ILP for a model plus extra evidence and soft evidence."""
    fixed = dict(model.evidence)
    for k, v in (evidence or {}).items():
        if k not in model.atoms:
            raise ValidationError(f"evidence atom {k!r} not in model")
        if v not in (0, 1):
            raise ValidationError(f"evidence value for {k!r} must be 0 or 1")
        if k in fixed and fixed[k] != v:
            raise ValidationError(f"conflicting evidence for atom {k!r}")
        fixed[k] = v
    free = [a for a in model.atom_ids if a not in fixed]
    var_of = {a: f"a{k}" for k, a in enumerate(free)}
    objective: dict[str, float] = {v: 0.0 for v in var_of.values()}
    constant = 0.0
    constraints: list[Constraint] = []
    aux_defs: list[AuxDef] = []
    cn = 0

    def con(terms, sense, rhs):
        nonlocal cn
        constraints.append(Constraint(f"c{cn}", tuple(terms), sense, float(rhs)))
        cn += 1

    for pair in model.features:
        wc = pair.weight * pair.f_c_value
        wx = pair.weight * pair.f_r_value
        a1, a2 = pair.atoms
        if a1 in fixed and a2 in fixed:
            v1, v2 = fixed[a1], fixed[a2]
            if v1 and v2:
                constant += wc
            elif v1 != v2:
                constant += wx
        elif a1 in fixed or a2 in fixed:
            v = fixed[a1] if a1 in fixed else fixed[a2]
            x = var_of[a2] if a1 in fixed else var_of[a1]
            if v:  # conj tracks x, xor tracks 1-x
                constant += wx
                objective[x] += wc - wx
            else:  # conj dead, xor tracks x
                objective[x] += wx
        else:
            x1, x2 = var_of[a1], var_of[a2]
            cv, xv = f"f{pair.id}c", f"f{pair.id}x"
            objective[cv] = wc
            objective[xv] = wx
            con([(cv, 1.0), (x1, -1.0)], "<=", 0)
            con([(cv, 1.0), (x2, -1.0)], "<=", 0)
            con([(cv, 1.0), (x1, -1.0), (x2, -1.0)], ">=", -1)
            con([(xv, 1.0), (x1, -1.0), (x2, 1.0)], ">=", 0)
            con([(xv, 1.0), (x1, 1.0), (x2, -1.0)], ">=", 0)
            con([(xv, 1.0), (x1, 1.0), (x2, 1.0)], "<=", 2)
            con([(xv, 1.0), (x1, -1.0), (x2, -1.0)], "<=", 0)
            aux_defs.append(AuxDef(cv, wc, "conj", (("var", x1), ("var", x2))))
            aux_defs.append(AuxDef(xv, wx, "xor", (("var", x1), ("var", x2))))

    for j, se in enumerate(sorted(soft, key=lambda s: (s.left, s.right, s.score))):
        for end in (se.left, se.right):
            if end not in model.atoms:
                raise ValidationError(f"soft evidence atom {end!r} not in model")
        if se.left == se.right:
            constant += se.score  # an atom always agrees with itself
            continue
        l_fixed = se.left in fixed
        r_fixed = se.right in fixed
        if l_fixed and r_fixed:
            if fixed[se.left] == fixed[se.right]:
                constant += se.score
        elif l_fixed or r_fixed:
            v = fixed[se.left] if l_fixed else fixed[se.right]
            x = var_of[se.right] if l_fixed else var_of[se.left]
            if v:  # agree iff x = 1
                objective[x] += se.score
            else:  # agree iff x = 0
                constant += se.score
                objective[x] -= se.score
        else:
            x1, x2 = var_of[se.left], var_of[se.right]
            bv = f"s{j}"
            objective[bv] = se.score
            con([(bv, 1.0), (x1, 1.0), (x2, -1.0)], "<=", 1)
            con([(bv, 1.0), (x1, -1.0), (x2, 1.0)], "<=", 1)
            con([(bv, 1.0), (x1, -1.0), (x2, -1.0)], ">=", -1)
            con([(bv, 1.0), (x1, 1.0), (x2, 1.0)], ">=", 1)
            aux_defs.append(AuxDef(bv, se.score, "eq", (("var", x1), ("var", x2))))

    return MapProblem(
        binary_vars=tuple(var_of[a] for a in free),
        aux_vars=tuple(d.var for d in aux_defs),
        objective=objective,
        constant=constant,
        constraints=tuple(constraints),
        atom_of={v: a for a, v in var_of.items()},
        fixed=fixed,
        aux=tuple(aux_defs),
    )


def _aux_value(kind: str, a: int, b: int) -> int:
    if kind == "conj":
        return 1 if (a and b) else 0
    if kind == "xor":
        return 1 if a != b else 0
    return 1 if a == b else 0  # eq


def objective_at(problem: MapProblem, assignment: Mapping[str, int]) -> float:
    """Objective value of a complete atom assignment (auxes implied)."""

    def atom_val(atom: str) -> int:
        if atom in assignment:
            v = assignment[atom]
        elif atom in problem.fixed:
            v = problem.fixed[atom]
        else:
            raise ValidationError(f"assignment missing atom {atom!r}")
        if v not in (0, 1):
            raise ValidationError(f"assignment[{atom!r}] must be 0 or 1")
        return int(v)

    total = problem.constant
    for var in problem.binary_vars:
        total += problem.objective.get(var, 0.0) * atom_val(problem.atom_of[var])
    for d in problem.aux:
        vals = [v if tag == "const" else atom_val(problem.atom_of[v])
                for tag, v in d.args]
        total += d.coef * _aux_value(d.kind, vals[0], vals[1])
    return total


class _Budget(Exception):
    pass


def solve(problem: MapProblem, max_nodes: int | None = None) -> MapSolution:
    """Exact DFS branch and bound over the atom variables.

    Branches 0 before 1 in atom-id order, so among equal optima the
    lexicographically smallest assignment wins. The bound adds every
    positive coefficient that is still undetermined. ``max_nodes`` turns
    the search into an anytime one ("bound-limit" proof).
    """
    n = len(problem.binary_vars)
    if n > MAP_GUARD:
        raise GuardError(
            f"{n} binary variables exceeds the built-in solver limit "
            f"({MAP_GUARD}); export the LP and use an external solver"
        )
    index = {v: i for i, v in enumerate(problem.binary_vars)}
    coef = [problem.objective.get(v, 0.0) for v in problem.binary_vars]
    pos_tail = [0.0] * (n + 1)  # sum of positive atom coefs from i on
    for i in range(n - 1, -1, -1):
        pos_tail[i] = pos_tail[i + 1] + max(coef[i], 0.0)
    auxes = []
    for d in problem.aux:
        args = tuple(
            (0, int(v)) if tag == "const" else (1, index[v]) for tag, v in d.args
        )
        auxes.append((d.coef, d.kind, args))

    assign = [-1] * n

    def aux_contrib(optimistic: bool) -> float:
        total = 0.0
        for c, kind, args in auxes:
            vals = []
            for is_var, v in args:
                vals.append(assign[v] if is_var else v)
            a, b = vals
            if kind == "conj" and (a == 0 or b == 0):
                continue  # determined 0
            if a < 0 or b < 0:
                if optimistic and c > 0.0:
                    total += c
                continue
            total += c * _aux_value(kind, a, b)
        return total

    best_assign = [0] * n
    for i in range(n):
        assign[i] = 0
    best_val = problem.constant + aux_contrib(optimistic=False)
    for i in range(n):
        assign[i] = -1

    nodes = 0

    def rec(depth: int, acc: float) -> None:
        nonlocal nodes, best_val, best_assign
        nodes += 1
        if max_nodes is not None and nodes > max_nodes:
            raise _Budget
        if depth == n:
            val = acc + aux_contrib(optimistic=False)
            if val > best_val:
                best_val = val
                best_assign = assign.copy()
            return
        bound = acc + pos_tail[depth] + aux_contrib(optimistic=True)
        if bound <= best_val:
            return
        assign[depth] = 0
        rec(depth + 1, acc)
        assign[depth] = 1
        rec(depth + 1, acc + coef[depth])
        assign[depth] = -1

    proof = "optimal"
    try:
        rec(0, problem.constant)
    except _Budget:
        proof = "bound-limit"

    out = dict(problem.fixed)
    for i, var in enumerate(problem.binary_vars):
        out[problem.atom_of[var]] = best_assign[i]
    return MapSolution(assignment=out, objective_value=best_val, proof=proof)


def _coef_str(c: float) -> str:
    return format(c, ".9f")


def write_lp(problem: MapProblem, name: str = "map") -> str:
    """Render the problem in CPLEX LP text format, byte-stable.

    Objective terms come out sorted by variable name, one per line, with
    9 decimal digits; constraints keep generation order. The objective
    constant rides on a fixed ONE_VAR_CONSTANT variable.
    """
    lines = [f"\\ Problem: {name}", "", "Maximize", "obj:"]
    for var in sorted(problem.objective):
        c = problem.objective[var]
        if c == 0.0:
            continue
        sign = "+" if c >= 0 else "-"
        lines.append(f"{sign}{_coef_str(abs(c))} {var}")
    if problem.constant != 0.0:
        c = problem.constant
        sign = "+" if c >= 0 else "-"
        lines.append(f"{sign}{_coef_str(abs(c))} ONE_VAR_CONSTANT")
    lines += ["", "Subject To"]
    for con in problem.constraints:
        lines.append(f"{con.name}:")
        for var, c in con.terms:
            sign = "+" if c >= 0 else "-"
            lines.append(f"{sign}{_coef_str(abs(c))} {var}")
        lines.append(f"{con.sense} {_coef_str(con.rhs)}")
    if problem.constant != 0.0:
        lines += ["", "Bounds", "ONE_VAR_CONSTANT = 1"]
    lines += ["", "Binary"]
    for var in sorted(problem.binary_vars) + sorted(problem.aux_vars):
        lines.append(var)
    lines += ["", "End", ""]
    return "\n".join(lines)


def map_score(model: HmlnModel,
              generated: Sequence[GroundPredicate],
              reference: Sequence[GroundPredicate],
              sim: SimilarityTable,
              score_floor: float = SCORE_FLOOR,
              max_nodes: int | None = None) -> float:
    """MAP objective with the generated caption clamped to true.

    Soft evidence ties each generated atom to similar reference atoms;
    the optimum says how well the most likely completion of the model
    explains the caption. Higher is better, and scores are comparable
    across captions for the same model.
    """
    for p in generated:
        if p.id not in model.atoms:
            raise ValidationError(f"generated atom {p.id!r} not in model")
    for p in reference:
        if p.id not in model.atoms:
            raise ValidationError(f"reference atom {p.id!r} not in model")
    soft = build_soft_evidence(generated, reference, sim, score_floor)
    problem = encode(model, {p.id: 1 for p in generated}, soft)
    return solve(problem, max_nodes=max_nodes).objective_value
