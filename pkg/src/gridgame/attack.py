"""Attacker action spaces, payoffs, and the measurement-to-market pipeline.

Each attacker owns a small set of attackable measurements with discrete
injection levels, and a virtual-bid position whose value depends on the
day-ahead / real-time LMP spread. Utilities are evaluated by running the
full pipeline (inject, estimate, detect, re-price) and are memoized on the
post-defense aggregate attack vector, since everything downstream of the
injection depends on the attacks only through that sum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .estimation import (
    AttackVector,
    aggregate_attack,
    congestion_sets,
    detect_and_identify,
    estimate,
    simulate_measurements,
    true_injections,
)
from .grid import GridCase, MeasurementModel, ShiftFactors
from .market import LpInfeasibleError, MarketSolution, solve_expost_dcopf


@dataclass(frozen=True)
class AttackerSpec:
    """One adversary: what it can attack and how it bids.

    ``i_bus`` is the bus where the attacker buys in DA and sells in RT
    (it profits when that bus's RT price rises); ``j_bus`` the reverse.
    ``levels`` is the discrete injection level set available on each of its
    ``k_indices`` (global measurement indices).
    """

    id: int
    k_indices: tuple[int, ...]
    levels: tuple[float, ...]
    i_bus: int
    j_bus: int
    volume: float = 100.0            # virtual power P_m, MW
    kappa: float = 0.25              # attack cost scale
    epsilon: float | None = None     # residual budget; None -> 3 sigma sqrt(dof)
    gamma: float = 2.0               # surrogate penalty on missed targets
    beta: float = 1.0                # cap on delta as a fraction of the line limit
    beta_prime: float = 1.0          # cap on alpha as a fraction of the line limit

    def __post_init__(self):
        if 0.0 not in self.levels:
            raise ValueError(f"attacker {self.id}: level set must contain 0")
        if self.gamma <= 1.0:
            raise ValueError(f"attacker {self.id}: gamma must be > 1")
        if not (0.0 < self.beta <= 1.0 and 0.0 < self.beta_prime <= 1.0):
            raise ValueError(f"attacker {self.id}: beta, beta' must be in (0, 1]")
        if len(set(self.k_indices)) != len(self.k_indices):
            raise ValueError(f"attacker {self.id}: duplicate attackable indices")

    @property
    def n_actions(self) -> int:
        return len(self.levels) ** len(self.k_indices)

    def action_levels(self, action: int) -> tuple[float, ...]:
        """Per-index levels of an action; the first attackable index is the
        most significant digit of the base-|levels| encoding."""
        base = len(self.levels)
        digits = []
        a = action
        for _ in self.k_indices:
            digits.append(self.levels[a % base])
            a //= base
        if a:
            raise IndexError(f"action {action} out of range for attacker {self.id}")
        return tuple(reversed(digits))

    def action_index(self, levels) -> int:
        base = len(self.levels)
        idx = 0
        for v in levels:
            idx = idx * base + self.levels.index(v)
        return idx

    @property
    def zero_action(self) -> int:
        return self.action_index([0.0] * len(self.k_indices))

    def action_vector(self, action: int, n_measurements: int) -> AttackVector:
        return AttackVector.from_levels(
            self.id, self.k_indices, self.action_levels(action), n_measurements
        )

    def all_action_matrix(self, n_measurements: int, defended_indices=()) -> np.ndarray:
        """(n_actions x n) matrix of attack vectors, defense already applied."""
        blocked = set(int(i) for i in defended_indices)
        base = len(self.levels)
        k = len(self.k_indices)
        grid = np.array(list(itertools.product(self.levels, repeat=k)))
        out = np.zeros((base ** k, n_measurements))
        for col, idx in enumerate(self.k_indices):
            if idx not in blocked:
                out[:, idx] = grid[:, col]
        return out

    def default_epsilon(self, model: MeasurementModel) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 3.0 * model.sigma * float(np.sqrt(model.dof))


def validate_attacker_set(specs) -> None:
    seen: set[int] = set()
    for s in specs:
        overlap = seen.intersection(s.k_indices)
        if overlap:
            raise ValueError(f"attackable sets overlap on measurement indices {sorted(overlap)}")
        seen.update(s.k_indices)


@dataclass(frozen=True)
class JointAttack:
    """Pure strategy profile: one action index per attacker, with the
    realized attack vectors."""

    action_indices: tuple[int, ...]
    attacks: tuple[AttackVector, ...]

    @staticmethod
    def from_indices(specs, action_indices, n_measurements: int) -> "JointAttack":
        attacks = tuple(
            s.action_vector(a, n_measurements) for s, a in zip(specs, action_indices)
        )
        return JointAttack(action_indices=tuple(int(a) for a in action_indices), attacks=attacks)


@dataclass(frozen=True)
class LineSets:
    """Line classification for one attacker's bid position.

    plus/minus: sign of chi(l, j_m) - chi(l, i_m); ref/opp: DA flow along or
    against the declared direction. Congestion targets pay through
    lambda^{RT,+} or lambda^{RT,-}; decongestion targets pay by zeroing one.
    1-based line numbers throughout.
    """

    plus: tuple[int, ...]
    minus: tuple[int, ...]
    ref_direction: tuple[int, ...]
    opp_direction: tuple[int, ...]
    congest_targets: tuple[int, ...]
    decongest_targets: tuple[int, ...]


def classify_lines(spec: AttackerSpec, X: ShiftFactors, da_flows: np.ndarray) -> LineSets:
    """Split lines by bid sensitivity and DA flow direction (strict signs;
    zero-sensitivity lines belong to neither side)."""
    d = X.matrix[:, spec.j_bus - 1] - X.matrix[:, spec.i_bus - 1]
    L = X.matrix.shape[0]
    plus = tuple(int(l + 1) for l in range(L) if d[l] > 1e-12)
    minus = tuple(int(l + 1) for l in range(L) if d[l] < -1e-12)
    ref = tuple(int(l + 1) for l in range(L) if da_flows[l] >= 0.0)
    opp = tuple(int(l + 1) for l in range(L) if da_flows[l] < 0.0)
    pset, mset, rset, oset = set(plus), set(minus), set(ref), set(opp)
    congest = tuple(sorted((pset & rset) | (mset & oset)))
    decongest = tuple(sorted((pset & oset) | (mset & rset)))
    return LineSets(plus, minus, ref, opp, congest, decongest)


def zeta(spec: AttackerSpec, da: MarketSolution, rt: MarketSolution) -> float:
    """Per-MW virtual-bid margin: RT-DA spread collected at i_bus plus
    DA-RT spread at j_bus."""
    i, j = spec.i_bus - 1, spec.j_bus - 1
    return float((rt.lmp[i] - da.lmp[i]) + (da.lmp[j] - rt.lmp[j]))


def zeta_from_duals(spec: AttackerSpec, X: ShiftFactors, da: MarketSolution, rt: MarketSolution) -> float:
    """Equivalent dual decomposition of the margin: the balance duals cancel
    and only congestion terms weighted by the bid's shift-factor difference
    remain."""
    d = X.matrix[:, spec.j_bus - 1] - X.matrix[:, spec.i_bus - 1]
    da_term = da.lam_minus - da.lam_plus
    rt_term = rt.lam_plus - rt.lam_minus
    return float(np.sum(d * (da_term + rt_term)))


def attack_cost(attack, kappa: float) -> float:
    """Scaled squared norm of the attack vector."""
    v = attack.vector if isinstance(attack, AttackVector) else np.asarray(attack, dtype=float)
    return float(kappa * np.sum(v * v))


def residual_feasible(joint: JointAttack, spec: AttackerSpec, model: MeasurementModel) -> bool:
    """Residual-budget constraint: the attacker's own residual footprint
    plus everyone else's must fit under its threshold."""
    total = 0.0
    for att in joint.attacks:
        total += float(np.linalg.norm(model.W @ att.vector[list(model.kept)]))
    return total <= spec.default_epsilon(model)


@dataclass(frozen=True)
class PipelineOutcome:
    """What the market sees after one joint injection."""

    mu_rt: np.ndarray
    congestion_plus: tuple[int, ...]
    congestion_minus: tuple[int, ...]
    outliers: tuple[int, ...]
    detected: bool
    rt_infeasible: bool
    lambda0_rt: float
    rmsd: float                     # sqrt(mean (mu_rt - mu_da)^2)
    rt: MarketSolution


class ProfileEvaluator:
    """Runs inject -> estimate -> identify -> congestion -> ex-post, with
    two memo layers: RT solutions keyed by congestion sets, and full
    outcomes keyed by the post-defense aggregate attack vector.

    Evaluation is noiseless: the base measurements are the exact DA-dispatch
    values, so the pipeline is deterministic and equilibrium tables are
    reproducible.
    """

    def __init__(self, case: GridCase, X: ShiftFactors, model: MeasurementModel,
                 da: MarketSolution, max_removals: int = 3):
        self.case = case
        self.X = X
        self.model = model
        self.da = da
        self.max_removals = max_removals
        self.z_base = simulate_measurements(case, X, da.dispatch, sigma=0.0)
        self.true_flows = X.flows(true_injections(case, da.dispatch))
        self._rt_cache: dict = {}
        self._outcome_cache: dict = {}
        self.stats = {"pipeline_evals": 0, "rt_solves": 0}

    def rt_solution(self, cplus, cminus) -> MarketSolution:
        key = (tuple(cplus), tuple(cminus))
        hit = self._rt_cache.get(key)
        if hit is None:
            self.stats["rt_solves"] += 1
            hit = solve_expost_dcopf(self.case, self.X, cplus, cminus, self.da)
            self._rt_cache[key] = hit
        return hit

    def evaluate_aggregate(self, aggregate: np.ndarray) -> PipelineOutcome:
        key = aggregate.tobytes()
        hit = self._outcome_cache.get(key)
        if hit is None:
            hit = self._run(aggregate)
            self._outcome_cache[key] = hit
        return hit

    def _run(self, aggregate: np.ndarray) -> PipelineOutcome:
        self.stats["pipeline_evals"] += 1
        z_att = self.z_base + aggregate
        res = estimate(z_att, self.model)
        detected = res.detected
        if detected:
            res = detect_and_identify(res, z_att, self.model, self.max_removals)
        cp, cm = congestion_sets(res.flows, self.case)
        try:
            rt = self.rt_solution(cp, cm)
            infeasible = False
        except LpInfeasibleError:
            # corrupted congestion sets: treat like detection, attack discarded
            infeasible = True
            clean = estimate(self.z_base, self.model)
            cp, cm = congestion_sets(clean.flows, self.case)
            rt = self.rt_solution(cp, cm)
        diff = rt.lmp - self.da.lmp
        rmsd = float(np.sqrt(np.mean(diff * diff)))
        return PipelineOutcome(
            mu_rt=rt.lmp, congestion_plus=cp, congestion_minus=cm,
            outliers=res.outliers, detected=detected, rt_infeasible=infeasible,
            lambda0_rt=rt.lambda0, rmsd=rmsd, rt=rt,
        )

    def outcome(self, joint: JointAttack, defended_indices=()) -> PipelineOutcome:
        agg = aggregate_attack(joint.attacks, defended_indices,
                               n=self.model.n_buses + self.model.n_lines)
        return self.evaluate_aggregate(agg)

    def attacker_utility(self, spec: AttackerSpec, joint: JointAttack,
                         defended_indices=()) -> float:
        out = self.outcome(joint, defended_indices)
        own = joint.attacks[self._position(spec, joint)]
        z = float((out.mu_rt[spec.i_bus - 1] - self.da.lmp[spec.i_bus - 1])
                  + (self.da.lmp[spec.j_bus - 1] - out.mu_rt[spec.j_bus - 1]))
        return z * spec.volume - attack_cost(own, spec.kappa)

    @staticmethod
    def _position(spec: AttackerSpec, joint: JointAttack) -> int:
        for k, att in enumerate(joint.attacks):
            if att.owner == spec.id:
                return k
        raise KeyError(f"attacker {spec.id} not in joint profile")


def attacker_utility(
    spec: AttackerSpec,
    joint: JointAttack,
    defended_indices,
    case: GridCase,
    X: ShiftFactors,
    model: MeasurementModel,
    da: MarketSolution,
    evaluator: ProfileEvaluator | None = None,
) -> float:
    """Market-based payoff of one attacker in a joint profile (virtual-bid
    margin times volume, minus the cost of its own played vector)."""
    if evaluator is None:
        evaluator = ProfileEvaluator(case, X, model, da)
    return evaluator.attacker_utility(spec, joint, defended_indices)


def _relaxation_pair(slack: float, limit: float, beta: float, beta_prime: float):
    """Closed-form optimum of one target line's (delta, alpha) subproblem:
    alpha covers an infeasible margin up to its cap, delta takes whatever
    slack remains."""
    alpha = float(np.clip(-slack, 0.0, beta_prime * limit))
    delta = float(np.clip(slack + alpha, 0.0, beta * limit))
    return delta, alpha


def surrogate_objective(
    spec: AttackerSpec,
    joint: JointAttack,
    defended_indices,
    case: GridCase,
    X: ShiftFactors,
    model: MeasurementModel,
    da: MarketSolution,
    evaluator: ProfileEvaluator | None = None,
) -> float:
    """Congestion-targeting surrogate of the attacker's problem.

    For every line the attacker's bid is sensitive to, score the margin by
    which the expected flow estimate crosses (or misses) the relevant limit,
    with the closed-form relaxation pair standing in for the per-line LP,
    then subtract the attack cost.
    """
    sets = classify_lines(spec, X, da.flows)
    if evaluator is not None:
        true_flows = evaluator.true_flows
    else:
        true_flows = X.flows(true_injections(case, da.dispatch))
    agg = aggregate_attack(joint.attacks, defended_indices,
                           n=model.n_buses + model.n_lines)
    mean_flow = true_flows + model.S_F @ agg[list(model.kept)]
    limits = case.line_limits()
    ref = set(sets.ref_direction)
    total = 0.0
    for l in sets.plus + sets.minus:
        e, fmax = mean_flow[l - 1], limits[l - 1]
        in_plus = l in sets.plus
        in_ref = l in ref
        if in_plus and in_ref:
            s = e - fmax                # congest in reference direction
        elif (not in_plus) and (not in_ref):
            s = -fmax - e               # congest in opposite direction
        elif (not in_plus) and in_ref:
            s = fmax - e                # decongest from reference direction
        else:
            s = e + fmax                # decongest from opposite direction
        delta, alpha = _relaxation_pair(s, fmax, spec.beta, spec.beta_prime)
        total += delta - spec.gamma * alpha
    own = joint.attacks[ProfileEvaluator._position(spec, joint)]
    return total - attack_cost(own, spec.kappa)
