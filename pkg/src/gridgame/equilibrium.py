"""Equilibrium computation: attacker GNEs via learning automata and
exhaustive enumeration, the defender's min-max (hierarchical) equilibrium,
and the satisfaction-search hybrid.

The enumeration oracle precomputes utility tensors over the joint discrete
action grid. Because every pipeline quantity depends on the attacks only
through the post-defense aggregate vector, the tensor build reduces to
Gram-matrix algebra for detection, per-line broadcast sums for congestion
signatures, and one ex-post LP per distinct congestion outcome.
"""

from __future__ import annotations

import itertools
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackerSpec, JointAttack, ProfileEvaluator, validate_attacker_set
from .grid import ObservabilityError

PSNE_TOL = 1e-9          # slack when comparing a payoff to the best response


class ResourceGuardError(RuntimeError):
    """Joint action grid too large for exhaustive enumeration."""


@dataclass(frozen=True)
class LearningConfig:
    step_size: float = 0.02
    max_iterations: int = 200_000
    eta: float = 1e-3               # converged when some q entry >= 1 - eta
    seed: int = 0
    restarts: int = 20
    trace_every: int = 200

    def __post_init__(self):
        if not (0.0 < self.step_size < 1.0):
            raise ValueError("step size must be in (0, 1)")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


@dataclass(frozen=True)
class DefenseAction:
    """Set of secured measurement indices, within budget."""

    indices: tuple[int, ...]
    budget: int
    kappa0: float = 0.0

    def __post_init__(self):
        if len(self.indices) > self.budget:
            raise ValueError(f"defense exceeds budget: |a0|={len(self.indices)} > {self.budget}")


@dataclass(frozen=True)
class SatisfactionConfig:
    threshold: float                # Gamma_0, absolute units ($^2)
    max_trials: int = 36
    seed: int = 0
    with_replacement: bool = False

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("satisfaction threshold must be > 0")
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")


def normalize_payoff(u: float, u_min: float, u_max: float) -> float:
    """Map a payoff into [0, 1]; constant games normalize to 0 (inaction)."""
    if u_max - u_min <= 0.0:
        return 0.0
    return float(np.clip((u - u_min) / (u_max - u_min), 0.0, 1.0))


def lri_update(q: np.ndarray, chosen: int, reward: float, b: float) -> np.ndarray:
    """Linear reward-inaction step: move probability mass toward the chosen
    action in proportion to the normalized reward."""
    e = np.zeros_like(q)
    e[chosen] = 1.0
    return q + b * reward * (e - q)


def rmsd(mu_da: np.ndarray, mu_rt: np.ndarray) -> float:
    """Root mean square deviation between two LMP vectors ($/MWh)."""
    d = np.asarray(mu_rt, dtype=float) - np.asarray(mu_da, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


def price_of_information(u0_hhe: float, u0_he: float) -> float:
    return float(u0_hhe - u0_he)


@dataclass(frozen=True)
class SearchStats:
    p0: float
    p0_star: float
    mu0: float | None       # expected trials to first hit; None when p0 = 0
    v0: float | None        # variance of that count


def search_stats(n0: int, action_space_size: int, max_trials: int) -> SearchStats:
    """Uniform-search statistics over a finite defense action space."""
    if not (0 <= n0 <= action_space_size):
        raise ValueError("n0 must be within 0..|A0|")
    p0 = n0 / action_space_size
    p0_star = 1.0 - (1.0 - p0) ** max_trials
    if p0 == 0.0:
        return SearchStats(p0=0.0, p0_star=0.0, mu0=None, v0=None)
    return SearchStats(p0=p0, p0_star=p0_star, mu0=1.0 / p0, v0=(1.0 - p0) / p0 ** 2)


# ---------------------------------------------------------------------------
# utility tensors over the joint action grid
# ---------------------------------------------------------------------------

@dataclass
class GameTensors:
    """Exhaustive payoff description of the attackers' game under one
    defense action."""

    specs: tuple[AttackerSpec, ...]
    defended: tuple[int, ...]
    dims: tuple[int, ...]
    U: tuple[np.ndarray, ...]       # one tensor per attacker
    U0: np.ndarray                  # defender loss P_L * RMSD, no defense cost
    outcome_ids: np.ndarray
    outcome_rmsd: np.ndarray        # per outcome id
    outcome_sets: list              # per outcome id: (C+, C-)
    outcome_mu_rt: list             # per outcome id: LMP vector
    detected: np.ndarray            # bool tensor
    build_seconds: float

    def payoffs(self, profile) -> list[float]:
        idx = tuple(int(a) for a in profile)
        return [float(u[idx]) for u in self.U]

    def payoff_bounds(self) -> list[tuple[float, float]]:
        return [(float(u.min()), float(u.max())) for u in self.U]

    def outcome_of(self, profile):
        oid = int(self.outcome_ids[tuple(int(a) for a in profile)])
        return self.outcome_sets[oid], self.outcome_rmsd[oid], self.outcome_mu_rt[oid]


def _axis_shape(v: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = len(v)
    return v.reshape(shape)


def _pair_shape(G: np.ndarray, a: int, b: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[a], shape[b] = G.shape
    return G.reshape(shape)


def build_game_tensors(
    specs,
    defended_indices,
    evaluator: ProfileEvaluator,
    max_profiles: int = 4_000_000,
    detected_chunk: int = 65_536,
) -> GameTensors:
    """Evaluate every pure joint profile through the market pipeline.

    Undetected profiles are classified by congestion signature with
    broadcast arithmetic; detected ones go through the vectorized
    largest-normalized-residual recursion grouped by removal path. Each
    distinct congestion outcome costs one ex-post LP solve.
    """
    t0 = time.perf_counter()
    specs = tuple(specs)
    validate_attacker_set(specs)
    model = evaluator.model
    case = evaluator.case
    M = len(specs)
    dims = tuple(s.n_actions for s in specs)
    n_profiles = int(np.prod(dims))
    if n_profiles > max_profiles:
        raise ResourceGuardError(
            f"joint grid has {n_profiles} profiles (cap {max_profiles})")
    n = model.n_buses + model.n_lines
    defended = tuple(sorted(int(i) for i in defended_indices))

    A = [s.all_action_matrix(n, defended) for s in specs]       # post-defense
    A_raw = [s.all_action_matrix(n, ()) for s in specs]          # as played
    costs = [s.kappa * np.sum(a * a, axis=1) for s, a in zip(specs, A_raw)]

    # detection: ||W (a_1 + ... + a_M)||^2 via Gram expansion
    WA = [a @ model.W for a in A]
    normsq = np.zeros(dims)
    for m in range(M):
        g = np.einsum("ij,ij->i", WA[m], WA[m])
        normsq += _axis_shape(g, m, M)
    for m, l in itertools.combinations(range(M), 2):
        G = WA[m] @ WA[l].T
        normsq += 2.0 * _pair_shape(G, m, l, M)
    tau2 = evaluator.model.tau ** 2
    detected = normsq > tau2
    del normsq, WA

    # congestion signatures for undetected profiles
    dF = [a @ model.S_F.T for a in A]                            # n_a x L
    F_t = evaluator.true_flows
    limits = case.line_limits()
    tol = 1e-6
    up_reach = F_t + sum(df.max(axis=0) for df in dF)
    dn_reach = F_t + sum(df.min(axis=0) for df in dF)
    cand_up = np.flatnonzero(up_reach >= limits - tol)
    cand_dn = np.flatnonzero(dn_reach <= -limits + tol)
    bits = [(int(l), +1) for l in cand_up] + [(int(l), -1) for l in cand_dn]
    if len(bits) > 62:
        raise ResourceGuardError(f"{len(bits)} candidate congestion bits exceed signature width")

    sig = np.zeros(dims, dtype=np.int64)
    for b, (l, direction) in enumerate(bits):
        flow = np.full(dims, F_t[l])
        for m in range(M):
            flow += _axis_shape(dF[m][:, l], m, M)
        if direction > 0:
            mask = flow >= limits[l] - tol
        else:
            mask = flow <= -limits[l] + tol
        sig |= mask.astype(np.int64) << b
        del flow, mask

    def decode(s: int):
        cp, cm = [], []
        for b, (l, direction) in enumerate(bits):
            if s >> b & 1:
                (cp if direction > 0 else cm).append(l + 1)
        return tuple(cp), tuple(cm)

    outcome_key: dict = {}
    outcome_sets: list = []

    def outcome_id(cp, cm) -> int:
        key = (cp, cm)
        oid = outcome_key.get(key)
        if oid is None:
            oid = len(outcome_sets)
            outcome_key[key] = oid
            outcome_sets.append(key)
        return oid

    sig_vals, sig_inv = np.unique(sig, return_inverse=True)
    sig_oids = np.array([outcome_id(*decode(int(s))) for s in sig_vals], dtype=np.int32)
    outcome_ids = sig_oids[sig_inv].reshape(dims)
    del sig, sig_inv

    # detected profiles: identification then reclassification
    det_flat = np.flatnonzero(detected.reshape(-1))
    if det_flat.size:
        outcome_flat = outcome_ids.reshape(-1)
        for start in range(0, det_flat.size, detected_chunk):
            chunk = det_flat[start:start + detected_chunk]
            mi = np.array(np.unravel_index(chunk, dims))     # M x chunk
            agg = np.zeros((chunk.size, n))
            for m in range(M):
                agg += A[m][mi[m]]
            final_oids = _identify_and_classify(
                agg, evaluator, outcome_id, F_t, limits, tol)
            outcome_flat[chunk] = final_oids
        outcome_ids = outcome_flat.reshape(dims)

    # one ex-post LP per outcome
    mu_da = evaluator.da.lmp
    n_out = len(outcome_sets)
    outcome_rmsd = np.zeros(n_out)
    outcome_mu = []
    zeta_by_outcome = np.zeros((M, n_out))
    for oid, (cp, cm) in enumerate(outcome_sets):
        try:
            rt = evaluator.rt_solution(cp, cm)
        except Exception:
            rt = evaluator.rt_solution(*_clean_sets(evaluator))
        mu = rt.lmp
        outcome_mu.append(mu)
        outcome_rmsd[oid] = rmsd(mu_da, mu)
        for m, s in enumerate(specs):
            zeta_by_outcome[m, oid] = (
                (mu[s.i_bus - 1] - mu_da[s.i_bus - 1])
                + (mu_da[s.j_bus - 1] - mu[s.j_bus - 1])
            )

    U = []
    for m, s in enumerate(specs):
        u = zeta_by_outcome[m][outcome_ids] * s.volume
        u -= _axis_shape(costs[m], m, M)
        U.append(u)
    U0 = case.total_load * outcome_rmsd[outcome_ids]

    return GameTensors(
        specs=specs, defended=defended, dims=dims, U=tuple(U), U0=U0,
        outcome_ids=outcome_ids, outcome_rmsd=outcome_rmsd,
        outcome_sets=outcome_sets, outcome_mu_rt=outcome_mu,
        detected=detected, build_seconds=time.perf_counter() - t0,
    )


def _clean_sets(evaluator: ProfileEvaluator):
    from .estimation import congestion_sets, estimate
    clean = estimate(evaluator.z_base, evaluator.model)
    return congestion_sets(clean.flows, evaluator.case)


def _identify_and_classify(agg, evaluator, outcome_id, F_t, limits, tol,
                           _model=None, _depth=0, _cache=None):
    """Vectorized largest-normalized-residual recursion for a block of
    detected aggregates; returns an outcome id per row."""
    model = _model if _model is not None else evaluator.model
    cache = _cache if _cache is not None else {}
    kept = list(model.kept)
    zk = agg[:, kept]
    r = zk @ model.W
    norms = np.linalg.norm(r, axis=1)
    out = np.empty(agg.shape[0], dtype=np.int32)

    done = norms <= model.tau
    if _depth >= evaluator.max_removals:
        done = np.ones_like(done)
    if done.any():
        flows = F_t + zk[done] @ model.S_F.T
        out[done] = _classify_rows(flows, limits, tol, outcome_id)
    todo = ~done
    if todo.any():
        Wd = np.diag(model.W)
        Rd = np.diag(model.R)
        denom = np.sqrt(np.maximum(Wd * Rd, 0.0))
        usable = denom > 1e-9
        scaled = np.zeros_like(r[todo])
        scaled[:, usable] = np.abs(r[todo][:, usable]) / denom[usable]
        pick_local = np.argmax(scaled, axis=1)
        pick_full = np.array(kept)[pick_local]
        rows = np.flatnonzero(todo)
        for idx in np.unique(pick_full):
            group = rows[pick_full == idx]
            key = frozenset(set(evaluator.model.kept) - set(model.kept) | {int(idx)})
            reduced = cache.get(key)
            if reduced is None:
                try:
                    reduced = model.reduce({int(idx)})
                except ObservabilityError:
                    reduced = False
                cache[key] = reduced
            if reduced is False:
                flows = F_t + agg[group][:, kept] @ model.S_F.T
                out[group] = _classify_rows(flows, limits, tol, outcome_id)
            else:
                out[group] = _identify_and_classify(
                    agg[group], evaluator, outcome_id, F_t, limits, tol,
                    _model=reduced, _depth=_depth + 1, _cache=cache)
    return out


def _classify_rows(flows, limits, tol, outcome_id):
    up = flows >= limits - tol
    dn = flows <= -limits + tol
    out = np.empty(flows.shape[0], dtype=np.int32)
    seen: dict = {}
    for i in range(flows.shape[0]):
        key = (up[i].tobytes(), dn[i].tobytes())
        oid = seen.get(key)
        if oid is None:
            cp = tuple(int(l + 1) for l in np.flatnonzero(up[i]))
            cm = tuple(int(l + 1) for l in np.flatnonzero(dn[i]))
            oid = outcome_id(cp, cm)
            seen[key] = oid
        out[i] = oid
    return out


# ---------------------------------------------------------------------------
# equilibrium concepts
# ---------------------------------------------------------------------------

def best_response_masks(tensors: GameTensors) -> list[np.ndarray]:
    masks = []
    for m, u in enumerate(tensors.U):
        best = u.max(axis=m, keepdims=True)
        masks.append(u >= best - PSNE_TOL)
    return masks


def enumerate_psne(tensors: GameTensors) -> list[tuple[int, ...]]:
    """Every pure profile where no attacker has a profitable unilateral grid
    deviation. By the dominance of inaction over detected-and-discarded
    attacks, these are equilibria of the coupled-constraint game as well."""
    masks = best_response_masks(tensors)
    joint = masks[0]
    for m in masks[1:]:
        joint = joint & m
    return [tuple(int(v) for v in idx) for idx in np.argwhere(joint)]


def is_psne(tensors: GameTensors, profile) -> bool:
    idx = tuple(int(a) for a in profile)
    for m, u in enumerate(tensors.U):
        line = list(idx)
        line[m] = slice(None)
        if u[idx] < u[tuple(line)].max() - PSNE_TOL:
            return False
    return True


@dataclass
class LearningResult:
    profile: tuple[int, ...]
    converged: bool
    iterations: int
    q: list[np.ndarray]
    trace: list[tuple[int, int, int, float]]    # iteration, attacker, action, q


def run_learning(
    specs,
    cfg: LearningConfig,
    payoff_fn,
    payoff_bounds,
    seed: int | None = None,
) -> LearningResult:
    """Distributed linear reward-inaction learning over the action grids.

    Each automaton samples an action from its strategy vector, observes its
    own normalized payoff for the sampled joint profile, and reinforces.
    Stops when every strategy vector has an entry >= 1 - eta, or at the
    iteration cap (reported as non-convergence).
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    dims = [s.n_actions for s in specs]
    q = [np.full(d, 1.0 / d) for d in dims]
    trace: list[tuple[int, int, int, float]] = []
    iters = 0
    for t in range(cfg.max_iterations):
        iters = t + 1
        chosen = [int(rng.choice(d, p=qm)) for d, qm in zip(dims, q)]
        payoffs = payoff_fn(tuple(chosen))
        for m in range(len(specs)):
            lo, hi = payoff_bounds[m]
            r = normalize_payoff(payoffs[m], lo, hi)
            q[m] = lri_update(q[m], chosen[m], r, cfg.step_size)
        if cfg.trace_every and t % cfg.trace_every == 0:
            for m in range(len(specs)):
                trace.append((t, m, chosen[m], float(q[m][chosen[m]])))
        if all(qm.max() >= 1.0 - cfg.eta for qm in q):
            break
    profile = tuple(int(np.argmax(qm)) for qm in q)
    converged = all(qm.max() >= 1.0 - cfg.eta for qm in q)
    return LearningResult(profile=profile, converged=converged, iterations=iters,
                          q=q, trace=trace)


def learn_gne(
    specs,
    tensors: GameTensors,
    cfg: LearningConfig,
    seed: int | None = None,
):
    """Learning run backed by the utility tensors, cross-checked against the
    PSNE test; non-verified runs are retried with derived seeds and the
    worst-case enumerated PSNE is the final fallback."""
    bounds = tensors.payoff_bounds()
    payoff_fn = tensors.payoffs
    base = cfg.seed if seed is None else seed
    for k in range(max(1, cfg.restarts)):
        res = run_learning(specs, cfg, payoff_fn, bounds, seed=base + 7919 * k)
        if res.converged and is_psne(tensors, res.profile):
            return res.profile, res, "automata"
    psne = enumerate_psne(tensors)
    if not psne:
        raise RuntimeError("no PSNE on the discrete grid; cannot fall back")
    worst = max(psne, key=lambda p: (float(tensors.U0[p]), p))
    return worst, None, "enumeration-fallback"


def defender_utility(
    defense: DefenseAction,
    joint: JointAttack,
    evaluator: ProfileEvaluator,
) -> float:
    """Load-weighted RMS price deviation plus the defense cost."""
    out = evaluator.outcome(joint, defense.indices)
    return evaluator.case.total_load * out.rmsd + defense.kappa0 * len(defense.indices)


def satisfaction_value(
    defense: DefenseAction,
    joint: JointAttack,
    evaluator: ProfileEvaluator,
) -> float:
    """Sum of squared RT-DA LMP deviations (threshold units of the
    satisfaction constraint)."""
    out = evaluator.outcome(joint, defense.indices)
    n = evaluator.case.n_buses
    return float(n * out.rmsd ** 2)


@dataclass
class DefenseEvaluation:
    defense: tuple[int, ...]
    psne: list[tuple[int, ...]]
    worst_profile: tuple[int, ...] | None
    worst_u0: float
    tensors: GameTensors | None = None


@dataclass
class EquilibriumReport:
    method: str
    defense: tuple[int, ...]
    profiles: list[tuple[int, ...]]          # attacker equilibria (action indices)
    attack_levels: list[list[tuple[float, ...]]]
    u0: float
    attacker_utilities: list[float]
    rmsd: float
    congestion_plus: tuple[int, ...]
    congestion_minus: tuple[int, ...]
    search: dict = field(default_factory=dict)
    satisfied: bool | None = None
    evaluations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "defense": list(self.defense),
            "profiles": [list(p) for p in self.profiles],
            "attack_levels": [[list(a) for a in prof] for prof in self.attack_levels],
            "u0": self.u0,
            "attacker_utilities": self.attacker_utilities,
            "rmsd": self.rmsd,
            "congestion_plus": list(self.congestion_plus),
            "congestion_minus": list(self.congestion_minus),
            "search": self.search,
            "satisfied": self.satisfied,
            "evaluations": self.evaluations,
        }


def _defense_subsets(vulnerable, budget: int, exact: bool = False):
    sizes = [budget] if exact else range(budget + 1)
    pool = sorted(int(i) for i in vulnerable)
    for k in sizes:
        for combo in itertools.combinations(pool, k):
            yield combo


def evaluate_defense(
    specs,
    defense_indices,
    evaluator: ProfileEvaluator,
    keep_tensors: bool = False,
    max_profiles: int = 4_000_000,
) -> DefenseEvaluation:
    """Worst-case (highest defender loss) attacker PSNE under one defense."""
    tensors = build_game_tensors(specs, defense_indices, evaluator,
                                 max_profiles=max_profiles)
    psne = enumerate_psne(tensors)
    if not psne:
        return DefenseEvaluation(tuple(defense_indices), [], None, float("inf"),
                                 tensors if keep_tensors else None)
    u0s = [float(tensors.U0[p]) for p in psne]
    worst = int(np.argmax(u0s))
    return DefenseEvaluation(
        defense=tuple(defense_indices), psne=psne,
        worst_profile=psne[worst], worst_u0=u0s[worst],
        tensors=tensors if keep_tensors else None,
    )


def _threads() -> int:
    raw = os.environ.get("GRIDGAME_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def find_hierarchical_eq(
    budget: int,
    specs,
    evaluator: ProfileEvaluator,
    vulnerable,
    kappa0: float = 0.0,
    max_profiles: int = 4_000_000,
) -> EquilibriumReport:
    """Min-max defense: evaluate the worst-case attacker PSNE for every
    defense subset within budget and keep the defense minimizing that loss.
    Ties break toward fewer secured measurements, then lexicographic order.
    """
    defenses = list(_defense_subsets(vulnerable, budget))
    workers = _threads()

    def job(d):
        return evaluate_defense(specs, d, evaluator, max_profiles=max_profiles)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            evals = list(pool.map(job, defenses))
    else:
        evals = [job(d) for d in defenses]

    def total(ev: DefenseEvaluation) -> float:
        return ev.worst_u0 + kappa0 * len(ev.defense)

    best = min(evals, key=lambda ev: (total(ev), len(ev.defense), ev.defense))
    tensors = build_game_tensors(specs, best.defense, evaluator, max_profiles=max_profiles)
    return _report_for("stackelberg-he", best, tensors, specs, evaluator, kappa0,
                       evaluations=[
                           {"defense": list(ev.defense), "worst_u0": ev.worst_u0,
                            "n_psne": len(ev.psne)} for ev in evals
                       ])


def _report_for(method, ev: DefenseEvaluation, tensors: GameTensors, specs,
                evaluator, kappa0, search=None, satisfied=None, evaluations=None):
    profile = ev.worst_profile
    if profile is None:
        return EquilibriumReport(
            method=method, defense=ev.defense, profiles=[], attack_levels=[],
            u0=float("inf"), attacker_utilities=[], rmsd=float("nan"),
            congestion_plus=(), congestion_minus=(), search=search or {},
            satisfied=satisfied, evaluations=evaluations or [],
        )
    sets, r, _ = tensors.outcome_of(profile)
    payoffs = tensors.payoffs(profile)
    return EquilibriumReport(
        method=method,
        defense=ev.defense,
        profiles=[p for p in ev.psne],
        attack_levels=[[s.action_levels(a) for s, a in zip(specs, p)] for p in ev.psne],
        u0=ev.worst_u0 + kappa0 * len(ev.defense),
        attacker_utilities=payoffs,
        rmsd=r,
        congestion_plus=sets[0],
        congestion_minus=sets[1],
        search=search or {},
        satisfied=satisfied,
        evaluations=evaluations or [],
    )


def satisfaction_search(
    cfg: SatisfactionConfig,
    budget: int,
    specs,
    evaluator: ProfileEvaluator,
    vulnerable,
    learning: LearningConfig | None = None,
    kappa0: float = 0.0,
    max_profiles: int = 4_000_000,
) -> EquilibriumReport:
    """Limited-information defense: sample size-budget defenses uniformly,
    let the attackers learn their GNE, accept the first defense whose
    squared LMP deviation stays under the threshold.

    Without replacement (default) the search terminates after at most |A0|
    distinct trials; with replacement it reproduces the geometric-search
    statistics. Exhaustion is reported as a failed outcome carrying the
    best defense seen.
    """
    learning = learning or LearningConfig(seed=cfg.seed)
    actions = list(_defense_subsets(vulnerable, budget, exact=True))
    rng = np.random.default_rng(cfg.seed)
    if cfg.with_replacement:
        order = [actions[int(rng.integers(len(actions)))] for _ in range(cfg.max_trials)]
    else:
        perm = rng.permutation(len(actions))
        order = [actions[int(i)] for i in perm[:cfg.max_trials]]

    trials = 0
    best: tuple[float, tuple, tuple, GameTensors] | None = None
    for defense in order:
        trials += 1
        tensors = build_game_tensors(specs, defense, evaluator, max_profiles=max_profiles)
        try:
            profile, _, method = learn_gne(specs, tensors, learning,
                                           seed=cfg.seed + 104729 * trials)
        except RuntimeError:
            continue        # no equilibrium to respond with; defense unassessable
        _, r, _ = tensors.outcome_of(profile)
        n = evaluator.case.n_buses
        r0 = float(n * r ** 2)
        if best is None or r0 < best[0]:
            best = (r0, defense, profile, tensors)
        if r0 <= cfg.threshold:
            ev = DefenseEvaluation(tuple(defense), enumerate_psne(tensors),
                                   profile, float(tensors.U0[profile]))
            rep = _report_for("satisfaction", ev, tensors, specs, evaluator, kappa0,
                              search={"trials": trials, "r0": r0,
                                      "threshold": cfg.threshold,
                                      "with_replacement": cfg.with_replacement,
                                      "action_space": len(actions),
                                      "learned_by": method},
                              satisfied=True)
            rep.profiles = [profile]
            rep.attack_levels = [[s.action_levels(a) for s, a in zip(specs, profile)]]
            return rep
    if best is None:
        raise RuntimeError("satisfaction search could not assess any defense")
    r0, defense, profile, tensors = best
    ev = DefenseEvaluation(tuple(defense), [], profile, float(tensors.U0[profile]))
    rep = _report_for("satisfaction-failure", ev, tensors, specs, evaluator, kappa0,
                      search={"trials": trials, "r0": r0, "threshold": cfg.threshold,
                              "with_replacement": cfg.with_replacement,
                              "action_space": len(actions)},
                      satisfied=False)
    rep.profiles = [profile]
    rep.attack_levels = [[s.action_levels(a) for s, a in zip(specs, profile)]]
    return rep
