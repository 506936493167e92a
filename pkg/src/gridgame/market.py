"""Day-ahead and ex-post real-time market clearing as linear programs.

LMPs come out of the dual variables: the energy-balance multiplier plus
congestion terms weighted by shift factors. Dispatch is taken from the
plain LP; duals are read from a second "pricing" solve in which physical
generator limits are relaxed by a tiny epsilon, which deterministically
assigns degenerate multipliers to line constraints instead of coincident
generator bounds (the textbook KKT convention).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .grid import GridCase, ShiftFactors

# Ex-post redispatch bandwidth (MW), the usual solution-tolerance band.
DELTA_P_MIN = -2.0
DELTA_P_MAX = 0.1

# Bound relaxation used in pricing runs.
_PRICE_EPS = 1e-6

# A constraint is considered binding within this slack (MW).
_BIND_TOL = 1e-6


class MarketError(RuntimeError):
    pass


class LpInfeasibleError(MarketError):
    pass


class LpUnboundedError(MarketError):
    pass


@dataclass(frozen=True)
class LinearProgram:
    """min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lo <= x <= hi."""

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    bounds: list | None = None          # list of (lo, hi); None = free

    def __post_init__(self):
        for name in ("c", "A_ub", "b_ub", "A_eq", "b_eq"):
            v = getattr(self, name)
            if v is not None and not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite coefficients in {name}")
        n = len(self.c)
        if self.A_ub is not None and np.shape(self.A_ub)[1] != n:
            raise ValueError("A_ub column count != len(c)")
        if self.A_eq is not None and np.shape(self.A_eq)[1] != n:
            raise ValueError("A_eq column count != len(c)")


@dataclass(frozen=True)
class LpSolution:
    x: np.ndarray
    objective: float
    eq_duals: np.ndarray        # marginal of objective w.r.t. b_eq
    ub_duals: np.ndarray        # marginal w.r.t. b_ub (<= 0 for minimization)
    lower_duals: np.ndarray
    upper_duals: np.ndarray
    status: str = "optimal"


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve an LP with HiGHS and return primal plus all constraint duals.

    Raises LpInfeasibleError / LpUnboundedError; on success the result is
    checked for primal feasibility (1e-7) and strong duality
    (gap < 1e-6 * (1 + |objective|)).
    """
    res = linprog(
        lp.c, A_ub=lp.A_ub, b_ub=lp.b_ub, A_eq=lp.A_eq, b_eq=lp.b_eq,
        bounds=lp.bounds if lp.bounds is not None else [(None, None)] * len(lp.c),
        method="highs",
    )
    if res.status == 2:
        raise LpInfeasibleError("LP infeasible")
    if res.status == 3:
        raise LpUnboundedError("LP unbounded")
    if res.status != 0:
        raise MarketError(f"LP solver failure: {res.message}")

    x = res.x
    if lp.A_ub is not None and len(lp.b_ub):
        viol = float(np.max(lp.A_ub @ x - lp.b_ub, initial=0.0))
        if viol > 1e-7:
            raise MarketError(f"primal infeasibility {viol:.2e} exceeds tolerance")
    if lp.A_eq is not None and len(lp.b_eq):
        viol = float(np.max(np.abs(lp.A_eq @ x - lp.b_eq), initial=0.0))
        if viol > 1e-7:
            raise MarketError(f"equality violation {viol:.2e} exceeds tolerance")

    eq_d = res.eqlin.marginals if lp.A_eq is not None else np.zeros(0)
    ub_d = res.ineqlin.marginals if lp.A_ub is not None else np.zeros(0)
    lo_d = res.lower.marginals
    hi_d = res.upper.marginals

    # strong duality: dual objective from marginals must match the primal
    dual_obj = 0.0
    if lp.A_eq is not None and len(lp.b_eq):
        dual_obj += float(lp.b_eq @ eq_d)
    if lp.A_ub is not None and len(lp.b_ub):
        dual_obj += float(lp.b_ub @ ub_d)
    bounds = lp.bounds if lp.bounds is not None else [(None, None)] * len(lp.c)
    for j, (lo, hi) in enumerate(bounds):
        if lo is not None and lo_d[j] != 0.0:
            dual_obj += lo * lo_d[j]
        if hi is not None and hi_d[j] != 0.0:
            dual_obj += hi * hi_d[j]
    gap = abs(float(res.fun) - dual_obj)
    if gap > 1e-6 * (1.0 + abs(float(res.fun))):
        raise MarketError(f"strong duality gap {gap:.2e} exceeds tolerance")

    return LpSolution(
        x=x, objective=float(res.fun), eq_duals=np.asarray(eq_d),
        ub_duals=np.asarray(ub_d), lower_duals=np.asarray(lo_d),
        upper_duals=np.asarray(hi_d),
    )


@dataclass(frozen=True)
class MarketSolution:
    """Cleared market with its dual decomposition.

    For the day-ahead run ``dispatch`` is generator output P (MW) and the
    line duals cover every line; for the ex-post run ``dispatch`` is the
    increment delta-P and duals are nonzero only on the congested sets the
    run was given.
    """

    dispatch: np.ndarray
    lambda0: float
    lam_plus: np.ndarray        # length L, >= 0
    lam_minus: np.ndarray       # length L, >= 0
    lmp: np.ndarray             # length N
    congestion_plus: tuple[int, ...]    # 1-based line numbers
    congestion_minus: tuple[int, ...]
    flows: np.ndarray           # physical line flows of the dispatch (MW)
    objective: float
    degenerate: bool = False
    kind: str = "da"


def compute_lmps(lambda0, lam_plus, lam_minus, X: ShiftFactors, line_set=None) -> np.ndarray:
    """LMP vector: lambda0 + sum over lines of (lam_minus - lam_plus) * chi.

    ``line_set`` restricts the congestion sum to 1-based line numbers
    (None = all lines).
    """
    L, N = X.matrix.shape
    w = np.asarray(lam_minus, dtype=float) - np.asarray(lam_plus, dtype=float)
    if line_set is not None:
        mask = np.zeros(L)
        for l in line_set:
            mask[l - 1] = 1.0
        w = w * mask
    return lambda0 + w @ X.matrix


def _gen_shift_columns(case: GridCase, X: ShiftFactors) -> np.ndarray:
    """L x G matrix of shift factors at the generator buses."""
    return X.matrix[:, case.gen_buses() - 1]


def solve_da_dcopf(case: GridCase, X: ShiftFactors) -> MarketSolution:
    """Day-ahead DCOPF: min offer cost s.t. balance, generator limits and
    line limits in both directions on every line."""
    G = case.n_generators
    Xg = _gen_shift_columns(case, X)
    base = X.matrix @ case.loads            # flow contribution of the loads
    limits = case.line_limits()
    c = case.offer_prices()
    A_ub = np.vstack([Xg, -Xg])
    b_ub = np.concatenate([limits + base, limits - base])
    A_eq = np.ones((1, G))
    b_eq = np.array([case.total_load])
    bounds = [(g.pmin, g.pmax) for g in case.generators]

    try:
        primal = solve_lp(LinearProgram(c, A_ub, b_ub, A_eq, b_eq, bounds))
    except LpInfeasibleError:
        raise LpInfeasibleError("DA DCOPF infeasible: load exceeds deliverable capacity")
    pricing = solve_lp(LinearProgram(
        c, A_ub, b_ub, A_eq, b_eq,
        [(g.pmin - _PRICE_EPS, g.pmax + _PRICE_EPS) for g in case.generators],
    ))

    L = case.n_lines
    lam_plus = -pricing.ub_duals[:L]
    lam_minus = -pricing.ub_duals[L:]
    lam_plus[np.abs(lam_plus) < 1e-12] = 0.0
    lam_minus[np.abs(lam_minus) < 1e-12] = 0.0
    lambda0 = float(pricing.eq_duals[0])
    lmp = compute_lmps(lambda0, lam_plus, lam_minus, X)

    P = primal.x
    flows = X.flows(_injections(case, P))
    cp = tuple(int(l + 1) for l in np.flatnonzero(flows >= limits - _BIND_TOL))
    cm = tuple(int(l + 1) for l in np.flatnonzero(flows <= -limits + _BIND_TOL))
    degenerate = _dual_degenerate(P, A_ub, b_ub, 1, bounds)
    return MarketSolution(
        dispatch=P, lambda0=lambda0, lam_plus=lam_plus, lam_minus=lam_minus,
        lmp=lmp, congestion_plus=cp, congestion_minus=cm, flows=flows,
        objective=primal.objective, degenerate=degenerate, kind="da",
    )


def _dual_degenerate(x, A_ub, b_ub, n_eq, bounds) -> bool:
    """Primal degeneracy test: strictly more binding constraints than
    variables implies the dual solution is not unique."""
    binding = n_eq
    if A_ub is not None and len(b_ub):
        binding += int(np.sum(np.abs(A_ub @ x - b_ub) <= _BIND_TOL))
    for j, (lo, hi) in enumerate(bounds):
        if lo is not None and abs(x[j] - lo) <= _BIND_TOL:
            binding += 1
        elif hi is not None and abs(x[j] - hi) <= _BIND_TOL:
            binding += 1
    return binding > len(x)


def _injections(case: GridCase, dispatch: np.ndarray) -> np.ndarray:
    inj = -case.loads.copy()
    for g, p in zip(case.generators, dispatch):
        inj[g.bus - 1] += p
    return inj


def solve_expost_dcopf(
    case: GridCase,
    X: ShiftFactors,
    congestion_plus,
    congestion_minus,
    da: MarketSolution,
) -> MarketSolution:
    """Ex-post incremental DCOPF over the estimator's congestion sets.

    Flow-direction constraints are imposed only on the given congested
    lines; increments live in the solution-tolerance band intersected with
    the physical generator range left by the DA dispatch. RT offers equal
    DA offers (linear offer curves).
    """
    cp = tuple(sorted(int(l) for l in congestion_plus))
    cm = tuple(sorted(int(l) for l in congestion_minus))
    G = case.n_generators
    Xg = _gen_shift_columns(case, X)
    c = case.offer_prices()
    P0 = da.dispatch

    rows = []
    for l in cp:
        rows.append(Xg[l - 1])
    for l in cm:
        rows.append(-Xg[l - 1])
    A_ub = np.array(rows) if rows else None
    b_ub = np.zeros(len(rows)) if rows else None
    A_eq = np.ones((1, G))
    b_eq = np.array([0.0])

    def band(eps):
        out = []
        for g, p in zip(case.generators, P0):
            lo = max(DELTA_P_MIN, (g.pmin - eps) - p)
            hi = min(DELTA_P_MAX, (g.pmax + eps) - p)
            out.append((lo, hi))
        return out

    try:
        primal = solve_lp(LinearProgram(c, A_ub, b_ub, A_eq, b_eq, band(0.0)))
    except LpInfeasibleError:
        raise LpInfeasibleError("ex-post LP infeasible: inconsistent congestion sets")
    pricing = solve_lp(LinearProgram(c, A_ub, b_ub, A_eq, b_eq, band(_PRICE_EPS)))

    L = case.n_lines
    lam_plus = np.zeros(L)
    lam_minus = np.zeros(L)
    k = 0
    for l in cp:
        lam_plus[l - 1] = max(0.0, -float(pricing.ub_duals[k]))
        k += 1
    for l in cm:
        lam_minus[l - 1] = max(0.0, -float(pricing.ub_duals[k]))
        k += 1
    lambda0 = float(pricing.eq_duals[0])
    lmp = compute_lmps(lambda0, lam_plus, lam_minus, X, line_set=cp + cm)

    dP = primal.x
    degenerate = _dual_degenerate(dP, A_ub, b_ub, 1, band(0.0))
    return MarketSolution(
        dispatch=dP, lambda0=lambda0, lam_plus=lam_plus, lam_minus=lam_minus,
        lmp=lmp, congestion_plus=cp, congestion_minus=cm,
        flows=X.flows(_injections(case, P0 + dP)),
        objective=primal.objective, degenerate=degenerate, kind="rt",
    )


def lp_to_text(lp: LinearProgram, name: str = "lp") -> str:
    """Plain-text tableau dump for debugging."""
    lines = [f"# {name}", "minimize"]
    lines.append("  " + " + ".join(f"{v:.6g}*x{j}" for j, v in enumerate(lp.c)))
    if lp.A_ub is not None:
        lines.append("subject to (<=)")
        for i, row in enumerate(np.atleast_2d(lp.A_ub)):
            terms = " + ".join(f"{v:.6g}*x{j}" for j, v in enumerate(row) if v != 0)
            lines.append(f"  r{i}: {terms} <= {lp.b_ub[i]:.6g}")
    if lp.A_eq is not None:
        lines.append("subject to (=)")
        for i, row in enumerate(np.atleast_2d(lp.A_eq)):
            terms = " + ".join(f"{v:.6g}*x{j}" for j, v in enumerate(row) if v != 0)
            lines.append(f"  e{i}: {terms} = {lp.b_eq[i]:.6g}")
    if lp.bounds is not None:
        lines.append("bounds")
        for j, (lo, hi) in enumerate(lp.bounds):
            lines.append(f"  {lo} <= x{j} <= {hi}")
    return "\n".join(lines) + "\n"
