"""DC state estimation under additive data injection.

Measurement vectors are plain numpy arrays of length N + L (injections
then flows, in case order); reduced models carry the surviving indices so
full-length vectors can always be passed in and sliced consistently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridCase, MeasurementModel, ObservabilityError, ShiftFactors

CONGESTION_TOL = 1e-6   # MW slack at which an estimated flow counts as at-limit
MAX_REMOVALS = 3        # default cap on largest-normalized-residual removals


@dataclass(frozen=True)
class AttackVector:
    """Additive injection owned by one attacker; nonzero only on its
    attackable indices."""

    owner: int
    vector: np.ndarray      # full length N + L

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.vector)

    @staticmethod
    def from_levels(owner: int, indices, levels, n_measurements: int) -> "AttackVector":
        v = np.zeros(n_measurements)
        for i, a in zip(indices, levels):
            v[i] = a
        v.setflags(write=False)
        return AttackVector(owner=owner, vector=v)


@dataclass(frozen=True)
class EstimationResult:
    theta: np.ndarray
    z_hat: np.ndarray            # fitted measurements, on kept indices
    residuals: np.ndarray        # z - z_hat, on kept indices
    residual_norm: float
    flows: np.ndarray            # estimated line flows H_F theta (all L lines)
    detected: bool
    outliers: tuple[int, ...]    # full measurement indices removed as bad data
    measurement_indices: tuple[int, ...]


@dataclass(frozen=True)
class FlowStats:
    mean: np.ndarray
    variance: np.ndarray


def true_injections(case: GridCase, dispatch: np.ndarray) -> np.ndarray:
    inj = -case.loads.copy()
    for g, p in zip(case.generators, dispatch):
        inj[g.bus - 1] += p
    return inj


def simulate_measurements(
    case: GridCase,
    X: ShiftFactors,
    true_dispatch: np.ndarray,
    rng_seed: int | None = None,
    sigma: float | None = None,
) -> np.ndarray:
    """Metered injections and flows of a dispatch, plus seeded Gaussian noise.

    sigma=0 (or None with a zero-sigma case) gives the exact noiseless
    vector; identical seeds give identical draws.
    """
    inj = true_injections(case, true_dispatch)
    if abs(inj.sum()) > 1e-6:
        raise ValueError(f"unbalanced injections (sum {inj.sum():.3g} MW)")
    z = np.concatenate([inj, X.flows(inj)])
    if sigma is None:
        sigma = case.sigma
    if sigma > 0:
        rng = np.random.default_rng(rng_seed)
        z = z + rng.normal(0.0, sigma, size=z.shape)
    return z


def apply_attacks(z: np.ndarray, attacks, defended_indices=()) -> np.ndarray:
    """Measurements after all attacks, with components on defended indices
    blocked (zeroed) before they reach the estimator."""
    out = z.astype(float).copy()
    blocked = set(int(i) for i in defended_indices)
    for att in attacks:
        v = att.vector
        if blocked:
            v = v.copy()
            for i in blocked:
                v[i] = 0.0
        out += v
    return out


def aggregate_attack(attacks, defended_indices=(), n: int | None = None) -> np.ndarray:
    """Sum of attack vectors after defense blocking."""
    if n is None:
        n = len(attacks[0].vector)
    total = np.zeros(n)
    for att in attacks:
        total += att.vector
    for i in defended_indices:
        total[int(i)] = 0.0
    # blocking is per-component, so zeroing the sum equals summing the blocked vectors
    return total


def estimate(z: np.ndarray, model: MeasurementModel) -> EstimationResult:
    """WLS state estimate with fitted values, residuals and flow estimates.

    ``z`` is full length; models with removed measurements pick out their
    surviving rows.
    """
    zk = np.asarray(z, dtype=float)[list(model.kept)]
    theta = model.M @ zk
    z_hat = model.S @ zk
    r = zk - z_hat
    norm = float(np.linalg.norm(r))
    return EstimationResult(
        theta=theta,
        z_hat=z_hat,
        residuals=r,
        residual_norm=norm,
        flows=model.H_F @ theta,
        detected=norm > model.tau,
        outliers=(),
        measurement_indices=model.kept,
    )


def residual_shift(attacks, model: MeasurementModel) -> np.ndarray:
    """Residual change W . sum of attack vectors (exact, by linearity)."""
    total = aggregate_attack(attacks, n=model.n_buses + model.n_lines)
    return model.W @ total[list(model.kept)]


def detect_and_identify(
    result: EstimationResult,
    z: np.ndarray,
    model: MeasurementModel,
    max_removals: int = MAX_REMOVALS,
) -> EstimationResult:
    """Chi-square detection with largest-normalized-residual identification.

    While the residual norm exceeds the (dof-adjusted) threshold, the
    measurement with the largest |r_i| / sqrt(W_ii R_ii) is removed and the
    reduced model re-estimated, up to ``max_removals`` times or until a
    further removal would lose observability. Removed indices are reported
    in ``outliers``.
    """
    removed: list[int] = []
    current = result
    while current.detected and len(removed) < max_removals:
        Wd = np.diag(model.W)
        Rd = np.diag(model.R)
        denom = np.sqrt(np.maximum(Wd * Rd, 0.0))
        usable = denom > 1e-9       # zero-residual-variance meters are critical
        if not usable.any():
            break
        norm_res = np.zeros_like(denom)
        norm_res[usable] = np.abs(current.residuals[usable]) / denom[usable]
        local = int(np.argmax(norm_res))
        full_index = model.kept[local]
        try:
            reduced = model.reduce({full_index})
        except ObservabilityError:
            break
        model = reduced
        removed.append(full_index)
        current = estimate(z, model)
    if removed:
        current = EstimationResult(
            theta=current.theta, z_hat=current.z_hat, residuals=current.residuals,
            residual_norm=current.residual_norm, flows=current.flows,
            detected=current.detected, outliers=tuple(removed),
            measurement_indices=current.measurement_indices,
        )
    return current


def attacked_flow_stats(true_flows: np.ndarray, attacks, model: MeasurementModel) -> FlowStats:
    """Mean and per-line variance of the estimated flows under attack.

    The mean shifts by S_F times the aggregate attack; the variance is the
    diagonal of S_F R S_F^T and does not depend on the attacks.
    """
    total = aggregate_attack(attacks, n=model.n_buses + model.n_lines)
    mean = np.asarray(true_flows, dtype=float) + model.S_F @ total[list(model.kept)]
    variance = np.einsum("ij,jk,ik->i", model.S_F, model.R, model.S_F)
    return FlowStats(mean=mean, variance=variance)


def congestion_sets(flow_estimate: np.ndarray, case: GridCase, tol: float = CONGESTION_TOL):
    """Congested-line sets from estimated flows: at or beyond the limit in
    the reference (C+) or opposite (C-) direction. 1-based line numbers."""
    limits = case.line_limits()
    f = np.asarray(flow_estimate, dtype=float)
    cp = tuple(int(l + 1) for l in np.flatnonzero(f >= limits - tol))
    cm = tuple(int(l + 1) for l in np.flatnonzero(f <= -limits + tol))
    return cp, cm
