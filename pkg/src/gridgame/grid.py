"""Network cases, DC power-flow operators, and the linear measurement model.

Everything downstream (market clearing, state estimation, the games) works
off three immutable objects built here: ``GridCase``, ``ShiftFactors`` and
``MeasurementModel``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.stats import chi2


class CaseError(ValueError):
    """Raised when a case file fails to parse or violates an invariant."""


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    reactance: float
    limit: float


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float
    pmax: float
    price: float


@dataclass(frozen=True)
class GridCase:
    """Validated network and market inputs.

    Bus ids are 1..N; the declared reference direction of line l is
    from_bus -> to_bus. Loads, limits and generator bounds are in MW,
    reactances in p.u., offer prices in $/MWh.
    """

    name: str
    loads: np.ndarray          # length N, load D_i at bus i+1
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    reference_bus: int
    sigma: float               # measurement noise std, MW

    @property
    def n_buses(self) -> int:
        return len(self.loads)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    @property
    def total_load(self) -> float:
        return float(self.loads.sum())

    def gen_buses(self) -> np.ndarray:
        return np.array([g.bus for g in self.generators], dtype=int)

    def line_limits(self) -> np.ndarray:
        return np.array([ln.limit for ln in self.lines])

    def offer_prices(self) -> np.ndarray:
        return np.array([g.price for g in self.generators])

    def validate(self) -> None:
        n = self.n_buses
        if n < 2:
            raise CaseError("case needs at least two buses")
        if not (1 <= self.reference_bus <= n):
            raise CaseError(f"reference bus {self.reference_bus} out of range 1..{n}")
        if self.sigma < 0:
            raise CaseError("sigma must be >= 0")
        for k, ln in enumerate(self.lines):
            if not (1 <= ln.from_bus <= n and 1 <= ln.to_bus <= n):
                raise CaseError(f"line {k + 1}: endpoint out of range")
            if ln.from_bus == ln.to_bus:
                raise CaseError(f"line {k + 1}: self-loop")
            if ln.reactance <= 0:
                raise CaseError(f"line {k + 1}: reactance must be > 0, got {ln.reactance}")
            if ln.limit <= 0:
                raise CaseError(f"line {k + 1}: flow limit must be > 0, got {ln.limit}")
        for k, g in enumerate(self.generators):
            if not (1 <= g.bus <= n):
                raise CaseError(f"generator {k + 1}: bus out of range")
            if g.pmin > g.pmax:
                raise CaseError(f"generator {k + 1}: pmin {g.pmin} > pmax {g.pmax}")
        # connectivity via BFS on the line graph
        adj: list[list[int]] = [[] for _ in range(n)]
        for ln in self.lines:
            adj[ln.from_bus - 1].append(ln.to_bus - 1)
            adj[ln.to_bus - 1].append(ln.from_bus - 1)
        seen = np.zeros(n, dtype=bool)
        stack = [self.reference_bus - 1]
        seen[stack[0]] = True
        while stack:
            for v in adj[stack.pop()]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        if not seen.all():
            missing = int(np.flatnonzero(~seen)[0]) + 1
            raise CaseError(f"network is disconnected (bus {missing} unreachable from reference)")
        if sum(g.pmax for g in self.generators) < self.total_load:
            raise CaseError("case not servable: total generator capacity below total load")


def bundled_case_path(name: str = "ieee30") -> str:
    """Filesystem path of a case shipped inside the package."""
    return str(resources.files("gridgame.data").joinpath(f"{name}.case"))


def load_case(path: str) -> GridCase:
    """Load and validate a JSON case file.

    The file is UTF-8 JSON with keys ``buses``, ``lines``, ``generators``,
    ``reference_bus`` and ``sigma``. A bare case name (no slash, no dot)
    resolves to the bundled case of that name.
    """
    if "/" not in path and "." not in path:
        path = bundled_case_path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise CaseError(f"cannot read case file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc

    def need(key):
        if key not in raw:
            raise CaseError(f"{path}: missing top-level key '{key}'")
        return raw[key]

    buses = need("buses")
    ids = [b.get("id") for b in buses]
    n = len(buses)
    if sorted(ids) != list(range(1, n + 1)):
        raise CaseError(f"{path}: bus ids must be exactly 1..{n}")
    loads = np.zeros(n)
    for b in buses:
        loads[b["id"] - 1] = float(b.get("load", 0.0))
    if (loads < 0).any():
        raise CaseError(f"{path}: negative load")

    try:
        lines = tuple(
            Line(int(ln["from"]), int(ln["to"]), float(ln["reactance"]), float(ln["limit"]))
            for ln in need("lines")
        )
        gens = tuple(
            Generator(int(g["bus"]), float(g["pmin"]), float(g["pmax"]), float(g["price"]))
            for g in need("generators")
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseError(f"{path}: malformed line/generator record: {exc}") from exc

    case = GridCase(
        name=str(raw.get("name", path)),
        loads=loads,
        lines=lines,
        generators=gens,
        reference_bus=int(need("reference_bus")),
        sigma=float(need("sigma")),
    )
    case.loads.setflags(write=False)
    case.validate()
    return case


@dataclass(frozen=True)
class ShiftFactors:
    """Line-flow sensitivities X (L x N) to bus injections, reference column zero."""

    matrix: np.ndarray

    def flows(self, injections: np.ndarray) -> np.ndarray:
        """DC flows of a balanced net-injection vector (length N, MW)."""
        return self.matrix @ injections


def _susceptance_matrices(case: GridCase):
    """Reduced nodal susceptance B' ((N-1)x(N-1)), full nodal B (NxN), and
    the branch flow matrix Bf (L x N) with F = Bf @ theta."""
    n, L = case.n_buses, case.n_lines
    b = np.array([1.0 / ln.reactance for ln in case.lines])
    A = np.zeros((L, n))                       # incidence, +1 at from, -1 at to
    for k, ln in enumerate(case.lines):
        A[k, ln.from_bus - 1] = 1.0
        A[k, ln.to_bus - 1] = -1.0
    Bf = A * b[:, None]
    B = A.T @ Bf                               # nodal susceptance
    keep = [i for i in range(n) if i != case.reference_bus - 1]
    return B[np.ix_(keep, keep)], B, Bf, keep


def build_shift_factors(case: GridCase) -> ShiftFactors:
    """Generation shift factor matrix over all buses, reference column zero.

    Row l gives the MW change of line-l flow per MW injected at each bus
    (withdrawn at the reference bus); X @ (P - D) reproduces the DC flow of
    any balanced injection vector.
    """
    Bred, _, Bf, keep = _susceptance_matrices(case)
    try:
        inv = np.linalg.inv(Bred)
    except np.linalg.LinAlgError as exc:
        raise CaseError("singular reduced susceptance matrix (disconnected network?)") from exc
    X = np.zeros((case.n_lines, case.n_buses))
    X[:, keep] = Bf[:, keep] @ inv
    X.setflags(write=False)
    return ShiftFactors(matrix=X)


def dc_flow_oracle(case: GridCase, injections: np.ndarray) -> np.ndarray:
    """Independent angle-based DC power-flow solve, for cross-checking X.

    Solves B' theta = P_nonref directly and maps angles to flows; shares no
    code path with the shift-factor product.
    """
    Bred, _, Bf, keep = _susceptance_matrices(case)
    theta = np.zeros(case.n_buses)
    theta[keep] = np.linalg.solve(Bred, injections[keep])
    return Bf @ theta


@dataclass(frozen=True)
class MeasurementModel:
    """Precomputed linear operators of the DC state estimator.

    Measurements are ordered injections (bus 1..N) then line flows
    (line 1..L) in their declared reference directions, so n = N + L.
    The state is the N-1 non-reference bus angles.
    """

    H: np.ndarray              # n x (N-1) measurement Jacobian
    H_F: np.ndarray            # L x (N-1) flow extraction
    R: np.ndarray              # n x n error covariance
    M: np.ndarray              # (N-1) x n  gain-inverse, theta_hat = M z
    S: np.ndarray              # n x n hat matrix
    W: np.ndarray              # n x n residual matrix I - S
    S_F: np.ndarray            # L x (N-1+...) flow sensitivity H_F M  (L x n)
    tau: float                 # residual-norm detection threshold
    sigma: float
    confidence: float
    n_buses: int
    n_lines: int
    kept: tuple[int, ...] = field(default=None)  # measurement indices in use

    @property
    def n_measurements(self) -> int:
        return self.H.shape[0]

    @property
    def n_states(self) -> int:
        return self.H.shape[1]

    @property
    def dof(self) -> int:
        return self.n_measurements - self.n_states

    def flow_meter_index(self, line: int) -> int:
        """Global measurement index of the flow meter on 1-based line number."""
        if not (1 <= line <= self.n_lines):
            raise ValueError(f"line {line} out of range 1..{self.n_lines}")
        return self.n_buses + line - 1

    def injection_meter_index(self, bus: int) -> int:
        if not (1 <= bus <= self.n_buses):
            raise ValueError(f"bus {bus} out of range 1..{self.n_buses}")
        return bus - 1

    def reduce(self, remove: set[int]) -> "MeasurementModel":
        """Model with the given (full-index) measurements removed.

        Raises ``ObservabilityError`` if the remaining rows no longer span
        the state space.
        """
        keep = [i for i in self.kept if i not in remove]
        return _assemble_model(
            self._full_H(), keep, self.sigma, self.confidence, self.n_buses, self.n_lines, self.H_F
        )

    def _full_H(self) -> np.ndarray:
        full = np.zeros((self.n_buses + self.n_lines, self.n_states))
        full[list(self.kept), :] = self.H
        return full


class ObservabilityError(ValueError):
    """Measurement set no longer determines the state."""


def _assemble_model(H_full, kept, sigma, confidence, n_buses, n_lines, H_F) -> MeasurementModel:
    H = H_full[kept, :]
    n, n_states = H.shape
    if np.linalg.matrix_rank(H) < n_states:
        raise ObservabilityError("rank-deficient Jacobian: system unobservable")
    R = sigma ** 2 * np.eye(n) if sigma > 0 else np.eye(n)
    # With R = c*I the weights cancel: M = (H^T H)^{-1} H^T.
    G = H.T @ H
    M = np.linalg.solve(G, H.T)
    S = H @ M
    W = np.eye(n) - S
    dof = n - n_states
    tau = sigma * float(np.sqrt(chi2.ppf(confidence, dof))) if dof > 0 else 0.0
    model = MeasurementModel(
        H=H, H_F=H_F, R=R, M=M, S=S, W=W, S_F=H_F @ M,
        tau=tau, sigma=sigma, confidence=confidence,
        n_buses=n_buses, n_lines=n_lines, kept=tuple(kept),
    )
    for arr in (model.H, model.R, model.M, model.S, model.W, model.S_F):
        arr.setflags(write=False)
    return model


def build_measurement_model(
    case: GridCase, confidence: float = 0.975, sigma: float | None = None
) -> MeasurementModel:
    """Measurement model with one injection meter per bus and one flow meter
    per line (in the declared reference direction).

    The detection threshold is the residual-norm form of the chi-square test
    at the given confidence: tau = sigma * sqrt(chi2_quantile(confidence, dof))
    with dof = n - (N-1), so that ||r||_2 <= tau is equivalent to the classical
    test on the weighted squared residuals.
    """
    if not (0.0 < confidence < 1.0):
        raise ValueError("confidence must be in (0, 1)")
    if sigma is None:
        sigma = case.sigma
    _, B, Bf, keep = _susceptance_matrices(case)
    H_inj = B[:, keep]                       # injection meters: P = B theta
    H_flow = Bf[:, keep]                     # flow meters: F = Bf theta
    H_full = np.vstack([H_inj, H_flow])
    H_F = H_flow.copy()
    H_F.setflags(write=False)
    n_total = case.n_buses + case.n_lines
    return _assemble_model(
        H_full, list(range(n_total)), sigma, confidence, case.n_buses, case.n_lines, H_F
    )
