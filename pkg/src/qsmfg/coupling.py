"""Fixed-point drivers coupling the HJB, Fokker-Planck, and measure equations.

Two outer strategies solve the discounted system:

  field iteration ("gamma")    Picard on the pair (u, m): each pass first
      solves the joint-measure fixed point per time slice from the previous
      gradients and densities, then the per-slice HJB problems, then one
      Fokker-Planck evolution with the optimal drifts.  Requires an
      instant-context model.

  measure iteration ("psi")    Picard on the joint-measure trajectory alone:
      each pass solves the per-slice HJB problems with the trajectory frozen
      (memory models aggregate the past trajectory), evolves the density, and
      pushes it forward through the optimal policies.  Works for instant and
      history models and needs no inner contraction.

The ergodic system is solved by driving the discounted solver through a
geometric discount sequence and extracting the normalized value functions and
per-slice cost estimates; the limit is cross-checked against direct ergodic
solves.

Both strategies finish with a consistency pass that re-solves each slice and
measures, rather than assumes, the per-slice residuals of all three
equations; the stored joint measure is always an exact pushforward of the
stored density through the stored policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .fp import fp_evolve
from .grid import Grid, GridField, gradient_central, laplacian
from .hjb import equation_residual, solve_discounted, solve_ergodic
from .measure import (
    ControlField,
    DensityField,
    JointMeasure,
    pushforward,
    wasserstein1_joint,
    wasserstein1_state,
)
from .model import (
    HistoryContext,
    InstantContext,
    ModelSpec,
    MuContext,
    drift_field,
    policy_field,
)

__all__ = [
    "CouplingConfig",
    "MuFixedPointResult",
    "TrajectorySolution",
    "solve_joint_measure",
    "solve_field_iteration",
    "solve_measure_iteration",
    "solve_vanishing_discount",
    "solve_system",
    "regularity_report",
    "blend_policies",
]

RATE_FLOOR = 1e-8  # increments below this are too small for reliable ratios


@dataclass(frozen=True)
class CouplingConfig:
    """Tolerances, time grid, and strategy knobs for the coupled solvers."""

    T: float
    dt: float
    rho: float = 1.0
    outer_tol: float = 1e-8
    max_outer: int = 40
    damping: float = 0.5  # Picard damping on policies, in (0, 1]
    inner_tol: float = 1e-9
    inner_max_iter: int = 300
    hjb_tol: float = 1e-11
    hjb_max_iter: int = 80
    strategy: str = "gamma"
    rho_sequence: tuple[float, ...] = ()
    ergodic_tol: float = 1e-4
    full_sequence: bool = False

    def __post_init__(self) -> None:
        if self.T <= 0 or self.dt <= 0:
            raise ValueError("T and dt must be positive")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        for name in ("outer_tol", "inner_tol", "hjb_tol", "ergodic_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.strategy not in ("gamma", "psi"):
            raise ValueError(f"strategy must be 'gamma' or 'psi', got {self.strategy!r}")

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"T={self.T} is not a multiple of dt={self.dt}")
        return n

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class MuFixedPointResult:
    """Outcome of the per-slice joint-measure fixed point."""

    mu: JointMeasure
    policy: ControlField
    iterations: int
    converged: bool
    rate: Optional[float]  # max usable per-step contraction ratio
    increments: tuple[float, ...]
    damped: bool = False


@dataclass(frozen=True)
class TrajectorySolution:
    """Time-indexed solution tuple with convergence log and measured residuals."""

    times: np.ndarray
    u: tuple[GridField, ...]
    m: tuple[DensityField, ...]
    mu: tuple[JointMeasure, ...]
    policy: tuple[ControlField, ...]
    lam: Optional[np.ndarray] = None  # per-slice ergodic cost, ergodic runs only
    drifts: tuple = ()
    converged: bool = True
    outer_errors: tuple = ()  # rows (iteration, total, component...) per pass
    hjb_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_slices(self) -> int:
        return len(self.times)

    def du(self, j: int) -> tuple[GridField, ...]:
        return gradient_central(self.u[j])


def blend_policies(old: ControlField, new: ControlField, weight: float, control=None) -> ControlField:
    """Convex combination of two policies; stays inside convex control sets."""
    values = (1.0 - weight) * old.values + weight * new.values
    if control is not None:
        values = control.project(values)
    return ControlField(old.grid, values)


def _zero_policy(spec: ModelSpec, grid: Grid) -> ControlField:
    a0 = spec.control.zero_control()
    return ControlField(grid, np.broadcast_to(a0, grid.shape + (spec.control.k,)).copy())


def solve_joint_measure(
    m: DensityField,
    du: Sequence[GridField],
    spec: ModelSpec,
    tol: float = 1e-9,
    max_iter: int = 300,
    t: float | None = None,
    history: tuple[Sequence[float], Sequence[JointMeasure]] | None = None,
    damping: float = 0.5,
) -> MuFixedPointResult:
    """Picard iteration for mu = pushforward(m, alpha*(., du; mu)).

    Starts from the pushforward of m through the policy computed at the
    reference measure (m times the zero control), so runs are reproducible.
    The returned measure is exactly the pushforward of m through the returned
    policy, and its fixed-point residual is at most the contraction factor
    times tol.  When the measured ratio reaches one the iteration restarts
    with damped policy updates and a ten-fold budget; failure after that is
    reported in the result, not raised.
    """
    grid = m.grid

    if spec.kind == "instant":
        ctx_of = InstantContext
    else:
        if history is None or t is None:
            raise ValueError("history models need t and the trajectory prefix")
        h_times, h_measures = history
        prefix = list(h_measures)

        def ctx_of(mu: JointMeasure) -> MuContext:
            return HistoryContext(t, h_times, prefix[:-1] + [mu])

    nu_hat = pushforward(m, _zero_policy(spec, grid))
    policy = policy_field(spec, grid, du, ctx_of(nu_hat))
    mu_prev = pushforward(m, policy)

    increments: list[float] = []
    ratios: list[float] = []
    for it in range(1, max_iter + 1):
        policy = policy_field(spec, grid, du, ctx_of(mu_prev))
        mu_next = pushforward(m, policy)
        d = wasserstein1_joint(mu_next, mu_prev)
        if increments and increments[-1] >= RATE_FLOOR:
            ratios.append(d / increments[-1])
        increments.append(d)
        mu_prev = mu_next
        if d <= tol:
            return MuFixedPointResult(
                mu=mu_next,
                policy=policy,
                iterations=it,
                converged=True,
                rate=max(ratios) if ratios else None,
                increments=tuple(increments),
            )
    rate = max(ratios) if ratios else None
    if rate is None or rate < 1.0:
        return MuFixedPointResult(
            mu=mu_prev, policy=policy, iterations=max_iter, converged=False,
            rate=rate, increments=tuple(increments),
        )
    # non-contractive regime: damped updates with a larger budget
    for it in range(1, 10 * max_iter + 1):
        target = policy_field(spec, grid, du, ctx_of(mu_prev))
        policy = blend_policies(policy, target, damping, spec.control)
        mu_next = pushforward(m, policy)
        d = wasserstein1_joint(mu_next, mu_prev)
        increments.append(d)
        mu_prev = mu_next
        if d <= tol:
            return MuFixedPointResult(
                mu=mu_next, policy=policy, iterations=max_iter + it, converged=True,
                rate=rate, increments=tuple(increments), damped=True,
            )
    return MuFixedPointResult(
        mu=mu_prev, policy=policy, iterations=11 * max_iter, converged=False,
        rate=rate, increments=tuple(increments), damped=True,
    )


def _slice_context(spec: ModelSpec, times: np.ndarray, mu_traj: Sequence[JointMeasure], j: int) -> MuContext:
    if spec.kind == "instant":
        return InstantContext(mu_traj[j])
    return HistoryContext(times[j], times[: j + 1], mu_traj[: j + 1])


def _du_gap(du_a: Sequence[GridField], du_b: Sequence[GridField]) -> float:
    return max(float(np.abs(a.values - b.values).max()) for a, b in zip(du_a, du_b))


def solve_field_iteration(
    spec: ModelSpec,
    m0: DensityField,
    config: CouplingConfig,
    initial: Optional[tuple[Sequence[GridField], Sequence[DensityField]]] = None,
) -> TrajectorySolution:
    """Outer Picard iteration on (u, m) for the discounted system.

    Per pass and per time slice: joint-measure fixed point from the previous
    gradients and densities, discounted HJB solve, then one Fokker-Planck
    evolution driven by the (optionally damped) optimal policies.  The outer
    error sums the gradient sup-distance and the state W1 distance per slice.
    """
    if spec.kind != "instant":
        raise ValueError("field iteration requires an instant-context model")
    grid = m0.grid
    times = config.times()
    n_slices = config.n_steps + 1

    if initial is None:
        u_list = [GridField.zeros(grid) for _ in range(n_slices)]
        m_list: list[DensityField] = [m0] * n_slices
    else:
        u_init, m_init = initial
        u_list = list(u_init)
        m_list = list(m_init)
    du_list = [gradient_central(u) for u in u_list]

    policy_drift_prev: Optional[list[ControlField]] = None
    outer_log: list[tuple] = []
    rates: list[float] = []
    inner_converged = True
    converged = False
    last_traj = None

    for k in range(1, config.max_outer + 1):
        mus, policies, new_u, new_du = [], [], [], []
        for j in range(n_slices):
            res = solve_joint_measure(
                m_list[j], du_list[j], spec,
                tol=config.inner_tol, max_iter=config.inner_max_iter, damping=config.damping,
            )
            inner_converged &= res.converged
            if res.rate is not None:
                rates.append(res.rate)
            h = solve_discounted(
                spec, InstantContext(res.mu), config.rho, grid,
                tol=config.hjb_tol, max_iter=config.hjb_max_iter, warm_start=res.policy,
            )
            mus.append(res.mu)
            policies.append(h.policy)
            new_u.append(h.u)
            new_du.append(gradient_central(h.u))
        if policy_drift_prev is None or config.damping >= 1.0:
            pol_used = policies
        else:
            pol_used = [
                blend_policies(policy_drift_prev[j], policies[j], config.damping, spec.control)
                for j in range(n_slices)
            ]
        drifts = [drift_field(spec, grid, pol_used[j], InstantContext(mus[j])) for j in range(n_slices)]
        traj = fp_evolve(m0, lambda j, t: drifts[j], config.T, config.dt)
        du_errs = [_du_gap(new_du[j], du_list[j]) for j in range(n_slices)]
        m_errs = [wasserstein1_state(traj.densities[j], m_list[j]) for j in range(n_slices)]
        e_k = max(du_errs[j] + m_errs[j] for j in range(n_slices))
        outer_log.append((k, e_k, max(du_errs), max(m_errs)))
        u_list, du_list, m_list = new_u, new_du, list(traj.densities)
        policy_drift_prev = pol_used
        last_traj = traj
        if e_k <= config.outer_tol:
            converged = True
            break

    final = _finalize_instant_slices(spec, grid, config, m_list, u_list, du_list)
    diagnostics = {
        "outer_iterations": len(outer_log),
        "final_outer_error": outer_log[-1][1] if outer_log else 0.0,
        "mu_contraction_rate_max": max(rates) if rates else None,
        "inner_converged": inner_converged,
        "hjb_residual_histories": tuple(final["histories"]),
    }
    return TrajectorySolution(
        times=times,
        u=tuple(final["u"]),
        m=tuple(m_list),
        mu=tuple(final["mu"]),
        policy=tuple(final["policy"]),
        drifts=last_traj.drifts if last_traj is not None else (),
        converged=converged,
        outer_errors=tuple(outer_log),
        hjb_residuals=np.array(final["hjb_res"]),
        mu_residuals=np.array(final["mu_res"]),
        diagnostics=diagnostics,
    )


def _finalize_instant_slices(spec, grid, config, m_list, u_list, du_list, max_rounds: int = 12):
    """Re-solve each slice on the final densities until the measured residuals
    of the measure equation and the HJB equation both meet their tolerances."""
    out = {"u": [], "mu": [], "policy": [], "hjb_res": [], "mu_res": [], "histories": []}
    for j in range(len(m_list)):
        du = du_list[j]
        best = None
        for _ in range(max_rounds):
            res = solve_joint_measure(
                m_list[j], du, spec,
                tol=0.25 * config.inner_tol, max_iter=config.inner_max_iter, damping=config.damping,
            )
            h = solve_discounted(
                spec, InstantContext(res.mu), config.rho, grid,
                tol=config.hjb_tol, max_iter=config.hjb_max_iter, warm_start=res.policy,
            )
            du = gradient_central(h.u)
            u = h.u
            probe = policy_field(spec, grid, du, InstantContext(res.mu))
            mu_res = wasserstein1_joint(res.mu, pushforward(m_list[j], probe))
            best = (u, res.mu, res.policy, h.residual, mu_res, h.residual_history)
            if mu_res <= config.inner_tol and h.residual <= config.hjb_tol:
                break
        u, mu, policy, hjb_res, mu_res, history = best
        out["u"].append(u)
        out["mu"].append(mu)
        out["policy"].append(policy)
        out["hjb_res"].append(hjb_res)
        out["mu_res"].append(mu_res)
        out["histories"].append(history)
    return out


def solve_measure_iteration(
    spec: ModelSpec,
    m0: DensityField,
    config: CouplingConfig,
    initial: Optional[Sequence[JointMeasure]] = None,
) -> TrajectorySolution:
    """Outer Picard iteration on the joint-measure trajectory.

    Each pass maps the whole trajectory through: per-slice HJB solves with
    the trajectory frozen (history models read their kernel aggregate of the
    past), one Fokker-Planck evolution, and pushforwards of the new densities
    through the optimal policies.  The outer error is the sup over slices of
    the joint W1 distance between consecutive trajectories.
    """
    grid = m0.grid
    times = config.times()
    n_slices = config.n_steps + 1

    if initial is None:
        mu_traj = [pushforward(m0, _zero_policy(spec, grid))] * n_slices
    else:
        mu_traj = list(initial)
        if len(mu_traj) != n_slices:
            raise ValueError("initial measure trajectory has the wrong length")

    policies_prev: Optional[list[ControlField]] = None
    outer_log: list[tuple] = []
    converged = False
    u_list: list[GridField] = []
    m_list: list[DensityField] = []
    pol_used: list[ControlField] = []
    last_traj = None

    for k in range(1, config.max_outer + 1):
        contexts = [_slice_context(spec, times, mu_traj, j) for j in range(n_slices)]
        hjbs = [
            solve_discounted(
                spec, contexts[j], config.rho, grid,
                tol=config.hjb_tol, max_iter=config.hjb_max_iter,
                warm_start=policies_prev[j] if policies_prev else None,
            )
            for j in range(n_slices)
        ]
        policies = [h.policy for h in hjbs]
        if policies_prev is None or config.damping >= 1.0:
            pol_used = policies
        else:
            pol_used = [
                blend_policies(policies_prev[j], policies[j], config.damping, spec.control)
                for j in range(n_slices)
            ]
        drifts = [drift_field(spec, grid, pol_used[j], contexts[j]) for j in range(n_slices)]
        traj = fp_evolve(m0, lambda j, t: drifts[j], config.T, config.dt)
        mu_new = [pushforward(traj.densities[j], pol_used[j]) for j in range(n_slices)]
        e_k = max(wasserstein1_joint(mu_new[j], mu_traj[j]) for j in range(n_slices))
        outer_log.append((k, e_k, e_k))
        mu_traj = mu_new
        policies_prev = pol_used
        u_list = [h.u for h in hjbs]
        m_list = list(traj.densities)
        last_traj = traj
        if e_k <= config.outer_tol:
            converged = True
            break

    # consistency sweeps: undamped passes until the measured per-slice
    # residuals of the measure and HJB equations meet their tolerances
    hjb_res = np.zeros(n_slices)
    mu_res = np.zeros(n_slices)
    final_policies = pol_used
    histories: list[tuple[float, ...]] = [()] * n_slices
    for _ in range(5):
        contexts = [_slice_context(spec, times, mu_traj, j) for j in range(n_slices)]
        hjbs = [
            solve_discounted(
                spec, contexts[j], config.rho, grid,
                tol=config.hjb_tol, max_iter=config.hjb_max_iter, warm_start=final_policies[j],
            )
            for j in range(n_slices)
        ]
        final_policies = [h.policy for h in hjbs]
        histories = [h.residual_history for h in hjbs]
        drifts = [drift_field(spec, grid, final_policies[j], contexts[j]) for j in range(n_slices)]
        traj = fp_evolve(m0, lambda j, t: drifts[j], config.T, config.dt)
        m_list = list(traj.densities)
        mu_traj = [pushforward(m_list[j], final_policies[j]) for j in range(n_slices)]
        u_list = [h.u for h in hjbs]
        last_traj = traj
        new_contexts = [_slice_context(spec, times, mu_traj, j) for j in range(n_slices)]
        for j in range(n_slices):
            hjb_res[j], _ = equation_residual(spec, new_contexts[j], config.rho, u_list[j])
            probe = policy_field(spec, grid, gradient_central(u_list[j]), new_contexts[j])
            mu_res[j] = wasserstein1_joint(mu_traj[j], pushforward(m_list[j], probe))
        if hjb_res.max() <= config.hjb_tol and mu_res.max() <= config.inner_tol:
            break

    diagnostics = {
        "outer_iterations": len(outer_log),
        "final_outer_error": outer_log[-1][1] if outer_log else 0.0,
        "hjb_residual_histories": tuple(histories),
    }
    return TrajectorySolution(
        times=times,
        u=tuple(u_list),
        m=tuple(m_list),
        mu=tuple(mu_traj),
        policy=tuple(final_policies),
        drifts=last_traj.drifts if last_traj is not None else (),
        converged=converged,
        outer_errors=tuple(outer_log),
        hjb_residuals=hjb_res,
        mu_residuals=mu_res,
        diagnostics=diagnostics,
    )


def _run_strategy(spec, m0, config, initial=None) -> TrajectorySolution:
    if config.strategy == "gamma":
        return solve_field_iteration(spec, m0, config, initial=initial)
    return solve_measure_iteration(spec, m0, config, initial=initial)


def solve_vanishing_discount(
    spec: ModelSpec,
    m0: DensityField,
    config: CouplingConfig,
) -> TrajectorySolution:
    """Ergodic driver: discounted solves along a decreasing discount sequence.

    At each level the normalized value w = u - u(x0) and the per-slice cost
    estimate rho * u(x0) are extracted; the driver stops when the combined
    per-slice increments (including the state W1 distance) fall below the
    ergodic tolerance, or runs the whole sequence if configured to.  The last
    level is re-verified against direct ergodic solves slice by slice.
    """
    if not config.rho_sequence:
        raise ValueError("ergodic driver needs a nonempty rho_sequence")
    grid = m0.grid
    times = config.times()
    n_slices = config.n_steps + 1
    x0 = 0  # flat index of the normalization node

    increments: list[float] = []
    value_increments: list[float] = []  # |lambda diff| + |w diff|_inf part alone
    lambda_by_rho: list[np.ndarray] = []
    prev = None
    initial = None
    last_sol = None
    converged = False
    rho_used: list[float] = []

    for rho in config.rho_sequence:
        cfg_k = replace(config, rho=float(rho))
        sol = _run_strategy(spec, m0, cfg_k, initial=initial)
        u0 = np.array([s.flat()[x0] for s in sol.u])
        w = [GridField(grid, s.flat() - c) for s, c in zip(sol.u, u0)]
        lam = rho * u0
        lambda_by_rho.append(lam)
        rho_used.append(float(rho))
        if prev is not None:
            w_prev, lam_prev, m_prev = prev
            value_inc = max(
                abs(lam[j] - lam_prev[j])
                + float(np.abs(w[j].values - w_prev[j].values).max())
                for j in range(n_slices)
            )
            inc = max(
                abs(lam[j] - lam_prev[j])
                + float(np.abs(w[j].values - w_prev[j].values).max())
                + wasserstein1_state(sol.m[j], m_prev[j])
                for j in range(n_slices)
            )
            value_increments.append(value_inc)
            increments.append(inc)
        prev = (w, lam, list(sol.m))
        last_sol = sol
        if config.strategy == "gamma":
            initial = (list(sol.u), list(sol.m))
        else:
            initial = list(sol.mu)
        if increments and increments[-1] <= config.ergodic_tol and not config.full_sequence:
            converged = True
            break
    if increments and increments[-1] <= config.ergodic_tol:
        converged = True

    # per-slice cross-check against the direct ergodic solver
    w_final, lam_final, _ = prev
    direct_gaps = np.zeros(n_slices)
    for j in range(n_slices):
        ctx = _slice_context(spec, times, list(last_sol.mu), j)
        es = solve_ergodic(spec, ctx, grid, tol=config.hjb_tol, method="direct")
        direct_gaps[j] = abs(es.lam - lam_final[j]) + float(
            np.abs(es.u.values - w_final[j].values).max()
        )

    diagnostics = dict(last_sol.diagnostics)
    diagnostics.update(
        {
            "rho_sequence": rho_used,
            "increments": increments,
            "value_increments": value_increments,
            "lambda_by_rho": [arr.tolist() for arr in lambda_by_rho],
            "direct_gap_max": float(direct_gaps.max()),
            "achieved_increment": increments[-1] if increments else None,
        }
    )
    return TrajectorySolution(
        times=times,
        u=tuple(w_final),
        m=last_sol.m,
        mu=last_sol.mu,
        policy=last_sol.policy,
        lam=lam_final,
        drifts=last_sol.drifts,
        converged=converged and last_sol.converged,
        outer_errors=last_sol.outer_errors,
        hjb_residuals=last_sol.hjb_residuals,
        mu_residuals=last_sol.mu_residuals,
        diagnostics=diagnostics,
    )


def solve_system(
    spec: ModelSpec,
    m0: DensityField,
    config: CouplingConfig,
    mode: str = "discounted",
    initial=None,
) -> TrajectorySolution:
    """Dispatch on (mode, strategy); the entry point the CLI uses."""
    if mode == "discounted":
        return _run_strategy(spec, m0, config, initial=initial)
    if mode == "ergodic":
        return solve_vanishing_discount(spec, m0, config)
    raise ValueError(f"unknown mode {mode!r}")


def regularity_report(
    sol: TrajectorySolution,
    spec: ModelSpec | None = None,
    rho: float | None = None,
    max_state_pairs: int = 400,
    max_measure_pairs: int = 120,
    seed: int = 0,
) -> dict:
    """Empirical counterparts of the a-priori estimates on a converged run.

    Reports sup norms of u, Du, lap(u), the discount-scaled sup of u against
    the running-cost bound, and Holder-1/2 ratios in time for Du, the state
    density (W1), and the joint measure (W1), over subsampled time pairs.
    All quantities are measured from the run; nothing is derived from proof
    constants.
    """
    rng = np.random.default_rng(seed)
    n = sol.n_slices
    report: dict[str, float | None] = {}

    u_sup = max(float(np.abs(u.values).max()) for u in sol.u)
    du_sup = max(
        max(float(np.abs(c.values).max()) for c in gradient_central(u)) for u in sol.u
    )
    lap_sup = max(float(np.abs(laplacian(u).values).max()) for u in sol.u)
    report["u_sup"] = u_sup
    report["du_sup"] = du_sup
    report["laplacian_u_sup"] = lap_sup
    if rho is not None:
        report["rho_u_sup"] = rho * u_sup
    if sol.lam is not None:
        report["lambda_sup"] = float(np.abs(sol.lam).max())

    if spec is not None:
        mesh = spec.control.mesh(129)
        ell_max = 0.0
        grid = sol.m[0].grid
        x = grid.coordinates()[:, None, :]
        for j in range(n):
            ctx = _slice_context(spec, sol.times, list(sol.mu), j)
            vals = spec.running_cost(x, mesh[None, :, :], ctx)
            ell_max = max(ell_max, float(np.abs(vals).max()))
        report["running_cost_sup"] = ell_max

    def _pairs(count: int) -> list[tuple[int, int]]:
        allp = [(j, k) for j in range(n) for k in range(j + 1, n)]
        if len(allp) > count:
            chosen = rng.choice(len(allp), size=count, replace=False)
            allp = [allp[int(c)] for c in chosen]
        return allp

    du_fields = [gradient_central(u) for u in sol.u]
    best_du = best_m = best_mu = 0.0
    for j, k in _pairs(max_state_pairs):
        root = np.sqrt(sol.times[k] - sol.times[j])
        best_du = max(best_du, _du_gap(du_fields[j], du_fields[k]) / root)
        best_m = max(best_m, wasserstein1_state(sol.m[j], sol.m[k]) / root)
    for j, k in _pairs(max_measure_pairs):
        root = np.sqrt(sol.times[k] - sol.times[j])
        best_mu = max(best_mu, wasserstein1_joint(sol.mu[j], sol.mu[k]) / root)
    report["du_holder_half"] = best_du
    report["m_holder_half"] = best_m
    report["mu_holder_half"] = best_mu

    # discrete space-time Sobolev surrogate for the density:
    # sum_j dt * sum_x h^d (m^2 + |grad_h m|^2)
    grid = sol.m[0].grid
    dt = float(sol.times[1] - sol.times[0]) if n > 1 else 0.0
    h1 = 0.0
    for m in sol.m:
        gm = gradient_central(m.as_field())
        dens = (m.values**2).sum() + sum((c.values**2).sum() for c in gm)
        h1 += dt * grid.cell_volume * dens
    report["m_h1_surrogate"] = h1
    return report
