"""First-order deterministic approximation of the redial/reconnect model.

The state z = (z_q, z_rd, z_rc) evolves by

    dz_q/dt  = lam + delta_rd*z_rd + delta_rc*z_rc
               - mu*min(s, z_q) - theta*(z_q - s)^+
    dz_rd/dt = p*theta*(z_q - s)^+ - delta_rd*z_rd
    dz_rc/dt = q*mu*min(s, z_q) - delta_rc*z_rc

with lam and s piecewise constant over a staffing schedule. Two solvers
are provided: a fixed-step RK4 integrator and a fixed-point iteration on
the equivalent integral equations; they cross-validate each other.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (
    EMPTY_STATE,
    FluidState,
    ModelParams,
    ParameterError,
    Schedule,
    Trajectory,
    grid_steps,
    rho_hat,
    schedule_grid,
    single_interval,
    validate,
)


class FluidIntegrationError(RuntimeError):
    """Integration produced a non-finite state."""


class PicardConvergenceError(RuntimeError):
    """Fixed-point iteration did not reach tolerance within max_iter."""


class Regime(enum.Enum):
    UNDERLOADED = "underloaded"   # rho_hat < 1
    OVERLOADED = "overloaded"     # rho_hat >= 1


@dataclass(frozen=True)
class StationaryState:
    """Long-run fluid state together with the load regime that produced it."""

    state: FluidState
    regime: Regime
    rho_hat: float


@dataclass(frozen=True)
class RateDecomposition:
    """Instantaneous arrival rate split by origin; total is the exact sum."""

    t: float
    total: float
    fresh: float
    redial: float
    reconnect: float


def drift(state: FluidState, lam: float, s: float, params: ModelParams) -> np.ndarray:
    """Right-hand side of the fluid ODE at the given state.

    ``lam`` and ``s`` are passed explicitly so schedule intervals can
    override the values stored in ``params``; the remaining rates come
    from ``params``.
    """
    zq, zrd, zrc = state.z_q, state.z_rd, state.z_rc
    in_service = s if zq > s else zq
    excess = zq - s if zq > s else 0.0
    dq = (lam + params.delta_rd * zrd + params.delta_rc * zrc
          - params.mu * in_service - params.theta * excess)
    drd = params.p * params.theta * excess - params.delta_rd * zrd
    drc = params.q * params.mu * in_service - params.delta_rc * zrc
    return np.array([dq, drd, drc])


_steps_for = grid_steps


def integrate_schedule(
    schedule: Schedule,
    z0: FluidState = EMPTY_STATE,
    step: float = 0.01,
    record_every: int = 1,
) -> Trajectory:
    """Solve the fluid ODE over the whole schedule with fixed-step RK4.

    Coefficients (lam, s) restart at each interval boundary; the state is
    continuous across boundaries. ``step`` must divide every interval
    length, and the number of steps per interval must be a multiple of
    ``record_every`` (samples are recorded every ``record_every`` steps,
    boundaries always included). Negative round-off is clamped to zero
    and counted in ``Trajectory.clamp_events``.
    """
    if step <= 0:
        raise ParameterError(f"step must be > 0, got {step}")
    if record_every < 1:
        raise ParameterError(f"record_every must be >= 1, got {record_every}")

    mu, theta = schedule.mu, schedule.theta
    p, q = schedule.p, schedule.q
    d_rd, d_rc = schedule.delta_rd, schedule.delta_rc

    zq, zrd, zrc = z0.z_q, z0.z_rd, z0.z_rc
    samples = [(zq, zrd, zrc)]
    clamps = 0

    for t0, t1, lam, s_int in schedule.intervals():
        s = float(s_int)
        length = t1 - t0
        nsteps = _steps_for(length, step)
        if nsteps % record_every != 0:
            raise ParameterError(
                f"record_every={record_every} does not divide the "
                f"{nsteps} steps of interval [{t0}, {t1})"
            )
        h = length / nsteps
        h2 = h * 0.5
        h6 = h / 6.0
        for i in range(1, nsteps + 1):
            # inlined RK4 stages; this loop dominates runtime
            sv = s if zq > s else zq
            ex = zq - s if zq > s else 0.0
            k1q = lam + d_rd * zrd + d_rc * zrc - mu * sv - theta * ex
            k1rd = p * theta * ex - d_rd * zrd
            k1rc = q * mu * sv - d_rc * zrc

            aq = zq + h2 * k1q
            ard = zrd + h2 * k1rd
            arc = zrc + h2 * k1rc
            sv = s if aq > s else aq
            ex = aq - s if aq > s else 0.0
            k2q = lam + d_rd * ard + d_rc * arc - mu * sv - theta * ex
            k2rd = p * theta * ex - d_rd * ard
            k2rc = q * mu * sv - d_rc * arc

            aq = zq + h2 * k2q
            ard = zrd + h2 * k2rd
            arc = zrc + h2 * k2rc
            sv = s if aq > s else aq
            ex = aq - s if aq > s else 0.0
            k3q = lam + d_rd * ard + d_rc * arc - mu * sv - theta * ex
            k3rd = p * theta * ex - d_rd * ard
            k3rc = q * mu * sv - d_rc * arc

            aq = zq + h * k3q
            ard = zrd + h * k3rd
            arc = zrc + h * k3rc
            sv = s if aq > s else aq
            ex = aq - s if aq > s else 0.0
            k4q = lam + d_rd * ard + d_rc * arc - mu * sv - theta * ex
            k4rd = p * theta * ex - d_rd * ard
            k4rc = q * mu * sv - d_rc * arc

            zq += h6 * (k1q + 2.0 * (k2q + k3q) + k4q)
            zrd += h6 * (k1rd + 2.0 * (k2rd + k3rd) + k4rd)
            zrc += h6 * (k1rc + 2.0 * (k2rc + k3rc) + k4rc)
            if zq < 0.0:
                zq = 0.0
                clamps += 1
            if zrd < 0.0:
                zrd = 0.0
                clamps += 1
            if zrc < 0.0:
                zrc = 0.0
                clamps += 1
            if i % record_every == 0:
                if not (np.isfinite(zq) and np.isfinite(zrd) and np.isfinite(zrc)):
                    raise FluidIntegrationError(
                        f"non-finite state ({zq}, {zrd}, {zrc}) near "
                        f"t={t0 + (length * i) / nsteps}"
                    )
                samples.append((zq, zrd, zrc))

    # shared grid constructor keeps time columns bit-identical with the
    # simulator's sampling grid at the same resolution
    grid = schedule_grid(schedule, step * record_every)
    if len(grid) != len(samples):
        raise FluidIntegrationError(
            f"internal grid mismatch: {len(grid)} nodes vs {len(samples)} samples"
        )
    return Trajectory(grid, np.array(samples), clamp_events=clamps)


def _lipschitz(params: ModelParams) -> float:
    # row-sum bound of the drift Jacobian in the sup norm
    return max(
        max(params.mu, params.theta) + params.delta_rd + params.delta_rc,
        params.p * params.theta + params.delta_rd,
        params.q * params.mu + params.delta_rc,
    )


def picard_iterate(
    params: ModelParams,
    z0: FluidState,
    horizon: float,
    grid_step: float = 0.1,
    tol: float = 1e-8,
    max_iter: int = 500,
    window: float | None = None,
) -> Trajectory:
    """Solve the single-interval integral equations by fixed-point iteration.

    Starting from the constant path z(t) = z0, repeatedly applies the
    integral operator (cumulative trapezoid quadrature of the drift along
    the current path) until the sup-norm change over the grid drops below
    ``tol``.

    The iteration runs on consecutive windows, each started from the
    previous window's terminal state, because the operator's transient
    amplification grows like e^(L*span) for Lipschitz constant L: beyond
    L*span of roughly 35, round-off noise is amplified past any signal in
    double precision and the global iteration cycles instead of
    converging. The default window keeps L*window near 12; ``max_iter``
    caps iterations per window. Iterates are also projected into the box
    0 <= z_i(t) <= mass(window start) + lam*t, which contains the true
    solution (total mass never grows faster than fresh arrivals), leaves
    the fixed point unchanged, and keeps the transient bounded.
    """
    validate(params)
    if tol <= 0:
        raise ParameterError(f"tol must be > 0, got {tol}")
    if max_iter < 1:
        raise ParameterError(f"max_iter must be >= 1, got {max_iter}")
    if horizon < 0:
        raise ParameterError(f"horizon must be >= 0, got {horizon}")
    if horizon == 0:
        return Trajectory(np.array([0.0]), z0.as_array()[None, :])

    n = _steps_for(horizon, grid_step)
    grid = schedule_grid(single_interval(params, horizon), grid_step)
    h = horizon / n
    lam, s = params.lam, float(params.s)

    if window is None:
        window = 12.0 / max(_lipschitz(params), 1e-12)
    if window <= 0:
        raise ParameterError(f"window must be > 0, got {window}")
    win_steps = min(n, max(1, round(window / h)))

    out = np.empty((n + 1, 3))
    out[0] = z0.as_array()
    done = 0  # grid index up to which `out` is solved
    while done < n:
        m = min(win_steps, n - done)
        start = out[done]
        mass_cap = (start.sum() + lam * (grid[done:done + m + 1] - grid[done]))[:, None]
        z = np.tile(start, (m + 1, 1))
        converged = False
        residual = np.inf
        for _ in range(max_iter):
            zq, zrd, zrc = z[:, 0], z[:, 1], z[:, 2]
            in_service = np.minimum(zq, s)
            excess = np.maximum(zq - s, 0.0)
            f = np.empty_like(z)
            f[:, 0] = (lam + params.delta_rd * zrd + params.delta_rc * zrc
                       - params.mu * in_service - params.theta * excess)
            f[:, 1] = params.p * params.theta * excess - params.delta_rd * zrd
            f[:, 2] = params.q * params.mu * in_service - params.delta_rc * zrc
            z_new = np.empty_like(z)
            z_new[0] = start
            np.cumsum(0.5 * h * (f[:-1] + f[1:]), axis=0, out=z_new[1:])
            z_new[1:] += start
            np.maximum(z_new, 0.0, out=z_new)
            np.minimum(z_new, mass_cap, out=z_new)
            residual = np.abs(z_new - z).max()
            z = z_new
            if residual < tol:
                converged = True
                break
        if not converged:
            raise PicardConvergenceError(
                f"window [{grid[done]:g}, {grid[done + m]:g}] did not converge "
                f"after {max_iter} iterations; last residual {residual:.3e}"
            )
        out[done + 1:done + m + 1] = z[1:]
        done += m
    return Trajectory(grid, out)


def stationary_state(params: ModelParams) -> StationaryState:
    """Closed-form long-run fluid state.

    Below effective load 1 the queue drains (z_q < s, empty redial
    orbit); at or above 1 the queue carries a persistent excess fed back
    through the redial orbit. A system at or past critical load with
    p = 1 recirculates every abandonment and has no finite stationary
    point.
    """
    validate(params)
    r = rho_hat(params)
    s = float(params.s)
    if r < 1.0:
        zq = params.lam / ((1.0 - params.q) * params.mu)
        zrd = 0.0
        zrc = params.q * params.mu * zq / params.delta_rc
        regime = Regime.UNDERLOADED
    else:
        surplus = params.lam + params.q * params.mu * s - params.mu * s
        if surplus > 0 and params.p == 1.0:
            raise ParameterError(
                "no finite stationary state: p = 1 with rho_hat > 1 means "
                "every abandoning caller eventually returns"
            )
        excess = surplus / (params.theta * (1.0 - params.p)) if surplus != 0 else 0.0
        zq = s + excess
        zrd = params.p * params.theta * excess / params.delta_rd
        zrc = params.q * params.mu * s / params.delta_rc
        regime = Regime.OVERLOADED
    return StationaryState(FluidState(zq, zrd, zrc), regime, r)


def total_arrival_rate(traj: Trajectory, schedule: Schedule) -> list[RateDecomposition]:
    """Split the offered arrival rate at each grid point by origin.

    The fresh component is the schedule's piecewise-constant rate
    (right-continuous at boundaries); redial and reconnect components are
    proportional to the orbit contents.
    """
    if abs(traj.grid[0]) > 1e-9 or traj.grid[-1] > schedule.horizon + 1e-9:
        raise ParameterError(
            f"trajectory span [{traj.grid[0]}, {traj.grid[-1]}] does not "
            f"lie in the schedule span [0, {schedule.horizon}]"
        )
    out = []
    for t, (zq, zrd, zrc) in zip(traj.grid, traj.values):
        fresh = schedule.lambdas[schedule.interval_index(t)]
        redial = schedule.delta_rd * zrd
        reconnect = schedule.delta_rc * zrc
        out.append(RateDecomposition(
            t=float(t),
            total=float(fresh + redial + reconnect),
            fresh=float(fresh),
            redial=float(redial),
            reconnect=float(reconnect),
        ))
    return out


def integrate_params(
    params: ModelParams,
    horizon: float,
    z0: FluidState = EMPTY_STATE,
    step: float = 0.01,
    record_every: int = 1,
) -> Trajectory:
    """Single-interval convenience wrapper around :func:`integrate_schedule`."""
    return integrate_schedule(single_interval(params, horizon), z0, step, record_every)


TRAJECTORY_CSV_HEADER = "t,z_q,z_rd,z_rc,lambda_total,lambda_fresh,lambda_rd,lambda_rc"


def write_trajectory_csv(path: str | Path, traj: Trajectory, schedule: Schedule) -> None:
    """Write a trajectory with its rate decomposition, full double precision."""
    rates = total_arrival_rate(traj, schedule)
    lines = [TRAJECTORY_CSV_HEADER]
    for (t, (zq, zrd, zrc)), rate in zip(zip(traj.grid, traj.values), rates):
        lines.append(
            f"{float(t)!r},{float(zq)!r},{float(zrd)!r},{float(zrc)!r},"
            f"{rate.total!r},{rate.fresh!r},{rate.redial!r},{rate.reconnect!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
