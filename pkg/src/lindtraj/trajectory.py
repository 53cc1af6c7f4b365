"""Stochastic trajectory engine.

Each time step applies every dissipation channel in ascending order and
then the Hamiltonian propagator (or the reverse, see :class:`StepOrder`).
A channel measures its ancilla: outcome ``C`` discards the trajectory,
``B`` is a recorded jump and ``A`` the no-jump branch, each with
probability ``<X^dag X>``.

Trajectories are evolved in fixed-size chunks of rows. The chunk layout
depends only on ``n_trajectories``, and every trajectory owns a Philox
stream keyed by ``(seed, trajectory index)`` whose draw number
``step * M + channel`` decides that channel's outcome, so results are
bit-identical for any number of workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .dilation import DilationBlocks, build_blocks
from .errors import (
    AllTrajectoriesDiscardedError,
    DeadTrajectoryError,
    EtaMismatchError,
    ProbabilityUnderflowError,
    SimulationError,
)
from .linalg import matrix_exp, propagator
from .model import OpenSystemModel, trotter_layers
from .observables import Kind, ObservableSpec, dipr, imbalance, jackknife, occupation_specs

log = logging.getLogger(__name__)

DEFAULT_SEED = 20240917
CHUNK_SIZE = 64
PROB_TOL = 1e-8
_DRAW_BLOCK = 512


class Scheme(str, Enum):
    LME_1DILATION = "lme_1dilation"
    NLME_2DILATION = "nlme_2dilation"
    ENHH_1DILATION = "enhh_1dilation"
    DETERMINISTIC_CHANNEL = "deterministic_channel"


class HamiltonianMode(str, Enum):
    EXACT_EXP = "exact_exp"
    TROTTER2 = "trotter2"


class StepOrder(str, Enum):
    DISSIPATION_THEN_HAMILTONIAN = "dissipation_then_hamiltonian"
    HAMILTONIAN_THEN_DISSIPATION = "hamiltonian_then_dissipation"


class NoJumpBranch(str, Enum):
    """What the no-jump outcome applies: the dilation block ``A`` or ``exp(-gamma dt L^dag L / 2)``."""

    DILATION = "dilation"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class SimConfig:
    dt: float
    t_final: float
    n_trajectories: int = 1
    seed: int = DEFAULT_SEED
    scheme: Scheme = Scheme.LME_1DILATION
    hamiltonian_mode: HamiltonianMode = HamiltonianMode.EXACT_EXP
    step_order: StepOrder = StepOrder.DISSIPATION_THEN_HAMILTONIAN
    no_jump_branch: NoJumpBranch = NoJumpBranch.DILATION

    def __post_init__(self):
        for name, enum in (
            ("scheme", Scheme),
            ("hamiltonian_mode", HamiltonianMode),
            ("step_order", StepOrder),
            ("no_jump_branch", NoJumpBranch),
        ):
            object.__setattr__(self, name, enum(getattr(self, name)))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_final < 0:
            raise ValueError(f"t_final must be non-negative, got {self.t_final}")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        ratio = self.t_final / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"t_final={self.t_final} is not a multiple of dt={self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class TrajectoryState:
    psi: np.ndarray
    t: float = 0.0
    alive: bool = True
    jump_log: list[tuple[float, int]] = field(default_factory=list)


def hamiltonian_propagator(model: OpenSystemModel, dt: float, mode: HamiltonianMode) -> np.ndarray:
    """One-step ``U_0``: exact ``exp(-i H dt)`` or the symmetric odd/even split."""
    mode = HamiltonianMode(mode)
    if mode is HamiltonianMode.EXACT_EXP:
        return propagator(model.hamiltonian, dt)
    odd, even = trotter_layers(model)
    half = propagator(odd, dt / 2)
    return half @ propagator(even, dt) @ half


def _check_scheme(model: OpenSystemModel, scheme: Scheme) -> None:
    etas = model.etas
    if scheme in (Scheme.LME_1DILATION, Scheme.DETERMINISTIC_CHANNEL) and np.any(etas != 0.0):
        raise EtaMismatchError(f"{scheme.value} needs eta = 0 on every channel, got {etas.tolist()}")
    if scheme is Scheme.ENHH_1DILATION and np.any(etas != 1.0):
        raise EtaMismatchError(f"{scheme.value} needs eta = 1 on every channel, got {etas.tolist()}")


@dataclass(frozen=True, eq=False)
class StepPlan:
    """Immutable per-run setup shared by all trajectories."""

    blocks: tuple[DilationBlocks, ...]
    no_jump: tuple[np.ndarray, ...]
    u0: np.ndarray
    dissipation_first: bool
    exponential_branch: bool

    @property
    def dim(self) -> int:
        return self.u0.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.blocks)


def prepare(model: OpenSystemModel, config: SimConfig) -> StepPlan:
    _check_scheme(model, config.scheme)
    blocks = tuple(build_blocks(ch, config.dt, mu) for mu, ch in enumerate(model.channels))
    if config.no_jump_branch is NoJumpBranch.EXPONENTIAL:
        no_jump = tuple(
            matrix_exp(-0.5 * ch.rate * config.dt * (ch.jump_operator.conj().T @ ch.jump_operator))
            for ch in model.channels
        )
    else:
        no_jump = tuple(b.a for b in blocks)
    return StepPlan(
        blocks=blocks,
        no_jump=no_jump,
        u0=hamiltonian_propagator(model, config.dt, config.hamiltonian_mode),
        dissipation_first=config.step_order is StepOrder.DISSIPATION_THEN_HAMILTONIAN,
        exponential_branch=config.no_jump_branch is NoJumpBranch.EXPONENTIAL,
    )


# outcome codes
NO_JUMP, JUMP, DISCARD = 0, 1, 2


def _row_norms2(x: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", x.real, x.real) + np.einsum("ij,ij->i", x.imag, x.imag)


def _dissipate(psi: np.ndarray, blocks: DilationBlocks, no_jump: np.ndarray, exponential: bool, u: np.ndarray):
    """Measure one channel on a batch of rows.

    Returns ``(new_psi, outcome, p_discard, prob_error)``; discarded rows
    keep their old state.
    """
    b_psi = psi @ blocks.b.T
    p_b = _row_norms2(b_psi)
    if blocks.eta > 0.0:
        c_psi = psi @ blocks.c.T
        p_c = _row_norms2(c_psi)
    else:
        p_c = np.zeros(psi.shape[0])
    a_psi = psi @ no_jump.T
    if exponential:
        p_a = 1.0 - p_b - p_c
        prob_err = np.maximum(-p_a, 0.0)
    else:
        p_a = _row_norms2(a_psi)
        prob_err = np.abs(p_a + p_b + p_c - 1.0)
    discard = u < p_c
    jump = ~discard & (u < p_c + p_b)
    new = np.where(jump[:, None], b_psi, a_psi)
    norms = np.sqrt(_row_norms2(new))
    keep = ~discard
    new[keep] /= norms[keep, None]
    new[discard] = psi[discard]
    outcome = np.where(discard, DISCARD, np.where(jump, JUMP, NO_JUMP)).astype(np.int8)
    return new, outcome, p_c, prob_err


@dataclass
class _ChunkResult:
    start: int
    values: np.ndarray  # (k, n_obs, n_rec), NaN once discarded
    alive: np.ndarray  # (k,) at the end
    discard_step: np.ndarray  # (k,), -1 if never discarded
    log_success: np.ndarray  # (k,) sum of log(1 - p_C) while alive
    jumps: np.ndarray  # (n_jumps, 3): global trajectory index, step, channel
    rho_sums: np.ndarray | None  # (n_rho, d, d)
    rho_counts: np.ndarray | None
    states: np.ndarray | None  # (k, n_rec, d) when requested
    max_prob_error: float
    max_norm_error: float


def _traj_generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(index << 64) | seed))


def _observable_tables(observables: Sequence[ObservableSpec], n_sites: int, dim: int):
    ops = [spec.operator(n_sites) for spec in observables]
    diag_idx = [j for j, op in enumerate(ops) if np.count_nonzero(op - np.diag(np.diag(op))) == 0]
    dense_idx = [j for j in range(len(ops)) if j not in diag_idx]
    diag_table = np.zeros((dim, len(diag_idx)))
    for col, j in enumerate(diag_idx):
        diag_table[:, col] = np.diag(ops[j]).real
    return ops, diag_idx, diag_table, dense_idx


def _run_chunk(
    plan: StepPlan,
    config: SimConfig,
    psi0: np.ndarray,
    start: int,
    stop: int,
    obs_tables,
    record_steps: np.ndarray,
    rho_steps: np.ndarray,
    keep_states: bool = False,
) -> _ChunkResult:
    k = stop - start
    n_steps = config.n_steps
    n_ch = plan.n_channels
    ops, diag_idx, diag_table, dense_idx = obs_tables
    n_obs = len(ops)
    n_rec = len(record_steps)

    psi = np.tile(psi0.astype(np.complex128), (k, 1))
    alive = np.ones(k, dtype=bool)
    discard_step = np.full(k, -1, dtype=np.int64)
    log_success = np.zeros(k)
    values = np.full((k, n_obs, n_rec), np.nan)
    states = np.full((k, n_rec, plan.dim), np.nan, dtype=np.complex128) if keep_states else None
    rho_sums = np.zeros((len(rho_steps), plan.dim, plan.dim), dtype=np.complex128) if len(rho_steps) else None
    rho_counts = np.zeros(len(rho_steps), dtype=np.int64) if len(rho_steps) else None
    jumps: list[np.ndarray] = []
    max_prob_err = 0.0
    max_norm_err = 0.0

    rec_pos = {int(s): i for i, s in enumerate(record_steps)}
    rho_pos = {int(s): i for i, s in enumerate(rho_steps)}
    gens = [_traj_generator(config.seed, start + i) for i in range(k)] if n_ch else []
    draws = np.empty((k, 0, n_ch))
    draw_offset = 0

    def record(step: int):
        idx = np.flatnonzero(alive)
        sub = psi[idx]
        if step in rec_pos and n_obs:
            col = rec_pos[step]
            if diag_idx:
                probs = sub.real**2 + sub.imag**2
                values[idx[:, None], np.array(diag_idx)[None, :], col] = probs @ diag_table
            for j in dense_idx:
                values[idx, j, col] = np.einsum("ij,ij->i", sub.conj(), sub @ ops[j].T).real
        if keep_states and step in rec_pos:
            states[idx, rec_pos[step]] = sub
        if step in rho_pos:
            pos = rho_pos[step]
            rho_sums[pos] += sub.T @ sub.conj()
            rho_counts[pos] += idx.size

    record(0)
    for step in range(n_steps):
        if n_ch and step - draw_offset >= draws.shape[1]:
            block = min(_DRAW_BLOCK, n_steps - step)
            draws = np.stack([g.random((block, n_ch)) for g in gens])
            draw_offset = step
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        sub = psi[idx]
        if not plan.dissipation_first:
            sub = sub @ plan.u0.T
        for mu in range(n_ch):
            live = alive[idx]
            if not live.all():
                # rows discarded earlier in this step stop evolving
                rows = np.flatnonzero(live)
            else:
                rows = slice(None)
            u = draws[idx[rows], step - draw_offset, mu]
            new, outcome, p_c, perr = _dissipate(
                sub[rows], plan.blocks[mu], plan.no_jump[mu], plan.exponential_branch, u
            )
            if perr.size:
                max_prob_err = max(max_prob_err, float(perr.max()))
                if perr.max() > PROB_TOL:
                    raise ProbabilityUnderflowError(
                        f"channel {mu}: outcome probabilities deviate from 1 by {perr.max():.3e}"
                    )
            sub[rows] = new
            glob = idx[rows]
            with np.errstate(divide="ignore"):  # p_C = 1 gives log 0 = -inf
                log_success[glob] += np.log1p(-np.minimum(p_c, 1.0))
            jumped = glob[outcome == JUMP]
            if jumped.size:
                jumps.append(np.column_stack([start + jumped, np.full(jumped.size, step), np.full(jumped.size, mu)]))
            dead = glob[outcome == DISCARD]
            if dead.size:
                alive[dead] = False
                discard_step[dead] = step
        live = alive[idx]
        sub = sub[live]
        idx = idx[live]
        if plan.dissipation_first:
            sub = sub @ plan.u0.T
        psi[idx] = sub
        if sub.size:
            max_norm_err = max(max_norm_err, float(np.max(np.abs(np.sqrt(_row_norms2(sub)) - 1.0))))
        record(step + 1)

    return _ChunkResult(
        start=start,
        values=values,
        alive=alive,
        discard_step=discard_step,
        log_success=log_success,
        jumps=np.concatenate(jumps).astype(np.int64) if jumps else np.zeros((0, 3), dtype=np.int64),
        rho_sums=rho_sums,
        rho_counts=rho_counts,
        states=states,
        max_prob_error=max_prob_err,
        max_norm_error=max_norm_err,
    )


def chunk_bounds(n_trajectories: int, chunk_size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    return [(s, min(s + chunk_size, n_trajectories)) for s in range(0, n_trajectories, chunk_size)]


# worker-process globals, set once per pool by the initializer
_WORKER_ARGS: tuple | None = None


def _init_worker(*args):
    global _WORKER_ARGS
    _WORKER_ARGS = args


def _chunk_job(bounds: tuple[int, int]) -> _ChunkResult:
    plan, config, psi0, tables, rec, rho = _WORKER_ARGS
    return _run_chunk(plan, config, psi0, bounds[0], bounds[1], tables, rec, rho)


def _run_chunks(plan, config, psi0, tables, record_steps, rho_steps, workers: int) -> list[_ChunkResult]:
    bounds = chunk_bounds(config.n_trajectories)
    if workers <= 1 or len(bounds) == 1:
        return [_run_chunk(plan, config, psi0, s, e, tables, record_steps, rho_steps) for s, e in bounds]
    args = (plan, config, psi0, tables, record_steps, rho_steps)
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=args) as pool:
        return list(pool.map(_chunk_job, bounds))


def _initial_state(model: OpenSystemModel, psi0) -> np.ndarray:
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if psi0.shape != (model.dim,):
        raise SimulationError(f"initial state has shape {psi0.shape}, expected ({model.dim},)")
    return psi0 / np.linalg.norm(psi0)


def _steps_from(config: SimConfig, record_steps) -> np.ndarray:
    if record_steps is None:
        return np.arange(config.n_steps + 1)
    steps = np.unique(np.asarray(record_steps, dtype=np.int64))
    if steps.size and (steps[0] < 0 or steps[-1] > config.n_steps):
        raise SimulationError(f"record steps must lie in 0..{config.n_steps}")
    return steps


def times_to_steps(times, dt: float) -> np.ndarray:
    """Map times to step indices; each time must be a multiple of ``dt``."""
    times = np.asarray(times, dtype=float)
    ratio = times / dt
    steps = np.round(ratio)
    if np.any(np.abs(ratio - steps) > 1e-9 * np.maximum(1.0, np.abs(ratio))):
        raise SimulationError("record times must be multiples of dt")
    return steps.astype(np.int64)


# -- single-trajectory API ---------------------------------------------------


def dissipation_step(state: TrajectoryState, blocks: DilationBlocks, eta: float, rng) -> TrajectoryState:
    """Measure one channel on one state, drawing one uniform from ``rng``."""
    if not state.alive:
        raise DeadTrajectoryError("dissipation_step called on a discarded trajectory")
    if eta != blocks.eta:
        raise EtaMismatchError(f"eta={eta} does not match the blocks (eta={blocks.eta})")
    if state.psi.shape != (blocks.dim,):
        raise SimulationError(f"state dim {state.psi.shape} does not match blocks dim {blocks.dim}")
    u = np.array([rng.random()])
    new, outcome, _, perr = _dissipate(state.psi[None, :], blocks, blocks.a, False, u)
    if perr[0] > PROB_TOL:
        raise ProbabilityUnderflowError(f"outcome probabilities deviate from 1 by {perr[0]:.3e}")
    code = int(outcome[0])
    if code == DISCARD:
        return TrajectoryState(state.psi.copy(), state.t, False, list(state.jump_log))
    log_ = list(state.jump_log)
    if code == JUMP:
        log_.append((state.t, blocks.channel_index))
    return TrajectoryState(new[0], state.t, True, log_)


def hamiltonian_step(
    state: TrajectoryState, model: OpenSystemModel, config: SimConfig, u0: np.ndarray | None = None
) -> TrajectoryState:
    if not state.alive:
        raise DeadTrajectoryError("hamiltonian_step called on a discarded trajectory")
    if u0 is None:
        u0 = hamiltonian_propagator(model, config.dt, config.hamiltonian_mode)
    return TrajectoryState(u0 @ state.psi, state.t, True, list(state.jump_log))


def run_trajectory(
    model: OpenSystemModel,
    config: SimConfig,
    traj_index: int,
    psi0,
    record_steps=None,
) -> list[TrajectoryState]:
    """States of trajectory ``traj_index`` at the recorded steps (default: every step).

    Discarded trajectories report ``alive=False`` from the discard step on,
    with the last surviving state.
    """
    if config.scheme is Scheme.DETERMINISTIC_CHANNEL:
        raise SimulationError("run_trajectory needs a sampling scheme")
    plan = prepare(model, config)
    psi0 = _initial_state(model, psi0)
    steps = _steps_from(config, record_steps)
    tables = _observable_tables([], model.n_sites, model.dim)
    res = _run_chunk(plan, config, psi0, traj_index, traj_index + 1, tables, steps, np.array([], dtype=np.int64), keep_states=True)
    dstep = int(res.discard_step[0])
    out = []
    last = psi0
    for i, s in enumerate(steps):
        t = float(s) * config.dt
        jumps = [(float(js + 1) * config.dt, int(ch)) for _, js, ch in res.jumps if js < s]
        alive = dstep < 0 or s <= dstep
        psi = res.states[0, i]
        if np.isnan(psi.real).any():
            psi = last
        else:
            last = psi
        out.append(TrajectoryState(psi.copy(), t, alive, jumps))
    return out


def trajectory_jumps(model, config, traj_index, psi0) -> list[tuple[float, int]]:
    """Jump record ``(time, channel)`` of one trajectory; a jump in step ``n`` is stamped ``(n + 1) dt``."""
    return run_trajectory(model, config, traj_index, psi0, record_steps=[config.n_steps])[-1].jump_log


# -- ensembles ---------------------------------------------------------------


@dataclass
class EnsembleStats:
    k_total: int
    k_eff: int
    times: np.ndarray
    observable_means: dict[str, np.ndarray]
    observable_sd: dict[str, np.ndarray]
    observable_se: dict[str, np.ndarray]
    alive_counts: np.ndarray
    rho_estimate: dict[float, np.ndarray] = field(default_factory=dict)
    samples: dict[str, np.ndarray] = field(default_factory=dict)
    success_products: np.ndarray | None = None
    alive: np.ndarray | None = None
    jumps: np.ndarray | None = None
    observable_sd_exact: dict[str, np.ndarray] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)


RHO_MAX_SITES = 6


def _ensemble_stats(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mean, SD (1/K normalization), SE and alive count over rows; NaN rows are dead."""
    mask = ~np.isnan(samples)
    counts = mask.sum(axis=0)
    safe = np.where(mask, samples, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = safe.sum(axis=0) / counts
        dev = np.where(mask, samples - mean, 0.0)
        sd = np.sqrt((dev**2).sum(axis=0) / counts)
        se = np.where(counts >= 2, sd / np.sqrt(counts), np.nan)
    return mean, sd, se, counts


def _derived_stats(kind: Kind, occ: np.ndarray):
    """Jackknife mean/SE of dIPR or IB of the mean occupations; ``occ`` is (K, L, n_rec)."""
    fn = dipr if kind is Kind.DIPR else imbalance

    def stat(means):
        return fn(np.moveaxis(means, -2, -1))

    n_rec = occ.shape[-1]
    alive = ~np.isnan(occ[:, 0, :])  # (K, n_rec)
    if alive.all():
        value, se = jackknife(occ, stat)
        counts = np.full(n_rec, occ.shape[0])
    else:
        value = np.full(n_rec, np.nan)
        se = np.full(n_rec, np.nan)
        counts = alive.sum(axis=0)
        for r in range(n_rec):
            rows = occ[alive[:, r], :, r]
            if rows.shape[0]:
                v, s = jackknife(rows, lambda m: fn(m))
                value[r], se[r] = v, s
    with np.errstate(invalid="ignore"):
        sd = se * np.sqrt(counts)
    return value, sd, se


def run_ensemble(
    model: OpenSystemModel,
    config: SimConfig,
    observables: Sequence[ObservableSpec],
    psi0,
    record_steps=None,
    rho_times: Sequence[float] = (),
    workers: int = 1,
    reference: dict[str, np.ndarray] | None = None,
    keep_samples: bool = True,
) -> EnsembleStats:
    """Average ``observables`` over ``config.n_trajectories`` trajectories.

    Means at each recorded time run over the trajectories still alive at
    that time. ``reference`` maps observable names to exact series on the
    same time grid and enables the exact-referenced SD.
    """
    if config.scheme is Scheme.DETERMINISTIC_CHANNEL:
        raise SimulationError("run_ensemble needs a sampling scheme; use propagate_channel")
    psi0 = _initial_state(model, psi0)
    plan = prepare(model, config)
    steps = _steps_from(config, record_steps)
    times = steps * config.dt

    direct = [spec for spec in observables if not spec.derived]
    derived = [spec for spec in observables if spec.derived]
    occ_specs = occupation_specs(model.n_sites) if derived else []
    measured = direct + occ_specs
    tables = _observable_tables(measured, model.n_sites, model.dim)

    rho_steps = np.array([], dtype=np.int64)
    if len(rho_times):
        if model.n_sites > RHO_MAX_SITES:
            raise SimulationError(f"density-matrix estimates are limited to {RHO_MAX_SITES} sites")
        rho_steps = np.unique(times_to_steps(rho_times, config.dt))

    chunks = _run_chunks(plan, config, psi0, tables, steps, rho_steps, workers)
    values = np.concatenate([c.values for c in chunks], axis=0)
    alive_end = np.concatenate([c.alive for c in chunks])
    log_success = np.concatenate([c.log_success for c in chunks])
    jumps = np.concatenate([c.jumps for c in chunks], axis=0)
    k_eff = int(alive_end.sum())
    if k_eff == 0:
        raise AllTrajectoriesDiscardedError(
            f"all {config.n_trajectories} trajectories were discarded by postselection"
        )

    means, sds, ses, samples, sd_exact = {}, {}, {}, {}, {}
    for j, spec in enumerate(direct):
        mean, sd, se, n_alive = _ensemble_stats(values[:, j, :])
        means[spec.name], sds[spec.name], ses[spec.name] = mean, sd, se
        if keep_samples:
            samples[spec.name] = values[:, j, :]
        if reference is not None and spec.name in reference:
            ref = np.asarray(reference[spec.name], dtype=float)
            dev = np.where(np.isnan(values[:, j, :]), 0.0, values[:, j, :] - ref)
            with np.errstate(invalid="ignore", divide="ignore"):
                sd_exact[spec.name] = np.sqrt((dev**2).sum(axis=0) / n_alive)
    if derived:
        occ = values[:, len(direct) :, :]
        for spec in derived:
            means[spec.name], sds[spec.name], ses[spec.name] = _derived_stats(spec.kind, occ)
        if keep_samples:
            for l, spec in enumerate(occ_specs):
                samples.setdefault(spec.name, occ[:, l, :])
    counts = _alive_counts(chunks, steps)

    rho_est = {}
    if rho_steps.size:
        sums = sum(c.rho_sums for c in chunks)
        cnts = sum(c.rho_counts for c in chunks)
        for i, s in enumerate(rho_steps):
            if cnts[i]:
                rho_est[float(s * config.dt)] = sums[i] / cnts[i]

    diagnostics = {
        "max_probability_error": max(c.max_prob_error for c in chunks),
        "max_norm_error": max(c.max_norm_error for c in chunks),
        "max_completeness_error": max((b.completeness_error() for b in plan.blocks), default=0.0),
    }
    log.info(
        "ensemble: K=%d K_eff=%d steps=%d channels=%d",
        config.n_trajectories,
        k_eff,
        config.n_steps,
        plan.n_channels,
    )
    return EnsembleStats(
        k_total=config.n_trajectories,
        k_eff=k_eff,
        times=times,
        observable_means=means,
        observable_sd=sds,
        observable_se=ses,
        alive_counts=np.asarray(counts),
        rho_estimate=rho_est,
        samples=samples,
        success_products=np.exp(log_success),
        alive=alive_end,
        jumps=jumps,
        observable_sd_exact=sd_exact,
        diagnostics=diagnostics,
    )


def _alive_counts(chunks: list[_ChunkResult], steps: np.ndarray) -> np.ndarray:
    dsteps = np.concatenate([c.discard_step for c in chunks])
    # a trajectory discarded during step n is absent from record n + 1 on
    return np.array([int(np.sum((dsteps < 0) | (dsteps >= s))) for s in steps])


def estimate_success_probability(
    model: OpenSystemModel, config: SimConfig, psi0, workers: int = 1
) -> tuple[float, float]:
    """Empirical ``K_eff / K`` and the mean over survivors of ``prod (1 - <C^dag C>)``."""
    stats = run_ensemble(
        model, config, [], psi0, record_steps=[config.n_steps], workers=workers, keep_samples=False
    )
    empirical = stats.k_eff / config.n_trajectories
    predicted = float(np.mean(stats.success_products[stats.alive]))
    return float(empirical), predicted


# -- deterministic channel ---------------------------------------------------


def deterministic_channel_step(
    rho, model: OpenSystemModel, config: SimConfig, plan: StepPlan | None = None
) -> np.ndarray:
    """Exact trajectory average of one step: ``U0 (prod_mu E_mu)(rho) U0^dag``, ``E(rho) = A rho A^dag + B rho B^dag``."""
    if plan is None:
        _check_scheme(model, Scheme.DETERMINISTIC_CHANNEL)
        if config.no_jump_branch is not NoJumpBranch.DILATION:
            raise SimulationError("the deterministic channel is defined with the dilation no-jump branch")
        plan = prepare(model, replace(config, t_final=config.dt, scheme=Scheme.DETERMINISTIC_CHANNEL))
    rho = np.asarray(rho, dtype=np.complex128)
    u0 = plan.u0
    if not plan.dissipation_first:
        rho = u0 @ rho @ u0.conj().T
    for blk in plan.blocks:
        rho = blk.a @ rho @ blk.a.conj().T + blk.b @ rho @ blk.b.conj().T
    if plan.dissipation_first:
        rho = u0 @ rho @ u0.conj().T
    return rho


def propagate_channel(model: OpenSystemModel, rho0, config: SimConfig, record_steps=None) -> list[np.ndarray]:
    """Iterate the deterministic channel; returns ``rho`` at each recorded step."""
    _check_scheme(model, Scheme.DETERMINISTIC_CHANNEL)
    if config.no_jump_branch is not NoJumpBranch.DILATION:
        raise SimulationError("the deterministic channel is defined with the dilation no-jump branch")
    plan = prepare(model, config)
    steps = _steps_from(config, record_steps)
    wanted = set(int(s) for s in steps)
    rho = np.asarray(rho0, dtype=np.complex128)
    out = []
    if 0 in wanted:
        out.append(rho.copy())
    for n in range(1, config.n_steps + 1):
        rho = deterministic_channel_step(rho, model, config, plan)
        if n in wanted:
            out.append(rho.copy())
    return out
