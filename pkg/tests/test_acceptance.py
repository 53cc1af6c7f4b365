"""Acceptance suite: each criterion at its stated tolerance.

Every check records a PASS/FAIL line (``record_criterion``); the terminal
summary groups them per criterion. Run with ``pytest tests/test_acceptance.py -v``.
"""

import math

import numpy as np
import pytest

from lindtraj.cli import initial_state, invariant_suite, load_config, main, run_points, scan_dt
from lindtraj.errors import AllTrajectoriesDiscardedError
from lindtraj.exact import choi_error_bound_check, lme_series, nlme_series
from lindtraj.model import SKIN_ALPHA, SKIN_BETA, ModelParams, build_atom, build_skin, build_xxz, named_state
from lindtraj.observables import (
    Kind,
    ObservableSpec,
    expectation,
    fit_scaling_exponent,
    imbalance,
    jackknife,
    occupation_specs,
    site_occupation,
)
from lindtraj.trajectory import Scheme, SimConfig, run_ensemble

SIGMA_FACTOR = 3.0
EXCITED = named_state("excited", 1)


def max_ratio(diff, se):
    """Largest |diff| / se, with 0/0 counted as 0 and x/0 as inf."""
    diff, se = np.abs(np.asarray(diff)), np.asarray(se)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(diff == 0, 0.0, diff / se)
    return float(np.nanmax(np.where(np.isnan(se) & (diff > 0), np.inf, ratio)))


# -- 1: driven atom against the exact nonlinear curve ---------------------------


@pytest.mark.parametrize("eta", [0.0, 0.25, 0.5, 0.75, 0.95, 1.0])
def test_atom_population_within_three_se(eta, record_criterion):
    model = build_atom(1.0, 0.5, eta)
    scheme = Scheme.LME_1DILATION if eta == 0 else Scheme.NLME_2DILATION
    sim = SimConfig(0.1, 10.0, 1000, scheme=scheme)
    stats = run_ensemble(model, sim, [ObservableSpec("pe", Kind.EXCITED_POP)], EXCITED, keep_samples=False)
    exact = np.array([r[0, 0].real for r in nlme_series(model, np.outer(EXCITED, EXCITED), stats.times)])
    diff = stats.observable_means["pe"] - exact
    se = stats.observable_se["pe"]
    bad = np.abs(diff) > SIGMA_FACTOR * np.where(np.isnan(se), 0.0, se)
    detail = (
        f"max|diff|={np.abs(diff).max():.4f} max|diff|/se={max_ratio(diff, se):.2f} "
        f"outside at {int(bad.sum())}/{bad.size} times K_eff={stats.k_eff}"
    )
    record_criterion(1, f"eta={eta}", not bad.any(), detail)
    assert not bad.any(), detail


# -- 2: XXZ chain against the exact Lindblad solution -----------------------------


def test_xxz_chain_within_three_se(record_criterion):
    model = build_xxz(ModelParams(J=1.0, Delta=2.0, gamma=0.5, L_sites=5))
    psi0 = named_state("all_up", 5)
    specs = [site_occupation(1), ObservableSpec("czz", Kind.CORRELATION_ZZ)]
    stats = run_ensemble(model, SimConfig(0.1, 10.0, 1000), specs, psi0, keep_samples=False)
    window = stats.times >= 1.0 - 1e-12
    rhos = lme_series(model, np.outer(psi0, psi0), stats.times[window])
    ok = True
    for spec in specs:
        exact = np.array([expectation(r, spec, 5) for r in rhos])
        diff = stats.observable_means[spec.name][window] - exact
        se = stats.observable_se[spec.name][window]
        passed = bool(np.all(np.abs(diff) <= SIGMA_FACTOR * se))
        record_criterion(2, spec.name, passed, f"max|diff|={np.abs(diff).max():.4f} max|diff|/se={max_ratio(diff, se):.2f}")
        ok &= passed
    assert ok


# -- 3: step-size scaling of the sampling-free channel ----------------------------------


def test_step_size_error_scaling(repo_root, record_criterion):
    cfg = load_config(repo_root / "configs" / "scan_dt.cfg")
    point = run_points(cfg)[0]
    assert point.model.n_sites == 3 and cfg.sim.t_final == 10.0
    grid = [1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01]
    errors = scan_dt(point.model, initial_state(cfg, point.model), 10.0, grid)
    fit = fit_scaling_exponent(zip(grid, errors))
    passed = 0.6 <= fit.exponent <= 1.05 and fit.r_squared >= 0.95
    record_criterion(3, "exponent", passed, f"exponent={fit.exponent:.4f} r2={fit.r_squared:.4f}")
    assert passed


# -- 4: postselection success probability --------------------------------------------------------


def test_success_probability(record_criterion):
    k = 10_000
    sim = SimConfig(0.1, 10.0, k, scheme=Scheme.NLME_2DILATION)
    stats = run_ensemble(build_atom(0.0, 0.5, 1.0), sim, [], EXCITED, record_steps=[sim.n_steps], keep_samples=False)
    p = 0.95**100
    sigma = math.sqrt(p * (1 - p) / k)
    z = (stats.k_eff / k - p) / sigma
    passed = abs(z) <= SIGMA_FACTOR
    record_criterion(4, "eta=1 survival", passed, f"K_eff/K={stats.k_eff / k:.5f} expected={p:.5f} z={z:.2f}")

    lme = run_ensemble(build_atom(0.0, 0.5, 0.0), SimConfig(0.1, 10.0, k), [], EXCITED, record_steps=[100], keep_samples=False)
    record_criterion(4, "eta=0 keeps all", lme.k_eff == k, f"K_eff={lme.k_eff}")
    assert passed and lme.k_eff == k


# -- 5: invariant property sweep ----------------------------------------------------------------------


def test_invariant_suite(record_criterion):
    checks = invariant_suite(n_channels=100)
    for c in checks:
        record_criterion(5, c.name, c.passed, f"measured={c.measured:.3e} tol={c.tolerance:.0e}")
    assert all(c.passed for c in checks)


# -- 6: one-step Choi error bound on the atom -----------------------------------------------------------


@pytest.mark.parametrize("dt", [0.1, 0.05, 0.01])
def test_choi_error_bound(dt, record_criterion):
    res = choi_error_bound_check(build_atom(1.0, 0.5), dt)
    passed = res.holds and abs(res.lam - 1.5) <= 1e-12
    record_criterion(6, f"dt={dt}", passed, f"distance={res.choi_distance:.3e} bound={res.bound:.3e} lambda={res.lam}")
    assert passed


# -- 7: localization contrast between jump phases ------------------------------------------------------------


def test_localization_dipr_gap(repo_root, record_criterion):
    cfg = load_config(repo_root / "configs" / "figS2.cfg")
    assert cfg.model.params.L_sites == 6 and cfg.sim.n_trajectories == 100
    final = {}
    for point in run_points(cfg):
        stats = run_ensemble(
            point.model,
            point.sim,
            [ObservableSpec("dipr", Kind.DIPR)],
            initial_state(cfg, point.model),
            record_steps=[point.sim.n_steps],
            keep_samples=False,
        )
        final[point.sweep_value] = (stats.observable_means["dipr"][-1], stats.observable_se["dipr"][-1])
    (hi, se_hi), (lo, se_lo) = final[math.pi], final[0.0]
    gap, combined = hi - lo, math.hypot(se_hi, se_lo)
    passed = gap > 2 * combined
    record_criterion(7, "dIPR(beta=pi) - dIPR(beta=0)", passed, f"gap={gap:.4f} 2*SE={2 * combined:.4f}")
    assert passed


# -- 8: postselected skin effect ---------------------------------------------------------------------------------


def _time_averaged_abs_imbalance(occ):
    """Jackknife value and SE of mean_t |IB(t)|; ``occ`` is (K, L, n_times)."""
    return jackknife(occ, lambda m: np.abs(imbalance(np.moveaxis(m, -2, -1))).mean(axis=-1))


def _skin_survival(eta, times):
    """Predicted postselection survival: prod_n (1 - eta gamma dt sum <L^dag L>) along the exact curve."""
    model = build_skin(ModelParams(J=1.0, gamma=2.0, eta=eta, alpha=SKIN_ALPHA, beta=SKIN_BETA, L_sites=6))
    psi0 = named_state("neel", 6)
    rhos = nlme_series(model, np.outer(psi0, psi0), times, h_int=1e-2)
    dt = times[1] - times[0]
    loss = [sum(ch.eta * ch.rate * np.trace(ch.jump_operator.conj().T @ ch.jump_operator @ r).real for ch in model.channels) for r in rhos[:-1]]
    return float(np.exp(np.sum(np.log1p(-dt * np.asarray(loss)))))


SKIN_ATTEMPTS = 10_000
MIN_VALID = 90


def test_skin_effect_imbalance(record_criterion):
    psi0 = named_state("neel", 6)
    specs = [ObservableSpec("ib", Kind.IMBALANCE)]
    record = np.arange(500, 1001, 10)  # t in [5, 10] at dt = 0.01
    results = {}
    for eta, k in ((0.4, SKIN_ATTEMPTS), (0.0, 100)):
        model = build_skin(ModelParams(J=1.0, gamma=2.0, eta=eta, alpha=SKIN_ALPHA, beta=SKIN_BETA, L_sites=6))
        sim = SimConfig(0.01, 10.0, k, scheme=Scheme.NLME_2DILATION)
        try:
            stats = run_ensemble(model, sim, specs, psi0, record_steps=record)
        except AllTrajectoriesDiscardedError:
            results[eta] = None
            continue
        occ = np.stack([stats.samples[s.name] for s in occupation_specs(6)], axis=1)[stats.alive]
        results[eta] = (occ.shape[0], *_time_averaged_abs_imbalance(occ))

    if results[0.4] is None or results[0.4][0] < MIN_VALID:
        valid = 0 if results[0.4] is None else results[0.4][0]
        survival = _skin_survival(0.4, np.linspace(0.0, 10.0, 1001))
        detail = (
            f"only {valid} of {SKIN_ATTEMPTS} trajectories survive postselection to t=10; "
            f"predicted survival {survival:.2e} needs K ~ {MIN_VALID / survival:.1e} for {MIN_VALID} valid runs"
        )
        record_criterion(8, "eta=0.4 valid trajectories", False, detail)
        pytest.fail(detail)

    (_, ib_post, se_post), (_, ib_plain, se_plain) = results[0.4], results[0.0]
    gap, combined = ib_post - ib_plain, math.hypot(se_post, se_plain)
    passed = gap > 2 * combined
    record_criterion(8, "time-averaged |IB| gap", passed, f"gap={gap:.4f} 2*SE={2 * combined:.4f} valid={results[0.4][0]}")
    assert passed


# -- 9: worker-count invariance of bundled runs ---------------------------------------------------------------------


@pytest.mark.parametrize("name", ["fig3a", "figS1", "figS2", "figS3"])
def test_bundled_config_bytes_do_not_depend_on_workers(name, repo_root, tmp_path, record_criterion):
    path = repo_root / "configs" / f"{name}.cfg"
    outputs = {}
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        assert main(["run", str(path), "--out", str(out), "--workers", str(workers)]) == 0
        outputs[workers] = {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}
    same = bool(outputs[1]) and outputs[1] == outputs[2]
    record_criterion(9, name, same, f"{len(outputs[1])} CSV file(s) compared")
    assert same
