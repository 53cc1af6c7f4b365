"""Command-line runner: ``simulator <run|compare|scan-dt|verify|dump-unitary> <config>``.

Configs are INI files. Numeric values may be arithmetic expressions over
``pi``, ``sqrt``, ``cos``, ``sin`` and ``exp``. ``configs/`` holds the bundled
experiments and the README documents the schema.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import hashlib
import json
import logging
import math
import operator
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dilation import (
    ancilla_block,
    assemble_one_dilation_enhh,
    assemble_one_dilation_lme,
    assemble_two_dilation,
    build_blocks,
    verify_unitarity,
)
from .errors import (
    ConfigError,
    DegenerateInputError,
    LindtrajError,
    ModelBuildError,
    SimulationError,
)
from .exact import (
    DEFAULT_H_INT,
    LiouvillePropagator,
    build_liouvillian,
    choi_error_bound_check,
    enhh_series,
    lme_series,
    nlme_series,
    unvec,
    vec,
)
from .model import (
    GOLDEN_OMEGA,
    SKIN_ALPHA,
    SKIN_BETA,
    DissipationChannel,
    ModelParams,
    OpenSystemModel,
    build_atom,
    build_localization,
    build_skin,
    build_xxz,
    default_initial_state,
    named_state,
)
from .observables import (
    Kind,
    ObservableSpec,
    expectation,
    fit_scaling_exponent,
    site_occupation,
    trace_error,
)
from .trajectory import (
    DEFAULT_SEED,
    Scheme,
    SimConfig,
    propagate_channel,
    run_ensemble,
    times_to_steps,
)

log = logging.getLogger("lindtraj")

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_MODEL = 3
EXIT_SIMULATION = 4

MODEL_TYPES = ("atom", "xxz", "localization", "skin", "custom")
AUTO_SCHEME = "auto"

# config key (lower case) -> ModelParams field
_PARAM_KEYS = {
    "j": "J",
    "delta": "Delta",
    "gamma": "gamma",
    "eta": "eta",
    "v": "V",
    "omega": "omega",
    "alpha": "alpha",
    "beta": "beta",
    "l": "L_sites",
    "sites": "L_sites",
}


# -- expression values ---------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_NAMES = {"pi": math.pi, "e": math.e}
_FUNCS = {"sqrt": math.sqrt, "cos": math.cos, "sin": math.sin, "exp": math.exp}


def eval_number(text: str) -> float:
    """Evaluate a small arithmetic expression such as ``-pi/2`` or ``1e-2``."""

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](walk(node.operand))
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS
            and len(node.args) == 1
            and not node.keywords
        ):
            return _FUNCS[node.func.id](walk(node.args[0]))
        raise ValueError(f"unsupported expression {text!r}")

    try:
        return float(walk(ast.parse(text.strip(), mode="eval")))
    except (SyntaxError, ZeroDivisionError, OverflowError) as exc:
        raise ValueError(f"cannot evaluate {text!r}: {exc}") from exc


def _split_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.replace("\n", ",").split(",") if tok.strip()]


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class ModelSection:
    kind: str
    params: ModelParams
    initial: str | None = None
    matrices_file: str | None = None
    eta_given: bool = False


@dataclass(frozen=True)
class Sweep:
    parameter: str  # ModelParams field name
    values: tuple[float, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    path: str
    model: ModelSection
    sim: SimConfig
    scheme_requested: str
    observables: tuple[str, ...]
    record_steps: tuple[int, ...] | None
    output_prefix: str
    sweep: Sweep | None = None
    dt_list: tuple[float, ...] = ()
    echo: dict = field(default_factory=dict)


class _LineIndex:
    """Line numbers of ``key =`` entries, since configparser does not keep them."""

    def __init__(self, text: str):
        self.lines: dict[tuple[str, str], int] = {}
        section = None
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
            elif section and line and line[0] not in "#;" and ("=" in line or ":" in line):
                key = line.split("=", 1)[0] if "=" in line else line.split(":", 1)[0]
                self.lines[(section, key.strip().lower())] = n

    def line(self, section: str, key: str) -> int | None:
        return self.lines.get((section, key.lower()))


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, index: _LineIndex):
        self.parser = parser
        self.index = index

    def error(self, section: str, key: str | None, message: str) -> ConfigError:
        line = self.index.line(section, key) if key else None
        return ConfigError(message, section=section, field=key, line=line)

    def raw(self, section: str, key: str, default=None):
        if not self.parser.has_section(section) or not self.parser.has_option(section, key):
            return default
        return self.parser.get(section, key)

    def number(self, section: str, key: str, default=None):
        text = self.raw(section, key)
        if text is None:
            return default
        try:
            return eval_number(text)
        except ValueError as exc:
            raise self.error(section, key, str(exc)) from None

    def integer(self, section: str, key: str, default=None):
        text = self.raw(section, key)
        try:
            return int(text)  # exact for 64-bit seeds, which floats are not
        except (TypeError, ValueError):
            pass
        value = self.number(section, key)
        if value is None:
            return default
        if value != int(value):
            raise self.error(section, key, f"{key} must be an integer, got {value}")
        return int(value)

    def numbers(self, section: str, key: str) -> tuple[float, ...]:
        text = self.raw(section, key)
        if text is None:
            return ()
        try:
            return tuple(eval_number(tok) for tok in _split_list(text))
        except ValueError as exc:
            raise self.error(section, key, str(exc)) from None


def _model_section(rd: _Reader, base_dir: Path) -> ModelSection:
    if not rd.parser.has_section("model"):
        raise ConfigError("missing [model] section", section="model")
    kind = (rd.raw("model", "type") or "").strip().lower()
    if kind not in MODEL_TYPES:
        raise rd.error("model", "type", f"model type must be one of {', '.join(MODEL_TYPES)}, got {kind!r}")
    values = {}
    for key in rd.parser.options("model"):
        if key in ("type", "initial", "file"):
            continue
        if key not in _PARAM_KEYS:
            raise rd.error("model", key, f"unknown model key {key!r}")
        if key in ("l", "sites"):
            values["L_sites"] = rd.integer("model", key)
        else:
            values[_PARAM_KEYS[key]] = rd.number("model", key)
    if kind == "skin":
        values.setdefault("alpha", SKIN_ALPHA)
        values.setdefault("beta", SKIN_BETA)
    values.setdefault("omega", GOLDEN_OMEGA)
    matrices = rd.raw("model", "file")
    if kind == "custom":
        if not matrices:
            raise rd.error("model", "file", "custom models need file = <path.npz>")
        matrices = str((base_dir / matrices).resolve())
    return ModelSection(kind, ModelParams(**values), rd.raw("model", "initial"), matrices, "eta" in values)


def _record_steps(rd: _Reader, dt: float, n_steps: int) -> tuple[int, ...] | None:
    times = rd.numbers("sim", "record_times")
    every = rd.integer("sim", "record_every")
    if times and every is not None:
        raise rd.error("sim", "record_times", "give either record_times or record_every, not both")
    if times:
        try:
            steps = times_to_steps(times, dt)
        except (ValueError, SimulationError) as exc:
            raise rd.error("sim", "record_times", str(exc)) from None
        if np.any(steps > n_steps) or np.any(steps < 0):
            raise rd.error("sim", "record_times", "record_times must lie in [0, t_final]")
        return tuple(int(s) for s in steps)
    if every is not None:
        if every < 1:
            raise rd.error("sim", "record_every", "record_every must be at least 1")
        return tuple(range(0, n_steps + 1, every))
    return None


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    """Parse and validate an experiment file. ``seed`` overrides the file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed config: {exc.message if hasattr(exc, 'message') else exc}", line=line) from None
    rd = _Reader(parser, _LineIndex(text))
    model = _model_section(rd, path.parent)

    if not parser.has_section("sim"):
        raise ConfigError("missing [sim] section", section="sim")
    dt = rd.number("sim", "dt")
    t_final = rd.number("sim", "t_final")
    if dt is None:
        raise rd.error("sim", "dt", "dt is required")
    if t_final is None:
        raise rd.error("sim", "t_final", "t_final is required")
    scheme = (rd.raw("sim", "scheme") or AUTO_SCHEME).strip().lower()
    known = {s.value for s in Scheme} | {AUTO_SCHEME}
    if scheme not in known:
        raise rd.error("sim", "scheme", f"scheme must be one of {sorted(known)}, got {scheme!r}")
    file_seed = rd.integer("sim", "seed", DEFAULT_SEED)
    try:
        sim = SimConfig(
            dt=dt,
            t_final=t_final,
            n_trajectories=rd.integer("sim", "trajectories", 1),
            seed=file_seed if seed is None else seed,
            scheme=Scheme.LME_1DILATION if scheme == AUTO_SCHEME else scheme,
            hamiltonian_mode=(rd.raw("sim", "hamiltonian_mode") or "exact_exp").strip(),
            step_order=(rd.raw("sim", "step_order") or "dissipation_then_hamiltonian").strip(),
            no_jump_branch=(rd.raw("sim", "no_jump_branch") or "dilation").strip(),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), section="sim") from None
    record = _record_steps(rd, sim.dt, sim.n_steps)

    names = tuple(_split_list(rd.raw("observables", "list", "") or ""))
    for name in names:
        try:
            observable_spec(name)
        except ValueError as exc:
            raise rd.error("observables", "list", str(exc)) from None

    sweep = None
    if parser.has_section("sweep"):
        key = (rd.raw("sweep", "parameter") or "").strip().lower()
        if key not in _PARAM_KEYS or key in ("l", "sites"):
            raise rd.error("sweep", "parameter", f"cannot sweep over {key!r}")
        values = rd.numbers("sweep", "values")
        if not values:
            raise rd.error("sweep", "values", "sweep needs at least one value")
        sweep = Sweep(_PARAM_KEYS[key], values)

    prefix = (rd.raw("output", "prefix") or path.stem).strip()
    echo = {s: dict(parser.items(s)) for s in parser.sections()}
    return ExperimentConfig(
        path=str(path),
        model=model,
        sim=sim,
        scheme_requested=scheme,
        observables=names,
        record_steps=record,
        output_prefix=prefix,
        sweep=sweep,
        dt_list=rd.numbers("scan", "dt_list"),
        echo=echo,
    )


def observable_spec(token: str) -> ObservableSpec:
    """``n<k>``, ``czz``, ``pe``, ``dipr`` or ``ib``."""
    tok = token.strip().lower()
    if tok in ("pe", "excited_pop"):
        return ObservableSpec(tok, Kind.EXCITED_POP)
    if tok == "czz":
        return ObservableSpec(tok, Kind.CORRELATION_ZZ)
    if tok == "dipr":
        return ObservableSpec(tok, Kind.DIPR)
    if tok in ("ib", "imbalance"):
        return ObservableSpec(tok, Kind.IMBALANCE)
    if tok.startswith("n") and tok[1:].isdigit() and int(tok[1:]) >= 1:
        return site_occupation(int(tok[1:]))
    raise ValueError(f"unknown observable {token!r}")


# -- model construction -----------------------------------------------------------


def _load_custom(path: str, eta_override: float | None) -> OpenSystemModel:
    try:
        data = np.load(path)
    except OSError as exc:
        raise ModelBuildError(f"cannot load {path}: {exc}") from None
    try:
        h = data["hamiltonian"]
        ops = data["jump_operators"]
        rates = data["rates"]
    except KeyError as exc:
        raise ModelBuildError(f"{path} lacks array {exc}") from None
    etas = data["etas"] if "etas" in data else np.zeros(len(rates))
    if eta_override is not None:
        etas = np.full(len(rates), eta_override)
    if not (len(ops) == len(rates) == len(etas)):
        raise ModelBuildError("jump_operators, rates and etas must have equal length")
    n_sites = int(round(math.log2(h.shape[0])))
    if 2**n_sites != h.shape[0]:
        raise ModelBuildError(f"dimension {h.shape[0]} is not a power of two")
    channels = tuple(DissipationChannel(op, float(r), float(e)) for op, r, e in zip(ops, rates, etas))
    return OpenSystemModel(h, channels, n_sites, name="custom")


def build_model(section: ModelSection, params: ModelParams | None = None) -> OpenSystemModel:
    swept = params is not None
    params = params or section.params
    if section.kind == "atom":
        return build_atom(params.J, params.gamma, params.eta)
    if section.kind == "xxz":
        model = build_xxz(params)
        return model.with_eta(params.eta) if params.eta else model
    if section.kind == "localization":
        return build_localization(params)
    if section.kind == "skin":
        return build_skin(params)
    # a file's per-channel etas stand unless [model] or a sweep sets eta
    override = params.eta if (swept or section.eta_given) else None
    return _load_custom(section.matrices_file, override)


@dataclass(frozen=True)
class RunPoint:
    label: str
    stem: str
    model: OpenSystemModel
    sim: SimConfig
    sweep_value: float | None


def _format_value(value: float) -> str:
    return f"{value:.6g}".replace("-", "m")


def _scheme_for(model: OpenSystemModel, requested: str, sim: SimConfig) -> SimConfig:
    if requested != AUTO_SCHEME:
        return sim
    scheme = Scheme.LME_1DILATION if np.all(model.etas == 0.0) else Scheme.NLME_2DILATION
    return replace(sim, scheme=scheme)


def run_points(cfg: ExperimentConfig) -> list[RunPoint]:
    """One model per sweep value (or just one)."""
    if cfg.sweep is None:
        model = build_model(cfg.model)
        return [RunPoint("", cfg.output_prefix, model, _scheme_for(model, cfg.scheme_requested, cfg.sim), None)]
    points = []
    for value in cfg.sweep.values:
        params = replace(cfg.model.params, **{cfg.sweep.parameter: value})
        model = build_model(cfg.model, params)
        tag = f"{cfg.sweep.parameter}{_format_value(value)}"
        points.append(
            RunPoint(tag, f"{cfg.output_prefix}_{tag}", model, _scheme_for(model, cfg.scheme_requested, cfg.sim), value)
        )
    return points


def initial_state(cfg: ExperimentConfig, model: OpenSystemModel) -> np.ndarray:
    name = cfg.model.initial or default_initial_state(model)
    try:
        return named_state(name, model.n_sites)
    except ValueError as exc:
        raise ConfigError(str(exc), section="model", field="initial") from None


def _steps(cfg: ExperimentConfig, sim: SimConfig) -> np.ndarray:
    if cfg.record_steps is None:
        return np.arange(sim.n_steps + 1)
    return np.asarray(cfg.record_steps, dtype=np.int64)


# -- output ------------------------------------------------------------------------


def fmt(value) -> str:
    """17 significant digits; NaN becomes an empty field."""
    value = float(value)
    return "" if math.isnan(value) else f"{value:.16e}"


def write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    rows = [",".join(header)]
    for i in range(len(columns[0])):
        rows.append(",".join(fmt(col[i]) for col in columns))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


@dataclass
class RunSummary:
    command: str
    label: str
    config: dict
    k_total: int
    k_eff: int
    wall_time: float
    final_values: dict  # name -> {"mean": float | None, "se": float | None}
    seed: int
    version: str
    invariants: dict
    invariant_digest: str
    status: str = "ok"
    message: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        return cls(**json.loads(text))


def _clean(value):
    value = float(value)
    return None if math.isnan(value) else value


def invariant_digest(invariants: dict) -> str:
    payload = json.dumps(invariants, sort_keys=True, allow_nan=False)
    return hashlib.sha256(payload.encode()).hexdigest()


def _write_summary(out: Path, stem: str, summary: RunSummary) -> Path:
    path = out / f"{stem}_summary.json"
    path.write_text(summary.to_json() + "\n")
    return path


# -- run ----------------------------------------------------------------------------


def _exact_states(model: OpenSystemModel, sim: SimConfig, psi0: np.ndarray, times: np.ndarray):
    rho0 = np.outer(psi0, psi0.conj())
    if sim.scheme is Scheme.ENHH_1DILATION:
        return [np.outer(p, p.conj()) for p in enhh_series(model, psi0, times)]
    if np.all(model.etas == 0.0):
        return lme_series(model, rho0, times)
    return nlme_series(model, rho0, times, h_int=min(DEFAULT_H_INT, sim.dt / 10))


def _series_from_states(states, specs, n_sites) -> dict[str, np.ndarray]:
    out = {}
    for spec in specs:
        out[spec.name] = np.array([expectation(rho, spec, n_sites) for rho in states])
    return out


def _channel_point(cfg, point, specs, psi0):
    steps = _steps(cfg, point.sim)
    rhos = propagate_channel(point.model, np.outer(psi0, psi0.conj()), point.sim, steps)
    means = _series_from_states(rhos, specs, point.model.n_sites)
    zeros = {k: np.zeros_like(v) for k, v in means.items()}
    nans = {k: np.full_like(v, np.nan) for k, v in means.items()}
    trace_err = max(abs(np.trace(r).real - 1.0) for r in rhos)
    return steps * point.sim.dt, means, zeros, nans, 1, 1, {"max_trace_error": trace_err}


def _sampled_point(cfg, point, specs, psi0, workers):
    stats = run_ensemble(
        point.model,
        point.sim,
        specs,
        psi0,
        record_steps=_steps(cfg, point.sim),
        workers=workers,
        keep_samples=False,
    )
    return (
        stats.times,
        stats.observable_means,
        stats.observable_sd,
        stats.observable_se,
        stats.k_total,
        stats.k_eff,
        dict(stats.diagnostics),
    )


def _point_invariants(point: RunPoint, diagnostics: dict) -> dict:
    blocks = [build_blocks(ch, point.sim.dt, mu) for mu, ch in enumerate(point.model.channels)]
    inv = {k: float(v) for k, v in diagnostics.items()}
    inv["max_unitarity_error"] = max((verify_unitarity(assemble_two_dilation(b)) for b in blocks), default=0.0)
    inv["max_completeness_error"] = max((b.completeness_error() for b in blocks), default=0.0)
    return inv


def command_run(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    specs = [observable_spec(n) for n in cfg.observables]
    failed = False
    for point in run_points(cfg):
        psi0 = initial_state(cfg, point.model)
        start = time.perf_counter()
        status, message = "ok", ""
        try:
            if point.sim.scheme is Scheme.DETERMINISTIC_CHANNEL:
                result = _channel_point(cfg, point, specs, psi0)
            else:
                result = _sampled_point(cfg, point, specs, psi0, workers)
            invariants = _point_invariants(point, result[-1])
        except SimulationError as exc:
            # keep going through the sweep; the exit code reports the failure
            failed = True
            status, message = "failed", f"{type(exc).__name__}: {exc}"
            log.error("%s: %s", point.stem, message)
            result, invariants = None, {}
        wall = time.perf_counter() - start
        if result is None:
            k_total, k_eff, final = point.sim.n_trajectories, 0, {}
        else:
            times, means, sds, ses, k_total, k_eff, _ = result
            if specs:
                header = ["time"]
                columns = [times]
                for spec in specs:
                    header += [f"{spec.name}_mean", f"{spec.name}_sd", f"{spec.name}_se"]
                    columns += [means[spec.name], sds[spec.name], ses[spec.name]]
                write_csv(out / f"{point.stem}.csv", header, columns)
            final = {s.name: {"mean": _clean(means[s.name][-1]), "se": _clean(ses[s.name][-1])} for s in specs}
        summary = RunSummary(
            command="run",
            label=point.label,
            config=cfg.echo,
            k_total=k_total,
            k_eff=k_eff,
            wall_time=wall,
            final_values=final,
            seed=point.sim.seed,
            version=__version__,
            invariants=invariants,
            invariant_digest=invariant_digest(invariants),
            status=status,
            message=message,
        )
        _write_summary(out, point.stem, summary)
        print(f"{point.stem}: {status} K={k_total} K_eff={k_eff} wall={wall:.2f}s")
    return EXIT_SIMULATION if failed else EXIT_OK


# -- compare ----------------------------------------------------------------------------


def command_compare(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    specs = [observable_spec(n) for n in cfg.observables]
    if not specs:
        raise ConfigError("compare needs at least one observable", section="observables", field="list")
    for point in run_points(cfg):
        psi0 = initial_state(cfg, point.model)
        if point.sim.scheme is Scheme.DETERMINISTIC_CHANNEL:
            times, means, _, ses, *_ = _channel_point(cfg, point, specs, psi0)
        else:
            times, means, _, ses, *_ = _sampled_point(cfg, point, specs, psi0, workers)
        exact = _series_from_states(_exact_states(point.model, point.sim, psi0, times), specs, point.model.n_sites)
        for spec in specs:
            diff = np.abs(means[spec.name] - exact[spec.name])
            write_csv(
                out / f"{point.stem}_compare_{spec.name}.csv",
                ["time", "trajectory_mean", "exact_value", "abs_diff", "se"],
                [times, means[spec.name], exact[spec.name], diff, ses[spec.name]],
            )
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = np.nanmax(np.where(ses[spec.name] > 0, diff / ses[spec.name], np.nan), initial=0.0)
            print(f"{point.stem} {spec.name}: max|diff|={np.nanmax(diff):.3e} max|diff|/se={ratio:.3f}")
    return EXIT_OK


# -- scan-dt ----------------------------------------------------------------------------------


def scan_dt(model: OpenSystemModel, psi0, t_final: float, dt_list, hamiltonian_mode="exact_exp"):
    """Channel-mode trace error at ``t_final`` for each step size."""
    rho0 = np.outer(psi0, psi0.conj())
    prop = LiouvillePropagator.from_generator(build_liouvillian(model))
    exact = unvec(prop(t_final) @ vec(rho0), model.dim)
    errors = []
    for dt in dt_list:
        sim = SimConfig(dt, t_final, scheme=Scheme.DETERMINISTIC_CHANNEL, hamiltonian_mode=hamiltonian_mode)
        rho = propagate_channel(model, rho0, sim, [sim.n_steps])[-1]
        errors.append(trace_error(rho, exact))
    return np.asarray(errors)


def command_scan_dt(cfg: ExperimentConfig, out: Path, dt_list) -> int:
    dt_list = tuple(dt_list) if dt_list else cfg.dt_list
    if not dt_list:
        raise ConfigError("no step sizes: give [scan] dt_list or --dt-list", section="scan", field="dt_list")
    point = run_points(cfg)[0]
    psi0 = initial_state(cfg, point.model)
    try:
        errors = scan_dt(point.model, psi0, cfg.sim.t_final, dt_list, cfg.sim.hamiltonian_mode)
    except ValueError as exc:
        raise ConfigError(str(exc), section="scan", field="dt_list") from None
    write_csv(out / f"{cfg.output_prefix}_scan.csv", ["dt", "trace_error"], [np.asarray(dt_list), errors])
    report = {"dt": list(dt_list), "trace_error": errors.tolist()}
    try:
        fit = fit_scaling_exponent(zip(dt_list, errors))
        report.update(exponent=fit.exponent, prefactor=fit.prefactor, r_squared=fit.r_squared)
        print(f"exponent={fit.exponent:.4f} prefactor={fit.prefactor:.4e} r2={fit.r_squared:.4f}")
    except DegenerateInputError as exc:
        log.warning("no fit: %s", exc)
    (out / f"{cfg.output_prefix}_scan_fit.json").write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


# -- dump-unitary --------------------------------------------------------------------------


def assembled_unitary(blocks, scheme: Scheme) -> np.ndarray:
    if scheme is Scheme.LME_1DILATION:
        return assemble_one_dilation_lme(blocks)
    if scheme is Scheme.ENHH_1DILATION:
        return assemble_one_dilation_enhh(blocks)
    return assemble_two_dilation(blocks)


def command_dump_unitary(cfg: ExperimentConfig, out: Path) -> int:
    for point in run_points(cfg):
        scheme = point.sim.scheme
        if scheme is Scheme.DETERMINISTIC_CHANNEL:
            scheme = Scheme.LME_1DILATION
        for mu, ch in enumerate(point.model.channels):
            u = assembled_unitary(build_blocks(ch, point.sim.dt, mu), scheme)
            rows, cols = np.indices(u.shape)
            path = out / f"{point.stem}_unitary_{mu + 1}.csv"
            with open(path, "w", newline="\n") as fh:
                fh.write("row,col,re,im\n")
                for r, c in zip(rows.ravel(), cols.ravel()):
                    fh.write(f"{r},{c},{fmt(u[r, c].real)},{fmt(u[r, c].imag)}\n")
            print(f"{path.name}: {u.shape[0]}x{u.shape[1]} unitarity error {verify_unitarity(u):.2e}")
    return EXIT_OK


# -- verify --------------------------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""


def _random_channel(rng: np.random.Generator, dim: int) -> tuple[DissipationChannel, float]:
    op = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    op /= np.linalg.norm(op, 2)
    rate = rng.uniform(0.1, 2.0)
    dt = rng.uniform(0.01, 1.0) / rate  # gamma dt ||L||^2 <= 1
    return DissipationChannel(op, rate, rng.uniform(0.0, 1.0)), dt


def _max_check(name: str, values, tolerance: float) -> Check:
    worst = float(max(values))
    return Check(name, worst, tolerance, worst <= tolerance)


def invariant_suite(n_channels: int = 100, seed: int = DEFAULT_SEED, extra: ExperimentConfig | None = None) -> list[Check]:
    rng = np.random.default_rng(seed)
    unit, comp, forbid = [], [], []
    for k in range(n_channels):
        channel, dt = _random_channel(rng, 2 if k % 2 else 4)
        blocks = build_blocks(channel, dt)
        comp.append(blocks.completeness_error())
        u2 = assemble_two_dilation(blocks)
        unit.append(verify_unitarity(u2))
        forbid.append(float(np.max(np.abs(ancilla_block(u2, 3, 0, 4)), initial=0.0)))
        unit.append(verify_unitarity(assemble_one_dilation_lme(build_blocks(channel.with_eta(0.0), dt))))
        unit.append(verify_unitarity(assemble_one_dilation_enhh(build_blocks(channel.with_eta(1.0), dt))))
    checks = [
        _max_check("dilation unitarity (random channels)", unit, 1e-9),
        _max_check("completeness A^dag A + B^dag B + C^dag C = 1", comp, 1e-10),
        _max_check("forbidden ancilla branch <11|U|00>", forbid, 1e-12),
    ]

    atom = build_atom(1.0, 0.5, 0.0)
    psi0 = named_state("excited", 1)
    rho0 = np.outer(psi0, psi0.conj())
    sim = SimConfig(0.1, 10.0, scheme=Scheme.DETERMINISTIC_CHANNEL)
    checks.append(
        _max_check("channel mode trace preservation", [abs(np.trace(r).real - 1) for r in propagate_channel(atom, rho0, sim)], 1e-12)
    )
    times = np.linspace(0.0, 10.0, 11)
    checks.append(
        _max_check("LME propagation trace preservation", [abs(np.trace(r).real - 1) for r in lme_series(atom, rho0, times)], 1e-10)
    )
    nl = nlme_series(atom.with_eta(0.5), rho0, times)
    checks.append(_max_check("NLME integration trace preservation", [abs(np.trace(r).real - 1) for r in nl], 1e-6))
    enhh = enhh_series(atom.with_eta(1.0), psi0, times)
    checks.append(_max_check("ENHH state normalization", [abs(np.linalg.norm(p) - 1) for p in enhh], 1e-12))
    stats = run_ensemble(atom.with_eta(0.5), SimConfig(0.1, 10.0, 64, scheme=Scheme.NLME_2DILATION), [], psi0)
    checks.append(Check("trajectory normalization per step", stats.diagnostics["max_norm_error"], 1e-10, stats.diagnostics["max_norm_error"] <= 1e-10))
    checks.append(
        Check(
            "outcome probabilities sum to one",
            stats.diagnostics["max_probability_error"],
            1e-8,
            stats.diagnostics["max_probability_error"] <= 1e-8,
        )
    )
    for dt in (0.1, 0.05, 0.01):
        res = choi_error_bound_check(atom, dt)
        checks.append(
            Check(f"Choi error bound at dt={dt}", res.choi_distance, res.bound, res.holds, f"lambda={res.lam:.4g}")
        )

    if extra is not None:
        try:
            for point in run_points(extra):
                worst = max(
                    (build_blocks(ch, point.sim.dt, mu).completeness_error() for mu, ch in enumerate(point.model.channels)),
                    default=0.0,
                )
                checks.append(_max_check(f"config {point.stem} completeness", [worst], 1e-10))
        except (SimulationError, ModelBuildError) as exc:
            checks.append(Check(f"config {extra.output_prefix}", math.nan, math.nan, False, f"{type(exc).__name__}: {exc}"))
    return checks


def command_verify(extra: ExperimentConfig | None) -> int:
    checks = invariant_suite(extra=extra)
    for c in checks:
        state = "PASS" if c.passed else "FAIL"
        detail = f" ({c.detail})" if c.detail else ""
        print(f"{state} {c.name}: measured {c.measured:.3e} <= {c.tolerance:.3e}{detail}")
    passed = all(c.passed for c in checks)
    print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


# -- entry point --------------------------------------------------------------------------------


def _configure_logging() -> None:
    level = os.environ.get("SIM_LOG", "off").strip().lower()
    levels = {"off": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _parse_dt_list(text: str) -> list[float]:
    try:
        return [eval_number(tok) for tok in _split_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulator", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "compare", "scan-dt", "verify", "dump-unitary"):
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?" if name == "verify" else None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", type=Path, default=Path("."))
        if name == "scan-dt":
            p.add_argument("--dt-list", type=_parse_dt_list, default=None)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    _configure_logging()
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, seed=args.seed) if args.config else None
        if args.command != "verify":
            args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            return command_run(cfg, args.out, workers)
        if args.command == "compare":
            return command_compare(cfg, args.out, workers)
        if args.command == "scan-dt":
            return command_scan_dt(cfg, args.out, args.dt_list)
        if args.command == "dump-unitary":
            return command_dump_unitary(cfg, args.out)
        return command_verify(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelBuildError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except SimulationError as exc:
        print(f"simulation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except LindtrajError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
