"""Declarative simulation scenarios and the Monte-Carlo orchestrator.

A scenario file is a nested YAML mapping whose physical keys carry
explicit units (``t1_us``, ``j0_hz``); everything is converted to SI
radians/seconds once, at load time, and never re-parsed downstream. A
scenario may fan out into variants through a ``scan`` block (one
parameter, many values) and an ``arms`` block (named overrides, such as
a decoupled arm against a plain one); the output bundle then tags every
series and fit with the variant label.

Trajectories are seeded from one master integer through a fixed-order
seed expansion, so results are bit-identical for any worker count.
"""

import hashlib
import io
import json
import math
import multiprocessing
import os
import time
from dataclasses import dataclass, replace, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (
    ObservableSeries,
    fit_damped_cosine,
    fit_exponential_decay,
    generalized_imbalance,
    write_fits_csv,
    write_series_csv,
)
from .ionchain import (
    ToneConfig,
    TrapConfig,
    coupling_matrix,
    solve_tones,
    transverse_modes,
)
from .noise import (
    DetuningNoiseConfig,
    HeatingNoiseConfig,
    NoiseModel,
    SILENT,
    StarkNoiseConfig,
)
from .pauli import GlobalRotation, product_state
from .propagator import (
    SpinPhononState,
    evolve,
    evolve_spin_only,
    program_from_sequence,
)
from .sequences import (
    PulseSequence,
    Segment,
    average_hamiltonian,
    build_cpmg,
    build_heisenberg,
    build_hs_modified,
    build_xy,
    build_xy2,
    ising_target,
    load_sequence_file,
    rotating_frame_phase_schedule,
)
from .shaping import PulseShape, beta_for

TAU = 2.0 * math.pi

DEFAULT_REALIZATIONS = 20
DEFAULT_DT = 15e-9
DEFAULT_N_MAX = 2

# The full spin-phonon register grows as 2^N (n_max+1)^N; past a few
# ions it stops being a desk-scale engine.
FULL_ENGINE_MAX_IONS = 4

_ENGINES = ("full", "sequence", "average")
_BUILDERS = ("cpmg", "xy", "xy2", "heisenberg", "hs_modified", "plain")
_NAMED_STATES = ("polarized-x", "polarized-y", "polarized-z",
                 "neel-x", "neel-y", "neel-z")
_OBSERVABLES = ("sx", "sy", "sz", "imbalance")
_FIT_MODELS = ("damped_cosine", "exponential")


class ScenarioConfigError(ValueError):
    """A scenario file that cannot be resolved into a runnable plan."""


@dataclass(frozen=True)
class FitSpec:
    model: str
    observable: str


@dataclass(frozen=True)
class Variant:
    """One point of the scan/arm fan-out: field overrides plus a label."""

    label: str
    overrides: tuple = ()


@dataclass(frozen=True)
class Scenario:
    """A fully resolved simulation plan (SI units, angular frequencies)."""

    name: str
    trap: TrapConfig
    j0: float
    detuning_ratio: float
    builder: str
    sequence_path: str | None
    t1: float
    t_pi: float
    bz: float
    shape: PulseShape | None
    noise: NoiseModel
    initial_state: tuple[str, ...]
    engine: str
    realizations: int
    seed: int
    max_time: float
    sample_every: int
    n_max: int
    dt: float
    observables: tuple[str, ...]
    fits: tuple[FitSpec, ...]
    variants: tuple[Variant, ...] = (Variant(""),)
    description: str = ""


# ---------------------------------------------------------------------------
# config parsing


def _require_keys(section: dict, allowed: set, context: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ScenarioConfigError(
            f"unknown key(s) {sorted(unknown)} in {context}; "
            f"allowed: {sorted(allowed)}")


def _hz(value) -> float:
    return TAU * float(value)


def _mhz(value) -> float:
    return TAU * 1e6 * float(value)


def _us(value) -> float:
    return 1e-6 * float(value)


def _ms(value) -> float:
    return 1e-3 * float(value)


def _parse_trap(section) -> TrapConfig:
    _require_keys(section, {"ions", "omega_xy_mhz", "omega_z_mhz"}, "trap")
    try:
        return TrapConfig(int(section["ions"]),
                          _mhz(section["omega_xy_mhz"]),
                          _mhz(section["omega_z_mhz"]))
    except KeyError as exc:
        raise ScenarioConfigError(f"trap section is missing {exc}") from exc


def _parse_shape(section) -> PulseShape | None:
    if section is None:
        return None
    _require_keys(section, {"kind", "ramp_us"}, "shape")
    kind = section.get("kind", "flat")
    if kind == "flat":
        return None
    if kind != "tukey":
        raise ScenarioConfigError(f"unknown shape kind {kind!r}")
    if "ramp_us" not in section:
        raise ScenarioConfigError("tukey shape needs ramp_us")
    ramp = _us(section["ramp_us"])
    # duration is refit to each segment at program-build time
    return PulseShape.tukey(ramp, 4.0 * ramp)


def _parse_noise(section) -> NoiseModel:
    if section is None:
        return SILENT
    allowed = {"profile", "stark_fractional_sigma", "detuning_sigma_hz",
               "heating_kick_amplitude"}
    _require_keys(section, allowed, "noise")
    profile = section.get("profile", "silent")
    if profile == "silent":
        model = SILENT
    elif profile == "bench":
        model = NoiseModel.bench_default()
    else:
        raise ScenarioConfigError(f"unknown noise profile {profile!r}")
    stark = model.stark
    detuning = model.detuning
    heating = model.heating
    if "stark_fractional_sigma" in section:
        sigma = float(section["stark_fractional_sigma"])
        stark = None if sigma == 0.0 else \
            replace(stark or StarkNoiseConfig(), fractional_sigma=sigma)
    if "detuning_sigma_hz" in section:
        sigma = _hz(section["detuning_sigma_hz"])
        detuning = None if sigma == 0.0 else \
            replace(detuning or DetuningNoiseConfig(), sigma=sigma)
    if "heating_kick_amplitude" in section:
        amp = float(section["heating_kick_amplitude"])
        heating = None if amp == 0.0 else \
            replace(heating or HeatingNoiseConfig(), kick_amplitude=amp)
    return NoiseModel(stark, detuning, heating)


def _resolve_initial(state, ions: int) -> tuple[str, ...]:
    if isinstance(state, str):
        if state not in _NAMED_STATES:
            raise ScenarioConfigError(
                f"unknown named state {state!r}; known: {_NAMED_STATES}")
        kind, axis = state.split("-")
        if kind == "polarized":
            return tuple(f"+{axis}" for _ in range(ions))
        return tuple(f"+{axis}" if k % 2 == 0 else f"-{axis}"
                     for k in range(ions))
    tokens = tuple(str(token) for token in state)
    if len(tokens) != ions:
        raise ScenarioConfigError(
            f"initial state lists {len(tokens)} sites for {ions} ions")
    valid = {f"{sign}{axis}" for sign in "+-" for axis in "xyz"}
    for token in tokens:
        if token not in valid:
            raise ScenarioConfigError(f"bad initial-state token {token!r}")
    return tokens


# Dotted config paths that a scan or an arm override may target, with
# the Scenario field they map to and the unit conversion applied.
_OVERRIDE_TARGETS = {
    "drive.j0_hz": ("j0", _hz),
    "drive.detuning_ratio": ("detuning_ratio", float),
    "drive.bz_hz": ("bz", _hz),
    "sequence.builder": ("builder", str),
    "sequence.t1_us": ("t1", _us),
    "sequence.t_pi_us": ("t_pi", _us),
    "engine": ("engine", str),
    "initial_state": ("initial_state", None),
    "run.max_time_ms": ("max_time", _ms),
}


def _convert_override(path: str, value, ions: int):
    if path not in _OVERRIDE_TARGETS:
        raise ScenarioConfigError(
            f"cannot scan or override {path!r}; supported: "
            f"{sorted(_OVERRIDE_TARGETS)}")
    name, convert = _OVERRIDE_TARGETS[path]
    if convert is None:
        return name, _resolve_initial(value, ions)
    return name, convert(value)


def _expand_variants(config, ions: int) -> tuple[Variant, ...]:
    scan = config.get("scan")
    arms = config.get("arms")
    scan_points = [("", ())]
    if scan is not None:
        _require_keys(scan, {"parameter", "values"}, "scan")
        parameter = scan["parameter"]
        points = []
        for value in scan["values"]:
            name, converted = _convert_override(parameter, value, ions)
            points.append((f"r{value:g}", ((name, converted),)))
        scan_points = points
    arm_points = [("", ())]
    if arms is not None:
        points = []
        for arm_name, overrides in arms.items():
            pairs = tuple(_convert_override(path, value, ions)
                          for path, value in (overrides or {}).items())
            points.append((str(arm_name), pairs))
        arm_points = points
    variants = []
    for scan_label, scan_over in scan_points:
        for arm_label, arm_over in arm_points:
            label = ".".join(part for part in (scan_label, arm_label)
                             if part)
            variants.append(Variant(label, scan_over + arm_over))
    return tuple(variants)


def load_scenario(source) -> Scenario:
    """Parse a scenario from YAML text, a file path, or a builtin name."""
    if isinstance(source, str) and source in CATALOG:
        text = CATALOG[source]
    elif isinstance(source, str) and "\n" not in source:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source
    config = yaml.safe_load(text)
    if not isinstance(config, dict):
        raise ScenarioConfigError("scenario file must be a mapping")
    allowed = {"name", "description", "trap", "drive", "sequence", "shape",
               "noise", "initial_state", "engine", "run", "observables",
               "fits", "scan", "arms"}
    _require_keys(config, allowed, "scenario")
    for key in ("name", "trap", "drive", "sequence", "initial_state",
                "engine", "run"):
        if key not in config:
            raise ScenarioConfigError(f"scenario is missing {key!r}")

    trap = _parse_trap(config["trap"])

    drive = config["drive"]
    _require_keys(drive, {"j0_hz", "detuning_ratio", "bz_hz"}, "drive")
    if "j0_hz" not in drive or "detuning_ratio" not in drive:
        raise ScenarioConfigError("drive needs j0_hz and detuning_ratio")

    sequence = config["sequence"]
    _require_keys(sequence, {"builder", "file", "t1_us", "t_pi_us"},
                  "sequence")
    builder = sequence.get("builder")
    sequence_path = sequence.get("file")
    if (builder is None) == (sequence_path is None):
        raise ScenarioConfigError(
            "sequence needs exactly one of builder or file")
    if builder is not None and builder not in _BUILDERS:
        raise ScenarioConfigError(
            f"unknown builder {builder!r}; known: {_BUILDERS}")
    if builder is not None and "t1_us" not in sequence:
        raise ScenarioConfigError("builder sequences need t1_us")

    run_cfg = config["run"]
    _require_keys(run_cfg, {"realizations", "seed", "max_time_ms",
                            "sample_every", "n_max", "dt_ns"}, "run")
    for key in ("seed", "max_time_ms"):
        if key not in run_cfg:
            raise ScenarioConfigError(f"run section needs {key!r}")

    engine = config["engine"]
    if engine not in _ENGINES:
        raise ScenarioConfigError(
            f"unknown engine {engine!r}; known: {_ENGINES}")

    observables = tuple(config.get("observables", ("sz",)))
    for observable in observables:
        if observable not in _OBSERVABLES:
            raise ScenarioConfigError(
                f"unknown observable {observable!r}; known: {_OBSERVABLES}")

    fits = []
    for entry in config.get("fits", ()):
        _require_keys(entry, {"model", "observable"}, "fits")
        model = entry.get("model")
        if model not in _FIT_MODELS:
            raise ScenarioConfigError(
                f"unknown fit model {model!r}; known: {_FIT_MODELS}")
        target = entry.get("observable", "sz")
        if target not in observables:
            raise ScenarioConfigError(
                f"fit targets {target!r} which is not in observables")
        fits.append(FitSpec(model, target))

    ions = trap.n_ions
    scenario = Scenario(
        name=str(config["name"]),
        trap=trap,
        j0=_hz(drive["j0_hz"]),
        detuning_ratio=float(drive["detuning_ratio"]),
        builder=builder or "file",
        sequence_path=sequence_path,
        t1=_us(sequence.get("t1_us", 0.0)),
        t_pi=_us(sequence.get("t_pi_us", 0.0)),
        bz=_hz(drive.get("bz_hz", 0.0)),
        shape=_parse_shape(config.get("shape")),
        noise=_parse_noise(config.get("noise")),
        initial_state=_resolve_initial(config["initial_state"], ions),
        engine=engine,
        realizations=int(run_cfg.get("realizations", DEFAULT_REALIZATIONS)),
        seed=int(run_cfg["seed"]),
        max_time=_ms(run_cfg["max_time_ms"]),
        sample_every=int(run_cfg.get("sample_every", 1)),
        n_max=int(run_cfg.get("n_max", DEFAULT_N_MAX)),
        dt=1e-9 * float(run_cfg.get("dt_ns", DEFAULT_DT / 1e-9)),
        observables=observables,
        fits=tuple(fits),
        variants=_expand_variants(config, ions),
        description=str(config.get("description", "")),
    )
    _check_compatibility(scenario)
    return scenario


def _apply_variant(scenario: Scenario, variant: Variant) -> Scenario:
    changed = replace(scenario, **dict(variant.overrides))
    _check_compatibility(changed)
    return changed


def _check_compatibility(scenario: Scenario) -> None:
    """Reject plans whose engine cannot honor the rest of the config."""
    for variant in scenario.variants:
        fields = dict(variant.overrides)
        engine = fields.get("engine", scenario.engine)
        if engine == "average" and not scenario.noise.silent:
            raise ScenarioConfigError(
                "the average-Hamiltonian engine is noise-free; use the "
                "sequence or full engine for noisy runs")
        if engine == "full" and scenario.trap.n_ions > FULL_ENGINE_MAX_IONS:
            raise ScenarioConfigError(
                f"the full spin-phonon engine is sized for at most "
                f"{FULL_ENGINE_MAX_IONS} ions; use a spin-only engine")
        builder = fields.get("builder", scenario.builder)
        if scenario.bz != 0.0 and builder not in ("cpmg", "xy", "plain"):
            raise ScenarioConfigError(
                f"builder {builder!r} does not take a longitudinal field")
    if scenario.realizations < 1:
        raise ScenarioConfigError("need at least one realization")
    if scenario.max_time <= 0.0:
        raise ScenarioConfigError("max_time must be positive")
    if "imbalance" in scenario.observables:
        letters = {token[1] for token in scenario.initial_state}
        if len(letters) != 1:
            raise ScenarioConfigError(
                "imbalance needs a single-axis initial pattern")
        axis = letters.pop()
        if f"s{axis}" not in scenario.observables:
            raise ScenarioConfigError(
                f"imbalance of a {axis}-pattern needs s{axis} in "
                "observables")
        signs = {token[0] for token in scenario.initial_state}
        if len(signs) != 2:
            raise ScenarioConfigError(
                "imbalance needs both up and down sites in the pattern")


# ---------------------------------------------------------------------------
# resolution: scenario -> executable variant contexts


@dataclass
class _VariantContext:
    """Everything one worker needs to run one trajectory."""

    label: str
    engine: str
    sequence: PulseSequence
    generator: object
    program: object
    modes: object
    tones: ToneConfig
    initial_tokens: tuple[str, ...]
    n_max: int
    sample_times: np.ndarray
    noise: NoiseModel
    letters: tuple[str, ...]
    metadata: dict = field(default_factory=dict)


def _build_sequence(scenario: Scenario, jmat: np.ndarray,
                    shaped: bool) -> PulseSequence:
    builder = scenario.builder
    envelope = scenario.shape if shaped else None
    if builder == "file":
        return load_sequence_file(scenario.sequence_path)
    if builder == "plain":
        target = ising_target(jmat, bz=scenario.bz)
        return PulseSequence((Segment(target, scenario.t1, envelope=envelope),
                              GlobalRotation.x(0.0)),
                             pulse_duration=scenario.t_pi, label="plain")
    if builder == "cpmg":
        return build_cpmg(jmat, scenario.t1, scenario.t_pi, bz=scenario.bz,
                          envelope=envelope)
    if builder == "xy":
        return build_xy(jmat, scenario.t1, scenario.t_pi, bz=scenario.bz,
                        envelope=envelope)
    if builder == "xy2":
        return build_xy2(jmat, scenario.t1, scenario.t_pi, envelope=envelope)
    if builder == "heisenberg":
        return build_heisenberg(jmat, scenario.t1, scenario.t_pi,
                                envelope=envelope)
    if builder == "hs_modified":
        return build_hs_modified(jmat, scenario.t1, scenario.t_pi,
                                 envelope=envelope)
    raise ScenarioConfigError(f"unknown builder {builder!r}")


def _sample_step(scenario: Scenario, seq: PulseSequence) -> float:
    """Sampling stride: integer cycles, except half cycles for xy2.

    The doubled xy2 cycle repeats its physical block twice, and
    z-basis observables are invariant under the residual half-cycle
    frame, so sampling each block keeps the time resolution of the
    underlying experiment.
    """
    step = seq.cycle_time * scenario.sample_every
    if scenario.builder == "xy2":
        step /= 2.0
    return step


def _resolve_variant(scenario: Scenario, variant: Variant) -> _VariantContext:
    v = _apply_variant(scenario, variant)
    modes = transverse_modes(v.trap)
    tones = solve_tones(modes, v.j0, v.detuning_ratio)
    coupling = coupling_matrix(modes, tones)
    beta = 1.0
    if v.shape is not None and v.builder != "file":
        beta = beta_for(v.shape, v.t1, "empirical")
    shaped = v.engine == "full"
    jmat = coupling.matrix if shaped else beta * coupling.matrix
    seq = _build_sequence(v, jmat, shaped)
    step = _sample_step(v, seq)
    n_points = int(math.floor(v.max_time / step + 1e-9))
    if n_points < 1:
        raise ScenarioConfigError(
            f"max_time {v.max_time} is shorter than one sample stride "
            f"{step} in variant {variant.label!r}")
    sample_times = np.arange(n_points + 1) * step
    n_cycles = max(1, int(math.ceil(sample_times[-1] / seq.cycle_time
                                    - 1e-9)))
    program = None
    generator = None
    if v.engine == "full":
        laws = ()
        if v.bz != 0.0:
            laws = tuple(rotating_frame_phase_schedule(seq, v.bz, 0.0,
                                                       n_cycles))
        program = program_from_sequence(seq, tones, n_cycles,
                                        phase_laws=laws, dt=v.dt)
    elif v.engine == "average":
        generator = average_hamiltonian(seq, include_noise=False)
    dilution = seq.interaction_time / seq.cycle_time
    jbar0 = beta * coupling.j0 * dilution
    letters = tuple(o for o in v.observables if o != "imbalance")
    metadata = {
        "label": variant.label,
        "engine": v.engine,
        "rabi_hz": tones.rabi_1 / TAU,
        "mu_hz": tones.mu / TAU,
        "eta": tones.eta,
        "detuning_ratio": v.detuning_ratio,
        "beta": beta,
        "jbar0_hz": jbar0 / TAU,
        "coupling_exponent_p":
            coupling.p if math.isfinite(coupling.p) else None,
    }
    return _VariantContext(
        label=variant.label, engine=v.engine, sequence=seq,
        generator=generator, program=program, modes=modes, tones=tones,
        initial_tokens=v.initial_state, n_max=v.n_max,
        sample_times=sample_times, noise=v.noise, letters=letters,
        metadata=metadata)


_PAULI_SINGLE = {
    "x": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}


def _full_site_expectations(state: SpinPhononState, letter: str,
                            ions: int) -> np.ndarray:
    if letter == "z":
        return state.site_z_expectations()
    rho = state.reduced_spin_density()
    out = np.empty(ions)
    for site in range(ions):
        op = np.array([[1.0]], dtype=complex)
        for k in range(ions):
            op = np.kron(op, _PAULI_SINGLE[letter] if k == site
                         else np.eye(2, dtype=complex))
        out[site] = np.trace(rho @ op).real
    return out


def _run_trajectory(task):
    """One seeded trajectory; returns per-letter (samples, sites) tables."""
    ctx, seed, index = task
    realization = None
    if not ctx.noise.silent:
        duration = float(ctx.sample_times[-1])
        realization = ctx.noise.realize(duration, seed)
    tables = {}
    truncation = False
    ions = len(ctx.initial_tokens)
    if ctx.engine == "full":
        state = SpinPhononState.ground(product_state(ctx.initial_tokens),
                                       ctx.modes.count, ctx.n_max)
        result = evolve(state, ctx.program, ctx.modes, ctx.sample_times,
                        noise=realization)
        truncation = result.truncation_suspect
        for letter in ctx.letters:
            tables[letter] = np.array(
                [_full_site_expectations(s, letter[1], ions)
                 for s in result.states])
    else:
        psi = product_state(ctx.initial_tokens)
        if ctx.engine == "sequence":
            result = evolve_spin_only(psi, ctx.sequence, ctx.sample_times,
                                      noise=realization, tones=ctx.tones)
        else:
            result = evolve_spin_only(psi, ctx.generator, ctx.sample_times)
        for letter in ctx.letters:
            tables[letter] = result.site_expectations(letter[1].upper())
    return index, tables, truncation


# ---------------------------------------------------------------------------
# the run bundle


@dataclass(frozen=True)
class RunBundle:
    """In-memory result of one run, ready for serialization."""

    scenario: Scenario
    series: dict
    fits: dict
    record: dict


def _scenario_fingerprint(scenario: Scenario) -> dict:
    """Resolved physical parameters; excludes seed and worker count."""
    return {
        "name": scenario.name,
        "trap": {"ions": scenario.trap.n_ions,
                 "omega_xy_hz": scenario.trap.omega_xy / TAU,
                 "omega_z_hz": scenario.trap.omega_z / TAU},
        "drive": {"j0_hz": scenario.j0 / TAU,
                  "detuning_ratio": scenario.detuning_ratio,
                  "bz_hz": scenario.bz / TAU},
        "sequence": {"builder": scenario.builder,
                     "file": scenario.sequence_path,
                     "t1_s": scenario.t1, "t_pi_s": scenario.t_pi},
        "shape": None if scenario.shape is None else
                 {"kind": scenario.shape.kind,
                  "ramp_s": scenario.shape.ramp_time},
        "noise": {
            "stark_sigma": None if scenario.noise.stark is None
            else scenario.noise.stark.fractional_sigma,
            "detuning_sigma_hz": None if scenario.noise.detuning is None
            else scenario.noise.detuning.sigma / TAU,
            "heating_kick": None if scenario.noise.heating is None
            else scenario.noise.heating.kick_amplitude,
        },
        "initial_state": list(scenario.initial_state),
        "engine": scenario.engine,
        "realizations": scenario.realizations,
        "max_time_s": scenario.max_time,
        "sample_every": scenario.sample_every,
        "n_max": scenario.n_max,
        "dt_s": scenario.dt,
        "observables": list(scenario.observables),
        "fits": [[f.model, f.observable] for f in scenario.fits],
        "variants": [[v.label, [[k, vv if not isinstance(vv, tuple)
                                 else list(vv)]
                                for k, vv in v.overrides]]
                     for v in scenario.variants],
    }


def scenario_hash(scenario: Scenario) -> str:
    canon = json.dumps(_scenario_fingerprint(scenario), sort_keys=True,
                       separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _reduce(tables: list, letter_name: str,
            realizations: int, times: np.ndarray) -> ObservableSeries:
    stack = np.stack(tables)
    mean = stack.mean(axis=0)
    stderr = None
    if realizations > 1:
        stderr = stack.std(axis=0, ddof=1) / math.sqrt(realizations)
    # ensemble means can graze the pole from below within rounding
    mean = np.clip(mean, -1.0, 1.0)
    return ObservableSeries(times, mean, stderr, realizations,
                            observable=letter_name)


def run(scenario: Scenario, workers: int | None = None) -> RunBundle:
    """Execute every variant and reduce to series, fits, and a record.

    The trajectory grid (variant x realization) is flattened into one
    task list so a worker pool of any size produces identical results;
    reduction keys on task indices, never on completion order.
    """
    start = time.monotonic()
    contexts = [_resolve_variant(scenario, variant)
                for variant in scenario.variants]
    master = np.random.SeedSequence(scenario.seed)
    variant_seeds = master.spawn(len(contexts))
    tasks = []
    seeds_by_variant = []
    for vi, (ctx, vseed) in enumerate(zip(contexts, variant_seeds)):
        n = 1 if ctx.engine == "average" else scenario.realizations
        traj_seeds = [int(s) for s in
                      vseed.generate_state(n, np.uint64)]
        seeds_by_variant.append(traj_seeds)
        tasks.extend((ctx, seed, (vi, ti))
                     for ti, seed in enumerate(traj_seeds))

    if workers is None or workers < 1:
        workers = os.cpu_count() or 1
    if workers == 1 or len(tasks) == 1:
        outcomes = [_run_trajectory(task) for task in tasks]
    else:
        with multiprocessing.get_context("fork").Pool(workers) as pool:
            outcomes = pool.map(_run_trajectory, tasks, chunksize=1)
    by_variant: dict = {vi: {} for vi in range(len(contexts))}
    truncation = [False] * len(contexts)
    for (vi, ti), tables, flagged in outcomes:
        by_variant[vi][ti] = tables
        truncation[vi] = truncation[vi] or flagged

    series: dict = {}
    for vi, ctx in enumerate(contexts):
        count = len(by_variant[vi])
        for letter in ctx.letters:
            tables = [by_variant[vi][ti][letter] for ti in range(count)]
            series[(ctx.label, letter)] = _reduce(
                tables, letter, count, ctx.sample_times)
        if "imbalance" in scenario.observables:
            axis = ctx.initial_tokens[0][1]
            pattern = [1.0 if token[0] == "+" else -1.0
                       for token in ctx.initial_tokens]
            series[(ctx.label, "imbalance")] = generalized_imbalance(
                series[(ctx.label, f"s{axis}")], pattern)

    fits: dict = {}
    for vi, ctx in enumerate(contexts):
        for spec in scenario.fits:
            key = ".".join(p for p in (ctx.label, spec.observable) if p)
            target = series[(ctx.label, spec.observable)]
            if spec.model == "damped_cosine":
                fits[key] = fit_damped_cosine(target)
            else:
                fits[key] = fit_exponential_decay(
                    target, jbar0=TAU * ctx.metadata["jbar0_hz"])

    record = {
        "name": scenario.name,
        "scenario_hash": scenario_hash(scenario),
        "engine_version": __version__,
        "seed": scenario.seed,
        "workers": workers,
        "wall_seconds": time.monotonic() - start,
        "variants": [
            dict(ctx.metadata,
                 trajectory_seeds=seeds_by_variant[vi],
                 truncation_suspect=truncation[vi])
            for vi, ctx in enumerate(contexts)],
        "resolved": _scenario_fingerprint(scenario),
    }
    return RunBundle(scenario, series, fits, record)


def write_bundle(bundle: RunBundle, out_dir) -> None:
    """Serialize a bundle atomically: all files or none.

    Every output text is rendered in memory first, then each file goes
    through a temp-then-replace so a reader never sees a half-written
    table; an exception before the first replace leaves the directory
    untouched.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    series_buffer = io.StringIO()
    first = True
    for (label, name), data in bundle.series.items():
        tagged = data if not label else replace(
            data, observable=f"{data.observable}@{label}")
        write_series_csv(tagged, series_buffer, header=first)
        first = False

    fits_buffer = io.StringIO()
    write_fits_csv(bundle.fits, fits_buffer)

    record_text = json.dumps(bundle.record, indent=2, sort_keys=True)

    payloads = {
        "series.csv": series_buffer.getvalue(),
        "fits.csv": fits_buffer.getvalue(),
        "run.json": record_text + "\n",
    }
    temps = []
    try:
        for filename, text in payloads.items():
            tmp = out / (filename + ".tmp")
            tmp.write_text(text, encoding="utf-8")
            temps.append((tmp, out / filename))
        for tmp, final in temps:
            os.replace(tmp, final)
    except BaseException:
        for tmp, _ in temps:
            tmp.unlink(missing_ok=True)
        raise


# ---------------------------------------------------------------------------
# builtin catalog


CATALOG: dict[str, str] = {
    "fig2_two_ion_xy": """
name: fig2_two_ion_xy
description: Two-ion flopping under the reduced XY echo with bench noise.
trap: {ions: 2, omega_xy_mhz: 4.8, omega_z_mhz: 1.5}
drive: {j0_hz: 400.0, detuning_ratio: 4.1}
sequence: {builder: xy2, t1_us: 120.0}
shape: {kind: tukey, ramp_us: 20.0}
noise: {profile: bench}
initial_state: ["-z", "-z"]
engine: full
run: {realizations: 20, seed: 20260815, max_time_ms: 3.4}
observables: [sz]
fits: [{model: damped_cosine, observable: sz}]
""",
    "fig3a_drive_rate_scan": """
name: fig3a_drive_rate_scan
description: Coherence versus drive period for the two-ion echo.
trap: {ions: 2, omega_xy_mhz: 4.8, omega_z_mhz: 1.5}
drive: {j0_hz: 400.0, detuning_ratio: 4.1}
sequence: {builder: xy2, t1_us: 120.0}
shape: {kind: tukey, ramp_us: 20.0}
noise: {profile: bench}
initial_state: ["-z", "-z"]
engine: full
run: {realizations: 20, seed: 20260815, max_time_ms: 3.4}
observables: [sz]
fits: [{model: damped_cosine, observable: sz}]
scan:
  parameter: sequence.t1_us
  values: [50.0, 120.0, 200.0]
""",
    "fig3b_detuning_scan": """
name: fig3b_detuning_scan
description: Coherence versus detuning ratio, echoed against plain drive.
trap: {ions: 2, omega_xy_mhz: 4.8, omega_z_mhz: 1.6}
drive: {j0_hz: 2000.0, detuning_ratio: 5.0}
sequence: {builder: cpmg, t1_us: 50.0}
noise: {profile: bench}
initial_state: ["-z", "-z"]
engine: full
run: {realizations: 20, seed: 20260815, max_time_ms: 2.0}
observables: [sz]
fits: [{model: damped_cosine, observable: sz}]
scan:
  parameter: drive.detuning_ratio
  values: [2.0, 3.0, 5.0, 7.5]
arms:
  decoupled: {}
  plain: {sequence.builder: plain}
""",
    "fig4_ten_ion_imbalance": """
name: fig4_ten_ion_imbalance
description: Ten-ion pattern memory with and without decoupling.
trap: {ions: 10, omega_xy_mhz: 4.8, omega_z_mhz: 0.5}
drive: {j0_hz: 204.0, detuning_ratio: 6.152}
sequence: {builder: cpmg, t1_us: 120.0}
shape: {kind: tukey, ramp_us: 20.0}
noise: {profile: bench}
initial_state: neel-x
engine: sequence
run: {realizations: 20, seed: 20260815, max_time_ms: 12.0}
observables: [sx, imbalance]
fits: [{model: exponential, observable: imbalance}]
arms:
  decoupled: {}
  plain: {sequence.builder: plain}
""",
    "fig5_haldane_shastry": """
name: fig5_haldane_shastry
description: Four-ion isotropic model from the three-block cycle.
trap: {ions: 4, omega_xy_mhz: 4.8, omega_z_mhz: 0.5}
drive: {j0_hz: 84.0, detuning_ratio: 10.7277}
sequence: {builder: heisenberg, t1_us: 94.73}
noise: {profile: silent}
initial_state: neel-z
engine: sequence
run: {realizations: 1, seed: 20260815, max_time_ms: 6.0}
observables: [sx, sy, sz]
arms:
  neel: {}
  neel_reference: {engine: average}
  polarized_x: {initial_state: polarized-x}
  polarized_y: {initial_state: polarized-y}
  polarized_z: {initial_state: polarized-z}
""",
    "figHSSM_modified": """
name: figHSSM_modified
description: Four-ion anisotropic variant with the transverse blocks kept.
trap: {ions: 4, omega_xy_mhz: 4.8, omega_z_mhz: 0.5}
drive: {j0_hz: 84.0, detuning_ratio: 10.7277}
sequence: {builder: hs_modified, t1_us: 94.73}
noise: {profile: silent}
initial_state: neel-z
engine: sequence
run: {realizations: 1, seed: 20260815, max_time_ms: 6.0}
observables: [sx, sy, sz]
arms:
  neel: {}
  neel_reference: {engine: average}
""",
}
