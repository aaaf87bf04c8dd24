"""Run orchestration: config -> dynamics -> spectra -> CSV files."""

from __future__ import annotations

import contextlib
import csv
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import algebra, dynamics, environment, oracle, spectrum
from .config import ExperimentConfig, apply_overrides, to_ini
from .grid import GridResolutionWarning, TimeGrid

__all__ = ["RunError", "Model", "RunResult", "build_model", "run", "sweep", "WORKERS_ENV"]

WORKERS_ENV = "PBGFLUOR_WORKERS"

# sweeps over these sections only touch the spectrum stage
_SPECTRUM_ONLY = ("spatial.", "omega.", "output.")


class RunError(RuntimeError):
    pass


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except RunError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise RunError(f"[{name}] {type(exc).__name__}: {exc}") from exc


@dataclass(frozen=True)
class Model:
    atom: algebra.DressedAtom
    L: algebra.SystemOperator
    H: algebra.SystemOperator
    kernel: environment.CorrelationKernel  # in the frame rotating at w_L
    psi0: np.ndarray

    @property
    def bare_kernel(self) -> environment.CorrelationKernel:
        return self.kernel.with_frame_shift(0.0)


def build_kernel(cfg: ExperimentConfig, frame_shift: float = 0.0) -> environment.CorrelationKernel:
    k = cfg.kernel
    if k.variant == "markov":
        return environment.MarkovKernel(k.gamma)
    if k.variant == "periodic_band3d":
        return environment.PeriodicBand3DKernel(k.g, k.A, k.B, frame_shift)
    if k.variant == "parabolic_edge":
        return environment.parabolic_from_band(k.g, k.B, k.omega_c, k.tau_min, frame_shift)
    return environment.load_tabulated_kernel(k.path, frame_shift)


def _initial_state(cfg: ExperimentConfig, atom: algebra.DressedAtom) -> np.ndarray:
    name = cfg.atom.initial
    if name == "bare_excited":
        return atom.bare_excited_state()
    if name == "bare_ground":
        return atom.bare_ground_state()
    return np.array([1.0, 0.0]) if name == "dressed_1" else np.array([0.0, 1.0])


def build_model(cfg: ExperimentConfig) -> Model:
    with _stage("algebra"):
        atom = algebra.dressed_parameters(cfg.atom.epsilon, cfg.detuning, cfg.atom.laser_frequency)
        L = algebra.coupling_operator(atom)
        H = atom.hamiltonian()
    with _stage("environment"):
        kernel = build_kernel(cfg, atom.laser_frequency)
    return Model(atom, L, H, kernel, _initial_state(cfg, atom))


def omega_grid(cfg: ExperimentConfig, atom: algebra.DressedAtom) -> np.ndarray:
    o = cfg.omega
    lo = atom.laser_frequency - 4 * atom.rabi if o.min is None else o.min
    hi = atom.laser_frequency + 4 * atom.rabi if o.max is None else o.max
    return np.linspace(lo, hi, o.points)


def build_transfer(cfg: ExperimentConfig, model: Model):
    s = cfg.spatial
    if not s.enabled:
        return model.bare_kernel
    direction = np.array([1.0, 0.0, 0.0]) * s.d * s.a
    q = environment.q_constant(s.gamma, s.a, s.k0, direction, s.theta, s.theta_D)
    return environment.SpatialKernelTransform(q, s.curvature, s.omega_c, s.d)


@dataclass
class _Stage:
    grid: TimeGrid
    traj: dynamics.OneTimeTrajectory
    stationary: dynamics.StationaryCorrelation | None
    flags: list[str]


def _grid_flags(grid: TimeGrid, model: Model) -> list[str]:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", GridResolutionWarning)
        grid.check_resolution(2 * model.atom.rabi, model.kernel.correlation_time() or None)
    return [f"grid_resolution({w.message})" for w in caught]


def _dynamics_stage(cfg: ExperimentConfig, model: Model) -> _Stage:
    grid = TimeGrid(cfg.grid.T, cfg.grid.N)
    flags = _grid_flags(grid, model)
    with _stage("dynamics"):
        dyn = dynamics.Dynamics(model.L, model.H, model.kernel, grid)
        traj = dyn.one_time(model.psi0)
        stat = None
        if cfg.pipelines.stationary or cfg.pipelines.markov:
            t_star = cfg.tolerances.t_star
            if t_star is None and not cfg.driven:
                t_star = 0.0  # spontaneous emission: correlations from the initial state
            stat = dynamics.stationary_correlation(
                traj, model.L, model.H, model.kernel, grid,
                tol=cfg.tolerances.steady_state, t_star=t_star, dynamics=dyn,
            )
    return _Stage(grid, traj, stat, flags)


def _stationary_spectra(cfg: ExperimentConfig, model: Model, stage: _Stage) -> dict[str, spectrum.SpectrumResult]:
    out = {}
    om = omega_grid(cfg, model.atom)
    with _stage("spectrum"):
        if cfg.pipelines.stationary:
            res = spectrum.spectrum_stationary(
                stage.stationary, build_transfer(cfg, model), om, model.atom.laser_frequency,
                tail_tol=cfg.tolerances.tail, preset=cfg.name,
            )
            res.flags = stage.flags + res.flags
            out["stationary"] = res
        if cfg.pipelines.markov:
            res = spectrum.spectrum_markov(
                stage.stationary, cfg.kernel.gamma, om, model.atom.laser_frequency,
                tail_tol=cfg.tolerances.tail, preset=cfg.name,
            )
            res.flags = stage.flags + res.flags
            out["markov"] = res
    return out


def _finite_t_spectrum(cfg: ExperimentConfig, model: Model):
    grid = TimeGrid(cfg.finite_t.T, cfg.finite_t.N)
    flags = _grid_flags(grid, model)
    with _stage("dynamics"):
        dyn = dynamics.Dynamics(model.L, model.H, model.kernel, grid)
        traj = dyn.one_time(model.psi0)
        # the dense triangle is only kept when it is dumped to disk
        tri = dyn.two_time_all(traj) if cfg.output.dump_correlation else None
    with _stage("spectrum"):
        res = spectrum.spectrum_finite_T(
            tri if tri is not None else dynamics.TriangleStream(dyn, traj),
            model.kernel, grid, omega_grid(cfg, model.atom), model.atom.laser_frequency,
            mean=traj.expectation(model.L), preset=cfg.name, residue_tol=cfg.tolerances.residue,
        )
    res.flags = flags + res.flags
    return res, tri


def _oracle(cfg: ExperimentConfig, model: Model) -> oracle.OneExcitationResult:
    k = cfg.kernel
    with _stage("oracle"):
        bath = oracle.discretize_bath(
            oracle.periodic_band_density(k.g, k.A, k.B),
            (cfg.oracle.omega_min, cfg.oracle.omega_max),
            cfg.oracle.M,
            target=model.bare_kernel,
        )
        n = max(int(round(bath.horizon / cfg.oracle.dt)), 2)
        return oracle.one_excitation_exact(bath, model.atom.atomic_frequency, TimeGrid(bath.horizon, n))


@dataclass
class RunResult:
    config: ExperimentConfig
    spectra: dict[str, spectrum.SpectrumResult]
    trajectory: dynamics.OneTimeTrajectory | None = None
    stationary: dynamics.StationaryCorrelation | None = None
    oracle: oracle.OneExcitationResult | None = None
    files: list[Path] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def flags(self) -> dict[str, list[str]]:
        return {name: s.flags for name, s in self.spectra.items()}


def _write_trajectory(path: Path, traj: dynamics.OneTimeTrajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["t"]
        for n in algebra.OperatorBasis.names:
            head += [f"{n}_re", f"{n}_im"]
        w.writerow(head)
        for t, row in zip(traj.times, traj.values):
            vals = [repr(float(t))]
            for v in row:
                vals += [repr(float(v.real)), repr(float(v.imag))]
            w.writerow(vals)


def _write_correlation(path: Path, stat: dynamics.StationaryCorrelation | None, tri=None) -> None:
    """``t1, t2, Re, Im`` of ``<L^+(t1) L(t2)>`` for ``t1 >= t2``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t1", "t2", "re", "im"])
        if tri is not None:
            times = tri.grid.times
            for i in range(times.size):
                for j in range(i + 1):
                    v = tri.lower[i, j]
                    w.writerow([repr(float(times[i])), repr(float(times[j])), repr(float(v.real)), repr(float(v.imag))])
        elif stat is not None:
            for s, v in zip(stat.s, stat.values):
                c = np.conj(v)  # C_L(t* + s, t*)
                w.writerow([repr(float(stat.t_star + s)), repr(float(stat.t_star)), repr(float(c.real)), repr(float(c.imag))])


def _manifest(result: RunResult) -> str:
    lines = ["# run manifest; the configuration below reproduces this run", to_ini(result.config).rstrip(), ""]
    for name, s in sorted(result.spectra.items()):
        lines.append(f"# pipeline {name}: flags = {';'.join(s.flags) or 'ok'}")
    for f in result.files:
        lines.append(f"# file {f.name}")
    lines.append(f"# wall_time_s = {result.wall_time:.3f}")
    return "\n".join(lines) + "\n"


def _write_outputs(result: RunResult, out_dir: Path, tri=None) -> None:
    cfg = result.config
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        for name, spec in sorted(result.spectra.items()):
            p = out_dir / f"spectrum_{name}.csv"
            spec.to_csv(p)
            written.append(p)
        if cfg.output.dump_trajectory and result.trajectory is not None:
            p = out_dir / "trajectory.csv"
            _write_trajectory(p, result.trajectory)
            written.append(p)
        if cfg.output.dump_correlation:
            p = out_dir / "correlation.csv"
            _write_correlation(p, result.stationary, tri)
            written.append(p)
        if result.oracle is not None:
            written += list(result.oracle.to_csv(out_dir))
        result.files = written
        p = out_dir / "manifest.txt"
        p.write_text(_manifest(result))
        written.append(p)
    except Exception:
        for p in written:
            p.unlink(missing_ok=True)
        raise


def _execute(cfg: ExperimentConfig, model: Model | None = None, stage: _Stage | None = None):
    model = model or build_model(cfg)
    spectra = {}
    tri = None
    if stage is None and (cfg.pipelines.stationary or cfg.pipelines.markov or cfg.output.dump_trajectory):
        stage = _dynamics_stage(cfg, model)
    if stage is not None:
        spectra.update(_stationary_spectra(cfg, model, stage))
    if cfg.pipelines.finite_T:
        spectra["finite_T"], tri = _finite_t_spectrum(cfg, model)
    orc = _oracle(cfg, model) if cfg.pipelines.oracle else None
    res = RunResult(
        cfg, spectra,
        trajectory=stage.traj if stage else None,
        stationary=stage.stationary if stage else None,
        oracle=orc,
    )
    return res, model, stage, tri


def run(cfg: ExperimentConfig, overrides=None, out_dir=None, write: bool = True) -> RunResult:
    """Execute every enabled pipeline; with ``write`` the CSVs and a
    manifest go to ``out_dir`` (default ``cfg.output.dir``)."""
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    cfg.validate()
    t0 = time.perf_counter()
    res, _, _, tri = _execute(cfg)
    res.wall_time = time.perf_counter() - t0
    if write:
        _write_outputs(res, Path(out_dir or cfg.output.dir), tri)
    return res


def _run_one(args):
    cfg, out_dir, write = args
    return run(cfg, out_dir=out_dir, write=write)


def _label(path: str, value) -> str:
    return f"{path}={value}".replace("/", "_")


def sweep(cfg: ExperimentConfig, path: str, values, out_dir=None, write: bool = True, workers: int | None = None) -> list[RunResult]:
    """One run per value of ``path``.

    When ``path`` only affects the spectrum stage (``spatial.*``,
    ``omega.*``) the dynamics are computed once and shared.
    """
    values = list(values)
    if not values:
        return []
    configs = [apply_overrides(cfg, [(path, v)]) for v in values]
    base = Path(out_dir or cfg.output.dir)
    dirs = [base / _label(path, v) for v in values]
    if path.startswith(_SPECTRUM_ONLY):
        results = []
        model = stage = None
        for c, d in zip(configs, dirs):
            t0 = time.perf_counter()
            res, model, stage, tri = _execute(c, model, stage)
            res.wall_time = time.perf_counter() - t0
            if write:
                _write_outputs(res, d, tri)
            results.append(res)
        return results
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    jobs = [(c, d, write) for c, d in zip(configs, dirs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]
