"""Study configuration: one TOML file drives a full run.

Acceptance-relevant parameters (hierarchy depth, dt, total time, trajectory
count, master seed, frequency window) are required so no study depends on a
hidden default. Bare names resolve to packaged presets (`dimer_p05`,
`dimer_p2`, the two production parameter sets).

All physical quantities are in units of the characteristic bath frequency
(Omega = 1) with hbar = 1; dipoles project onto the polarization already at
load time when given as 3-vectors.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .model import ExcitonModel, ExponentialBCF, SpectralDensity, project_dipoles

VALID_EQUATIONS = ("linear", "nonlinear", "noisefree")
VALID_OBSERVABLES = ("absorption", "populations")


class ConfigError(Exception):
    """Invalid study configuration; the message names the offending key."""


def _req(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"missing required config key {path}.{key}")
    return table[key]


def _opt(table: dict, key: str, default):
    return table.get(key, default)


@dataclass(frozen=True)
class BootstrapConfig:
    ensemble_sizes: tuple
    n_resamples: int
    seed: int
    histogram_bins: int = 64


@dataclass(frozen=True)
class SpectralDensityCheck:
    centers: tuple
    widths: tuple
    weights: tuple
    beta: float
    omega_cut: float
    tau_max: float
    n_tau: int
    tolerance: float

    def density(self) -> SpectralDensity:
        centers = np.array(self.centers)
        widths = np.array(self.widths)
        weights = np.array(self.weights)

        def j(w):
            w = np.asarray(w, dtype=float)[..., None]
            return ((weights / np.pi) * widths / ((w - centers) ** 2 + widths ** 2)).sum(axis=-1)

        return SpectralDensity(j=j, beta=self.beta, omega_cut=self.omega_cut)


@dataclass(frozen=True)
class StudyConfig:
    model: ExcitonModel
    bcf: ExponentialBCF
    equations: tuple
    observable: str
    initial_site: int            # zero-based; populations runs only
    depth: int
    dt: float
    t_final: float
    record_stride: int
    n_traj: int
    master_seed: int
    workers: int | None
    batch_size: int
    omega_min: float
    omega_max: float
    padding: int
    apodization: str | float
    bootstrap: BootstrapConfig | None
    sd_check: SpectralDensityCheck | None
    out_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def n_steps(self) -> int:
        steps = self.t_final / self.dt
        return int(round(steps))


def _parse_model(table: dict) -> ExcitonModel:
    energies = np.asarray(_req(table, "site_energies", "model"), dtype=float)
    couplings = np.asarray(_req(table, "couplings", "model"), dtype=float)
    ground = float(_opt(table, "ground_energy", 0.0))
    if "dipoles" in table:
        dipoles = np.asarray(table["dipoles"], dtype=float)
    elif "dipole_vectors" in table:
        pol = np.asarray(_req(table, "polarization", "model"), dtype=float)
        dipoles = project_dipoles(np.asarray(table["dipole_vectors"], float), pol)
    else:
        raise ConfigError("model needs either model.dipoles or model.dipole_vectors")
    try:
        return ExcitonModel(site_energies=energies, couplings=couplings,
                            projected_dipoles=dipoles, ground_energy=ground)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _parse_mode(entry: dict, path: str) -> tuple[complex, complex]:
    p = _req(entry, "p", path)
    w = _req(entry, "w", path)
    if len(p) != 2 or len(w) != 2:
        raise ConfigError(f"{path}: p and w are [re, im] pairs")
    return complex(p[0], p[1]), complex(w[0], w[1])


def _parse_bath(table: dict, n_sites: int) -> ExponentialBCF:
    try:
        if "modes" in table:
            modes = [_parse_mode(m, "bath.modes") for m in table["modes"]]
            return ExponentialBCF.shared(modes, n_sites)
        if "site_modes" in table:
            per_site = table["site_modes"]
            if len(per_site) != n_sites:
                raise ConfigError(
                    f"bath.site_modes must list modes for all {n_sites} sites")
            rows_p, rows_w = [], []
            for n, mode_list in enumerate(per_site):
                modes = [_parse_mode(m, f"bath.site_modes[{n}]") for m in mode_list]
                rows_p.append([m[0] for m in modes])
                rows_w.append([m[1] for m in modes])
            return ExponentialBCF(np.array(rows_p), np.array(rows_w))
    except ValueError as exc:
        raise ConfigError(f"bath: {exc}") from exc
    raise ConfigError("missing required config key bath.modes (or bath.site_modes)")


def _parse_sd_check(table: dict) -> SpectralDensityCheck:
    beta_raw = _opt(table, "beta", "inf")
    beta = np.inf if beta_raw in ("inf", "infinity") else float(beta_raw)
    return SpectralDensityCheck(
        centers=tuple(_req(table, "centers", "bath.spectral_density")),
        widths=tuple(_req(table, "widths", "bath.spectral_density")),
        weights=tuple(_req(table, "weights", "bath.spectral_density")),
        beta=beta,
        omega_cut=float(_req(table, "omega_cut", "bath.spectral_density")),
        tau_max=float(_opt(table, "tau_max", 10.0)),
        n_tau=int(_opt(table, "n_tau", 21)),
        tolerance=float(_req(table, "tolerance", "bath.spectral_density")),
    )


def parse_study_config(raw: dict, source: str = "<config>") -> StudyConfig:
    for section in ("model", "bath", "run", "analysis"):
        if section not in raw:
            raise ConfigError(f"missing required config section [{section}]")
    model = _parse_model(raw["model"])
    bcf = _parse_bath(raw["bath"], model.n_sites)
    sd_check = None
    if "spectral_density" in raw["bath"]:
        sd_check = _parse_sd_check(raw["bath"]["spectral_density"])

    run = raw["run"]
    equations = tuple(_opt(run, "equations", ["linear", "nonlinear"]))
    for eq in equations:
        if eq not in VALID_EQUATIONS:
            raise ConfigError(f"run.equations: unknown equation {eq!r}")
    observable = _opt(run, "observable", "absorption")
    if observable not in VALID_OBSERVABLES:
        raise ConfigError(f"run.observable must be one of {VALID_OBSERVABLES}")
    initial_site = int(_opt(run, "initial_site", 1))
    if observable == "populations" and not 1 <= initial_site <= model.n_sites:
        raise ConfigError(f"run.initial_site must be in 1..{model.n_sites}")

    depth = int(_req(run, "depth", "run"))
    dt = float(_req(run, "dt", "run"))
    t_final = float(_req(run, "t_final", "run"))
    record_stride = int(_opt(run, "record_stride", 1))
    n_traj = int(_req(run, "n_traj", "run"))
    master_seed = int(_req(run, "master_seed", "run"))
    if dt <= 0:
        raise ConfigError("run.dt must be positive")
    if t_final <= 0:
        raise ConfigError("run.t_final must be positive")
    if abs(t_final / dt - round(t_final / dt)) > 1e-9:
        raise ConfigError("run.t_final must be an integer multiple of run.dt")
    n_steps = int(round(t_final / dt))
    if record_stride < 1 or n_steps % record_stride != 0:
        raise ConfigError("run.record_stride must divide t_final / dt")
    if n_traj < 0:
        raise ConfigError("run.n_traj must be >= 0")
    workers = run.get("workers")
    if workers is not None:
        workers = int(workers)
        if workers < 1:
            raise ConfigError("run.workers must be >= 1")
    batch_size = int(_opt(run, "batch_size", 512))
    if batch_size < 1:
        raise ConfigError("run.batch_size must be >= 1")

    analysis = raw["analysis"]
    omega_min = float(_req(analysis, "omega_min", "analysis"))
    omega_max = float(_req(analysis, "omega_max", "analysis"))
    if omega_max <= omega_min:
        raise ConfigError("analysis.omega_max must exceed analysis.omega_min")
    padding = int(_opt(analysis, "padding", 4))
    apod = _opt(analysis, "apodization", "auto")
    if isinstance(apod, str):
        if apod not in ("auto", "none"):
            raise ConfigError('analysis.apodization must be "auto", "none" or a time constant')
    else:
        apod = float(apod)
        if apod <= 0:
            raise ConfigError("analysis.apodization time constant must be positive")

    bootstrap = None
    if "bootstrap" in analysis:
        b = analysis["bootstrap"]
        bootstrap = BootstrapConfig(
            ensemble_sizes=tuple(int(x) for x in _req(b, "ensemble_sizes", "analysis.bootstrap")),
            n_resamples=int(_req(b, "n_resamples", "analysis.bootstrap")),
            seed=int(_req(b, "seed", "analysis.bootstrap")),
            histogram_bins=int(_opt(b, "histogram_bins", 64)),
        )

    out_dir = _opt(raw.get("output", {}), "directory", "hops_out")

    return StudyConfig(
        model=model, bcf=bcf, equations=equations, observable=observable,
        initial_site=initial_site - 1, depth=depth, dt=dt, t_final=t_final,
        record_stride=record_stride, n_traj=n_traj, master_seed=master_seed,
        workers=workers, batch_size=batch_size, omega_min=omega_min,
        omega_max=omega_max, padding=padding, apodization=apod,
        bootstrap=bootstrap, sd_check=sd_check, out_dir=out_dir, raw=raw,
    )


def load_study_config(path_or_preset: str) -> StudyConfig:
    """Load a config file, or a packaged preset when given a bare name."""
    path = Path(path_or_preset)
    if path.exists():
        text = path.read_text()
        source = str(path)
    else:
        name = str(path_or_preset)
        if "/" in name or name.endswith(".toml"):
            raise ConfigError(f"config file not found: {path_or_preset}")
        resource = importlib.resources.files("hopsim") / "presets" / f"{name}.toml"
        if not resource.is_file():
            raise ConfigError(f"no such config file or preset: {path_or_preset}")
        text = resource.read_text()
        source = f"preset:{name}"
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # tomllib errors carry line/column positions
        raise ConfigError(f"{source}: {exc}") from exc
    return parse_study_config(raw, source=source)


def canonical_dict(cfg: StudyConfig, include_execution: bool = False) -> dict:
    """Resolved configuration as a plain dict for the run manifest.

    Execution knobs (worker count, batch size, output paths) do not affect
    results and are excluded from the hashed form.
    """
    out = {
        "model": {
            "site_energies": cfg.model.site_energies.tolist(),
            "couplings": cfg.model.couplings.tolist(),
            "projected_dipoles": cfg.model.projected_dipoles.tolist(),
            "ground_energy": cfg.model.ground_energy,
        },
        "bath": {
            "p_re": cfg.bcf.p.real.tolist(), "p_im": cfg.bcf.p.imag.tolist(),
            "w_re": cfg.bcf.w.real.tolist(), "w_im": cfg.bcf.w.imag.tolist(),
        },
        "run": {
            "equations": list(cfg.equations),
            "observable": cfg.observable,
            "initial_site": cfg.initial_site + 1,
            "depth": cfg.depth,
            "dt": cfg.dt,
            "t_final": cfg.t_final,
            "record_stride": cfg.record_stride,
            "n_traj": cfg.n_traj,
            "master_seed": cfg.master_seed,
        },
        "analysis": {
            "omega_min": cfg.omega_min,
            "omega_max": cfg.omega_max,
            "padding": cfg.padding,
            "apodization": cfg.apodization,
        },
    }
    if cfg.bootstrap is not None:
        out["analysis"]["bootstrap"] = {
            "ensemble_sizes": list(cfg.bootstrap.ensemble_sizes),
            "n_resamples": cfg.bootstrap.n_resamples,
            "seed": cfg.bootstrap.seed,
            "histogram_bins": cfg.bootstrap.histogram_bins,
        }
    if include_execution:
        out["run"]["workers"] = cfg.workers
        out["run"]["batch_size"] = cfg.batch_size
        out["output"] = {"directory": cfg.out_dir}
    return out
