"""
Pydantic schemas for TOML run configurations
Every section forbids unknown keys so typos fail before any work starts
"""
from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from gpslab.core.exceptions import ConfigurationError
from gpslab.models.config_space import GROUP_FACTORS, Boundary, Lattice, SectorSpec, SymmetryGroup, build_group
from gpslab.models.fcidump import load_fcidump
from gpslab.models.gps_kernel import KernelSpec, KernelVariant
from gpslab.models.hamiltonian import HamiltonianSpec, HeisenbergSpec, HubbardSpec


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemSection(Section):
    """Hamiltonian, lattice, sector and symmetry group"""
    kind: Literal["heisenberg", "hubbard", "ab_initio"] = "heisenberg"
    shape: list[int] = Field(default_factory=lambda: [4])
    boundary: Boundary = Boundary.PERIODIC
    J1: float = 1.0
    J2: float = 0.0
    msr: bool = False
    t: float = 1.0
    U: float = 0.0
    fcidump: Optional[str] = None
    n_up: Optional[int] = None
    n_down: Optional[int] = None
    symmetries: list[str] = []

    @field_validator("shape")
    def validate_shape(cls, v):
        if len(v) not in (1, 2) or min(v) < 1:
            raise ValueError("shape must hold one or two positive extents")
        return v

    @field_validator("symmetries")
    def validate_symmetries(cls, v):
        unknown = [s for s in v if s not in GROUP_FACTORS]
        if unknown:
            raise ValueError(f"unknown symmetries {unknown}; choose from {list(GROUP_FACTORS)}")
        return v

    @model_validator(mode="after")
    def check_fcidump(self):
        if self.kind == "ab_initio" and not self.fcidump:
            raise ValueError("ab_initio systems need an fcidump path")
        return self


class ModelSection(Section):
    """Variational model construction"""
    kind: Literal["qgps", "gps"] = "qgps"
    n_supports: int = Field(4, ge=1)
    mode: Literal["none", "kernel", "projective"] = "kernel"
    split: bool = False
    init: Literal["random", "msr", "msr_local"] = "random"
    init_scale: float = Field(0.01, gt=0)
    load: Optional[str] = None


class KernelSection(Section):
    """GPS kernel and hyperparameter grid"""
    variant: KernelVariant = KernelVariant.EXPONENTIAL
    reference_site: int = Field(0, ge=0)
    plaquette: Optional[list[int]] = None
    p: int = Field(2, ge=1)
    theta: float = 1.0
    gamma: float = 1.0
    cutoff: Optional[float] = Field(None, ge=0)
    pairs: list[list[str]] = []  # kernel-eval: [[x, x'], ...] digit strings

    def to_spec(self, theta: Optional[float] = None, gamma: Optional[float] = None) -> KernelSpec:
        return KernelSpec(
            variant=self.variant,
            reference_site=self.reference_site,
            plaquette=tuple(self.plaquette) if self.plaquette else None,
            p=self.p,
            theta=self.theta if theta is None else theta,
            gamma=self.gamma if gamma is None else gamma,
            cutoff=self.cutoff,
        )


class FitSection(Section):
    """RVM compression of an exact state"""
    sigma2: list[float] = Field(default_factory=lambda: [10.0])
    thetas: list[float] = []
    gammas: list[float] = []
    tol: float = Field(1e-6, gt=0)
    max_iters: Optional[int] = Field(None, ge=1)
    source: Optional[str] = None  # full-state file; None -> exact diagonalization


class VMCSection(Section):
    """Sampler and Stochastic Reconfiguration"""
    n_chains: int = Field(16, ge=1)
    warmup: Optional[int] = Field(None, ge=0)
    thinning: Optional[int] = Field(None, ge=1)
    move: Literal["spin_exchange", "spin_flip", "electron_hop"] = "spin_exchange"
    n_samples: int = Field(1024, ge=1)
    steps: int = Field(100, ge=0)
    learning_rate: float = Field(0.02, gt=0)
    diag_shift: Optional[float] = Field(None, ge=0)
    solver: Literal["auto", "dense", "iterative"] = "auto"
    energy_tol: Optional[float] = Field(None, gt=0)
    patience: int = Field(50, ge=1)
    exact: bool = False


class SweepSection(Section):
    """Supervised Bayesian sweeping"""
    max_sweeps: int = Field(10, ge=1)
    tol: float = Field(1e-6, ge=0)
    eta: float = Field(1e-5, gt=0)
    shifted: bool = True
    sigma2: Optional[float] = Field(None, gt=0)
    train_fraction: float = Field(0.1, gt=0, le=1)


class SWOSection(Section):
    """Supervised imaginary-time projection"""
    tau: float = Field(0.1, gt=0)
    iterations: int = Field(100, ge=0)
    n_train: int = Field(10_000, ge=2)
    sigma2: float = Field(1.0, gt=0)


class BootstrapSection(Section):
    """VMC / RVM / augmentation rounds"""
    rounds: int = Field(3, ge=0)
    steps_per_round: int = Field(100, ge=0)
    fraction: float = Field(0.25, ge=0)
    n_data: int = Field(1024, ge=1)
    sigma2: float = Field(1.0, gt=0)
    initial_supports: int = Field(8, ge=1)


class ClassifySection(Section):
    """IDX image classification"""
    train_images: str
    train_labels: str
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    n_train: Optional[int] = Field(None, ge=1)
    n_test: Optional[int] = Field(None, ge=1)
    n_supports: int = Field(10, ge=1)
    sweeps: int = Field(5, ge=1)
    sigma2: float = Field(0.1, gt=0)
    eta: float = Field(1e-3, gt=0)
    shift_radius: int = Field(2, ge=0)


class OutputSection(Section):
    save_model: bool = True
    save_state: bool = False


class RunConfig(Section):
    """Complete run configuration"""
    seed: Optional[int] = Field(None, ge=0)
    threads: Optional[int] = Field(None, ge=1)
    system: SystemSection = Field(default_factory=SystemSection)
    model: ModelSection = Field(default_factory=ModelSection)
    kernel: KernelSection = Field(default_factory=KernelSection)
    fit: FitSection = Field(default_factory=FitSection)
    vmc: VMCSection = Field(default_factory=VMCSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    swo: SWOSection = Field(default_factory=SWOSection)
    bootstrap: BootstrapSection = Field(default_factory=BootstrapSection)
    classify: Optional[ClassifySection] = None
    output: OutputSection = Field(default_factory=OutputSection)


def _offenders(exc: ValidationError) -> list[str]:
    return [".".join(str(p) for p in err["loc"]) + f": {err['msg']}" for err in exc.errors()]


def parse_run_config(document: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(document)
    except ValidationError as exc:
        offenders = _offenders(exc)
        raise ConfigurationError(f"Invalid run configuration: {'; '.join(offenders)}", offenders=offenders)


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        with open(path, "rb") as fh:
            document = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"Cannot read configuration {path}: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"Malformed TOML in {path}: {exc}")
    return parse_run_config(document)


def build_system(section: SystemSection) -> tuple[HamiltonianSpec, SectorSpec, Lattice]:
    """Hamiltonian spec, sector and lattice of a [system] section."""
    sector = SectorSpec(section.n_up, section.n_down)
    if section.kind == "ab_initio":
        spec = load_fcidump(section.fcidump)
        if section.n_up is not None or section.n_down is not None:
            spec = type(spec)(spec.h1, spec.h2, spec.core_energy, sector)
        return spec, spec.sector or SectorSpec(), Lattice.chain(spec.n_sites, Boundary.OPEN)

    lattice = Lattice(tuple(section.shape), tuple(section.boundary for _ in section.shape))
    if section.kind == "heisenberg":
        spec = HeisenbergSpec(lattice, section.J1, section.J2, section.msr, sector)
    else:
        spec = HubbardSpec(lattice, section.t, section.U, sector)
    return spec, sector, lattice


def build_system_group(section: SystemSection, lattice: Lattice, local_dim: int) -> SymmetryGroup:
    return build_group(lattice, section.symmetries, local_dim)
