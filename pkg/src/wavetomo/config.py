"""Study configuration: ``[section]`` grouped ``key = value`` files with ``#`` comments."""
from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields, replace

from .acquisition import ImagingSystem, Pulse, build_system
from .grid import Grid
from .inversion import InversionConfig
from .nn import TrainConfig

ALL_VARIANTS = ("uncorrected", "artifact", "data", "dual", "direct", "fwi")


@dataclass(frozen=True)
class GridSection:
    n_full: int = 128
    n_fov: int = 96
    dx: float = 1.2
    dt: float = 0.3
    n_steps: int = 512


@dataclass(frozen=True)
class SystemSection:
    n_receivers: int = 64
    n_sources: int = 16
    ring_radius: float = 55.0
    f0: float = 0.25
    t0: float = 6.4
    sigma: float = 4.0
    c0: float = 1.5
    sponge_width: int = 16
    sponge_alpha: float = 1.5
    mask_margin: int = 3


@dataclass(frozen=True)
class StudySection:
    study_id: int = 1
    scale: float = 0.05
    seed: int = 0
    variants: tuple[str, ...] = ALL_VARIANTS
    observer_variants: tuple[str, ...] = ALL_VARIANTS
    train_snr: tuple[float, ...] = (20.0,)
    test_snr: tuple[float, ...] = (20.0,)
    tumor_radius_min: float = 2.0
    tumor_radius_max: float = 6.0
    n_image_dumps: int = 4


@dataclass(frozen=True)
class SolverSection:
    iterations: int = 300
    step: float = 0.004
    reg_weight: float = 1e-5
    final_step_ratio: float = 0.1
    solver: str = "adam"


@dataclass(frozen=True)
class TrainSection:
    data_epochs: int = 15
    artifact_epochs: int = 150
    direct_epochs: int = 150
    observer_epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 4
    width: int = 8
    levels: int = 2
    val_fraction: float = 0.1


@dataclass(frozen=True)
class StudyConfig:
    study: StudySection = field(default_factory=StudySection)
    grid: GridSection = field(default_factory=GridSection)
    system: SystemSection = field(default_factory=SystemSection)
    born: SolverSection = field(default_factory=SolverSection)
    fwi: SolverSection = field(default_factory=lambda: SolverSection(step=0.003))
    train: TrainSection = field(default_factory=TrainSection)

    def __post_init__(self):
        s = self.study
        if s.study_id not in (1, 2, 3, 4):
            raise ValueError(f"study_id must be 1-4, got {s.study_id}")
        if s.scale <= 0:
            raise ValueError("scale must be positive")
        bad = [v for v in s.variants + s.observer_variants if v not in ALL_VARIANTS]
        if bad:
            raise ValueError(f"unknown variants {bad}")
        if not s.train_snr or not s.test_snr:
            raise ValueError("need at least one train and one test SNR")

    def build_grid(self) -> Grid:
        g = self.grid
        return Grid(g.n_full, g.n_fov, g.dx, g.dt, g.n_steps)

    def build_system(self) -> ImagingSystem:
        s = self.system
        return build_system(self.build_grid(), s.n_receivers, s.n_sources, s.ring_radius,
                            Pulse(s.f0, s.t0, s.sigma), s.c0, s.sponge_width, s.sponge_alpha, s.mask_margin)

    def inversion_config(self, method: str, seed: int = 0) -> InversionConfig:
        sec = self.born if method == "born" else self.fwi
        return InversionConfig(method=method, n_iterations=sec.iterations, step_size=sec.step,
                               reg_weight=sec.reg_weight, final_step_ratio=sec.final_step_ratio,
                               solver=sec.solver if method == "born" else "adam", seed=seed)

    def train_config(self, kind: str, seed: int) -> TrainConfig:
        t = self.train
        epochs = {"data": t.data_epochs, "artifact": t.artifact_epochs, "dual": t.artifact_epochs,
                  "direct": t.direct_epochs, "observer": t.observer_epochs}[kind]
        return TrainConfig(epochs=epochs, batch_size=t.batch_size, learning_rate=t.learning_rate,
                           val_fraction=t.val_fraction, seed=seed)


SECTIONS = ("study", "grid", "system", "born", "fwi", "train")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse(text: str, template):
    if isinstance(template, bool):
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return text.lower() in ("true", "1", "yes")
    if isinstance(template, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        inner = template[0] if template else ""
        return tuple(_parse(t, inner) for t in items)
    return type(template)(text)


def dumps(config: StudyConfig) -> str:
    out = io.StringIO()
    for name in SECTIONS:
        out.write(f"[{name}]\n")
        for key, value in asdict(getattr(config, name)).items():
            out.write(f"{key} = {_format(value)}\n")
        out.write("\n")
    return out.getvalue()


def loads(text: str, base: StudyConfig | None = None) -> StudyConfig:
    """Parse a config, filling unspecified keys from ``base`` (the desk defaults)."""
    base = base or StudyConfig()
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string(text)
    updates = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ValueError(f"unknown config section [{name}]")
        section = getattr(base, name)
        known = {f.name: getattr(section, f.name) for f in fields(section)}
        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ValueError(f"unknown key {key!r} in [{name}]")
            try:
                values[key] = _parse(raw, known[key])
            except ValueError as exc:
                raise ValueError(f"[{name}] {key}: {exc}") from exc
        updates[name] = replace(section, **values)
    return replace(base, **updates)


def load(path, base: StudyConfig | None = None) -> StudyConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), base)


def compact_config(study_id: int = 1, **study_overrides) -> StudyConfig:
    """Small grid used by the acceptance suite (64^2 grid, 8 sources, 32 receivers)."""
    f0 = 0.15
    return StudyConfig(
        study=replace(StudySection(study_id=study_id), **study_overrides),
        grid=GridSection(64, 40, 2.0, 0.6, 192),
        system=SystemSection(32, 8, 38.0, f0, 3.2 * 0.5 / f0, 2.0 * 0.5 / f0, 1.5, 12, 1.5, 3),
    )
