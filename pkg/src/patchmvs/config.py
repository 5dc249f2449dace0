"""Pipeline configuration: one flat ``key = value`` namespace covering every stage."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError, PatchMVSError
from .fusion import FusionParams
from .geom_consistency import GeomParams
from .geometry import DepthRange
from .matcher import MatchParams
from .refinement import RefineParams
from .seeding import SeedConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class PipelineConfig:
    # depth range (metres, same scale as the poses)
    d_min: float = 0.5
    d_max: float = 80.0
    # frames and scales
    n_scales: int = 3
    k_src: int = 4
    min_baseline: float = 0.0
    # photometric / planar stages
    n_photo: int = 3
    n_planar: int = 3
    radius_coarse: int = 5
    radius_fine: int = 3
    patch_step: int = 2
    prior_threshold: float = 0.1
    prior_cell: int = 1
    lam_planar: float = 0.2
    planar_depth_trunc: float = 0.2
    planar_angle_trunc: float = 30.0
    perturb_photo: tuple = (0.1, 0.4)
    perturb_planar: tuple = (0.05, 0.2)
    perturb_geom: tuple = (0.02, 0.1)
    # geometric stage
    n_geom: int = 2
    lam_rep: float = 0.1
    lam_cons: float = 0.1
    tau: float = 2.0
    omega_radius: int = 2
    # upsampling and detail restoration
    jbu_sigma_s: float = 1.0
    jbu_sigma_r: float = 0.1
    restore_margin: float = 0.1
    restore_trials: int = 4
    # refinement
    refine: bool = True
    lam_s: float = 1.0
    refine_max_sweeps: int = 400
    refine_tol: float = 1e-4
    conf_lo: float = 0.2
    conf_hi: float = 1.0
    median: bool = True
    # fusion
    n_min: int = 2
    gamma: float = 2.0
    epsilon: float = 0.01
    theta: float = 10.0
    fusion_window: typing.Optional[int] = None
    # seeds
    seed_mode: str = "densify"
    seed_radius: int = 2
    seed_depth_sigma: float = 0.02
    seed_normal_sigma: float = 0.1
    # inputs
    images: typing.Optional[str] = None
    poses: typing.Optional[str] = None
    calib: typing.Optional[str] = None
    seeds: typing.Optional[str] = None
    # run control
    seed: int = 0
    threads: int = 1
    output_dir: str = "out"
    dump_intermediate: bool = False

    def __post_init__(self):
        self.validate()

    # ---- derived parameter blocks
    @property
    def depth_range(self) -> DepthRange:
        return DepthRange(self.d_min, self.d_max)

    def match_params(self) -> MatchParams:
        return MatchParams(
            radius_coarse=self.radius_coarse, radius_fine=self.radius_fine, patch_step=self.patch_step,
            n_photo=self.n_photo, n_planar=self.n_planar, k_src=self.k_src,
            prior_threshold=self.prior_threshold, prior_cell=self.prior_cell,
            perturb_photo=tuple(self.perturb_photo), perturb_planar=tuple(self.perturb_planar),
            perturb_geom=tuple(self.perturb_geom), lam_planar=self.lam_planar,
            planar_depth_trunc=self.planar_depth_trunc, planar_angle_trunc_deg=self.planar_angle_trunc,
        )

    def geom_params(self) -> GeomParams:
        return GeomParams(self.lam_rep, self.lam_cons, self.tau, self.omega_radius, self.n_geom,
                          tuple(self.perturb_geom))

    def refine_params(self) -> RefineParams:
        return RefineParams(self.lam_s, self.refine_max_sweeps, self.refine_tol, self.conf_lo, self.conf_hi,
                            self.median)

    def fusion_params(self) -> FusionParams:
        return FusionParams(self.n_min, self.gamma, self.epsilon, self.theta, self.fusion_window)

    def seed_config(self) -> SeedConfig:
        return SeedConfig(self.seed_mode, self.seed_radius, self.seed_depth_sigma, self.seed_normal_sigma)

    def validate(self) -> None:
        try:
            self.depth_range
            self.match_params()
            self.geom_params()
            self.refine_params()
            self.fusion_params()
            self.seed_config()
        except PatchMVSError as exc:
            raise ConfigError(str(exc)) from None
        if self.n_scales < 1:
            raise ConfigError("n_scales must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.restore_trials < 0 or self.restore_margin < 0:
            raise ConfigError("restore_trials and restore_margin must be >= 0")
        if self.jbu_sigma_s <= 0 or self.jbu_sigma_r <= 0:
            raise ConfigError("upsampling sigmas must be positive")
        if self.min_baseline < 0:
            raise ConfigError("min_baseline must be >= 0")
        for name in ("perturb_photo", "perturb_planar", "perturb_geom"):
            v = getattr(self, name)
            if len(v) != 2 or min(v) < 0:
                raise ConfigError(f"{name} needs two non-negative values (depth, normal)")

    # ---- text form
    def replace(self, **changes) -> "PipelineConfig":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _convert(name: str, raw: str, typ):
    raw = raw.strip()
    origin = typing.get_origin(typ)
    if origin is typing.Union:
        inner = [a for a in typing.get_args(typ) if a is not type(None)][0]
        if raw.lower() in ("", "none"):
            return None
        return _convert(name, raw, inner)
    try:
        if typ is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            return tuple(float(t) for t in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def parse_overrides(pairs: dict) -> dict:
    """Typed values for ``{key: text}`` pairs; unknown keys are an error."""
    hints = typing.get_type_hints(PipelineConfig)
    out = {}
    for k, v in pairs.items():
        if k not in hints:
            raise ConfigError(f"unknown configuration key {k!r}")
        out[k] = _convert(k, v, hints[k]) if isinstance(v, str) else v
    return out


def parse_config_text(text: str, source: str = "<config>") -> PipelineConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        k, v = s.split("=", 1)
        k = k.strip()
        if k in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {k!r}")
        pairs[k] = v
    try:
        return PipelineConfig(**parse_overrides(pairs))
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    cfg = parse_config_text(text, str(path))
    if overrides:
        cfg = cfg.replace(**parse_overrides(overrides))
    return cfg
