"""
SurfMorph Parameter Blocks
Typed, validated parameter sets for every pipeline module
"""

from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Union

from config.app_config import AppConfig
from modules.errors import ConfigError

VOXEL_SUFFIX = "vox"


def parse_length(value: Any, voxel_size_nm: float = 1.0) -> Optional[float]:
    """Convert a config length to nm; strings ending in 'vox' are voxel multiples"""
    if value is None:
        return None
    if isinstance(value, str):
        text = value.strip().lower()
        try:
            if text.endswith(VOXEL_SUFFIX):
                return float(text[:-len(VOXEL_SUFFIX)]) * float(voxel_size_nm)
            if text.endswith("nm"):
                return float(text[:-2])
            return float(text)
        except ValueError:
            raise ConfigError(f"cannot parse length '{value}'")
    if isinstance(value, bool):
        raise ConfigError(f"cannot parse length '{value}'")
    return float(value)


class ParamsBlock:
    """Shared construction and validation behaviour"""

    DEFAULTS: Dict[str, Any] = {}
    LENGTH_FIELDS: Sequence[str] = ()
    LENGTH_LIST_FIELDS: Sequence[str] = ()

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]] = None, voxel_size_nm: float = 1.0):
        """Build the block from defaults overlaid with data; lengths converted to nm"""
        merged = dict(cls.DEFAULTS)
        merged.update(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(merged) - known)
        if unknown:
            raise ConfigError(f"{cls.__name__}: unknown keys {unknown}")
        for key in cls.LENGTH_FIELDS:
            if key in merged:
                merged[key] = parse_length(merged[key], voxel_size_nm)
        for key in cls.LENGTH_LIST_FIELDS:
            value = merged.get(key)
            if isinstance(value, (list, tuple)):
                merged[key] = [parse_length(v, voxel_size_nm) for v in value]
        block = cls(**merged)
        block.validate()
        block.validate_grid(voxel_size_nm)
        return block

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self):
        raise NotImplementedError

    def validate_grid(self, voxel_size_nm: float):
        """Checks that depend on the input voxel size; none by default"""

    def _require(self, condition: bool, message: str):
        if not condition:
            raise ConfigError(f"{type(self).__name__}: {message}")


@dataclass
class RoiParams(ParamsBlock):
    """Mask denoising and ROI splitting"""

    DEFAULTS = AppConfig.DEFAULT_ROI
    LENGTH_FIELDS = ('min_seed_dist_nm',)

    open_close_radius_vox: int = 1
    connectivity: int = 26
    watershed: bool = True
    min_seed_dist_nm: float = 10.0

    def validate(self):
        self._require(int(self.open_close_radius_vox) >= 0, "open_close_radius_vox must be >= 0")
        self._require(self.connectivity in (6, 18, 26), "connectivity must be 6, 18 or 26")
        self._require(self.min_seed_dist_nm > 0, "min_seed_dist_nm must be > 0")


@dataclass
class FlowParams(ParamsBlock):
    """Gaussian pre-smoothing and obstacle-constrained mean-curvature flow"""

    DEFAULTS = AppConfig.DEFAULT_FLOW
    LENGTH_FIELDS = ('gaussian_sigma_nm',)

    gaussian_sigma_nm: float = 1.0
    steps: int = 10
    dt: Optional[float] = None
    upsample_factor: int = 1
    grad_epsilon: float = 1e-8

    def stability_bound(self, min_spacing_nm: float) -> float:
        return min_spacing_nm ** 2 / 6.0

    def resolved_dt(self, min_spacing_nm: float) -> float:
        """Explicit time step; defaults to 0.9 of the stability bound"""
        if self.dt is None:
            return 0.9 * self.stability_bound(min_spacing_nm)
        return float(self.dt)

    def validate(self, min_spacing_nm: Optional[float] = None):
        self._require(self.gaussian_sigma_nm >= 0, "gaussian_sigma_nm must be >= 0")
        self._require(int(self.steps) >= 0, "steps must be >= 0")
        self._require(self.dt is None or self.dt > 0, "dt must be > 0")
        self._require(int(self.upsample_factor) >= 1, "upsample_factor must be >= 1")
        self._require(self.grad_epsilon > 0, "grad_epsilon must be > 0")
        if min_spacing_nm is not None and self.dt is not None:
            bound = self.stability_bound(min_spacing_nm)
            self._require(self.dt <= bound * (1 + 1e-12),
                          f"dt {self.dt} violates the stability bound h^2/6 = {bound:.6g}")

    def validate_grid(self, voxel_size_nm: float):
        # the flow runs on the upsampled grid
        self.validate(voxel_size_nm / int(self.upsample_factor))


@dataclass
class MedialParams(ParamsBlock):
    """Medial surface extraction"""

    DEFAULTS = AppConfig.DEFAULT_MEDIAL
    LENGTH_FIELDS = ('spacing_min_nm', 'spacing_max_nm', 'fit_radius_nm', 'layer_search_nm')

    k_neighbors: int = 20
    mls_iterations: int = 3
    spacing_min_nm: float = 0.5
    spacing_max_nm: float = 2.0
    thickness_factor: float = 0.75
    min_component_size: int = 10
    rng_seed: int = 0
    fit_radius_nm: Optional[float] = None
    curvature_spacing_scale: float = 0.1
    layer_search_nm: Optional[float] = None

    @property
    def layer_search(self) -> float:
        if self.layer_search_nm is None:
            return 3.0 * self.spacing_max_nm
        return float(self.layer_search_nm)

    def validate(self):
        self._require(int(self.k_neighbors) >= 3, "k_neighbors must be >= 3")
        self._require(int(self.mls_iterations) >= 0, "mls_iterations must be >= 0")
        self._require(self.spacing_min_nm > 0 and self.spacing_max_nm > 0, "spacing bounds must be > 0")
        self._require(self.spacing_min_nm <= self.spacing_max_nm, "spacing_min must not exceed spacing_max")
        self._require(self.thickness_factor > 0, "thickness_factor must be > 0")
        self._require(int(self.min_component_size) >= 0, "min_component_size must be >= 0")
        self._require(int(self.rng_seed) >= 0, "rng_seed must be unsigned")
        self._require(self.fit_radius_nm is None or self.fit_radius_nm > 0, "fit_radius_nm must be > 0")
        self._require(self.curvature_spacing_scale > 0, "curvature_spacing_scale must be > 0")
        self._require(self.layer_search_nm is None or self.layer_search_nm > 0, "layer_search_nm must be > 0")


@dataclass
class IsoParams(ParamsBlock):
    """Isosurface point sampling"""

    DEFAULTS = AppConfig.DEFAULT_ISO
    LENGTH_FIELDS = ('spacing_nm', 'eps_nm')

    spacing_nm: float = 1.0
    eps_nm: float = 0.5
    adaptive: bool = False
    normal_smoothing_iterations: int = 2

    def validate(self):
        self._require(self.spacing_nm > 0, "spacing_nm must be > 0")
        self._require(self.eps_nm > 0, "eps_nm must be > 0")
        self._require(int(self.normal_smoothing_iterations) >= 0, "normal_smoothing_iterations must be >= 0")


@dataclass
class OrientParams(ParamsBlock):
    """Graph-based consistent normal orientation"""

    DEFAULTS = AppConfig.DEFAULT_ORIENT

    k_neighbors: int = 12
    tau: float = 0.2
    alpha_edge: float = 2.0
    alpha_smooth: float = 0.75
    voting_iterations: int = 5
    heat_time_factor: float = 1.0
    seed_vertex: Optional[int] = None

    def validate(self):
        self._require(int(self.k_neighbors) >= 3, "k_neighbors must be >= 3")
        self._require(0 <= self.tau < 1, "tau must lie in [0, 1)")
        self._require(self.alpha_edge > 0, "alpha_edge must be > 0")
        self._require(0 <= self.alpha_smooth <= 1, "alpha_smooth must lie in [0, 1]")
        self._require(int(self.voting_iterations) >= 0, "voting_iterations must be >= 0")
        self._require(self.heat_time_factor > 0, "heat_time_factor must be > 0")
        self._require(self.seed_vertex is None or int(self.seed_vertex) >= 0, "seed_vertex must be >= 0")


@dataclass
class MeshParams(ParamsBlock):
    """Ball pivoting, gap filtering, Poisson proxy and smoothing"""

    DEFAULTS = AppConfig.DEFAULT_MESH
    LENGTH_FIELDS = ('gap_dist_nm', 'sat_tolerance_nm', 'support_voxel_nm')
    LENGTH_LIST_FIELDS = ('radii_nm',)

    radii_nm: Union[str, List[float]] = 'auto'
    radius_multipliers: List[float] = field(default_factory=lambda: [1.0, 1.5, 2.0, 3.0])
    gap_dist_nm: float = 2.0
    sat_tolerance_nm: float = 0.0
    poisson_depth: int = 7
    density_trim_quantile: float = 0.01
    smooth_lambda: float = 0.3
    smooth_iterations: int = 10
    smooth_after: bool = True
    support_voxel_nm: Optional[float] = None

    def validate(self):
        if isinstance(self.radii_nm, str):
            self._require(self.radii_nm == 'auto', "radii_nm must be 'auto' or a list")
        else:
            self._require(len(self.radii_nm) > 0 and all(r > 0 for r in self.radii_nm),
                          "radii_nm must be positive")
        self._require(len(self.radius_multipliers) > 0 and all(m > 0 for m in self.radius_multipliers),
                      "radius_multipliers must be positive")
        self._require(self.gap_dist_nm > 0, "gap_dist_nm must be > 0")
        self._require(self.sat_tolerance_nm >= 0, "sat_tolerance_nm must be >= 0")
        self._require(1 <= int(self.poisson_depth) <= 10, "poisson_depth must lie in [1, 10]")
        self._require(0 <= self.density_trim_quantile < 1, "density_trim_quantile must lie in [0, 1)")
        self._require(0 < self.smooth_lambda < 1, "smooth_lambda must lie in (0, 1)")
        self._require(int(self.smooth_iterations) >= 0, "smooth_iterations must be >= 0")
        self._require(self.support_voxel_nm is None or self.support_voxel_nm > 0, "support_voxel_nm must be > 0")


@dataclass
class CurvatureParams(ParamsBlock):
    """Multi-scale Monge curvature with stability-based radius selection"""

    DEFAULTS = AppConfig.DEFAULT_CURVATURE
    LENGTH_LIST_FIELDS = ('radii_nm',)

    radii_nm: List[float] = field(default_factory=lambda: [4.0, 8.0, 12.0, 16.0])
    delta_rel: float = 0.05
    delta_abs: float = 1e-3
    epsilon: float = 1e-6
    min_neighbors: int = 8
    mesh: Optional[str] = None

    def validate(self):
        radii = list(self.radii_nm)
        self._require(len(radii) > 0 and all(r > 0 for r in radii), "radii must be positive")
        self._require(all(b > a for a, b in zip(radii, radii[1:])), "radii must be strictly ascending")
        self._require(self.delta_rel > 0, "delta_rel must be > 0")
        self._require(self.delta_abs > 0, "delta_abs must be > 0")
        self._require(self.epsilon > 0, "epsilon must be > 0")
        self._require(int(self.min_neighbors) >= 5, "min_neighbors must be >= 5")


@dataclass
class DistanceParams(ParamsBlock):
    """Source/target selection for point-to-mesh distances"""

    DEFAULTS = AppConfig.DEFAULT_DISTANCE

    source: Optional[str] = None
    target: Optional[str] = None
    source_label: int = 1
    target_label: int = 2

    def validate(self):
        self._require((self.source is None) == (self.target is None),
                      "source and target must be given together")
        self._require(int(self.source_label) > 0 and int(self.target_label) > 0, "labels must be > 0")


PARAMETER_CLASSES = {
    'roi': RoiParams,
    'flow': FlowParams,
    'medial': MedialParams,
    'iso': IsoParams,
    'orient': OrientParams,
    'mesh': MeshParams,
    'curvature': CurvatureParams,
    'distance': DistanceParams,
}
