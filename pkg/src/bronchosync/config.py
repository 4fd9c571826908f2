"""Central configuration: every tunable threshold lives here, with units.

Defaults are declared values, not physical constants; tests pin behavior
against these defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class CameraConfig:
    """Pinhole camera used for endoluminal rendering."""

    fov_deg: float = 80.0       # horizontal field of view
    width: int = 128            # pixels, square pixels assumed
    height: int = 128
    max_depth_mm: float = 200.0
    step_voxels: float = 0.35   # ray-march step in voxel units
    bisect_iters: int = 8       # surface refinement iterations


@dataclass(frozen=True)
class CenterlineConfig:
    """Skeleton-to-graph extraction parameters."""

    spacing_mm: float = 1.0          # view-site arc-length spacing
    spur_radius_factor: float = 2.0  # prune leaf spurs < factor * max local radius
    smooth_window: int = 5           # voxel-position moving-average window (odd)


@dataclass(frozen=True)
class PhantomConfig:
    """Voxel values written into the synthetic CT volume."""

    air_value: float = -1000.0
    tissue_value: float = 40.0
    margin_mm: float = 6.0  # padding around tube bounding box when dims are derived


@dataclass(frozen=True)
class FeatureConfig:
    """Corner detection and binary descriptors."""

    fast_threshold: float = 10.0     # intensity delta on the Bresenham circle
    fast_arc: int = 9                # contiguous circle pixels required
    max_keypoints: int = 400
    patch_size: int = 25             # descriptor patch side, pixels
    descriptor_bits: int = 256
    smoothing_sigma: float = 2.0
    sampling_seed: int = 20405       # fixes the intensity-pair pattern at build time
    match_max_hamming: int = 40


@dataclass(frozen=True)
class ParseConfig:
    """Shot detection, motion model, key-frame selection."""

    shot_min_matches: int = 12        # boundary when matches drop below, 2 frames running
    shot_persistence: int = 2
    min_keypoints_informative: int = 5
    contrast_threshold: float = 6.0   # luminance std below this = uninformative
    ransac_iters: int = 200
    ransac_px_threshold: float = 0.35  # Sampson gate, pixels
    ransac_seed: int = 7177
    min_motion_matches: int = 8
    key_rotation_deg: float = 10.0    # accumulated rotation budget per key frame
    key_translation_units: float = 1.0  # accumulated normalized-flow budget
    flow_unit_px: float = 100.0       # pixels of median flow per translation unit


@dataclass(frozen=True)
class RegistrationConfig:
    """Pose optimization against rendered endoluminal views."""

    render_size: int = 40          # optimization renders at this resolution
    smooth_sigma: float = 2.0      # gradient smoothing (px) applied to both images
    step_mm: float = 1.0           # initial pattern-search translation step
    step_deg: float = 2.0          # initial pattern-search rotation step
    tol_mm: float = 0.05
    tol_deg: float = 0.12
    max_evals: int = 180           # budget for the wide geometry-only phase
    restarts: int = 0              # step re-expansions after first convergence
    vessel_weight: float = 0.35    # vessel darkening in the polish-phase proxy
    polish_bound_mm: float = 1.2   # polish search box around the wide-phase result
    polish_bound_deg: float = 3.0
    polish_evals: int = 130
    retry_residual: float = 0.03   # rerun from the anchor at 0.6x steps above this
    retry_scale: float = 0.6
    skip_wide_residual: float = 0.02  # anchors already this good go straight to polish
    reject_residual: float = 0.6   # normalized gradient correlation < 0.4
    refine_iters: int = 2          # per-frame refinement during propagation
    refine_step_mm: float = 0.5


@dataclass(frozen=True)
class AssociationConfig:
    """Cross-stream frame association metric."""

    orientation_weight_mm_per_rad: float = 10.0
    candidate_k: int = 8
    max_distance_mm: float = 5.0       # positional part of the gate
    max_angle_deg: float = 30.0        # orientation part of the gate

    @property
    def gate(self) -> float:
        import math
        return self.max_distance_mm + self.orientation_weight_mm_per_rad * math.radians(
            self.max_angle_deg
        )


@dataclass(frozen=True)
class SynthConfig:
    """Exam video synthesis defaults."""

    fps: float = 30.0
    frame_width: int = 128
    frame_height: int = 128
    jitter_radius_fraction: float = 0.8  # clamp positional jitter to this * local radius
    noise_contrast: float = 2.0          # luminance std of uninformative frames


@dataclass(frozen=True)
class EngineConfig:
    """Bundled defaults for the full pipeline."""

    camera: CameraConfig = field(default_factory=CameraConfig)
    centerline: CenterlineConfig = field(default_factory=CenterlineConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    parse: ParseConfig = field(default_factory=ParseConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


DEFAULTS = EngineConfig()
