"""
SurfMorph Application Configuration
Contains all default settings and constants
"""


class AppConfig:
    """Application configuration constants"""

    # Application Information
    APP_NAME = "surfmorph"
    APP_TITLE = "SurfMorph Surface Morphometry Pipeline"
    VERSION = "1.0.0"
    SCHEMA_VERSION = 1

    # Exit Codes
    EXIT_OK = 0
    EXIT_CONFIG_ERROR = 2
    EXIT_STAGE_FAILURE = 3

    # Stage Graph (execution order)
    STAGES = [
        'roi-post', 'medial', 'iso', 'orient', 'mesh',
        'proxy', 'split', 'distance', 'curvature'
    ]
    STAGE_DEPENDENCIES = {
        'roi-post': [],
        'medial': ['roi-post'],
        'iso': ['roi-post'],
        'orient': ['medial'],
        'mesh': ['orient'],
        'proxy': ['mesh'],
        'split': ['iso', 'proxy'],
        'distance': ['mesh'],
        'curvature': ['mesh'],
    }

    # Stage Artifacts (file names inside the output directory)
    ARTIFACTS = {
        'segmentation_roi': 'segmentation_roi.mrc',
        'rois_labelled': 'rois_labelled.mrc',
        'roi_summary': 'roi_summary.json',
        'medial': 'medial.ply',
        'sdf': 'sdf.raw',
        'isosurface_mesh': 'isosurface_mesh.ply',
        'iso_cloud': 'iso.ply',
        'medial_oriented': 'medial_oriented.ply',
        'medial_mesh': 'medial_mesh.ply',
        'proxy': 'proxy.ply',
        'leaflet_inner': 'leaflet_inner.ply',
        'leaflet_outer': 'leaflet_outer.ply',
        'split_summary': 'split_summary.json',
        'distance_table': 'distance.csv',
        'distance_summary': 'distance.json',
        'curvature_table': 'curvature.csv',
        'curvature_summary': 'curvature.json',
        'curvature_mesh': 'curvature.ply',
        'run_report': 'run_report.json',
    }

    # Mask post-processing (lengths in nm unless suffixed with "vox")
    DEFAULT_ROI = {
        'open_close_radius_vox': 1,
        'connectivity': 26,
        'watershed': True,
        'min_seed_dist_nm': 10.0,
    }

    # Level-set regularisation
    DEFAULT_FLOW = {
        'gaussian_sigma_nm': '1vox',
        'steps': 10,
        'dt': None,             # None -> 0.9 of the stability bound
        'upsample_factor': 1,
        'grad_epsilon': 1e-8,
    }

    # Medial surface extraction
    DEFAULT_MEDIAL = {
        'k_neighbors': 20,
        'mls_iterations': 3,
        'spacing_min_nm': '0.5vox',
        'spacing_max_nm': '2vox',
        'thickness_factor': 0.75,
        'min_component_size': 10,
        'rng_seed': 0,
        'fit_radius_nm': None,  # None -> derived from the support thickness
        'curvature_spacing_scale': 0.1,
        'layer_search_nm': None,
    }

    # Isosurface sampling
    DEFAULT_ISO = {
        'spacing_nm': '1vox',
        'eps_nm': '0.5vox',
        'adaptive': False,
        'normal_smoothing_iterations': 2,
    }

    # Normal orientation
    DEFAULT_ORIENT = {
        'k_neighbors': 12,
        'tau': 0.2,
        'alpha_edge': 2.0,
        'alpha_smooth': 0.75,
        'voting_iterations': 5,
        'heat_time_factor': 1.0,
        'seed_vertex': None,
    }

    # Meshing
    DEFAULT_MESH = {
        'radii_nm': 'auto',
        'radius_multipliers': [1.0, 1.5, 2.0, 3.0],
        'gap_dist_nm': '2vox',
        'sat_tolerance_nm': 0.0,
        'poisson_depth': 7,
        'density_trim_quantile': 0.01,
        'smooth_lambda': 0.3,
        'smooth_iterations': 10,
        'smooth_after': True,
        'support_voxel_nm': None,
    }

    # Curvature
    DEFAULT_CURVATURE = {
        'radii_nm': ['4vox', '8vox', '12vox', '16vox'],
        'delta_rel': 0.05,
        'delta_abs': 1e-3,
        'epsilon': 1e-6,
        'min_neighbors': 8,
        'mesh': None,           # None -> medial mesh of the run
    }

    # Distance
    DEFAULT_DISTANCE = {
        'source': None,         # mesh path, or None -> medial mesh component of source_label
        'target': None,
        'source_label': 1,
        'target_label': 2,
    }

    # Pipeline defaults
    DEFAULT_PIPELINE = {
        'schema_version': SCHEMA_VERSION,
        'inputs': {},
        'stages': STAGES,
        'output_dir': 'surfmorph_out',
        'rng_seed': 0,
        'threads': None,        # None -> SURFMORPH_THREADS or 1
    }

    # Parameter blocks by config key
    PARAMETER_BLOCKS = {
        'roi': DEFAULT_ROI,
        'flow': DEFAULT_FLOW,
        'medial': DEFAULT_MEDIAL,
        'iso': DEFAULT_ISO,
        'orient': DEFAULT_ORIENT,
        'mesh': DEFAULT_MESH,
        'curvature': DEFAULT_CURVATURE,
        'distance': DEFAULT_DISTANCE,
    }

    # Blocks validated before each stage runs
    STAGE_BLOCKS = {
        'roi-post': ['roi'],
        'medial': ['medial'],
        'iso': ['flow', 'iso', 'medial'],
        'orient': ['orient'],
        'mesh': ['mesh'],
        'proxy': ['mesh'],
        'split': [],
        'distance': ['distance'],
        'curvature': ['curvature'],
    }

    # Export formats per artifact kind
    EXPORT_FORMATS = {
        'VoxelGrid': ['mrc', 'raw'],
        'ScalarField': ['mrc', 'raw'],
        'PointCloud': ['ply', 'xyz', 'csv'],
        'TriangleMesh': ['ply', 'obj', 'html'],
        'DistanceReport': ['csv', 'json', 'xlsx'],
        'CurvatureReport': ['csv', 'json', 'xlsx'],
        'dict': ['json'],
    }

    # Chart Configuration (interactive mesh rendering)
    CHART_CONFIG = {
        'colorscale': 'RdBu',
        'background_color': '#ffffff',
        'mesh_color': '#b0b0b0',
    }
