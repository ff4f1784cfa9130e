"""Semantic point-cloud fusion, debris volumetry and wind-borne debris risk maps."""

from .config import (DEFAULT_CLASSES, DEFAULT_DENSITIES, DEFAULT_WIND_SPEEDS,
                     MaterialTable, PipelineConfig, WindScale, load_config)
from .errors import DebrisTwinError
from .projection import (DepthMap, SemanticCloud, build_depth_map, is_visible,
                         project_labels, project_point)
from .risk import RiskMap, build_risk_maps, kinetic_energy, render_heatmap
from .scene_io import CameraPose, LabelMask, Scene, parse_scene
from .volumetry import (DebrisInstance, GroundPlane, HeightGrid, cluster_instances,
                        compute_volume, register_ground, resample)

__version__ = "0.1.0"
