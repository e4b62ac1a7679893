from .curate import CurateResult, curate_longtail
from .generator import MANEUVERS, ScenarioConfig, export_annotations, generate_dataset, generate_scene
from .io import DatasetError, convert_annotations, convert_file, read_dataset, write_dataset
from .optics import ClusterResult, optics

__all__ = ["MANEUVERS", "ClusterResult", "CurateResult", "DatasetError", "ScenarioConfig", "convert_annotations",
           "convert_file", "curate_longtail", "export_annotations", "generate_dataset", "generate_scene", "optics",
           "read_dataset", "write_dataset"]
