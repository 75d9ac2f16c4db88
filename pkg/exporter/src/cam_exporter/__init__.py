"""cam_exporter: bridge any image classifier to the WSAS toolkit formats."""

from .errors import ExporterError, ImageDecodeFailure, ModelLoadFailure
from .export import CAM, GRAD_CAM, ExportJob, export
from .model import FilterBankModel, load_model, make_color_prototype_model, save_model

__version__ = "0.1.0"
