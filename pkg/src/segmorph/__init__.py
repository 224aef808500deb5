"""Segmentation agreement metrics, morphometry and cohort statistics for 3-D label maps."""
from .errors import SegmorphError
from .io import load_labelmap, save_labelmap
from .manifest import StudyManifest, load_manifest
from .metrics import MetricRecord, compare_masks, dice, evaluate_pair, hd95, iou, nmi_binary, nmi_multiclass
from .morphometry import box_count, fd_fit, fractal_dimension, volume_ml
from .pipeline import StudyReport, run_study
from .reports import emit_reports
from .volume import BinaryMask, LabelDictionary, LabelEntry, LabelMap3D, SubjectRecord

__version__ = "0.1.0"

__all__ = [
    "SegmorphError", "load_labelmap", "save_labelmap", "StudyManifest", "load_manifest",
    "MetricRecord", "compare_masks", "dice", "evaluate_pair", "hd95", "iou", "nmi_binary",
    "nmi_multiclass", "box_count", "fd_fit", "fractal_dimension", "volume_ml", "StudyReport",
    "run_study", "emit_reports", "BinaryMask", "LabelDictionary", "LabelEntry", "LabelMap3D",
    "SubjectRecord",
]
