"""Theory-guided 1D-CNN knock detection on in-cylinder pressure windows."""
from .dataset import BinaryLabel, KnockDataset, SplitSpec, load_cycles, save_cycles, stratified_split
from .exceptions import KnockNetError
from .nn import KnockNetClassifier, build_variant, load_model, save_model
from .reference import MapoDetector, PcaDataDrivenDetector, PcaEigenDetector
from .signals import EngineGeometry, acoustic_mode_frequencies, band_pass, kernel_size_for_frequency

__all__ = [
    "BinaryLabel", "EngineGeometry", "KnockDataset", "KnockNetClassifier", "KnockNetError",
    "MapoDetector", "PcaDataDrivenDetector", "PcaEigenDetector", "SplitSpec", "acoustic_mode_frequencies",
    "band_pass", "build_variant", "kernel_size_for_frequency", "load_cycles", "load_model", "save_cycles",
    "save_model", "stratified_split",
]
