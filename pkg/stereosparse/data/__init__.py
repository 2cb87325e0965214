"""Stereo-video ingestion, label grids, synthetic scenes and manifests."""

from stereosparse.data.ppm import PPMParseError, parse_ppm, write_ppm
from stereosparse.data.kitti import LabelParseError, parse_kitti_labels
from stereosparse.data.preprocess import preprocess, window_labels
from stereosparse.data.synth import GenerationError, synth_scene, recover_disparity, planted_atoms, planted_sparse_batches
from stereosparse.data.manifest import Dataset, ManifestError, load_manifest, write_manifest, materialize_synthetic

__all__ = [
    'PPMParseError',
    'parse_ppm',
    'write_ppm',
    'LabelParseError',
    'parse_kitti_labels',
    'preprocess',
    'window_labels',
    'GenerationError',
    'synth_scene',
    'recover_disparity',
    'planted_atoms',
    'planted_sparse_batches',
    'Dataset',
    'ManifestError',
    'load_manifest',
    'write_manifest',
    'materialize_synthetic'
]
