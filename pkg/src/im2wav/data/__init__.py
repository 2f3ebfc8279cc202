from im2wav.data.manifest import DatasetManifest, ManifestEntry, load_manifest, save_manifest
from im2wav.data.synth import (
    SynthClassSpec,
    default_class_specs,
    generate_corpus,
    synth_pair,
)
from im2wav.data.wavio import read_wav, write_wav

__all__ = [
    "DatasetManifest",
    "ManifestEntry",
    "SynthClassSpec",
    "default_class_specs",
    "generate_corpus",
    "load_manifest",
    "read_wav",
    "save_manifest",
    "synth_pair",
    "write_wav",
]
