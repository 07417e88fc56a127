"""Near-field binaural speech synthesis and joint estimation of speaker
direction and head orientation from two-ear recordings."""

from .dsp import AudioBuffer, Spectrum, Stft, fft, ifft, istft, read_wav, stft, write_wav
from .directivity import (DirectivityTable, NearFieldParams, lookup,
                          near_field_correct, parallax_adjust, synth_hrtf, synth_vdp)
from .exceptions import (BinorientError, EmptyFeaturesError, InvalidGeometryError,
                         InvalidInputError)
from .features import (FeatureBatch, FeatureConfig, FeatureTensor, aliasing_frequency,
                       assemble, ild, itd, ratio_feature, split_bands)
from .geometry import SceneGeometry, wrap_deg
from .preprocess import (VoicingDecision, detect_voicing, mask_unvoiced,
                         spectral_floor_mask)
from .rendering import BinauralRecording, render, render_far_field

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "Spectrum", "Stft", "fft", "ifft", "stft", "istft",
    "read_wav", "write_wav",
    "DirectivityTable", "NearFieldParams", "lookup", "near_field_correct",
    "parallax_adjust", "synth_hrtf", "synth_vdp",
    "BinorientError", "InvalidInputError", "InvalidGeometryError",
    "EmptyFeaturesError",
    "FeatureBatch", "FeatureConfig", "FeatureTensor", "aliasing_frequency",
    "assemble", "ild", "itd", "ratio_feature", "split_bands",
    "SceneGeometry", "wrap_deg",
    "VoicingDecision", "detect_voicing", "mask_unvoiced", "spectral_floor_mask",
    "BinauralRecording", "render", "render_far_field",
    "__version__",
]
