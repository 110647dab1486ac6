from .augment import AugmentParams, AugmentPolicy, augment_pair, apply_params, draw_params
from .manifest import (
    HEADER,
    ManifestError,
    SampleRecord,
    Targets,
    load_manifest,
    summary_stats,
    target_matrix,
    write_manifest,
)
from .splits import FoldAssignment, quintile_bins, stratified_group_kfold
from .synth import SynthSpec, synth_dataset, write_synth
from .transforms import expm1_inverse, log1p_transform
