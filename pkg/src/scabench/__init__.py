"""scabench: a cache side-channel analysis workbench.

Models the full attack surface end to end: victim programs with planted
leakage, observer models (address-derived scalar channels and a simulated
Prime+Probe spy), trace folding, an attention-augmented autoencoder that
reconstructs secret media from traces, attention-based leak localization,
and the defenses (perception blinding, trace noise) used to evaluate it.
"""

from .errors import (
    CapacityError,
    DataFormatError,
    TrainingDiverged,
    UnalignedTraceError,
)
from .traces import (
    CACHE_BANK,
    CACHE_LINE,
    PAGE_TABLE,
    ChannelKind,
    MemoryAccessRecord,
    MemoryTrace,
    SideChannelTrace,
    channel_kind,
    derive_side_channel,
    format_memory_trace,
    format_side_channel,
    parse_memory_trace,
    parse_side_channel,
)
from .folding import (
    MatrixShape,
    NormStats,
    TraceMatrix,
    apply_norm,
    encode_pp,
    fit_norm,
    fold,
    format_matrix,
    parse_matrix,
    square_shape,
    unfold_index,
)
from .cachesim import (
    ActivityVector,
    CacheConfig,
    PPTrace,
    capture_pp,
    format_pp_trace,
    parse_pp_trace,
    reference_oracle,
    simulate_prime_probe,
)
from .victims import (
    Dataset,
    DatasetManifest,
    HashCheckVictim,
    LookupVictim,
    MediaSample,
    SymbolRange,
    TransformVictim,
    VictimProgram,
    format_media,
    gen_dataset,
    parse_media,
    sample_continuous,
    sample_sentence,
)
from .model import (
    AttackModel,
    ModelSpec,
    TrainConfig,
    build_model,
    decode_continuous,
    decode_sequence,
    discriminate,
    encode,
    evaluate,
    history_csv,
    load_model,
    reconstruct,
    save_model,
    total_loss,
    train,
    word_accuracy,
)
from .localize import (
    LeakageReport,
    attention_map,
    default_topk,
    localize_traces,
    map_to_instructions,
    rank_records,
)
from .defend import (
    NOISE_PRESETS,
    BlindConfig,
    NoiseScheme,
    apply_noise,
    blind_continuous,
    blind_text,
    preset_scheme,
    unblind_output,
    unblind_text,
)

__version__ = "0.1.0"
