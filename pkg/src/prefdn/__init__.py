"""Preference-trained multi-scale image denoiser.

A three-level blur/subtract/shrink decomposition with six trainable
parameters (per-level blur widths and shrinkage thresholds), fitted to
forced-choice picks collected from users, plus the study tooling around
it: candidate generation, a choice-collection HTTP service, a trainer,
and batch evaluation.
"""

from .errors import (
    FormatError,
    InputError,
    MissingDataError,
    NumericError,
    ParameterRangeError,
    PrefdnError,
    ProtocolError,
    ShapeError,
)
from .image import (
    DisplayWindow,
    add_noise,
    apply_window,
    load_image,
    mean_squared_error,
    read_image,
    save_image,
    write_image,
)
from .pyramid import (
    DEFAULT_BOUNDS,
    EPS_MAX,
    NUM_LEVELS,
    SIGMA_MAX,
    SIGMA_MIN,
    GaussianKernel,
    ParamBounds,
    PyramidParams,
    convolve_separable,
    decompose,
    denoise,
    gaussian_kernel,
    soft_threshold,
)
from .backprop import (
    ForwardTape,
    GradientVector,
    backprop,
    convolve_separable_adjoint,
    finite_diff_gradient,
    forward_tape,
    sample_gradcheck_case,
)
from .loss import (
    ChoiceRecord,
    LossBreakdown,
    LossVariant,
    batch_loss,
    best_match_loss,
    candidate_errors,
    forced_choice_loss,
    hybrid_loss,
    loss_gradient_weights,
    per_frame_loss,
    read_choice_log,
    write_choice_log,
)
from .scenario import (
    CandidateSet,
    OracleUser,
    ParamSampler,
    ScenarioResolver,
    SessionManifest,
    build_manifest,
    build_session,
    generate_candidate_set,
    load_manifest,
    oracle_choose,
    sample_params,
    save_manifest,
    simulate_choices,
    synthetic_phantom,
)
from .training import (
    CURVE_HEADER,
    AdamState,
    DataSplit,
    ModelCheckpoint,
    TrainConfig,
    adam_step,
    clamp_params,
    evaluate,
    export_curves,
    init_params,
    load_checkpoint,
    make_split,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
