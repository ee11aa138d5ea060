"""twinfeed: link-level simulator for twin-predictor CSI feedback.

The hybrid feedback scheme keeps bit-identical channel predictors at both
ends of the link and feeds back only the quantized gap between prediction
and estimate; this package implements that scheme, the conventional
quantize-and-feedback baseline, a synthetic fading-trace generator, the
evaluation metrics, and a sweep CLI.
"""

from .channel import (
    ChannelMatrix,
    ChannelTrace,
    GeneratorConfig,
    generate_trace,
    lag1_autocorrelation,
    load_trace,
    save_trace,
    split_trace,
)
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    NumericError,
    ProtocolError,
    ShapeError,
    TraceParseError,
    TrainingError,
    TwinfeedError,
)
from .metrics import (
    MetricsRecord,
    compute_metrics,
    cosine_similarity,
    nmse,
    precoding_gain,
    spectral_efficiency,
)
from .predictor import (
    PredictorConfig,
    PredictorModel,
    TrainingReport,
    build_model,
    count_multiplies,
    forward,
    load_model,
    model_from_bytes,
    model_to_bytes,
    multiply_count_formula,
    postprocess,
    predict_step,
    preprocess,
    save_model,
    train,
)
from .protocol import (
    FeedbackMessage,
    ProtocolConfig,
    SessionContext,
    SessionLog,
    StepRecord,
    run_assessment,
    run_session,
    step_conventional,
    step_hybrid,
)
from .quantizer import QuantizerSpec, build_spec, quantize_matrix, quantize_scalar

__version__ = "0.1.0"
