"""Face-image normalization, half-face masking, and expression-classifier tooling."""

__version__ = "0.1.0"

from .charts import ChartSpec, render_bar_chart_svg, write_bar_chart_svg
from .dataset import (
    EKMAN_PLUS_NEUTRAL,
    EMOTION_ORDER,
    EmotionLabel,
    FoldPlan,
    Manifest,
    SampleRecord,
    class_counts,
    filter_single_label,
    parse_manifest,
    stratified_kfold,
)
from .equalize import build_lut, channel_histogram, equalize, histogram_csv
from .errors import (
    DegenerateLandmarksError,
    EmptyHistogramError,
    FacepipeError,
    InvalidBoxError,
    ManifestError,
    MissingArtifactError,
    TrainingDivergedError,
)
from .estimators import (
    FaceNormalizer,
    HalfFaceMasker,
    HistogramEqualizer,
    TwoStageSAMClassifier,
)
from .image import (
    BoundingBox,
    FaceLandmarks,
    Point,
    check_image,
    crop_to_box,
    read_png,
    resize_bilinear,
    roll_angle,
    rotate_about,
    rotate_point,
    write_png,
)
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    accuracy,
    build_report,
    confusion,
    mean_sensitivity,
    sensitivities,
    sensitivity_sd,
    weighted_sensitivity,
)
from .pipeline import (
    BatchFailure,
    NormalizeConfig,
    NormalizedSample,
    mask_half,
    normalize_batch,
    normalize_face,
    square_box,
    zoom_out_box,
)
from .trainer import (
    EpochRecord,
    ModelParams,
    TrainConfig,
    forward,
    grad,
    init_params,
    load_params,
    loss,
    predict,
    run_cv,
    sam_step,
    sam_update,
    save_params,
    train_two_stage,
)
