"""Tile-score matching: keep a slide classifier's sensitivity on a new cohort
by transporting its tile score distribution back onto the reference one."""

from .calibration import (
    CalibrationResult,
    calibrate_plts,
    calibrate_tsm,
    calibrate_tsm_ensemble,
    calibrate_upa,
    calibrate_none,
    evaluate_calibrated,
    select_threshold,
)
from .distributions import (
    EmpiricalDistribution,
    MongeMap,
    apply_map,
    build_empirical,
    build_monge_map,
    build_target_mixture,
    cdf,
    quantile,
)
from .mil import (
    ChowderModel,
    Cohort,
    Slide,
    ensemble_predict,
    predict_selected,
    predict_slide,
    predict_slide_mapped,
    rank_select,
    selected_matrix,
    train_predictor,
)
from .metrics import auc, roc_curve, sensitivity, specificity
from .experiment import ExperimentConfig, TrainSettings, low_data_config, run_experiment, summarize
from .synthdata import CohortSpec, ShiftSpec, apply_shift, generate_cohort, read_cohort, write_cohort

__version__ = "0.1.0"
