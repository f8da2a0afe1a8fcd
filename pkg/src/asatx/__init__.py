"""Next-day supply-air-temperature forecasting with Huber regression and Shapley explanations."""

__version__ = "0.1.0"

from .attribution import (
    Attribution,
    BackgroundSet,
    CoalitionMask,
    coalition_value,
    efficiency_check,
    exact_shapley,
    linear_contributions,
    monte_carlo_shapley,
)
from .ingest import Observation, OperationalCalendar, RegularSeries, filter_operational, parse_csv, regularize
from .regression import HuberModel, backtest, fit_huber, fit_models, forecast_day, predict
from .report import (
    SliceReport,
    binary_top_matrix,
    coefficient_distribution,
    difference_curve,
    make_slice,
    render,
    top_k_table,
)
from .windowing import FeatureLabel, FeatureVector, TrainingSet, build_feature_vector, build_training_set, hankel_view
