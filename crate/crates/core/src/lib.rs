//! Coupled two-stage tensor factorization for forecasting seasonal epidemic
//! panels whose seasonality was disrupted by an intervention.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
mod linalg;
pub mod model;
pub mod nncpd;
pub mod pipeline;
pub mod temporal;
pub mod tensor;

pub use error::{Error, Result};
pub use nncpd::{cpd_fit, factor_update, CpdConfig, CpdResult};
pub use temporal::{forecast, train_forecaster, Forecaster, ForecasterConfig, ForecasterKind};
pub use tensor::{frobenius_norm, khatri_rao, reconstruct, Dims, FactorSet, Matrix, Mode, Tensor3};
pub use data::{generate_scenario, load_csv, split, split_at, Feature, FeatureRole, PanelDataset, PanelMeta, ScenarioConfig, SplitPanel};
pub use pipeline::{compute_residual, fit_decom, fit_stage1, fit_stage2, project_seasonal, DecomConfig, DecomModel, FeatureAlignment, FiberScaler, Stage, StageConfig};
pub use baselines::{fit_detensor, fit_per_location_lstm, seasonal_naive, BaselineConfig, BaselineModel};
pub use eval::{aggregate_country, evaluate, mae, peak_diff, rmse, EvalReport};
pub use model::{fit_model, ForecastOutput, ModelConfig, ModelDocument, ModelKind};
