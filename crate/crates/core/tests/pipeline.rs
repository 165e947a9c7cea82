use decom_core::baselines::{fit_detensor_tensor, BaselineConfig};
use decom_core::data::{generate_scenario, split_at, PanelDataset, ScenarioConfig};
use decom_core::model::{fit_model, ModelConfig, ModelDocument, ModelKind};
use decom_core::pipeline::{
    compute_residual, fit_decom, fit_stage1, fit_stage2, project_seasonal, DecomConfig, DecomModel, FiberScaler,
    StageConfig,
};
use decom_core::temporal::forecast;
use decom_core::{frobenius_norm, reconstruct, Dims, ForecasterConfig, Tensor3};

fn ar_config() -> DecomConfig {
    let stage = |rank, window| StageConfig {
        rank,
        forecaster: ForecasterConfig::ar(window),
        ..StageConfig::default()
    };
    DecomConfig {
        stage1: stage(4, 13),
        stage2: stage(2, 6),
        seed: 5,
    }
}

fn small_panel(seed: u64) -> PanelDataset {
    generate_scenario(&ScenarioConfig {
        locations: 4,
        ..ScenarioConfig::s1(seed)
    })
    .unwrap()
}

#[test]
fn end_to_end_is_deterministic() {
    let ds = small_panel(1);
    let a = fit_decom(&ds, &ar_config()).unwrap();
    let b = fit_decom(&ds, &ar_config()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.predict(52).unwrap(), b.predict(52).unwrap());
}

#[test]
fn lstm_pipeline_is_deterministic() {
    let ds = small_panel(2);
    let cfg = DecomConfig {
        stage1: StageConfig {
            rank: 3,
            forecaster: ForecasterConfig::lstm(8, 4, 3, 0),
            ..StageConfig::default()
        },
        stage2: StageConfig {
            rank: 2,
            forecaster: ForecasterConfig::lstm(4, 4, 3, 0),
            ..StageConfig::default()
        },
        seed: 11,
    };
    assert_eq!(fit_decom(&ds, &cfg).unwrap(), fit_decom(&ds, &cfg).unwrap());
}

#[test]
fn prediction_shape_and_clipping() {
    let ds = small_panel(3);
    let m = fit_decom(&ds, &ar_config()).unwrap();
    let p = m.predict(52).unwrap();
    assert_eq!(p.dims(), Dims::new(4, 4, 52));
    let c = ds.count_feature();
    for l in 0..4 {
        assert!(p.fiber(l, c).iter().all(|&v| v >= 0.0));
    }
    assert_eq!(m.predict(0).unwrap().dims().times, 0);
}

/// Recomputes both terms from the stored stages and compares with the
/// model's own sum.
#[test]
fn prediction_is_seasonal_plus_residual() {
    let ds = small_panel(4);
    let m = fit_decom(&ds, &ar_config()).unwrap();
    let t0 = 30;
    let gap = m.train_end - m.cut_index;
    let seasonal = project_seasonal(&m.stage1, gap + t0).unwrap().slice_time(gap, gap + t0).unwrap();
    let c2 = forecast(&m.stage2.forecaster, &m.stage2.factors.c, t0).unwrap();
    let residual = reconstruct(&m.stage2.factors.with_time_factor(c2).unwrap());
    let total = m.predict_scaled(t0).unwrap();
    for (j, i) in m.alignment.matched() {
        for l in 0..4 {
            for t in 0..t0 {
                let want = seasonal.get(l, i, t) + residual.get(l, j, t);
                assert!((total.get(l, j, t) - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }
}

#[test]
fn zero_residual_reduces_to_stage_one() {
    let ds = small_panel(5);
    let cfg = ar_config();
    let full = fit_decom(&ds, &cfg).unwrap();
    let gap = full.train_end - full.cut_index;

    // A disrupted period that follows the seasonal projection exactly.
    let xtilde = project_seasonal(&full.stage1, gap).unwrap();
    let dx = compute_residual(&xtilde, &xtilde, &decom_core::FeatureAlignment::identity(xtilde.dims().features))
        .unwrap();
    assert!(dx.as_slice().iter().all(|&v| v == 0.0));
    let stage2 = fit_stage2(&dx, &cfg.stage2, cfg.seed).unwrap();

    let reduced = DecomModel {
        stage2,
        alignment: decom_core::FeatureAlignment::identity(xtilde.dims().features),
        count_features: vec![],
        scaler: FiberScaler {
            features: xtilde.dims().features,
            min: vec![0.0; full.scaler.locations * xtilde.dims().features],
            range: vec![1.0; full.scaler.locations * xtilde.dims().features],
            ..full.scaler.clone()
        },
        ..full.clone()
    };
    let seasonal_only = reduced.seasonal_forecast(52).unwrap();
    assert_eq!(reduced.predict_scaled(52).unwrap(), seasonal_only);
    assert_eq!(reduced.predict(52).unwrap(), seasonal_only);
}

#[test]
fn undisrupted_panel_leaves_small_residual() {
    let ds = generate_scenario(&ScenarioConfig::undisrupted(7)).unwrap();
    let m = fit_decom(&ds, &ar_config()).unwrap();
    assert!(
        m.diagnostics.residual_norm_ratio < 0.10,
        "residual ratio {}",
        m.diagnostics.residual_norm_ratio
    );
}

#[test]
fn detensor_on_pre_cut_data_is_stage_one() {
    let ds = small_panel(6);
    let cfg = ar_config();
    let parts = split_at(&ds, ds.cut_index, ds.train_end).unwrap();
    let det = fit_detensor_tensor(&parts.x1, &[0], &cfg.stage1, cfg.seed).unwrap();

    let scaler = FiberScaler::fit(&parts.x1);
    let feats: Vec<usize> = (0..parts.x1.dims().features).collect();
    let stage1 = fit_stage1(&scaler.scale(&parts.x1, &feats).unwrap(), &cfg.stage1, cfg.seed).unwrap();
    assert_eq!(det.stage, stage1);

    let full = fit_decom(&ds, &cfg).unwrap();
    assert_eq!(full.stage1, stage1);
    assert_eq!(det.stage.project(20).unwrap(), project_seasonal(&full.stage1, 20).unwrap());
}

#[test]
fn count_scaling_carries_through_predictions() {
    let ds = small_panel(8);
    let alpha = 37.5;
    let mut scaled = ds.clone();
    let c = ds.count_feature();
    for l in 0..ds.locations.len() {
        scaled.tensor.fiber_mut(l, c).iter_mut().for_each(|v| *v *= alpha);
    }
    let a = fit_decom(&ds, &ar_config()).unwrap().predict(52).unwrap();
    let b = fit_decom(&scaled, &ar_config()).unwrap().predict(52).unwrap();
    for l in 0..ds.locations.len() {
        for (x, y) in a.fiber(l, c).iter().zip(b.fiber(l, c)) {
            assert!((alpha * x - y).abs() <= 1e-6 * y.abs().max(alpha), "{x} * {alpha} vs {y}");
        }
    }
}

#[test]
fn persisted_models_forecast_identically() {
    let ds = small_panel(9);
    let mut cfg = ModelConfig {
        decom: ar_config(),
        baselines: BaselineConfig {
            ar_window: 13,
            per_location: ForecasterConfig::lstm(8, 4, 2, 0),
            ..BaselineConfig::default()
        },
    };
    cfg.baselines.detensor = cfg.decom.stage1.clone();
    for kind in ModelKind::ALL {
        let doc = fit_model(&ds, kind, &cfg).unwrap();
        let back = ModelDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc, "{kind}");
        assert_eq!(back.forecast(52).unwrap(), doc.forecast(52).unwrap(), "{kind}");
    }
}

#[test]
fn zero_panel_gives_zero_detensor_forecast() {
    let x = Tensor3::zeros(Dims::new(3, 2, 40));
    let det = fit_detensor_tensor(&x, &[0], &ar_config().stage1, 1).unwrap();
    let f = det.forecast(12).unwrap();
    assert_eq!(frobenius_norm(&f), 0.0);
}
