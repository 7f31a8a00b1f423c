use proptest::prelude::*;
use rand::Rng;
use robust_verify::conformal::{
    calibrate, conformal_quantile, cp_coverage_eval, predict_region, CalibratedPredictor,
    FamilySampler, PointRegressor,
};
use robust_verify::envs::PerformanceOracle;
use robust_verify::explore::ExploredRegion;
use robust_verify::guarantee::{build_family, SampleMode, WeightScheme};
use robust_verify::net::{Layer, Network, NetworkSpec};
use robust_verify::rng::{substream, Stream};
use robust_verify::{InputBox, LabeledSample, Result};

/// Smallest score `s` with at least `(n + 1)(1 - alpha)` scores `<= s`,
/// found by counting rather than indexing.
fn counting_quantile(scores: &[f64], alpha: f64) -> f64 {
    let need = (scores.len() + 1) as f64 * (1.0 - alpha) - 1e-9;
    let mut candidates = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates
        .into_iter()
        .find(|s| scores.iter().filter(|t| *t <= s).count() as f64 >= need)
        .unwrap_or(f64::INFINITY)
}

proptest! {
    #[test]
    fn quantile_matches_counting_oracle(
        scores in prop::collection::vec(0.0f64..10.0, 1..200),
        alpha in 0.01f64..0.99,
    ) {
        prop_assert_eq!(conformal_quantile(&scores, alpha).unwrap(), counting_quantile(&scores, alpha));
    }

    #[test]
    fn quantile_grows_as_alpha_shrinks(
        scores in prop::collection::vec(0.0f64..10.0, 1..200),
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let (small, large) = (a.min(b), a.max(b));
        prop_assert!(conformal_quantile(&scores, small).unwrap() >= conformal_quantile(&scores, large).unwrap());
    }

    #[test]
    fn region_width_is_twice_q(q in 0.0f64..5.0, x in -3.0f64..3.0) {
        let pred = CalibratedPredictor { q, ..predictor(0.0) };
        let (lo, hi) = predict_region(&pred, &[x, 0.0]).unwrap();
        prop_assert!(((hi - lo) - 2.0 * q).abs() <= 1e-12 * q.max(1.0));
    }
}

fn constant_regressor(c: f64) -> PointRegressor {
    let spec = NetworkSpec::new(2, vec![1]).unwrap();
    let model = Network::new(
        spec,
        vec![
            Layer::new(2, 1, vec![0.0, 0.0], vec![0.0]).unwrap(),
            Layer::new(1, 1, vec![0.0], vec![c]).unwrap(),
        ],
    )
    .unwrap();
    PointRegressor {
        model,
        normalizer: None,
    }
}

fn predictor(q: f64) -> CalibratedPredictor {
    CalibratedPredictor {
        regressor: constant_regressor(0.0),
        q,
        alpha_cp: 0.05,
        n_cal: 10,
    }
}

/// Standard-uniform noise around zero, so no label is ever exactly zero.
struct Noise(InputBox);

impl PerformanceOracle for Noise {
    fn name(&self) -> &str {
        "noise"
    }

    fn input_box(&self) -> &InputBox {
        &self.0
    }

    fn evaluate(&self, _x: &[f64], rng: &mut Stream) -> Result<f64> {
        let u: f64 = rng.random_range(0.0..1.0);
        Ok(if u == 0.0 { 0.5 } else { u })
    }
}

fn setup() -> (Noise, robust_verify::guarantee::ContaminatedFamily) {
    let x0 = InputBox::cube(2, -1.0, 1.0).unwrap();
    let region = ExploredRegion { boxes: vec![x0.clone()] };
    let fam = build_family(&region, WeightScheme::Uniform, 0.05, &x0).unwrap();
    (Noise(x0), fam)
}

#[test]
fn infinite_radius_covers_everything() {
    let (oracle, fam) = setup();
    let sampler = FamilySampler { family: &fam, mode: SampleMode::Mixture };
    let stats = cp_coverage_eval(&predictor(f64::INFINITY), &oracle, &sampler, 1000, &mut substream(1, &[])).unwrap();
    assert_eq!(stats.coverage, 1.0);
    assert_eq!(stats.method, "icp");
}

#[test]
fn zero_radius_covers_nothing() {
    let (oracle, fam) = setup();
    let sampler = FamilySampler { family: &fam, mode: SampleMode::AmbientUniform };
    let stats = cp_coverage_eval(&predictor(0.0), &oracle, &sampler, 1000, &mut substream(1, &[])).unwrap();
    assert_eq!(stats.coverage, 0.0);
    assert_eq!(stats.mean_width, 0.0);
}

#[test]
fn calibrated_coverage_on_exchangeable_data() {
    let (oracle, fam) = setup();
    let sampler = FamilySampler { family: &fam, mode: SampleMode::Mixture };
    let mut rng = substream(5, &[]);
    let cal: Vec<LabeledSample> = (0..199)
        .map(|_| LabeledSample::new(vec![0.0, 0.0], rng.random_range(0.0..1.0)))
        .collect();
    let pred = calibrate(constant_regressor(0.0), &cal, 0.1).unwrap();
    assert_eq!(pred.n_cal, 199);
    // scores are the labels themselves, so q is their 180th order statistic
    let mut ys: Vec<f64> = cal.iter().map(|s| s.y).collect();
    ys.sort_by(f64::total_cmp);
    assert_eq!(pred.q, ys[179]);
    let stats = cp_coverage_eval(&pred, &oracle, &sampler, 20_000, &mut rng).unwrap();
    let se = (pred.q * (1.0 - pred.q) / 20_000.0).sqrt();
    assert!((stats.coverage - pred.q).abs() < 4.5 * se);
}
