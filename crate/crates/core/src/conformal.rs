//! Split conformal prediction around a point regressor.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::envs::PerformanceOracle;
use crate::error::{Error, Result};
use crate::guarantee::{draw_labeled, summarize, ContaminatedFamily, CoverageRecord, CoverageStats, SampleMode};
use crate::inn::{InputNormalizer, LabeledSample, TrainConfig};
use crate::net::{Gradients, Network, NetworkSpec, OptimizerState};
use crate::rng::{derive_seed, substream, tag, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<LabeledSample>,
    pub calibration: Vec<LabeledSample>,
}

/// Shuffle with `seed`, then put the first `round(n * cal_fraction)` samples
/// (at least one, at most `n - 1`) in the calibration set.
pub fn split(data: &[LabeledSample], cal_fraction: f64, seed: u64) -> Result<SplitDataset> {
    if data.len() < 2 {
        return Err(Error::invalid("split needs at least two samples"));
    }
    if !(cal_fraction > 0.0 && cal_fraction < 1.0) {
        return Err(Error::invalid(format!("cal_fraction must lie in (0, 1), got {cal_fraction}")));
    }
    let n = data.len();
    let n_cal = ((n as f64 * cal_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, &[tag::SPLIT]));
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect();
    Ok(SplitDataset {
        calibration: pick(&order[..n_cal]),
        train: pick(&order[n_cal..]),
    })
}

/// A single ReLU network fit by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRegressor {
    pub model: Network,
    pub normalizer: Option<InputNormalizer>,
}

impl PointRegressor {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.model.check_input(x)?;
        Ok(self.model.eval(&self.input(x)))
    }

    fn input(&self, x: &[f64]) -> Vec<f64> {
        match &self.normalizer {
            Some(n) => n.apply(x),
            None => x.to_vec(),
        }
    }
}

/// Mini-batch Adam on the mean squared error. `cfg.beta` and
/// `cfg.warm_start` are ignored.
pub fn train_regressor(
    spec: &NetworkSpec,
    normalizer: Option<InputNormalizer>,
    data: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<(PointRegressor, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let model = Network::init_random(spec, derive_seed(cfg.seed, &[tag::REGRESSOR]))?;
    let mut reg = PointRegressor { model, normalizer };
    let inputs = data
        .iter()
        .map(|s| {
            reg.model.check_input(&s.x)?;
            Ok(reg.input(&s.x))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut state = OptimizerState::new(spec, cfg.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut substream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len() as f64;
            let mut grads = Gradients::zeros(spec);
            for &i in chunk {
                let r = reg.model.eval(&inputs[i]) - data[i].y;
                total += r * r;
                reg.model.backward_into(&inputs[i], 2.0 * r / n, &mut grads);
            }
            state.apply(&mut reg.model, &grads)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { epoch: epoch + 1 });
        }
        trace.push(mean);
    }
    Ok((reg, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPredictor {
    pub regressor: PointRegressor,
    /// Calibrated radius; `+inf` when the calibration set is too small.
    #[serde(with = "crate::guarantee::lenient_f64")]
    pub q: f64,
    pub alpha_cp: f64,
    pub n_cal: usize,
}

/// The `ceil((n + 1)(1 - alpha))`-th smallest score, or `+inf` when that
/// rank exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("calibration set is empty"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha_cp must lie in (0, 1), got {alpha}")));
    }
    let n = scores.len();
    // absorbs rounding in products such as 5 * 0.8
    let rank = ((n + 1) as f64 * (1.0 - alpha) - 1e-9).ceil() as usize;
    if rank > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank.max(1) - 1])
}

pub fn calibrate(
    regressor: PointRegressor,
    cal: &[LabeledSample],
    alpha_cp: f64,
) -> Result<CalibratedPredictor> {
    let scores = cal
        .iter()
        .map(|s| regressor.predict(&s.x).map(|f| (s.y - f).abs()))
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibratedPredictor {
        q: conformal_quantile(&scores, alpha_cp)?,
        regressor,
        alpha_cp,
        n_cal: cal.len(),
    })
}

/// `(f(x) - q, f(x) + q)`; the whole real line when `q` is infinite.
pub fn predict_region(pred: &CalibratedPredictor, x: &[f64]) -> Result<(f64, f64)> {
    let f = pred.regressor.predict(x)?;
    if pred.q.is_infinite() {
        return Ok((f64::NEG_INFINITY, f64::INFINITY));
    }
    Ok((f - pred.q, f + pred.q))
}

/// Source of test inputs for coverage measurement.
pub trait Sampler: Sync {
    fn mode(&self) -> SampleMode;
    fn sample(&self, rng: &mut Stream) -> Vec<f64>;
}

pub struct FamilySampler<'a> {
    pub family: &'a ContaminatedFamily,
    pub mode: SampleMode,
}

impl Sampler for FamilySampler<'_> {
    fn mode(&self) -> SampleMode {
        self.mode
    }

    fn sample(&self, rng: &mut Stream) -> Vec<f64> {
        self.family.sample(self.mode, rng)
    }
}

pub fn cp_coverage_eval_records(
    pred: &CalibratedPredictor,
    oracle: &dyn PerformanceOracle,
    sampler: &dyn Sampler,
    n_test: usize,
    rng: &mut Stream,
) -> Result<(CoverageStats, Vec<CoverageRecord>)> {
    if n_test == 0 {
        return Err(Error::invalid("n_test must be >= 1"));
    }
    let draw = |r: &mut Stream| sampler.sample(r);
    let records = draw_labeled(oracle, &draw, n_test, rng)?
        .into_iter()
        .map(|(x, y)| {
            let (lo, hi) = predict_region(pred, &x)?;
            Ok(CoverageRecord { x, y, lo, hi })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize("icp", sampler.mode(), &records, None), records))
}

pub fn cp_coverage_eval(
    pred: &CalibratedPredictor,
    oracle: &dyn PerformanceOracle,
    sampler: &dyn Sampler,
    n_test: usize,
    rng: &mut Stream,
) -> Result<CoverageStats> {
    cp_coverage_eval_records(pred, oracle, sampler, n_test, rng).map(|(s, _)| s)
}

/// Split, fit and calibrate in one go.
pub fn fit_icp(
    spec: &NetworkSpec,
    normalizer: Option<InputNormalizer>,
    data: &[LabeledSample],
    cal_fraction: f64,
    alpha_cp: f64,
    cfg: &TrainConfig,
) -> Result<CalibratedPredictor> {
    let parts = split(data, cal_fraction, derive_seed(cfg.seed, &[tag::SPLIT]))?;
    let (regressor, _) = train_regressor(spec, normalizer, &parts.train, cfg)?;
    calibrate(regressor, &parts.calibration, alpha_cp)
}
