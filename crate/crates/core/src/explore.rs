//! Uncertainty-guided active learning.
//!
//! An initial INN is trained on one delta-ball around a random point of `X0`.
//! Each iteration then certifies the point of maximal envelope width over
//! `X0`, samples a fresh delta-ball around it, and retrains on everything
//! collected so far. The sampled balls form the explored region.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::InputBox;
use crate::envs::PerformanceOracle;
use crate::error::{Error, Result};
use crate::inn::{train, ImpreciseNet, InputNormalizer, LabeledSample, TrainConfig};
use crate::net::NetworkSpec;
use crate::par;
use crate::rng::{derive_seed, substream, tag, Stream};
use crate::verify::{maximize_uncertainty, BnbConfig};

/// L-infinity ball of half-width `delta * width(X0)` per dimension, clipped
/// to `X0`.
pub fn delta_ball(center: &[f64], delta: f64, x0: &InputBox) -> Result<InputBox> {
    if !x0.contains(center) {
        return Err(Error::invalid(format!("center {center:?} lies outside X0")));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let (lo, hi) = (0..x0.dim())
        .map(|i| {
            let r = delta * x0.width(i);
            (
                (center[i] - r).max(x0.lo()[i]),
                (center[i] + r).min(x0.hi()[i]),
            )
        })
        .unzip();
    InputBox::new(lo, hi)
}

/// `n` i.i.d. uniform points in `b`.
pub fn sample_uniform<R: Rng + ?Sized>(b: &InputBox, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| b.sample(rng)).collect()
}

/// Label `points` with one oracle call each. Call `i` uses the substream
/// `(seed, LABELS, i)`, so the result is independent of scheduling.
pub fn label_points(
    oracle: &dyn PerformanceOracle,
    points: Vec<Vec<f64>>,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    let labels = par::map_range(points.len(), |i| {
        oracle.evaluate(&points[i], &mut substream(seed, &[tag::LABELS, i as u64]))
    });
    points
        .into_iter()
        .zip(labels)
        .map(|(x, y)| y.map(|y| LabeledSample::new(x, y)))
        .collect()
}

/// The union of sampled boxes, in discovery order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExploredRegion {
    pub boxes: Vec<InputBox>,
}

impl ExploredRegion {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploreConfig {
    /// Active-learning iterations `M`.
    pub iterations: usize,
    /// Samples per region `N`.
    pub samples_per_region: usize,
    pub delta: f64,
    pub k: usize,
    pub hidden_widths: Vec<usize>,
    /// Training for the initial INN.
    pub initial_train: TrainConfig,
    /// Retraining after each iteration.
    pub train: TrainConfig,
    pub bnb: BnbConfig,
    /// Map X0 onto [-1, 1]^d before the networks.
    pub normalize_inputs: bool,
    pub seed: u64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            samples_per_region: 200,
            delta: 0.05,
            k: 3,
            hidden_widths: vec![50, 50],
            initial_train: TrainConfig {
                epochs: 300,
                ..TrainConfig::default()
            },
            train: TrainConfig {
                epochs: 300,
                ..TrainConfig::default()
            },
            bnb: BnbConfig::default(),
            normalize_inputs: true,
            seed: 0,
        }
    }
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_region == 0 {
            return Err(Error::invalid("samples_per_region must be >= 1"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid("delta must be positive"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        self.initial_train.validate()?;
        self.train.validate()?;
        self.bnb.validate()
    }

    /// Use `beta` for every training round.
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.initial_train.beta = beta;
        self.train.beta = beta;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub x_star: Vec<f64>,
    pub u_lo: f64,
    pub u_hi: f64,
    pub certified: bool,
    pub nodes_expanded: usize,
    pub verify_time_s: f64,
    /// Uncertainty at the center of X0 under the same INN.
    pub u_at_center: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExploreOutcome {
    pub inn: ImpreciseNet,
    pub region: ExploredRegion,
    pub dataset: Vec<LabeledSample>,
    pub initial_losses: Vec<f64>,
    pub trace: Vec<IterationRecord>,
}

fn sample_round(
    oracle: &dyn PerformanceOracle,
    region: &InputBox,
    n: usize,
    seed: u64,
    round: u64,
) -> Result<Vec<LabeledSample>> {
    let mut rng: Stream = substream(seed, &[tag::POINTS, round]);
    let points = sample_uniform(region, n, &mut rng);
    label_points(oracle, points, derive_seed(seed, &[tag::LABELS, round]))
}

pub fn active_learn(oracle: &dyn PerformanceOracle, cfg: &ExploreConfig) -> Result<ExploreOutcome> {
    cfg.validate()?;
    let x0 = oracle.input_box();
    if x0.is_degenerate() {
        return Err(Error::invalid("oracle input box must be nondegenerate"));
    }
    let n = cfg.samples_per_region;
    let spec = NetworkSpec::new(x0.dim(), cfg.hidden_widths.clone())?;
    let normalizer = cfg.normalize_inputs.then(|| InputNormalizer::for_box(x0));

    let seed_center = x0.sample(&mut substream(cfg.seed, &[tag::INIT_REGION]));
    let first = delta_ball(&seed_center, cfg.delta, x0)?;
    let mut dataset = sample_round(oracle, &first, n, cfg.seed, 0).map_err(|e| e.at_iteration(0))?;
    let mut region = ExploredRegion { boxes: vec![first] };

    let inn = ImpreciseNet::init_random(&spec, cfg.k, derive_seed(cfg.seed, &[tag::MEMBER_INIT]), normalizer)?;
    let init_cfg = TrainConfig {
        seed: derive_seed(cfg.seed, &[tag::TRAIN, 0]),
        warm_start: true,
        ..cfg.initial_train.clone()
    };
    let (mut inn, initial_losses) = train(&inn, &dataset, &init_cfg).map_err(|e| e.at_iteration(0))?;

    let center = x0.center();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let bnb = BnbConfig {
            seed: derive_seed(cfg.seed, &[tag::VERIFY, it as u64]),
            ..cfg.bnb.clone()
        };
        let opt = maximize_uncertainty(&inn, x0, &bnb).map_err(|e| e.at_iteration(it))?;
        let u_at_center = inn.uncertainty(&center)?;
        let ball = delta_ball(&opt.witness, cfg.delta, x0).map_err(|e| e.at_iteration(it))?;
        let fresh = sample_round(oracle, &ball, n, cfg.seed, it as u64).map_err(|e| e.at_iteration(it))?;
        dataset.extend(fresh);
        region.boxes.push(ball);

        let round_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, &[tag::TRAIN, it as u64]),
            ..cfg.train.clone()
        };
        let (next, losses) = train(&inn, &dataset, &round_cfg).map_err(|e| e.at_iteration(it))?;
        inn = next;
        trace.push(IterationRecord {
            iteration: it,
            x_star: opt.witness,
            u_lo: opt.value_lo,
            u_hi: opt.value_hi,
            certified: opt.certified,
            nodes_expanded: opt.nodes_expanded,
            verify_time_s: opt.wall_time_s,
            u_at_center,
            epoch_losses: losses,
        });
    }

    Ok(ExploreOutcome {
        inn,
        region,
        dataset,
        initial_losses,
        trace,
    })
}
