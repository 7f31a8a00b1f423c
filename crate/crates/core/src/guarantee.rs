//! Performance lower bounds and the distribution family they hold over.
//!
//! The explored boxes define a mixture of uniforms `P~`; the family is every
//! `(1 - alpha) P~ + alpha Q` with `Q` arbitrary on `X0`, whose upper
//! probability is `(1 - alpha) P~(A) + alpha`. The certified bound is
//! `eps = Phi_l - lambda * beta`, where `Phi_l` is a sound lower bound on the
//! minimum of the INN lower envelope over the explored region.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::InputBox;
use crate::envs::PerformanceOracle;
use crate::error::{Error, Result};
use crate::explore::ExploredRegion;
use crate::inn::{envelope, ImpreciseNet};
use crate::par;
use crate::rng::{substream, tag, Stream};
use crate::verify::{minimize_phi_lower, BnbConfig, CertifiedOptimum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Uniform,
    Volume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOfUniforms {
    boxes: Vec<InputBox>,
    weights: Vec<f64>,
    /// Running sums of `weights` for component selection.
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl MixtureOfUniforms {
    pub fn new(boxes: Vec<InputBox>, weights: Vec<f64>) -> Result<Self> {
        if boxes.is_empty() || boxes.len() != weights.len() {
            return Err(Error::invalid("mixture needs one weight per box and at least one box"));
        }
        if boxes.iter().any(InputBox::is_degenerate) {
            return Err(Error::invalid("mixture boxes must have positive volume"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            boxes,
            weights,
            cumulative,
        })
    }

    pub fn boxes(&self) -> &[InputBox] {
        &self.boxes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the component selected by a uniform draw `u` in `[0, 1)`.
    pub fn component_for(&self, u: f64) -> usize {
        let last = self.boxes.len() - 1;
        self.cumulative
            .iter()
            .position(|c| u < *c)
            .unwrap_or(last)
            .min(last)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let j = self.component_for(rng.random::<f64>());
        self.boxes[j].sample(rng)
    }

    /// `P~(A)`.
    pub fn prob(&self, event: &InputBox) -> f64 {
        1.0 - self.miss_prob(event)
    }

    /// `P~(not A)`, exactly 0 when `A` covers every component.
    fn miss_prob(&self, event: &InputBox) -> f64 {
        self.boxes
            .iter()
            .zip(&self.weights)
            .map(|(b, w)| w * (1.0 - b.covered_fraction(event)))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminatedFamily {
    pub mixture: MixtureOfUniforms,
    pub alpha: f64,
    /// Support of the contamination; `Q` defaults to uniform over it.
    pub ambient: InputBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Mixture,
    Contaminated,
    AmbientUniform,
}

impl SampleMode {
    pub fn label(self) -> &'static str {
        match self {
            SampleMode::Mixture => "mixture",
            SampleMode::Contaminated => "contaminated",
            SampleMode::AmbientUniform => "ambient_uniform",
        }
    }
}

pub fn build_family(
    region: &ExploredRegion,
    scheme: WeightScheme,
    alpha: f64,
    x0: &InputBox,
) -> Result<ContaminatedFamily> {
    if region.boxes.is_empty() {
        return Err(Error::invalid("explored region is empty"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let m = region.boxes.len();
    let weights = match scheme {
        WeightScheme::Uniform => vec![1.0 / m as f64; m],
        WeightScheme::Volume => {
            let vols: Vec<f64> = region.boxes.iter().map(InputBox::volume).collect();
            if vols.iter().any(|v| *v <= 0.0) {
                return Err(Error::invalid("zero-volume box under volume weighting"));
            }
            let total: f64 = vols.iter().sum();
            vols.iter().map(|v| v / total).collect()
        }
    };
    Ok(ContaminatedFamily {
        mixture: MixtureOfUniforms::new(region.boxes.clone(), weights)?,
        alpha,
        ambient: x0.clone(),
    })
}

impl ContaminatedFamily {
    pub fn sample<R: Rng + ?Sized>(&self, mode: SampleMode, rng: &mut R) -> Vec<f64> {
        match mode {
            SampleMode::Mixture => self.mixture.sample(rng),
            SampleMode::AmbientUniform => self.ambient.sample(rng),
            SampleMode::Contaminated => {
                if rng.random::<f64>() < self.alpha {
                    self.ambient.sample(rng)
                } else {
                    self.mixture.sample(rng)
                }
            }
        }
    }
}

pub fn sample_family<R: Rng + ?Sized>(
    family: &ContaminatedFamily,
    n: usize,
    rng: &mut R,
    mode: SampleMode,
) -> Vec<Vec<f64>> {
    (0..n).map(|_| family.sample(mode, rng)).collect()
}

/// Upper probability `(1 - alpha) P~(A) + alpha` of a box event.
pub fn upper_prob(family: &ContaminatedFamily, event: &InputBox) -> f64 {
    1.0 - (1.0 - family.alpha) * family.mixture.miss_prob(event)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxMinimum {
    #[serde(rename = "box")]
    pub region: InputBox,
    #[serde(flatten)]
    pub optimum: CertifiedOptimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeReport {
    pub epsilon: f64,
    pub phi_l: f64,
    pub lambda: f64,
    pub beta: f64,
    pub confidence: f64,
    pub all_certified: bool,
    pub per_box: Vec<BoxMinimum>,
}

/// Minimize the lower envelope over every explored box and subtract
/// `lambda * beta` from the smallest sound lower end.
pub fn performance_lower_bound(
    inn: &ImpreciseNet,
    region: &ExploredRegion,
    lambda: f64,
    beta: f64,
    cfg: &BnbConfig,
) -> Result<GuaranteeReport> {
    if !(lambda > 0.0) || !(beta > 0.0) {
        return Err(Error::invalid("lambda and beta must be positive"));
    }
    if region.boxes.is_empty() {
        return Err(Error::invalid("explored region is empty"));
    }
    let minima = par::map_slice(&region.boxes, |b| minimize_phi_lower(inn, b, cfg));
    let per_box = region
        .boxes
        .iter()
        .zip(minima)
        .map(|(b, opt)| {
            opt.map(|optimum| BoxMinimum {
                region: b.clone(),
                optimum,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let phi_l = per_box
        .iter()
        .map(|m| m.optimum.value_lo)
        .fold(f64::INFINITY, f64::min);
    Ok(GuaranteeReport {
        epsilon: phi_l - lambda * beta,
        phi_l,
        lambda,
        beta,
        confidence: 1.0 - 1.0 / lambda,
        all_certified: per_box.iter().all(|m| m.optimum.certified),
        per_box,
    })
}

/// `[lower(x) - lambda beta, upper(x) + lambda beta]`.
pub fn inflated_interval(inn: &ImpreciseNet, x: &[f64], lambda: f64, beta: f64) -> Result<(f64, f64)> {
    let (lo, hi) = inn.phi_bounds(x)?;
    Ok((lo - lambda * beta, hi + lambda * beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub x: Vec<f64>,
    pub y: f64,
    pub lo: f64,
    pub hi: f64,
}

impl CoverageRecord {
    pub fn covered(&self) -> bool {
        self.lo <= self.y && self.y <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub method: String,
    pub mode: SampleMode,
    pub n: usize,
    /// Fraction of `y` inside the prediction interval.
    pub coverage: f64,
    /// Fraction of `y` at or above the reported lower bound.
    pub lower_bound_coverage: f64,
    /// Coverage of the uninflated envelope, where applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_coverage: Option<f64>,
    #[serde(with = "lenient_f64")]
    pub mean_width: f64,
    #[serde(with = "lenient_f64")]
    pub median_width: f64,
}

/// Serde adapter writing non-finite floats as the strings `inf`, `-inf`
/// and `nan`, which plain JSON numbers cannot express.
pub mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Summary statistics over per-sample records; `bound` is the scalar lower
/// bound checked by `lower_bound_coverage` (per-sample `lo` when `None`).
pub(crate) fn summarize(
    method: &str,
    mode: SampleMode,
    records: &[CoverageRecord],
    bound: Option<f64>,
) -> CoverageStats {
    let n = records.len();
    let frac = |count: usize| count as f64 / n as f64;
    let covered = records.iter().filter(|r| r.covered()).count();
    let above = records
        .iter()
        .filter(|r| r.y >= bound.unwrap_or(r.lo))
        .count();
    let mut widths: Vec<f64> = records.iter().map(|r| r.hi - r.lo).collect();
    let mean_width = widths.iter().sum::<f64>() / n as f64;
    CoverageStats {
        method: method.to_owned(),
        mode,
        n,
        coverage: frac(covered),
        lower_bound_coverage: frac(above),
        raw_coverage: None,
        mean_width,
        median_width: median(&mut widths),
    }
}

/// Draw test inputs sequentially from `rng`, then label them in parallel on
/// substreams keyed by a seed drawn from the same stream.
pub(crate) fn draw_labeled(
    oracle: &dyn PerformanceOracle,
    sampler: &(dyn Fn(&mut Stream) -> Vec<f64> + Sync),
    n: usize,
    rng: &mut Stream,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let xs: Vec<Vec<f64>> = (0..n).map(|_| sampler(rng)).collect();
    let seed: u64 = rng.random();
    let ys = par::map_range(n, |i| {
        oracle.evaluate(&xs[i], &mut substream(seed, &[tag::EVAL, i as u64]))
    });
    xs.into_iter()
        .zip(ys)
        .map(|(x, y)| y.map(|y| (x, y)))
        .collect()
}

/// Empirical coverage of the inflated INN intervals and of the bound
/// `epsilon`, with the per-sample records.
#[allow(clippy::too_many_arguments)]
pub fn coverage_eval_records(
    inn: &ImpreciseNet,
    oracle: &dyn PerformanceOracle,
    family: &ContaminatedFamily,
    lambda: f64,
    beta: f64,
    epsilon: f64,
    n_test: usize,
    rng: &mut Stream,
    mode: SampleMode,
) -> Result<(CoverageStats, Vec<CoverageRecord>)> {
    if n_test == 0 {
        return Err(Error::invalid("n_test must be >= 1"));
    }
    let sampler = |r: &mut Stream| family.sample(mode, r);
    let labeled = draw_labeled(oracle, &sampler, n_test, rng)?;
    let raw = par::map_slice(&labeled, |(x, _)| envelope(&inn.member_values(x)));
    let pad = lambda * beta;
    let records: Vec<CoverageRecord> = labeled
        .into_iter()
        .zip(&raw)
        .map(|((x, y), (lo, hi))| CoverageRecord {
            x,
            y,
            lo: lo - pad,
            hi: hi + pad,
        })
        .collect();
    let mut stats = summarize("inn", mode, &records, Some(epsilon));
    let raw_hits = records
        .iter()
        .zip(&raw)
        .filter(|(r, (lo, hi))| *lo <= r.y && r.y <= *hi)
        .count();
    stats.raw_coverage = Some(raw_hits as f64 / n_test as f64);
    Ok((stats, records))
}

#[allow(clippy::too_many_arguments)]
pub fn coverage_eval(
    inn: &ImpreciseNet,
    oracle: &dyn PerformanceOracle,
    family: &ContaminatedFamily,
    lambda: f64,
    beta: f64,
    epsilon: f64,
    n_test: usize,
    rng: &mut Stream,
    mode: SampleMode,
) -> Result<CoverageStats> {
    coverage_eval_records(inn, oracle, family, lambda, beta, epsilon, n_test, rng, mode)
        .map(|(stats, _)| stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(boxes: Vec<InputBox>) -> ExploredRegion {
        ExploredRegion { boxes }
    }

    fn square(lo: f64, hi: f64) -> InputBox {
        InputBox::cube(2, lo, hi).unwrap()
    }

    #[test]
    fn weight_schemes() {
        let x0 = square(0.0, 10.0);
        let four = region((0..4).map(|i| square(i as f64, i as f64 + 1.0)).collect());
        let fam = build_family(&four, WeightScheme::Uniform, 0.05, &x0).unwrap();
        assert_eq!(fam.mixture.weights(), &[0.25; 4]);

        let two = region(vec![
            InputBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            InputBox::new(vec![2.0, 2.0], vec![5.0, 3.0]).unwrap(),
        ]);
        let fam = build_family(&two, WeightScheme::Volume, 0.05, &x0).unwrap();
        assert_eq!(fam.mixture.weights(), &[0.25, 0.75]);

        assert!(build_family(&region(vec![]), WeightScheme::Uniform, 0.05, &x0).is_err());
        assert!(build_family(&two, WeightScheme::Uniform, 1.0, &x0).is_err());
        let flat = region(vec![InputBox::new(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap()]);
        assert!(build_family(&flat, WeightScheme::Volume, 0.05, &x0).is_err());
    }

    #[test]
    fn upper_prob_extremes() {
        let x0 = square(0.0, 10.0);
        let fam = build_family(
            &region(vec![square(1.0, 2.0), square(1.5, 4.0), square(7.0, 9.0)]),
            WeightScheme::Uniform,
            0.05,
            &x0,
        )
        .unwrap();
        assert_eq!(upper_prob(&fam, &x0), 1.0);
        let disjoint = InputBox::new(vec![5.0, 0.0], vec![6.0, 10.0]).unwrap();
        assert!((upper_prob(&fam, &disjoint) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn contaminated_samples_stay_in_x0() {
        let x0 = square(0.0, 10.0);
        let fam = build_family(&region(vec![square(1.0, 2.0)]), WeightScheme::Uniform, 0.3, &x0).unwrap();
        let pts = sample_family(&fam, 2000, &mut substream(1, &[]), SampleMode::Contaminated);
        assert!(pts.iter().all(|p| x0.contains(p)));
        assert!(pts.iter().any(|p| !square(1.0, 2.0).contains(p)));
        let mix = sample_family(&fam, 2000, &mut substream(1, &[]), SampleMode::Mixture);
        assert!(mix.iter().all(|p| square(1.0, 2.0).contains(p)));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
