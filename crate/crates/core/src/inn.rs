//! Imprecise Neural Network: a k-member ensemble whose pointwise min and max
//! give lower and upper envelopes of the regression target.
//!
//! Training minimizes the empirical interval loss
//!
//! ```text
//! mean over (x, y) of  max(y - upper(x), 0)^2 + max(lower(x) - y, 0)^2
//!                      + beta * (upper(x) - lower(x))
//! ```
//!
//! jointly over all members. Upper-envelope terms are routed to the member
//! attaining the max at `x`, lower-envelope terms to the member attaining the
//! min; ties go to the lowest member index.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::InputBox;
use crate::error::{Error, Result};
use crate::net::{AdamConfig, Gradients, NetFile, Network, NetworkSpec, OptimizerState};
use crate::par;
use crate::rng::{derive_seed, substream, tag};

pub const INN_FORMAT: &str = "robust-verify-inn/1";

/// Affine input map `z = (x - shift) * scale` applied before every member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNormalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNormalizer {
    /// Maps `b` onto `[-1, 1]^d`. Degenerate dimensions get unit scale.
    pub fn for_box(b: &InputBox) -> Self {
        let shift = b.center();
        let scale = b
            .widths()
            .iter()
            .map(|w| if *w > 0.0 { 2.0 / w } else { 1.0 })
            .collect();
        Self { shift, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, k))| (v - s) * k)
            .collect()
    }

    pub fn apply_box(&self, b: &InputBox) -> InputBox {
        let lo = self.apply(b.lo());
        let hi = self.apply(b.hi());
        InputBox::new(lo, hi).expect("positive scales preserve box order")
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.shift.len() != dim || self.scale.len() != dim {
            return Err(Error::invalid("normalizer dimension mismatch"));
        }
        if !self
            .shift
            .iter()
            .chain(&self.scale)
            .all(|v| v.is_finite())
            || self.scale.iter().any(|k| *k <= 0.0)
        {
            return Err(Error::invalid("normalizer must be finite with positive scales"));
        }
        Ok(())
    }
}

/// A labeled sample `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpreciseNet {
    members: Vec<Network>,
    normalizer: Option<InputNormalizer>,
}

impl ImpreciseNet {
    pub fn new(members: Vec<Network>, normalizer: Option<InputNormalizer>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("an imprecise net needs at least one member"))?;
        if members.iter().any(|m| m.spec() != first.spec()) {
            return Err(Error::invalid("all members must share one network spec"));
        }
        if let Some(n) = &normalizer {
            n.validate(first.input_dim())?;
        }
        Ok(Self {
            members,
            normalizer,
        })
    }

    /// `k` He-initialized members with seeds derived from `seed`.
    pub fn init_random(
        spec: &NetworkSpec,
        k: usize,
        seed: u64,
        normalizer: Option<InputNormalizer>,
    ) -> Result<Self> {
        let members = (0..k as u64)
            .map(|i| Network::init_random(spec, derive_seed(seed, &[tag::MEMBER_INIT, i])))
            .collect::<Result<_>>()?;
        Self::new(members, normalizer)
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Network] {
        &self.members
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.members[0].spec()
    }

    pub fn input_dim(&self) -> usize {
        self.spec().input_dim
    }

    pub fn normalizer(&self) -> Option<&InputNormalizer> {
        self.normalizer.as_ref()
    }

    /// Member input for raw `x`.
    pub fn member_input(&self, x: &[f64]) -> Vec<f64> {
        match &self.normalizer {
            Some(n) => n.apply(x),
            None => x.to_vec(),
        }
    }

    /// Member-space box for a raw box.
    pub fn member_box(&self, b: &InputBox) -> InputBox {
        match &self.normalizer {
            Some(n) => n.apply_box(b),
            None => b.clone(),
        }
    }

    /// d(member input)/d(raw x), per dimension.
    pub fn input_scale(&self) -> Vec<f64> {
        match &self.normalizer {
            Some(n) => n.scale.clone(),
            None => vec![1.0; self.input_dim()],
        }
    }

    /// Outputs of every member at raw `x` (unchecked).
    pub fn member_values(&self, x: &[f64]) -> Vec<f64> {
        let z = self.member_input(x);
        self.members.iter().map(|m| m.eval(&z)).collect()
    }

    /// `(lower, upper)` envelope at `x`.
    pub fn phi_bounds(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.members[0].check_input(x)?;
        Ok(envelope(&self.member_values(x)))
    }

    pub fn uncertainty(&self, x: &[f64]) -> Result<f64> {
        let (lo, hi) = self.phi_bounds(x)?;
        Ok(hi - lo)
    }

    pub fn to_file(&self) -> InnFile {
        InnFile {
            format: INN_FORMAT.to_owned(),
            k: self.k(),
            members: self.members.iter().map(Network::to_file).collect(),
            normalizer: self.normalizer.clone(),
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_file()).expect("imprecise net serializes")
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let file: InnFile =
            serde_json::from_slice(bytes).map_err(|e| Error::from_json(bytes, &e))?;
        Self::from_file(file)
    }

    pub fn from_file(file: InnFile) -> Result<Self> {
        if file.format != INN_FORMAT {
            return Err(Error::invalid(format!(
                "unsupported model format `{}`, expected `{INN_FORMAT}`",
                file.format
            )));
        }
        if file.k != file.members.len() {
            return Err(Error::invalid(format!(
                "k = {} but {} members listed",
                file.k,
                file.members.len()
            )));
        }
        let members = file
            .members
            .into_iter()
            .map(Network::from_file)
            .collect::<Result<_>>()?;
        Self::new(members, file.normalizer)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnFile {
    pub format: String,
    pub k: usize,
    pub members: Vec<NetFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<InputNormalizer>,
}

/// `(min, max)` of member outputs.
pub fn envelope(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        })
}

/// Indices of the (argmin, argmax) members, lowest index on ties.
pub fn active_members(values: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[lo] {
            lo = i;
        }
        if *v > values[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

fn sample_loss(y: f64, lo: f64, hi: f64, beta: f64) -> f64 {
    let over = (y - hi).max(0.0);
    let under = (lo - y).max(0.0);
    over * over + under * under + beta * (hi - lo)
}

fn check_batch(inn: &ImpreciseNet, batch: &[LabeledSample], beta: f64) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must be non-empty"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta must be positive"));
    }
    for s in batch {
        inn.members[0].check_input(&s.x)?;
        if !s.y.is_finite() {
            return Err(Error::invalid("labels must be finite"));
        }
    }
    Ok(())
}

pub fn interval_loss(inn: &ImpreciseNet, batch: &[LabeledSample], beta: f64) -> Result<f64> {
    check_batch(inn, batch, beta)?;
    let losses = par::map_slice(batch, |s| {
        let (lo, hi) = envelope(&inn.member_values(&s.x));
        sample_loss(s.y, lo, hi, beta)
    });
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

pub fn interval_loss_grads(
    inn: &ImpreciseNet,
    batch: &[LabeledSample],
    beta: f64,
) -> Result<Vec<Gradients>> {
    check_batch(inn, batch, beta)?;
    Ok(loss_and_grads(inn, batch, beta).1)
}

/// Batch-mean loss and per-member gradients from a single routing pass.
fn loss_and_grads(inn: &ImpreciseNet, batch: &[LabeledSample], beta: f64) -> (f64, Vec<Gradients>) {
    let n = batch.len() as f64;
    // (member input, argmin, argmax, d/dlower, d/dupper, loss)
    let routed = par::map_slice(batch, |s| {
        let z = inn.member_input(&s.x);
        let values: Vec<f64> = inn.members.iter().map(|m| m.eval(&z)).collect();
        let (lo_idx, hi_idx) = active_members(&values);
        let (lo, hi) = (values[lo_idx], values[hi_idx]);
        let d_hi = -2.0 * (s.y - hi).max(0.0) + beta;
        let d_lo = 2.0 * (lo - s.y).max(0.0) - beta;
        (z, lo_idx, hi_idx, d_lo / n, d_hi / n, sample_loss(s.y, lo, hi, beta))
    });
    let loss = routed.iter().map(|r| r.5).sum::<f64>() / n;
    let grads = par::map_range(inn.k(), |m| {
        let net = &inn.members[m];
        let mut g = Gradients::zeros(net.spec());
        for (z, lo_idx, hi_idx, d_lo, d_hi, _) in &routed {
            let mut upstream = 0.0;
            if *hi_idx == m {
                upstream += d_hi;
            }
            if *lo_idx == m {
                upstream += d_lo;
            }
            if upstream != 0.0 {
                net.backward_into(z, upstream, &mut g);
            }
        }
        g.input.iter_mut().for_each(|v| *v = 0.0);
        g
    });
    (loss, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 1e-3,
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            warm_start: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Mini-batch Adam on the interval loss. Returns the trained net and the mean
/// loss of every epoch.
pub fn train(
    inn: &ImpreciseNet,
    data: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<(ImpreciseNet, Vec<f64>)> {
    cfg.validate()?;
    check_batch(inn, data, cfg.beta)?;
    let mut net = if cfg.warm_start {
        inn.clone()
    } else {
        ImpreciseNet::init_random(
            inn.spec(),
            inn.k(),
            derive_seed(cfg.seed, &[tag::MEMBER_INIT]),
            inn.normalizer.clone(),
        )?
    };
    let mut states: Vec<OptimizerState> = net
        .members
        .iter()
        .map(|m| OptimizerState::new(m.spec(), cfg.adam))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut substream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (loss, grads) = loss_and_grads(&net, &batch, cfg.beta);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch: epoch + 1 });
            }
            total += loss * chunk.len() as f64;
            for ((member, state), g) in net.members.iter_mut().zip(&mut states).zip(&grads) {
                state.apply(member, g)?;
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || net.members.iter().any(|m| m.params().any(|p| !p.is_finite())) {
            return Err(Error::TrainingDiverged { epoch: epoch + 1 });
        }
        trace.push(mean);
    }
    Ok((net, trace))
}

/// `|mean(max(y - upper, 0)) - beta/2|` and `|mean(max(lower - y, 0)) - beta/2|`.
///
/// Both vanish at a stationary point of the interval loss.
pub fn stationarity_residuals(
    inn: &ImpreciseNet,
    data: &[LabeledSample],
    beta: f64,
) -> Result<(f64, f64)> {
    check_batch(inn, data, beta)?;
    let hinges = par::map_slice(data, |s| {
        let (lo, hi) = envelope(&inn.member_values(&s.x));
        ((s.y - hi).max(0.0), (lo - s.y).max(0.0))
    });
    let n = data.len() as f64;
    let over = hinges.iter().map(|h| h.0).sum::<f64>() / n;
    let under = hinges.iter().map(|h| h.1).sum::<f64>() / n;
    Ok(((over - beta / 2.0).abs(), (under - beta / 2.0).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Layer;

    /// 1-input net computing the constant `c` (zero weights).
    pub(crate) fn constant_net(c: f64) -> Network {
        let spec = NetworkSpec::new(1, vec![1]).unwrap();
        Network::new(
            spec,
            vec![
                Layer::new(1, 1, vec![0.0], vec![0.0]).unwrap(),
                Layer::new(1, 1, vec![0.0], vec![c]).unwrap(),
            ],
        )
        .unwrap()
    }

    fn constants(cs: &[f64]) -> ImpreciseNet {
        ImpreciseNet::new(cs.iter().map(|c| constant_net(*c)).collect(), None).unwrap()
    }

    #[test]
    fn envelopes_of_constant_members() {
        let inn = constants(&[1.0, 2.0, 0.5]);
        assert_eq!(inn.phi_bounds(&[0.3]).unwrap(), (0.5, 2.0));
        assert_eq!(inn.uncertainty(&[0.3]).unwrap(), 1.5);
        let single = constants(&[1.25]);
        assert_eq!(single.phi_bounds(&[0.0]).unwrap(), (1.25, 1.25));
        assert_eq!(single.uncertainty(&[0.0]).unwrap(), 0.0);
        assert!(inn.phi_bounds(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn mismatched_members_rejected() {
        let spec = NetworkSpec::new(1, vec![2]).unwrap();
        let other = Network::init_random(&spec, 0).unwrap();
        assert!(ImpreciseNet::new(vec![constant_net(0.0), other], None).is_err());
        assert!(ImpreciseNet::new(vec![], None).is_err());
    }

    #[test]
    fn loss_hand_cases() {
        let inn = constants(&[1.0, 2.0]);
        let beta = 1e-3;
        let inside = [LabeledSample::new(vec![0.0], 1.5)];
        assert_eq!(interval_loss(&inn, &inside, beta).unwrap(), beta * 1.0);
        let above = [LabeledSample::new(vec![0.0], 2.25)];
        assert_eq!(interval_loss(&inn, &above, beta).unwrap(), 0.0625 + beta);
        assert!(interval_loss(&inn, &[], beta).is_err());
        assert!(interval_loss(&inn, &inside, 0.0).is_err());
    }

    #[test]
    fn routing_to_argmax_member() {
        let inn = constants(&[0.0, 1.0, 0.5]);
        let beta = 0.01;
        let batch = [LabeledSample::new(vec![0.0], 3.0)];
        let grads = interval_loss_grads(&inn, &batch, beta).unwrap();
        // output bias gradient is d loss / d f_i
        assert_eq!(grads[1].biases[1], vec![-2.0 * 2.0 + beta]);
        assert_eq!(grads[0].biases[1], vec![-beta]);
        assert!(grads[2].is_zero());
    }

    #[test]
    fn single_member_width_cancels() {
        let inn = constants(&[1.0]);
        let batch = [LabeledSample::new(vec![0.0], 1.0)];
        let grads = interval_loss_grads(&inn, &batch, 0.5).unwrap();
        assert_eq!(grads[0].biases[1], vec![0.0]);
        let batch = [LabeledSample::new(vec![0.0], 1.5)];
        let grads = interval_loss_grads(&inn, &batch, 0.5).unwrap();
        assert_eq!(grads[0].biases[1], vec![-1.0]);
    }

    #[test]
    fn ties_route_to_lowest_index() {
        assert_eq!(active_members(&[2.0, 2.0, 1.0, 1.0]), (2, 0));
        assert_eq!(active_members(&[3.0]), (0, 0));
    }

    #[test]
    fn stationarity_hand_cases() {
        let beta = 0.1;
        let wide = constants(&[-10.0, 10.0]);
        let data: Vec<_> = (0..4).map(|i| LabeledSample::new(vec![0.0], i as f64)).collect();
        assert_eq!(stationarity_residuals(&wide, &data, beta).unwrap(), (0.05, 0.05));

        let delta = 0.3;
        let inn = constants(&[0.0, 1.0]);
        let data = vec![
            LabeledSample::new(vec![0.0], 1.0 + delta),
            LabeledSample::new(vec![0.0], 0.5),
        ];
        let (upper, lower) = stationarity_residuals(&inn, &data, beta).unwrap();
        assert!((upper - (delta / 2.0 - beta / 2.0).abs()).abs() < 1e-15);
        assert_eq!(lower, beta / 2.0);
    }

    #[test]
    fn train_contract() {
        let spec = NetworkSpec::new(1, vec![8]).unwrap();
        let inn = ImpreciseNet::init_random(&spec, 3, 1, None).unwrap();
        let data: Vec<_> = (0..20)
            .map(|i| LabeledSample::new(vec![i as f64 / 20.0], 0.3))
            .collect();
        let cfg = TrainConfig {
            epochs: 7,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (a, trace) = train(&inn, &data, &cfg).unwrap();
        assert_eq!(trace.len(), 7);
        let (b, _) = train(&inn, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(train(&inn, &[], &cfg).is_err());
        let cold = TrainConfig {
            warm_start: false,
            ..cfg.clone()
        };
        let (c, _) = train(&inn, &data, &cold).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn divergence_is_reported() {
        let inn = constants(&[0.0, 1.0]);
        let data = vec![LabeledSample::new(vec![0.0], 1e300)];
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        match train(&inn, &data, &cfg) {
            Err(Error::TrainingDiverged { epoch }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let spec = NetworkSpec::new(2, vec![4]).unwrap();
        let b = InputBox::new(vec![0.0, 10.0], vec![2.0, 20.0]).unwrap();
        let inn = ImpreciseNet::init_random(&spec, 3, 5, Some(InputNormalizer::for_box(&b))).unwrap();
        let back = ImpreciseNet::deserialize(&inn.serialize()).unwrap();
        assert_eq!(back, inn);
        let text = String::from_utf8(inn.serialize()).unwrap();
        assert!(text.contains("\"format\":\"robust-verify-inn/1\""));
        assert!(text.contains("\"k\":3"));
    }

    #[test]
    fn normalizer_maps_box_to_unit_cube() {
        let b = InputBox::new(vec![0.5, 0.5], vec![9.5, 9.5]).unwrap();
        let n = InputNormalizer::for_box(&b);
        assert_eq!(n.apply(&[0.5, 9.5]), vec![-1.0, 1.0]);
        assert_eq!(n.apply_box(&b), InputBox::cube(2, -1.0, 1.0).unwrap());
    }
}
