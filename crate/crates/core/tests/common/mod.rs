#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal};
use robust_verify::net::{Layer, Network, NetworkSpec};
use robust_verify::rng::{substream, Stream};
use robust_verify::{ImpreciseNet, InputBox};

/// He-scaled weights with biases uniform in [-0.5, 0.5].
pub fn random_net(input_dim: usize, widths: &[usize], rng: &mut Stream) -> Network {
    let spec = NetworkSpec::new(input_dim, widths.to_vec()).unwrap();
    let layers = spec
        .layer_dims()
        .into_iter()
        .map(|(i, o)| {
            let normal = Normal::new(0.0, (2.0 / i as f64).sqrt()).unwrap();
            let w = (0..i * o).map(|_| normal.sample(rng)).collect();
            let b = (0..o).map(|_| rng.random_range(-0.5..0.5)).collect();
            Layer::new(i, o, w, b).unwrap()
        })
        .collect();
    Network::new(spec, layers).unwrap()
}

pub fn random_inn(k: usize, input_dim: usize, widths: &[usize], seed: u64) -> ImpreciseNet {
    let mut rng = substream(seed, &[0xabc]);
    let members = (0..k).map(|_| random_net(input_dim, widths, &mut rng)).collect();
    ImpreciseNet::new(members, None).unwrap()
}

/// Straight-line evaluation from the weight rows, sharing no code with
/// `Network::forward`.
pub fn reference_forward(net: &Network, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let n = net.layers().len();
    for (l, layer) in net.layers().iter().enumerate() {
        let rows = layer.rows();
        let mut z = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            let mut s = layer.biases()[r];
            for j in 0..row.len() {
                s += row[j] * a[j];
            }
            z.push(if l + 1 < n && s < 0.0 { 0.0 } else { s });
        }
        a = z;
    }
    a[0]
}

/// Smallest |pre-activation| over the hidden layers at `x`.
pub fn min_abs_preactivation(net: &Network, x: &[f64]) -> f64 {
    let pre = net.pre_activations(x);
    pre[..pre.len() - 1]
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Lipschitz constant of `net` w.r.t. the max-norm on inputs:
/// product of the induced infinity norms (max absolute row sums).
pub fn lipschitz_inf(net: &Network) -> f64 {
    net.layers()
        .iter()
        .map(|l| {
            l.rows()
                .iter()
                .map(|r| r.iter().map(|w| w.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .product()
}

/// Points of the `n x n` grid over a 2-d box, row by row.
pub fn grid_2d(b: &InputBox, n: usize) -> impl Iterator<Item = [f64; 2]> + '_ {
    let step = move |i: usize, d: usize| b.lo()[d] + (b.hi()[d] - b.lo()[d]) * i as f64 / (n - 1) as f64;
    (0..n).flat_map(move |i| (0..n).map(move |j| [step(i, 0), step(j, 1)]))
}

/// (min, max) of `f` over the grid.
pub fn grid_extrema(b: &InputBox, n: usize, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    grid_2d(b, n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let v = f(&p);
        (lo.min(v), hi.max(v))
    })
}
