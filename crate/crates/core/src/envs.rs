//! Black-box performance oracles.
//!
//! Each oracle maps an initial condition to a scalar performance value. The
//! dynamical environments run a fixed hand-coded controller and report the
//! temporal mean of a per-step reward in `[0, 1]`; the analytic oracles have
//! closed-form optima and serve as ground truth for the verifier.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::InputBox;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// A performance function `psi` over an input box `X0`.
pub trait PerformanceOracle: Sync {
    fn name(&self) -> &str;
    fn input_box(&self) -> &InputBox;
    /// One stochastic realization of `psi(x0)`.
    fn evaluate(&self, x0: &[f64], rng: &mut Stream) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn average_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }

    /// `t,s0,...,reward` rows; the reward column is empty for the initial state.
    pub fn to_csv(&self) -> String {
        let dim = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 0..dim {
            let _ = write!(out, ",s{i}");
        }
        out.push_str(",reward\n");
        for (t, s) in self.states.iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in s {
                let _ = write!(out, ",{v}");
            }
            match t.checked_sub(1).and_then(|i| self.rewards.get(i)) {
                Some(r) => {
                    let _ = writeln!(out, ",{r}");
                }
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub horizon: usize,
    pub dt: f64,
    pub noise_scale: f64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || !(self.dt > 0.0) || !(self.noise_scale >= 0.0) {
            return Err(Error::invalid(
                "horizon must be >= 1, dt > 0 and noise_scale >= 0",
            ));
        }
        Ok(())
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        WaterTanks::default_env()
    }
}

fn check_in_box(name: &str, b: &InputBox, x: &[f64]) -> Result<()> {
    if !b.contains(x) {
        return Err(Error::invalid(format!("{name}: initial state {x:?} outside {b:?}")));
    }
    Ok(())
}

/// Two cascaded tanks: a hysteresis-controlled pump fills tank 1, tank 1
/// drains into tank 2, tank 2 drains out. Reward tracks tank 2 at 5.0.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterTanks {
    pub env: EnvConfig,
    pub inflow: f64,
    pub transfer_rate: f64,
    pub drain_rate: f64,
    pub pump_on_below: f64,
    pub pump_off_above: f64,
    pub setpoint: f64,
    pub capacity: f64,
    input_box: InputBox,
}

impl Default for WaterTanks {
    fn default() -> Self {
        Self::new(Self::default_env())
    }
}

impl WaterTanks {
    pub fn default_env() -> EnvConfig {
        EnvConfig {
            horizon: 50,
            dt: 0.1,
            noise_scale: 0.1,
        }
    }

    pub fn new(env: EnvConfig) -> Self {
        Self {
            env,
            inflow: 2.0,
            transfer_rate: 0.25,
            drain_rate: 0.25,
            pump_on_below: 4.0,
            pump_off_above: 6.0,
            setpoint: 5.0,
            capacity: 10.0,
            input_box: InputBox::cube(2, 0.5, 9.5).expect("static box"),
        }
    }

    pub fn simulate(&self, x0: &[f64], rng: &mut Stream) -> Result<(f64, Trajectory)> {
        self.env.validate()?;
        check_in_box("water_tanks", &self.input_box, x0)?;
        let dt = self.env.dt;
        let (mut h1, mut h2) = (x0[0], x0[1]);
        // start in the band's lower half with the pump running
        let mut pump = h1 < 0.5 * (self.pump_on_below + self.pump_off_above);
        let mut states = vec![vec![h1, h2]];
        let mut rewards = Vec::with_capacity(self.env.horizon);
        for _ in 0..self.env.horizon {
            if h1 < self.pump_on_below {
                pump = true;
            } else if h1 > self.pump_off_above {
                pump = false;
            }
            let noise = if self.env.noise_scale > 0.0 {
                rng.random_range(-self.env.noise_scale..=self.env.noise_scale)
            } else {
                0.0
            };
            let inflow = if pump { self.inflow + noise } else { 0.0 };
            let transfer = self.transfer_rate * h1;
            let drain = self.drain_rate * h2;
            h1 = (h1 + dt * (inflow - transfer)).clamp(0.0, self.capacity);
            h2 = (h2 + dt * (transfer - drain)).clamp(0.0, self.capacity);
            states.push(vec![h1, h2]);
            let r = 1.0 - (h2 - self.setpoint).abs() / self.setpoint;
            rewards.push(r.clamp(0.0, 1.0));
        }
        let traj = Trajectory { states, rewards };
        Ok((traj.average_reward(), traj))
    }
}

impl PerformanceOracle for WaterTanks {
    fn name(&self) -> &str {
        "water_tanks"
    }

    fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    fn evaluate(&self, x0: &[f64], rng: &mut Stream) -> Result<f64> {
        self.simulate(x0, rng).map(|(r, _)| r)
    }
}

pub fn water_tanks(x0: &[f64], cfg: &EnvConfig, rng: &mut Stream) -> Result<(f64, Trajectory)> {
    WaterTanks::new(cfg.clone()).simulate(x0, rng)
}

/// Damped inverted pendulum (`theta = 0` is upright) under an energy-pumping
/// swing-up law that hands over to a PD stabilizer near the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub env: EnvConfig,
    /// g / l
    pub gravity: f64,
    pub damping: f64,
    pub max_torque: f64,
    pub kp: f64,
    pub kd: f64,
    pub energy_gain: f64,
    input_box: InputBox,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new(Self::default_env())
    }
}

impl Pendulum {
    pub fn default_env() -> EnvConfig {
        EnvConfig {
            horizon: 100,
            dt: 0.05,
            noise_scale: 0.1,
        }
    }

    pub fn new(env: EnvConfig) -> Self {
        Self {
            env,
            gravity: 9.81,
            damping: 0.1,
            max_torque: 6.0,
            kp: 30.0,
            kd: 8.0,
            energy_gain: 1.0,
            input_box: InputBox::new(vec![-PI, -2.0], vec![PI, 2.0]).expect("static box"),
        }
    }

    fn control(&self, theta: f64, omega: f64) -> f64 {
        let u = if theta.cos() > (PI / 4.0).cos() {
            -self.kp * theta.sin() - self.kd * omega
        } else {
            // E = omega^2 / 2 + g cos(theta); upright at rest has E = g
            let energy = 0.5 * omega * omega + self.gravity * theta.cos();
            self.energy_gain * (self.gravity - energy) * omega
        };
        u.clamp(-self.max_torque, self.max_torque)
    }

    pub fn simulate(&self, x0: &[f64], rng: &mut Stream) -> Result<(f64, Trajectory)> {
        self.env.validate()?;
        check_in_box("pendulum", &self.input_box, x0)?;
        let dt = self.env.dt;
        let (mut theta, mut omega) = (x0[0], x0[1]);
        let mut states = vec![vec![theta, omega]];
        let mut rewards = Vec::with_capacity(self.env.horizon);
        for _ in 0..self.env.horizon {
            let noise = if self.env.noise_scale > 0.0 {
                rng.random_range(-self.env.noise_scale..=self.env.noise_scale)
            } else {
                0.0
            };
            let torque = self.control(theta, omega) + noise;
            let accel = self.gravity * theta.sin() - self.damping * omega + torque;
            // semi-implicit Euler
            omega += dt * accel;
            theta += dt * omega;
            states.push(vec![theta, omega]);
            rewards.push(0.5 * (1.0 + theta.cos()));
        }
        let traj = Trajectory { states, rewards };
        Ok((traj.average_reward(), traj))
    }
}

impl PerformanceOracle for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }

    fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    fn evaluate(&self, x0: &[f64], rng: &mut Stream) -> Result<f64> {
        self.simulate(x0, rng).map(|(r, _)| r)
    }
}

pub fn pendulum(x0: &[f64], cfg: &EnvConfig, rng: &mut Stream) -> Result<(f64, Trajectory)> {
    Pendulum::new(cfg.clone()).simulate(x0, rng)
}

/// Center of the `Quad` oracle.
pub const QUAD_CENTER: [f64; 2] = [0.3, -0.2];
pub const QUAD_SINE_DIM: usize = 12;

/// Closed-form test functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticKind {
    /// `sin(3 x1) cos(2 x2)` on `[-1, 1]^2`
    Sine2d,
    /// `min(x, 1 - x)` on `[0, 1]`, maximum 0.5 at 0.5
    Hat1d,
    /// `-|x - c|^2` on `[-1, 1]^2` with `c = QUAD_CENTER`, maximum 0 at `c`
    Quad,
    /// `-|x - c|^2 + 0.05 sum cos(pi (x_i - c_i))` on `[-1, 1]^12` with
    /// `c_i = 0.5 - i / 12`, maximum 0.6 at `c`
    QuadSine12,
}

impl AnalyticKind {
    pub const ALL: [AnalyticKind; 4] = [
        AnalyticKind::Sine2d,
        AnalyticKind::Hat1d,
        AnalyticKind::Quad,
        AnalyticKind::QuadSine12,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnalyticKind::Sine2d => "sine2d",
            AnalyticKind::Hat1d => "hat1d",
            AnalyticKind::Quad => "quad",
            AnalyticKind::QuadSine12 => "quad_sine12",
        }
    }

    pub fn input_box(self) -> InputBox {
        match self {
            AnalyticKind::Sine2d | AnalyticKind::Quad => InputBox::cube(2, -1.0, 1.0),
            AnalyticKind::Hat1d => InputBox::cube(1, 0.0, 1.0),
            AnalyticKind::QuadSine12 => InputBox::cube(QUAD_SINE_DIM, -1.0, 1.0),
        }
        .expect("static box")
    }

    /// Location and value of the global maximum, where closed-form.
    pub fn maximum(self) -> Option<(Vec<f64>, f64)> {
        match self {
            AnalyticKind::Sine2d => None,
            AnalyticKind::Hat1d => Some((vec![0.5], 0.5)),
            AnalyticKind::Quad => Some((QUAD_CENTER.to_vec(), 0.0)),
            AnalyticKind::QuadSine12 => Some((quad_sine_center(), 0.05 * QUAD_SINE_DIM as f64)),
        }
    }

    fn eval(self, x: &[f64]) -> f64 {
        match self {
            AnalyticKind::Sine2d => (3.0 * x[0]).sin() * (2.0 * x[1]).cos(),
            AnalyticKind::Hat1d => x[0].min(1.0 - x[0]),
            AnalyticKind::Quad => -x
                .iter()
                .zip(QUAD_CENTER)
                .map(|(v, c)| (v - c).powi(2))
                .sum::<f64>(),
            AnalyticKind::QuadSine12 => x
                .iter()
                .zip(quad_sine_center())
                .map(|(v, c)| -(v - c).powi(2) + 0.05 * (PI * (v - c)).cos())
                .sum(),
        }
    }
}

fn quad_sine_center() -> Vec<f64> {
    (0..QUAD_SINE_DIM)
        .map(|i| 0.5 - i as f64 / QUAD_SINE_DIM as f64)
        .collect()
}

pub fn analytic_oracle(kind: AnalyticKind, x: &[f64]) -> Result<f64> {
    check_in_box(kind.name(), &kind.input_box(), x)?;
    Ok(kind.eval(x))
}

/// An analytic function with optional additive uniform noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Analytic {
    pub kind: AnalyticKind,
    pub noise_scale: f64,
    input_box: InputBox,
}

impl Analytic {
    pub fn new(kind: AnalyticKind, noise_scale: f64) -> Self {
        Self {
            kind,
            noise_scale,
            input_box: kind.input_box(),
        }
    }
}

impl PerformanceOracle for Analytic {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    fn evaluate(&self, x0: &[f64], rng: &mut Stream) -> Result<f64> {
        let v = analytic_oracle(self.kind, x0)?;
        if self.noise_scale > 0.0 {
            Ok(v + rng.random_range(-self.noise_scale..=self.noise_scale))
        } else {
            Ok(v)
        }
    }
}

/// Names accepted by [`lookup`].
pub fn names() -> Vec<&'static str> {
    let mut names = vec!["water_tanks", "pendulum"];
    names.extend(AnalyticKind::ALL.iter().map(|k| k.name()));
    names
}

pub fn describe(name: &str) -> Option<&'static str> {
    Some(match name {
        "water_tanks" => "two-tank level control, x0 = (level1, level2) in [0.5, 9.5]^2",
        "pendulum" => "swing-up and balance, x0 = (theta, theta_dot) in [-pi, pi] x [-2, 2]",
        "sine2d" => "sin(3 x1) cos(2 x2) on [-1, 1]^2",
        "hat1d" => "min(x, 1 - x) on [0, 1]",
        "quad" => "-|x - (0.3, -0.2)|^2 on [-1, 1]^2",
        "quad_sine12" => "12-d quadratic plus cosine ripple on [-1, 1]^12",
        _ => return None,
    })
}

/// Build an oracle by name. `noise_scale` overrides the default noise level
/// (dynamical environments) or adds output noise (analytic oracles).
pub fn lookup(name: &str, noise_scale: Option<f64>) -> Option<Box<dyn PerformanceOracle>> {
    match name {
        "water_tanks" => {
            let mut env = WaterTanks::default_env();
            if let Some(n) = noise_scale {
                env.noise_scale = n;
            }
            Some(Box::new(WaterTanks::new(env)))
        }
        "pendulum" => {
            let mut env = Pendulum::default_env();
            if let Some(n) = noise_scale {
                env.noise_scale = n;
            }
            Some(Box::new(Pendulum::new(env)))
        }
        _ => AnalyticKind::ALL
            .iter()
            .find(|k| k.name() == name)
            .map(|k| Box::new(Analytic::new(*k, noise_scale.unwrap_or(0.0))) as Box<dyn PerformanceOracle>),
    }
}
