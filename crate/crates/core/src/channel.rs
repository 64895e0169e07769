//! Log-distance path loss with temporally correlated log-normal shadowing
//! and Rician multipath.
//!
//! Received power in dBm at distance `d` is
//!
//! ```text
//! rssi(d) = p0 - 10 * gamma * log10(d / d0) + shadow(t) + multipath
//! ```
//!
//! The shadowing term is a stationary Gauss-Markov process with marginal
//! `Normal(0, sigma^2)` and lag-one correlation `rho` per tick. Static nodes
//! carry one multipath offset fixed per environment; the moving target sees
//! a fresh Rician envelope each tick.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Propagation parameters of one node's link to the access point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    /// Received power at the reference distance, dBm.
    pub p0: f64,
    /// Reference distance, meters.
    pub d0: f64,
    /// Path-loss exponent.
    pub gamma: f64,
    /// Shadowing standard deviation, dB.
    pub sigma: f64,
    /// Shadowing correlation between consecutive ticks.
    pub rho: f64,
    /// Rician K-factor of the multipath term. `f64::INFINITY` is pure line of sight.
    pub rician_k: f64,
    /// Environment seed.
    pub seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            p0: -40.0,
            d0: 1.0,
            gamma: 2.2,
            sigma: 4.0,
            rho: 0.95,
            rician_k: 6.0,
            seed: 0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0.is_finite() && self.gamma.is_finite()) {
            return Err(Error::Config("channel p0 and gamma must be finite".into()));
        }
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(Error::Config(format!("channel d0 must be > 0, got {}", self.d0)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("channel sigma must be >= 0, got {}", self.sigma)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("channel rho must be in [0, 1), got {}", self.rho)));
        }
        if !(self.rician_k >= 0.0) {
            return Err(Error::Config(format!(
                "channel rician_k must be >= 0, got {}",
                self.rician_k
            )));
        }
        Ok(())
    }

    /// Mean received power at distance `d` meters.
    pub fn mean_rssi(&self, d: f64) -> Result<f64> {
        mean_rssi(self, d)
    }
}

/// Deterministic mean received power in dBm at `d` meters.
pub fn mean_rssi(params: &ChannelParams, d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be positive and finite, got {d}")));
    }
    Ok(params.p0 - 10.0 * params.gamma * (d / params.d0).log10())
}

/// Current shadowing deviate (dB) of one node in one run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ShadowState {
    pub current: f64,
}

impl ShadowState {
    /// Starts at zero; needs a burn-in of a few `1/(1-rho)` ticks to reach
    /// the stationary marginal.
    pub fn zero() -> Self {
        Self { current: 0.0 }
    }

    /// Draws the initial deviate from the stationary marginal, so no burn-in
    /// is needed.
    pub fn stationary<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        Self {
            current: params.sigma * z,
        }
    }

    /// Advances one tick: `next = rho * current + sqrt(1 - rho^2) * sigma * z`.
    pub fn step<R: Rng + ?Sized>(&mut self, params: &ChannelParams, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let innovation = (1.0 - params.rho * params.rho).sqrt() * params.sigma;
        self.current = params.rho * self.current + innovation * z;
        self.current
    }
}

/// Free-function form of [`ShadowState::step`].
pub fn step_shadowing<R: Rng + ?Sized>(
    state: &mut ShadowState,
    params: &ChannelParams,
    rng: &mut R,
) -> f64 {
    state.step(params, rng)
}

/// Draws one Rician envelope with unit mean power and returns it in dB.
///
/// The line-of-sight amplitude is `sqrt(K/(K+1))` and the scattered part is a
/// circular complex Gaussian of power `1/(K+1)`. An infinite K gives 0 dB.
pub fn rician_db<R: Rng + ?Sized>(k: f64, rng: &mut R) -> f64 {
    if k.is_infinite() {
        return 0.0;
    }
    let los = (k / (k + 1.0)).sqrt();
    let s = (1.0 / (2.0 * (k + 1.0))).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    let (re, im) = (los + s * re, s * im);
    let power = (re * re + im * im).max(1e-12);
    10.0 * power.log10()
}

/// Multipath model of one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Multipath {
    /// Static node: a constant offset fixed by the environment.
    Static { offset_db: f64 },
    /// Moving node: an independent Rician deviate every tick.
    Fading,
}

impl Multipath {
    /// Static multipath offset of `node_id` in the environment `params.seed`.
    pub fn static_for(params: &ChannelParams, node_id: u8) -> Self {
        let mut rng = rng::stream_rng(rng::mix(params.seed, node_id as u64), stream::MULTIPATH);
        Multipath::Static {
            offset_db: rician_db(params.rician_k, &mut rng),
        }
    }
}

/// One RSSI sample: mean term, one shadowing step, and the multipath term.
pub fn sample_rssi<R: Rng + ?Sized>(
    params: &ChannelParams,
    shadow: &mut ShadowState,
    multipath: Multipath,
    d: f64,
    rng: &mut R,
) -> Result<f64> {
    let mean = mean_rssi(params, d)?;
    let shadowing = shadow.step(params, rng);
    let fading = match multipath {
        Multipath::Static { offset_db } => offset_db,
        Multipath::Fading => rician_db(params.rician_k, rng),
    };
    Ok(mean + shadowing + fading)
}

/// A node's channel with its own random stream.
#[derive(Clone, Debug)]
pub struct NodeChannel {
    params: ChannelParams,
    shadow: ShadowState,
    multipath: Multipath,
    rng: ChaCha8Rng,
}

impl NodeChannel {
    /// Channel of `node_id` for run `run_seed`. Static nodes take their offset
    /// from the environment seed in `params`; the stream depends on both.
    pub fn new(params: ChannelParams, node_id: u8, is_static: bool, run_seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = rng::stream_rng(rng::mix(run_seed, params.seed), node_id as u64);
        let shadow = ShadowState::stationary(&params, &mut rng);
        let multipath = if is_static {
            Multipath::static_for(&params, node_id)
        } else {
            Multipath::Fading
        };
        Ok(Self {
            params,
            shadow,
            multipath,
            rng,
        })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn multipath(&self) -> Multipath {
        self.multipath
    }

    pub fn sample(&mut self, d: f64) -> Result<f64> {
        sample_rssi(&self.params, &mut self.shadow, self.multipath, d, &mut self.rng)
    }
}
