//! Sequential importance resampling filter over planar positions.
//!
//! Particles carry a position and a weight. Heading is not a per-particle
//! state: all particles share the measured compass heading of the current
//! step, which `FilterState` keeps alongside the particle set.
//!
//! Every random draw comes from a stream derived from the state's seeds and
//! the particle index, so results are identical for any thread count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_finite, GridSpec, ParticlePose};
use crate::seeds::{derive_seed, rng_for};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("expected {expected} scores, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("score {0} outside [-1, 1]")]
    ScoreOutOfRange(f64),
    #[error("invalid filter parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: ParticlePose,
    pub weight: f64,
}

/// Odometry noise as fractions of the step's own magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    /// Per-axis translational sigma as a fraction of the step length.
    pub odom_frac: f64,
    /// Heading sigma as a fraction of the absolute heading increment.
    pub heading_frac: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            odom_frac: 0.02,
            heading_frac: 0.01,
        }
    }
}

impl NoiseParams {
    pub const ZERO: NoiseParams = NoiseParams {
        odom_frac: 0.0,
        heading_frac: 0.0,
    };

    pub fn validate(&self) -> Result<(), FilterError> {
        for (name, v) in [
            ("odom_frac", self.odom_frac),
            ("heading_frac", self.heading_frac),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FilterError::InvalidParams(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn translation_sigma(&self, odo: &Odometry) -> f64 {
        self.odom_frac * odo.dx.hypot(odo.dy)
    }

    pub fn heading_sigma(&self, odo: &Odometry) -> f64 {
        self.heading_frac * odo.dpsi.abs()
    }
}

/// Gaussian likelihood of a similarity score around a reference score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasModel {
    pub sigma_s: f64,
    pub s_ref: f64,
}

impl Default for MeasModel {
    fn default() -> Self {
        Self {
            sigma_s: 0.3,
            s_ref: 1.0,
        }
    }
}

impl MeasModel {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.sigma_s > 0.0 && self.sigma_s.is_finite()) {
            return Err(FilterError::InvalidParams(format!(
                "sigma_s must be positive, got {}",
                self.sigma_s
            )));
        }
        if !self.s_ref.is_finite() {
            return Err(FilterError::InvalidParams("s_ref must be finite".into()));
        }
        Ok(())
    }

    pub fn likelihood(&self, score: f64) -> f64 {
        let r = self.s_ref - score;
        (-(r * r) / (2.0 * self.sigma_s * self.sigma_s)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub center: (f64, f64),
    pub sigma: f64,
    pub count: usize,
    pub seed: u64,
}

impl InitSpec {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(FilterError::InvalidParams(format!(
                "init sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.count == 0 {
            return Err(FilterError::InvalidParams(
                "particle count must be at least 1".into(),
            ));
        }
        if !self.center.0.is_finite() || !self.center.1.is_finite() {
            return Err(FilterError::NonFinite("init center".into()));
        }
        Ok(())
    }
}

/// World-frame odometry increment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Odometry {
    pub dx: f64,
    pub dy: f64,
    pub dpsi: f64,
}

impl Odometry {
    pub fn new(dx: f64, dy: f64, dpsi: f64) -> Self {
        Self { dx, dy, dpsi }
    }

    fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dpsi.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateReport {
    /// Total weight underflowed and the weights were reset to uniform.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    particles: Vec<Particle>,
    heading: f64,
    predict_seed: u64,
    resample_seed: u64,
    step: u64,
    resamples: u64,
}

const HEADING_STREAM: u64 = u64::MAX;

impl FilterState {
    /// Gaussian cloud around `spec.center`, clamped to the grid footprint,
    /// with uniform weights.
    pub fn init(spec: &InitSpec, grid: &GridSpec, heading: f64) -> Result<Self, FilterError> {
        spec.validate()?;
        if !heading.is_finite() {
            return Err(FilterError::NonFinite("initial heading".into()));
        }
        let heading = wrap_finite(heading);
        let w = 1.0 / spec.count as f64;
        let particles = (0..spec.count)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_for(spec.seed, &[0, i as u64]);
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                let (x, y) = grid.clamp_point(
                    spec.center.0 + spec.sigma * nx,
                    spec.center.1 + spec.sigma * ny,
                );
                Particle {
                    pose: ParticlePose { x, y, psi: heading },
                    weight: w,
                }
            })
            .collect();
        Ok(Self {
            particles,
            heading,
            predict_seed: derive_seed(spec.seed, &[1]),
            resample_seed: derive_seed(spec.seed, &[2]),
            step: 0,
            resamples: 0,
        })
    }

    /// Builds a state from explicit particles; weights are normalized.
    pub fn from_particles(
        particles: Vec<Particle>,
        heading: f64,
        seed: u64,
    ) -> Result<Self, FilterError> {
        if particles.is_empty() {
            return Err(FilterError::InvalidParams("particle set is empty".into()));
        }
        let total: f64 = particles.iter().map(|p| p.weight).sum();
        if !(total > 0.0 && total.is_finite()) || particles.iter().any(|p| p.weight < 0.0) {
            return Err(FilterError::InvalidParams(
                "weights must be non-negative with a positive finite sum".into(),
            ));
        }
        let heading = wrap_finite(heading);
        let particles = particles
            .into_iter()
            .map(|p| Particle {
                pose: ParticlePose {
                    psi: heading,
                    ..p.pose
                },
                weight: p.weight / total,
            })
            .collect();
        Ok(Self {
            particles,
            heading,
            predict_seed: derive_seed(seed, &[1]),
            resample_seed: derive_seed(seed, &[2]),
            step: 0,
            resamples: 0,
        })
    }

    /// Replaces the predict and resample streams.
    pub fn with_seeds(mut self, predict_seed: u64, resample_seed: u64) -> Self {
        self.predict_seed = predict_seed;
        self.resample_seed = resample_seed;
        self
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn poses(&self) -> Vec<ParticlePose> {
        self.particles.iter().map(|p| p.pose).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Overwrites the shared heading with a compass measurement.
    pub fn set_heading(&mut self, psi: f64) -> Result<(), FilterError> {
        if !psi.is_finite() {
            return Err(FilterError::NonFinite("heading".into()));
        }
        self.heading = wrap_finite(psi);
        let h = self.heading;
        self.particles.iter_mut().for_each(|p| p.pose.psi = h);
        Ok(())
    }

    /// Moves every particle by `odo` plus independent Gaussian noise and
    /// clamps it to the grid footprint. The heading increment and its noise
    /// are applied once to the shared heading.
    pub fn predict(
        &mut self,
        odo: Odometry,
        noise: &NoiseParams,
        grid: &GridSpec,
    ) -> Result<(), FilterError> {
        if !odo.is_finite() {
            return Err(FilterError::NonFinite("odometry".into()));
        }
        noise.validate()?;
        let sigma_t = noise.translation_sigma(&odo);
        let sigma_h = noise.heading_sigma(&odo);
        let step = self.step;
        let seed = self.predict_seed;

        let mut heading = self.heading + odo.dpsi;
        if sigma_h > 0.0 {
            let n: f64 = rng_for(seed, &[step, HEADING_STREAM]).sample(StandardNormal);
            heading += sigma_h * n;
        }
        let heading = wrap_finite(heading);
        self.heading = heading;

        self.particles
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, p)| {
                let (mut x, mut y) = (p.pose.x + odo.dx, p.pose.y + odo.dy);
                if sigma_t > 0.0 {
                    let mut rng = rng_for(seed, &[step, i as u64]);
                    let nx: f64 = rng.sample(StandardNormal);
                    let ny: f64 = rng.sample(StandardNormal);
                    x += sigma_t * nx;
                    y += sigma_t * ny;
                }
                let (x, y) = grid.clamp_point(x, y);
                p.pose = ParticlePose { x, y, psi: heading };
            });
        self.step += 1;
        Ok(())
    }

    /// Multiplies each weight by the Gaussian likelihood of its score and
    /// renormalizes. Falls back to uniform weights when the total underflows.
    pub fn update(
        &mut self,
        scores: &[f64],
        model: &MeasModel,
    ) -> Result<UpdateReport, FilterError> {
        model.validate()?;
        if scores.len() != self.particles.len() {
            return Err(FilterError::LengthMismatch {
                expected: self.particles.len(),
                got: scores.len(),
            });
        }
        for &s in scores {
            if !s.is_finite() {
                return Err(FilterError::NonFinite("score".into()));
            }
            if !(-1.0..=1.0).contains(&s) {
                return Err(FilterError::ScoreOutOfRange(s));
            }
        }
        let mut total = 0.0;
        for (p, &s) in self.particles.iter_mut().zip(scores) {
            p.weight *= model.likelihood(s);
            total += p.weight;
        }
        let degenerate = !(total > 0.0 && total.is_finite());
        if degenerate {
            let w = 1.0 / self.particles.len() as f64;
            self.particles.iter_mut().for_each(|p| p.weight = w);
        } else {
            self.particles.iter_mut().for_each(|p| p.weight /= total);
        }
        Ok(UpdateReport { degenerate })
    }

    pub fn effective_sample_size(&self) -> f64 {
        let sq: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        1.0 / sq
    }

    /// Systematic resampling with one uniform offset; weights become uniform.
    pub fn resample_systematic(&mut self) {
        let mut rng = rng_for(self.resample_seed, &[self.resamples]);
        self.resamples += 1;
        let offset: f64 = rng.gen();
        let indices = systematic_indices(&self.weights(), offset);
        let w = 1.0 / self.particles.len() as f64;
        self.particles = indices
            .into_iter()
            .map(|i| Particle {
                pose: self.particles[i].pose,
                weight: w,
            })
            .collect();
    }

    /// Weighted mean position with the shared heading.
    pub fn estimate(&self) -> ParticlePose {
        let (mut x, mut y) = (0.0, 0.0);
        for p in &self.particles {
            x += p.weight * p.pose.x;
            y += p.weight * p.pose.y;
        }
        ParticlePose {
            x,
            y,
            psi: self.heading,
        }
    }

    /// Weighted RMS distance of the particles from the estimate, in meters.
    pub fn dispersion(&self) -> f64 {
        let est = self.estimate();
        self.particles
            .iter()
            .map(|p| {
                let (dx, dy) = (p.pose.x - est.x, p.pose.y - est.y);
                p.weight * (dx * dx + dy * dy)
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_converged(&self, threshold_m: f64) -> bool {
        self.dispersion() < threshold_m
    }
}

/// Offspring indices of systematic resampling: sample `j` takes the first
/// particle whose cumulative weight exceeds `(j + offset) / n`.
pub fn systematic_indices(weights: &[f64], offset: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let total: f64 = weights.iter().sum();
    let mut i = 0;
    let mut cumulative = weights[0] / total;
    for j in 0..n {
        let target = (j as f64 + offset) / n as f64;
        while cumulative <= target && i < n - 1 {
            i += 1;
            cumulative += weights[i] / total;
        }
        out.push(i);
    }
    out
}
