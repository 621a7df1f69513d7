//! Pose-aware embedding pipeline.
//!
//! A ground observation is lifted once per time step into a positional
//! feature map ([`BaseEmbedding`]). Each particle then appends its own pose
//! feature (displacement from its tile center plus the shared measured
//! heading) to the input of a small spatial-attention aggregation head and
//! gets its own embedding, which is compared against the precomputed
//! embedding of the particle's tile.

mod store;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{displacement_from_center, tile_of, GeometryError, GridSpec, ParticlePose};
use crate::seeds::derive_seed;
use crate::world::GroundObservation;

pub use store::{precompute_sat_store, SatStore, STORE_MAGIC, STORE_VERSION};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("displacement ({dx}, {dy}) exceeds half the tile spacing {half}")]
    Range { dx: f64, dy: f64, half: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store: {0}")]
    CorruptStore(String),
    #[error("unsupported store version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
}

/// Which parts of the particle pose reach the aggregation head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    #[default]
    Full,
    HeadingOnly,
    None,
}

impl PoseMode {
    pub fn feature_len(self) -> usize {
        match self {
            PoseMode::Full => 4,
            PoseMode::HeadingOnly => 2,
            PoseMode::None => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PoseMode::Full => "full",
            PoseMode::HeadingOnly => "heading_only",
            PoseMode::None => "none",
        }
    }
}

impl std::str::FromStr for PoseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(PoseMode::Full),
            "heading_only" => Ok(PoseMode::HeadingOnly),
            "none" => Ok(PoseMode::None),
            other => Err(format!(
                "unknown pose mode `{other}` (expected full, heading_only or none)"
            )),
        }
    }
}

/// Pose input of the aggregation head. Displacements are normalized by half
/// the tile spacing, so they lie in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseFeature {
    Full {
        dx_n: f64,
        dy_n: f64,
        sin_psi: f64,
        cos_psi: f64,
    },
    HeadingOnly {
        sin_psi: f64,
        cos_psi: f64,
    },
    Empty,
}

impl PoseFeature {
    pub fn len(&self) -> usize {
        self.mode().feature_len()
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, PoseFeature::Empty)
    }

    pub fn mode(&self) -> PoseMode {
        match self {
            PoseFeature::Full { .. } => PoseMode::Full,
            PoseFeature::HeadingOnly { .. } => PoseMode::HeadingOnly,
            PoseFeature::Empty => PoseMode::None,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            PoseFeature::Full {
                dx_n,
                dy_n,
                sin_psi,
                cos_psi,
            } => vec![dx_n, dy_n, sin_psi, cos_psi],
            PoseFeature::HeadingOnly { sin_psi, cos_psi } => vec![sin_psi, cos_psi],
            PoseFeature::Empty => Vec::new(),
        }
    }
}

pub fn pose_feature(
    dx: f64,
    dy: f64,
    psi: f64,
    grid: &GridSpec,
    mode: PoseMode,
) -> Result<PoseFeature, EmbedError> {
    let half = 0.5 * grid.spacing;
    // tolerate rounding from the tile-center subtraction
    let limit = half * (1.0 + 1e-9);
    if !(dx.abs() <= limit && dy.abs() <= limit) {
        return Err(EmbedError::Range { dx, dy, half });
    }
    let (sin_psi, cos_psi) = psi.sin_cos();
    Ok(match mode {
        PoseMode::Full => PoseFeature::Full {
            dx_n: (dx / half).clamp(-1.0, 1.0),
            dy_n: (dy / half).clamp(-1.0, 1.0),
            sin_psi,
            cos_psi,
        },
        PoseMode::HeadingOnly => PoseFeature::HeadingOnly { sin_psi, cos_psi },
        PoseMode::None => PoseFeature::Empty,
    })
}

/// Positional feature map of shape `positions x channels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseEmbedding {
    positions: usize,
    channels: usize,
    features: Vec<f64>,
    pub source_id: u64,
}

impl BaseEmbedding {
    pub fn new(
        positions: usize,
        channels: usize,
        features: Vec<f64>,
        source_id: u64,
    ) -> Result<Self, EmbedError> {
        if positions == 0 || channels == 0 {
            return Err(EmbedError::ShapeMismatch(
                "feature map needs at least one position and one channel".into(),
            ));
        }
        if features.len() != positions * channels {
            return Err(EmbedError::ShapeMismatch(format!(
                "{} features for a {positions}x{channels} map",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::ShapeMismatch(
                "feature map has non-finite entries".into(),
            ));
        }
        Ok(Self {
            positions,
            channels,
            features,
            source_id,
        })
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn is_zero(&self) -> bool {
        self.features.iter().all(|v| *v == 0.0)
    }
}

/// Fixed random linear map from a world descriptor to a feature map. Stands
/// in for the convolutional backbone; every call to [`Lifter::lift`] is
/// counted.
#[derive(Debug)]
pub struct Lifter {
    descriptor_dim: usize,
    positions: usize,
    channels: usize,
    projection: Vec<f64>,
    calls: AtomicU64,
}

impl Lifter {
    pub fn new(descriptor_dim: usize, positions: usize, channels: usize, seed: u64) -> Self {
        assert!(positions >= 1 && channels >= 1 && descriptor_dim >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (descriptor_dim as f64).sqrt();
        let projection = (0..positions * channels * descriptor_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            descriptor_dim,
            positions,
            channels,
            projection,
            calls: AtomicU64::new(0),
        }
    }

    pub fn lift(&self, obs: &GroundObservation) -> Result<BaseEmbedding, EmbedError> {
        if obs.descriptor.len() != self.descriptor_dim {
            return Err(EmbedError::ShapeMismatch(format!(
                "descriptor of length {} for a lifter expecting {}",
                obs.descriptor.len(),
                self.descriptor_dim
            )));
        }
        let id = self.calls.fetch_add(1, Ordering::Relaxed);
        let features = self
            .projection
            .chunks_exact(self.descriptor_dim)
            .map(|row| row.iter().zip(&obs.descriptor).map(|(p, d)| p * d).sum())
            .collect();
        BaseEmbedding::new(self.positions, self.channels, features, id)
    }

    /// Number of lifts performed so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

pub fn lift_ground(
    obs: &GroundObservation,
    positions: usize,
    channels: usize,
    lift_seed: u64,
) -> Result<BaseEmbedding, EmbedError> {
    Lifter::new(obs.descriptor.len(), positions, channels, lift_seed).lift(obs)
}

/// Per-head mask MLP weights. `w1` holds `heads` blocks of
/// `hidden x (positions + pose_len)`, `w2` holds `heads` blocks of
/// `positions x hidden`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SafaWeights {
    positions: usize,
    pose_len: usize,
    hidden: usize,
    heads: usize,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

impl SafaWeights {
    pub fn new(
        positions: usize,
        pose_len: usize,
        hidden: usize,
        heads: usize,
        w1: Vec<f64>,
        w2: Vec<f64>,
    ) -> Result<Self, EmbedError> {
        if positions == 0 || hidden == 0 || heads == 0 {
            return Err(EmbedError::ShapeMismatch(
                "positions, hidden and heads must be nonzero".into(),
            ));
        }
        let n1 = heads * hidden * (positions + pose_len);
        let n2 = heads * positions * hidden;
        if w1.len() != n1 || w2.len() != n2 {
            return Err(EmbedError::ShapeMismatch(format!(
                "expected {n1} + {n2} weights, got {} + {}",
                w1.len(),
                w2.len()
            )));
        }
        if w1.iter().chain(&w2).any(|v| !v.is_finite()) {
            return Err(EmbedError::ShapeMismatch("weights must be finite".into()));
        }
        Ok(Self {
            positions,
            pose_len,
            hidden,
            heads,
            w1,
            w2,
        })
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, then frozen.
    pub fn init(positions: usize, pose_len: usize, hidden: usize, heads: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = 1.0 / ((positions + pose_len) as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let w1 = (0..heads * hidden * (positions + pose_len))
            .map(|_| rng.gen_range(-b1..=b1))
            .collect();
        let w2 = (0..heads * positions * hidden)
            .map(|_| rng.gen_range(-b2..=b2))
            .collect();
        Self::new(positions, pose_len, hidden, heads, w1, w2).expect("shapes are consistent")
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn pose_len(&self) -> usize {
        self.pose_len
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

/// Aggregated descriptor. `zero` marks an empty observation; its values are
/// all zero and it has similarity 0 with everything.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    zero: bool,
}

impl Embedding {
    /// Normalizes `values`; an all-zero input gives the zero embedding.
    pub fn from_raw(mut values: Vec<f64>) -> Self {
        let zero = !crate::world::normalize_in_place(&mut values);
        Self { values, zero }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            zero: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Cosine against a stored single-precision embedding.
    pub fn similarity_to_stored(&self, stored: &[f32]) -> f64 {
        if self.zero {
            return 0.0;
        }
        debug_assert_eq!(stored.len(), self.values.len());
        let dot: f64 = self
            .values
            .iter()
            .zip(stored)
            .map(|(a, &b)| a * b as f64)
            .sum();
        dot.clamp(-1.0, 1.0)
    }
}

pub fn similarity(a: &Embedding, b: &Embedding) -> f64 {
    if a.zero || b.zero {
        return 0.0;
    }
    assert_eq!(a.dim(), b.dim(), "embedding dimensions differ");
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

/// Spatial-attention aggregation. Per head: the channel-max profile of the
/// feature map, concatenated with the pose feature, drives a two-layer tanh
/// MLP that emits one weight per position; the head output is the weighted
/// sum of feature rows. Heads are concatenated and L2-normalized.
pub fn safa_forward(
    base: &BaseEmbedding,
    pf: &PoseFeature,
    w: &SafaWeights,
) -> Result<Embedding, EmbedError> {
    let (l, c) = (base.positions, base.channels);
    if l != w.positions {
        return Err(EmbedError::ShapeMismatch(format!(
            "feature map has {l} positions, weights expect {}",
            w.positions
        )));
    }
    if pf.len() != w.pose_len {
        return Err(EmbedError::ShapeMismatch(format!(
            "pose feature has length {}, weights expect {}",
            pf.len(),
            w.pose_len
        )));
    }
    let dim = w.heads * c;
    if base.is_zero() {
        return Ok(Embedding::zero(dim));
    }

    let mut input: Vec<f64> = (0..l)
        .map(|i| {
            base.row(i)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    input.extend(pf.to_vec());
    let n_in = input.len();

    let mut out = vec![0.0; dim];
    let mut hidden = vec![0.0; w.hidden];
    for k in 0..w.heads {
        let w1 = &w.w1[k * w.hidden * n_in..(k + 1) * w.hidden * n_in];
        for (h, row) in hidden.iter_mut().zip(w1.chunks_exact(n_in)) {
            *h = row
                .iter()
                .zip(&input)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .tanh();
        }
        let w2 = &w.w2[k * l * w.hidden..(k + 1) * l * w.hidden];
        let head = &mut out[k * c..(k + 1) * c];
        for (i, row) in w2.chunks_exact(w.hidden).enumerate() {
            let mask: f64 = row.iter().zip(&hidden).map(|(a, b)| a * b).sum();
            for (o, f) in head.iter_mut().zip(base.row(i)) {
                *o += mask * f;
            }
        }
    }
    Ok(Embedding::from_raw(out))
}

/// Shape and seed parameters of the embedding pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    pub positions: usize,
    pub channels: usize,
    pub heads: usize,
    /// Mask MLP width; defaults to `positions`.
    pub hidden: Option<usize>,
    pub lift_seed: u64,
    pub weight_seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            positions: 8,
            channels: 16,
            heads: 4,
            hidden: None,
            lift_seed: 11,
            weight_seed: 13,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.positions == 0 || self.channels == 0 || self.heads == 0 || self.hidden == Some(0) {
            return Err(EmbedError::ShapeMismatch(
                "positions, channels, heads and hidden must all be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or(self.positions)
    }

    pub fn embedding_dim(&self) -> usize {
        self.heads * self.channels
    }

    pub fn lifter(&self, descriptor_dim: usize) -> Lifter {
        Lifter::new(
            descriptor_dim,
            self.positions,
            self.channels,
            self.lift_seed,
        )
    }

    /// Pose-free weights of the satellite branch.
    pub fn satellite_weights(&self) -> SafaWeights {
        SafaWeights::init(
            self.positions,
            0,
            self.hidden_width(),
            self.heads,
            derive_seed(self.weight_seed, &[0]),
        )
    }

    pub fn ground_weights(&self, mode: PoseMode) -> SafaWeights {
        SafaWeights::init(
            self.positions,
            mode.feature_len(),
            self.hidden_width(),
            self.heads,
            derive_seed(self.weight_seed, &[1, mode.feature_len() as u64]),
        )
    }
}

/// Score of a single particle: pose feature from its (clamped) position
/// and the shared measured heading, then aggregation over the shared base.
pub fn particle_score(
    pose: &ParticlePose,
    base: &BaseEmbedding,
    psi_meas: f64,
    store: &SatStore,
    w: &SafaWeights,
    mode: PoseMode,
) -> Result<f64, EmbedError> {
    let grid = store.grid();
    let (x, y) = grid.clamp_point(pose.x, pose.y);
    let at = ParticlePose {
        x,
        y,
        psi: pose.psi,
    };
    let tile = tile_of(&at, grid)?;
    let (dx, dy) = displacement_from_center(&at, tile, grid)?;
    let pf = pose_feature(dx, dy, psi_meas, grid, mode)?;
    let emb = safa_forward(base, &pf, w)?;
    Ok(emb.similarity_to_stored(store.embedding(tile)))
}

/// Scores every particle against its tile's satellite embedding, reusing a
/// single base embedding. Output order follows input order and values do not
/// depend on the number of worker threads.
pub fn pseudo_similarity(
    particles: &[ParticlePose],
    base: &BaseEmbedding,
    psi_meas: f64,
    store: &SatStore,
    w: &SafaWeights,
    mode: PoseMode,
) -> Result<Vec<f64>, EmbedError> {
    if w.pose_len != mode.feature_len() {
        return Err(EmbedError::ShapeMismatch(format!(
            "weights take a pose feature of length {}, mode {} produces {}",
            w.pose_len,
            mode.name(),
            mode.feature_len()
        )));
    }
    if w.heads * base.channels != store.dim() {
        return Err(EmbedError::ShapeMismatch(format!(
            "ground embeddings have dimension {}, store holds {}",
            w.heads * base.channels,
            store.dim()
        )));
    }
    particles
        .par_iter()
        .map(|p| particle_score(p, base, psi_meas, store, w, mode))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn obs(descriptor: Vec<f64>) -> GroundObservation {
        let visible_count = usize::from(descriptor.iter().any(|v| *v != 0.0));
        GroundObservation {
            descriptor,
            visible_count,
        }
    }

    fn grid60() -> GridSpec {
        GridSpec::new(0.0, 0.0, 60.0, 4, 4).unwrap()
    }

    #[test]
    fn lift_is_linear_and_deterministic() {
        let zero = lift_ground(&obs(vec![0.0; 6]), 3, 5, 7).unwrap();
        assert!(zero.is_zero());

        let mut e1 = vec![0.0; 6];
        e1[0] = 1.0;
        let a = lift_ground(&obs(e1.clone()), 3, 5, 7).unwrap();
        let b = lift_ground(&obs(e1.clone()), 3, 5, 7).unwrap();
        assert_eq!(a.features(), b.features());

        let neg: Vec<f64> = e1.iter().map(|v| -v).collect();
        let c = lift_ground(&obs(neg), 3, 5, 7).unwrap();
        for (x, y) in a.features().iter().zip(c.features()) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn lifter_counts_calls() {
        let lifter = Lifter::new(4, 2, 2, 1);
        assert_eq!(lifter.calls(), 0);
        let o = obs(vec![1.0, 0.0, 0.0, 0.0]);
        let first = lifter.lift(&o).unwrap();
        let second = lifter.lift(&o).unwrap();
        assert_eq!(lifter.calls(), 2);
        assert_eq!((first.source_id, second.source_id), (0, 1));
        assert!(lifter.lift(&obs(vec![1.0])).is_err());
    }

    #[test]
    fn pose_feature_examples() {
        let grid = grid60();
        assert_eq!(
            pose_feature(0.0, 0.0, 0.0, &grid, PoseMode::Full).unwrap(),
            PoseFeature::Full {
                dx_n: 0.0,
                dy_n: 0.0,
                sin_psi: 0.0,
                cos_psi: 1.0
            }
        );
        match pose_feature(30.0, -15.0, FRAC_PI_2, &grid, PoseMode::Full).unwrap() {
            PoseFeature::Full {
                dx_n,
                dy_n,
                sin_psi,
                cos_psi,
            } => {
                assert_eq!(dx_n, 1.0);
                assert_eq!(dy_n, -0.5);
                assert!((sin_psi - 1.0).abs() < 1e-15);
                assert!(cos_psi.abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            pose_feature(12.0, 3.0, 1.0, &grid, PoseMode::None).unwrap(),
            PoseFeature::Empty
        );
        assert_eq!(
            pose_feature(12.0, 3.0, 1.0, &grid, PoseMode::HeadingOnly)
                .unwrap()
                .len(),
            2
        );
        assert!(matches!(
            pose_feature(31.0, 0.0, 0.0, &grid, PoseMode::Full),
            Err(EmbedError::Range { .. })
        ));
    }

    /// Two positions, two channels, one head, identity-like weights.
    fn tiny_weights(pose_len: usize, pose_gain: f64) -> SafaWeights {
        let n_in = 2 + pose_len;
        let mut w1 = vec![0.0; 2 * n_in];
        w1[0] = 1.0; // h0 <- m0
        w1[n_in + 1] = 1.0; // h1 <- m1
        for j in 0..pose_len {
            w1[2 + j] = pose_gain;
        }
        let w2 = vec![1.0, 0.0, 0.0, 1.0];
        SafaWeights::new(2, pose_len, 2, 1, w1, w2).unwrap()
    }

    #[test]
    fn safa_hand_computed_fixture() {
        // rows: position 0 = (1, 2), position 1 = (3, -1)
        let base = BaseEmbedding::new(2, 2, vec![1.0, 2.0, 3.0, -1.0], 0).unwrap();
        let emb = safa_forward(&base, &PoseFeature::Empty, &tiny_weights(0, 0.0)).unwrap();
        // channel maxima m = (2, 3); masks = tanh(2), tanh(3)
        let (a, b) = (2f64.tanh(), 3f64.tanh());
        let raw = [a * 1.0 + b * 3.0, a * 2.0 - b];
        let norm = raw[0].hypot(raw[1]);
        assert!(!emb.is_zero());
        assert!((emb.values()[0] - raw[0] / norm).abs() < 1e-15);
        assert!((emb.values()[1] - raw[1] / norm).abs() < 1e-15);
    }

    #[test]
    fn safa_zero_map_and_shapes() {
        let zero = BaseEmbedding::new(2, 2, vec![0.0; 4], 0).unwrap();
        let w = tiny_weights(0, 0.0);
        assert!(safa_forward(&zero, &PoseFeature::Empty, &w)
            .unwrap()
            .is_zero());

        let base = BaseEmbedding::new(2, 2, vec![1.0, 2.0, 3.0, -1.0], 0).unwrap();
        let pf = PoseFeature::HeadingOnly {
            sin_psi: 0.0,
            cos_psi: 1.0,
        };
        assert!(matches!(
            safa_forward(&base, &pf, &w),
            Err(EmbedError::ShapeMismatch(_))
        ));
        let wide = BaseEmbedding::new(3, 2, vec![1.0; 6], 0).unwrap();
        assert!(matches!(
            safa_forward(&wide, &PoseFeature::Empty, &w),
            Err(EmbedError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn safa_pose_sensitivity() {
        let base = BaseEmbedding::new(2, 2, vec![1.0, 2.0, 3.0, -1.0], 0).unwrap();
        let w = tiny_weights(2, 1.5);
        let north = PoseFeature::HeadingOnly {
            sin_psi: 1.0,
            cos_psi: 0.0,
        };
        let south = PoseFeature::HeadingOnly {
            sin_psi: -1.0,
            cos_psi: 0.0,
        };
        let a = safa_forward(&base, &north, &w).unwrap();
        let b = safa_forward(&base, &south, &w).unwrap();
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn similarity_basics() {
        let e = Embedding::from_raw(vec![3.0, 4.0]);
        assert!((similarity(&e, &e) - 1.0).abs() < 1e-15);
        let f = Embedding::from_raw(vec![-4.0, 3.0]);
        assert_eq!(similarity(&e, &f), 0.0);
        assert_eq!(similarity(&e, &Embedding::zero(2)), 0.0);
    }

    #[test]
    fn heading_sensitivity_by_mode() {
        let cfg = EmbedConfig::default();
        let lifter = cfg.lifter(8);
        let mut d = vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.7, -0.1, 0.2];
        crate::world::normalize_in_place(&mut d);
        let base = lifter.lift(&obs(d)).unwrap();
        let grid = grid60();
        for (mode, should_differ) in [
            (PoseMode::Full, true),
            (PoseMode::HeadingOnly, true),
            (PoseMode::None, false),
        ] {
            let w = cfg.ground_weights(mode);
            let a = safa_forward(
                &base,
                &pose_feature(5.0, -3.0, 0.4, &grid, mode).unwrap(),
                &w,
            )
            .unwrap();
            let b = safa_forward(
                &base,
                &pose_feature(5.0, -3.0, 0.4 + PI, &grid, mode).unwrap(),
                &w,
            )
            .unwrap();
            assert_eq!(a != b, should_differ, "mode {}", mode.name());
        }
    }

    proptest! {
        #[test]
        fn embeddings_are_unit_and_similarity_bounded(
            da in proptest::collection::vec(-1.0f64..1.0, 8),
            db in proptest::collection::vec(-1.0f64..1.0, 8),
            dx in -30.0f64..30.0, dy in -30.0f64..30.0, psi in -PI..PI,
        ) {
            let cfg = EmbedConfig::default();
            let lifter = cfg.lifter(8);
            let w = cfg.ground_weights(PoseMode::Full);
            let pf = pose_feature(dx, dy, psi, &grid60(), PoseMode::Full).unwrap();
            let a = safa_forward(&lifter.lift(&obs(da)).unwrap(), &pf, &w).unwrap();
            let b = safa_forward(&lifter.lift(&obs(db)).unwrap(), &pf, &w).unwrap();
            for e in [&a, &b] {
                if !e.is_zero() {
                    let n = e.values().iter().map(|v| v * v).sum::<f64>().sqrt();
                    prop_assert!((n - 1.0).abs() < 1e-9);
                }
            }
            let s = similarity(&a, &b);
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert_eq!(s, similarity(&b, &a));
        }
    }
}
