//! Synthetic semantic world.
//!
//! Point landmarks carry a unit descriptor and a salience. A ground camera at
//! a pose sees every landmark inside its viewing wedge and visibility range;
//! an overhead tile sees every landmark whose position falls in the tile. The
//! resulting descriptors stand in for what a trained network would extract
//! from real imagery, and are simple enough to be checked by brute force.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{ByteReader, ByteWriter};
use crate::geometry::{tile_of, wrap_finite, GeometryError, GridSpec, ParticlePose, TileIndex};

pub const WORLD_MAGIC: [u8; 4] = *b"RWLD";
pub const WORLD_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a world file (bad magic)")]
    BadMagic,
    #[error("unsupported world file version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("corrupt world file: {0}")]
    Corrupt(String),
    #[error("invalid world: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub descriptor: Vec<f64>,
    pub salience: f64,
}

/// Generation and sensing parameters of a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub seed: u64,
    pub landmark_count: usize,
    pub descriptor_dim: usize,
    pub salience_min: f64,
    pub salience_max: f64,
    /// Meters.
    pub visibility_range: f64,
    /// Camera field of view in radians.
    pub fov: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            landmark_count: 0,
            descriptor_dim: 32,
            salience_min: 0.5,
            salience_max: 1.5,
            visibility_range: 100.0,
            fov: FRAC_PI_2,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.fov > 0.0 && self.fov <= TAU) {
            return Err(WorldError::Invalid(format!(
                "fov must be in (0, 2pi], got {}",
                self.fov
            )));
        }
        if !(self.visibility_range.is_finite() && self.visibility_range > 0.0) {
            return Err(WorldError::Invalid(format!(
                "visibility_range must be positive, got {}",
                self.visibility_range
            )));
        }
        if self.descriptor_dim == 0 {
            return Err(WorldError::Invalid(
                "descriptor_dim must be at least 1".into(),
            ));
        }
        if !(self.salience_min > 0.0 && self.salience_max >= self.salience_min)
            || !self.salience_max.is_finite()
        {
            return Err(WorldError::Invalid(format!(
                "salience range must satisfy 0 < min <= max, got [{}, {}]",
                self.salience_min, self.salience_max
            )));
        }
        Ok(())
    }

    pub fn view(&self) -> ViewCone {
        ViewCone {
            range: self.visibility_range,
            fov: self.fov,
        }
    }
}

/// Visibility region of a camera: a wedge of angular width `fov` centered
/// on the heading, cut off at `range` meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewCone {
    pub range: f64,
    pub fov: f64,
}

impl ViewCone {
    pub fn panoramic(range: f64) -> Self {
        Self { range, fov: TAU }
    }

    pub fn is_panoramic(&self) -> bool {
        self.fov >= TAU
    }
}

/// Aggregated ground view. The descriptor is unit length whenever at least
/// one landmark is visible and all-zero otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundObservation {
    pub descriptor: Vec<f64>,
    pub visible_count: usize,
}

impl GroundObservation {
    pub fn is_empty(&self) -> bool {
        self.visible_count == 0
    }
}

/// Landmark weight for a viewer at distance `range`.
#[inline]
pub fn view_weight(salience: f64, range: f64) -> f64 {
    salience / (1.0 + range)
}

/// Scales `v` to unit length in place; leaves an all-zero vector untouched.
pub(crate) fn normalize_in_place(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        v.iter_mut().for_each(|a| *a /= norm);
        true
    } else {
        v.iter_mut().for_each(|a| *a = 0.0);
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    grid: GridSpec,
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    saliences: Vec<f64>,
    descriptors: Vec<f64>,
    // CSR bucket index: landmarks of tile t are members[starts[t]..starts[t + 1]].
    starts: Vec<u32>,
    members: Vec<u32>,
}

impl World {
    /// Places `spec.landmark_count` landmarks uniformly over the grid
    /// footprint with descriptors uniform on the unit sphere.
    pub fn generate(spec: &WorldSpec, grid: &GridSpec) -> Result<Self, WorldError> {
        spec.validate()?;
        grid.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (x0, y0, x1, y1) = grid.footprint();
        let mut landmarks = Vec::with_capacity(spec.landmark_count);
        for _ in 0..spec.landmark_count {
            let x = rng.gen_range(x0..x1);
            let y = rng.gen_range(y0..y1);
            let mut descriptor: Vec<f64> = loop {
                let d: Vec<f64> = (0..spec.descriptor_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                if d.iter().any(|v: &f64| *v != 0.0) {
                    break d;
                }
            };
            normalize_in_place(&mut descriptor);
            let salience = if spec.salience_max > spec.salience_min {
                rng.gen_range(spec.salience_min..spec.salience_max)
            } else {
                spec.salience_min
            };
            landmarks.push(Landmark {
                x,
                y,
                descriptor,
                salience,
            });
        }
        Self::from_landmarks(*grid, spec.descriptor_dim, landmarks)
    }

    /// Builds a world from explicit landmarks; used for hand-made fixtures.
    pub fn from_landmarks(
        grid: GridSpec,
        descriptor_dim: usize,
        landmarks: Vec<Landmark>,
    ) -> Result<Self, WorldError> {
        grid.validate()?;
        if descriptor_dim == 0 {
            return Err(WorldError::Invalid(
                "descriptor_dim must be at least 1".into(),
            ));
        }
        let n = landmarks.len();
        if n > u32::MAX as usize {
            return Err(WorldError::Invalid("too many landmarks".into()));
        }
        let mut world = World {
            grid,
            dim: descriptor_dim,
            xs: Vec::with_capacity(n),
            ys: Vec::with_capacity(n),
            saliences: Vec::with_capacity(n),
            descriptors: Vec::with_capacity(n * descriptor_dim),
            starts: Vec::new(),
            members: Vec::new(),
        };
        let mut owners = Vec::with_capacity(n);
        for (i, lm) in landmarks.into_iter().enumerate() {
            if lm.descriptor.len() != descriptor_dim {
                return Err(WorldError::Invalid(format!(
                    "landmark {i} has descriptor length {} (expected {descriptor_dim})",
                    lm.descriptor.len()
                )));
            }
            let norm = lm.descriptor.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(WorldError::Invalid(format!(
                    "landmark {i} descriptor is not unit length (norm {norm})"
                )));
            }
            if !(lm.salience > 0.0 && lm.salience.is_finite()) {
                return Err(WorldError::Invalid(format!(
                    "landmark {i} salience must be positive, got {}",
                    lm.salience
                )));
            }
            owners.push(grid.linear_index(grid.tile_of_point(lm.x, lm.y)?));
            world.xs.push(lm.x);
            world.ys.push(lm.y);
            world.saliences.push(lm.salience);
            world.descriptors.extend_from_slice(&lm.descriptor);
        }
        let mut starts = vec![0u32; grid.tile_count() + 1];
        for &t in &owners {
            starts[t + 1] += 1;
        }
        for t in 0..grid.tile_count() {
            starts[t + 1] += starts[t];
        }
        let mut fill = starts.clone();
        let mut members = vec![0u32; n];
        for (i, &t) in owners.iter().enumerate() {
            members[fill[t] as usize] = i as u32;
            fill[t] += 1;
        }
        world.starts = starts;
        world.members = members;
        Ok(world)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn descriptor_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn landmark(&self, i: usize) -> Landmark {
        Landmark {
            x: self.xs[i],
            y: self.ys[i],
            descriptor: self.descriptor(i).to_vec(),
            salience: self.saliences[i],
        }
    }

    pub fn landmarks(&self) -> impl Iterator<Item = Landmark> + '_ {
        (0..self.len()).map(|i| self.landmark(i))
    }

    /// Indices of the landmarks owned by `tile`, ascending.
    pub fn tile_members(&self, tile: TileIndex) -> &[u32] {
        let t = self.grid.linear_index(tile);
        &self.members[self.starts[t] as usize..self.starts[t + 1] as usize]
    }

    /// Visits every landmark seen from `(x, y)` looking along `psi` through
    /// `view`, passing the landmark index and its distance. Visit order is
    /// fixed by position alone, so a panoramic view yields identical sums
    /// for every heading.
    pub fn for_each_visible(
        &self,
        x: f64,
        y: f64,
        psi: f64,
        view: ViewCone,
        mut f: impl FnMut(usize, f64),
    ) {
        let range_sq = view.range * view.range;
        let half_fov = 0.5 * view.fov;
        let panoramic = view.is_panoramic();
        let (c, r) = self.grid.raw_cell(x, y);
        let reach = (view.range / self.grid.spacing).floor() as i64 + 1;
        let row_lo = (r - reach).max(0);
        let row_hi = (r + reach).min(self.grid.rows as i64 - 1);
        let col_lo = (c - reach).max(0);
        let col_hi = (c + reach).min(self.grid.cols as i64 - 1);
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                for &i in self.tile_members(TileIndex::new(col as u32, row as u32)) {
                    let i = i as usize;
                    let dx = self.xs[i] - x;
                    let dy = self.ys[i] - y;
                    let d2 = dx * dx + dy * dy;
                    if d2 > range_sq {
                        continue;
                    }
                    if !panoramic && d2 > 0.0 {
                        let off = wrap_finite(dy.atan2(dx) - psi);
                        if off.abs() > half_fov {
                            continue;
                        }
                    }
                    f(i, d2.sqrt());
                }
            }
        }
    }

    /// Unnormalized weighted descriptor sum seen from a viewpoint, written
    /// into `out`. Returns the number of visible landmarks.
    pub fn accumulate_view(
        &self,
        x: f64,
        y: f64,
        psi: f64,
        view: ViewCone,
        out: &mut [f64],
    ) -> usize {
        debug_assert_eq!(out.len(), self.dim);
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut count = 0;
        self.for_each_visible(x, y, psi, view, |i, range| {
            let w = view_weight(self.saliences[i], range);
            for (o, d) in out.iter_mut().zip(self.descriptor(i)) {
                *o += w * d;
            }
            count += 1;
        });
        count
    }

    pub fn observe(&self, x: f64, y: f64, psi: f64, view: ViewCone) -> GroundObservation {
        let mut descriptor = vec![0.0; self.dim];
        let visible_count = self.accumulate_view(x, y, psi, view, &mut descriptor);
        normalize_in_place(&mut descriptor);
        GroundObservation {
            descriptor,
            visible_count,
        }
    }

    /// Ground camera observation at `pose` with the sensor of `spec`.
    pub fn ground_descriptor(&self, pose: &ParticlePose, spec: &WorldSpec) -> GroundObservation {
        self.observe(pose.x, pose.y, pose.psi, spec.view())
    }

    /// Salience-weighted, normalized descriptor sum of the landmarks inside a
    /// tile. All-zero for an empty tile.
    pub fn satellite_descriptor(&self, tile: TileIndex) -> Result<Vec<f64>, WorldError> {
        self.grid.check_tile(tile)?;
        let mut out = vec![0.0; self.dim];
        for &i in self.tile_members(tile) {
            let i = i as usize;
            let s = self.saliences[i];
            for (o, d) in out.iter_mut().zip(self.descriptor(i)) {
                *o += s * d;
            }
        }
        normalize_in_place(&mut out);
        Ok(out)
    }

    /// Fraction of the salience visible from `pose` that lies inside the
    /// pose's own tile; 0 when nothing is visible.
    pub fn oracle_similarity(
        &self,
        pose: &ParticlePose,
        spec: &WorldSpec,
    ) -> Result<f64, WorldError> {
        let own = tile_of(pose, &self.grid)?;
        let own = self.grid.linear_index(own);
        let (mut inside, mut total) = (0.0, 0.0);
        self.for_each_visible(pose.x, pose.y, pose.psi, spec.view(), |i, _| {
            let s = self.saliences[i];
            total += s;
            let (x, y) = (self.xs[i], self.ys[i]);
            if let Ok(t) = self.grid.tile_of_point(x, y) {
                if self.grid.linear_index(t) == own {
                    inside += s;
                }
            }
        });
        Ok(if total > 0.0 { inside / total } else { 0.0 })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(48 + self.len() * (24 + 8 * self.dim));
        w.bytes(&WORLD_MAGIC);
        w.u16(WORLD_VERSION);
        w.grid(&self.grid);
        w.u32(self.dim as u32);
        w.u64(self.len() as u64);
        for i in 0..self.len() {
            w.f64(self.xs[i]);
            w.f64(self.ys[i]);
            w.f64(self.saliences[i]);
            for &d in self.descriptor(i) {
                w.f64(d);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, WorldError> {
        let truncated = || WorldError::Corrupt("file is truncated".into());
        let mut r = ByteReader::new(data);
        if r.take(4).ok_or(WorldError::BadMagic)? != WORLD_MAGIC {
            return Err(WorldError::BadMagic);
        }
        let version = r.u16().ok_or_else(truncated)?;
        if version != WORLD_VERSION {
            return Err(WorldError::VersionMismatch {
                found: version,
                expected: WORLD_VERSION,
            });
        }
        let grid = r.grid().ok_or_else(truncated)?;
        grid.validate()
            .map_err(|e| WorldError::Corrupt(format!("bad grid header: {e}")))?;
        let dim = r.u32().ok_or_else(truncated)? as usize;
        let count = r.u64().ok_or_else(truncated)?;
        let record = 8 * (3 + dim as u64);
        if count.checked_mul(record) != Some(r.remaining() as u64) {
            return Err(WorldError::Corrupt(format!(
                "landmark section holds {} bytes, header announces {count} records of {record} bytes",
                r.remaining()
            )));
        }
        let mut landmarks = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let x = r.f64().ok_or_else(truncated)?;
            let y = r.f64().ok_or_else(truncated)?;
            let salience = r.f64().ok_or_else(truncated)?;
            let descriptor = (0..dim)
                .map(|_| r.f64().ok_or_else(truncated))
                .collect::<Result<Vec<_>, _>>()?;
            landmarks.push(Landmark {
                x,
                y,
                descriptor,
                salience,
            });
        }
        Self::from_landmarks(grid, dim, landmarks).map_err(|e| match e {
            WorldError::Invalid(m) => WorldError::Corrupt(m),
            WorldError::Geometry(g) => WorldError::Corrupt(g.to_string()),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WorldError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
