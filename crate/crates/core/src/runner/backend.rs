//! Per-particle scoring against the current ground observation.
//!
//! The oracle backend stands in for a trained network. It renders the
//! observation each particle would expect and scores it by cosine against
//! the true observation. What a particle gets to render depends on the pose
//! mode: `full` uses its position and the measured heading, `heading_only`
//! snaps the position to its tile center, and `none` compares against the
//! whole-tile overhead descriptor.

use rayon::prelude::*;

use crate::embed::{
    pseudo_similarity, EmbedConfig, EmbedError, Lifter, PoseMode, SafaWeights, SatStore,
};
use crate::geometry::{tile_of, ParticlePose};
use crate::world::{normalize_in_place, GroundObservation, ViewCone, World};

#[derive(Debug, Clone, Copy)]
pub struct ScoreContext<'a> {
    pub observation: &'a GroundObservation,
    pub measured_heading: f64,
}

pub trait SimilarityBackend: Sync {
    fn score(
        &self,
        particles: &[ParticlePose],
        ctx: ScoreContext<'_>,
    ) -> Result<Vec<f64>, EmbedError>;

    /// Number of times the ground branch was lifted, if instrumented.
    fn lift_calls(&self) -> u64 {
        0
    }
}

fn dot_clamped(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d.clamp(-1.0, 1.0)
}

pub struct OracleBackend<'w> {
    world: &'w World,
    view: ViewCone,
    mode: PoseMode,
    // overhead descriptor per tile, only filled for mode `none`
    tiles: Vec<f64>,
}

impl<'w> OracleBackend<'w> {
    pub fn new(world: &'w World, view: ViewCone, mode: PoseMode) -> Self {
        let tiles = if mode == PoseMode::None {
            let grid = world.grid();
            let d = world.descriptor_dim();
            let mut out = vec![0.0; grid.tile_count() * d];
            out.par_chunks_mut(d).enumerate().for_each(|(t, dst)| {
                let desc = world
                    .satellite_descriptor(grid.tile_at(t))
                    .expect("tile from grid enumeration");
                dst.copy_from_slice(&desc);
            });
            out
        } else {
            Vec::new()
        };
        Self {
            world,
            view,
            mode,
            tiles,
        }
    }

    fn score_one(
        &self,
        p: &ParticlePose,
        obs: &GroundObservation,
        psi: f64,
    ) -> Result<f64, EmbedError> {
        if obs.visible_count == 0 {
            return Ok(0.0);
        }
        let grid = self.world.grid();
        let (x, y) = grid.clamp_point(p.x, p.y);
        let at = ParticlePose { x, y, psi };
        let d = self.world.descriptor_dim();
        match self.mode {
            PoseMode::Full => {
                let mut buf = vec![0.0; d];
                self.world.accumulate_view(x, y, psi, self.view, &mut buf);
                if !normalize_in_place(&mut buf) {
                    return Ok(0.0);
                }
                Ok(dot_clamped(&buf, &obs.descriptor))
            }
            PoseMode::HeadingOnly => {
                let tile = tile_of(&at, grid)?;
                let (cx, cy) = grid.tile_center(tile);
                let mut buf = vec![0.0; d];
                self.world.accumulate_view(cx, cy, psi, self.view, &mut buf);
                if !normalize_in_place(&mut buf) {
                    return Ok(0.0);
                }
                Ok(dot_clamped(&buf, &obs.descriptor))
            }
            PoseMode::None => {
                let t = grid.linear_index(tile_of(&at, grid)?);
                Ok(dot_clamped(
                    &self.tiles[t * d..(t + 1) * d],
                    &obs.descriptor,
                ))
            }
        }
    }
}

impl SimilarityBackend for OracleBackend<'_> {
    fn score(
        &self,
        particles: &[ParticlePose],
        ctx: ScoreContext<'_>,
    ) -> Result<Vec<f64>, EmbedError> {
        particles
            .par_iter()
            .map(|p| self.score_one(p, ctx.observation, ctx.measured_heading))
            .collect()
    }
}

pub struct SafaBackend<'s> {
    store: &'s SatStore,
    lifter: Lifter,
    weights: SafaWeights,
    mode: PoseMode,
}

impl<'s> SafaBackend<'s> {
    pub fn new(
        store: &'s SatStore,
        config: &EmbedConfig,
        descriptor_dim: usize,
        mode: PoseMode,
    ) -> Result<Self, EmbedError> {
        config.validate()?;
        if config.embedding_dim() != store.dim() {
            return Err(EmbedError::ShapeMismatch(format!(
                "embedding config gives dimension {}, store holds {}",
                config.embedding_dim(),
                store.dim()
            )));
        }
        Ok(Self {
            store,
            lifter: config.lifter(descriptor_dim),
            weights: config.ground_weights(mode),
            mode,
        })
    }
}

impl SimilarityBackend for SafaBackend<'_> {
    fn score(
        &self,
        particles: &[ParticlePose],
        ctx: ScoreContext<'_>,
    ) -> Result<Vec<f64>, EmbedError> {
        let base = self.lifter.lift(ctx.observation)?;
        pseudo_similarity(
            particles,
            &base,
            ctx.measured_heading,
            self.store,
            &self.weights,
            self.mode,
        )
    }

    fn lift_calls(&self) -> u64 {
        self.lifter.calls()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use crate::world::{Landmark, WorldSpec};
    use std::f64::consts::FRAC_PI_2;

    fn unit(dim: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        v
    }

    fn two_tile_world() -> World {
        let grid = GridSpec::new(0.0, 0.0, 60.0, 2, 1).unwrap();
        let lm = |x, k| Landmark {
            x,
            y: 0.0,
            descriptor: unit(4, k),
            salience: 1.0,
        };
        World::from_landmarks(grid, 4, vec![lm(10.0, 0), lm(50.0, 1)]).unwrap()
    }

    #[test]
    fn particle_at_truth_scores_one_in_every_mode() {
        let world = two_tile_world();
        let view = ViewCone::panoramic(25.0);
        let truth = ParticlePose {
            x: 5.0,
            y: 0.0,
            psi: 0.0,
        };
        let obs = world.observe(truth.x, truth.y, truth.psi, view);
        let ctx = ScoreContext {
            observation: &obs,
            measured_heading: 0.0,
        };
        for mode in [PoseMode::Full, PoseMode::HeadingOnly, PoseMode::None] {
            let b = OracleBackend::new(&world, view, mode);
            let s = b
                .score(
                    &[
                        truth,
                        ParticlePose {
                            x: 55.0,
                            y: 0.0,
                            psi: 0.0,
                        },
                    ],
                    ctx,
                )
                .unwrap();
            assert!((s[0] - 1.0).abs() < 1e-12, "{mode:?}: {s:?}");
            assert!(s[1].abs() < 1e-12, "{mode:?}: {s:?}");
        }
    }

    #[test]
    fn nothing_visible_scores_zero() {
        let world = two_tile_world();
        let view = WorldSpec {
            visibility_range: 1.0,
            fov: FRAC_PI_2,
            ..WorldSpec::default()
        }
        .view();
        let obs = world.observe(30.0, 0.0, 0.0, view);
        assert_eq!(obs.visible_count, 0);
        let b = OracleBackend::new(&world, view, PoseMode::Full);
        let s = b
            .score(
                &[ParticlePose {
                    x: 10.0,
                    y: 0.0,
                    psi: 0.0,
                }],
                ScoreContext {
                    observation: &obs,
                    measured_heading: 0.0,
                },
            )
            .unwrap();
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn heading_matters_except_without_pose() {
        let world = two_tile_world();
        let view = ViewCone {
            range: 60.0,
            fov: FRAC_PI_2,
        };
        // looking east from x=30 sees only the second landmark
        let obs = world.observe(30.0, 0.0, 0.0, view);
        let p = [ParticlePose {
            x: 30.0,
            y: 0.0,
            psi: 0.0,
        }];
        let full = OracleBackend::new(&world, view, PoseMode::Full);
        let east = full
            .score(
                &p,
                ScoreContext {
                    observation: &obs,
                    measured_heading: 0.0,
                },
            )
            .unwrap();
        let west = full
            .score(
                &p,
                ScoreContext {
                    observation: &obs,
                    measured_heading: std::f64::consts::PI,
                },
            )
            .unwrap();
        assert!(east[0] > 0.99 && west[0] < 0.01);

        let none = OracleBackend::new(&world, view, PoseMode::None);
        let a = none
            .score(
                &p,
                ScoreContext {
                    observation: &obs,
                    measured_heading: 0.0,
                },
            )
            .unwrap();
        let b = none
            .score(
                &p,
                ScoreContext {
                    observation: &obs,
                    measured_heading: 2.0,
                },
            )
            .unwrap();
        assert_eq!(a, b);
    }
}
