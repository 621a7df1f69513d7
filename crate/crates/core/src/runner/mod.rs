//! Experiment orchestration: world and trajectory setup, the per-step
//! filter loop, and metrics.

mod backend;
mod config;
mod metrics;
mod trajectory;

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use backend::{OracleBackend, SafaBackend, ScoreContext, SimilarityBackend};
pub use config::{
    Backend, ConfigError, EmbedSection, FilterSection, GridSection, LossSection, OutputSection,
    RunConfig, SeedPlan, SeedSection, SimilaritySection, TrajectorySection, WorldSection,
};
pub use metrics::{
    convergence_step, parse_csv, report, CsvRow, MetricsError, MetricsTrace, StepRecord, Summary,
    METRICS_HEADER,
};
pub use trajectory::{
    generate_trajectory, Trajectory, TrajectoryError, TrajectoryStep, WalkParams, TRAJECTORY_HEADER,
};

use crate::embed::{precompute_sat_store, EmbedError, SatStore};
use crate::filter::{FilterError, FilterState, InitSpec, Odometry};
use crate::geometry::{wrap_finite, ParticlePose};
use crate::seeds::rng_for;
use crate::world::{World, WorldError};

/// Failure inside the step loop.
#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("world: {0}")]
    World(#[from] WorldError),
    #[error("trajectory: {0}")]
    Trajectory(#[from] TrajectoryError),
    #[error("satellite store: {0}")]
    Embed(#[from] EmbedError),
    #[error("filter: {0}")]
    Filter(#[from] FilterError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: StepError,
    },
    #[error("{0}")]
    Mismatch(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Loads the configured world file or generates one.
pub fn build_world(config: &RunConfig) -> Result<World, RunError> {
    let grid = config.grid_spec();
    match &config.world.file {
        Some(path) => {
            let world = World::load(path)?;
            if *world.grid() != grid {
                return Err(RunError::Mismatch(format!(
                    "world file {} has grid {:?}, config has {:?}",
                    path.display(),
                    world.grid(),
                    grid
                )));
            }
            if world.descriptor_dim() != config.world.descriptor_dim {
                return Err(RunError::Mismatch(format!(
                    "world file has descriptor dimension {}, config has {}",
                    world.descriptor_dim(),
                    config.world.descriptor_dim
                )));
            }
            Ok(world)
        }
        None => Ok(World::generate(&config.world_spec(), &grid)?),
    }
}

/// Loads the configured trajectory file or generates one.
pub fn build_trajectory(config: &RunConfig) -> Result<Trajectory, RunError> {
    let grid = config.grid_spec();
    let traj = match &config.trajectory.file {
        Some(path) => Trajectory::load(path)?,
        None => {
            let t = &config.trajectory;
            let start = match (t.start_x, t.start_y) {
                (Some(x), Some(y)) => Some((x, y)),
                (None, None) => None,
                _ => {
                    return Err(RunError::Mismatch(
                        "trajectory.start_x and start_y must be given together".into(),
                    ))
                }
            };
            let params = WalkParams {
                step_count: t.steps,
                step_length: t.step_length_m,
                max_turn: t.max_turn_rad,
                margin: t.margin_m,
                start,
                start_psi: t.start_psi,
            };
            generate_trajectory(&grid, config.seed_plan().trajectory, &params)?
        }
    };
    if let Some((k, s)) = traj
        .steps()
        .iter()
        .enumerate()
        .find(|(_, s)| !grid.contains_point(s.pose.x, s.pose.y))
    {
        return Err(RunError::Mismatch(format!(
            "trajectory step {k} at ({}, {}) leaves the grid",
            s.pose.x, s.pose.y
        )));
    }
    Ok(traj)
}

/// Loads the configured satellite store or precomputes it from `world`.
pub fn build_store(config: &RunConfig, world: &World) -> Result<SatStore, RunError> {
    let params = config.embed.params();
    let store = match &config.embed.store {
        Some(path) => SatStore::load(path)?,
        None => precompute_sat_store(world, &params)?,
    };
    if store.grid() != world.grid() {
        return Err(RunError::Mismatch(format!(
            "store grid {:?} differs from world grid {:?}",
            store.grid(),
            world.grid()
        )));
    }
    if store.dim() != params.embedding_dim() {
        return Err(RunError::Mismatch(format!(
            "store embeddings have dimension {}, config gives {}",
            store.dim(),
            params.embedding_dim()
        )));
    }
    Ok(store)
}

/// Builds world and trajectory from the configuration, then runs.
pub fn run(config: &RunConfig) -> Result<MetricsTrace, RunError> {
    let world = build_world(config)?;
    let trajectory = build_trajectory(config)?;
    run_with(config, &world, &trajectory)
}

/// Runs the filter over `trajectory` in `world` on a pool of
/// `config.threads` workers (0 picks the default).
pub fn run_with(
    config: &RunConfig,
    world: &World,
    trajectory: &Trajectory,
) -> Result<MetricsTrace, RunError> {
    if world.grid() != &config.grid_spec() {
        return Err(RunError::Mismatch(
            "world grid differs from config grid".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| RunError::ThreadPool(e.to_string()))?;
    pool.install(|| match config.similarity.backend {
        Backend::Oracle => {
            let b = OracleBackend::new(
                world,
                config.world_spec().view(),
                config.similarity.pose_mode,
            );
            run_loop(config, world, trajectory, &b)
        }
        Backend::Safa => {
            let store = build_store(config, world)?;
            let b = SafaBackend::new(
                &store,
                &config.embed.params(),
                world.descriptor_dim(),
                config.similarity.pose_mode,
            )?;
            run_loop(config, world, trajectory, &b)
        }
    })
}

/// Odometry as reported to the filter: the true increment plus noise
/// proportional to its magnitude.
pub fn measured_odometry(truth: Odometry, config: &RunConfig, step: usize) -> Odometry {
    let noise = config.filter.noise();
    let st = noise.translation_sigma(&truth);
    let sh = noise.heading_sigma(&truth);
    if st == 0.0 && sh == 0.0 {
        return truth;
    }
    let mut rng = rng_for(config.seed_plan().odometry, &[step as u64]);
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    let nh: f64 = rng.sample(StandardNormal);
    Odometry::new(truth.dx + st * nx, truth.dy + st * ny, truth.dpsi + sh * nh)
}

/// Compass reading: true heading plus Gaussian noise with standard
/// deviation `heading_frac * pi`.
pub fn measured_heading(truth_psi: f64, config: &RunConfig, step: usize) -> f64 {
    let sigma = config.filter.heading_frac * std::f64::consts::PI;
    if sigma == 0.0 {
        return truth_psi;
    }
    let n: f64 = rng_for(config.seed_plan().compass, &[step as u64]).sample(StandardNormal);
    wrap_finite(truth_psi + sigma * n)
}

/// Initial particle cloud, centered `init_offset_m` from the true start
/// along `init_bearing_rad`.
pub fn initial_state(config: &RunConfig, start: ParticlePose) -> Result<FilterState, RunError> {
    let f = &config.filter;
    let seeds = config.seed_plan();
    let spec = InitSpec {
        center: (
            start.x + f.init_offset_m * f.init_bearing_rad.cos(),
            start.y + f.init_offset_m * f.init_bearing_rad.sin(),
        ),
        sigma: f.init_sigma_m,
        count: f.count,
        seed: seeds.init,
    };
    Ok(FilterState::init(&spec, &config.grid_spec(), start.psi)?
        .with_seeds(seeds.predict, seeds.resample))
}

/// The step loop on an explicit initial state and backend.
pub fn run_from_state(
    config: &RunConfig,
    world: &World,
    trajectory: &Trajectory,
    mut state: FilterState,
    backend: &dyn SimilarityBackend,
) -> Result<MetricsTrace, RunError> {
    let grid = config.grid_spec();
    let view = config.world_spec().view();
    let noise = config.filter.noise();
    let meas = config.filter.meas();
    let timing = config.output.timing;
    let n = state.len() as f64;
    let at = |step| move |e: StepError| RunError::Step { step, source: e };

    let mut steps = Vec::with_capacity(trajectory.len());
    for (t, truth) in trajectory.steps().iter().enumerate() {
        let started = Instant::now();
        let odo = measured_odometry(truth.odometry, config, t);
        state
            .predict(odo, &noise, &grid)
            .map_err(|e| at(t)(e.into()))?;
        let psi = measured_heading(truth.pose.psi, config, t);
        state.set_heading(psi).map_err(|e| at(t)(e.into()))?;

        let observation = world.observe(truth.pose.x, truth.pose.y, truth.pose.psi, view);
        let scores = backend
            .score(
                &state.poses(),
                ScoreContext {
                    observation: &observation,
                    measured_heading: psi,
                },
            )
            .map_err(|e| at(t)(e.into()))?;
        let upd = state.update(&scores, &meas).map_err(|e| at(t)(e.into()))?;

        let estimate = state.estimate();
        let ess = state.effective_sample_size();
        let dispersion = state.dispersion();
        let weight_sum = state.weight_sum();
        let resampled = ess < config.filter.resample_threshold * n;
        if resampled {
            state.resample_systematic();
        }
        steps.push(StepRecord {
            step: t,
            truth: truth.pose,
            estimate,
            err_m: estimate.distance_to(&truth.pose),
            dispersion_m: dispersion,
            ess,
            resampled,
            degenerate: upd.degenerate,
            weight_sum,
            ms: if timing {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
            measured_heading: psi,
            odometry: odo,
        });
    }
    Ok(MetricsTrace {
        steps,
        convergence_threshold_m: config.filter.convergence_m,
        lift_calls: backend.lift_calls(),
    })
}

fn run_loop(
    config: &RunConfig,
    world: &World,
    trajectory: &Trajectory,
    backend: &dyn SimilarityBackend,
) -> Result<MetricsTrace, RunError> {
    let state = initial_state(config, trajectory.start())?;
    run_from_state(config, world, trajectory, state, backend)
}

/// Writes the metrics CSV and summary to the configured output paths.
pub fn write_outputs(config: &RunConfig, trace: &MetricsTrace) -> Result<(), RunError> {
    if let Some(p) = &config.output.trace {
        trace.write_csv(p)?;
    }
    if let Some(p) = &config.output.summary {
        write_text(p, &trace.summary().to_string())?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text).map_err(|e| RunError::Metrics(MetricsError::Io(e)))
}
