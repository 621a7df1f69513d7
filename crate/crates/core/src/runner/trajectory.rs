//! Ground-truth paths and their CSV form (`x,y,psi,dx,dy,dpsi`).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::filter::Odometry;
use crate::geometry::{wrap_finite, GridSpec, ParticlePose};
use crate::seeds::rng_for;

pub const TRAJECTORY_HEADER: &str = "x,y,psi,dx,dy,dpsi";

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trajectory is inconsistent: {0}")]
    Inconsistent(String),
    #[error("invalid trajectory parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub pose: ParticlePose,
    /// Increment from the previous pose; zero for the first step.
    pub odometry: Odometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<TrajectoryStep>,
}

/// Parameters of the synthetic random walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkParams {
    pub step_count: usize,
    pub step_length: f64,
    pub max_turn: f64,
    pub margin: f64,
    pub start: Option<(f64, f64)>,
    pub start_psi: Option<f64>,
}

impl WalkParams {
    pub fn new(step_count: usize, step_length: f64) -> Self {
        Self {
            step_count,
            step_length,
            max_turn: 0.35,
            margin: 300.0,
            start: None,
            start_psi: None,
        }
    }
}

const POSITION_TOLERANCE: f64 = 1e-6;

impl Trajectory {
    /// Checks that integrating the increments reproduces the poses.
    pub fn new(steps: Vec<TrajectoryStep>) -> Result<Self, TrajectoryError> {
        if steps.is_empty() {
            return Err(TrajectoryError::Inconsistent("no steps".into()));
        }
        let (mut x, mut y, mut psi) = (steps[0].pose.x, steps[0].pose.y, steps[0].pose.psi);
        for (k, s) in steps.iter().enumerate().skip(1) {
            x += s.odometry.dx;
            y += s.odometry.dy;
            psi = wrap_finite(psi + s.odometry.dpsi);
            let dpsi = wrap_finite(psi - s.pose.psi).abs();
            if (x - s.pose.x).abs() > POSITION_TOLERANCE
                || (y - s.pose.y).abs() > POSITION_TOLERANCE
                || dpsi > POSITION_TOLERANCE
            {
                return Err(TrajectoryError::Inconsistent(format!(
                    "step {k}: integrated ({x}, {y}, {psi}) but recorded ({}, {}, {})",
                    s.pose.x, s.pose.y, s.pose.psi
                )));
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[TrajectoryStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start(&self) -> ParticlePose {
        self.steps[0].pose
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.steps.len() + 1));
        out.push_str(TRAJECTORY_HEADER);
        out.push('\n');
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.pose.x, s.pose.y, s.pose.psi, s.odometry.dx, s.odometry.dy, s.odometry.dpsi
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TrajectoryError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
            _ => {
                return Err(TrajectoryError::Parse {
                    line: 1,
                    msg: format!("expected header `{TRAJECTORY_HEADER}`"),
                })
            }
        }
        let mut steps = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| TrajectoryError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if fields.len() != 6 || fields.iter().any(|v| !v.is_finite()) {
                return Err(TrajectoryError::Parse {
                    line: i + 1,
                    msg: "expected six finite numbers".into(),
                });
            }
            steps.push(TrajectoryStep {
                pose: ParticlePose {
                    x: fields[0],
                    y: fields[1],
                    psi: wrap_finite(fields[2]),
                },
                odometry: Odometry::new(fields[3], fields[4], fields[5]),
            });
        }
        Self::new(steps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrajectoryError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrajectoryError> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}

/// Smooth random walk with bounded turn rate that stays at least
/// `params.margin` inside the grid footprint (or as far in as the grid
/// allows). Deterministic in `seed`.
pub fn generate_trajectory(
    grid: &GridSpec,
    seed: u64,
    params: &WalkParams,
) -> Result<Trajectory, TrajectoryError> {
    if params.step_count == 0 {
        return Err(TrajectoryError::Invalid(
            "step_count must be at least 1".into(),
        ));
    }
    if !(params.step_length >= 0.0 && params.max_turn >= 0.0 && params.margin >= 0.0) {
        return Err(TrajectoryError::Invalid(
            "step length, turn rate and margin must be non-negative".into(),
        ));
    }
    let mut rng = rng_for(seed, &[]);
    let (x0, y0, x1, y1) = grid.footprint();
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let margin = params.margin.min(0.5 * (x1 - x0)).min(0.5 * (y1 - y0));
    let inner = (x0 + margin, y0 + margin, x1 - margin, y1 - margin);
    let inside = |x: f64, y: f64| x >= inner.0 && x <= inner.2 && y >= inner.1 && y <= inner.3;

    let (sx, sy) = params.start.unwrap_or((cx, cy));
    if !grid.contains_point(sx, sy) {
        return Err(TrajectoryError::Invalid(format!(
            "start ({sx}, {sy}) lies outside the grid"
        )));
    }
    let psi0 = match params.start_psi {
        Some(p) => wrap_finite(p),
        None => rng.gen_range(-PI..PI),
    };
    let mut pose = ParticlePose {
        x: sx,
        y: sy,
        psi: psi0,
    };
    let mut steps = Vec::with_capacity(params.step_count);
    steps.push(TrajectoryStep {
        pose,
        odometry: Odometry::default(),
    });
    for _ in 1..params.step_count {
        let mut turn = rng.gen_range(-1.0..=1.0) * params.max_turn;
        let probe = |psi: f64| {
            (
                pose.x + params.step_length * psi.cos(),
                pose.y + params.step_length * psi.sin(),
            )
        };
        let (px, py) = probe(pose.psi + turn);
        if !inside(px, py) {
            // steer toward the center, as sharply as the turn rate allows
            let want = wrap_finite((cy - pose.y).atan2(cx - pose.x) - pose.psi);
            turn = want.clamp(-params.max_turn, params.max_turn);
            let (qx, qy) = probe(pose.psi + turn);
            if !grid.contains_point(qx, qy) {
                turn = want;
            }
        }
        let psi = wrap_finite(pose.psi + turn);
        let dx = params.step_length * psi.cos();
        let dy = params.step_length * psi.sin();
        let dpsi = wrap_finite(psi - pose.psi);
        pose = ParticlePose {
            x: pose.x + dx,
            y: pose.y + dy,
            psi: wrap_finite(pose.psi + dpsi),
        };
        steps.push(TrajectoryStep {
            pose,
            odometry: Odometry::new(dx, dy, dpsi),
        });
    }
    Trajectory::new(steps)
}
