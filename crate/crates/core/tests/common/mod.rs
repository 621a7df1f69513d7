#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rewag_core::geometry::GridSpec;
use rewag_core::runner::RunConfig;
use rewag_core::world::{Landmark, World};

/// Config from overrides on top of the defaults.
pub fn config(overrides: &[&str]) -> RunConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::from_toml_with_overrides("", &o, Path::new(".")).expect("valid test config")
}

/// Every tile holds the same four unit descriptors on a square around its
/// center, cyclically rotated by a random amount per tile. All tiles share
/// one overhead descriptor, so only a heading-aware, position-aware view can
/// tell them apart.
pub fn rotated_square_world(grid: GridSpec, seed: u64, half_side: f64) -> World {
    let dim = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            let mut v = vec![0.0; dim];
            v[k] = 1.0;
            v
        })
        .collect();
    let d = half_side;
    let corners = [(d, d), (-d, d), (-d, -d), (d, -d)];
    let mut landmarks = Vec::with_capacity(4 * grid.tile_count());
    for tile in grid.tiles() {
        let (cx, cy) = grid.tile_center(tile);
        let r: usize = rng.gen_range(0..4);
        for (j, (ox, oy)) in corners.iter().enumerate() {
            landmarks.push(Landmark {
                x: cx + ox,
                y: cy + oy,
                descriptor: kinds[(j + r) % 4].clone(),
                salience: 1.0,
            });
        }
    }
    World::from_landmarks(grid, dim, landmarks).expect("fixture landmarks are valid")
}

/// Overrides for the ablation fixture runs.
pub fn ablation_overrides(mode: &str, seed: u64) -> Vec<String> {
    vec![
        "grid.cols=32".into(),
        "grid.rows=32".into(),
        "filter.count=5000".into(),
        "filter.init_offset_m=120.0".into(),
        "filter.init_sigma_m=150.0".into(),
        "trajectory.margin_m=200.0".into(),
        format!("similarity.pose_mode=\"{mode}\""),
        format!("seed={seed}"),
    ]
}
