//! TOML run configuration.
//!
//! Every section is optional and falls back to defaults; unknown keys are
//! rejected. Relative file paths resolve against the directory holding the
//! configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedConfig, PoseMode};
use crate::filter::{MeasModel, NoiseParams};
use crate::geometry::GridSpec;
use crate::loss::{TrinomialParams, TripletConvention, TripletParams};
use crate::seeds::{derive_seed, stream};
use crate::world::WorldSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Oracle,
    Safa,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Backend::Oracle),
            "safa" => Ok(Backend::Safa),
            other => Err(format!(
                "unknown backend `{other}` (expected oracle or safa)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub origin_x: f64,
    pub origin_y: f64,
    pub spacing_m: f64,
    pub cols: u32,
    pub rows: u32,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            origin_x: g.origin_x,
            origin_y: g.origin_y,
            spacing_m: g.spacing,
            cols: g.cols,
            rows: g.rows,
        }
    }
}

impl GridSection {
    pub fn spec(&self) -> GridSpec {
        GridSpec {
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            spacing: self.spacing_m,
            cols: self.cols,
            rows: self.rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    /// Load landmarks from an `RWLD` file instead of generating them.
    pub file: Option<PathBuf>,
    /// Explicit landmark count; otherwise `landmarks_per_tile * tiles`.
    pub landmark_count: Option<usize>,
    pub landmarks_per_tile: f64,
    pub descriptor_dim: usize,
    pub salience_min: f64,
    pub salience_max: f64,
    pub visibility_range: f64,
    pub fov: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        let w = WorldSpec::default();
        Self {
            file: None,
            landmark_count: None,
            landmarks_per_tile: 4.0,
            descriptor_dim: w.descriptor_dim,
            salience_min: w.salience_min,
            salience_max: w.salience_max,
            visibility_range: w.visibility_range,
            fov: w.fov,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilaritySection {
    pub backend: Backend,
    pub pose_mode: PoseMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedSection {
    pub positions: usize,
    pub channels: usize,
    pub heads: usize,
    pub hidden: Option<usize>,
    pub lift_seed: u64,
    pub weight_seed: u64,
    /// Precomputed `RWSS` store; computed on the fly when absent.
    pub store: Option<PathBuf>,
}

impl Default for EmbedSection {
    fn default() -> Self {
        let e = EmbedConfig::default();
        Self {
            positions: e.positions,
            channels: e.channels,
            heads: e.heads,
            hidden: e.hidden,
            lift_seed: e.lift_seed,
            weight_seed: e.weight_seed,
            store: None,
        }
    }
}

impl EmbedSection {
    pub fn params(&self) -> EmbedConfig {
        EmbedConfig {
            positions: self.positions,
            channels: self.channels,
            heads: self.heads,
            hidden: self.hidden,
            lift_seed: self.lift_seed,
            weight_seed: self.weight_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub count: usize,
    /// Distance of the initial cloud center from the true start.
    pub init_offset_m: f64,
    /// Direction of that offset, radians from east.
    pub init_bearing_rad: f64,
    pub init_sigma_m: f64,
    pub odom_frac: f64,
    pub heading_frac: f64,
    pub sigma_s: f64,
    pub s_ref: f64,
    /// Resample when ESS falls below this fraction of the particle count.
    pub resample_threshold: f64,
    pub convergence_m: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        let noise = NoiseParams::default();
        let meas = MeasModel::default();
        Self {
            count: 30_000,
            init_offset_m: 1300.0,
            init_bearing_rad: 0.0,
            init_sigma_m: 900.0,
            odom_frac: noise.odom_frac,
            heading_frac: noise.heading_frac,
            sigma_s: meas.sigma_s,
            s_ref: meas.s_ref,
            resample_threshold: 0.5,
            convergence_m: 60.0,
        }
    }
}

impl FilterSection {
    pub fn noise(&self) -> NoiseParams {
        NoiseParams {
            odom_frac: self.odom_frac,
            heading_frac: self.heading_frac,
        }
    }

    pub fn meas(&self) -> MeasModel {
        MeasModel {
            sigma_s: self.sigma_s,
            s_ref: self.s_ref,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    /// Read the trajectory from CSV instead of generating it.
    pub file: Option<PathBuf>,
    pub steps: usize,
    pub step_length_m: f64,
    pub max_turn_rad: f64,
    /// Keep generated paths this far inside the grid footprint.
    pub margin_m: f64,
    /// Start position; defaults to the grid center.
    pub start_x: Option<f64>,
    pub start_y: Option<f64>,
    /// Start heading; drawn at random when absent.
    pub start_psi: Option<f64>,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            file: None,
            steps: 150,
            step_length_m: 20.0,
            max_turn_rad: 0.35,
            margin_m: 300.0,
            start_x: None,
            start_y: None,
            start_psi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub alpha: f64,
    pub convention: TripletConvention,
    pub alpha_p: f64,
    pub alpha_n: f64,
    pub alpha_semi: f64,
    pub m_p: f64,
    pub m_n: f64,
    pub m_semi: f64,
    /// Positive-pair radius; a quarter of the tile spacing when absent.
    pub r_pos_m: Option<f64>,
}

impl Default for LossSection {
    fn default() -> Self {
        let t = TripletParams::default();
        let p = TrinomialParams::default();
        Self {
            alpha: t.alpha,
            convention: t.convention,
            alpha_p: p.alpha_p,
            alpha_n: p.alpha_n,
            alpha_semi: p.alpha_semi,
            m_p: p.m_p,
            m_n: p.m_n,
            m_semi: p.m_semi,
            r_pos_m: None,
        }
    }
}

impl LossSection {
    pub fn triplet(&self) -> TripletParams {
        TripletParams {
            alpha: self.alpha,
            convention: self.convention,
        }
    }

    pub fn trinomial(&self) -> TrinomialParams {
        TrinomialParams {
            alpha_p: self.alpha_p,
            alpha_n: self.alpha_n,
            alpha_semi: self.alpha_semi,
            m_p: self.m_p,
            m_n: self.m_n,
            m_semi: self.m_semi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Metrics CSV path.
    pub trace: Option<PathBuf>,
    /// Summary text path.
    pub summary: Option<PathBuf>,
    /// Fill the `ms` column with wall-clock time. Off by default so that
    /// traces are byte-reproducible.
    pub timing: bool,
}

/// Optional per-subsystem seeds; each defaults to a value derived from the
/// master seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    pub world: Option<u64>,
    pub trajectory: Option<u64>,
    pub init: Option<u64>,
    pub odometry: Option<u64>,
    pub compass: Option<u64>,
    pub resample: Option<u64>,
    pub predict: Option<u64>,
}

/// Resolved seeds of every random stream in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub world: u64,
    pub trajectory: u64,
    pub init: u64,
    pub odometry: u64,
    pub compass: u64,
    pub resample: u64,
    pub predict: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed.
    pub seed: u64,
    /// Worker threads for particle-parallel work; 0 uses all cores.
    pub threads: usize,
    pub grid: GridSection,
    pub world: WorldSection,
    pub similarity: SimilaritySection,
    pub embed: EmbedSection,
    pub filter: FilterSection,
    pub trajectory: TrajectorySection,
    pub loss: LossSection,
    pub output: OutputSection,
    pub seeds: SeedSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            threads: 0,
            grid: GridSection::default(),
            world: WorldSection::default(),
            similarity: SimilaritySection::default(),
            embed: EmbedSection::default(),
            filter: FilterSection::default(),
            trajectory: TrajectorySection::default(),
            loss: LossSection::default(),
            output: OutputSection::default(),
            seeds: SeedSection::default(),
        }
    }
}

/// Parses `text` as a TOML value, falling back to a bare string.
fn parse_override_value(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Parse(format!("bad override key `{key}`")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            ConfigError::Parse(format!("override key `{key}`: `{part}` is not a table"))
        })?;
    }
    node.insert(
        path[path.len() - 1].to_string(),
        parse_override_value(value.trim()),
    );
    Ok(())
}

impl RunConfig {
    /// Parses and validates configuration text. `base_dir` anchors relative
    /// paths.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(text, &[], base_dir)
    }

    /// Like [`RunConfig::from_toml_str`], with `key=value` overrides applied
    /// on top of the file.
    pub fn from_toml_with_overrides(
        text: &str,
        overrides: &[String],
        base_dir: &Path,
    ) -> Result<Self, ConfigError> {
        // Parse once against the schema for line-accurate diagnostics.
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if !overrides.is_empty() {
            let mut table: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            config = toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        }
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::load_with_overrides(path, &[])
    }

    pub fn load_with_overrides(
        path: impl AsRef<Path>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_with_overrides(&text, overrides, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.world.file);
        fix(&mut self.embed.store);
        fix(&mut self.trajectory.file);
        fix(&mut self.output.trace);
        fix(&mut self.output.summary);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid
            .spec()
            .validate()
            .map_err(|e| invalid(format!("grid: {e}")))?;
        self.world_spec()
            .validate()
            .map_err(|e| invalid(format!("world: {e}")))?;
        if !(self.world.landmarks_per_tile >= 0.0 && self.world.landmarks_per_tile.is_finite()) {
            return Err(invalid("world.landmarks_per_tile must be >= 0"));
        }
        self.embed
            .params()
            .validate()
            .map_err(|e| invalid(format!("embed: {e}")))?;

        let f = &self.filter;
        if f.count == 0 {
            return Err(invalid("filter.count must be at least 1"));
        }
        if !(f.init_sigma_m > 0.0 && f.init_sigma_m.is_finite()) {
            return Err(invalid("filter.init_sigma_m must be positive"));
        }
        if !(f.init_offset_m >= 0.0 && f.init_offset_m.is_finite())
            || !f.init_bearing_rad.is_finite()
        {
            return Err(invalid(
                "filter.init_offset_m must be >= 0 and the bearing finite",
            ));
        }
        f.noise()
            .validate()
            .map_err(|e| invalid(format!("filter: {e}")))?;
        f.meas()
            .validate()
            .map_err(|e| invalid(format!("filter: {e}")))?;
        if !(0.0..=1.0).contains(&f.resample_threshold) {
            return Err(invalid("filter.resample_threshold must be in [0, 1]"));
        }
        if !(f.convergence_m > 0.0 && f.convergence_m.is_finite()) {
            return Err(invalid("filter.convergence_m must be positive"));
        }

        let t = &self.trajectory;
        if t.steps == 0 {
            return Err(invalid("trajectory.steps must be at least 1"));
        }
        if !(t.step_length_m >= 0.0 && t.step_length_m.is_finite()) {
            return Err(invalid("trajectory.step_length_m must be >= 0"));
        }
        if !(t.max_turn_rad >= 0.0 && t.max_turn_rad.is_finite()) {
            return Err(invalid("trajectory.max_turn_rad must be >= 0"));
        }
        if !(t.margin_m >= 0.0 && t.margin_m.is_finite()) {
            return Err(invalid("trajectory.margin_m must be >= 0"));
        }
        for v in [t.start_x, t.start_y, t.start_psi].into_iter().flatten() {
            if !v.is_finite() {
                return Err(invalid("trajectory start values must be finite"));
            }
        }

        self.loss
            .triplet()
            .validate()
            .map_err(|e| invalid(format!("loss: {e}")))?;
        self.loss
            .trinomial()
            .validate()
            .map_err(|e| invalid(format!("loss: {e}")))?;
        if let Some(r) = self.loss.r_pos_m {
            if !(r > 0.0 && r.is_finite()) {
                return Err(invalid("loss.r_pos_m must be positive"));
            }
        }

        for (key, path) in [
            ("world.file", &self.world.file),
            ("embed.store", &self.embed.store),
            ("trajectory.file", &self.trajectory.file),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(invalid(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid.spec()
    }

    /// Generation and sensor parameters of the world.
    pub fn world_spec(&self) -> WorldSpec {
        let tiles = self.grid.cols as f64 * self.grid.rows as f64;
        WorldSpec {
            seed: self.seed_plan().world,
            landmark_count: self
                .world
                .landmark_count
                .unwrap_or_else(|| (self.world.landmarks_per_tile * tiles).round() as usize),
            descriptor_dim: self.world.descriptor_dim,
            salience_min: self.world.salience_min,
            salience_max: self.world.salience_max,
            visibility_range: self.world.visibility_range,
            fov: self.world.fov,
        }
    }

    pub fn seed_plan(&self) -> SeedPlan {
        let s = &self.seeds;
        let d = |tag| derive_seed(self.seed, &[tag]);
        SeedPlan {
            world: s.world.unwrap_or_else(|| d(stream::WORLD)),
            trajectory: s.trajectory.unwrap_or_else(|| d(stream::TRAJECTORY)),
            init: s.init.unwrap_or_else(|| d(stream::INIT)),
            odometry: s.odometry.unwrap_or_else(|| d(stream::ODOMETRY)),
            compass: s.compass.unwrap_or_else(|| d(stream::COMPASS)),
            resample: s.resample.unwrap_or_else(|| d(stream::RESAMPLE)),
            predict: s.predict.unwrap_or_else(|| d(stream::PREDICT)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_toml_str(text, Path::new("."))
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse("seed = 4\n").unwrap();
        assert_eq!(c.filter.count, 30_000);
        assert_eq!(c.world.fov, FRAC_PI_2);
        assert_eq!(c.grid.spacing_m, 60.0);
        assert_eq!((c.grid.cols, c.grid.rows), (256, 256));
        assert_eq!(c.filter.odom_frac, 0.02);
        assert_eq!(c.filter.heading_frac, 0.01);
        assert_eq!(c.filter.convergence_m, 60.0);
        assert_eq!(c.similarity.backend, Backend::Oracle);
        assert_eq!(c.similarity.pose_mode, PoseMode::Full);
        assert_eq!(parse("").unwrap().seed, 1);
    }

    #[test]
    fn negative_spacing_is_a_validation_error() {
        let err = parse("[grid]\nspacing_m = -5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Validation(_)), "{err}");
    }

    #[test]
    fn typo_is_a_parse_error_naming_the_key() {
        let err = parse("seed = 2\n[grdi]\ncols = 4\n").unwrap_err();
        match err {
            ConfigError::Parse(msg) => {
                assert!(msg.contains("grdi"), "{msg}");
                assert!(msg.contains("line 2"), "{msg}");
            }
            other => panic!("expected parse error, got {other}"),
        }
        let err = parse("[filter]\ncuont = 5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(ref m) if m.contains("cuont")));
    }

    #[test]
    fn missing_referenced_file_is_rejected() {
        let err = parse("[world]\nfile = \"/definitely/not/here.rwld\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Validation(ref m) if m.contains("world.file")));
    }

    #[test]
    fn overrides_patch_values() {
        let c = RunConfig::from_toml_with_overrides(
            "[grid]\ncols = 8\n",
            &[
                "grid.rows=3".into(),
                "similarity.backend=safa".into(),
                "filter.sigma_s = 0.5".into(),
            ],
            Path::new("."),
        )
        .unwrap();
        assert_eq!((c.grid.cols, c.grid.rows), (8, 3));
        assert_eq!(c.similarity.backend, Backend::Safa);
        assert_eq!(c.filter.sigma_s, 0.5);

        let err = RunConfig::from_toml_with_overrides("", &["grid.colz=3".into()], Path::new("."))
            .unwrap_err();
        assert!(matches!(err, ConfigError::Parse(ref m) if m.contains("colz")));
    }

    #[test]
    fn seed_plan_streams_are_independent() {
        let a = parse("seed = 9\n").unwrap();
        let b = parse("seed = 9\n[seeds]\ncompass = 77\n").unwrap();
        let (pa, pb) = (a.seed_plan(), b.seed_plan());
        assert_eq!(pb.compass, 77);
        assert_ne!(pa.compass, pb.compass);
        assert_eq!(
            (
                pa.world,
                pa.trajectory,
                pa.init,
                pa.odometry,
                pa.resample,
                pa.predict
            ),
            (
                pb.world,
                pb.trajectory,
                pb.init,
                pb.odometry,
                pb.resample,
                pb.predict
            )
        );
        let all = [
            pa.world,
            pa.trajectory,
            pa.init,
            pa.odometry,
            pa.compass,
            pa.resample,
            pa.predict,
        ];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn serialized_config_parses_back() {
        let c = parse("seed = 3\n[world]\nlandmark_count = 10\n").unwrap();
        let back = parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
