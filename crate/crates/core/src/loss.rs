//! Training objectives for the Siamese embedding: a soft-margin triplet loss
//! and the three-class trinomial loss, both with analytic gradients.
//!
//! Inputs are pair similarities in `[-1, 1]`. A higher positive similarity
//! lowers both losses; a higher negative similarity raises them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, GridSpec, ParticlePose, TileIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("non-finite input")]
    NonFinite,
    #[error("batch has no positive, semi-positive or negative pairs")]
    EmptyBatch,
    #[error("invalid loss parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic function, stable for large `|z|`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// How the two triplet inputs are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletConvention {
    /// Inputs are similarities: loss falls as `d_pos - d_neg` grows.
    #[default]
    Similarity,
    /// Inputs are distances: loss rises with `d_pos - d_neg`.
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletParams {
    pub alpha: f64,
    pub convention: TripletConvention,
}

impl Default for TripletParams {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            convention: TripletConvention::Similarity,
        }
    }
}

impl TripletParams {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.alpha > 0.0 && self.alpha.is_finite() {
            Ok(())
        } else {
            Err(LossError::InvalidParams(format!(
                "alpha must be positive, got {}",
                self.alpha
            )))
        }
    }

    fn sign(&self) -> f64 {
        match self.convention {
            TripletConvention::Similarity => -1.0,
            TripletConvention::Distance => 1.0,
        }
    }
}

fn finite(values: &[f64]) -> Result<(), LossError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LossError::NonFinite)
    }
}

pub fn triplet_loss(d_pos: f64, d_neg: f64, p: &TripletParams) -> Result<f64, LossError> {
    finite(&[d_pos, d_neg])?;
    p.validate()?;
    Ok(softplus(p.sign() * p.alpha * (d_pos - d_neg)))
}

/// `(dL/dd_pos, dL/dd_neg)`.
pub fn triplet_grad(d_pos: f64, d_neg: f64, p: &TripletParams) -> Result<(f64, f64), LossError> {
    finite(&[d_pos, d_neg])?;
    p.validate()?;
    let s = p.sign() * p.alpha;
    let g = sigmoid(s * (d_pos - d_neg)) * s;
    Ok((g, -g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrinomialParams {
    pub alpha_p: f64,
    pub alpha_n: f64,
    pub alpha_semi: f64,
    pub m_p: f64,
    pub m_n: f64,
    pub m_semi: f64,
}

impl Default for TrinomialParams {
    fn default() -> Self {
        Self {
            alpha_p: 10.0,
            alpha_n: 10.0,
            alpha_semi: 10.0,
            m_p: 0.6,
            m_n: 0.3,
            m_semi: 0.45,
        }
    }
}

impl TrinomialParams {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, a) in [
            ("alpha_p", self.alpha_p),
            ("alpha_n", self.alpha_n),
            ("alpha_semi", self.alpha_semi),
        ] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(LossError::InvalidParams(format!(
                    "{name} must be positive, got {a}"
                )));
            }
        }
        for (name, m) in [
            ("m_p", self.m_p),
            ("m_n", self.m_n),
            ("m_semi", self.m_semi),
        ] {
            if !m.is_finite() {
                return Err(LossError::InvalidParams(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Similarities of mined pairs, split by class. Counts are the list lengths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiningBatch {
    pub positives: Vec<f64>,
    pub semi_positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl MiningBatch {
    pub fn new(positives: Vec<f64>, semi_positives: Vec<f64>, negatives: Vec<f64>) -> Self {
        Self {
            positives,
            semi_positives,
            negatives,
        }
    }

    fn check(&self) -> Result<(), LossError> {
        if self.positives.is_empty() && self.semi_positives.is_empty() && self.negatives.is_empty()
        {
            return Err(LossError::EmptyBatch);
        }
        finite(&self.positives)?;
        finite(&self.semi_positives)?;
        finite(&self.negatives)
    }
}

/// Per-element gradients, aligned with the lists of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrinomialGrad {
    pub positives: Vec<f64>,
    pub semi_positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

// Each class term: sum_i softplus(sign * alpha * (s_i - m)) / (n * alpha).
fn class_term(values: &[f64], alpha: f64, margin: f64, sign: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let scale = values.len() as f64 * alpha;
    values
        .iter()
        .map(|s| softplus(sign * alpha * (s - margin)) / scale)
        .sum()
}

fn class_grad(values: &[f64], alpha: f64, margin: f64, sign: f64) -> Vec<f64> {
    let n = values.len() as f64;
    values
        .iter()
        .map(|s| sign * sigmoid(sign * alpha * (s - margin)) / n)
        .collect()
}

pub fn trinomial_loss(batch: &MiningBatch, p: &TrinomialParams) -> Result<f64, LossError> {
    batch.check()?;
    p.validate()?;
    Ok(class_term(&batch.positives, p.alpha_p, p.m_p, -1.0)
        + class_term(&batch.negatives, p.alpha_n, p.m_n, 1.0)
        + class_term(&batch.semi_positives, p.alpha_semi, p.m_semi, -1.0))
}

pub fn trinomial_grad(
    batch: &MiningBatch,
    p: &TrinomialParams,
) -> Result<TrinomialGrad, LossError> {
    batch.check()?;
    p.validate()?;
    Ok(TrinomialGrad {
        positives: class_grad(&batch.positives, p.alpha_p, p.m_p, -1.0),
        semi_positives: class_grad(&batch.semi_positives, p.alpha_semi, p.m_semi, -1.0),
        negatives: class_grad(&batch.negatives, p.alpha_n, p.m_n, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairClass {
    Positive,
    SemiPositive,
    Negative,
}

/// Labels a ground position against a tile: positive within `r_pos` of the
/// center of its own tile, semi-positive elsewhere in its own tile or in any
/// of the eight neighbours, negative otherwise.
pub fn classify_pair(
    ground: &ParticlePose,
    tile: TileIndex,
    grid: &GridSpec,
    r_pos: f64,
) -> Result<PairClass, LossError> {
    grid.check_tile(tile)?;
    if !ground.x.is_finite() || !ground.y.is_finite() || r_pos.is_nan() {
        return Err(LossError::NonFinite);
    }
    let (col, row) = grid.raw_cell(ground.x, ground.y);
    let dc = (col - tile.col as i64).abs();
    let dr = (row - tile.row as i64).abs();
    Ok(match (dc, dr) {
        (0, 0) => {
            let (cx, cy) = grid.tile_center(tile);
            if (ground.x - cx).hypot(ground.y - cy) <= r_pos {
                PairClass::Positive
            } else {
                PairClass::SemiPositive
            }
        }
        (dc, dr) if dc <= 1 && dr <= 1 => PairClass::SemiPositive,
        _ => PairClass::Negative,
    })
}

/// Default positive radius: a quarter of the tile spacing.
pub fn default_r_pos(grid: &GridSpec) -> f64 {
    0.25 * grid.spacing
}
