//! Cross-view geolocalization runtime with pose-aware embeddings.
//!
//! A search area is tiled into a grid of overhead tiles. Each ground
//! observation is lifted once per step into a base embedding, then turned
//! into a pose-aware embedding for every particle and compared with the
//! particle's tile. The resulting scores weight a particle filter.
//!
//! A synthetic landmark world replaces imagery and a trained network, which
//! makes every stage checkable against a closed-form or brute-force oracle.

mod binio;
pub mod embed;
pub mod filter;
pub mod geometry;
pub mod loss;
pub mod runner;
pub mod seeds;
pub mod world;
