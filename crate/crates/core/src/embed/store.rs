//! Satellite embedding store and its `RWSS` file format.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic  "RWSS"            4 bytes
//! version                  u16
//! grid origin_x, origin_y  f64, f64
//! grid spacing             f64
//! grid cols, rows          u32, u32
//! heads K, channels C      u32, u32
//! embeddings               cols*rows*K*C f32, tiles in row-major order
//! crc                      u64, CRC-64/XZ of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use rayon::prelude::*;

use super::{safa_forward, EmbedConfig, EmbedError, PoseFeature};
use crate::binio::{ByteReader, ByteWriter};
use crate::geometry::{GridSpec, TileIndex};
use crate::world::{GroundObservation, World};

pub const STORE_MAGIC: [u8; 4] = *b"RWSS";
pub const STORE_VERSION: u16 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const HEADER_LEN: usize = 4 + 2 + 24 + 8 + 8;

/// One embedding per tile, computed before runtime.
#[derive(Debug, Clone, PartialEq)]
pub struct SatStore {
    grid: GridSpec,
    heads: u32,
    channels: u32,
    data: Vec<f32>,
    checksum: u64,
}

impl SatStore {
    pub fn new(
        grid: GridSpec,
        heads: u32,
        channels: u32,
        data: Vec<f32>,
    ) -> Result<Self, EmbedError> {
        grid.validate()?;
        let dim = heads as usize * channels as usize;
        if dim == 0 || data.len() != grid.tile_count() * dim {
            return Err(EmbedError::ShapeMismatch(format!(
                "{} values for {} tiles of dimension {dim}",
                data.len(),
                grid.tile_count()
            )));
        }
        let mut store = Self {
            grid,
            heads,
            channels,
            data,
            checksum: 0,
        };
        store.checksum = CRC64.checksum(store.encode_body().as_slice());
        Ok(store)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn heads(&self) -> u32 {
        self.heads
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.heads as usize * self.channels as usize
    }

    pub fn len(&self) -> usize {
        self.grid.tile_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// Panics if `tile` is outside the grid.
    pub fn embedding(&self, tile: TileIndex) -> &[f32] {
        assert!(
            self.grid.contains_tile(tile),
            "tile {tile:?} outside store grid"
        );
        let d = self.dim();
        let t = self.grid.linear_index(tile);
        &self.data[t * d..(t + 1) * d]
    }

    fn encode_body(&self) -> ByteWriter {
        let mut w = ByteWriter::with_capacity(HEADER_LEN + 4 * self.data.len() + 8);
        w.bytes(&STORE_MAGIC);
        w.u16(STORE_VERSION);
        w.grid(&self.grid);
        w.u32(self.heads);
        w.u32(self.channels);
        for &v in &self.data {
            w.f32(v);
        }
        w
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = self.encode_body();
        w.u64(CRC64.checksum(w.as_slice()));
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        if bytes.len() < HEADER_LEN + 8 {
            return Err(EmbedError::CorruptStore(format!(
                "file is {} bytes, shorter than the fixed header",
                bytes.len()
            )));
        }
        if bytes[..4] != STORE_MAGIC {
            return Err(EmbedError::CorruptStore("bad magic".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(trailer.try_into().expect("8 bytes"));
        let actual = CRC64.checksum(body);
        if stored != actual {
            return Err(EmbedError::CorruptStore(format!(
                "checksum mismatch (stored {stored:016x}, computed {actual:016x})"
            )));
        }
        let mut r = ByteReader::new(&body[4..]);
        let short = || EmbedError::CorruptStore("file is truncated".into());
        let version = r.u16().ok_or_else(short)?;
        if version != STORE_VERSION {
            return Err(EmbedError::VersionMismatch {
                found: version,
                expected: STORE_VERSION,
            });
        }
        let grid = r.grid().ok_or_else(short)?;
        grid.validate()
            .map_err(|e| EmbedError::CorruptStore(format!("bad grid header: {e}")))?;
        let heads = r.u32().ok_or_else(short)?;
        let channels = r.u32().ok_or_else(short)?;
        let expected = grid.tile_count() as u64 * heads as u64 * channels as u64 * 4;
        if r.remaining() as u64 != expected {
            return Err(EmbedError::CorruptStore(format!(
                "payload holds {} bytes, header announces {expected}",
                r.remaining()
            )));
        }
        let data = (0..expected / 4)
            .map(|_| r.f32().ok_or_else(short))
            .collect::<Result<Vec<_>, _>>()?;
        let store = Self::new(grid, heads, channels, data)?;
        debug_assert_eq!(store.checksum, actual);
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Embeds every tile of the world's grid through the pose-free satellite
/// branch.
pub fn precompute_sat_store(world: &World, config: &EmbedConfig) -> Result<SatStore, EmbedError> {
    config.validate()?;
    let grid = *world.grid();
    let lifter = config.lifter(world.descriptor_dim());
    let weights = config.satellite_weights();
    let per_tile: Vec<Vec<f32>> = (0..grid.tile_count())
        .into_par_iter()
        .map(|t| {
            let tile = grid.tile_at(t);
            let descriptor = world.satellite_descriptor(tile).map_err(|e| match e {
                crate::world::WorldError::Geometry(g) => EmbedError::Geometry(g),
                other => EmbedError::ShapeMismatch(other.to_string()),
            })?;
            let obs = GroundObservation {
                visible_count: world.tile_members(tile).len(),
                descriptor,
            };
            let base = lifter.lift(&obs)?;
            let emb = safa_forward(&base, &PoseFeature::Empty, &weights)?;
            Ok(emb.values().iter().map(|&v| v as f32).collect())
        })
        .collect::<Result<_, EmbedError>>()?;
    SatStore::new(
        grid,
        config.heads as u32,
        config.channels as u32,
        per_tile.concat(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::WorldSpec;

    fn sample_store() -> (World, SatStore) {
        let grid = GridSpec::new(0.0, 0.0, 60.0, 2, 2).unwrap();
        let spec = WorldSpec {
            landmark_count: 12,
            seed: 4,
            ..WorldSpec::default()
        };
        let world = World::generate(&spec, &grid).unwrap();
        let store = precompute_sat_store(&world, &EmbedConfig::default()).unwrap();
        (world, store)
    }

    #[test]
    fn one_embedding_per_tile_and_deterministic() {
        let (world, store) = sample_store();
        assert_eq!(store.len(), 4);
        assert_eq!(store.dim(), 64);
        let again = precompute_sat_store(&world, &EmbedConfig::default()).unwrap();
        assert_eq!(again.checksum(), store.checksum());
        assert_eq!(again.to_bytes(), store.to_bytes());
    }

    #[test]
    fn entries_match_direct_pipeline() {
        let (world, store) = sample_store();
        let cfg = EmbedConfig::default();
        let weights = cfg.satellite_weights();
        for tile in world.grid().tiles() {
            let descriptor = world.satellite_descriptor(tile).unwrap();
            let base = lift_direct(&descriptor, &cfg);
            let emb = safa_forward(&base, &PoseFeature::Empty, &weights).unwrap();
            let expect: Vec<f32> = emb.values().iter().map(|&v| v as f32).collect();
            assert_eq!(store.embedding(tile), expect.as_slice());
        }
    }

    fn lift_direct(descriptor: &[f64], cfg: &EmbedConfig) -> super::super::BaseEmbedding {
        let obs = GroundObservation {
            descriptor: descriptor.to_vec(),
            visible_count: 1,
        };
        super::super::lift_ground(&obs, cfg.positions, cfg.channels, cfg.lift_seed).unwrap()
    }

    #[test]
    fn empty_tile_stores_zero_vector() {
        let grid = GridSpec::new(0.0, 0.0, 60.0, 2, 1).unwrap();
        let world = World::from_landmarks(grid, 32, Vec::new()).unwrap();
        let store = precompute_sat_store(&world, &EmbedConfig::default()).unwrap();
        assert!(store
            .embedding(TileIndex::new(1, 0))
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn round_trip_and_corruption() {
        let (_, store) = sample_store();
        let bytes = store.to_bytes();
        assert_eq!(&bytes[..4], b"RWSS");
        let back = SatStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, store);

        assert!(matches!(
            SatStore::from_bytes(&bytes[..bytes.len() - 5]),
            Err(EmbedError::CorruptStore(_))
        ));
        assert!(matches!(
            SatStore::from_bytes(&bytes[..10]),
            Err(EmbedError::CorruptStore(_))
        ));
        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 17] ^= 0x40;
        assert!(matches!(
            SatStore::from_bytes(&flipped),
            Err(EmbedError::CorruptStore(_))
        ));
    }

    #[test]
    fn version_is_checked() {
        let (_, store) = sample_store();
        let mut bytes = store.to_bytes();
        bytes[4] = 2;
        let n = bytes.len();
        let crc = CRC64.checksum(&bytes[..n - 8]);
        bytes[n - 8..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            SatStore::from_bytes(&bytes),
            Err(EmbedError::VersionMismatch {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn file_round_trip() {
        let (_, store) = sample_store();
        let dir = std::env::temp_dir().join(format!("rwss-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("store.rwss");
        store.save(&path).unwrap();
        assert_eq!(SatStore::load(&path).unwrap(), store);
        assert!(matches!(
            SatStore::load(dir.join("missing.rwss")),
            Err(EmbedError::Io(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
