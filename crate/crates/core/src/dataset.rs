//! In-memory dataset and its little-endian binary file format.
//!
//! Layout: a 40-byte header (`"EFBG"`, version, sample count, spectra,
//! wavelengths, markers as `u32`, then the wavelength range as two `f64`),
//! followed per sample by 3×125 `f32` intensities and 21×3 `f32` marker
//! coordinates in mm. A JSON sidecar next to the file records the generator
//! seed and a digest of the generator configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{MarkerChain, Point3, MARKER_SPACING_MM, N_MARKERS};
use crate::simulator::{
    GeneratorConfig, SpectrumSample, INPUT_LEN, N_SPECTRA, N_WAVELENGTHS, WAVELENGTH_END_NM, WAVELENGTH_START_NM,
};

pub const MAGIC: &[u8; 4] = b"EFBG";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;
pub const TARGET_LEN: usize = N_MARKERS * 3;
pub const SAMPLE_BYTES: usize = (INPUT_LEN + TARGET_LEN) * 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × 375` intensities.
    intensities: Vec<f32>,
    /// `n × 63` marker coordinates.
    coords: Vec<f32>,
}

impl Dataset {
    pub fn new(intensities: Vec<f32>, coords: Vec<f32>) -> Result<Self> {
        if intensities.len() % INPUT_LEN != 0 || coords.len() % TARGET_LEN != 0 {
            return Err(Error::shape("dataset", &[intensities.len()], &[coords.len()]));
        }
        if intensities.len() / INPUT_LEN != coords.len() / TARGET_LEN {
            return Err(Error::LengthMismatch(format!(
                "{} spectra for {} shapes",
                intensities.len() / INPUT_LEN,
                coords.len() / TARGET_LEN
            )));
        }
        Ok(Dataset { intensities, coords })
    }

    pub fn from_samples(samples: &[SpectrumSample]) -> Result<Self> {
        let mut intensities = Vec::with_capacity(samples.len() * INPUT_LEN);
        let mut coords = Vec::with_capacity(samples.len() * TARGET_LEN);
        for s in samples {
            if s.intensities.len() != INPUT_LEN || s.shape_ref.len() != N_MARKERS {
                return Err(Error::shape(
                    "sample",
                    &[s.intensities.len(), s.shape_ref.len()],
                    &[INPUT_LEN, N_MARKERS],
                ));
            }
            intensities.extend_from_slice(&s.intensities);
            coords.extend(s.shape_ref.to_flat().into_iter().map(|v| v as f32));
        }
        Self::new(intensities, coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / TARGET_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn intensities(&self, i: usize) -> &[f32] {
        &self.intensities[i * INPUT_LEN..(i + 1) * INPUT_LEN]
    }

    pub fn coords(&self, i: usize) -> &[f32] {
        &self.coords[i * TARGET_LEN..(i + 1) * TARGET_LEN]
    }

    pub fn chain(&self, i: usize) -> MarkerChain {
        let c = self.coords(i);
        MarkerChain {
            positions: c
                .chunks(3)
                .map(|p| Point3::new(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect(),
            spacing: MARKER_SPACING_MM,
        }
    }

    pub fn chains(&self) -> Vec<MarkerChain> {
        (0..self.len()).map(|i| self.chain(i)).collect()
    }

    /// Subset in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            intensities: idx.iter().flat_map(|&i| self.intensities(i).iter().copied()).collect(),
            coords: idx.iter().flat_map(|&i| self.coords(i).iter().copied()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * SAMPLE_BYTES);
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.len() as u32,
            N_SPECTRA as u32,
            N_WAVELENGTHS as u32,
            N_MARKERS as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&WAVELENGTH_START_NM.to_le_bytes());
        out.extend_from_slice(&WAVELENGTH_END_NM.to_le_bytes());
        for i in 0..self.len() {
            for v in self.intensities(i).iter().chain(self.coords(i)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a dataset image; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
        }
        let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        if u(4) != VERSION {
            return Err(bad(format!("unsupported version {}", u(4))));
        }
        let n = u(8) as usize;
        let dims = (u(12) as usize, u(16) as usize, u(20) as usize);
        if dims != (N_SPECTRA, N_WAVELENGTHS, N_MARKERS) {
            return Err(bad(format!("unsupported dimensions {dims:?}")));
        }
        if f(24) != WAVELENGTH_START_NM || f(32) != WAVELENGTH_END_NM {
            return Err(bad(format!("unsupported wavelength range {}..{} nm", f(24), f(32))));
        }
        let expected = HEADER_LEN + n * SAMPLE_BYTES;
        if bytes.len() != expected {
            return Err(bad(format!(
                "{} bytes, expected {expected} for {n} samples",
                bytes.len()
            )));
        }
        let mut intensities = Vec::with_capacity(n * INPUT_LEN);
        let mut coords = Vec::with_capacity(n * TARGET_LEN);
        for rec in bytes[HEADER_LEN..].chunks_exact(SAMPLE_BYTES) {
            let mut vals = rec
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
            intensities.extend(vals.by_ref().take(INPUT_LEN));
            coords.extend(vals);
        }
        Self::new(intensities, coords)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn digest<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub n_samples: usize,
    pub seed: u64,
    pub config_digest: String,
    pub generator: GeneratorConfig,
}

impl DatasetSidecar {
    pub fn new(n_samples: usize, seed: u64, generator: &GeneratorConfig) -> Result<Self> {
        Ok(DatasetSidecar {
            n_samples,
            seed,
            config_digest: digest(generator)?,
            generator: generator.clone(),
        })
    }

    /// `data.efbg` → `data.efbg.json`.
    pub fn path_for(dataset: &Path) -> PathBuf {
        let mut s = dataset.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}
