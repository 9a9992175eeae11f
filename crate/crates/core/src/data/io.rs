//! Binary dataset persistence.
//!
//! Little-endian layout:
//! `"PDEWB1\0\0"` (8 bytes) | `u32` version = 1 | payload | `u32` CRC32.
//! The payload is a `u32`-length-prefixed UTF-8 JSON manifest followed by one
//! record per sample: `u8` system tag, `u8` has_solution, 12 `f64`
//! coefficients in fixed order (D11, D12, D22, vx, vy, omega, r, psi, then 4
//! reserved slots; absent values are NaN), the `f32` source field row-major,
//! an `f32` permeability field for Darcy records, and the `f32` solution
//! field when present. The CRC covers the whole payload. Field data is
//! quantized to `f32` on write; reading lifts it back exactly, so
//! write -> read -> write reproduces the file byte for byte.

use std::path::Path;

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::pde::{CoefficientSet, SystemTag};
use crate::spectral::ScalarField2D;

use super::{Dataset, Manifest, PdeSample};

pub const MAGIC: &[u8; 8] = b"PDEWB1\0\0";
pub const VERSION: u32 = 1;

fn push_coeff_block(buf: &mut Vec<u8>, c: &CoefficientSet) {
    let d = c.d.unwrap_or([[f64::NAN; 2]; 2]);
    let v = c.v.unwrap_or([f64::NAN; 2]);
    let block = [
        if c.d.is_some() { d[0][0] } else { f64::NAN },
        if c.d.is_some() { d[0][1] } else { f64::NAN },
        if c.d.is_some() { d[1][1] } else { f64::NAN },
        v[0],
        v[1],
        c.omega.unwrap_or(f64::NAN),
        c.r.unwrap_or(f64::NAN),
        c.psi.unwrap_or(f64::NAN),
        f64::NAN,
        f64::NAN,
        f64::NAN,
        f64::NAN,
    ];
    for x in block {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn push_field(buf: &mut Vec<u8>, field: &ScalarField2D) {
    for v in field.values.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::Format("truncated payload".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn field(&mut self, grid: &crate::spectral::GridSpec) -> Result<ScalarField2D> {
        let raw = self.take(4 * grid.points())?;
        let mut values = Array2::<f64>::zeros((grid.ny, grid.nx));
        for (slot, chunk) in values.iter_mut().zip(raw.chunks_exact(4)) {
            *slot = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        Ok(ScalarField2D { grid: *grid, values })
    }
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let manifest = serde_json::to_vec(&ds.manifest)?;
    let mut payload = Vec::with_capacity(manifest.len() + ds.samples.len() * ds.grid().points() * 8);
    payload.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    payload.extend_from_slice(&manifest);
    for s in &ds.samples {
        payload.push(s.system.to_u8());
        payload.push(s.has_solution() as u8);
        push_coeff_block(&mut payload, &s.coeffs);
        push_field(&mut payload, &s.source);
        if s.system == SystemTag::Darcy {
            let k = s.coeffs.k_field.as_ref().ok_or_else(|| {
                CoreError::Format("Darcy sample without permeability field".into())
            })?;
            push_field(&mut payload, k);
        }
        if let Some(u) = &s.solution {
            push_field(&mut payload, u);
        }
    }
    let crc = crc32fast::hash(&payload);
    let mut out = Vec::with_capacity(payload.len() + 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 16 {
        return Err(CoreError::Format("file too short".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(CoreError::Format("bad magic; not a dataset file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CoreError::Format(format!("unsupported dataset version {version}")));
    }
    let payload = &bytes[12..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(CoreError::Checksum { stored, computed });
    }

    let mut r = Reader { bytes: payload, pos: 0 };
    let manifest_len = r.u32()? as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(manifest_len)?)?;
    let grid = manifest.grid;
    let mut samples = Vec::with_capacity(manifest.n_samples);
    for _ in 0..manifest.n_samples {
        let system = SystemTag::from_u8(r.u8()?)?;
        let has_solution = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(CoreError::Format(format!("bad has_solution byte {other}"))),
        };
        let mut block = [0.0f64; 12];
        for slot in &mut block {
            *slot = r.f64()?;
        }
        let source = r.field(&grid)?;
        let k_field = if system == SystemTag::Darcy { Some(r.field(&grid)?) } else { None };
        let solution = if has_solution { Some(r.field(&grid)?) } else { None };
        let opt = |x: f64| if x.is_nan() { None } else { Some(x) };
        let coeffs = CoefficientSet {
            d: opt(block[0]).map(|d11| [[d11, block[1]], [block[1], block[2]]]),
            v: opt(block[3]).map(|vx| [vx, block[4]]),
            omega: opt(block[5]),
            r: opt(block[6]),
            psi: opt(block[7]),
            k_field,
        };
        samples.push(PdeSample { system, source, coeffs, solution });
    }
    if r.pos != payload.len() {
        return Err(CoreError::Format(format!(
            "trailing bytes after last sample: {} unread",
            payload.len() - r.pos
        )));
    }
    Ok(Dataset { samples, split: manifest.split, manifest })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

/// CRC32 of the manifest JSON, used as a compact provenance id in reports.
pub fn manifest_hash(m: &Manifest) -> Result<u32> {
    Ok(crc32fast::hash(&serde_json::to_vec(m)?))
}
