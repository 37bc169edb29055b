//! Field snapshot files.
//!
//! Layout (all little-endian): magic `NSSF`, format version (u32), K_max
//! (u32), mode count (u32), then `(k1: i32, k2: i32, amplitude: f64)` triples
//! sorted lexicographically.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{Lattice, ModeIndex, SpectralField};

const MAGIC: &[u8; 4] = b"NSSF";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FieldIoError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: not a field snapshot file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

pub fn write_field(mut out: impl Write, field: &SpectralField) -> Result<(), FieldIoError> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&field.lattice().kmax().to_le_bytes())?;
    // Lattice order is already lexicographic.
    let count = field.lattice().len() as u32;
    out.write_all(&count.to_le_bytes())?;
    for (i, m) in field.lattice().modes().iter().enumerate() {
        out.write_all(&m.k1.to_le_bytes())?;
        out.write_all(&m.k2.to_le_bytes())?;
        out.write_all(&field.coeffs()[i].to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field(mut inp: impl Read) -> Result<SpectralField, FieldIoError> {
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FieldIoError::BadMagic);
    }
    let version = read_u32(&mut inp)?;
    if version != VERSION {
        return Err(FieldIoError::BadVersion(version));
    }
    let kmax = read_u32(&mut inp)?;
    if kmax == 0 {
        return Err(FieldIoError::Corrupt("K_max must be positive".into()));
    }
    let count = read_u32(&mut inp)? as usize;
    let lattice = Lattice::new(kmax);
    let mut field = SpectralField::zero(&lattice);
    let mut prev: Option<(i32, i32)> = None;
    for _ in 0..count {
        let k1 = read_i32(&mut inp)?;
        let k2 = read_i32(&mut inp)?;
        let amp = read_f64(&mut inp)?;
        if let Some(p) = prev {
            if p >= (k1, k2) {
                return Err(FieldIoError::Corrupt("modes not strictly sorted".into()));
            }
        }
        prev = Some((k1, k2));
        let mode = ModeIndex::new(k1, k2)
            .map_err(|_| FieldIoError::Corrupt("zero mode in snapshot".into()))?;
        field
            .set_coeff(mode, amp)
            .map_err(|_| FieldIoError::Corrupt(format!("mode ({k1},{k2}) outside |k| <= {kmax}")))?;
    }
    Ok(field)
}

fn read_u32(inp: &mut impl Read) -> Result<u32, FieldIoError> {
    let mut b = [0u8; 4];
    inp.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i32(inp: &mut impl Read) -> Result<i32, FieldIoError> {
    let mut b = [0u8; 4];
    inp.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}

pub(crate) fn read_f64(inp: &mut impl Read) -> Result<f64, FieldIoError> {
    let mut b = [0u8; 8];
    inp.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let lattice = Lattice::new(5);
        let mut w = SpectralField::zero(&lattice);
        for (i, c) in w.coeffs_mut().iter_mut().enumerate() {
            *c = (i as f64) * 0.25 - 3.0;
        }
        let mut buf = Vec::new();
        write_field(&mut buf, &w).unwrap();
        let back = read_field(buf.as_slice()).unwrap();
        assert_eq!(back.lattice().kmax(), 5);
        assert_eq!(back.coeffs(), w.coeffs());
    }

    #[test]
    fn rejects_garbage() {
        let err = read_field(&b"NOPE1234"[..]);
        assert!(matches!(err, Err(FieldIoError::BadMagic)));
    }
}
