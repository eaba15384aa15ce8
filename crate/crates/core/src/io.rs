//! Binary container for MPS and MPO tensors.
//!
//! Layout: the magic `MPQT`, a kind byte (0 = MPS, 1 = MPO), the site count
//! as u32, then per site `left, phys, right` as u32 followed by the row-major
//! entries as little-endian f64 (re, im) pairs.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::c;
use crate::mpo::Mpo;
use crate::mps::{Mps, Tensor3};

const MAGIC: &[u8; 4] = b"MPQT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Mps,
    Mpo,
}

fn encode(kind: Kind, sites: &[Tensor3]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(match kind {
        Kind::Mps => 0,
        Kind::Mpo => 1,
    });
    out.extend_from_slice(&(sites.len() as u32).to_le_bytes());
    for t in sites {
        for d in [t.left, t.phys, t.right] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for z in &t.data {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| Error::Invalid("truncated tensor file".into()))?;
    Ok(buf)
}

fn decode(bytes: &[u8]) -> Result<(Kind, Vec<Tensor3>)> {
    let mut r = bytes;
    if &take::<4>(&mut r)? != MAGIC {
        return Err(Error::Invalid("not a tensor file (bad magic)".into()));
    }
    let kind = match take::<1>(&mut r)?[0] {
        0 => Kind::Mps,
        1 => Kind::Mpo,
        k => return Err(Error::Invalid(format!("unknown tensor kind {k}"))),
    };
    let len = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut sites = Vec::with_capacity(len);
    for _ in 0..len {
        let dims: Vec<usize> = (0..3).map(|_| take(&mut r).map(|b| u32::from_le_bytes(b) as usize)).collect::<Result<_>>()?;
        let count = dims[0] * dims[1] * dims[2];
        if count * 16 > r.len() {
            return Err(Error::Invalid("truncated tensor file".into()));
        }
        let data = (0..count)
            .map(|_| {
                let re = f64::from_le_bytes(take(&mut r)?);
                let im = f64::from_le_bytes(take(&mut r)?);
                Ok(c(re, im))
            })
            .collect::<Result<Vec<_>>>()?;
        sites.push(Tensor3::from_data(dims[0], dims[1], dims[2], data)?);
    }
    if !r.is_empty() {
        return Err(Error::Invalid("trailing bytes after tensor data".into()));
    }
    Ok((kind, sites))
}

pub fn mps_to_bytes(psi: &Mps) -> Vec<u8> {
    encode(Kind::Mps, psi.tensors())
}

pub fn mpo_to_bytes(op: &Mpo) -> Vec<u8> {
    encode(Kind::Mpo, op.sites())
}

pub fn mps_from_bytes(bytes: &[u8]) -> Result<Mps> {
    match decode(bytes)? {
        (Kind::Mps, sites) => Mps::new(sites),
        _ => Err(Error::Invalid("file holds an MPO, expected an MPS".into())),
    }
}

pub fn mpo_from_bytes(bytes: &[u8]) -> Result<Mpo> {
    match decode(bytes)? {
        (Kind::Mpo, sites) => Mpo::new(sites),
        _ => Err(Error::Invalid("file holds an MPS, expected an MPO".into())),
    }
}

pub fn save_mps(psi: &Mps, path: &Path) -> Result<()> {
    fs::File::create(path)?.write_all(&mps_to_bytes(psi))?;
    Ok(())
}

pub fn load_mps(path: &Path) -> Result<Mps> {
    mps_from_bytes(&fs::read(path)?)
}

pub fn save_mpo(op: &Mpo, path: &Path) -> Result<()> {
    fs::File::create(path)?.write_all(&mpo_to_bytes(op))?;
    Ok(())
}

pub fn load_mpo(path: &Path) -> Result<Mpo> {
    mpo_from_bytes(&fs::read(path)?)
}
