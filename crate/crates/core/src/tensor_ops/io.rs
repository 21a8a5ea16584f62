//! Volume binary format: magic `ZNNV`, u32 version (1), three u32 extents
//! (x, y, z), then `nx*ny*nz` little-endian f32 values in x-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{voxels, Scalar, Volume};

pub const MAGIC: &[u8; 4] = b"ZNNV";
pub const VERSION: u32 = 1;

pub fn write_volume<T: Scalar, W: Write>(mut w: W, v: &Volume<T>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in v.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for &x in v.as_slice() {
        w.write_all(&(x.f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_volume<T: Scalar, R: Read>(mut r: R) -> Result<Volume<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dims = [read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize];
    if dims.contains(&0) {
        return Err(Error::Format(format!("zero extent in {dims:?}")));
    }
    let mut bytes = vec![0u8; voxels(dims) * 4];
    r.read_exact(&mut bytes)?;
    let values: Vec<T> =
        bytes.chunks_exact(4).map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
    Volume::from_vec(dims, values)
}

pub fn save_volume<T: Scalar>(path: impl AsRef<Path>, v: &Volume<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_volume(&mut w, v)?;
    w.flush()?;
    Ok(())
}

pub fn load_volume<T: Scalar>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    read_volume(BufReader::new(File::open(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
