//! VGF volume files: one JSON header line followed by raw little-endian voxel
//! data in x-fastest order.
//!
//! ```text
//! {"dims":[nx,ny,nz],"spacing":[sx,sy,sz],"dtype":"f32"}\n<raw bytes>
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: Dtype,
}

/// A volume as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    F32(VoxelGrid<f32>),
    U8(VoxelGrid<u8>),
}

impl Volume {
    pub fn dtype(&self) -> Dtype {
        match self {
            Volume::F32(_) => Dtype::F32,
            Volume::U8(_) => Dtype::U8,
        }
    }

    pub fn to_f64(&self) -> VoxelGrid<f64> {
        match self {
            Volume::F32(g) => g.map(|&v| v as f64),
            Volume::U8(g) => g.map(|&v| v as f64),
        }
    }

    /// Nonzero voxels are foreground.
    pub fn to_mask(&self) -> BinaryMask {
        match self {
            Volume::F32(g) => g.map(|&v| v != 0.0),
            Volume::U8(g) => g.map(|&v| v != 0),
        }
    }

    pub fn from_f64(grid: &VoxelGrid<f64>) -> Self {
        Volume::F32(grid.map(|&v| v as f32))
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Volume::U8(mask.map(|&b| b as u8))
    }
}

pub fn write_to<W: Write>(mut w: W, volume: &Volume) -> Result<()> {
    let (dims, spacing) = match volume {
        Volume::F32(g) => (g.dims(), g.spacing()),
        Volume::U8(g) => (g.dims(), g.spacing()),
    };
    let header = Header {
        dims,
        spacing,
        dtype: volume.dtype(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    match volume {
        Volume::F32(g) => {
            let mut buf = Vec::with_capacity(g.len() * 4);
            for v in g.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Volume::U8(g) => w.write_all(g.data())?,
    }
    Ok(())
}

pub fn read_from<R: Read>(r: R) -> Result<Volume> {
    let mut reader = BufReader::new(r);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("missing header terminator".into()));
    }
    line.pop();
    let header: Header = serde_json::from_slice(&line)?;
    let n: usize = header.dims.iter().product();
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let width = match header.dtype {
        Dtype::F32 => 4,
        Dtype::U8 => 1,
    };
    if body.len() != n * width {
        return Err(Error::Format(format!(
            "expected {} data bytes, found {}",
            n * width,
            body.len()
        )));
    }
    Ok(match header.dtype {
        Dtype::F32 => {
            let data = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Volume::F32(VoxelGrid::new(header.dims, header.spacing, data)?)
        }
        Dtype::U8 => Volume::U8(VoxelGrid::new(header.dims, header.spacing, body)?),
    })
}

pub fn write(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    let mut buf = Vec::new();
    write_to(&mut buf, volume)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Volume> {
    read_from(fs::File::open(path)?)
}
