//! Flat binary files of dense embedding batches ("DCSE").
//!
//! Layout, little-endian: magic `DCSE`, then u32 version, count, rows, dim;
//! `count * rows * dim` f32 values row-major; `count * rows` role tags.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::oracle::{DenseEmbedding, Role};
use crate::sphere::{normalize, UnitVector};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"DCSE";
pub const EMBEDDING_VERSION: u32 = 1;

/// Rows further than this from unit norm are rejected; the rest are
/// renormalized to undo f32 rounding.
const UNIT_TOLERANCE: f64 = 1e-5;

pub fn write_embeddings<W: Write>(out: &mut W, batch: &[DenseEmbedding]) -> Result<()> {
    let rows = batch.first().map_or(0, |e| e.len());
    let dim = batch.first().map_or(0, |e| e.dim());
    if batch.iter().any(|e| e.len() != rows || e.dim() != dim) {
        return Err(Error::ShapeMismatch("all embeddings in a batch need the same rows and dim".into()));
    }
    out.write_all(EMBEDDING_MAGIC)?;
    for v in [EMBEDDING_VERSION, batch.len() as u32, rows as u32, dim as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for e in batch {
        for r in &e.rows {
            for &x in r.as_slice() {
                out.write_all(&(x as f32).to_le_bytes())?;
            }
        }
    }
    for e in batch {
        out.write_all(&e.roles.iter().map(|r| r.tag()).collect::<Vec<u8>>())?;
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_embeddings<R: Read>(input: &mut R) -> Result<Vec<DenseEmbedding>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::Format("not a DCSE file".into()));
    }
    let version = read_u32(input)?;
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported DCSE version {version}")));
    }
    let (count, rows, dim) = (read_u32(input)? as usize, read_u32(input)? as usize, read_u32(input)? as usize);
    let mut floats = vec![0u8; count * rows * dim * 4];
    input.read_exact(&mut floats)?;
    let mut tags = vec![0u8; count * rows];
    input.read_exact(&mut tags)?;
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after DCSE payload".into()));
    }
    let values: Vec<f64> = floats.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    let mut out = Vec::with_capacity(count);
    for e in 0..count {
        let t = &tags[e * rows..(e + 1) * rows];
        let is_image = t.iter().any(|&x| x <= 1);
        let grid = if is_image {
            let g = ((rows.saturating_sub(1)) as f64).sqrt().round() as usize;
            if g * g + 1 != rows {
                return Err(Error::Format(format!("image with {rows} rows is not 1 + grid^2")));
            }
            Some(g)
        } else {
            None
        };
        let roles = t.iter().enumerate().map(|(i, &x)| Role::from_tag(x, i, grid)).collect::<Result<Vec<_>>>()?;
        let emb_rows = (0..rows)
            .map(|r| {
                let start = (e * rows + r) * dim;
                let v = &values[start..start + dim];
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (n - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::Format(format!("row {r} of embedding {e} has norm {n}")));
                }
                normalize(v)
            })
            .collect::<Result<Vec<UnitVector>>>()?;
        out.push(DenseEmbedding { rows: emb_rows, roles, grid });
    }
    Ok(out)
}

pub fn save_embeddings(path: &Path, batch: &[DenseEmbedding]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_embeddings(&mut f, batch)?;
    f.flush()?;
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<Vec<DenseEmbedding>> {
    let f = std::fs::File::open(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    read_embeddings(&mut std::io::BufReader::new(f))
}
