//! Binary framing shared by the ensemble model files: a 5-byte magic, a
//! length-prefixed JSON header and a sequence of tree blocks.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cart::{Node, Tree};
use crate::error::{Error, Result};
use crate::panel::{design::column_digest, ColumnMeta, DesignMatrix};

/// What a model was trained on; prediction checks columns against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub target_year: i32,
    pub snapshots: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    pub column_meta: Vec<ColumnMeta>,
    pub column_digest: String,
    pub config_digest: String,
}

impl ModelMeta {
    pub fn from_design(design: &DesignMatrix) -> Self {
        ModelMeta {
            target_year: design.target_year(),
            snapshots: design.snapshots(),
            n_rows: design.n_rows(),
            n_cols: design.n_cols(),
            column_meta: design.column_meta().to_vec(),
            column_digest: design.column_digest(),
            config_digest: String::new(),
        }
    }

    /// Metadata for a bare matrix (tests, library callers).
    pub fn anonymous(n_rows: usize, n_cols: usize) -> Self {
        let column_meta: Vec<ColumnMeta> = (0..n_cols).map(|_| ColumnMeta::Age).collect();
        ModelMeta {
            target_year: 0,
            snapshots: 0,
            n_rows,
            n_cols,
            column_digest: column_digest(&column_meta),
            column_meta,
            config_digest: String::new(),
        }
    }

    pub fn check_design(&self, design: &DesignMatrix) -> Result<()> {
        if design.n_cols() != self.n_cols {
            return Err(Error::ColumnMismatch {
                expected: self.n_cols,
                got: design.n_cols(),
            });
        }
        if design.column_digest() != self.column_digest {
            return Err(Error::BadModelFile(
                "design columns differ from the model's training columns".into(),
            ));
        }
        Ok(())
    }
}

pub fn write_model<W: Write, H: Serialize>(mut out: W, magic: &[u8; 5], header: &H, trees: &[Tree]) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    out.write_all(magic)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&(trees.len() as u64).to_le_bytes())?;
    for t in trees {
        write_tree(&mut out, t)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_model<R: Read, H: for<'de> Deserialize<'de>>(mut input: R, magic: &[u8; 5]) -> Result<(H, Vec<Tree>)> {
    let mut m = [0u8; 5];
    input.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::BadModelFile(format!(
            "expected magic {}, found {}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    let len = read_u64(&mut input)? as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    let header: H = serde_json::from_slice(&header)?;
    let n_trees = read_u64(&mut input)? as usize;
    let trees = (0..n_trees)
        .map(|_| read_tree(&mut input))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, trees))
}

/// Reads the magic of a model file without consuming the rest.
pub fn peek_magic(path: &std::path::Path) -> Result<[u8; 5]> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut m = [0u8; 5];
    f.read_exact(&mut m).map_err(|e| Error::io(path, e))?;
    Ok(m)
}

fn write_tree<W: Write>(out: &mut W, tree: &Tree) -> Result<()> {
    out.write_all(&(tree.nodes().len() as u32).to_le_bytes())?;
    for n in tree.nodes() {
        out.write_all(&n.feature.to_le_bytes())?;
        out.write_all(&n.threshold.to_le_bytes())?;
        out.write_all(&[n.missing_left as u8])?;
        out.write_all(&n.left.to_le_bytes())?;
        out.write_all(&n.right.to_le_bytes())?;
        out.write_all(&n.value.to_le_bytes())?;
        out.write_all(&n.gain.to_le_bytes())?;
        out.write_all(&n.cover.to_le_bytes())?;
        out.write_all(&n.n_rows.to_le_bytes())?;
    }
    Ok(())
}

fn read_tree<R: Read>(input: &mut R) -> Result<Tree> {
    let n = read_u32(input)? as usize;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let feature = read_u32(input)?;
        let threshold = read_f64(input)?;
        let mut b = [0u8; 1];
        input.read_exact(&mut b)?;
        nodes.push(Node {
            feature,
            threshold,
            missing_left: b[0] != 0,
            left: read_u32(input)?,
            right: read_u32(input)?,
            value: read_f64(input)?,
            gain: read_f64(input)?,
            cover: read_f64(input)?,
            n_rows: read_u32(input)?,
        });
    }
    Tree::from_nodes(nodes).ok_or_else(|| Error::BadModelFile("invalid tree structure".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_bad_magic() {
        let mut root = Node::leaf(0.5, 3.0, 3);
        root.feature = 2;
        root.threshold = 1.25;
        root.left = 1;
        root.right = 2;
        root.gain = 0.75;
        let t = Tree::from_nodes(vec![root, Node::leaf(0.0, 1.0, 1), Node::leaf(1.0, 2.0, 2)]).unwrap();
        let header = ModelMeta::anonymous(3, 3);
        let mut buf = Vec::new();
        write_model(&mut buf, b"CLRF1", &header, &[t.clone(), Tree::single_leaf(0.1)]).unwrap();
        let (h, trees): (ModelMeta, Vec<Tree>) = read_model(&buf[..], b"CLRF1").unwrap();
        assert_eq!(h, header);
        assert_eq!(trees, vec![t, Tree::single_leaf(0.1)]);
        assert!(read_model::<_, ModelMeta>(&buf[..], b"CLGB1").is_err());
    }
}
