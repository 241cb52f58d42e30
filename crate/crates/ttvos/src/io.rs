//! TTEN tensor files and checkpoint directories.
//!
//! TTEN layout: magic `TTEN`, u8 version (1), u8 dtype code (1 = 64-bit
//! real), u8 rank, rank × little-endian u64 extents, then the payload
//! as little-endian 64-bit reals in row-major order. A checkpoint is a
//! directory of TTEN files plus `manifest.txt` with one
//! `name<TAB>filename` line per tensor, sorted by name.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TTEN";
const VERSION: u8 = 1;
const DTYPE_F64: u8 = 1;

pub fn tten_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 8 * t.rank() + 8 * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F64);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_f64c().to_le_bytes());
    }
    out
}

pub fn tten_from_bytes<T: Scalar>(bytes: &[u8], what: &Path) -> Result<Tensor<T>> {
    let fail = |msg: String| Error::Data(format!("{}: {msg}", what.display()));
    if bytes.len() < 7 {
        return Err(fail("truncated TTEN header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail("bad magic, not a TTEN file".into()));
    }
    if bytes[4] != VERSION {
        return Err(fail(format!("unsupported TTEN version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F64 {
        return Err(fail(format!("unsupported dtype code {}", bytes[5])));
    }
    let rank = bytes[6] as usize;
    let dims_end = 7 + 8 * rank;
    if bytes.len() < dims_end {
        return Err(fail("truncated dimension list".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[7 + 8 * i..7 + 8 * (i + 1)]);
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let numel: usize = shape.iter().product();
    if bytes.len() != dims_end + 8 * numel {
        return Err(fail(format!(
            "payload is {} bytes, dims imply {}",
            bytes.len() - dims_end,
            8 * numel
        )));
    }
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[dims_end + 8 * i..dims_end + 8 * (i + 1)]);
        data.push(T::c(f64::from_le_bytes(b)));
    }
    Tensor::from_vec(shape, data)
}

pub fn write_tten<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&tten_bytes(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tten<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    tten_from_bytes(&bytes, path)
}

/// Writes `named` tensors into `dir` (created if needed) plus the
/// manifest. Tensor names become `<name>.tten` filenames.
pub fn save_checkpoint<T: Scalar>(dir: &Path, named: &[(String, Tensor<T>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines: Vec<(String, String)> = Vec::with_capacity(named.len());
    for (name, t) in named {
        let file = format!("{}.tten", name.replace(['/', '\\'], "_"));
        write_tten(&dir.join(&file), t)?;
        lines.push((name.clone(), file));
    }
    lines.sort();
    let manifest: String = lines
        .iter()
        .map(|(n, f)| format!("{n}\t{f}\n"))
        .collect();
    let mpath = dir.join("manifest.txt");
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
}

/// Reads a checkpoint directory back into name → tensor, keyed and
/// ordered by name.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<BTreeMap<String, Tensor<T>>> {
    let mpath = dir.join("manifest.txt");
    let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut out = BTreeMap::new();
    for (ln, line) in manifest.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (name, file) = line.split_once('\t').ok_or_else(|| {
            Error::Data(format!(
                "{}:{}: manifest line has no tab separator",
                mpath.display(),
                ln + 1
            ))
        })?;
        if out
            .insert(name.to_string(), read_tten(&dir.join(file))?)
            .is_some()
        {
            return Err(Error::Data(format!(
                "{}: duplicate tensor name {name}",
                mpath.display()
            )));
        }
    }
    Ok(out)
}
