//! Embedding files.
//!
//! Two formats are accepted. Files ending in `.csv` or starting with `id,`
//! are read as CSV, everything else as binary:
//!
//! * binary: magic `TEMB`, then `count` and `dim` as little-endian `u32`,
//!   then `count × dim` little-endian `f32` values, row-major;
//! * CSV: header `id,e0,e1,...` and one row per embedding.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use transductive::FiniteDomain;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TEMB";
const HEADER_BYTES: u64 = 12;

pub fn load_embeddings(path: &Path) -> Result<FiniteDomain> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(|e| Error::io(path, e))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        || (!head.starts_with(MAGIC) && head.starts_with(b"id,"));
    let (dim, values) = if is_csv {
        read_csv(path, reader)?
    } else {
        read_binary(path, reader)?
    };
    FiniteDomain::from_embeddings(dim, values).map_err(Error::from)
}

fn read_binary<R: Read>(path: &Path, mut reader: R) -> Result<(usize, Vec<f32>)> {
    let binary = |offset: u64, message: &str| Error::Binary {
        path: path.to_path_buf(),
        offset,
        message: message.to_string(),
    };
    let mut header = [0u8; HEADER_BYTES as usize];
    let got = read_full(&mut reader, &mut header).map_err(|e| Error::io(path, e))?;
    if got < header.len() {
        return Err(binary(got as u64, "truncated header"));
    }
    if &header[..4] != MAGIC {
        return Err(binary(0, "bad magic"));
    }
    let count = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    if count == 0 || dim == 0 {
        return Err(binary(4, "count and dimension must be positive"));
    }
    let total = count
        .checked_mul(dim)
        .ok_or_else(|| binary(4, "count × dimension overflows"))?;
    let mut values = Vec::with_capacity(total);
    let mut chunk = vec![0u8; 1 << 16];
    let mut offset = HEADER_BYTES;
    while values.len() < total {
        let want = ((total - values.len()) * 4).min(chunk.len());
        let got = read_full(&mut reader, &mut chunk[..want]).map_err(|e| Error::io(path, e))?;
        if got < want {
            return Err(binary(offset + got as u64, "truncated data"));
        }
        for (k, bytes) in chunk[..want].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(bytes.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(binary(offset + 4 * k as u64, "non-finite value"));
            }
            values.push(v);
        }
        offset += want as u64;
    }
    let mut probe = [0u8; 1];
    if read_full(&mut reader, &mut probe).map_err(|e| Error::io(path, e))? != 0 {
        return Err(binary(offset, "trailing bytes after data"));
    }
    Ok((dim, values))
}

fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

fn read_csv<R: BufRead>(path: &Path, reader: R) -> Result<(usize, Vec<f32>)> {
    let text_err = |line: usize, message: String| Error::Text {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| text_err(1, "empty file".into()))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let columns: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if columns.first() != Some(&"id") || columns.len() < 2 {
        return Err(text_err(1, "header must be `id,e0,e1,...`".into()));
    }
    for (k, c) in columns[1..].iter().enumerate() {
        if *c != format!("e{k}") {
            return Err(text_err(1, format!("expected column `e{k}`, found `{c}`")));
        }
    }
    let dim = columns.len() - 1;
    let mut values = Vec::new();
    for (i, line) in lines {
        let number = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 1 {
            return Err(text_err(number, format!("expected {} fields, found {}", dim + 1, cells.len())));
        }
        for cell in &cells[1..] {
            let v: f32 = cell
                .trim()
                .parse()
                .map_err(|_| text_err(number, format!("not a number: `{cell}`")))?;
            if !v.is_finite() {
                return Err(text_err(number, format!("non-finite value `{cell}`")));
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(text_err(2, "no embeddings".into()));
    }
    Ok((dim, values))
}

/// Writes the binary format.
pub fn write_embeddings_binary(path: &Path, dim: usize, values: &[f32]) -> Result<()> {
    if dim == 0 || values.len() % dim != 0 {
        return Err(Error::Argument(format!("{} values do not form rows of {dim}", values.len())));
    }
    let count = u32::try_from(values.len() / dim).map_err(|_| Error::Argument("too many rows".into()))?;
    let dim32 = u32::try_from(dim).map_err(|_| Error::Argument("dimension too large".into()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    w.write_all(&dim32.to_le_bytes()).map_err(io)?;
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes the CSV format with ids `0..count`.
pub fn write_embeddings_csv(path: &Path, dim: usize, values: &[f32]) -> Result<()> {
    if dim == 0 || values.len() % dim != 0 {
        return Err(Error::Argument(format!("{} values do not form rows of {dim}", values.len())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header: Vec<String> = std::iter::once("id".to_string())
        .chain((0..dim).map(|k| format!("e{k}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (i, row) in values.chunks(dim).enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{i},{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "id,e0,e1\n0,1,0\n1,0,1\n").unwrap();
        let d = load_embeddings(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.is_embedding());
        assert_eq!(d.point(0), vec![1.0, 0.0]);
        assert_eq!(d.point(1), vec![0.0, 1.0]);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        let v = vec![0.1f32, -2.5, 3.25e-8, 1.0, f32::MAX, -0.0];
        write_embeddings_binary(&p, 2, &v).unwrap();
        let d = load_embeddings(&p).unwrap();
        assert_eq!(d.len(), 3);
        let raw = d.raw_f32().unwrap();
        assert!(raw.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let v = vec![0.1f32, -2.5, 3.25e-8, 1.0];
        write_embeddings_csv(&p, 2, &v).unwrap();
        let d = load_embeddings(&p).unwrap();
        assert_eq!(d.raw_f32().unwrap(), &v[..]);
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        write_embeddings_binary(&p, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        match load_embeddings(&p) {
            Err(Error::Binary { offset, .. }) => assert_eq!(offset, 12 + 13),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nan_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        write_embeddings_binary(&p, 2, &[1.0, 2.0, f32::NAN, 4.0]).unwrap();
        match load_embeddings(&p) {
            Err(Error::Binary { offset, .. }) => assert_eq!(offset, 12 + 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        std::fs::write(&p, b"TEMX\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_embeddings(&p), Err(Error::Binary { offset: 0, .. })));
    }

    #[test]
    fn ragged_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "id,e0,e1\n0,1,0\n1,0\n").unwrap();
        match load_embeddings(&p) {
            Err(Error::Text { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
