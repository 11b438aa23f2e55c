//! Image and vector file formats.
//!
//! * Plain (ASCII) PGM, 8- or 16-bit, for display-range pixel images.
//!   A `#` comment line right after the magic carries run metadata.
//! * Raw little-endian `f64` buffers for exact coefficient/pixel data;
//!   shape and domain metadata travel in a JSON sidecar written by the
//!   caller (the CLI) next to the `.f64` file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes a plain PGM. Values are clamped to `[0, maxval]` and rounded.
/// `maxval` must be 255 or 65535. `comment` (may be empty) is emitted as a
/// single `#` line; newlines in it are replaced by spaces.
pub fn write_pgm(
    path: &Path,
    data: &[f64],
    height: usize,
    width: usize,
    maxval: u16,
    comment: &str,
) -> Result<()> {
    if data.len() != height * width {
        return Err(Error::ShapeMismatch {
            context: "write_pgm",
            expected: format!("{} pixels", height * width),
            actual: format!("{}", data.len()),
        });
    }
    if maxval != 255 && maxval != 65535 {
        return Err(Error::InvalidParam {
            name: "maxval",
            reason: format!("plain PGM supports 255 or 65535, got {maxval}"),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P2")?;
    if !comment.is_empty() {
        writeln!(w, "# {}", comment.replace('\n', " "))?;
    }
    writeln!(w, "{width} {height}")?;
    writeln!(w, "{maxval}")?;
    for row in data.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| format!("{}", (v.round().max(0.0)).min(maxval as f64) as u32))
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a plain (P2) or binary (P5) PGM into f64 pixels.
/// Returns `(data, height, width, maxval)`.
pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, usize, usize, u16)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = String::new();
    reader.read_line(&mut magic)?;
    let magic = magic.trim();
    if magic != "P2" && magic != "P5" {
        return Err(Error::Config(format!("not a PGM file (magic `{magic}`)")));
    }

    // Header tokens may be spread over lines, with # comments in between.
    let mut tokens: Vec<u64> = Vec::new();
    let mut line = String::new();
    while tokens.len() < 3 {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Config("truncated PGM header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        for tok in content.split_whitespace() {
            tokens.push(
                tok.parse::<u64>()
                    .map_err(|_| Error::Config(format!("bad PGM header token `{tok}`")))?,
            );
        }
    }
    let (width, height, maxval) = (tokens[0] as usize, tokens[1] as usize, tokens[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Config(format!("unsupported PGM maxval {maxval}")));
    }

    let n = width * height;
    let data = if magic == "P2" {
        let mut vals = Vec::with_capacity(n);
        let mut body = String::new();
        reader.read_to_string(&mut body)?;
        for raw_line in body.lines() {
            let content = raw_line.split('#').next().unwrap_or("");
            for tok in content.split_whitespace() {
                vals.push(
                    tok.parse::<u64>()
                        .map_err(|_| Error::Config(format!("bad PGM sample `{tok}`")))? as f64,
                );
            }
        }
        vals
    } else {
        let bytes_per = if maxval > 255 { 2 } else { 1 };
        let mut buf = vec![0u8; n * bytes_per];
        reader.read_exact(&mut buf)?;
        if bytes_per == 1 {
            buf.iter().map(|&b| b as f64).collect()
        } else {
            buf.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
                .collect()
        }
    };
    if data.len() != n {
        return Err(Error::Config(format!(
            "PGM body has {} samples, header promises {n}",
            data.len()
        )));
    }
    Ok((data, height, width, maxval as u16))
}

/// Writes a raw little-endian f64 buffer.
pub fn write_raw_f64(path: &Path, data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a raw little-endian f64 buffer.
pub fn read_raw_f64(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Config(format!(
            "raw f64 file length {} not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("sapg_io_test_{}_{name}", std::process::id()));
        p
    }

    #[test]
    fn pgm_round_trip_preserves_in_range_data() {
        let path = tmp("roundtrip.pgm");
        let data: Vec<f64> = (0..12).map(|i| (i * 20) as f64).collect();
        write_pgm(&path, &data, 3, 4, 255, "config_hash=deadbeef seed=7").unwrap();
        let (back, h, w, maxval) = read_pgm(&path).unwrap();
        assert_eq!((h, w, maxval), (3, 4, 255));
        assert_eq!(back, data);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn pgm_write_clamps_out_of_range() {
        let path = tmp("clamp.pgm");
        write_pgm(&path, &[-5.0, 300.0], 1, 2, 255, "").unwrap();
        let (back, _, _, _) = read_pgm(&path).unwrap();
        assert_eq!(back, vec![0.0, 255.0]);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn raw_f64_round_trip_is_exact() {
        let path = tmp("buf.f64");
        let data = vec![std::f64::consts::PI, -0.0, 1e-300, 42.5];
        write_raw_f64(&path, &data).unwrap();
        let back = read_raw_f64(&path).unwrap();
        assert_eq!(back.len(), data.len());
        for (a, b) in back.iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn pgm_rejects_garbage() {
        let path = tmp("garbage.pgm");
        std::fs::write(&path, "hello world").unwrap();
        assert!(read_pgm(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
