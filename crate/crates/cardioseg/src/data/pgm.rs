//! Binary PGM (P5) reading and writing. 16-bit images use big-endian sample
//! order per the PGM standard; maxval <= 255 images use one byte per sample.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::DataError;

pub fn read_pgm(bytes: &[u8], source: &str) -> Result<(usize, usize, Vec<u16>), DataError> {
    let bad = |msg: String| DataError::Pgm {
        file: source.to_string(),
        msg,
    };
    let mut pos = 0usize;

    let token = |pos: &mut usize| -> Result<String, DataError> {
        // Skip whitespace and # comments.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(bad("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    if token(&mut pos)? != "P5" {
        return Err(bad("not a binary PGM (missing P5)".into()));
    }
    let w: usize = token(&mut pos)?.parse().map_err(|_| bad("bad width".into()))?;
    let h: usize = token(&mut pos)?.parse().map_err(|_| bad("bad height".into()))?;
    let maxval: u32 = token(&mut pos)?.parse().map_err(|_| bad("bad maxval".into()))?;
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;

    let count = w * h;
    let pixels = if maxval < 256 {
        if bytes.len() < pos + count {
            return Err(bad("raster shorter than header promises".into()));
        }
        bytes[pos..pos + count].iter().map(|&b| b as u16).collect()
    } else {
        if bytes.len() < pos + 2 * count {
            return Err(bad("raster shorter than header promises".into()));
        }
        bytes[pos..pos + 2 * count]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok((h, w, pixels))
}

pub fn read_pgm_file(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>), DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::MissingFile {
        path: path.display().to_string(),
        source: e,
    })?;
    read_pgm(&bytes, &path.display().to_string())
}

pub fn write_pgm16(path: impl AsRef<Path>, h: usize, w: usize, pixels: &[u16]) -> std::io::Result<()> {
    debug_assert_eq!(pixels.len(), h * w);
    let mut out = Vec::with_capacity(32 + pixels.len() * 2);
    write!(out, "P5\n{w} {h}\n65535\n")?;
    for &p in pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    fs::write(path, out)
}

pub fn write_pgm8(path: impl AsRef<Path>, h: usize, w: usize, maxval: u8, pixels: &[u8]) -> std::io::Result<()> {
    debug_assert_eq!(pixels.len(), h * w);
    debug_assert!(pixels.iter().all(|&p| p <= maxval));
    let mut out = Vec::with_capacity(32 + pixels.len());
    write!(out, "P5\n{w} {h}\n{}\n", maxval.max(1))?;
    out.extend_from_slice(pixels);
    fs::write(path, out)
}
