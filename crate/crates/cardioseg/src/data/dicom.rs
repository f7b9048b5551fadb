//! Minimal DICOM reader for anonymized short-axis MRI.
//!
//! Supports Explicit and Implicit VR Little Endian (with or without the
//! 128-byte preamble + `DICM` marker; headerless files are detected by
//! probing the first element). Compressed/encapsulated transfer syntaxes are
//! rejected. Only the tags this pipeline needs are decoded; everything else
//! is skipped, including sequences of undefined length.

use super::DataError;

pub const TS_IMPLICIT_LE: &str = "1.2.840.10008.1.2";
pub const TS_EXPLICIT_LE: &str = "1.2.840.10008.1.2.1";

const TAG_ROWS: (u16, u16) = (0x0028, 0x0010);
const TAG_COLS: (u16, u16) = (0x0028, 0x0011);
const TAG_BITS_ALLOCATED: (u16, u16) = (0x0028, 0x0100);
const TAG_PIXEL_REPRESENTATION: (u16, u16) = (0x0028, 0x0103);
const TAG_PIXEL_SPACING: (u16, u16) = (0x0028, 0x0030);
const TAG_PIXEL_DATA: (u16, u16) = (0x7FE0, 0x0010);
const TAG_TRANSFER_SYNTAX: (u16, u16) = (0x0002, 0x0010);

const UNDEFINED_LEN: u32 = 0xFFFF_FFFF;

#[derive(Clone, Debug)]
pub struct DicomImage {
    pub rows: usize,
    pub cols: usize,
    /// (row_mm, col_mm) from PixelSpacing "A\B".
    pub spacing: (f64, f64),
    pub bits_allocated: u16,
    pub signed: bool,
    /// Decoded samples in row-major order, sign-extended when
    /// PixelRepresentation is 1.
    pub pixels: Vec<i32>,
    pub source: String,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> DataError {
        DataError::Dicom {
            file: self.source.to_string(),
            msg: msg.into(),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.remaining() < n {
            return Err(self.err(format!("truncated: wanted {n} bytes at offset {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, DataError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn is_explicit_vr(code: &[u8]) -> bool {
    matches!(
        code,
        b"AE" | b"AS" | b"AT" | b"CS" | b"DA" | b"DS" | b"DT" | b"FD" | b"FL" | b"IS" | b"LO"
            | b"LT" | b"OB" | b"OD" | b"OF" | b"OL" | b"OW" | b"PN" | b"SH" | b"SL" | b"SQ"
            | b"SS" | b"ST" | b"TM" | b"UC" | b"UI" | b"UL" | b"UN" | b"UR" | b"US" | b"UT"
    )
}

struct ElementHeader {
    group: u16,
    element: u16,
    length: u32,
}

fn read_header(cur: &mut Cursor, explicit: bool) -> Result<ElementHeader, DataError> {
    let group = cur.u16()?;
    let element = cur.u16()?;
    // Item and delimiter tags never carry a VR, in either syntax.
    if group == 0xFFFE {
        let length = cur.u32()?;
        return Ok(ElementHeader {
            group,
            element,
            length,
        });
    }
    if explicit {
        let vr_bytes = cur.take(2)?;
        let vr = [vr_bytes[0], vr_bytes[1]];
        if !is_explicit_vr(&vr) {
            return Err(cur.err(format!(
                "invalid VR {:?} at offset {}",
                String::from_utf8_lossy(&vr),
                cur.pos - 2
            )));
        }
        let length = match &vr {
            b"OB" | b"OW" | b"OF" | b"OD" | b"OL" | b"SQ" | b"UT" | b"UC" | b"UR" | b"UN" => {
                cur.take(2)?; // reserved
                cur.u32()?
            }
            _ => cur.u16()? as u32,
        };
        Ok(ElementHeader {
            group,
            element,
            length,
        })
    } else {
        let length = cur.u32()?;
        Ok(ElementHeader {
            group,
            element,
            length,
        })
    }
}

/// Skips a sequence (or pixel-data item list) of undefined length by walking
/// items until the sequence delimitation item.
fn skip_undefined_sequence(cur: &mut Cursor, explicit: bool) -> Result<(), DataError> {
    loop {
        let h = read_header(cur, explicit)?;
        match (h.group, h.element) {
            (0xFFFE, 0xE0DD) => return Ok(()),
            (0xFFFE, 0xE000) => {
                if h.length == UNDEFINED_LEN {
                    skip_undefined_item(cur, explicit)?;
                } else {
                    cur.take(h.length as usize)?;
                }
            }
            _ => return Err(cur.err("malformed sequence: expected item tag")),
        }
    }
}

/// Skips dataset elements inside an undefined-length item until the item
/// delimitation tag.
fn skip_undefined_item(cur: &mut Cursor, explicit: bool) -> Result<(), DataError> {
    loop {
        let h = read_header(cur, explicit)?;
        if (h.group, h.element) == (0xFFFE, 0xE00D) {
            return Ok(());
        }
        skip_value(cur, &h, explicit)?;
    }
}

fn skip_value(cur: &mut Cursor, h: &ElementHeader, explicit: bool) -> Result<(), DataError> {
    if h.length == UNDEFINED_LEN {
        skip_undefined_sequence(cur, explicit)
    } else {
        cur.take(h.length as usize).map(|_| ())
    }
}

/// Reads the file meta group (always Explicit VR LE) and returns the
/// transfer syntax UID of the main dataset.
fn read_meta(cur: &mut Cursor) -> Result<String, DataError> {
    let mut syntax: Option<String> = None;
    loop {
        if cur.remaining() < 8 {
            break;
        }
        let peek_group = u16::from_le_bytes([cur.bytes[cur.pos], cur.bytes[cur.pos + 1]]);
        if peek_group != 0x0002 {
            break;
        }
        let h = read_header(cur, true)?;
        if (h.group, h.element) == TAG_TRANSFER_SYNTAX {
            let raw = cur.take(h.length as usize)?;
            syntax = Some(
                String::from_utf8_lossy(raw)
                    .trim_end_matches(['\0', ' '])
                    .to_string(),
            );
        } else {
            skip_value(cur, &h, true)?;
        }
    }
    syntax.ok_or_else(|| cur.err("file meta lacks TransferSyntaxUID (0002,0010)"))
}

fn parse_us(cur: &mut Cursor, h: &ElementHeader, what: &str) -> Result<u16, DataError> {
    if h.length != 2 {
        return Err(cur.err(format!("{what} must be a 2-byte US, length {}", h.length)));
    }
    let b = cur.take(2)?;
    Ok(u16::from_le_bytes([b[0], b[1]]))
}

fn parse_spacing(cur: &mut Cursor, h: &ElementHeader, source: &str) -> Result<(f64, f64), DataError> {
    let raw = cur.take(h.length as usize)?;
    let text = String::from_utf8_lossy(raw);
    let text = text.trim_end_matches(['\0', ' ']);
    let mut parts = text.split('\\');
    let bad = || DataError::Dicom {
        file: source.to_string(),
        msg: format!("PixelSpacing is not a decimal pair: {text:?}"),
    };
    let row_mm: f64 = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let col_mm: f64 = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    if row_mm <= 0.0 || col_mm <= 0.0 {
        return Err(bad());
    }
    Ok((row_mm, col_mm))
}

fn parse_dataset(mut cur: Cursor, explicit: bool, source: &str) -> Result<DicomImage, DataError> {
    let mut rows: Option<u16> = None;
    let mut cols: Option<u16> = None;
    let mut bits: Option<u16> = None;
    let mut signed = false;
    let mut spacing: Option<(f64, f64)> = None;
    let mut payload: Option<&[u8]> = None;

    while cur.remaining() >= 8 {
        let h = read_header(&mut cur, explicit)?;
        match (h.group, h.element) {
            TAG_ROWS => rows = Some(parse_us(&mut cur, &h, "Rows")?),
            TAG_COLS => cols = Some(parse_us(&mut cur, &h, "Columns")?),
            TAG_BITS_ALLOCATED => bits = Some(parse_us(&mut cur, &h, "BitsAllocated")?),
            TAG_PIXEL_REPRESENTATION => {
                signed = parse_us(&mut cur, &h, "PixelRepresentation")? == 1
            }
            TAG_PIXEL_SPACING => spacing = Some(parse_spacing(&mut cur, &h, source)?),
            TAG_PIXEL_DATA => {
                if h.length == UNDEFINED_LEN {
                    // Encapsulated pixel data only occurs under compressed
                    // transfer syntaxes.
                    return Err(DataError::UnsupportedTransferSyntax {
                        file: source.to_string(),
                        uid: "encapsulated pixel data".to_string(),
                    });
                }
                payload = Some(cur.take(h.length as usize)?);
            }
            _ => skip_value(&mut cur, &h, explicit)?,
        }
    }

    let missing = |tag: &str| DataError::MissingTag {
        file: source.to_string(),
        tag: tag.to_string(),
    };
    let rows = rows.ok_or_else(|| missing("Rows (0028,0010)"))? as usize;
    let cols = cols.ok_or_else(|| missing("Columns (0028,0011)"))? as usize;
    let bits = bits.ok_or_else(|| missing("BitsAllocated (0028,0100)"))?;
    let spacing = spacing.ok_or_else(|| missing("PixelSpacing (0028,0030)"))?;
    let payload = payload.ok_or_else(|| missing("PixelData (7FE0,0010)"))?;

    let pixels: Vec<i32> = match bits {
        16 => payload
            .chunks_exact(2)
            .map(|c| {
                let v = u16::from_le_bytes([c[0], c[1]]);
                if signed {
                    v as i16 as i32
                } else {
                    v as i32
                }
            })
            .collect(),
        8 => payload
            .iter()
            .map(|&b| if signed { b as i8 as i32 } else { b as i32 })
            .collect(),
        other => {
            return Err(DataError::Dicom {
                file: source.to_string(),
                msg: format!("unsupported BitsAllocated {other}"),
            })
        }
    };
    if pixels.len() != rows * cols {
        return Err(DataError::PayloadMismatch {
            file: source.to_string(),
            expected: rows * cols,
            found: pixels.len(),
        });
    }

    Ok(DicomImage {
        rows,
        cols,
        spacing,
        bits_allocated: bits,
        signed,
        pixels,
        source: source.to_string(),
    })
}

pub fn parse_dicom(bytes: &[u8], source: &str) -> Result<DicomImage, DataError> {
    if bytes.len() >= 132 && &bytes[128..132] == b"DICM" {
        let mut cur = Cursor {
            bytes,
            pos: 132,
            source,
        };
        let syntax = read_meta(&mut cur)?;
        return match syntax.as_str() {
            TS_EXPLICIT_LE => parse_dataset(cur, true, source),
            TS_IMPLICIT_LE => parse_dataset(cur, false, source),
            other => Err(DataError::UnsupportedTransferSyntax {
                file: source.to_string(),
                uid: other.to_string(),
            }),
        };
    }

    // Headerless: probe the first element. A plausible dataset begins with a
    // known low group number; explicit VR shows two VR letters at offset 4.
    if bytes.len() < 8 {
        return Err(DataError::NotDicom {
            file: source.to_string(),
        });
    }
    let group = u16::from_le_bytes([bytes[0], bytes[1]]);
    if !matches!(group, 0x0008 | 0x0010 | 0x0018 | 0x0020 | 0x0028 | 0x7FE0) {
        return Err(DataError::NotDicom {
            file: source.to_string(),
        });
    }
    let explicit = is_explicit_vr(&bytes[4..6]);
    parse_dataset(
        Cursor {
            bytes,
            pos: 0,
            source,
        },
        explicit,
        source,
    )
}
