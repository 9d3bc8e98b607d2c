//! Reader and writer for the subset of the NumPy `.npy` v1.0 format used as
//! the interchange container: C-order, one or two dimensions, little-endian
//! `f4`/`f8` payloads.
//!
//! Files are written exactly as `numpy.save` writes them: the header dict
//! `{'descr': '<f8', 'fortran_order': False, 'shape': (R, C), }` is padded
//! with spaces and terminated by `\n` so the payload starts on a 64-byte
//! boundary.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

/// Storage precision of the payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    fn descr(self) -> &'static str {
        match self {
            Precision::F32 => "<f4",
            Precision::F64 => "<f8",
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::validation(format!("unknown precision '{other}'"))),
        }
    }
}

/// Parsed header contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub precision: Precision,
    pub shape: Vec<usize>,
    /// Byte offset of the first payload byte.
    pub data_offset: usize,
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn save_matrix(matrix: &Matrix, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(matrix, precision)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes a complete `.npy` byte buffer. One-dimensional arrays of length
/// `n` come back as `1 x n` matrices.
pub fn decode(bytes: &[u8]) -> Result<Matrix> {
    let header = parse_header(bytes)?;
    let (rows, cols) = match header.shape.as_slice() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!("parse_header enforces 1-2 dims"),
    };
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| fmt_err(header.data_offset, "shape overflows"))?;
    let width = header.precision.width();
    let payload = &bytes[header.data_offset..];
    if payload.len() != count * width {
        return Err(fmt_err(
            header.data_offset,
            format!(
                "payload holds {} bytes, shape requires {}",
                payload.len(),
                count * width
            ),
        ));
    }
    let data: Vec<f64> = match header.precision {
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        Precision::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Matrix::from_vec(rows, cols, data)
}

/// Encodes a matrix as a two-dimensional `.npy` file.
pub fn encode(matrix: &Matrix, precision: Precision) -> Result<Vec<u8>> {
    if matrix.rows() == 0 || matrix.cols() == 0 {
        return Err(Error::validation(format!(
            "cannot store a matrix with an empty dimension ({}x{})",
            matrix.rows(),
            matrix.cols()
        )));
    }
    if !matrix.is_finite() {
        return Err(Error::validation("matrix contains non-finite values"));
    }
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}, {}), }}",
        precision.descr(),
        matrix.rows(),
        matrix.cols()
    );
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + dict.len() + matrix.as_slice().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    match precision {
        Precision::F32 => {
            for &v in matrix.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Precision::F64 => {
            for &v in matrix.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn fmt_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < MAGIC.len() {
        return Err(fmt_err(bytes.len(), "file shorter than the magic string"));
    }
    if let Some(i) = (0..MAGIC.len()).find(|&i| bytes[i] != MAGIC[i]) {
        return Err(fmt_err(i, "bad magic string"));
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(fmt_err(bytes.len(), "truncated preamble"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(Error::UnsupportedVersion { major, minor });
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let end = PREAMBLE_LEN + header_len;
    if bytes.len() < end {
        return Err(fmt_err(bytes.len(), "header extends past end of file"));
    }
    let text = &bytes[PREAMBLE_LEN..end];
    if let Some(i) = text.iter().position(|b| !b.is_ascii()) {
        return Err(fmt_err(PREAMBLE_LEN + i, "non-ASCII byte in header"));
    }

    let mut p = DictParser {
        src: text,
        pos: 0,
        base: PREAMBLE_LEN,
    };
    let fields = p.parse_dict()?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    for (key, value, at) in fields {
        match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr = Some(s),
            ("fortran_order", Value::Bool(b)) => fortran = Some(b),
            ("shape", Value::Tuple(t)) => shape = Some(t),
            ("descr" | "fortran_order" | "shape", _) => {
                return Err(fmt_err(at, format!("wrong value type for key '{key}'")))
            }
            (other, _) => return Err(fmt_err(at, format!("unexpected header key '{other}'"))),
        }
    }
    let descr = descr.ok_or_else(|| fmt_err(end, "header lacks 'descr'"))?;
    let fortran = fortran.ok_or_else(|| fmt_err(end, "header lacks 'fortran_order'"))?;
    let shape = shape.ok_or_else(|| fmt_err(end, "header lacks 'shape'"))?;

    let precision = match descr.as_str() {
        "<f4" => Precision::F32,
        "<f8" => Precision::F64,
        other => return Err(Error::UnsupportedLayout(format!("dtype '{other}'"))),
    };
    if fortran {
        return Err(Error::UnsupportedLayout("fortran_order: True".into()));
    }
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::UnsupportedLayout(format!(
            "{} dimensions (only 1 or 2 supported)",
            shape.len()
        )));
    }
    Ok(Header {
        precision,
        shape,
        data_offset: end,
    })
}

enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

/// Parser for the Python dict literal in an npy header.
struct DictParser<'a> {
    src: &'a [u8],
    pos: usize,
    base: usize,
}

impl DictParser<'_> {
    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        fmt_err(self.offset(), msg)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", c as char)))
        }
    }

    fn parse_dict(&mut self) -> Result<Vec<(String, Value, usize)>> {
        self.expect(b'{')?;
        let mut out = Vec::new();
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let at = self.offset();
            let key = self.parse_str()?;
            self.expect(b':')?;
            let value = self.parse_value()?;
            out.push((key, value, at));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
        // Only padding may follow the closing brace.
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(self.err("trailing characters after header dict"));
        }
        Ok(out)
    }

    fn parse_str(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected string literal")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.src.len() {
            return Err(self.err("unterminated string literal"));
        }
        let s = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn parse_value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'' | b'"') => Ok(Value::Str(self.parse_str()?)),
            Some(b'(') => self.parse_tuple(),
            Some(b'T' | b'F') => {
                let rest = &self.src[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Value::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Value::Bool(false))
                } else {
                    Err(self.err("expected True or False"))
                }
            }
            _ => Err(self.err("unexpected value")),
        }
    }

    fn parse_tuple(&mut self) -> Result<Value> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            match self.peek() {
                Some(b')') => {
                    self.pos += 1;
                    return Ok(Value::Tuple(dims));
                }
                Some(c) if c.is_ascii_digit() => {
                    let start = self.pos;
                    while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                    let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    let n = digits
                        .parse::<usize>()
                        .map_err(|_| fmt_err(self.base + start, "dimension too large"))?;
                    // numpy may write Python 2 long suffixes.
                    if self.src.get(self.pos) == Some(&b'L') {
                        self.pos += 1;
                    }
                    dims.push(n);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return Err(self.err("expected ',' or ')' in shape")),
                    }
                }
                _ => return Err(self.err("expected dimension in shape")),
            }
        }
    }
}
