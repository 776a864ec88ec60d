//! Raw (P5) PGM encoding for heatmap images, plus a strict reader used to
//! round-trip what we emit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fileio::write_atomic;

/// Encode an 8-bit grayscale image as binary PGM (magic P5, maxval 255).
/// The comment must be a single line; it lands after the magic.
pub fn encode_pgm(width: u32, height: u32, pixels: &[u8], comment: &str) -> Result<Vec<u8>> {
    if (width as usize) * (height as usize) != pixels.len() {
        return Err(Error::dimension(
            "pgm pixel count",
            &[width as usize, height as usize],
            &[pixels.len()],
        ));
    }
    if comment.contains('\n') {
        return Err(Error::Config("pgm comment must be a single line".into()));
    }
    let mut out = Vec::with_capacity(pixels.len() + 64);
    out.extend_from_slice(b"P5\n");
    if !comment.is_empty() {
        out.extend_from_slice(format!("# {comment}\n").as_bytes());
    }
    out.extend_from_slice(format!("{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write_pgm(path: &Path, width: u32, height: u32, pixels: &[u8], comment: &str) -> Result<()> {
    write_atomic(path, &encode_pgm(width, height, pixels, comment)?)
}

/// Parse a binary PGM: magic, optional comments, width/height, maxval,
/// then raw bytes. Rejects anything malformed or truncated.
pub fn read_pgm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let mut pos = 0usize;
    let fail = |msg: &str| Error::Parse {
        line: 0,
        msg: format!("pgm: {msg}"),
    };
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(fail("missing P5 magic"));
    }
    pos += 2;
    let mut fields = Vec::new();
    while fields.len() < 3 {
        // skip whitespace and comment lines
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(fail("expected numeric header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are utf8");
        fields.push(text.parse::<u32>().map_err(|_| fail("header field overflow"))?);
    }
    // single whitespace byte separates maxval from raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail("missing raster separator"));
    }
    pos += 1;
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(fail("maxval must be 255"));
    }
    let expected = width as usize * height as usize;
    if bytes.len() - pos != expected {
        return Err(fail("raster size mismatch"));
    }
    Ok((width, height, bytes[pos..].to_vec()))
}
