use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Writes a binary (P5) PGM with maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    if bytes.len() != width * height {
        return Err(Error::contract(format!(
            "pgm: {width}x{height} needs {} bytes, got {}",
            width * height,
            bytes.len()
        )));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(bytes)?;
    Ok(())
}

/// Reads a binary (P5) PGM, accepting comment lines and maxval <= 255.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let mut pos = 0usize;

    let mut token = |raw: &[u8]| -> Result<String> {
        // skip whitespace and comments
        loop {
            while pos < raw.len() && raw[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < raw.len() && raw[pos] == b'#' {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::contract(format!("{}: truncated pgm header", path.display())));
        }
        Ok(String::from_utf8_lossy(&raw[start..pos]).into_owned())
    };

    let magic = token(&raw)?;
    if magic != "P5" {
        return Err(Error::contract(format!("{}: not a binary PGM (magic {magic})", path.display())));
    }
    let width: usize = token(&raw)?.parse().map_err(|_| Error::contract("pgm: bad width"))?;
    let height: usize = token(&raw)?.parse().map_err(|_| Error::contract("pgm: bad height"))?;
    let maxval: usize = token(&raw)?.parse().map_err(|_| Error::contract("pgm: bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::contract(format!("{}: unsupported maxval {maxval}", path.display())));
    }
    pos += 1; // single whitespace after maxval
    if raw.len() < pos + width * height {
        return Err(Error::contract(format!("{}: truncated pgm data", path.display())));
    }
    Ok((width, height, raw[pos..pos + width * height].to_vec()))
}

/// [0,1] scalars -> PGM bytes (round to 0..255).
pub fn frame_to_bytes<T: Scalar>(frame: &[T]) -> Vec<u8> {
    frame.iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// PGM bytes -> [0,1] scalars.
pub fn bytes_to_frame<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes.iter().map(|&b| T::cast(b as f64 / 255.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = std::env::temp_dir().join("vsegan_pgm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.pgm");
        let bytes: Vec<u8> = (0..80 * 80).map(|i| (i % 256) as u8).collect();
        write_pgm(&path, 80, 80, &bytes).unwrap();
        let (w, h, back) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (80, 80));
        assert_eq!(back, bytes);
        std::fs::remove_file(&path).ok();
    }
}
