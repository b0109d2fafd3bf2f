use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const CONTAINER_VERSION: u32 = 1;

/// One named tensor on the wire: length-prefixed name, dtype code, rank,
/// u32 dims, little-endian raw values.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl TensorRecord {
    pub fn from_slice<T: Scalar>(name: impl Into<String>, dims: &[usize], data: &[T]) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        let mut bytes = Vec::with_capacity(std::mem::size_of_val(data));
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes_vec());
        }
        TensorRecord { name: name.into(), dtype: T::DTYPE, dims: dims.to_vec(), bytes }
    }

    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        Self::from_slice(name, t.dims(), t.data())
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Decodes the values; the element type must match the stored dtype.
    pub fn to_vec<T: Scalar>(&self) -> Result<Vec<T>> {
        if T::DTYPE != self.dtype {
            return Err(Error::contract(format!(
                "record {}: stored as {:?}, requested {:?}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        let w = self.dtype.size_bytes();
        if self.bytes.len() != self.numel() * w {
            return Err(Error::integrity(format!("record {}: truncated values", self.name)));
        }
        Ok(self.bytes.chunks_exact(w).map(T::from_le_slice).collect())
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        let name = self.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(self.dtype.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.bytes);
    }

    fn read_from(buf: &[u8], pos: &mut usize) -> Result<Self> {
        let name_len = read_u16(buf, pos)? as usize;
        let name = String::from_utf8(take(buf, pos, name_len)?.to_vec())
            .map_err(|_| Error::integrity("record name is not UTF-8"))?;
        let dtype = DType::from_code(take(buf, pos, 1)?[0])
            .ok_or_else(|| Error::integrity(format!("record {name}: unknown dtype code")))?;
        let rank = take(buf, pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(buf, pos)? as usize);
        }
        let n: usize = dims.iter().product();
        let bytes = take(buf, pos, n * dtype.size_bytes())?.to_vec();
        Ok(TensorRecord { name, dtype, dims, bytes })
    }
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    if *pos + n > buf.len() {
        return Err(Error::integrity("unexpected end of file"));
    }
    let s = &buf[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn read_u16(buf: &[u8], pos: &mut usize) -> Result<u16> {
    Ok(u16::from_le_bytes(take(buf, pos, 2)?.try_into().unwrap()))
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, pos, 4)?.try_into().unwrap()))
}

fn read_u64(buf: &[u8], pos: &mut usize) -> Result<u64> {
    Ok(u64::from_le_bytes(take(buf, pos, 8)?.try_into().unwrap()))
}

/// Binary container shared by checkpoints and segment caches:
/// magic, u32 version, u64 payload length, then the payload
/// (length-prefixed UTF-8 meta JSON, u32 record count, tensor records,
/// length-prefixed tail), then a CRC-32 of all preceding bytes.
pub fn write_container(
    path: &Path,
    magic: [u8; 4],
    meta_json: &str,
    records: &[TensorRecord],
    tail: &[u8],
) -> Result<()> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    payload.extend_from_slice(meta_json.as_bytes());
    payload.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        r.write_to(&mut payload);
    }
    payload.extend_from_slice(&(tail.len() as u32).to_le_bytes());
    payload.extend_from_slice(tail);

    let mut out = Vec::with_capacity(16 + payload.len() + 4);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_container(path: &Path, magic: [u8; 4]) -> Result<(String, Vec<TensorRecord>, Vec<u8>)> {
    let buf = std::fs::read(path)?;
    let mut pos = 0usize;
    let got_magic = take(&buf, &mut pos, 4)?;
    if got_magic != magic {
        return Err(Error::integrity(format!(
            "{}: bad magic {:?} (expected {:?})",
            path.display(),
            String::from_utf8_lossy(got_magic),
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(&buf, &mut pos)?;
    if version != CONTAINER_VERSION {
        return Err(Error::integrity(format!(
            "{}: unsupported version {version} (expected {CONTAINER_VERSION})",
            path.display()
        )));
    }
    let payload_len = read_u64(&buf, &mut pos)? as usize;
    if buf.len() != 16 + payload_len + 4 {
        return Err(Error::integrity(format!(
            "{}: file length {} does not match declared payload {payload_len}",
            path.display(),
            buf.len()
        )));
    }
    let crc_stored = u32::from_le_bytes(buf[16 + payload_len..].try_into().unwrap());
    let crc_actual = crc32fast::hash(&buf[..16 + payload_len]);
    if crc_stored != crc_actual {
        return Err(Error::integrity(format!(
            "{}: CRC mismatch (stored {crc_stored:08x}, computed {crc_actual:08x})",
            path.display()
        )));
    }

    let meta_len = read_u32(&buf, &mut pos)? as usize;
    let meta = String::from_utf8(take(&buf, &mut pos, meta_len)?.to_vec())
        .map_err(|_| Error::integrity("meta is not UTF-8"))?;
    let n_records = read_u32(&buf, &mut pos)? as usize;
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        records.push(TensorRecord::read_from(&buf, &mut pos)?);
    }
    let tail_len = read_u32(&buf, &mut pos)? as usize;
    let tail = take(&buf, &mut pos, tail_len)?.to_vec();
    if pos != 16 + payload_len {
        return Err(Error::integrity(format!("{}: trailing garbage in payload", path.display())));
    }
    Ok((meta, records, tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_and_corruption_detection() {
        let dir = std::env::temp_dir().join("vsegan_records_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.bin");
        let records = vec![
            TensorRecord::from_slice("a", &[2, 3], &[1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]),
            TensorRecord::from_slice("b", &[1], &[7.0f64]),
        ];
        write_container(&path, *b"TEST", "{\"k\":1}", &records, &[9, 9]).unwrap();
        let (meta, back, tail) = read_container(&path, *b"TEST").unwrap();
        assert_eq!(meta, "{\"k\":1}");
        assert_eq!(back, records);
        assert_eq!(tail, vec![9, 9]);
        assert_eq!(back[0].to_vec::<f32>().unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(back[0].to_vec::<f64>().is_err(), "dtype mismatch is rejected");

        // flip one payload byte: CRC must catch it
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        let err = read_container(&path, *b"TEST").unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");

        // truncation
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_container(&path, *b"TEST").unwrap_err(), Error::Integrity(_)));
        std::fs::remove_file(&path).ok();
    }
}
