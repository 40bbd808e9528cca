//! On-disk layout.
//!
//! ```text
//! offset 0  "RPKG"            magic
//!        4  u16 LE            format version
//!        6  u16 LE            reserved, zero
//!        8  u32 LE            vector dimension
//!       12  u32 LE            CRC-32 of bytes 0..12
//!       16  frame*
//! frame     u32 LE len | u32 LE CRC-32(payload) | payload (JSON array of mutations)
//! ```
//!
//! A frame is one committed transaction. A torn final frame (short read or
//! checksum failure with nothing after it) is an uncommitted write and is cut
//! off on open; a bad frame followed by more data is corruption.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::state::Mutation;
use super::StoreError;

pub const MAGIC: &[u8; 4] = b"RPKG";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
const MAX_FRAME: usize = 1 << 30;

pub fn encode_header(dimension: u32) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(MAGIC);
    h[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[8..12].copy_from_slice(&dimension.to_le_bytes());
    let crc = crc32fast::hash(&h[..12]);
    h[12..16].copy_from_slice(&crc.to_le_bytes());
    h
}

/// Returns the vector dimension recorded in a valid header.
pub fn decode_header(bytes: &[u8]) -> Result<u32, StoreError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(StoreError::Corrupt("missing RPKG header".into()));
    }
    let crc = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
    if crc != crc32fast::hash(&bytes[..12]) {
        return Err(StoreError::Corrupt("header checksum mismatch".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch { found: version, supported: FORMAT_VERSION });
    }
    let dimension = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if dimension == 0 {
        return Err(StoreError::Corrupt("zero vector dimension".into()));
    }
    Ok(dimension)
}

pub fn encode_frame(mutations: &[Mutation]) -> Result<Vec<u8>, StoreError> {
    let payload = serde_json::to_vec(mutations).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(payload.len() + 8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parsed log contents.
pub struct Decoded {
    pub dimension: u32,
    pub frames: Vec<Vec<Mutation>>,
    /// Byte length of the valid prefix; anything after it is a torn write.
    pub valid_len: usize,
}

/// Decodes a whole store image. Never panics on arbitrary input.
pub fn decode(bytes: &[u8]) -> Result<Decoded, StoreError> {
    let dimension = decode_header(bytes)?;
    let mut pos = HEADER_LEN;
    let mut frames = Vec::new();
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < 8 {
            break;
        }
        let len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(rest[4..8].try_into().expect("4 bytes"));
        if len > MAX_FRAME || rest.len() < 8 + len {
            break;
        }
        let payload = &rest[8..8 + len];
        let trailing = rest.len() - 8 - len;
        if crc32fast::hash(payload) != crc {
            if trailing == 0 {
                break;
            }
            return Err(StoreError::Corrupt(format!("frame checksum mismatch at offset {pos}")));
        }
        let muts: Vec<Mutation> = serde_json::from_slice(payload)
            .map_err(|e| StoreError::Corrupt(format!("frame at offset {pos}: {e}")))?;
        frames.push(muts);
        pos += 8 + len;
    }
    Ok(Decoded { dimension, frames, valid_len: pos })
}

/// Append handle over the store file.
pub struct LogFile {
    path: PathBuf,
    file: File,
}

impl LogFile {
    pub fn create(path: &Path, dimension: u32, snapshot: &[Mutation]) -> Result<Self, StoreError> {
        write_image(path, dimension, snapshot)?;
        let file = OpenOptions::new().read(true).append(true).open(path)?;
        Ok(LogFile { path: path.to_path_buf(), file })
    }

    /// Opens an existing file and returns it with its decoded contents,
    /// trimming any torn tail.
    pub fn open(path: &Path) -> Result<(Self, Decoded), StoreError> {
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let decoded = decode(&bytes)?;
        if decoded.valid_len < bytes.len() {
            tracing::warn!(
                path = %path.display(),
                dropped = bytes.len() - decoded.valid_len,
                "discarding uncommitted tail"
            );
            file.set_len(decoded.valid_len as u64)?;
            file.sync_all()?;
        }
        drop(file);
        let file = OpenOptions::new().read(true).append(true).open(path)?;
        Ok((LogFile { path: path.to_path_buf(), file }, decoded))
    }

    /// Appends one committed transaction and waits for it to reach disk.
    pub fn append(&mut self, frame: &[u8]) -> Result<(), StoreError> {
        self.file.write_all(frame)?;
        self.file.sync_data()?;
        Ok(())
    }

    /// Replaces the file with a single snapshot frame (temp file, fsync,
    /// rename), so removed rows no longer exist anywhere in the file.
    pub fn compact(&mut self, dimension: u32, snapshot: &[Mutation]) -> Result<(), StoreError> {
        write_image(&self.path, dimension, snapshot)?;
        self.file = OpenOptions::new().read(true).append(true).open(&self.path)?;
        Ok(())
    }

    pub fn len(&mut self) -> io::Result<u64> {
        self.file.seek(SeekFrom::End(0))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn write_image(path: &Path, dimension: u32, snapshot: &[Mutation]) -> Result<(), StoreError> {
    let tmp = path.with_extension("rpkg-tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&encode_header(dimension))?;
        f.write_all(&encode_frame(snapshot)?)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip_and_rejections() {
        let h = encode_header(256);
        assert_eq!(decode_header(&h).unwrap(), 256);
        assert!(matches!(decode_header(b"nope"), Err(StoreError::Corrupt(_))));
        let mut bad = h;
        bad[9] ^= 1;
        assert!(matches!(decode_header(&bad), Err(StoreError::Corrupt(_))));
        let mut v2 = h;
        v2[4] = 2;
        let crc = crc32fast::hash(&v2[..12]);
        v2[12..16].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_header(&v2), Err(StoreError::VersionMismatch { found: 2, .. })));
    }

    #[test]
    fn torn_tail_is_dropped_but_mid_corruption_is_not() {
        let mut img = encode_header(8).to_vec();
        let f1 = encode_frame(&[Mutation::Noop]).unwrap();
        let f2 = encode_frame(&[Mutation::Noop, Mutation::Noop]).unwrap();
        img.extend_from_slice(&f1);
        let good_len = img.len();
        img.extend_from_slice(&f2[..f2.len() - 3]);
        let d = decode(&img).unwrap();
        assert_eq!(d.frames.len(), 1);
        assert_eq!(d.valid_len, good_len);

        let mut img2 = encode_header(8).to_vec();
        let mut broken = f1.clone();
        let last = broken.len() - 1;
        broken[last] ^= 0xff;
        img2.extend_from_slice(&broken);
        img2.extend_from_slice(&f2);
        assert!(matches!(decode(&img2), Err(StoreError::Corrupt(_))));
    }
}
