//! The artifact container: a gzip-compressed tar archive.
//!
//! Both layers are written byte-deterministically so that reproducibility
//! is a property of the inputs alone:
//!
//! - tar: the ustar layout, one 512-byte header per member (name, mode,
//!   size, mtime, checksum), content zero-padded to the block size, two
//!   zero blocks at the end. Owner ids are zero, no extensions.
//! - gzip: the RFC 1952 member framing. Every header field is fixed
//!   (deflate, no flags, XFL 0, OS 255) except the four little-endian
//!   MTIME bytes at offsets 4..8 — the one header field that can leak a
//!   build's wall-clock time into the artifact.
//!
//! The reader side is tolerant enough to open archives produced by common
//! external tools (it skips optional gzip header fields and accepts either
//! ustar magic variant) and verifies CRC32, length, and tar checksums.

use thiserror::Error;

pub const TAR_BLOCK: usize = 512;

/// How far a reader will inflate a gzip payload (decompression-bomb guard,
/// shared with the diff engine's per-node bound).
pub const MAX_DECODED_SIZE: usize = 64 * 1024 * 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArchiveError {
    #[error("not a gzip stream")]
    NotGzip,
    #[error("not a tar archive")]
    NotTar,
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("decoded size exceeds the {MAX_DECODED_SIZE}-byte bound")]
    TooLarge,
    #[error("invalid member: {0}")]
    InvalidMember(String),
}

fn corrupt(msg: impl Into<String>) -> ArchiveError {
    ArchiveError::Corrupt(msg.into())
}

// ---------------------------------------------------------------------------
// tar

/// One archive member. `mtime` is seconds since the epoch (non-negative),
/// `mode` the permission bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TarMember {
    pub name: String,
    pub mode: u32,
    pub mtime: i64,
    pub content: Vec<u8>,
}

impl TarMember {
    pub fn regular(name: &str, content: impl Into<Vec<u8>>) -> TarMember {
        TarMember {
            name: name.to_string(),
            mode: 0o644,
            mtime: 0,
            content: content.into(),
        }
    }
}

fn write_octal(field: &mut [u8], value: u64) {
    // Zero-padded octal, NUL-terminated, as the ustar format prescribes.
    let digits = field.len() - 1;
    let s = format!("{value:0width$o}", width = digits);
    field[..digits].copy_from_slice(s.as_bytes());
    field[digits] = 0;
}

fn read_octal(field: &[u8]) -> Result<u64, ArchiveError> {
    let text: Vec<u8> = field
        .iter()
        .copied()
        .take_while(|b| *b != 0)
        .filter(|b| *b != b' ')
        .collect();
    if text.is_empty() {
        return Ok(0);
    }
    let s = std::str::from_utf8(&text).map_err(|_| corrupt("non-ASCII numeric field"))?;
    u64::from_str_radix(s, 8).map_err(|_| corrupt(format!("bad octal field {s:?}")))
}

fn header_checksum(header: &[u8; TAR_BLOCK]) -> u64 {
    let mut sum: u64 = 0;
    for (i, b) in header.iter().enumerate() {
        // The checksum field itself counts as spaces.
        sum += if (148..156).contains(&i) { 32 } else { *b as u64 };
    }
    sum
}

/// Serialize members into a tar archive, in the given order.
pub fn write_tar(members: &[TarMember]) -> Result<Vec<u8>, ArchiveError> {
    let mut out = Vec::new();
    for m in members {
        if m.name.is_empty() || m.name.len() > 100 {
            return Err(ArchiveError::InvalidMember(format!(
                "member name must be 1..=100 bytes, got {:?}",
                m.name
            )));
        }
        if m.name.starts_with('/') {
            return Err(ArchiveError::InvalidMember(format!(
                "member name must be relative, got {:?}",
                m.name
            )));
        }
        if m.mtime < 0 {
            return Err(ArchiveError::InvalidMember("negative mtime".into()));
        }
        // 11 octal digits is the largest value the header fields hold.
        const MAX_OCTAL: u64 = 0o77777777777;
        if m.mtime as u64 > MAX_OCTAL || m.content.len() as u64 > MAX_OCTAL {
            return Err(ArchiveError::InvalidMember(
                "mtime or size exceeds the tar numeric field range".into(),
            ));
        }
        let mut header = [0u8; TAR_BLOCK];
        header[..m.name.len()].copy_from_slice(m.name.as_bytes());
        write_octal(&mut header[100..108], (m.mode & 0o7777) as u64); // mode
        write_octal(&mut header[108..116], 0); // uid
        write_octal(&mut header[116..124], 0); // gid
        write_octal(&mut header[124..136], m.content.len() as u64); // size
        write_octal(&mut header[136..148], m.mtime as u64); // mtime
        header[156] = b'0'; // typeflag: regular file
        header[257..263].copy_from_slice(b"ustar\0");
        header[263..265].copy_from_slice(b"00");
        let sum = header_checksum(&header);
        // Checksum: six octal digits, NUL, space.
        let digits = format!("{sum:06o}");
        header[148..154].copy_from_slice(digits.as_bytes());
        header[154] = 0;
        header[155] = b' ';

        out.extend_from_slice(&header);
        out.extend_from_slice(&m.content);
        let pad = (TAR_BLOCK - m.content.len() % TAR_BLOCK) % TAR_BLOCK;
        out.extend(std::iter::repeat(0u8).take(pad));
    }
    out.extend(std::iter::repeat(0u8).take(2 * TAR_BLOCK));
    Ok(out)
}

/// Cheap structural probe: does this look like a tar archive?
pub fn is_tar(bytes: &[u8]) -> bool {
    if bytes.len() < 2 * TAR_BLOCK {
        return false;
    }
    let magic = &bytes[257..262];
    if magic != b"ustar" {
        return false;
    }
    let mut header = [0u8; TAR_BLOCK];
    header.copy_from_slice(&bytes[..TAR_BLOCK]);
    matches!(read_octal(&bytes[148..156]), Ok(sum) if sum == header_checksum(&header))
}

/// Parse a tar archive into its members, preserving order. Any structural
/// problem (truncation, checksum mismatch, missing terminator) is an
/// error: the caller decides whether to degrade gracefully.
pub fn read_tar(bytes: &[u8]) -> Result<Vec<TarMember>, ArchiveError> {
    if !is_tar(bytes) {
        return Err(ArchiveError::NotTar);
    }
    let mut members = Vec::new();
    let mut off = 0usize;
    loop {
        if off + TAR_BLOCK > bytes.len() {
            return Err(corrupt("archive ends without terminator blocks"));
        }
        let block = &bytes[off..off + TAR_BLOCK];
        if block.iter().all(|b| *b == 0) {
            // Terminator: require a second zero block.
            let next = off + TAR_BLOCK;
            if next + TAR_BLOCK > bytes.len()
                || !bytes[next..next + TAR_BLOCK].iter().all(|b| *b == 0)
            {
                return Err(corrupt("missing second terminator block"));
            }
            return Ok(members);
        }
        let mut header = [0u8; TAR_BLOCK];
        header.copy_from_slice(block);
        let recorded = read_octal(&header[148..156])?;
        if recorded != header_checksum(&header) {
            return Err(corrupt(format!("header checksum mismatch at offset {off}")));
        }
        let name_bytes: Vec<u8> = header[..100].iter().copied().take_while(|b| *b != 0).collect();
        let name = String::from_utf8(name_bytes)
            .map_err(|_| corrupt("member name is not UTF-8"))?;
        if name.is_empty() {
            return Err(corrupt("empty member name"));
        }
        let mode = read_octal(&header[100..108])? as u32;
        let size = read_octal(&header[124..136])? as usize;
        let mtime = read_octal(&header[136..148])? as i64;
        let content_start = off + TAR_BLOCK;
        if content_start + size > bytes.len() {
            return Err(corrupt(format!("member {name:?} truncated")));
        }
        members.push(TarMember {
            name,
            mode,
            mtime,
            content: bytes[content_start..content_start + size].to_vec(),
        });
        let padded = size.div_ceil(TAR_BLOCK) * TAR_BLOCK;
        off = content_start + padded;
    }
}

// ---------------------------------------------------------------------------
// gzip

/// A parsed gzip stream: the header fields that vary in practice plus the
/// decompressed payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GzipStream {
    pub mtime: u32,
    pub flg: u8,
    pub xfl: u8,
    pub os: u8,
    pub payload: Vec<u8>,
}

/// Byte offsets of the MTIME field within a gzip header.
pub const GZIP_MTIME_RANGE: (u64, u64) = (4, 8);

/// Serialize `payload` as a gzip member with the given header MTIME.
/// Everything except MTIME is fixed: deflate, no flags, XFL 0, OS 255
/// ("unknown"). Deterministic for fixed inputs.
pub fn write_gzip(payload: &[u8], mtime: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() / 2 + 32);
    out.extend_from_slice(&[0x1f, 0x8b, 0x08, 0x00]);
    out.extend_from_slice(&mtime.to_le_bytes());
    out.push(0x00); // XFL
    out.push(0xff); // OS: unknown
    let deflated = miniz_oxide::deflate::compress_to_vec(payload, 6);
    out.extend_from_slice(&deflated);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out
}

/// Cheap structural probe: gzip magic plus the deflate method byte.
pub fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 10 && bytes[0] == 0x1f && bytes[1] == 0x8b && bytes[2] == 0x08
}

/// Parse and decompress a gzip stream, verifying CRC32 and length.
///
/// Optional header fields (FEXTRA/FNAME/FCOMMENT/FHCRC) written by other
/// producers are skipped. Trailing bytes after the member are rejected.
pub fn read_gzip(bytes: &[u8], max_decoded: usize) -> Result<GzipStream, ArchiveError> {
    if !is_gzip(bytes) {
        return Err(ArchiveError::NotGzip);
    }
    let flg = bytes[3];
    let mtime = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let xfl = bytes[8];
    let os = bytes[9];
    if flg & 0xe0 != 0 {
        return Err(corrupt("reserved gzip FLG bits set"));
    }
    let mut pos = 10usize;
    let need = |pos: usize, n: usize| -> Result<(), ArchiveError> {
        if pos + n > bytes.len() {
            Err(corrupt("gzip header truncated"))
        } else {
            Ok(())
        }
    };
    if flg & 0x04 != 0 {
        // FEXTRA
        need(pos, 2)?;
        let xlen = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        need(pos, xlen)?;
        pos += xlen;
    }
    for bit in [0x08u8, 0x10u8] {
        // FNAME, FCOMMENT: NUL-terminated strings.
        if flg & bit != 0 {
            let end = bytes[pos..]
                .iter()
                .position(|b| *b == 0)
                .ok_or_else(|| corrupt("unterminated gzip header string"))?;
            pos += end + 1;
        }
    }
    if flg & 0x02 != 0 {
        // FHCRC
        need(pos, 2)?;
        pos += 2;
    }
    if bytes.len() < pos + 8 {
        return Err(corrupt("gzip stream truncated"));
    }
    let compressed = &bytes[pos..];
    let (payload, consumed) = inflate_prefix(compressed, max_decoded)?;
    let trailer = &compressed[consumed..];
    if trailer.len() != 8 {
        return Err(corrupt(format!(
            "{} trailing bytes after gzip member",
            trailer.len().abs_diff(8)
        )));
    }
    let crc = u32::from_le_bytes(trailer[0..4].try_into().unwrap());
    let isize_field = u32::from_le_bytes(trailer[4..8].try_into().unwrap());
    if crc32fast::hash(&payload) != crc {
        return Err(corrupt("gzip CRC32 mismatch"));
    }
    if payload.len() as u32 != isize_field {
        return Err(corrupt("gzip ISIZE mismatch"));
    }
    Ok(GzipStream {
        mtime,
        flg,
        xfl,
        os,
        payload,
    })
}

/// Inflate a raw deflate stream that is a prefix of `data`; return the
/// decoded bytes and how many input bytes the stream consumed.
fn inflate_prefix(data: &[u8], max_decoded: usize) -> Result<(Vec<u8>, usize), ArchiveError> {
    use miniz_oxide::inflate::core::{decompress, inflate_flags, DecompressorOxide};
    use miniz_oxide::inflate::TINFLStatus;

    let mut decomp = DecompressorOxide::new();
    let mut out: Vec<u8> = vec![0; 32 * 1024];
    let mut in_pos = 0usize;
    let mut out_pos = 0usize;
    // Grow-in-place output: back-references reach into the already written
    // prefix, which resize preserves.
    let flags = inflate_flags::TINFL_FLAG_USING_NON_WRAPPING_OUTPUT_BUF;
    loop {
        let (status, in_consumed, out_written) = decompress(
            &mut decomp,
            &data[in_pos..],
            &mut out,
            out_pos,
            flags,
        );
        in_pos += in_consumed;
        out_pos += out_written;
        match status {
            TINFLStatus::Done => {
                if out_pos > max_decoded {
                    return Err(ArchiveError::TooLarge);
                }
                out.truncate(out_pos);
                return Ok((out, in_pos));
            }
            TINFLStatus::HasMoreOutput => {
                if out.len() >= max_decoded {
                    return Err(ArchiveError::TooLarge);
                }
                out.resize((out.len() * 2).min(max_decoded), 0);
            }
            TINFLStatus::NeedsMoreInput => {
                return Err(corrupt("deflate stream truncated"));
            }
            other => {
                return Err(corrupt(format!("deflate error: {other:?}")));
            }
        }
    }
}
