//! Code-index message format.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CFMS"
//!      4     1  version
//!      5     2  sender        (u16 LE)
//!      7     2  receiver      (u16 LE)
//!      9     2  height        (u16 LE)
//!     11     2  width         (u16 LE)
//!     13     8  codebook id   (u64 LE)
//!     21     1  log2(n_L)
//!     22     1  n_r
//!     23     4  entry count   (u32 LE)
//!     27     -  entry bit stream
//! ```
//!
//! Each entry is `row:16 col:16` followed by `n_r` indices of `log2(n_L)`
//! bits, all MSB-first in one continuous stream. Only the end of the stream
//! is padded (with zero bits) to a byte boundary.

mod bandwidth;
mod bits;

use thiserror::Error;

use crate::codebook::{self, CodeAssignment, Codebook, CodebookError};
use crate::grid::{AgentId, GridDims, SelectionMatrix, SparseFeature};
use bits::{BitReader, BitWriter};

pub use bandwidth::{
    code_bandwidth, feature_bandwidth, log2_or_zero, BandwidthReport, Representation,
};

pub const MESSAGE_MAGIC: [u8; 4] = *b"CFMS";
pub const MESSAGE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 27;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported message version {0}")]
    UnsupportedVersion(u8),
    #[error("message truncated: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: usize },
    #[error("message has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("non-zero padding bits at end of entry stream")]
    NonZeroPadding,
    #[error("invalid header: {0}")]
    InvalidHeader(&'static str),
    #[error("codebook size {0} is not a power of two in 1..=2^31")]
    InvalidIndexWidth(u64),
    #[error("cell ({row}, {col}) outside a {height}x{width} grid")]
    CoordinateOutOfRange {
        row: u16,
        col: u16,
        height: u16,
        width: u16,
    },
    #[error("entries must be unique and row-major sorted; ({row}, {col}) breaks the order")]
    NonCanonicalOrder { row: u16, col: u16 },
    #[error("code index {index} out of range for {size} codes")]
    IndexOutOfRange { index: u32, size: u64 },
    #[error("entry has {actual} indices, message carries {expected} per cell")]
    IndexCountMismatch { expected: usize, actual: usize },
    #[error("selection has {selected} cells but {assigned} assignments")]
    SelectionMismatch { selected: usize, assigned: usize },
    #[error("grid {height}x{width} does not fit 16-bit coordinates")]
    DimsTooLarge { height: usize, width: usize },
    #[error("n_r = {0} does not fit the 1..=255 header field")]
    InvalidCodeCount(usize),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageEntry {
    pub row: u16,
    pub col: u16,
    pub indices: Vec<u32>,
}

/// Header fields of a message that do not come from the selection itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageMeta {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub codebook_id: u64,
    /// `n_L`; must be a power of two.
    pub codebook_size: usize,
    pub n_r: usize,
}

impl MessageMeta {
    pub fn for_codebook(sender: AgentId, receiver: AgentId, codebook: &Codebook, n_r: usize) -> Self {
        Self {
            sender,
            receiver,
            codebook_id: codebook.id(),
            codebook_size: codebook.size(),
            n_r,
        }
    }
}

/// Sparse code-index message from one sender to one receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeIndexMessage {
    sender: AgentId,
    receiver: AgentId,
    height: u16,
    width: u16,
    codebook_id: u64,
    index_bits: u8,
    n_r: u8,
    entries: Vec<MessageEntry>,
}

fn index_bits_for(n_l: usize) -> Result<u8, WireError> {
    if n_l.is_power_of_two() && n_l <= 1 << 31 {
        Ok(n_l.trailing_zeros() as u8)
    } else {
        Err(WireError::InvalidIndexWidth(n_l as u64))
    }
}

fn check_dims(height: usize, width: usize) -> Result<(u16, u16), WireError> {
    match (u16::try_from(height), u16::try_from(width)) {
        (Ok(h), Ok(w)) => Ok((h, w)),
        _ => Err(WireError::DimsTooLarge { height, width }),
    }
}

impl CodeIndexMessage {
    /// Validates every message invariant.
    pub fn new(
        meta: MessageMeta,
        height: usize,
        width: usize,
        entries: Vec<MessageEntry>,
    ) -> Result<Self, WireError> {
        let (height, width) = check_dims(height, width)?;
        if height == 0 || width == 0 {
            return Err(WireError::InvalidHeader("zero grid dimension"));
        }
        let index_bits = index_bits_for(meta.codebook_size)?;
        let n_r = u8::try_from(meta.n_r)
            .ok()
            .filter(|&n| n > 0)
            .ok_or(WireError::InvalidCodeCount(meta.n_r))?;
        if u32::try_from(entries.len()).is_err() {
            return Err(WireError::InvalidHeader("more than 2^32 - 1 entries"));
        }
        let mut prev: Option<(u16, u16)> = None;
        for e in &entries {
            if e.row >= height || e.col >= width {
                return Err(WireError::CoordinateOutOfRange {
                    row: e.row,
                    col: e.col,
                    height,
                    width,
                });
            }
            if prev.is_some_and(|p| p >= (e.row, e.col)) {
                return Err(WireError::NonCanonicalOrder {
                    row: e.row,
                    col: e.col,
                });
            }
            prev = Some((e.row, e.col));
            if e.indices.len() != meta.n_r {
                return Err(WireError::IndexCountMismatch {
                    expected: meta.n_r,
                    actual: e.indices.len(),
                });
            }
            if let Some(&bad) = e
                .indices
                .iter()
                .find(|&&k| k as u64 >= meta.codebook_size as u64)
            {
                return Err(WireError::IndexOutOfRange {
                    index: bad,
                    size: meta.codebook_size as u64,
                });
            }
        }
        Ok(Self {
            sender: meta.sender,
            receiver: meta.receiver,
            height,
            width,
            codebook_id: meta.codebook_id,
            index_bits,
            n_r,
            entries,
        })
    }

    /// Pairs the selected cells (row-major) with their assignments in order.
    pub fn from_selection(
        selection: &SelectionMatrix,
        assignments: &CodeAssignment,
        meta: MessageMeta,
    ) -> Result<Self, WireError> {
        let dims = selection.dims();
        check_dims(dims.height(), dims.width())?;
        if selection.count() != assignments.len() {
            return Err(WireError::SelectionMismatch {
                selected: selection.count(),
                assigned: assignments.len(),
            });
        }
        if assignments.n_r() != meta.n_r {
            return Err(WireError::IndexCountMismatch {
                expected: meta.n_r,
                actual: assignments.n_r(),
            });
        }
        let entries = selection
            .cells()
            .zip(assignments.entries())
            .map(|((row, col), idx)| MessageEntry {
                row: row as u16,
                col: col as u16,
                indices: idx.to_vec(),
            })
            .collect();
        Self::new(meta, dims.height(), dims.width(), entries)
    }

    /// Quantizes every selected feature vector with `n_r` greedy codes.
    pub fn encode_sparse(
        sender: AgentId,
        receiver: AgentId,
        sparse: &SparseFeature,
        codebook: &Codebook,
        n_r: usize,
    ) -> Result<Self, WireError> {
        let dims = sparse.dims();
        let entries = sparse
            .entries()
            .iter()
            .map(|e| {
                Ok(MessageEntry {
                    row: u16::try_from(e.row).map_err(|_| WireError::DimsTooLarge {
                        height: dims.height(),
                        width: dims.width(),
                    })?,
                    col: u16::try_from(e.col).map_err(|_| WireError::DimsTooLarge {
                        height: dims.height(),
                        width: dims.width(),
                    })?,
                    indices: codebook::encode(&e.values, codebook, n_r)?,
                })
            })
            .collect::<Result<Vec<_>, WireError>>()?;
        Self::new(
            MessageMeta::for_codebook(sender, receiver, codebook, n_r),
            dims.height(),
            dims.width(),
            entries,
        )
    }

    pub fn sender(&self) -> AgentId {
        self.sender
    }

    pub fn receiver(&self) -> AgentId {
        self.receiver
    }

    pub fn height(&self) -> usize {
        self.height as usize
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn codebook_id(&self) -> u64 {
        self.codebook_id
    }

    pub fn index_bits(&self) -> u32 {
        self.index_bits as u32
    }

    pub fn codebook_size(&self) -> usize {
        1usize << self.index_bits
    }

    pub fn n_r(&self) -> usize {
        self.n_r as usize
    }

    pub fn entries(&self) -> &[MessageEntry] {
        &self.entries
    }

    pub fn selection(&self) -> SelectionMatrix {
        let dims = GridDims::spatial(self.height(), self.width()).expect("validated dims");
        SelectionMatrix::from_cells(
            dims,
            self.entries.iter().map(|e| (e.row as usize, e.col as usize)),
        )
        .expect("validated coordinates")
    }

    fn entry_bits(&self) -> u64 {
        32 + self.n_r as u64 * self.index_bits as u64
    }

    /// Bits spent on code indices alone.
    pub fn payload_bits(&self) -> u64 {
        self.entries.len() as u64 * self.n_r as u64 * self.index_bits as u64
    }

    /// Exact packed size, header included.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + (self.entries.len() as u64 * self.entry_bits()).div_ceil(8) as usize
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MESSAGE_MAGIC);
        out.push(MESSAGE_VERSION);
        out.extend_from_slice(&self.sender.0.to_le_bytes());
        out.extend_from_slice(&self.receiver.0.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.codebook_id.to_le_bytes());
        out.push(self.index_bits);
        out.push(self.n_r);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut w = BitWriter::new(out);
        let bits = self.index_bits as u32;
        for e in &self.entries {
            w.write(e.row as u32, 16);
            w.write(e.col as u32, 16);
            for &k in &e.indices {
                w.write(k, bits);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        unpack(bytes)
    }
}

/// Packs the selected cells and their code indices into the wire layout.
pub fn pack(
    selection: &SelectionMatrix,
    assignments: &CodeAssignment,
    meta: MessageMeta,
) -> Result<Vec<u8>, WireError> {
    Ok(CodeIndexMessage::from_selection(selection, assignments, meta)?.to_bytes())
}

fn le16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

/// Parses and validates a packed message. Only the canonical encoding of a
/// message is accepted.
pub fn unpack(bytes: &[u8]) -> Result<CodeIndexMessage, WireError> {
    let truncated = |needed: u64| WireError::Truncated {
        needed,
        available: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MESSAGE_MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes.len() < 5 {
        return Err(truncated(5));
    }
    if bytes[4] != MESSAGE_VERSION {
        return Err(WireError::UnsupportedVersion(bytes[4]));
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN as u64));
    }
    let sender = AgentId(le16(bytes, 5));
    let receiver = AgentId(le16(bytes, 7));
    let height = le16(bytes, 9);
    let width = le16(bytes, 11);
    let codebook_id = u64::from_le_bytes(bytes[13..21].try_into().unwrap());
    let index_bits = bytes[21];
    let n_r = bytes[22];
    let count = u32::from_le_bytes(bytes[23..27].try_into().unwrap());

    if height == 0 || width == 0 {
        return Err(WireError::InvalidHeader("zero grid dimension"));
    }
    if index_bits > 31 {
        return Err(WireError::InvalidIndexWidth(1u64 << index_bits.min(63)));
    }
    if n_r == 0 {
        return Err(WireError::InvalidCodeCount(0));
    }

    let entry_bits = 32 + n_r as u64 * index_bits as u64;
    let stream_bytes = (count as u64 * entry_bits).div_ceil(8);
    let needed = HEADER_LEN as u64 + stream_bytes;
    if (bytes.len() as u64) < needed {
        return Err(truncated(needed));
    }
    if bytes.len() as u64 > needed {
        return Err(WireError::TrailingBytes((bytes.len() as u64 - needed) as usize));
    }

    let mut r = BitReader::new(&bytes[HEADER_LEN..]);
    let mut entries = Vec::with_capacity(count as usize);
    let mut prev: Option<(u16, u16)> = None;
    for _ in 0..count {
        let row = r.read(16) as u16;
        let col = r.read(16) as u16;
        if row >= height || col >= width {
            return Err(WireError::CoordinateOutOfRange {
                row,
                col,
                height,
                width,
            });
        }
        if prev.is_some_and(|p| p >= (row, col)) {
            return Err(WireError::NonCanonicalOrder { row, col });
        }
        prev = Some((row, col));
        let indices = (0..n_r).map(|_| r.read(index_bits as u32)).collect();
        entries.push(MessageEntry { row, col, indices });
    }
    if !r.rest_is_zero() {
        return Err(WireError::NonZeroPadding);
    }

    Ok(CodeIndexMessage {
        sender,
        receiver,
        height,
        width,
        codebook_id,
        index_bits,
        n_r,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(n_l: usize, n_r: usize) -> MessageMeta {
        MessageMeta {
            sender: AgentId(1),
            receiver: AgentId(2),
            codebook_id: 0x0123_4567_89ab_cdef,
            codebook_size: n_l,
            n_r,
        }
    }

    fn dims(h: usize, w: usize) -> GridDims {
        GridDims::spatial(h, w).unwrap()
    }

    #[test]
    fn header_only_message() {
        let sel = SelectionMatrix::zeros(dims(4, 4));
        let asn = CodeAssignment::new(1, vec![]).unwrap();
        let bytes = pack(&sel, &asn, meta(256, 1)).unwrap();
        assert_eq!(bytes.len(), 27);
        assert_eq!(&bytes[..4], b"CFMS");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..7], &[1, 0]);
        assert_eq!(&bytes[7..9], &[2, 0]);
        assert_eq!(&bytes[9..11], &[4, 0]);
        assert_eq!(&bytes[13..21], &0x0123_4567_89ab_cdefu64.to_le_bytes());
        assert_eq!(bytes[21], 8);
        assert_eq!(bytes[22], 1);
        assert_eq!(&bytes[23..27], &[0, 0, 0, 0]);
    }

    #[test]
    fn one_cell_byte_layout() {
        let sel = SelectionMatrix::from_cells(dims(300, 300), [(258, 3)]).unwrap();
        let asn = CodeAssignment::new(1, vec![0xA5]).unwrap();
        let bytes = pack(&sel, &asn, meta(256, 1)).unwrap();
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[27..], &[0x01, 0x02, 0x00, 0x03, 0xA5]);
        let msg = unpack(&bytes).unwrap();
        assert_eq!(msg.entries()[0].indices, vec![0xA5]);
        assert_eq!(msg.payload_bits(), 8);
    }

    #[test]
    fn sub_byte_indices_pad_only_at_end() {
        // n_L = 2: 33 bits per entry, two entries = 66 bits -> 9 bytes
        let sel = SelectionMatrix::from_cells(dims(2, 2), [(0, 1), (1, 0)]).unwrap();
        let asn = CodeAssignment::new(1, vec![1, 1]).unwrap();
        let bytes = pack(&sel, &asn, meta(2, 1)).unwrap();
        assert_eq!(bytes.len(), 27 + 9);
        let msg = unpack(&bytes).unwrap();
        assert_eq!(msg.to_bytes(), bytes);
        assert_eq!(msg.selection(), sel);
    }

    #[test]
    fn single_code_book_uses_zero_bits() {
        let sel = SelectionMatrix::from_cells(dims(2, 2), [(1, 1)]).unwrap();
        let asn = CodeAssignment::new(3, vec![0, 0, 0]).unwrap();
        let bytes = pack(&sel, &asn, meta(1, 3)).unwrap();
        assert_eq!(bytes.len(), 31);
        assert_eq!(unpack(&bytes).unwrap().entries()[0].indices, vec![0, 0, 0]);
    }

    #[test]
    fn pack_errors() {
        let sel = SelectionMatrix::from_cells(dims(2, 2), [(1, 1)]).unwrap();
        let two = CodeAssignment::new(1, vec![0, 1]).unwrap();
        assert_eq!(
            pack(&sel, &two, meta(4, 1)).unwrap_err(),
            WireError::SelectionMismatch {
                selected: 1,
                assigned: 2
            }
        );
        let big = CodeAssignment::new(1, vec![4]).unwrap();
        assert!(matches!(
            pack(&sel, &big, meta(4, 1)),
            Err(WireError::IndexOutOfRange { .. })
        ));
        let wide = SelectionMatrix::zeros(dims(70_000, 1));
        let none = CodeAssignment::new(1, vec![]).unwrap();
        assert!(matches!(
            pack(&wide, &none, meta(4, 1)),
            Err(WireError::DimsTooLarge { .. })
        ));
        assert!(matches!(
            pack(&sel, &CodeAssignment::new(1, vec![0]).unwrap(), meta(3, 1)),
            Err(WireError::InvalidIndexWidth(3))
        ));
    }

    fn sample_bytes() -> Vec<u8> {
        let sel = SelectionMatrix::from_cells(dims(8, 8), [(0, 0), (3, 5), (7, 7)]).unwrap();
        let asn = CodeAssignment::new(2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        pack(&sel, &asn, meta(8, 2)).unwrap()
    }

    #[test]
    fn unpack_errors_are_distinct() {
        let good = sample_bytes();
        let mut bad = good.clone();
        bad[1] = b'X';
        assert!(matches!(unpack(&bad), Err(WireError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(unpack(&bad).unwrap_err(), WireError::UnsupportedVersion(2));
        assert!(matches!(
            unpack(&good[..good.len() - 1]),
            Err(WireError::Truncated { .. })
        ));
        assert!(matches!(unpack(&good[..10]), Err(WireError::Truncated { .. })));
        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(unpack(&bad).unwrap_err(), WireError::TrailingBytes(1));
        let mut bad = good.clone();
        *bad.last_mut().unwrap() |= 1;
        assert_eq!(unpack(&bad).unwrap_err(), WireError::NonZeroPadding);
        let mut bad = good.clone();
        bad[27] = 0x00;
        bad[28] = 0x09; // row 9 in an 8-row grid
        assert!(matches!(
            unpack(&bad),
            Err(WireError::CoordinateOutOfRange { .. })
        ));
        let mut bad = good.clone();
        bad[21] = 40;
        assert!(matches!(unpack(&bad), Err(WireError::InvalidIndexWidth(_))));
    }

    #[test]
    fn huge_count_is_truncation_not_allocation() {
        let mut bytes = sample_bytes()[..27].to_vec();
        bytes[23..27].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(unpack(&bytes), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn message_rejects_unsorted_entries() {
        let e = |row, col| MessageEntry {
            row,
            col,
            indices: vec![0],
        };
        assert!(matches!(
            CodeIndexMessage::new(meta(2, 1), 4, 4, vec![e(1, 0), e(0, 3)]),
            Err(WireError::NonCanonicalOrder { .. })
        ));
    }
}
