//! GNT container parsing and writing.
//!
//! Record layout, little-endian: u32 record size, 2 tag bytes (GB2312 label),
//! u16 width, u16 height, then `width * height` grayscale bytes with 255 as
//! background. Record size must equal `10 + width * height`.

use std::io::{self, Read};

use thiserror::Error;

pub const HEADER_BYTES: u32 = 10;

#[derive(Debug, Error)]
pub enum GntError {
    #[error("i/o error at byte {offset}: {source}")]
    Io { offset: u64, source: io::Error },
    #[error("corrupt record at byte {offset}: declared size {declared} but header implies {expected}")]
    CorruptRecord {
        offset: u64,
        declared: u32,
        expected: u32,
    },
    #[error("truncated record at byte {offset}")]
    Truncated { offset: u64 },
    #[error("bitmap dimensions {width}x{height} exceed the u16 format limit")]
    DimensionOverflow { width: usize, height: usize },
    #[error("bitmap length {len} does not match {width}x{height}")]
    BitmapMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GntRecord {
    pub tag: [u8; 2],
    pub width: u16,
    pub height: u16,
    pub bitmap: Vec<u8>,
}

impl GntRecord {
    pub fn new(tag: [u8; 2], width: usize, height: usize, bitmap: Vec<u8>) -> Result<Self, GntError> {
        if width == 0 || width > u16::MAX as usize || height == 0 || height > u16::MAX as usize {
            return Err(GntError::DimensionOverflow { width, height });
        }
        if bitmap.len() != width * height {
            return Err(GntError::BitmapMismatch {
                width,
                height,
                len: bitmap.len(),
            });
        }
        Ok(GntRecord {
            tag,
            width: width as u16,
            height: height as u16,
            bitmap,
        })
    }

    pub fn record_size(&self) -> u32 {
        HEADER_BYTES + self.bitmap.len() as u32
    }
}

/// Streaming record reader; stops cleanly at end of stream.
pub struct GntReader<R: Read> {
    inner: R,
    offset: u64,
    failed: bool,
}

impl<R: Read> GntReader<R> {
    pub fn new(inner: R) -> Self {
        GntReader {
            inner,
            offset: 0,
            failed: false,
        }
    }

    fn read_exact(&mut self, buf: &mut [u8], record_start: u64) -> Result<(), GntError> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(GntError::Truncated {
                offset: record_start,
            }),
            Err(e) => Err(GntError::Io {
                offset: self.offset,
                source: e,
            }),
        }
    }

    fn next_record(&mut self) -> Result<Option<GntRecord>, GntError> {
        let start = self.offset;
        let mut size_buf = [0u8; 4];
        // a clean EOF before any header byte ends the stream
        match self.inner.read(&mut size_buf[..1]) {
            Ok(0) => return Ok(None),
            Ok(1) => self.offset += 1,
            Ok(_) => unreachable!(),
            Err(e) => {
                return Err(GntError::Io {
                    offset: self.offset,
                    source: e,
                })
            }
        }
        self.read_exact(&mut size_buf[1..], start)?;
        let declared = u32::from_le_bytes(size_buf);
        let mut head = [0u8; 6];
        self.read_exact(&mut head, start)?;
        let tag = [head[0], head[1]];
        let width = u16::from_le_bytes([head[2], head[3]]);
        let height = u16::from_le_bytes([head[4], head[5]]);
        let expected = HEADER_BYTES + width as u32 * height as u32;
        if declared != expected || width == 0 || height == 0 {
            return Err(GntError::CorruptRecord {
                offset: start,
                declared,
                expected,
            });
        }
        let mut bitmap = vec![0u8; width as usize * height as usize];
        self.read_exact(&mut bitmap, start)?;
        Ok(Some(GntRecord {
            tag,
            width,
            height,
            bitmap,
        }))
    }
}

impl<R: Read> Iterator for GntReader<R> {
    type Item = Result<GntRecord, GntError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_record() {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Decodes a whole stream.
pub fn parse_gnt(reader: impl Read) -> Result<Vec<GntRecord>, GntError> {
    GntReader::new(reader).collect()
}

/// Inverse of `parse_gnt`: serializes records back to the container layout.
pub fn write_gnt(records: &[GntRecord]) -> Vec<u8> {
    let total: usize = records.iter().map(|r| r.record_size() as usize).sum();
    let mut out = Vec::with_capacity(total);
    for r in records {
        out.extend_from_slice(&r.record_size().to_le_bytes());
        out.extend_from_slice(&r.tag);
        out.extend_from_slice(&r.width.to_le_bytes());
        out.extend_from_slice(&r.height.to_le_bytes());
        out.extend_from_slice(&r.bitmap);
    }
    out
}
