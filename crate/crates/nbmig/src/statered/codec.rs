//! Byte codec for migration payloads.
//!
//! A small LZSS variant: back-references into a sliding window, with a
//! one-byte mode header. When the encoded body would not be smaller than
//! the input, the input is stored verbatim instead, so the data portion
//! of the stream (everything after the header byte) is never longer than
//! the raw input. Payload accounting uses that data-portion length; the
//! header models out-of-band framing.

use thiserror::Error;

const WINDOW: usize = 1024;
const MIN_MATCH: usize = 3;
const MAX_MATCH: usize = MIN_MATCH + 63; // 6 bits of length

const MODE_STORED: u8 = 0;
const MODE_LZSS: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("compressed stream is empty")]
    Empty,
    #[error("unknown codec mode byte {0}")]
    BadMode(u8),
    #[error("compressed stream is truncated")]
    Truncated,
    #[error("back-reference outside the decoded window")]
    BadReference,
}

/// Encode `data` into a self-describing stream. Deterministic.
pub fn compress(data: &[u8]) -> Vec<u8> {
    let body = lzss_encode(data);
    if body.len() < data.len() {
        let mut out = Vec::with_capacity(body.len() + 1);
        out.push(MODE_LZSS);
        out.extend_from_slice(&body);
        out
    } else {
        let mut out = Vec::with_capacity(data.len() + 1);
        out.push(MODE_STORED);
        out.extend_from_slice(data);
        out
    }
}

pub fn decompress(stream: &[u8]) -> Result<Vec<u8>, CodecError> {
    let (&mode, body) = stream.split_first().ok_or(CodecError::Empty)?;
    match mode {
        MODE_STORED => Ok(body.to_vec()),
        MODE_LZSS => lzss_decode(body),
        other => Err(CodecError::BadMode(other)),
    }
}

/// Bytes that travel on the wire for this stream (header excluded).
pub fn data_len(stream: &[u8]) -> usize {
    stream.len().saturating_sub(1)
}

fn lzss_encode(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut pos = 0;
    // Items are grouped eight to a flag byte, LSB first; bit 1 = match.
    let mut flag_at = usize::MAX;
    let mut flag_bit = 8;
    let mut push_item = |out: &mut Vec<u8>, is_match: bool, bytes: &[u8]| {
        if flag_bit == 8 {
            flag_at = out.len();
            out.push(0);
            flag_bit = 0;
        }
        if is_match {
            out[flag_at] |= 1 << flag_bit;
        }
        flag_bit += 1;
        out.extend_from_slice(bytes);
    };
    while pos < data.len() {
        let (offset, len) = longest_match(data, pos);
        if len >= MIN_MATCH {
            // offset in 1..=WINDOW, len in MIN_MATCH..=MAX_MATCH.
            let packed = (((offset - 1) as u16) << 6) | ((len - MIN_MATCH) as u16);
            push_item(&mut out, true, &packed.to_be_bytes());
            pos += len;
        } else {
            push_item(&mut out, false, &data[pos..pos + 1]);
            pos += 1;
        }
    }
    out
}

fn longest_match(data: &[u8], pos: usize) -> (usize, usize) {
    let start = pos.saturating_sub(WINDOW);
    let max_len = (data.len() - pos).min(MAX_MATCH);
    if max_len < MIN_MATCH {
        return (0, 0);
    }
    let mut best = (0usize, 0usize);
    for cand in start..pos {
        let mut len = 0;
        while len < max_len && data[cand + len] == data[pos + len] {
            len += 1;
        }
        // Ties keep the smallest offset for determinism.
        if len > best.1 {
            best = (pos - cand, len);
        }
    }
    best
}

fn lzss_decode(body: &[u8]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < body.len() {
        let flags = body[i];
        i += 1;
        for bit in 0..8 {
            if i >= body.len() {
                break;
            }
            if flags & (1 << bit) != 0 {
                if i + 1 >= body.len() {
                    return Err(CodecError::Truncated);
                }
                let packed = u16::from_be_bytes([body[i], body[i + 1]]);
                i += 2;
                let offset = (packed >> 6) as usize + 1;
                let len = (packed & 0x3f) as usize + MIN_MATCH;
                if offset > out.len() {
                    return Err(CodecError::BadReference);
                }
                let from = out.len() - offset;
                // Overlapping copies are valid (run-length style).
                for k in 0..len {
                    let b = out[from + k];
                    out.push(b);
                }
            } else {
                out.push(body[i]);
                i += 1;
            }
        }
    }
    Ok(out)
}
