//! Byte-level tokenizer with reserved special tokens.
//!
//! | ids      | meaning                                   |
//! |----------|-------------------------------------------|
//! | 0        | pad (also the decoder start token)        |
//! | 1        | eos                                       |
//! | 2..=11   | sentinels `<extra_id_0>` .. `<extra_id_9>` |
//! | 12..=14  | mode tags `[NLU]`, `[NLG]`, `[S2S]`       |
//! | 15..=270 | raw bytes 0x00..=0xFF (id = 15 + byte)    |

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const SENTINEL_BASE: u32 = 2;
pub const NUM_SENTINELS: u32 = 10;
pub const MODE_TAG_BASE: u32 = 12;
pub const BYTE_BASE: u32 = 15;
pub const VOCAB_SIZE: usize = 271;

pub const MODE_TAGS: [&str; 3] = ["[NLU]", "[NLG]", "[S2S]"];

pub fn sentinel(i: u32) -> String {
    format!("<extra_id_{i}>")
}

/// Surface form of a special id that has one (sentinels and mode tags).
pub fn special_surface(id: u32) -> Option<String> {
    match id {
        SENTINEL_BASE..MODE_TAG_BASE => Some(sentinel(id - SENTINEL_BASE)),
        MODE_TAG_BASE..BYTE_BASE => Some(MODE_TAGS[(id - MODE_TAG_BASE) as usize].to_string()),
        _ => None,
    }
}

fn match_special(rest: &[u8]) -> Option<(u32, usize)> {
    if rest.first() == Some(&b'<') {
        // "<extra_id_N>" with a single digit N
        const PREFIX: &[u8] = b"<extra_id_";
        if rest.len() >= PREFIX.len() + 2
            && rest.starts_with(PREFIX)
            && rest[PREFIX.len()].is_ascii_digit()
            && rest[PREFIX.len() + 1] == b'>'
        {
            let n = (rest[PREFIX.len()] - b'0') as u32;
            return Some((SENTINEL_BASE + n, PREFIX.len() + 2));
        }
    } else if rest.first() == Some(&b'[') {
        for (i, tag) in MODE_TAGS.iter().enumerate() {
            if rest.starts_with(tag.as_bytes()) {
                return Some((MODE_TAG_BASE + i as u32, tag.len()));
            }
        }
    }
    None
}

/// Encodes raw bytes: special surface forms become their ids, every other
/// byte becomes `15 + byte`. Never emits pad or eos.
pub fn encode_bytes(bytes: &[u8]) -> Vec<u32> {
    let mut ids = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if let Some((id, len)) = match_special(&bytes[i..]) {
            ids.push(id);
            i += len;
        } else {
            ids.push(BYTE_BASE + bytes[i] as u32);
            i += 1;
        }
    }
    ids
}

pub fn encode_text(text: &str) -> Vec<u32> {
    encode_bytes(text.as_bytes())
}

/// Inverse of [`encode_bytes`]; pad and eos render as nothing.
pub fn decode_bytes(ids: &[u32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ids.len());
    for (index, &id) in ids.iter().enumerate() {
        match id {
            PAD_ID | EOS_ID => {}
            SENTINEL_BASE..BYTE_BASE => {
                out.extend_from_slice(special_surface(id).expect("special id").as_bytes())
            }
            id if (id as usize) < VOCAB_SIZE => out.push((id - BYTE_BASE) as u8),
            _ => {
                return Err(Error::Token {
                    index,
                    id,
                    vocab_size: VOCAB_SIZE,
                })
            }
        }
    }
    Ok(out)
}

/// Decodes to a string. Byte runs that are not valid UTF-8 (possible in
/// model output) are replaced with U+FFFD.
pub fn decode_ids(ids: &[u32]) -> Result<String> {
    let bytes = decode_bytes(ids)?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
    })
}
