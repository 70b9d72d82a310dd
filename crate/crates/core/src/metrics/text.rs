//! Metric-side text handling: case-folded tokenization, token hashing, and a
//! small suffix-stripping stemmer.
//!
//! Scoring never compares token strings; every token is reduced to a 64-bit
//! FNV-1a fingerprint at tokenization time and n-grams are fingerprint
//! combinations. This keeps corpus-scale scoring allocation-light.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

const PUNCTUATION: [char; 6] = ['.', ',', '?', '!', ';', ':'];
const ASCII_PUNCT: [u8; 6] = [b'.', b',', b'?', b'!', b';', b':'];

#[inline]
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Combine token hashes into an n-gram key; the length seed keeps n-grams of
/// different orders from colliding.
#[inline]
pub fn ngram_key(toks: &[u64]) -> u64 {
    let mut h = FNV_OFFSET ^ (toks.len() as u64).wrapping_mul(0x9e3779b97f4a7c15);
    for &t in toks {
        h ^= t;
        h = h.wrapping_mul(FNV_PRIME);
        h ^= h >> 29;
    }
    h
}

/// Case-folded tokens of a text: lowercase, whitespace split, punctuation
/// detached. This is the token stream every metric scores over.
pub fn metric_tokenize(text: &str) -> Vec<String> {
    crate::tokenizer::tokenize_text(&text.to_lowercase())
}

/// Token fingerprints for one text, with stem fingerprints for the stem
/// matching stage of METEOR.
#[derive(Debug, Clone, Default)]
pub struct HashedText {
    pub toks: Vec<u64>,
    pub stems: Vec<u64>,
}

/// Fingerprint keys are already FNV-mixed, so the per-item n-gram maps skip
/// a second hashing round and use the key bits directly.
#[derive(Default, Clone)]
pub struct FingerprintHasher(u64);

impl std::hash::Hasher for FingerprintHasher {
    #[inline]
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ u64::from(b)).wrapping_mul(FNV_PRIME);
        }
    }

    #[inline]
    fn write_u64(&mut self, v: u64) {
        self.0 = v;
    }
}

pub(crate) type FpBuildHasher = std::hash::BuildHasherDefault<FingerprintHasher>;
pub(crate) type FpMap<V> = std::collections::HashMap<u64, V, FpBuildHasher>;

/// Tokenize and fingerprint in one pass without per-token allocation; ASCII
/// text (the common case) avoids the lowercase copy entirely.
pub fn hash_text(text: &str) -> HashedText {
    let mut out = HashedText::default();
    let mut buf = Vec::with_capacity(16);
    let flush = |buf: &mut Vec<u8>, out: &mut HashedText| {
        if !buf.is_empty() {
            out.toks.push(fnv1a(buf));
            out.stems.push(fnv1a(stem_bytes(buf)));
            buf.clear();
        }
    };
    if text.is_ascii() {
        for &b in text.as_bytes() {
            let b = b.to_ascii_lowercase();
            if b.is_ascii_whitespace() {
                flush(&mut buf, &mut out);
            } else if ASCII_PUNCT.contains(&b) {
                flush(&mut buf, &mut out);
                out.toks.push(fnv1a(&[b]));
                out.stems.push(fnv1a(&[b]));
            } else {
                buf.push(b);
            }
        }
        flush(&mut buf, &mut out);
        return out;
    }
    let lower = text.to_lowercase();
    for ch in lower.chars() {
        if ch.is_whitespace() {
            flush(&mut buf, &mut out);
        } else if PUNCTUATION.contains(&ch) {
            flush(&mut buf, &mut out);
            let mut tmp = [0u8; 4];
            let s = ch.encode_utf8(&mut tmp);
            out.toks.push(fnv1a(s.as_bytes()));
            out.stems.push(fnv1a(stem_bytes(s.as_bytes())));
        } else {
            let mut tmp = [0u8; 4];
            buf.extend_from_slice(ch.encode_utf8(&mut tmp).as_bytes());
        }
    }
    flush(&mut buf, &mut out);
    out
}

/// Simplified English suffix stripper used by METEOR's stem stage. Applies a
/// plural rule followed by one derivational rule; nothing more ambitious.
pub fn stem(token: &str) -> String {
    String::from_utf8_lossy(stem_bytes(token.as_bytes())).into_owned()
}

fn stem_bytes(tok: &[u8]) -> &[u8] {
    let t = strip_plural(tok);
    strip_suffix_rules(t)
}

fn strip_plural(t: &[u8]) -> &[u8] {
    // "sses" drops "es" (glasses -> glass); "ies" becomes "i" (ponies -> poni)
    if t.ends_with(b"sses") || t.ends_with(b"ies") {
        &t[..t.len() - 2]
    } else if t.ends_with(b"ss") {
        t
    } else if t.ends_with(b"s") && t.len() > 3 {
        &t[..t.len() - 1]
    } else {
        t
    }
}

fn strip_suffix_rules(t: &[u8]) -> &[u8] {
    for (suffix, keep_min) in [(&b"ing"[..], 3usize), (&b"ed"[..], 3), (&b"ly"[..], 3)] {
        if t.ends_with(suffix) && t.len() - suffix.len() >= keep_min {
            return &t[..t.len() - suffix.len()];
        }
    }
    t
}
