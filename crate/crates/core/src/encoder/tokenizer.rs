use serde::{Deserialize, Serialize};

/// 64-bit FNV-1a. Fixed constants, so ids are identical on every platform.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Hashing tokenizer: lowercase, split on anything that is not alphanumeric,
/// hash each word into one of `buckets` ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    buckets: usize,
}

impl Tokenizer {
    pub fn new(buckets: usize) -> Self {
        assert!(buckets > 0, "bucket count must be positive");
        Tokenizer { buckets }
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| w.to_lowercase())
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        Self::words(text)
            .map(|w| (fnv1a64(w.as_bytes()) % self.buckets as u64) as usize)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn normalisation_and_empty() {
        let t = Tokenizer::new(4096);
        assert!(t.tokenize("").is_empty());
        assert!(t.tokenize("  ,.;! ").is_empty());
        assert_eq!(t.tokenize("Hello, WORLD"), t.tokenize("hello world"));
        assert_eq!(t.tokenize("a-b").len(), 2);
        assert!(t.tokenize("x y z").iter().all(|&id| id < 4096));
    }
}
