/// Maps text to token ids and back. `decode` must invert `encode` for every
/// entity name that goes into a trie.
pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<u32>;
    /// Decodes up to (excluding) the first end-of-sequence token.
    fn decode(&self, tokens: &[u32]) -> String;
    fn eos_id(&self) -> u32;
    fn vocab_size(&self) -> usize;
}

/// One token per UTF-8 byte plus an end-of-sequence token with id 256.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const EOS: u32 = 256;
}

impl Tokenizer for ByteTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    fn decode(&self, tokens: &[u32]) -> String {
        let bytes: Vec<u8> = tokens
            .iter()
            .take_while(|&&t| t != Self::EOS)
            .filter_map(|&t| u8::try_from(t).ok())
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn eos_id(&self) -> u32 {
        Self::EOS
    }

    fn vocab_size(&self) -> usize {
        257
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stops_at_eos() {
        let t = ByteTokenizer;
        assert_eq!(t.decode(&[97, 98, 256, 99]), "ab");
    }

    proptest! {
        #[test]
        fn round_trips_any_text(s in "\\PC{0,30}") {
            let t = ByteTokenizer;
            prop_assert_eq!(t.decode(&t.encode(&s)), s);
        }
    }
}
