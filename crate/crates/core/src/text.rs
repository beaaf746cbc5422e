//! Tokenization shared by BM25, the lexical baseline and the synthetic embedder.

/// Lowercases and splits on anything that is not alphanumeric. No stemming,
/// no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}
