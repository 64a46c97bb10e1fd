/// Lowercases, splits on whitespace and strips punctuation from token edges.
///
/// Intra-word apostrophes and digits survive; tokens made only of punctuation
/// are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|token| !token.is_empty())
        .collect()
}
