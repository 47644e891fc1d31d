//! Tokenization shared by the hashing encoder and the entity linker.

/// Lowercased tokens split on any non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Tokens as in [`tokenize`], with the byte range each occupies in `text`.
pub fn tokenize_with_spans(text: &str) -> Vec<(String, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((text[s..i].to_lowercase(), s..i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((text[s..].to_lowercase(), s..text.len()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("The Eiffel-Tower, in PARIS!"),
            vec!["the", "eiffel", "tower", "in", "paris"]
        );
    }

    #[test]
    fn spans_agree_with_tokens() {
        let text = "Ünïcode, New-York!";
        let spanned = tokenize_with_spans(text);
        let plain: Vec<String> = spanned.iter().map(|(t, _)| t.clone()).collect();
        assert_eq!(plain, tokenize(text));
        assert_eq!(&text[spanned[1].1.clone()], "New");
    }

    #[test]
    fn empty_and_punctuation_only() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" ,.;-- ").is_empty());
    }
}
