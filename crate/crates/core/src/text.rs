//! Deterministic caption text handling: tokenization, sentence
//! splitting, and the repetition-collapse post-processor applied to
//! generated captions before scoring.

use crate::model::ValidationError;

/// A tokenized caption: lowercase ASCII-alphanumeric tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    /// Validates that every token is a non-empty `[a-z0-9]+` string.
    pub fn new(tokens: Vec<String>) -> Result<Self, ValidationError> {
        for token in &tokens {
            if token.is_empty()
                || !token
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
            {
                return Err(ValidationError::InvalidToken(token.clone()));
            }
        }
        Ok(TokenSequence { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Lowercases the text and extracts maximal runs of ASCII alphanumerics
/// as tokens. Every other character, including non-ASCII letters, acts
/// as a separator.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_ascii_lowercase() || c.is_ascii_digit() {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSequence { tokens }
}

/// Splits on `.`, `!` and `?`, trims whitespace, drops empty segments.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Removes repetition from a generated caption.
///
/// Pass 1 collapses immediately repeated token blocks within each
/// sentence: for block length n from `max_block` down to 1, whenever
/// `tokens[i..i+n) == tokens[i+n..i+2n)` the second block is deleted and
/// the scan resumes from i, repeating until no deletion fires at any n.
/// Pass 2 drops any sentence whose token sequence equals that of an
/// earlier retained sentence.
///
/// The output is rebuilt from the surviving tokens: sentences joined
/// with `". "` plus a terminal `"."`; punctuation inside sentences is
/// not preserved. Idempotent, and never grows the token count.
pub fn collapse_repetitions(text: &str, max_block: usize) -> String {
    let mut sentences: Vec<Vec<String>> = split_sentences(text)
        .iter()
        .map(|s| tokenize(s).tokens)
        .filter(|tokens| !tokens.is_empty())
        .collect();

    for tokens in &mut sentences {
        collapse_blocks(tokens, max_block);
    }

    let mut retained: Vec<Vec<String>> = Vec::new();
    for tokens in sentences {
        if !retained.contains(&tokens) {
            retained.push(tokens);
        }
    }

    if retained.is_empty() {
        return String::new();
    }
    let mut out = retained
        .iter()
        .map(|tokens| tokens.join(" "))
        .collect::<Vec<_>>()
        .join(". ");
    out.push('.');
    out
}

fn collapse_blocks(tokens: &mut Vec<String>, max_block: usize) {
    let mut changed = true;
    while changed {
        changed = false;
        for n in (1..=max_block).rev() {
            let mut i = 0;
            while i + 2 * n <= tokens.len() {
                if tokens[i..i + n] == tokens[i + n..i + 2 * n] {
                    tokens.drain(i + n..i + 2 * n);
                    changed = true;
                    // rescan from i
                } else {
                    i += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(seq: &TokenSequence) -> Vec<&str> {
        seq.tokens().iter().map(String::as_str).collect()
    }

    #[test]
    fn tokenize_rule_application() {
        assert_eq!(
            toks(&tokenize("CT scan, showing mass.")),
            ["ct", "scan", "showing", "mass"]
        );
    }

    #[test]
    fn tokenize_empty_and_separators() {
        assert!(tokenize("").is_empty());
        assert_eq!(toks(&tokenize("X-Ray 2")), ["x", "ray", "2"]);
        // non-ASCII letters separate
        assert_eq!(toks(&tokenize("naïve")), ["na", "ve"]);
    }

    #[test]
    fn tokenize_is_idempotent_on_joined_output() {
        let first = tokenize("Left-sided  MASS, 3cm; seen?");
        let second = tokenize(&first.join());
        assert_eq!(first, second);
    }

    #[test]
    fn token_sequence_validates() {
        assert!(TokenSequence::new(vec!["ok".into(), "a1".into()]).is_ok());
        assert!(TokenSequence::new(vec!["".into()]).is_err());
        assert!(TokenSequence::new(vec!["Upper".into()]).is_err());
        assert!(TokenSequence::new(vec!["hy-phen".into()]).is_err());
    }

    #[test]
    fn split_sentences_examples() {
        assert_eq!(split_sentences("A mass. A mass."), ["A mass", "A mass"]);
        assert_eq!(split_sentences("no terminator"), ["no terminator"]);
        assert!(split_sentences("...").is_empty());
        assert_eq!(split_sentences("One! Two? Three."), ["One", "Two", "Three"]);
    }

    #[test]
    fn collapse_single_token_repeat() {
        assert_eq!(collapse_repetitions("mass mass", 4), "mass.");
    }

    #[test]
    fn collapse_three_token_block() {
        assert_eq!(
            collapse_repetitions("ct scan showing ct scan showing mass", 4),
            "ct scan showing mass."
        );
    }

    #[test]
    fn clean_input_unchanged() {
        assert_eq!(
            collapse_repetitions("ct scan showing mass.", 4),
            "ct scan showing mass."
        );
    }

    #[test]
    fn duplicate_sentences_dropped() {
        assert_eq!(collapse_repetitions("A mass. A mass.", 4), "a mass.");
        // non-adjacent duplicates are caught too
        assert_eq!(
            collapse_repetitions("ct of chest. lesion seen. ct of chest.", 4),
            "ct of chest. lesion seen."
        );
    }

    #[test]
    fn nested_repeats_collapse_fully() {
        assert_eq!(collapse_repetitions("a a a a a a", 4), "a.");
        assert_eq!(collapse_repetitions("x y x y x y", 4), "x y.");
    }

    #[test]
    fn empty_inputs_give_empty_output() {
        assert_eq!(collapse_repetitions("", 4), "");
        assert_eq!(collapse_repetitions("...", 4), "");
        assert_eq!(collapse_repetitions("—!?", 4), "");
    }

    #[test]
    fn collapse_is_idempotent_on_examples() {
        for text in [
            "mass mass",
            "ct scan showing ct scan showing mass",
            "A mass. A mass.",
            "z. q t. z. t r.",
            "showing mass. mass lesion.",
            "a b a b c. c d. a b a b c.",
        ] {
            let once = collapse_repetitions(text, 4);
            let twice = collapse_repetitions(&once, 4);
            assert_eq!(once, twice, "not idempotent on {text:?}");
        }
    }

    #[test]
    fn output_never_has_more_tokens() {
        for text in ["a b c a b c", "w. w. w.", "one two two three."] {
            let input_tokens = tokenize(text).len();
            let output_tokens = tokenize(&collapse_repetitions(text, 4)).len();
            assert!(output_tokens <= input_tokens);
        }
    }

    #[test]
    fn max_block_bounds_collapse_length() {
        // a five-token block repeat is invisible to max_block = 4
        let text = "a b c d e a b c d e";
        assert_eq!(collapse_repetitions(text, 4), format!("{text}."));
        assert_eq!(collapse_repetitions(text, 5), "a b c d e.");
    }
}
