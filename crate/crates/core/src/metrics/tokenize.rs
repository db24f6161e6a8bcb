use unicode_normalization::UnicodeNormalization;

/// A lowercased token sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenizedCaption(Vec<String>);

impl TokenizedCaption {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenizedCaption(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }
}

impl<S: Into<String>> FromIterator<S> for TokenizedCaption {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenizedCaption(iter.into_iter().map(Into::into).collect())
    }
}

// Split off as single-character tokens. Hyphens and apostrophes stay inside words.
fn is_punct(c: char) -> bool {
    matches!(
        c,
        '.' | ',' | ';' | ':' | '!' | '?' | '"' | '(' | ')' | '[' | ']' | '{' | '}'
            | '\u{2026}' // …
            | '\u{201e}' | '\u{201c}' | '\u{201d}' // „ “ ”
            | '\u{00ab}' | '\u{00bb}' // « »
            | '\u{2013}' | '\u{2014}' // en and em dash
    )
}

/// NFC-normalise, lowercase, split punctuation from words, split on whitespace.
pub fn tokenize(text: &str) -> TokenizedCaption {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    let mut tokens = Vec::new();
    for word in normalized.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if is_punct(c) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    TokenizedCaption(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).into_tokens()
    }

    #[test]
    fn splits_trailing_period() {
        assert_eq!(toks("Ein Mann reitet."), ["ein", "mann", "reitet", "."]);
    }

    #[test]
    fn empty_and_whitespace() {
        assert!(toks("").is_empty());
        assert!(toks("   \t\n").is_empty());
        assert_eq!(toks("A  b"), ["a", "b"]);
    }

    #[test]
    fn keeps_hyphens_and_apostrophes() {
        assert_eq!(
            toks("T-Shirt, it's (blue)!"),
            ["t-shirt", ",", "it's", "(", "blue", ")", "!"]
        );
    }

    #[test]
    fn normalizes_before_lowercasing() {
        assert_eq!(toks("A\u{308}PFEL"), ["\u{e4}pfel"]);
    }

    #[test]
    fn german_quotes() {
        assert_eq!(toks("\u{201e}Hallo\u{201c}"), ["\u{201e}", "hallo", "\u{201c}"]);
    }
}
