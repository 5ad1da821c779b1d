//! Low-level text processing: diacritic folding and tokenization.
//!
//! All offsets are Unicode scalar value (char) offsets, half-open.

use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Half-open character range into a document's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Span {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Overlap without either containing the other.
    pub fn crosses(&self, other: &Span) -> bool {
        self.overlaps(other) && !self.contains(other) && !other.contains(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub span: Span,
    pub form: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Tokenized {
    pub tokens: Vec<Token>,
    /// Token-index ranges, one per sentence.
    pub sentences: Vec<Range<usize>>,
}

/// Splits text into tokens and sentences.
///
/// Maximal runs of letters or digits form a token, and a `.` between two
/// digits stays inside the run (`49.5`). Every other non-whitespace char is a
/// token on its own. Sentences end after `.`, `!`, `?` or at a newline.
pub fn tokenize(text: &str) -> Tokenized {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut sentences = Vec::new();
    let mut sentence_start = 0usize;
    let mut i = 0;

    let close_sentence = |tokens: &Vec<Token>, start: &mut usize, out: &mut Vec<Range<usize>>| {
        if tokens.len() > *start {
            out.push(*start..tokens.len());
            *start = tokens.len();
        }
    };

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            if c == '\n' {
                close_sentence(&tokens, &mut sentence_start, &mut sentences);
            }
            i += 1;
            continue;
        }
        let start = i;
        if c.is_alphanumeric() {
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let decimal_point = d == '.'
                    && chars[i - 1].is_ascii_digit()
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
                if d.is_alphanumeric() || decimal_point {
                    i += 1;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
        tokens.push(Token {
            span: Span::new(start, i),
            form: chars[start..i].iter().collect(),
        });
        if matches!(c, '.' | '!' | '?') && i == start + 1 {
            close_sentence(&tokens, &mut sentence_start, &mut sentences);
        }
    }
    close_sentence(&tokens, &mut sentence_start, &mut sentences);
    Tokenized { tokens, sentences }
}

/// Character count of a string.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Substring by character offsets. Panics if out of range.
pub fn char_slice(s: &str, span: Span) -> String {
    s.chars().skip(span.start).take(span.len()).collect()
}

/// Lowercases and strips Latin-1 / Latin Extended-A diacritics.
pub fn fold_diacritics(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars().flat_map(char::to_lowercase) {
        match fold_char(c) {
            Some(rep) => out.push_str(rep),
            None => out.push(c),
        }
    }
    out
}

fn fold_char(c: char) -> Option<&'static str> {
    let rep = match c {
        'à' | 'á' | 'â' | 'ã' | 'ä' | 'å' | 'ā' | 'ă' | 'ą' => "a",
        'æ' => "ae",
        'ç' | 'ć' | 'ĉ' | 'ċ' | 'č' => "c",
        'ď' | 'đ' | 'ð' => "d",
        'è' | 'é' | 'ê' | 'ë' | 'ē' | 'ĕ' | 'ė' | 'ę' | 'ě' => "e",
        'ĝ' | 'ğ' | 'ġ' | 'ģ' => "g",
        'ĥ' | 'ħ' => "h",
        'ì' | 'í' | 'î' | 'ï' | 'ĩ' | 'ī' | 'ĭ' | 'į' | 'ı' => "i",
        'ĳ' => "ij",
        'ĵ' => "j",
        'ķ' | 'ĸ' => "k",
        'ĺ' | 'ļ' | 'ľ' | 'ŀ' | 'ł' => "l",
        'ñ' | 'ń' | 'ņ' | 'ň' | 'ŉ' | 'ŋ' => "n",
        'ò' | 'ó' | 'ô' | 'õ' | 'ö' | 'ø' | 'ō' | 'ŏ' | 'ő' => "o",
        'œ' => "oe",
        'ŕ' | 'ŗ' | 'ř' => "r",
        'ś' | 'ŝ' | 'ş' | 'š' | 'ſ' => "s",
        'ß' => "ss",
        'ţ' | 'ť' | 'ŧ' => "t",
        'þ' => "th",
        'ù' | 'ú' | 'û' | 'ü' | 'ũ' | 'ū' | 'ŭ' | 'ů' | 'ű' | 'ų' => "u",
        'ŵ' => "w",
        'ý' | 'ÿ' | 'ŷ' => "y",
        'ź' | 'ż' | 'ž' => "z",
        _ => return None,
    };
    Some(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn forms(t: &Tokenized) -> Vec<&str> {
        t.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    #[test]
    fn whitespace_split() {
        let t = tokenize("derrame pleural");
        assert_eq!(t.tokens.len(), 2);
        assert_eq!(t.tokens[0].span, Span::new(0, 7));
        assert_eq!(t.tokens[1].span, Span::new(8, 15));
        assert_eq!(t.sentences, vec![0..2]);
    }

    #[test]
    fn lab_report_line() {
        let t = tokenize("Colesterol total : 216 ;");
        assert_eq!(forms(&t), vec!["Colesterol", "total", ":", "216", ";"]);
    }

    #[test]
    fn decimal_point_rule() {
        assert_eq!(forms(&tokenize("49 . 5")), vec!["49", ".", "5"]);
        assert_eq!(forms(&tokenize("49.5")), vec!["49.5"]);
        assert_eq!(forms(&tokenize("fim.5")), vec!["fim", ".", "5"]);
        // only a lone "." closes a sentence
        assert_eq!(tokenize("valor 49.5 hoje").sentences.len(), 1);
    }

    #[test]
    fn sentence_boundaries() {
        let t = tokenize("Sem febre. Tosse seca!\nDispneia ? ok");
        assert_eq!(t.sentences, vec![0..3, 3..6, 6..8, 8..9]);
        assert!(tokenize("").sentences.is_empty());
        assert!(tokenize("  \n ").tokens.is_empty());
    }

    #[test]
    fn char_offsets_with_diacritics() {
        let t = tokenize("função tiroideia");
        assert_eq!(t.tokens[1].span, Span::new(7, 16));
        assert_eq!(char_slice("função tiroideia", t.tokens[0].span), "função");
    }

    #[test]
    fn folding() {
        assert_eq!(fold_diacritics("MEDICAÇÃO"), "medicacao");
        assert_eq!(fold_diacritics("Ünïçødé Œuvre"), "unicode oeuvre");
        assert_eq!(fold_diacritics("Łódź"), "lodz");
    }

    #[test]
    fn span_relations() {
        let a = Span::new(3, 10);
        let b = Span::new(5, 14);
        assert!(a.crosses(&b));
        assert!(!Span::new(0, 10).crosses(&Span::new(2, 5)));
        assert!(!Span::new(0, 2).crosses(&Span::new(2, 5)));
        assert!(!a.crosses(&a));
    }

    proptest! {
        #[test]
        fn tokens_cover_non_whitespace(text in "[a-zç0-9 .,;:!?\n\t-]{0,60}") {
            let t = tokenize(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut covered = vec![false; chars.len()];
            let mut last_end = 0;
            for tok in &t.tokens {
                prop_assert!(tok.span.start >= last_end);
                last_end = tok.span.end;
                for c in &mut covered[tok.span.start..tok.span.end] {
                    prop_assert!(!*c);
                    *c = true;
                }
                prop_assert_eq!(&char_slice(&text, tok.span), &tok.form);
            }
            for (i, c) in chars.iter().enumerate() {
                prop_assert_eq!(covered[i], !c.is_whitespace());
            }
        }

        #[test]
        fn retokenizing_joined_forms_is_stable(text in "[a-zA-Z0-9 .,;:!?\n-]{0,60}") {
            let t = tokenize(&text);
            let joined = t.tokens.iter().map(|t| t.form.as_str()).collect::<Vec<_>>().join(" ");
            let again = tokenize(&joined);
            prop_assert_eq!(forms(&t), forms(&again));
        }

        #[test]
        fn sentences_partition_tokens(text in "[a-z0-9 .!?\n]{0,60}") {
            let t = tokenize(&text);
            let mut next = 0;
            for s in &t.sentences {
                prop_assert_eq!(s.start, next);
                prop_assert!(s.end > s.start);
                next = s.end;
            }
            prop_assert_eq!(next, t.tokens.len());
        }
    }
}
