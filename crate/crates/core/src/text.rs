//! Text normalization helpers.

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Lowercase, strip diacritics, collapse whitespace.
pub fn canonicalize(s: &str) -> String {
    let stripped: String = s.nfd().filter(|c| !is_combining_mark(*c)).collect();
    stripped
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// `"Duration (s)"` -> `"duration_s"`. Returns `None` when nothing usable remains.
pub fn snake_case(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut pending_sep = false;
    for c in canonicalize(s).chars() {
        if c.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(c);
        } else {
            pending_sep = true;
        }
    }
    match out.chars().next() {
        Some(c) if c.is_ascii_lowercase() => Some(out),
        _ => None,
    }
}

pub fn is_snake_case(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "at", "be", "before", "after", "did", "do", "does", "for", "from",
    "have", "has", "had", "how", "i", "in", "is", "it", "me", "my", "of", "on", "or", "so",
    "the", "to", "was", "were", "what", "when", "where", "which", "who", "with", "you", "your",
    "far", "much", "many", "s", "that", "this", "by", "we", "our", "am",
];

pub fn is_stopword(w: &str) -> bool {
    STOPWORDS.contains(&w)
}

/// Lowercased alphanumeric words with stopwords removed.
pub fn content_words(s: &str) -> Vec<String> {
    canonicalize(s)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !is_stopword(w))
        .map(str::to_string)
        .collect()
}

/// Loose word equality: identical, or one is a prefix of the other with a
/// shared stem of at least five characters ("arrived" ~ "arrival").
pub fn words_match(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    let shared = a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count();
    let shortest = a.chars().count().min(b.chars().count());
    shared >= 5 || (shortest >= 4 && shared == shortest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalize_strips_case_space_and_accents() {
        assert_eq!(canonicalize("  Zoë   Ça\tVa "), "zoe ca va");
        assert_eq!(canonicalize("S. Green"), "s. green");
    }

    #[test]
    fn snake_case_keys() {
        assert_eq!(snake_case("Duration (s)").as_deref(), Some("duration_s"));
        assert_eq!(snake_case("Phone Number").as_deref(), Some("phone_number"));
        assert_eq!(snake_case("123"), None);
        assert!(is_snake_case("located_at"));
        assert!(!is_snake_case("LocatedAt"));
    }

    #[test]
    fn content_words_drop_stopwords() {
        assert_eq!(content_words("Did Sarah call before I arrived at work?"), vec!["sarah", "call", "arrived", "work"]);
    }

    #[test]
    fn stems() {
        assert!(words_match("arrived", "arrival"));
        assert!(words_match("call", "calls"));
        assert!(!words_match("car", "card"));
        assert!(!words_match("work", "word"));
    }
}
