//! A small C tokenizer that keeps byte offsets into the original text.
//!
//! Comments and whitespace are dropped; preprocessor lines become a single
//! [`TokKind::Directive`] token so callers can see `#define`s and line
//! markers without the tokens inside them leaking into the token stream.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokKind {
    Ident,
    Number,
    Str,
    Char,
    Punct,
    Directive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }

    pub fn is(&self, src: &str, s: &str) -> bool {
        self.text(src) == s
    }
}

const PUNCT3: [&str; 3] = ["<<=", ">>=", "..."];
const PUNCT2: [&str; 20] = [
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", "##",
];

pub fn tokenize(src: &str) -> Vec<Token> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    // true while only whitespace has been seen since the last newline
    let mut line_start = true;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line_start = true;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                i += 1;
            }
            i = (i + 2).min(bytes.len());
            continue;
        }
        let start = i;
        if c == b'#' && line_start {
            // directive runs to end of line, honoring backslash continuations
            while i < bytes.len() {
                if bytes[i] == b'\\' && bytes.get(i + 1) == Some(&b'\n') {
                    i += 2;
                    continue;
                }
                if bytes[i] == b'\\' && bytes.get(i + 1) == Some(&b'\r') && bytes.get(i + 2) == Some(&b'\n') {
                    i += 3;
                    continue;
                }
                if bytes[i] == b'\n' {
                    break;
                }
                if bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'*') {
                    // block comment inside a directive may span lines
                    i += 2;
                    while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                        i += 1;
                    }
                    i = (i + 2).min(bytes.len());
                    continue;
                }
                i += 1;
            }
            let mut end = i;
            while end > start && (bytes[end - 1] == b'\r' || bytes[end - 1] == b' ' || bytes[end - 1] == b'\t') {
                end -= 1;
            }
            out.push(Token { kind: TokKind::Directive, start, end });
            continue;
        }
        line_start = false;
        if c == b'_' || c.is_ascii_alphabetic() {
            while i < bytes.len() && (bytes[i] == b'_' || bytes[i].is_ascii_alphanumeric() || bytes[i] == b'$') {
                i += 1;
            }
            out.push(Token { kind: TokKind::Ident, start, end: i });
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
            while i < bytes.len() {
                let b = bytes[i];
                let exponent_sign = (b == b'+' || b == b'-') && matches!(bytes[i - 1], b'e' | b'E' | b'p' | b'P');
                if b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || exponent_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(Token { kind: TokKind::Number, start, end: i });
            continue;
        }
        if c == b'"' || c == b'\'' {
            i += 1;
            while i < bytes.len() && bytes[i] != c && bytes[i] != b'\n' {
                if bytes[i] == b'\\' {
                    i += 1;
                }
                i += 1;
            }
            i = (i + 1).min(bytes.len());
            let kind = if c == b'"' { TokKind::Str } else { TokKind::Char };
            out.push(Token { kind, start, end: i });
            continue;
        }
        let rest = &src[i..];
        let len = if PUNCT3.iter().any(|p| rest.starts_with(p)) {
            3
        } else if PUNCT2.iter().any(|p| rest.starts_with(p)) {
            2
        } else {
            // one char; step over full UTF-8 sequences
            rest.chars().next().map_or(1, char::len_utf8)
        };
        i += len;
        out.push(Token { kind: TokKind::Punct, start, end: i });
    }
    out
}

/// Byte offsets where each line starts; line `n` (1-based) begins at `starts[n-1]`.
pub fn line_starts(src: &str) -> Vec<usize> {
    let mut v = alloc::vec![0];
    v.extend(src.bytes().enumerate().filter(|(_, b)| *b == b'\n').map(|(i, _)| i + 1));
    v
}

/// 1-based line of a byte offset.
pub fn line_of(starts: &[usize], offset: usize) -> usize {
    match starts.binary_search(&offset) {
        Ok(i) => i + 1,
        Err(i) => i,
    }
}

/// Index of the token closing the group opened at `open`, if balanced.
pub fn matching(src: &str, toks: &[Token], open: usize) -> Option<usize> {
    let (o, c) = match toks[open].text(src) {
        "(" => ("(", ")"),
        "[" => ("[", "]"),
        "{" => ("{", "}"),
        _ => return None,
    };
    let mut depth = 0usize;
    for (j, t) in toks.iter().enumerate().skip(open) {
        if t.kind != TokKind::Punct {
            continue;
        }
        let s = t.text(src);
        if s == o {
            depth += 1;
        } else if s == c {
            depth -= 1;
            if depth == 0 {
                return Some(j);
            }
        }
    }
    None
}

pub const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum",
    "extern", "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict",
    "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef", "union",
    "unsigned", "void", "volatile", "while", "_Bool", "_Complex", "_Noreturn", "_Alignas",
    "_Alignof", "_Atomic", "_Static_assert", "_Thread_local", "__inline", "__inline__",
    "__restrict", "__restrict__", "__const", "__volatile__", "__extension__", "__attribute__",
    "__attribute", "__asm__", "__asm", "asm", "typeof", "__typeof__", "__typeof", "__signed__",
    "__builtin_va_list", "__builtin_offsetof", "_Generic", "__declspec", "__int128",
];

/// Keywords that name or qualify a type.
pub const TYPE_WORDS: &[&str] = &[
    "char", "const", "double", "float", "int", "long", "short", "signed", "unsigned", "void",
    "volatile", "_Bool", "_Complex", "_Atomic", "__int128", "restrict", "__restrict",
    "__restrict__", "__const", "__signed__", "static", "extern", "register", "inline", "auto",
    "__inline", "__inline__", "_Noreturn", "__extension__", "struct", "union", "enum",
    "__builtin_va_list", "_Thread_local",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

pub fn is_type_word(s: &str) -> bool {
    TYPE_WORDS.contains(&s)
}

/// Whether `word` occurs in `text` as a whole identifier.
pub fn contains_word(text: &str, word: &str) -> bool {
    find_word(text, word, 0).is_some()
}

/// Byte offset of the next whole-identifier occurrence of `word` at or after `from`.
pub fn find_word(text: &str, word: &str, from: usize) -> Option<usize> {
    if word.is_empty() {
        return None;
    }
    let bytes = text.as_bytes();
    let is_id = |b: u8| b == b'_' || b.is_ascii_alphanumeric();
    let mut pos = from;
    while let Some(rel) = text.get(pos..)?.find(word) {
        let at = pos + rel;
        let end = at + word.len();
        let before_ok = at == 0 || !is_id(bytes[at - 1]);
        let after_ok = end >= bytes.len() || !is_id(bytes[end]);
        if before_ok && after_ok {
            return Some(at);
        }
        pos = at + 1;
    }
    None
}

/// Replace whole-identifier occurrences of `word` with `with`.
pub fn replace_word(text: &str, word: &str, with: &str) -> alloc::string::String {
    let mut out = alloc::string::String::with_capacity(text.len());
    let mut last = 0;
    let mut from = 0;
    while let Some(at) = find_word(text, word, from) {
        out.push_str(&text[last..at]);
        out.push_str(with);
        last = at + word.len();
        from = last;
    }
    out.push_str(&text[last..]);
    out
}

/// Collapse runs of whitespace to single spaces.
pub fn squash_ws(text: &str) -> alloc::string::String {
    let mut out = alloc::string::String::with_capacity(text.len());
    for (i, part) in text.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(part);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn texts(src: &str) -> Vec<&str> {
        tokenize(src).iter().map(|t| t.text(src)).collect()
    }

    #[test]
    fn skips_comments_and_keeps_offsets() {
        let src = "int /* c */ x = a->b; // tail\n";
        assert_eq!(texts(src), ["int", "x", "=", "a", "->", "b", ";"]);
    }

    #[test]
    fn directives_are_single_tokens() {
        let src = "#define MAX(a, b) \\\n  ((a) > (b))\nint y;";
        let toks = tokenize(src);
        assert_eq!(toks[0].kind, TokKind::Directive);
        assert!(toks[0].text(src).ends_with("((a) > (b))"));
        assert_eq!(toks[1].text(src), "int");
    }

    #[test]
    fn hash_inside_line_is_punct() {
        assert_eq!(texts("a # b"), ["a", "#", "b"]);
    }

    #[test]
    fn strings_with_escapes() {
        let src = r#"f("a\"b", '\'');"#;
        assert_eq!(texts(src), ["f", "(", r#""a\"b""#, ",", r"'\''", ")", ";"]);
    }

    #[test]
    fn numbers_with_exponents() {
        assert_eq!(texts("1e+5 0x1fUL .5"), ["1e+5", "0x1fUL", ".5"]);
    }

    #[test]
    fn word_helpers() {
        assert!(contains_word("p->q + q2", "q"));
        assert!(!contains_word("qq + q2", "q"));
        assert_eq!(replace_word("q + q2 + (q)", "q", "p"), "p + q2 + (p)");
    }

    #[test]
    fn lines() {
        let s = "a\nb\n\nc";
        let ls = line_starts(s);
        assert_eq!(line_of(&ls, 0), 1);
        assert_eq!(line_of(&ls, 2), 2);
        assert_eq!(line_of(&ls, 5), 4);
    }
}
