//! A small lexical scanner for SQL text.
//!
//! This is not a parser. It splits statement text into identifier, keyword,
//! literal and punctuation tokens while skipping comments, which is enough for
//! the lexical checks done elsewhere in the crate: statement classification,
//! `LIMIT` detection, feature-query anchoring and the row-identifier audit.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    /// Bare word: keyword or unquoted identifier.
    Word,
    /// `"quoted"`, `` `quoted` `` or `[quoted]` identifier, unquoted text stored.
    QuotedIdent,
    /// `'string literal'`, unquoted text stored.
    Str,
    Number,
    /// Any single punctuation/operator character (`.`, `,`, `(`, `;`, ...).
    Punct(char),
    /// Multi-character operator such as `!=`, `<=`, `||`.
    Op,
    /// Bind parameter (`?`, `:name`, `$1`).
    Param,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Parenthesis nesting depth at which the token appears.
    pub depth: usize,
}

impl Token {
    /// True for a bare word equal to `kw`, ignoring ASCII case.
    pub fn is_word(&self, kw: &str) -> bool {
        self.kind == TokenKind::Word && self.text.eq_ignore_ascii_case(kw)
    }

    /// True for a bare or quoted identifier equal to `name`, ignoring ASCII case.
    pub fn is_ident(&self, name: &str) -> bool {
        matches!(self.kind, TokenKind::Word | TokenKind::QuotedIdent) && self.text.eq_ignore_ascii_case(name)
    }

    pub fn is_punct(&self, c: char) -> bool {
        self.kind == TokenKind::Punct(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub message: String,
    pub offset: usize,
}

impl fmt::Display for LexError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}", self.message, self.offset)
    }
}

impl std::error::Error for LexError {}

/// Tokenize `sql`. Comments and whitespace are dropped.
pub fn tokenize(sql: &str) -> Result<Vec<Token>, LexError> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            let start = i;
            i += 2;
            loop {
                if i + 1 >= bytes.len() {
                    return Err(LexError { message: "unterminated block comment".into(), offset: start });
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }
        match c {
            b'\'' => {
                let (text, next) = quoted(sql, i, b'\'', b'\'')?;
                out.push(Token { kind: TokenKind::Str, text, depth });
                i = next;
            }
            b'"' => {
                let (text, next) = quoted(sql, i, b'"', b'"')?;
                out.push(Token { kind: TokenKind::QuotedIdent, text, depth });
                i = next;
            }
            b'`' => {
                let (text, next) = quoted(sql, i, b'`', b'`')?;
                out.push(Token { kind: TokenKind::QuotedIdent, text, depth });
                i = next;
            }
            b'[' => {
                let (text, next) = quoted(sql, i, b'[', b']')?;
                out.push(Token { kind: TokenKind::QuotedIdent, text, depth });
                i = next;
            }
            b'(' => {
                out.push(Token { kind: TokenKind::Punct('('), text: "(".into(), depth });
                depth += 1;
                i += 1;
            }
            b')' => {
                depth = depth.saturating_sub(1);
                out.push(Token { kind: TokenKind::Punct(')'), text: ")".into(), depth });
                i += 1;
            }
            b'?' | b':' | b'$' | b'@'
                if c == b'?' || bytes.get(i + 1).is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_') =>
            {
                let start = i;
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token { kind: TokenKind::Param, text: sql[start..i].to_string(), depth });
            }
            _ if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric()
                        || bytes[i] == b'.'
                        || ((bytes[i] == b'+' || bytes[i] == b'-') && matches!(bytes[i - 1], b'e' | b'E')))
                {
                    i += 1;
                }
                out.push(Token { kind: TokenKind::Number, text: sql[start..i].to_string(), depth });
            }
            _ if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] >= 0x80) {
                    i += 1;
                }
                out.push(Token { kind: TokenKind::Word, text: sql[start..i].to_string(), depth });
            }
            _ => {
                let two = sql.get(i..i + 2).unwrap_or("");
                if matches!(two, "!=" | "<>" | "<=" | ">=" | "==" | "||" | "<<" | ">>" | "::" | "->") {
                    out.push(Token { kind: TokenKind::Op, text: two.to_string(), depth });
                    i += 2;
                } else {
                    let ch = sql[i..].chars().next().unwrap_or('?');
                    out.push(Token { kind: TokenKind::Punct(ch), text: ch.to_string(), depth });
                    i += ch.len_utf8();
                }
            }
        }
    }
    Ok(out)
}

fn quoted(sql: &str, start: usize, open: u8, close: u8) -> Result<(String, usize), LexError> {
    let bytes = sql.as_bytes();
    debug_assert_eq!(bytes[start], open);
    let mut text = String::new();
    let mut i = start + 1;
    let mut seg = i;
    while i < bytes.len() {
        if bytes[i] == close {
            // doubled closing quote is an escaped quote, except for [ ] brackets
            if open == close && bytes.get(i + 1) == Some(&close) {
                text.push_str(&sql[seg..=i]);
                i += 2;
                seg = i;
                continue;
            }
            text.push_str(&sql[seg..i]);
            return Ok((text, i + 1));
        }
        i += 1;
    }
    Err(LexError { message: "unterminated quoted token".into(), offset: start })
}

/// Split tokens into statements on depth-0 semicolons, dropping empty ones.
pub fn statements(tokens: &[Token]) -> Vec<&[Token]> {
    tokens.split(|t| t.is_punct(';') && t.depth == 0).filter(|s| !s.is_empty()).collect()
}

/// True when the statement has a `LIMIT` clause at top level.
pub fn has_top_level_limit(tokens: &[Token]) -> bool {
    tokens.iter().any(|t| t.depth == 0 && t.is_word("limit"))
}
