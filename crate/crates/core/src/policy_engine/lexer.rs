use super::ast::Span;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    /// Bare word: keyword or unquoted identifier.
    Word(String),
    QuotedIdent(String),
    Number(String),
    String(String),
    Symbol(&'static str),
    Semicolon,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.kind, TokenKind::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            TokenKind::Word(w) => format!("'{w}'"),
            TokenKind::QuotedIdent(w) => format!("identifier \"{w}\""),
            TokenKind::Number(n) => format!("number {n}"),
            TokenKind::String(_) => "string literal".to_string(),
            TokenKind::Symbol(s) => format!("'{s}'"),
            TokenKind::Semicolon => "';'".to_string(),
            TokenKind::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexError {
    pub offset: usize,
    pub message: String,
}

const RESERVED: &[&str] = &[
    "ALL", "AND", "AS", "ASC", "BETWEEN", "BY", "CASE", "CAST", "COLLATE", "CROSS", "DESC",
    "DISTINCT", "ELSE", "END", "ESCAPE", "EXCEPT", "EXISTS", "FALSE", "FILTER", "FROM", "FULL",
    "GLOB", "GROUP", "HAVING", "IN", "INNER", "INTERSECT", "IS", "ISNULL", "JOIN", "LEFT", "LIKE",
    "LIMIT", "NATURAL", "NOT", "NOTNULL", "NULL", "OFFSET", "ON", "OR", "ORDER", "OUTER", "OVER",
    "RIGHT", "SELECT", "THEN", "TRUE", "UNION", "USING", "WHEN", "WHERE", "WINDOW", "WITH",
];

pub fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|kw| kw.eq_ignore_ascii_case(word))
}

const SYMBOLS: &[&str] = &[
    "<>", "<=", ">=", "!=", "==", "||", "<<", ">>", "(", ")", ",", ".", "*", "+", "-", "/", "%",
    "=", "<", ">", "&", "|", "~",
];

pub fn tokenize(text: &str) -> Result<Vec<Token>, LexError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
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
                    return Err(LexError {
                        offset: start,
                        message: "unterminated block comment".to_string(),
                    });
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Word(text[start..i].to_string()),
                span: Span::new(start, i),
            });
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                return Err(LexError {
                    offset: i,
                    message: "malformed numeric literal".to_string(),
                });
            }
            tokens.push(Token {
                kind: TokenKind::Number(text[start..i].to_string()),
                span: Span::new(start, i),
            });
            continue;
        }
        match c {
            b'\'' => {
                let (value, end) = quoted(text, start, b'\'', b'\'')?;
                tokens.push(Token {
                    kind: TokenKind::String(value),
                    span: Span::new(start, end),
                });
                i = end;
            }
            b'"' | b'`' => {
                let (value, end) = quoted(text, start, c, c)?;
                tokens.push(Token {
                    kind: TokenKind::QuotedIdent(value),
                    span: Span::new(start, end),
                });
                i = end;
            }
            b'[' => {
                let (value, end) = quoted(text, start, b'[', b']')?;
                tokens.push(Token {
                    kind: TokenKind::QuotedIdent(value),
                    span: Span::new(start, end),
                });
                i = end;
            }
            b';' => {
                tokens.push(Token {
                    kind: TokenKind::Semicolon,
                    span: Span::new(start, start + 1),
                });
                i += 1;
            }
            _ => {
                let rest = &text[i..];
                match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
                    Some(sym) => {
                        tokens.push(Token {
                            kind: TokenKind::Symbol(sym),
                            span: Span::new(start, start + sym.len()),
                        });
                        i += sym.len();
                    }
                    None => {
                        let ch = rest.chars().next().unwrap_or('?');
                        return Err(LexError {
                            offset: start,
                            message: format!("unexpected character '{ch}'"),
                        });
                    }
                }
            }
        }
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        span: Span::new(text.len(), text.len()),
    });
    Ok(tokens)
}

/// Reads a quoted run starting at `start`; a doubled closing quote escapes
/// itself. Returns the unescaped value and the end offset.
fn quoted(text: &str, start: usize, open: u8, close: u8) -> Result<(String, usize), LexError> {
    let bytes = text.as_bytes();
    debug_assert_eq!(bytes[start], open);
    let mut value = String::new();
    let mut i = start + 1;
    let mut run_start = i;
    while i < bytes.len() {
        if bytes[i] == close {
            if open == close && bytes.get(i + 1) == Some(&close) {
                value.push_str(&text[run_start..=i]);
                i += 2;
                run_start = i;
                continue;
            }
            value.push_str(&text[run_start..i]);
            return Ok((value, i + 1));
        }
        i += 1;
    }
    Err(LexError {
        offset: start,
        message: "unterminated quoted token".to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(text: &str) -> Vec<TokenKind> {
        tokenize(text).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn words_symbols_and_literals() {
        assert_eq!(
            kinds("SELECT a>=1.5, 'it''s' -- trailing\n;"),
            vec![
                TokenKind::Word("SELECT".into()),
                TokenKind::Word("a".into()),
                TokenKind::Symbol(">="),
                TokenKind::Number("1.5".into()),
                TokenKind::Symbol(","),
                TokenKind::String("it's".into()),
                TokenKind::Semicolon,
                TokenKind::Eof,
            ]
        );
    }

    #[test]
    fn quoted_identifiers() {
        assert_eq!(
            kinds(r#""glyburide-metformin" [x y] `z`"#),
            vec![
                TokenKind::QuotedIdent("glyburide-metformin".into()),
                TokenKind::QuotedIdent("x y".into()),
                TokenKind::QuotedIdent("z".into()),
                TokenKind::Eof,
            ]
        );
    }

    #[test]
    fn unterminated_string_is_an_error() {
        let err = tokenize("SELECT 'abc").unwrap_err();
        assert_eq!(err.offset, 7);
    }

    #[test]
    fn block_comments_are_skipped() {
        assert_eq!(
            kinds("/* hi */ 1"),
            vec![TokenKind::Number("1".into()), TokenKind::Eof]
        );
        assert!(tokenize("/* open").is_err());
    }

    #[test]
    fn parameters_are_rejected() {
        assert!(tokenize("SELECT ?").is_err());
    }
}
