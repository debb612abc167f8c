//! Lexer for the expression grammar. Every token carries its byte offset.

use super::{ParseError, ParseErrorKind};

#[derive(Clone, Debug, PartialEq)]
pub(super) enum Tok {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Eof,
}

#[derive(Clone, Debug)]
pub(super) struct Token {
    pub tok: Tok,
    pub offset: usize,
}

pub(super) fn lex(source: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                i += 1;
            }
            '+' => {
                tokens.push(Token { tok: Tok::Plus, offset: start });
                i += 1;
            }
            '-' => {
                tokens.push(Token { tok: Tok::Minus, offset: start });
                i += 1;
            }
            '*' => {
                tokens.push(Token { tok: Tok::Star, offset: start });
                i += 1;
            }
            '/' => {
                tokens.push(Token { tok: Tok::Slash, offset: start });
                i += 1;
            }
            '^' => {
                tokens.push(Token { tok: Tok::Caret, offset: start });
                i += 1;
            }
            '(' => {
                tokens.push(Token { tok: Tok::LParen, offset: start });
                i += 1;
            }
            ')' => {
                tokens.push(Token { tok: Tok::RParen, offset: start });
                i += 1;
            }
            ',' => {
                tokens.push(Token { tok: Tok::Comma, offset: start });
                i += 1;
            }
            '0'..='9' | '.' => {
                i = scan_number(bytes, start)?;
                let text = &source[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError {
                    offset: start,
                    kind: ParseErrorKind::BadNumber(text.to_string()),
                })?;
                tokens.push(Token { tok: Tok::Number(value), offset: start });
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                tokens.push(Token {
                    tok: Tok::Ident(source[start..i].to_string()),
                    offset: start,
                });
            }
            other => {
                return Err(ParseError {
                    offset: start,
                    kind: ParseErrorKind::UnexpectedChar(other),
                });
            }
        }
    }
    tokens.push(Token { tok: Tok::Eof, offset: bytes.len() });
    Ok(tokens)
}

// digits [ '.' digits ] [ ('e'|'E') ['+'|'-'] digits ]
fn scan_number(bytes: &[u8], start: usize) -> Result<usize, ParseError> {
    let mut i = start;
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
    if i == start {
        return Err(ParseError {
            offset: start,
            kind: ParseErrorKind::BadNumber(".".to_string()),
        });
    }
    Ok(i)
}
