use super::SqlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuoteStyle {
    Backtick,
    Double,
    Bracket,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Word(String),
    Quoted { text: String, style: QuoteStyle },
    Str(String),
    Num(String),
    Blob(String),
    Param(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub offset: usize,
    pub len: usize,
}

const SYMBOLS: &[&str] = &[
    "->>", "||", "<=", ">=", "==", "!=", "<>", "<<", ">>", "->", "(", ")", ",", ".", ";", "+", "-",
    "*", "/", "%", "<", ">", "=", "&", "|", "~",
];

/// Words that cannot appear as bare column names or implicit aliases.
const RESERVED: &[&str] = &[
    "ALL", "AND", "AS", "ASC", "BETWEEN", "BY", "CASE", "CAST", "COLLATE", "CREATE", "CROSS",
    "DESC", "DISTINCT", "ELSE", "END", "ESCAPE", "EXCEPT", "EXISTS", "FROM", "FULL", "GLOB",
    "GROUP", "HAVING", "IN", "INNER", "INTERSECT", "IS", "ISNULL", "JOIN", "LEFT", "LIKE",
    "LIMIT", "MATCH", "NATURAL", "NOT", "NOTNULL", "NULL", "OFFSET", "ON", "OR", "ORDER",
    "OUTER", "REGEXP", "RIGHT", "SELECT", "TABLE", "THEN", "UNION", "USING", "VALUES", "WHEN",
    "WHERE", "WINDOW", "WITH",
];

pub fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(word))
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || !c.is_ascii()
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$' || !c.is_ascii()
}

/// Splits SQL text into tokens, dropping whitespace and comments.
pub fn tokenize(src: &str) -> Result<Vec<Token>, SqlError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < src.len() {
        let c = src[i..].chars().next().unwrap();
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if src[i..].starts_with("--") {
            i = src[i..].find('\n').map_or(src.len(), |n| i + n + 1);
            continue;
        }
        if src[i..].starts_with("/*") {
            i = match src[i + 2..].find("*/") {
                Some(n) => i + 2 + n + 2,
                None => return Err(SqlError::syntax(src, i, "unterminated block comment")),
            };
            continue;
        }
        let start = i;
        let tok = match c {
            '\'' => {
                let (text, end) = quoted(src, i, '\'', '\'')?;
                i = end;
                Tok::Str(text)
            }
            '`' => {
                let (text, end) = quoted(src, i, '`', '`')?;
                i = end;
                Tok::Quoted { text, style: QuoteStyle::Backtick }
            }
            '"' => {
                let (text, end) = quoted(src, i, '"', '"')?;
                i = end;
                Tok::Quoted { text, style: QuoteStyle::Double }
            }
            '[' => {
                let end = src[i..]
                    .find(']')
                    .map(|n| i + n)
                    .ok_or_else(|| SqlError::syntax(src, i, "unterminated [identifier]"))?;
                let text = src[i + 1..end].to_string();
                i = end + 1;
                Tok::Quoted { text, style: QuoteStyle::Bracket }
            }
            'x' | 'X' if bytes.get(i + 1) == Some(&b'\'') => {
                let (text, end) = quoted(src, i + 1, '\'', '\'')?;
                i = end;
                Tok::Blob(text)
            }
            '0'..='9' => {
                i = number_end(src, i);
                Tok::Num(src[start..i].to_string())
            }
            '.' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                i = number_end(src, i);
                Tok::Num(src[start..i].to_string())
            }
            '?' | ':' | '@' | '$' => {
                i += 1;
                while i < src.len() && src[i..].chars().next().is_some_and(is_ident_char) {
                    i += 1;
                }
                Tok::Param(src[start..i].to_string())
            }
            c if is_ident_start(c) => {
                while i < src.len() {
                    let ch = src[i..].chars().next().unwrap();
                    if !is_ident_char(ch) {
                        break;
                    }
                    i += ch.len_utf8();
                }
                Tok::Word(src[start..i].to_string())
            }
            _ => match SYMBOLS.iter().find(|s| src[i..].starts_with(**s)) {
                Some(sym) => {
                    i += sym.len();
                    Tok::Sym(sym)
                }
                None => return Err(SqlError::syntax(src, i, format!("unexpected character {c:?}"))),
            },
        };
        out.push(Token { tok, offset: start, len: i - start });
    }
    out.push(Token { tok: Tok::Eof, offset: src.len(), len: 0 });
    Ok(out)
}

/// Reads a quoted run starting at `start` (the opening quote); a doubled
/// closing quote is an escaped quote. Returns the unescaped text and the
/// offset after the closing quote.
fn quoted(src: &str, start: usize, open: char, close: char) -> Result<(String, usize), SqlError> {
    debug_assert!(src[start..].starts_with(open));
    let mut text = String::new();
    let mut i = start + open.len_utf8();
    loop {
        let Some(ch) = src[i..].chars().next() else {
            return Err(SqlError::syntax(src, start, "unterminated quoted text"));
        };
        i += ch.len_utf8();
        if ch == close {
            if src[i..].starts_with(close) {
                text.push(close);
                i += close.len_utf8();
            } else {
                return Ok((text, i));
            }
        } else {
            text.push(ch);
        }
    }
}

fn number_end(src: &str, start: usize) -> usize {
    let b = src.as_bytes();
    let mut i = start;
    if b[i] == b'0' && matches!(b.get(i + 1), Some(b'x') | Some(b'X')) {
        i += 2;
        while i < b.len() && b[i].is_ascii_hexdigit() {
            i += 1;
        }
        return i;
    }
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        if j < b.len() && b[j].is_ascii_digit() {
            i = j;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn quoting_styles() {
        assert_eq!(
            toks("`a``b` \"c\"\"d\" [e f] 'g''h'"),
            vec![
                Tok::Quoted { text: "a`b".into(), style: QuoteStyle::Backtick },
                Tok::Quoted { text: "c\"d".into(), style: QuoteStyle::Double },
                Tok::Quoted { text: "e f".into(), style: QuoteStyle::Bracket },
                Tok::Str("g'h".into()),
                Tok::Eof,
            ]
        );
    }

    #[test]
    fn comments_and_numbers() {
        assert_eq!(
            toks("1.5e3 -- x\n.5 /* y */ 0x1F x'ab'"),
            vec![
                Tok::Num("1.5e3".into()),
                Tok::Num(".5".into()),
                Tok::Num("0x1F".into()),
                Tok::Blob("ab".into()),
                Tok::Eof,
            ]
        );
    }

    #[test]
    fn longest_symbol_wins() {
        assert_eq!(
            toks("a<>b||c<=d"),
            vec![
                Tok::Word("a".into()),
                Tok::Sym("<>"),
                Tok::Word("b".into()),
                Tok::Sym("||"),
                Tok::Word("c".into()),
                Tok::Sym("<="),
                Tok::Word("d".into()),
                Tok::Eof,
            ]
        );
    }

    #[test]
    fn unterminated_string_reports_position() {
        match tokenize("SELECT 'abc") {
            Err(SqlError::Syntax { offset, line, column, .. }) => {
                assert_eq!((offset, line, column), (7, 1, 8));
            }
            other => panic!("{other:?}"),
        }
    }
}
