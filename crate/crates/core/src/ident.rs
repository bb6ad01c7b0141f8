//! Identifier normalization shared by schema lookup, SQL resolution and
//! response parsing. Comparisons are case-insensitive with surrounding
//! quotes stripped; stored names keep their original casing.

/// Strips one layer of surrounding backticks, double quotes or brackets.
pub fn strip_quotes(raw: &str) -> &str {
    let s = raw.trim();
    let bytes = s.as_bytes();
    if bytes.len() >= 2 {
        let (first, last) = (bytes[0], bytes[bytes.len() - 1]);
        if (first == b'`' && last == b'`')
            || (first == b'"' && last == b'"')
            || (first == b'[' && last == b']')
        {
            return &s[1..s.len() - 1];
        }
    }
    s
}

/// Canonical comparison key for an identifier.
pub fn normalize(raw: &str) -> String {
    strip_quotes(raw).trim().to_lowercase()
}

pub fn eq(a: &str, b: &str) -> bool {
    normalize(a) == normalize(b)
}

/// True when the identifier can be written bare in SQLite DDL.
pub fn is_plain(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !crate::sql::lexer::is_reserved(name)
        && !DDL_KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(name))
}

/// Words that start a constraint in a column definition.
const DDL_KEYWORDS: &[&str] = &[
    "CHECK", "CONSTRAINT", "DEFAULT", "FOREIGN", "GENERATED", "PRIMARY", "REFERENCES", "UNIQUE",
];

/// Renders an identifier for SQL text, backtick-quoting when required.
pub fn quote_if_needed(name: &str) -> String {
    if is_plain(name) {
        name.to_string()
    } else {
        format!("`{}`", name.replace('`', "``"))
    }
}
