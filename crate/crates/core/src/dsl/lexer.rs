use super::DslError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    /// Digit-led run: numbers, dates, `2000-03-14T10:30`.
    Lit(String),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const SYMBOLS: [&str; 32] = [
    "::", "<=", ">=", "!=", "<>", "η⁻¹", "{", "}", "(", ")", "[", "]", "<", ">", ",", ";", ":", "=", ".", "∈", "≠",
    "≤", "≥", "π", "μ", "α", "σ", "⋈", "η", "∪", "∩", "Λ",
];
const MORE_SYMBOLS: [&str; 2] = ["Σ", "−"];

fn is_lit_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | ':' | '.' | '+')
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, DslError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for k in 0..n {
            if chars[*i + k] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
        }
        *i += n;
    };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            advance(&mut i, &mut line, &mut col, 2);
            loop {
                if i + 1 >= chars.len() {
                    return Err(DslError::syntax(l0, c0, "unterminated comment"));
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    advance(&mut i, &mut line, &mut col, 2);
                    break;
                }
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        if c.is_alphabetic() && !is_greek_operator(c) || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') && !is_greek_operator(chars[i]) {
                advance(&mut i, &mut line, &mut col, 1);
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), line: l0, col: c0 });
            continue;
        }
        let neg = c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit());
        if c.is_ascii_digit() || neg {
            let start = i;
            advance(&mut i, &mut line, &mut col, 1);
            while i < chars.len() && is_lit_char(chars[i]) {
                if chars[i] == ':' && chars.get(i + 1) == Some(&':') {
                    break;
                }
                advance(&mut i, &mut line, &mut col, 1);
            }
            out.push(Token { tok: Tok::Lit(chars[start..i].iter().collect()), line: l0, col: c0 });
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            advance(&mut i, &mut line, &mut col, 1);
            loop {
                let Some(&d) = chars.get(i) else {
                    return Err(DslError::syntax(l0, c0, "unterminated string"));
                };
                advance(&mut i, &mut line, &mut col, 1);
                match d {
                    '"' => break,
                    '\\' => {
                        let Some(&e) = chars.get(i) else {
                            return Err(DslError::syntax(l0, c0, "unterminated string"));
                        };
                        advance(&mut i, &mut line, &mut col, 1);
                        match e {
                            'n' => s.push('\n'),
                            't' => s.push('\t'),
                            'r' => s.push('\r'),
                            '"' | '\\' | '/' => s.push(e),
                            'u' => {
                                let hex: String = chars.get(i..i + 4).map(|h| h.iter().collect()).unwrap_or_default();
                                let ch = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32);
                                let Some(ch) = ch else {
                                    return Err(DslError::syntax(line, col, "bad \\u escape"));
                                };
                                advance(&mut i, &mut line, &mut col, 4);
                                s.push(ch);
                            }
                            other => return Err(DslError::syntax(line, col, format!("bad escape `\\{other}`"))),
                        }
                    }
                    other => s.push(other),
                }
            }
            out.push(Token { tok: Tok::Str(s), line: l0, col: c0 });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        let sym = SYMBOLS.iter().chain(MORE_SYMBOLS.iter()).find(|s| rest.starts_with(**s));
        match sym {
            Some(s) => {
                advance(&mut i, &mut line, &mut col, s.chars().count());
                out.push(Token { tok: Tok::Sym(s), line: l0, col: c0 });
            }
            None => return Err(DslError::syntax(l0, c0, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

fn is_greek_operator(c: char) -> bool {
    matches!(c, 'π' | 'μ' | 'α' | 'σ' | 'η' | 'Λ' | 'Σ')
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn dates_and_numbers_are_single_literals() {
        assert_eq!(
            toks("jour:2000-03-14 -5 3.25"),
            vec![
                Tok::Ident("jour".into()),
                Tok::Sym(":"),
                Tok::Lit("2000-03-14".into()),
                Tok::Lit("-5".into()),
                Tok::Lit("3.25".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn greek_operators_and_comments() {
        assert_eq!(
            toks("σ[x] // c\n η⁻¹ /* z */ ≥"),
            vec![
                Tok::Sym("σ"),
                Tok::Sym("["),
                Tok::Ident("x".into()),
                Tok::Sym("]"),
                Tok::Sym("η⁻¹"),
                Tok::Sym("≥"),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn positions_are_one_based() {
        let t = tokenize("a\n  b").unwrap();
        assert_eq!((t[1].line, t[1].col), (2, 3));
    }
}
