//! Deterministic code tokenizer used for length statistics, length matching,
//! and the similarity metrics. Identifiers, keywords, numbers, string
//! literals, operators, and the three serialization markers each count as one
//! token. Whitespace and comments are discarded.

pub const MARKERS: [&str; 3] = ["<func>", "<calledby>", "<docstring>"];

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "==", "!=", "<=", ">=", "**", "//", "<<",
    ">>", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "<>",
];

pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() || c == '\\' {
            i += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '<' {
            if let Some(m) = MARKERS.iter().find(|m| starts_with(&chars, i, m)) {
                tokens.push((*m).to_string());
                i += m.chars().count();
                continue;
            }
        }
        if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_continue(chars[i]) {
                i += 1;
            }
            // string prefixes such as r'', b"", f'', rb''
            if i < chars.len() && (chars[i] == '\'' || chars[i] == '"') && i - start <= 2 {
                let prefix: String = chars[start..i].iter().collect::<String>().to_lowercase();
                if prefix.chars().all(|p| matches!(p, 'r' | 'b' | 'u' | 'f')) {
                    let end = scan_string(&chars, i);
                    tokens.push(chars[start..end].iter().collect());
                    i = end;
                    continue;
                }
            }
            tokens.push(chars[start..i].iter().collect());
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let end = scan_number(&chars, i);
            tokens.push(chars[i..end].iter().collect());
            i = end;
            continue;
        }
        if c == '\'' || c == '"' {
            let end = scan_string(&chars, i);
            tokens.push(chars[i..end].iter().collect());
            i = end;
            continue;
        }
        if let Some(op) = OPERATORS.iter().find(|op| starts_with(&chars, i, op)) {
            tokens.push((*op).to_string());
            i += op.len();
            continue;
        }
        tokens.push(c.to_string());
        i += 1;
    }
    tokens
}

pub fn count_tokens(text: &str) -> usize {
    tokenize(text).len()
}

fn starts_with(chars: &[char], at: usize, pat: &str) -> bool {
    pat.chars().enumerate().all(|(i, p)| chars.get(at + i) == Some(&p))
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

fn scan_number(chars: &[char], start: usize) -> usize {
    let mut i = start;
    if chars[i] == '0' && matches!(chars.get(i + 1), Some('x' | 'X' | 'o' | 'O' | 'b' | 'B')) {
        i += 2;
        while i < chars.len() && (chars[i].is_ascii_hexdigit() || chars[i] == '_') {
            i += 1;
        }
        return i;
    }
    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
        i += 1;
    }
    if i < chars.len() && chars[i] == '.' {
        i += 1;
        while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
            i += 1;
        }
    }
    if i < chars.len() && matches!(chars[i], 'e' | 'E') {
        let mut j = i + 1;
        if j < chars.len() && matches!(chars[j], '+' | '-') {
            j += 1;
        }
        if j < chars.len() && chars[j].is_ascii_digit() {
            i = j;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    if i < chars.len() && matches!(chars[i], 'j' | 'J') {
        i += 1;
    }
    i
}

/// Scan a string literal starting at the opening quote. Unterminated
/// single-quoted strings end at the line break.
fn scan_string(chars: &[char], quote_at: usize) -> usize {
    let q = chars[quote_at];
    let triple = chars.get(quote_at + 1) == Some(&q) && chars.get(quote_at + 2) == Some(&q);
    let mut i = quote_at + if triple { 3 } else { 1 };
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' {
            i += 2;
            continue;
        }
        if triple {
            if c == q && chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                return i + 3;
            }
        } else if c == q {
            return i + 1;
        } else if c == '\n' {
            return i;
        }
        i += 1;
    }
    chars.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_assignment() {
        assert_eq!(tokenize("x = 1"), vec!["x", "=", "1"]);
    }

    #[test]
    fn call_with_args() {
        assert_eq!(tokenize("f(a, b)"), vec!["f", "(", "a", ",", "b", ")"]);
    }

    #[test]
    fn strings_numbers_operators() {
        assert_eq!(
            tokenize("y **= 1.5e3 # note\nz = r'a b' + \"\"\"c\nd\"\"\""),
            vec!["y", "**=", "1.5e3", "z", "=", "r'a b'", "+", "\"\"\"c\nd\"\"\""]
        );
    }

    #[test]
    fn markers_are_single_tokens() {
        assert_eq!(
            tokenize("<func>\ndef f():\n<calledby>\n\n<docstring>\n"),
            vec!["<func>", "def", "f", "(", ")", ":", "<calledby>", "<docstring>"]
        );
        assert_eq!(tokenize("a<b"), vec!["a", "<", "b"]);
    }

    const SNIPPETS: &[&str] = &[
        "def f(a, b=2, *args, **kw):\n    return a + b\n",
        "x = {'k': [1, 2.0, 0x1F, 3j]}\nif x['k'] >= 1: pass",
        "class A(B):\n    def m(self):\n        return self.v // 2 ** -1",
        "s = f\"{a!r}\" + b'raw' + u'x'\nlambda q: q := 3",
        "for i in range(10):\n    total += i  # sum\n",
    ];

    #[test]
    fn rejoin_is_idempotent_on_fixture_snippets() {
        for snippet in SNIPPETS {
            let tokens = tokenize(snippet);
            assert_eq!(tokenize(&tokens.join(" ")), tokens, "{snippet}");
        }
    }

    proptest! {
        #[test]
        fn rejoin_idempotent_on_identifier_operator_streams(
            parts in proptest::collection::vec(
                prop_oneof![
                    "[a-z_][a-z0-9_]{0,6}",
                    "[0-9]{1,4}",
                    Just("==".to_string()),
                    Just("(".to_string()),
                    Just(")".to_string()),
                    Just("+".to_string()),
                    Just("'s t'".to_string()),
                ],
                0..30,
            )
        ) {
            let text = parts.join(" ");
            let tokens = tokenize(&text);
            prop_assert_eq!(tokenize(&tokens.join(" ")), tokens);
        }
    }
}
