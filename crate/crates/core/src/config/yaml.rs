//! Parser and emitter for the YAML subset used by configuration files:
//! block mappings and sequences, flow `[..]`/`{..}` collections, quoted and
//! plain scalars, and comments. Anchors, aliases, tags, block scalars and
//! multi-document streams are rejected.

use super::{format_float, quote_json, ConfigNode, Mapping};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Line {
    number: usize,
    indent: usize,
    text: String,
}

/// Parses a YAML document. An empty document yields an empty mapping.
pub fn parse_yaml(text: &str) -> Result<ConfigNode> {
    let lines = split_lines(text)?;
    if lines.is_empty() {
        return Ok(ConfigNode::empty_map());
    }
    let mut parser = BlockParser { lines, pos: 0 };
    let indent = parser.lines[0].indent;
    let node = parser.parse_block(indent)?;
    if let Some(line) = parser.lines.get(parser.pos) {
        return Err(syntax(line.number, line.indent + 1, "unexpected indentation"));
    }
    Ok(node)
}

/// Parses a single inline value (as found on the right of `key:`), e.g. an
/// override value or a sweep axis entry.
pub fn parse_value(text: &str) -> Result<ConfigNode> {
    parse_inline(text.trim(), 1, 1)
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn split_lines(text: &str) -> Result<Vec<Line>> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let number = i + 1;
        let content = strip_comment(raw);
        let trimmed = content.trim_end();
        if trimmed.trim().is_empty() {
            continue;
        }
        let indent = trimmed.len() - trimmed.trim_start_matches(' ').len();
        let body = &trimmed[indent..];
        if body.starts_with('\t') {
            return Err(syntax(number, indent + 1, "tabs are not allowed in indentation"));
        }
        if indent == 0 && (body == "---" || body.starts_with("--- ") || body == "...") {
            return Err(Error::UnsupportedYaml {
                feature: "multi-document",
                line: number,
            });
        }
        if indent == 0 && body.starts_with('%') {
            return Err(Error::UnsupportedYaml {
                feature: "directive",
                line: number,
            });
        }
        lines.push(Line {
            number,
            indent,
            text: body.to_string(),
        });
    }
    Ok(lines)
}

/// Removes a trailing `# comment` that is outside quotes and preceded by
/// whitespace (or starts the line).
fn strip_comment(line: &str) -> &str {
    let mut quote: Option<char> = None;
    let mut prev_space = true;
    for (i, c) in line.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => {
                if c == '#' && prev_space {
                    return &line[..i];
                }
                if (c == '"' || c == '\'') && prev_space_or_flow(line, i) {
                    quote = Some(c);
                }
            }
        }
        prev_space = c.is_whitespace();
    }
    line
}

fn prev_space_or_flow(line: &str, i: usize) -> bool {
    match line[..i].chars().next_back() {
        None => true,
        Some(p) => p.is_whitespace() || matches!(p, '[' | '{' | ',' | ':' | '-'),
    }
}

fn is_seq_item(text: &str) -> bool {
    text == "-" || text.starts_with("- ")
}

struct BlockParser {
    lines: Vec<Line>,
    pos: usize,
}

impl BlockParser {
    fn parse_block(&mut self, indent: usize) -> Result<ConfigNode> {
        let line = &self.lines[self.pos];
        if is_seq_item(&line.text) {
            self.parse_seq(indent)
        } else if split_key(&line.text, line.number, line.indent)?.is_some() {
            self.parse_map(indent)
        } else {
            let line = line.clone();
            self.pos += 1;
            let value = parse_inline(&line.text, line.number, line.indent + 1)?;
            self.reject_deeper(indent)?;
            Ok(value)
        }
    }

    fn reject_deeper(&self, indent: usize) -> Result<()> {
        match self.lines.get(self.pos) {
            Some(next) if next.indent > indent => {
                Err(syntax(next.number, next.indent + 1, "unexpected indentation"))
            }
            _ => Ok(()),
        }
    }

    fn parse_seq(&mut self, indent: usize) -> Result<ConfigNode> {
        let mut items = Vec::new();
        while let Some(line) = self.lines.get(self.pos) {
            if line.indent != indent || !is_seq_item(&line.text) {
                if line.indent > indent {
                    return Err(syntax(line.number, line.indent + 1, "unexpected indentation"));
                }
                break;
            }
            let rest = line.text[1..].trim_start();
            let offset = line.text.len() - rest.len();
            if rest.is_empty() {
                self.pos += 1;
                match self.lines.get(self.pos) {
                    Some(next) if next.indent > indent => {
                        let child = next.indent;
                        items.push(self.parse_block(child)?);
                    }
                    _ => items.push(ConfigNode::Null),
                }
                continue;
            }
            let (number, new_indent) = (line.number, indent + offset);
            let nested = is_seq_item(rest) || split_key(rest, number, new_indent)?.is_some();
            if nested {
                // Re-read the remainder as a block that starts at its own column.
                let rest = rest.to_string();
                let line = &mut self.lines[self.pos];
                line.indent = new_indent;
                line.text = rest;
                items.push(self.parse_block(new_indent)?);
            } else {
                let value = parse_inline(rest, number, new_indent + 1)?;
                self.pos += 1;
                self.reject_deeper(indent)?;
                items.push(value);
            }
        }
        Ok(ConfigNode::Seq(items))
    }

    fn parse_map(&mut self, indent: usize) -> Result<ConfigNode> {
        let mut map = Mapping::new();
        while let Some(line) = self.lines.get(self.pos) {
            if line.indent < indent {
                break;
            }
            if line.indent > indent {
                return Err(syntax(line.number, line.indent + 1, "unexpected indentation"));
            }
            if is_seq_item(&line.text) {
                return Err(syntax(
                    line.number,
                    line.indent + 1,
                    "sequence item where a mapping key was expected",
                ));
            }
            let line = line.clone();
            let (key, rest, rest_col) = split_key(&line.text, line.number, line.indent)?
                .ok_or_else(|| syntax(line.number, line.indent + 1, "expected `key: value`"))?;
            if map.contains_key(&key) {
                return Err(syntax(
                    line.number,
                    line.indent + 1,
                    format!("duplicate key `{key}`"),
                ));
            }
            self.pos += 1;
            let value = if rest.is_empty() {
                match self.lines.get(self.pos) {
                    Some(next) if next.indent > indent => {
                        let child = next.indent;
                        self.parse_block(child)?
                    }
                    Some(next) if next.indent == indent && is_seq_item(&next.text) => {
                        self.parse_seq(indent)?
                    }
                    _ => ConfigNode::Null,
                }
            } else {
                let value = parse_inline(&rest, line.number, rest_col)?;
                self.reject_deeper(indent)?;
                value
            };
            map.insert(key, value);
        }
        Ok(ConfigNode::Map(map))
    }
}

/// Splits `key: rest` when the text is a mapping entry. Returns the key, the
/// trimmed remainder and the 1-based column where the remainder starts.
fn split_key(text: &str, line: usize, indent: usize) -> Result<Option<(String, String, usize)>> {
    let first = text.chars().next().unwrap_or(' ');
    if text.starts_with("? ") || text == "?" {
        return Err(Error::UnsupportedYaml {
            feature: "complex key",
            line,
        });
    }
    if matches!(first, '[' | '{') {
        return Ok(None);
    }
    let (key, after) = if first == '"' || first == '\'' {
        let mut cursor = Cursor::new(text, line, indent + 1);
        let key = cursor.quoted()?;
        let after = &text[cursor.pos..];
        let after_trim = after.trim_start();
        if !after_trim.starts_with(':') {
            return Ok(None);
        }
        (key, &after_trim[1..])
    } else {
        let bytes = text.as_bytes();
        let mut split = None;
        for (i, &b) in bytes.iter().enumerate() {
            if b == b':' && (i + 1 == bytes.len() || bytes[i + 1] == b' ') {
                split = Some(i);
                break;
            }
        }
        let Some(i) = split else { return Ok(None) };
        let key = text[..i].trim_end();
        check_unsupported(key, line)?;
        (key.to_string(), &text[i + 1..])
    };
    if !after.is_empty() && !after.starts_with(' ') {
        return Ok(None);
    }
    let rest = after.trim();
    let rest_col = indent + 1 + (text.len() - after.trim_start().len());
    Ok(Some((key, rest.to_string(), rest_col)))
}

fn check_unsupported(text: &str, line: usize) -> Result<()> {
    let feature = match text.chars().next() {
        Some('&') => "anchor",
        Some('*') => "alias",
        Some('!') => "tag",
        Some('|') | Some('>') => "block scalar",
        _ => return Ok(()),
    };
    Err(Error::UnsupportedYaml { feature, line })
}

fn parse_inline(text: &str, line: usize, column: usize) -> Result<ConfigNode> {
    let mut cursor = Cursor::new(text, line, column);
    let value = cursor.value(false)?;
    cursor.skip_ws();
    if !cursor.at_end() {
        return Err(cursor.error("unexpected trailing characters"));
    }
    Ok(value)
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
    column: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, line: usize, column: usize) -> Self {
        Cursor {
            text,
            pos: 0,
            line,
            column,
        }
    }

    fn error(&self, message: &str) -> Error {
        syntax(self.line, self.column + self.pos, message)
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(' ') | Some('\t')) {
            self.pos += 1;
        }
    }

    fn value(&mut self, in_flow: bool) -> Result<ConfigNode> {
        self.skip_ws();
        check_unsupported(&self.text[self.pos..], self.line)?;
        match self.peek() {
            Some('[') => self.flow_seq(),
            Some('{') => self.flow_map(),
            Some('"') | Some('\'') => Ok(ConfigNode::Str(self.quoted()?)),
            _ => {
                let plain = self.plain(in_flow);
                Ok(type_scalar(plain))
            }
        }
    }

    fn plain(&mut self, in_flow: bool) -> &'a str {
        let start = self.pos;
        if in_flow {
            while let Some(c) = self.peek() {
                if matches!(c, ',' | ']' | '}') {
                    break;
                }
                if c == ':' {
                    let next = self.text[self.pos + 1..].chars().next();
                    if matches!(next, None | Some(' ') | Some(',') | Some(']') | Some('}')) {
                        break;
                    }
                }
                self.bump();
            }
        } else {
            self.pos = self.text.len();
        }
        self.text[start..self.pos].trim()
    }

    fn quoted(&mut self) -> Result<String> {
        let quote = self.bump().expect("caller checked for a quote");
        let mut out = String::new();
        loop {
            let c = self
                .bump()
                .ok_or_else(|| self.error("unterminated quoted string"))?;
            if c == quote {
                if quote == '\'' && self.peek() == Some('\'') {
                    self.bump();
                    out.push('\'');
                    continue;
                }
                return Ok(out);
            }
            if quote == '"' && c == '\\' {
                let esc = self.bump().ok_or_else(|| self.error("unterminated escape"))?;
                match esc {
                    '"' => out.push('"'),
                    '\\' => out.push('\\'),
                    '/' => out.push('/'),
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    'b' => out.push('\u{8}'),
                    'f' => out.push('\u{c}'),
                    '0' => out.push('\0'),
                    'u' => {
                        let hex = self
                            .text
                            .get(self.pos..self.pos + 4)
                            .ok_or_else(|| self.error("truncated \\u escape"))?;
                        let code = u32::from_str_radix(hex, 16)
                            .map_err(|_| self.error("invalid \\u escape"))?;
                        self.pos += 4;
                        out.push(
                            char::from_u32(code).ok_or_else(|| self.error("invalid code point"))?,
                        );
                    }
                    _ => return Err(self.error("unknown escape sequence")),
                }
            } else {
                out.push(c);
            }
        }
    }

    fn flow_seq(&mut self) -> Result<ConfigNode> {
        self.bump();
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.bump();
            return Ok(ConfigNode::Seq(items));
        }
        loop {
            items.push(self.value(true)?);
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(']') => return Ok(ConfigNode::Seq(items)),
                _ => return Err(self.error("expected `,` or `]` in flow sequence")),
            }
        }
    }

    fn flow_map(&mut self) -> Result<ConfigNode> {
        self.bump();
        let mut map = Mapping::new();
        self.skip_ws();
        if self.peek() == Some('}') {
            self.bump();
            return Ok(ConfigNode::Map(map));
        }
        loop {
            self.skip_ws();
            let key = match self.peek() {
                Some('"') | Some('\'') => self.quoted()?,
                _ => {
                    check_unsupported(&self.text[self.pos..], self.line)?;
                    let start = self.pos;
                    while let Some(c) = self.peek() {
                        if matches!(c, ':' | ',' | '}') {
                            break;
                        }
                        self.bump();
                    }
                    self.text[start..self.pos].trim().to_string()
                }
            };
            self.skip_ws();
            if self.bump() != Some(':') {
                return Err(self.error("expected `:` in flow mapping"));
            }
            let value = self.value(true)?;
            if map.insert(key.clone(), value).is_some() {
                return Err(self.error(&format!("duplicate key `{key}`")));
            }
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some('}') => return Ok(ConfigNode::Map(map)),
                _ => return Err(self.error("expected `,` or `}` in flow mapping")),
            }
        }
    }
}

/// Types a plain scalar: booleans, null, integers, floats, otherwise string.
pub(crate) fn type_scalar(s: &str) -> ConfigNode {
    match s {
        "" | "null" | "~" => return ConfigNode::Null,
        "true" => return ConfigNode::Bool(true),
        "false" => return ConfigNode::Bool(false),
        ".inf" | "+.inf" => return ConfigNode::Float(f64::INFINITY),
        "-.inf" => return ConfigNode::Float(f64::NEG_INFINITY),
        ".nan" => return ConfigNode::Float(f64::NAN),
        _ => {}
    }
    let unsigned = s.strip_prefix(['+', '-']).unwrap_or(s);
    if !unsigned.is_empty() && unsigned.bytes().all(|b| b.is_ascii_digit()) {
        if let Ok(i) = s.parse::<i64>() {
            return ConfigNode::Int(i);
        }
    }
    if is_float_literal(unsigned) {
        if let Ok(f) = s.parse::<f64>() {
            return ConfigNode::Float(f);
        }
    }
    ConfigNode::Str(s.to_string())
}

fn is_float_literal(s: &str) -> bool {
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], Some(&s[i + 1..])),
        None => (s, None),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], Some(&mantissa[i + 1..])),
        None => (mantissa, None),
    };
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    let mantissa_ok = digits(int_part)
        && frac_part.is_none_or(digits)
        && !(int_part.is_empty() && frac_part.is_none_or(str::is_empty));
    let exponent_ok = exponent.is_none_or(|e| {
        let e = e.strip_prefix(['+', '-']).unwrap_or(e);
        !e.is_empty() && digits(e)
    });
    mantissa_ok && exponent_ok && (frac_part.is_some() || exponent.is_some())
}

pub(super) fn emit(node: &ConfigNode) -> String {
    let mut out = String::new();
    match node {
        ConfigNode::Map(m) if !m.is_empty() => emit_map(m, 0, &mut out),
        ConfigNode::Seq(s) if !s.is_empty() => emit_seq(s, 0, &mut out),
        other => {
            out.push_str(&emit_flow(other));
            out.push('\n');
        }
    }
    out
}

fn emit_map(map: &Mapping, indent: usize, out: &mut String) {
    for (key, value) in map {
        out.push_str(&" ".repeat(indent));
        out.push_str(&emit_str(key));
        out.push(':');
        match value {
            ConfigNode::Map(m) if !m.is_empty() => {
                out.push('\n');
                emit_map(m, indent + 2, out);
            }
            ConfigNode::Seq(s) if !s.is_empty() => {
                out.push('\n');
                emit_seq(s, indent + 2, out);
            }
            other => {
                out.push(' ');
                out.push_str(&emit_flow(other));
                out.push('\n');
            }
        }
    }
}

fn emit_seq(items: &[ConfigNode], indent: usize, out: &mut String) {
    let pad = " ".repeat(indent);
    for item in items {
        match item {
            ConfigNode::Map(m) if !m.is_empty() => {
                let mut nested = String::new();
                emit_map(m, indent + 2, &mut nested);
                out.push_str(&pad);
                out.push_str("- ");
                out.push_str(&nested[indent + 2..]);
            }
            other => {
                out.push_str(&pad);
                out.push_str("- ");
                out.push_str(&emit_flow(other));
                out.push('\n');
            }
        }
    }
}

fn emit_flow(node: &ConfigNode) -> String {
    match node {
        ConfigNode::Null => "null".to_string(),
        ConfigNode::Bool(b) => b.to_string(),
        ConfigNode::Int(i) => i.to_string(),
        ConfigNode::Float(f) if f.is_nan() => ".nan".to_string(),
        ConfigNode::Float(f) if f.is_infinite() => {
            if *f > 0.0 { ".inf" } else { "-.inf" }.to_string()
        }
        ConfigNode::Float(f) => format_float(*f),
        ConfigNode::Str(s) => emit_str(s),
        ConfigNode::Seq(items) => {
            let inner: Vec<String> = items.iter().map(emit_flow).collect();
            format!("[{}]", inner.join(", "))
        }
        ConfigNode::Map(m) => {
            let inner: Vec<String> = m
                .iter()
                .map(|(k, v)| format!("{}: {}", emit_str(k), emit_flow(v)))
                .collect();
            format!("{{{}}}", inner.join(", "))
        }
    }
}

fn emit_str(s: &str) -> String {
    let plain_ok = !s.is_empty()
        && type_scalar(s) == ConfigNode::Str(s.to_string())
        && s.trim() == s
        && !s.starts_with(|c: char| "-?:,[]{}#&*!|>'\"%@`".contains(c))
        && !s.contains(": ")
        && !s.contains(" #")
        && !s.ends_with(':')
        && !s.contains([',', '[', ']', '{', '}'])
        && !s.chars().any(char::is_control);
    if plain_ok {
        s.to_string()
    } else {
        quote_json(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ConfigNode {
        parse_yaml(text).unwrap()
    }

    #[test]
    fn scalar_typing() {
        assert_eq!(parse("lr: 1e-3").get("lr"), Some(&ConfigNode::Float(0.001)));
        let c = parse("a: true\nb: 12\nc: -3.5\nd: null\ne: ~\nf: hello world\ng: '12'\nh: 1.\n");
        assert_eq!(c.get("a"), Some(&ConfigNode::Bool(true)));
        assert_eq!(c.get("b"), Some(&ConfigNode::Int(12)));
        assert_eq!(c.get("c"), Some(&ConfigNode::Float(-3.5)));
        assert_eq!(c.get("d"), Some(&ConfigNode::Null));
        assert_eq!(c.get("e"), Some(&ConfigNode::Null));
        assert_eq!(c.get("f"), Some(&ConfigNode::from("hello world")));
        assert_eq!(c.get("g"), Some(&ConfigNode::from("12")));
        assert_eq!(c.get("h"), Some(&ConfigNode::Float(1.0)));
        for s in ["inf", "nan", "1e", "e5", ".", "1.2.3", "0x10", "--1"] {
            assert_eq!(type_scalar(s), ConfigNode::Str(s.into()), "{s}");
        }
    }

    #[test]
    fn defaults_list_shape() {
        let c = parse("defaults:\n  - model: cnn10\n");
        assert_eq!(c.canonical(), r#"{"defaults":[{"model":"cnn10"}]}"#);
    }

    #[test]
    fn sequence_at_key_indent_and_nested_items() {
        let c = parse(
            "transforms:\n- id: znorm\n  order: 10\n  subset: [train, dev]\n- id: crop\nnext: 1\n",
        );
        assert_eq!(
            c.canonical(),
            r#"{"next":1,"transforms":[{"id":"znorm","order":10,"subset":["train","dev"]},{"id":"crop"}]}"#
        );
    }

    #[test]
    fn flow_collections_and_quotes() {
        let c = parse("a: {x: 1, 'y z': [1, \"two\", {k: v}]}\nb: []\nc: {}\nd: \"esc\\n\\u0041\"\ne: 'it''s'\n");
        assert_eq!(
            c.canonical(),
            r#"{"a":{"x":1,"y z":[1,"two",{"k":"v"}]},"b":[],"c":{},"d":"esc\nA","e":"it's"}"#
        );
    }

    #[test]
    fn comments_are_ignored() {
        let c = parse("# header\na: 1 # trailing\nb: 'x # not comment'\nurl: http://a/b#frag\n");
        assert_eq!(
            c.canonical(),
            r##"{"a":1,"b":"x # not comment","url":"http://a/b#frag"}"##
        );
    }

    #[test]
    fn nested_sequences() {
        let c = parse("a:\n  - - 1\n    - 2\n  - [3]\n  -\n    k: v\n");
        assert_eq!(c.canonical(), r#"{"a":[[1,2],[3],{"k":"v"}]}"#);
    }

    #[test]
    fn empty_document_is_empty_map() {
        assert_eq!(parse("# nothing\n\n"), ConfigNode::empty_map());
    }

    #[test]
    fn unsupported_features() {
        let err = parse_yaml("a: &x 1").unwrap_err();
        assert_eq!(err.to_string(), "unsupported YAML feature: anchor (line 1)");
        assert!(err.to_string().starts_with("unsupported YAML feature: anchor"));
        for (text, feature) in [
            ("a: *x", "alias"),
            ("a: !!str 1", "tag"),
            ("a: |\n  text", "block scalar"),
            ("a: 1\n---\nb: 2", "multi-document"),
            ("a: [&x 1]", "anchor"),
        ] {
            match parse_yaml(text) {
                Err(Error::UnsupportedYaml { feature: f, .. }) => assert_eq!(f, feature),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_yaml("a: 1\n   b: 2\n") {
            Err(Error::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 4)),
            other => panic!("{other:?}"),
        }
        match parse_yaml("a: [1, 2\n") {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_yaml("a: 1\na: 2\n"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_yaml("a: 1\n- b\n"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn emitter_round_trips() {
        let text = "name: \"x: y\"\nlist:\n- 1\n- a: 1\n  b: [1, 2]\n- [x, \"y,z\"]\nempty: {}\nnone: []\nf: 1e-10\nneg: -.inf\nq: \"true\"\nd: \"-x\"\n";
        let c = parse(text);
        let emitted = c.to_yaml();
        assert_eq!(parse(&emitted), c, "{emitted}");
    }

    #[test]
    fn parse_value_handles_flow_and_scalars() {
        assert_eq!(parse_value("0.001").unwrap(), ConfigNode::Float(0.001));
        assert_eq!(parse_value("[1, 2]").unwrap().canonical(), "[1,2]");
        assert_eq!(parse_value("abc").unwrap(), ConfigNode::from("abc"));
    }
}
