//! Value formatting, interpolation templates and markdown rendering.
//!
//! Templates are a small mustache dialect: `{{name}}` (markdown-escaped),
//! `{{{name}}}` (raw), sections `{{#name}}..{{/name}}`, inverted sections
//! `{{^name}}..{{/name}}`, comments `{{! .. }}`, dotted paths and `.` for the
//! current item. Unknown names render as empty text.

use std::fmt::Write as _;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde_json::Value as Json;
use thiserror::Error;

use crate::model::ScalarType;
use crate::storage::Value;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unclosed tag at byte {0}")]
    UnclosedTag(usize),
    #[error("unbalanced section {0:?}")]
    Unbalanced(String),
    #[error("empty tag at byte {0}")]
    EmptyTag(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Text(String),
    Var { path: String, escape: bool },
    Section { path: String, inverted: bool, body: Vec<Node> },
}

/// A parsed interpolation template.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    nodes: Vec<Node>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let mut stack: Vec<(String, bool, Vec<Node>)> = Vec::new();
        let mut current: Vec<Node> = Vec::new();
        let mut rest = source;
        let mut offset = 0;
        while let Some(start) = rest.find("{{") {
            if start > 0 {
                current.push(Node::Text(rest[..start].to_string()));
            }
            let after = &rest[start..];
            let (inner, consumed, raw) = if after.starts_with("{{{") {
                let end = after.find("}}}").ok_or(TemplateError::UnclosedTag(offset + start))?;
                (&after[3..end], end + 3, true)
            } else {
                let end = after.find("}}").ok_or(TemplateError::UnclosedTag(offset + start))?;
                (&after[2..end], end + 2, false)
            };
            let inner = inner.trim();
            if inner.is_empty() {
                return Err(TemplateError::EmptyTag(offset + start));
            }
            if raw {
                current.push(Node::Var {
                    path: inner.to_string(),
                    escape: false,
                });
            } else if let Some(name) = inner.strip_prefix('#') {
                stack.push((name.trim().to_string(), false, std::mem::take(&mut current)));
            } else if let Some(name) = inner.strip_prefix('^') {
                stack.push((name.trim().to_string(), true, std::mem::take(&mut current)));
            } else if let Some(name) = inner.strip_prefix('/') {
                let name = name.trim();
                match stack.pop() {
                    Some((open, inverted, parent)) if open == name => {
                        let body = std::mem::replace(&mut current, parent);
                        current.push(Node::Section {
                            path: open,
                            inverted,
                            body,
                        });
                    }
                    _ => return Err(TemplateError::Unbalanced(name.to_string())),
                }
            } else if inner.starts_with('!') {
                // comment
            } else if let Some(name) = inner.strip_prefix('&') {
                current.push(Node::Var {
                    path: name.trim().to_string(),
                    escape: false,
                });
            } else {
                current.push(Node::Var {
                    path: inner.to_string(),
                    escape: true,
                });
            }
            offset += start + consumed;
            rest = &rest[start + consumed..];
        }
        if let Some((open, _, _)) = stack.pop() {
            return Err(TemplateError::Unbalanced(open));
        }
        if !rest.is_empty() {
            current.push(Node::Text(rest.to_string()));
        }
        Ok(Template { nodes: current })
    }

    /// Renders against a JSON binding environment.
    pub fn render(&self, bindings: &Json) -> String {
        let mut out = String::new();
        let mut stack = vec![bindings];
        render_nodes(&self.nodes, &mut stack, &mut out);
        out
    }
}

/// Parses and renders in one step.
pub fn render_template(source: &str, bindings: &Json) -> Result<String, TemplateError> {
    Ok(Template::parse(source)?.render(bindings))
}

fn lookup<'a>(stack: &[&'a Json], path: &str) -> Option<&'a Json> {
    if path == "." {
        return stack.last().copied();
    }
    let mut parts = path.split('.');
    let first = parts.next()?;
    let mut value = stack
        .iter()
        .rev()
        .find_map(|ctx| ctx.as_object().and_then(|o| o.get(first)))?;
    for part in parts {
        value = match value {
            Json::Object(o) => o.get(part)?,
            Json::Array(a) => a.get(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(value)
}

fn truthy(v: &Json) -> bool {
    match v {
        Json::Null => false,
        Json::Bool(b) => *b,
        Json::String(s) => !s.is_empty(),
        Json::Array(a) => !a.is_empty(),
        Json::Number(_) | Json::Object(_) => true,
    }
}

fn json_text(v: &Json) -> String {
    match v {
        Json::Null => String::new(),
        Json::String(s) => s.clone(),
        Json::Bool(b) => b.to_string(),
        Json::Number(n) => n.to_string(),
        Json::Array(items) => items.iter().map(json_text).collect::<Vec<_>>().join(", "),
        Json::Object(_) => v.to_string(),
    }
}

fn render_nodes<'a>(nodes: &'a [Node], stack: &mut Vec<&'a Json>, out: &mut String) {
    for node in nodes {
        match node {
            Node::Text(t) => out.push_str(t),
            Node::Var { path, escape } => {
                let text = lookup(stack, path).map(json_text).unwrap_or_default();
                if *escape {
                    out.push_str(&escape_markdown(&text));
                } else {
                    out.push_str(&text);
                }
            }
            Node::Section {
                path,
                inverted,
                body,
            } => {
                let value = lookup(stack, path);
                let on = value.is_some_and(truthy);
                if *inverted {
                    if !on {
                        render_nodes(body, stack, out);
                    }
                    continue;
                }
                let Some(value) = value.filter(|v| truthy(v)) else {
                    continue;
                };
                match value {
                    Json::Array(items) => {
                        for item in items {
                            stack.push(item);
                            render_nodes(body, stack, out);
                            stack.pop();
                        }
                    }
                    other => {
                        stack.push(other);
                        render_nodes(body, stack, out);
                        stack.pop();
                    }
                }
            }
        }
    }
}

const MARKDOWN_SIGNIFICANT: &[char] = &['\\', '`', '*', '_', '[', ']', '(', ')', '#'];

/// Backslash-escapes characters that carry markdown meaning.
pub fn escape_markdown(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if MARKDOWN_SIGNIFICANT.contains(&c) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

/// Type-aware display formatting.
pub fn format_value(value: &Value, ty: ScalarType) -> String {
    match value {
        Value::Null => String::new(),
        Value::Int(i) if ty == ScalarType::Float => format_float(*i as f64),
        Value::Int(i) => thousands(*i),
        Value::Float(f) => format_float(*f),
        Value::Bool(b) => b.to_string(),
        Value::Date(d) => d.format("%Y-%m-%d").to_string(),
        Value::Timestamp(ts) => ts.format("%Y-%m-%d %H:%M").to_string(),
        Value::Text(s) => s.clone(),
        Value::List(items) => items
            .iter()
            .map(|v| format_value(v, ty))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn format_float(f: f64) -> String {
    // Display on f64 is the shortest representation that round-trips.
    f.to_string()
}

fn thousands(n: i64) -> String {
    let digits = n.unsigned_abs().to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3 + 1);
    if n < 0 {
        out.push('-');
    }
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// Accepts RFC 3339 and the `YYYY-MM-DD HH:MM` display form (UTC).
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(ts) = DateTime::parse_from_rfc3339(s) {
        return Some(ts.with_timezone(&Utc));
    }
    chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M")
        .ok()
        .map(|n| n.and_utc())
}

pub fn timestamp_rfc3339(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Micros, true)
}

// ---------------------------------------------------------------------------
// Markdown

pub fn escape_html(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn safe_url(url: &str) -> Option<String> {
    let trimmed = url.trim();
    let lower = trimmed.to_ascii_lowercase();
    let scheme_end = lower.find(':');
    let slash = lower.find('/');
    let has_scheme = match (scheme_end, slash) {
        (Some(c), Some(s)) => c < s,
        (Some(_), None) => true,
        _ => false,
    };
    if has_scheme
        && !(lower.starts_with("http:")
            || lower.starts_with("https:")
            || lower.starts_with("mailto:"))
    {
        return None;
    }
    Some(escape_html(trimmed))
}

/// Renders the supported markdown subset to HTML. Raw HTML in the input is
/// always escaped.
pub fn markdown_to_html(doc: &str) -> String {
    let lines: Vec<&str> = doc.split('\n').collect();
    let mut out = String::new();
    let mut paragraph: Vec<&str> = Vec::new();
    let mut i = 0;

    fn flush(paragraph: &mut Vec<&str>, out: &mut String) {
        if paragraph.is_empty() {
            return;
        }
        let text = paragraph.join("\n");
        out.push_str("<p>");
        out.push_str(&inline(text.trim()));
        out.push_str("</p>");
        paragraph.clear();
    }

    while i < lines.len() {
        let line = lines[i];
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut paragraph, &mut out);
            i += 1;
            continue;
        }
        if let Some((html, used)) = iframe_block(&lines[i..]) {
            flush(&mut paragraph, &mut out);
            out.push_str(&html);
            i += used;
            continue;
        }
        if let Some(level) = heading_level(trimmed) {
            flush(&mut paragraph, &mut out);
            let text = trimmed[level..].trim();
            let _ = write!(out, "<h{level}>{}</h{level}>", inline(text));
            i += 1;
            continue;
        }
        if bullet_item(trimmed).is_some() {
            flush(&mut paragraph, &mut out);
            out.push_str("<ul>");
            while i < lines.len() {
                let Some(item) = bullet_item(lines[i].trim()) else {
                    break;
                };
                let _ = write!(out, "<li>{}</li>", inline(item));
                i += 1;
            }
            out.push_str("</ul>");
            continue;
        }
        paragraph.push(line);
        i += 1;
    }
    flush(&mut paragraph, &mut out);
    out
}

fn heading_level(line: &str) -> Option<usize> {
    let hashes = line.chars().take_while(|c| *c == '#').count();
    (1..=6)
        .contains(&hashes)
        .then_some(hashes)
        .filter(|&h| line[h..].starts_with(' '))
}

fn bullet_item(line: &str) -> Option<&str> {
    line.strip_prefix("- ")
        .or_else(|| line.strip_prefix("* "))
        .or_else(|| line.strip_prefix("+ "))
}

/// `::: iframe [caption](url){attrs}` followed by a closing `:::` line.
fn iframe_block(lines: &[&str]) -> Option<(String, usize)> {
    let first = lines.first()?.trim();
    let rest = first.strip_prefix(":::")?.trim_start().strip_prefix("iframe")?;
    let closing = lines.iter().skip(1).position(|l| l.trim() == ":::")? + 1;
    let rest = rest.trim_start();
    let rest = rest.strip_prefix('[')?;
    let cap_end = find_closing(rest, '[', ']')?;
    let caption = &rest[..cap_end];
    let rest = rest[cap_end + 1..].strip_prefix('(')?;
    let url_end = rest.find(')')?;
    let url = rest[..url_end].trim();
    if url.is_empty() {
        return None;
    }
    let rest = rest[url_end + 1..].trim();
    let mut attrs: Vec<(String, String)> = Vec::new();
    if !rest.is_empty() {
        let body = rest.strip_prefix('{')?.strip_suffix('}')?;
        attrs = parse_attrs(body)?;
    } else if lines[1..closing].iter().any(|l| !l.trim().is_empty()) {
        return None;
    }
    let url = safe_url(url)?;
    let mut html = String::from("<figure class=\"embed\">");
    if !caption.is_empty() {
        let _ = write!(
            html,
            "<figcaption><a href=\"{url}\" target=\"_blank\">{}</a></figcaption>",
            inline(caption)
        );
    }
    let _ = write!(html, "<iframe src=\"{url}\"");
    for name in ["width", "height", "class"] {
        if let Some((_, v)) = attrs.iter().find(|(k, _)| k == name) {
            let _ = write!(html, " {name}=\"{}\"", escape_html(v));
        }
    }
    html.push_str("></iframe></figure>");
    Some((html, closing + 1))
}

fn parse_attrs(body: &str) -> Option<Vec<(String, String)>> {
    let mut attrs = Vec::new();
    let mut rest = body.trim();
    while !rest.is_empty() {
        let eq = rest.find('=')?;
        let key = rest[..eq].trim().to_string();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return None;
        }
        let after = rest[eq + 1..].trim_start();
        let (value, remaining) = if let Some(quoted) = after.strip_prefix('"') {
            let end = quoted.find('"')?;
            (quoted[..end].to_string(), &quoted[end + 1..])
        } else {
            let end = after.find(char::is_whitespace).unwrap_or(after.len());
            (after[..end].to_string(), &after[end..])
        };
        attrs.push((key, value));
        rest = remaining.trim_start();
    }
    Some(attrs)
}

fn find_closing(s: &str, open: char, close: char) -> Option<usize> {
    let mut depth = 0usize;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        if c == '\\' {
            escaped = true;
        } else if c == open {
            depth += 1;
        } else if c == close {
            if depth == 0 {
                return Some(i);
            }
            depth -= 1;
        }
    }
    None
}

/// Inline spans: escapes, code, images, links, strong, emphasis, line breaks.
fn inline(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\\' if i + 1 < chars.len() && chars[i + 1].is_ascii_punctuation() => {
                out.push_str(&escape_html(&chars[i + 1].to_string()));
                i += 2;
            }
            '`' => {
                if let Some(end) = chars[i + 1..].iter().position(|&x| x == '`') {
                    let code: String = chars[i + 1..i + 1 + end].iter().collect();
                    let _ = write!(out, "<code>{}</code>", escape_html(&code));
                    i += end + 2;
                } else {
                    out.push('`');
                    i += 1;
                }
            }
            '!' if chars.get(i + 1) == Some(&'[') => {
                if let Some((alt, url, used)) = link_at(&chars[i + 1..]) {
                    match safe_url(&url) {
                        Some(u) => {
                            let _ = write!(out, "<img src=\"{u}\" alt=\"{}\">", escape_html(&alt));
                        }
                        None => out.push_str(&escape_html(&alt)),
                    }
                    i += 1 + used;
                } else {
                    out.push('!');
                    i += 1;
                }
            }
            '[' => {
                if let Some((label, url, used)) = link_at(&chars[i..]) {
                    let label_html = inline(&label);
                    match safe_url(&url) {
                        Some(u) => {
                            let _ = write!(out, "<a href=\"{u}\">{label_html}</a>");
                        }
                        None => out.push_str(&label_html),
                    }
                    i += used;
                } else {
                    out.push('[');
                    i += 1;
                }
            }
            '*' | '_' => {
                let double = chars.get(i + 1) == Some(&c);
                let width = if double { 2 } else { 1 };
                if let Some(end) = find_delim(&chars, i + width, c, width) {
                    let inner: String = chars[i + width..end].iter().collect();
                    let tag = if double { "strong" } else { "em" };
                    let _ = write!(out, "<{tag}>{}</{tag}>", inline(&inner));
                    i = end + width;
                } else {
                    out.push(c);
                    i += 1;
                }
            }
            '\n' => {
                out.push_str("<br>");
                i += 1;
            }
            _ => {
                out.push_str(&escape_html(&c.to_string()));
                i += 1;
            }
        }
    }
    out
}

fn find_delim(chars: &[char], from: usize, delim: char, width: usize) -> Option<usize> {
    if from >= chars.len() || chars[from].is_whitespace() {
        return None;
    }
    let mut j = from + 1;
    while j + width <= chars.len() {
        if chars[j] == '\\' {
            j += 2;
            continue;
        }
        if chars[j..j + width].iter().all(|&x| x == delim)
            && !chars[j - 1].is_whitespace()
            && (width == 2 || chars.get(j + 1) != Some(&delim))
        {
            return Some(j);
        }
        j += 1;
    }
    None
}

/// `[label](url)` starting at `chars[0] == '['`.
fn link_at(chars: &[char]) -> Option<(String, String, usize)> {
    let s: String = chars.iter().collect();
    let body = s.strip_prefix('[')?;
    let close = find_closing(body, '[', ']')?;
    let label = &body[..close];
    let after = body[close + 1..].strip_prefix('(')?;
    let end = find_closing(after, '(', ')')?;
    let url = &after[..end];
    let used = 1 + label.chars().count() + 2 + url.chars().count() + 1;
    Some((label.to_string(), url.to_string(), used))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn row_name_concatenation() {
        let out = render_template("{{{RID}}}: {{{Title}}}", &json!({"RID": "1-X", "Title": "Kidney atlas"})).unwrap();
        assert_eq!(out, "1-X: Kidney atlas");
    }

    #[test]
    fn section_iterates_list() {
        let out = render_template("{{#vals}}- {{{.}}}\n{{/vals}}", &json!({"vals": ["Kidney", "Ureter"]})).unwrap();
        assert_eq!(out, "- Kidney\n- Ureter\n");
    }

    #[test]
    fn unknown_variable_is_empty() {
        assert_eq!(render_template("[{{nope}}]", &json!({})).unwrap(), "[]");
        assert_eq!(render_template("{{a.b.c}}", &json!({"a": {"b": 1}})).unwrap(), "");
    }

    #[test]
    fn escaping_and_inverted_sections() {
        let b = json!({"t": "a_b*c", "empty": [], "obj": {"x": "y"}});
        assert_eq!(render_template("{{t}}|{{{t}}}", &b).unwrap(), "a\\_b\\*c|a_b*c");
        assert_eq!(render_template("{{^empty}}none{{/empty}}", &b).unwrap(), "none");
        assert_eq!(render_template("{{#obj}}{{x}}{{/obj}}", &b).unwrap(), "y");
        assert_eq!(render_template("{{obj.x}}{{! note }}", &b).unwrap(), "y");
    }

    #[test]
    fn unbalanced_templates_fail_to_parse() {
        assert!(matches!(Template::parse("{{#a}}x"), Err(TemplateError::Unbalanced(_))));
        assert!(matches!(Template::parse("{{#a}}x{{/b}}"), Err(TemplateError::Unbalanced(_))));
        assert!(matches!(Template::parse("{{a"), Err(TemplateError::UnclosedTag(_))));
    }

    #[test]
    fn formats() {
        assert_eq!(format_value(&Value::Int(1234567), ScalarType::Int), "1,234,567");
        assert_eq!(format_value(&Value::Int(-1000), ScalarType::Int), "-1,000");
        assert_eq!(format_value(&Value::Int(999), ScalarType::Int), "999");
        let d = parse_date("2020-09-30").unwrap();
        assert_eq!(format_value(&Value::Date(d), ScalarType::Date), "2020-09-30");
        assert_eq!(format_value(&Value::Null, ScalarType::Text), "");
        assert_eq!(format_value(&Value::Float(0.1), ScalarType::Float), "0.1");
        assert_eq!(format_value(&Value::Float(2.0), ScalarType::Float), "2");
        let ts = parse_timestamp("2020-09-30T13:45:12Z").unwrap();
        assert_eq!(format_value(&Value::Timestamp(ts), ScalarType::Timestamp), "2020-09-30 13:45");
    }

    #[test]
    fn iframe_golden() {
        let html = markdown_to_html("::: iframe [Cell Browser](https://cb.example/s1){width=1000 height=600}\n:::");
        assert_eq!(
            html,
            "<figure class=\"embed\"><figcaption><a href=\"https://cb.example/s1\" target=\"_blank\">Cell Browser</a></figcaption><iframe src=\"https://cb.example/s1\" width=\"1000\" height=\"600\"></iframe></figure>"
        );
    }

    #[test]
    fn malformed_iframe_is_literal() {
        let html = markdown_to_html("::: iframe [x]()\n:::");
        assert!(!html.contains("<iframe"));
        let unclosed = markdown_to_html("::: iframe [x](https://a.b)");
        assert!(!unclosed.contains("<iframe"));
    }

    #[test]
    fn inline_markup() {
        assert_eq!(markdown_to_html("**bold**"), "<p><strong>bold</strong></p>");
        assert_eq!(markdown_to_html("*em* and `c<d`"), "<p><em>em</em> and <code>c&lt;d</code></p>");
        assert_eq!(
            markdown_to_html("[a](https://x.y/z)"),
            "<p><a href=\"https://x.y/z\">a</a></p>"
        );
        assert_eq!(markdown_to_html("- Kidney\n- Ureter\n"), "<ul><li>Kidney</li><li>Ureter</li></ul>");
        assert_eq!(markdown_to_html("a\\_b"), "<p>a_b</p>");
        assert_eq!(markdown_to_html("[x](javascript:alert(1))"), "<p>x</p>");
    }

    #[test]
    fn script_is_escaped() {
        let html = markdown_to_html("<script>x</script>");
        assert_eq!(html, "<p>&lt;script&gt;x&lt;/script&gt;</p>");
    }
}
