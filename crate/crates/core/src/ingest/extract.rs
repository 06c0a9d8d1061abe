//! Main-content extraction and text canonicalization.
//!
//! Pipeline: decode bytes, parse HTML, drop non-content subtrees, score
//! block containers by paragraph text (readability-style), render the best
//! container and its qualifying siblings to text, then canonicalize.
//!
//! Every step is a pure function of the input bytes, so the same page always
//! produces the same canonical text and therefore the same content hash.

use std::borrow::Cow;
use std::collections::HashMap;

use ego_tree::{NodeId, NodeRef};
use encoding_rs::Encoding;
use scraper::{Html, Node};
use unicode_normalization::UnicodeNormalization;

use super::{CanonicalDocument, IngestError};
use crate::time::Instant;

/// Subtrees that never contribute text.
const SKIPPED: &[&str] = &[
    "script", "style", "noscript", "template", "nav", "iframe", "svg", "canvas", "object", "embed",
    "head", "form", "button", "select", "textarea", "input", "option", "math",
];

const BLOCK: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "dd", "details", "dialog", "div", "dl",
    "dt", "fieldset", "figcaption", "figure", "footer", "h1", "h2", "h3", "h4", "h5", "h6",
    "header", "hr", "html", "li", "main", "ol", "p", "pre", "section", "summary", "table", "tbody",
    "thead", "tfoot", "tr", "ul", "caption",
];

const CELL: &[&str] = &["td", "th"];

/// Elements whose own text is scored.
const PARAGRAPH: &[&str] = &["p", "pre", "blockquote", "td"];

const POSITIVE_HINTS: &[&str] = &[
    "article", "body", "content", "entry", "hentry", "main", "page", "post", "text", "blog", "story",
];

const NEGATIVE_HINTS: &[&str] = &[
    "comment", "footer", "footnote", "nav", "sidebar", "menu", "banner", "share", "social",
    "widget", "related", "promo", "masthead", "sponsor", "popup", "cookie", "breadcrumb",
    "advert", "ad-", "ads", "header", "meta", "subscribe",
];

const MIN_PARAGRAPH_CHARS: usize = 25;

pub fn extract_article(
    body: &[u8],
    declared_encoding: Option<&str>,
    source_url: &str,
    web_title_hint: Option<&str>,
    extracted_at: Instant,
) -> Result<CanonicalDocument, IngestError> {
    if body.is_empty() {
        return Err(IngestError::Extraction("empty body".into()));
    }
    let html = decode(body, declared_encoding)?;
    let doc = Html::parse_document(&html);

    let web_title = page_title(&doc)
        .or_else(|| web_title_hint.map(first_title_segment))
        .unwrap_or_default();

    let mut text = String::new();
    for node in content_nodes(&doc) {
        render(node, &mut text);
        text.push('\n');
    }

    Ok(CanonicalDocument {
        source_url: source_url.to_string(),
        web_title,
        canonical_text: canonicalize(&text),
        extracted_at,
    })
}

/// NFC, no carriage returns, whitespace runs collapsed to one space, lines
/// trimmed, empty lines dropped. Idempotent.
pub fn canonicalize(text: &str) -> String {
    let normalized: String = text.nfc().collect();
    let mut out = String::with_capacity(normalized.len());
    for line in normalized.split(['\n', '\r']) {
        let mut words = line.split_whitespace().peekable();
        if words.peek().is_none() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        for (i, word) in words.enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(word);
        }
    }
    out
}

fn first_title_segment(raw: &str) -> String {
    let collapsed = canonicalize(raw).replace('\n', " ");
    collapsed.split('|').next().unwrap_or("").trim().to_string()
}

fn page_title(doc: &Html) -> Option<String> {
    let selector = scraper::Selector::parse("title").expect("static selector");
    let title = doc.select(&selector).next()?;
    let raw: String = title.text().collect();
    Some(first_title_segment(&raw)).filter(|t| !t.is_empty())
}

// ---------------------------------------------------------------------------
// Decoding

fn decode(body: &[u8], declared: Option<&str>) -> Result<String, IngestError> {
    if let Some((encoding, bom_len)) = Encoding::for_bom(body) {
        return strict(encoding, &body[bom_len..])
            .ok_or_else(|| IngestError::Extraction(format!("invalid {} after BOM", encoding.name())));
    }
    // Valid UTF-8 with non-ASCII content is practically never another
    // encoding, whatever the server claims.
    if let Ok(text) = std::str::from_utf8(body) {
        return Ok(text.to_string());
    }
    let declared = declared.and_then(|label| Encoding::for_label(label.trim().as_bytes()));
    if let Some(text) = declared.and_then(|enc| strict(enc, body)) {
        return Ok(text);
    }
    let detected = detect(body);
    if Some(detected) != declared {
        if let Some(text) = strict(detected, body) {
            return Ok(text);
        }
    }
    Err(IngestError::Extraction(format!(
        "bytes undecodable as {} or {}",
        declared.map_or("(none declared)", |e| e.name()),
        detected.name()
    )))
}

fn strict(encoding: &'static Encoding, bytes: &[u8]) -> Option<String> {
    encoding
        .decode_without_bom_handling_and_without_replacement(bytes)
        .map(Cow::into_owned)
}

/// `<meta charset>` in the head of the document, else UTF-8 when valid, else
/// a statistical guess.
fn detect(body: &[u8]) -> &'static Encoding {
    if let Some(enc) = meta_charset(&body[..body.len().min(1024)]) {
        return enc;
    }
    if std::str::from_utf8(body).is_ok() {
        return encoding_rs::UTF_8;
    }
    let mut detector = chardetng::EncodingDetector::new();
    detector.feed(body, true);
    detector.guess(None, true)
}

fn meta_charset(prefix: &[u8]) -> Option<&'static Encoding> {
    let lower = prefix.to_ascii_lowercase();
    let mut from = 0;
    while let Some(pos) = find(&lower[from..], b"charset=") {
        let start = from + pos + b"charset=".len();
        let value: Vec<u8> = lower[start..]
            .iter()
            .skip_while(|b| **b == b'"' || **b == b'\'')
            .take_while(|b| b.is_ascii_alphanumeric() || matches!(**b, b'-' | b'_' | b':' | b'.'))
            .copied()
            .collect();
        if let Some(enc) = Encoding::for_label(&value) {
            // A page cannot really be UTF-16 if this ASCII prefix parsed.
            return Some(if enc == encoding_rs::UTF_16LE || enc == encoding_rs::UTF_16BE {
                encoding_rs::UTF_8
            } else {
                enc
            });
        }
        from = start;
    }
    None
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

// ---------------------------------------------------------------------------
// Content selection

fn tag(node: NodeRef<'_, Node>) -> Option<&str> {
    node.value().as_element().map(|e| e.name())
}

fn is_skipped(node: NodeRef<'_, Node>) -> bool {
    match node.value() {
        Node::Element(el) => SKIPPED.contains(&el.name()) || el.attr("hidden").is_some(),
        Node::Comment(_) | Node::ProcessingInstruction(_) | Node::Doctype(_) => true,
        _ => false,
    }
}

/// Visible text of a subtree, whitespace collapsed to single spaces.
fn inner_text(node: NodeRef<'_, Node>) -> String {
    let mut raw = String::new();
    collect_text(node, &mut raw, false, false);
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Appends visible text; with `links_only`, only text inside `<a>`.
fn collect_text(node: NodeRef<'_, Node>, out: &mut String, in_link: bool, links_only: bool) {
    if is_skipped(node) {
        return;
    }
    match node.value() {
        Node::Text(t) => {
            if in_link || !links_only {
                out.push_str(t);
            }
        }
        Node::Element(el) => {
            let in_link = in_link || el.name() == "a";
            for child in node.children() {
                collect_text(child, out, in_link, links_only);
            }
            let name = el.name();
            if BLOCK.contains(&name) || CELL.contains(&name) || name == "br" {
                out.push(' ');
            }
        }
        _ => {
            for child in node.children() {
                collect_text(child, out, in_link, links_only);
            }
        }
    }
}

fn char_len(s: &str) -> usize {
    s.chars().filter(|c| !c.is_whitespace()).count()
}

fn link_density(node: NodeRef<'_, Node>) -> f64 {
    let total = char_len(&inner_text(node));
    if total == 0 {
        return 0.0;
    }
    let mut linked = String::new();
    collect_text(node, &mut linked, false, true);
    char_len(&linked) as f64 / total as f64
}

fn class_weight(node: NodeRef<'_, Node>) -> f64 {
    let Some(el) = node.value().as_element() else {
        return 0.0;
    };
    let mut weight = 0.0;
    for attr in [el.attr("class"), el.attr("id")].into_iter().flatten() {
        let attr = attr.to_ascii_lowercase();
        if NEGATIVE_HINTS.iter().any(|h| attr.contains(h)) {
            weight -= 25.0;
        }
        if POSITIVE_HINTS.iter().any(|h| attr.contains(h)) {
            weight += 25.0;
        }
    }
    weight
}

fn base_score(node: NodeRef<'_, Node>) -> f64 {
    let tag_score = match tag(node).unwrap_or("") {
        "article" | "main" => 10.0,
        "div" => 5.0,
        "pre" | "td" | "blockquote" | "section" => 3.0,
        "address" | "ol" | "ul" | "dl" | "dd" | "dt" | "li" | "form" | "aside" | "footer" => -3.0,
        "h1" | "h2" | "h3" | "h4" | "h5" | "h6" | "th" | "header" => -5.0,
        _ => 0.0,
    };
    tag_score + class_weight(node)
}

/// A `div` with no block-level children reads as a paragraph.
fn is_paragraph(node: NodeRef<'_, Node>) -> bool {
    match tag(node) {
        Some(t) if PARAGRAPH.contains(&t) => true,
        Some("div") => !node
            .children()
            .any(|c| tag(c).is_some_and(|t| BLOCK.contains(&t) || CELL.contains(&t))),
        _ => false,
    }
}

fn paragraph_score(text: &str) -> f64 {
    let commas = text.chars().filter(|c| matches!(c, ',' | '，' | '、')).count();
    1.0 + commas as f64 + (char_len(text) as f64 / 100.0).floor().min(3.0)
}

/// Nodes whose text forms the article, in document order.
fn content_nodes(doc: &Html) -> Vec<NodeRef<'_, Node>> {
    let root = doc.tree.root();
    let body = root
        .descendants()
        .find(|n| tag(*n) == Some("body"))
        .unwrap_or(root);

    // Scores keyed by node, plus first-seen order for deterministic ties.
    let mut scores: HashMap<NodeId, f64> = HashMap::new();
    let mut order: Vec<NodeId> = Vec::new();

    let mut stack = vec![body];
    while let Some(node) = stack.pop() {
        if is_skipped(node) {
            continue;
        }
        if is_paragraph(node) {
            let text = inner_text(node);
            if char_len(&text) >= MIN_PARAGRAPH_CHARS {
                let score = paragraph_score(&text);
                let ancestors = node.ancestors().filter(|a| a.value().is_element()).take(2);
                for (level, ancestor) in ancestors.enumerate() {
                    let entry = scores.entry(ancestor.id()).or_insert_with(|| {
                        order.push(ancestor.id());
                        base_score(ancestor)
                    });
                    *entry += if level == 0 { score } else { score / 2.0 };
                }
            }
        }
        // Reverse push keeps document order on pop.
        let children: Vec<_> = node.children().collect();
        stack.extend(children.into_iter().rev());
    }

    let final_score = |id: NodeId| -> f64 {
        let node = doc.tree.get(id).expect("scored node exists");
        scores[&id] * (1.0 - link_density(node))
    };

    let mut best: Option<(NodeId, f64)> = None;
    for &id in &order {
        let score = final_score(id);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((id, score));
        }
    }
    let Some((best_id, best_score)) = best else {
        return vec![body];
    };
    let top = doc.tree.get(best_id).expect("best node exists");

    // Siblings that look like continuation of the article.
    let Some(parent) = top.parent() else {
        return vec![top];
    };
    let threshold = (best_score * 0.2).max(10.0);
    parent
        .children()
        .filter(|sibling| {
            if sibling.id() == best_id {
                return true;
            }
            if !sibling.value().is_element() || is_skipped(*sibling) {
                return false;
            }
            if scores.contains_key(&sibling.id()) && final_score(sibling.id()) >= threshold {
                return true;
            }
            if tag(*sibling) == Some("p") {
                let text = inner_text(*sibling);
                let len = char_len(&text);
                let density = link_density(*sibling);
                return (len > 80 && density < 0.25)
                    || (len > 0 && density == 0.0 && text.ends_with(['.', '!', '?']));
            }
            false
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Rendering

fn render(node: NodeRef<'_, Node>, out: &mut String) {
    if is_skipped(node) {
        return;
    }
    match node.value() {
        Node::Text(t) => {
            // Source line breaks are layout, not content, except in <pre>.
            let in_pre = node
                .ancestors()
                .any(|a| matches!(a.value(), Node::Element(el) if el.name() == "pre"));
            if in_pre {
                out.push_str(t);
            } else {
                out.extend(t.chars().map(|c| if c == '\n' || c == '\r' { ' ' } else { c }));
            }
        }
        Node::Element(el) => {
            let name = el.name();
            if name == "br" {
                out.push('\n');
                return;
            }
            let block = BLOCK.contains(&name);
            let cell = CELL.contains(&name);
            if block {
                out.push('\n');
            } else if cell {
                out.push(' ');
            }
            for child in node.children() {
                render(child, out);
            }
            if block {
                out.push('\n');
            } else if cell {
                out.push(' ');
            }
        }
        _ => {
            for child in node.children() {
                render(child, out);
            }
        }
    }
}
