//! Ordered labeled trees that every data view produces and every query consumes.
//!
//! A [`ViewDocument`] is isomorphic to an XML document restricted to elements,
//! attributes and text. It has two wire forms:
//!
//! * XML, serialized compactly (no indentation whitespace is introduced, and
//!   whitespace-only text between elements is dropped on parse).
//! * A JSON mapping: `{"<root>": <element>}`, where an element is an object with
//!   `"@name"` keys for attributes, `"#text"` for its text, and one key per child
//!   label (a single object, or an array when the label repeats). An element that
//!   has no attributes and exactly one text child collapses to a plain string.
//!   When grouping children by label would reorder them (interleaved labels or
//!   text mixed with elements), the children are written in order under
//!   `"#children"` instead, each entry being a string or a one-key object.

use std::collections::BTreeMap;
use std::fmt;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde_json::{Map, Value};
use thiserror::Error;

/// Errors raised while decoding a document from XML or JSON.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocumentError {
    #[error("malformed XML at byte {position}: {message}")]
    Xml { position: u64, message: String },
    #[error("malformed JSON document: {0}")]
    Json(String),
    #[error("document has no root element")]
    NoRoot,
    #[error("document has more than one root element")]
    MultipleRoots,
}

/// A child of an [`Element`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Element(Element),
    Text(String),
}

/// One labeled node with attributes and ordered children.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Element {
    pub label: String,
    pub attributes: BTreeMap<String, String>,
    pub children: Vec<Node>,
}

impl Element {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            attributes: BTreeMap::new(),
            children: Vec::new(),
        }
    }

    /// Builder-style attribute setter.
    pub fn with_attr(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(name.into(), value.into());
        self
    }

    pub fn with_child(mut self, child: Element) -> Self {
        self.children.push(Node::Element(child));
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.push_text(text);
        self
    }

    pub fn set_attr(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.attributes.insert(name.into(), value.into());
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes.get(name).map(String::as_str)
    }

    pub fn push(&mut self, child: Element) {
        self.children.push(Node::Element(child));
    }

    /// Appends text, merging with a trailing text node. Empty text is dropped.
    pub fn push_text(&mut self, text: impl Into<String>) {
        let text = text.into();
        if text.is_empty() {
            return;
        }
        if let Some(Node::Text(last)) = self.children.last_mut() {
            last.push_str(&text);
        } else {
            self.children.push(Node::Text(text));
        }
    }

    /// Element children in document order.
    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|c| match c {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    pub fn elements_named<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Element> + 'a {
        self.elements().filter(move |e| e.label == label)
    }

    pub fn first_named(&self, label: &str) -> Option<&Element> {
        self.elements().find(|e| e.label == label)
    }

    /// Concatenation of the direct text children.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for child in &self.children {
            if let Node::Text(t) = child {
                out.push_str(t);
            }
        }
        out
    }

    /// Number of elements in this subtree, including `self`.
    pub fn element_count(&self) -> usize {
        1 + self.elements().map(Element::element_count).sum::<usize>()
    }

    fn write_xml(&self, out: &mut String) {
        out.push('<');
        out.push_str(&self.label);
        for (name, value) in &self.attributes {
            out.push(' ');
            out.push_str(name);
            out.push_str("=\"");
            escape_into(value, true, out);
            out.push('"');
        }
        if self.children.is_empty() {
            out.push_str("/>");
            return;
        }
        out.push('>');
        for child in &self.children {
            match child {
                Node::Element(e) => e.write_xml(out),
                Node::Text(t) => escape_into(t, false, out),
            }
        }
        out.push_str("</");
        out.push_str(&self.label);
        out.push('>');
    }

    fn write_pretty(&self, depth: usize, out: &mut String) {
        let has_text = self.children.iter().any(|c| matches!(c, Node::Text(_)));
        if has_text || self.children.is_empty() {
            for _ in 0..depth {
                out.push_str("  ");
            }
            self.write_xml(out);
            out.push('\n');
            return;
        }
        for _ in 0..depth {
            out.push_str("  ");
        }
        out.push('<');
        out.push_str(&self.label);
        for (name, value) in &self.attributes {
            out.push(' ');
            out.push_str(name);
            out.push_str("=\"");
            escape_into(value, true, out);
            out.push('"');
        }
        out.push_str(">\n");
        for child in self.elements() {
            child.write_pretty(depth + 1, out);
        }
        for _ in 0..depth {
            out.push_str("  ");
        }
        out.push_str("</");
        out.push_str(&self.label);
        out.push_str(">\n");
    }

    fn to_json_value(&self) -> Value {
        if self.attributes.is_empty() && self.children.len() == 1 {
            if let Node::Text(t) = &self.children[0] {
                return Value::String(t.clone());
            }
        }
        let mut obj = Map::new();
        for (name, value) in &self.attributes {
            obj.insert(format!("@{name}"), Value::String(value.clone()));
        }
        if self.groups_cleanly() {
            for child in &self.children {
                match child {
                    Node::Text(t) => {
                        obj.insert("#text".to_string(), Value::String(t.clone()));
                    }
                    Node::Element(e) => {
                        let value = e.to_json_value();
                        match obj.get_mut(&e.label) {
                            None => {
                                obj.insert(e.label.clone(), value);
                            }
                            Some(Value::Array(items)) => items.push(value),
                            Some(existing) => {
                                let first = existing.take();
                                *existing = Value::Array(vec![first, value]);
                            }
                        }
                    }
                }
            }
        } else {
            let items = self
                .children
                .iter()
                .map(|child| match child {
                    Node::Text(t) => Value::String(t.clone()),
                    Node::Element(e) => {
                        let mut one = Map::new();
                        one.insert(e.label.clone(), e.to_json_value());
                        Value::Object(one)
                    }
                })
                .collect();
            obj.insert("#children".to_string(), Value::Array(items));
        }
        Value::Object(obj)
    }

    // Grouping by label is order-preserving only when there is no mixed
    // content and every label's occurrences are contiguous.
    fn groups_cleanly(&self) -> bool {
        let texts = self
            .children
            .iter()
            .filter(|c| matches!(c, Node::Text(_)))
            .count();
        let elements = self.children.len() - texts;
        if texts > 0 {
            return elements == 0 && texts == 1;
        }
        let mut seen: Vec<&str> = Vec::new();
        for e in self.elements() {
            match seen.last() {
                Some(last) if *last == e.label => {}
                _ => {
                    if seen.contains(&e.label.as_str()) {
                        return false;
                    }
                    seen.push(&e.label);
                }
            }
        }
        true
    }

    fn from_json_value(label: &str, value: &Value) -> Result<Self, DocumentError> {
        let mut element = Element::new(label);
        match value {
            Value::String(s) => element.push_text(s.clone()),
            Value::Object(obj) => {
                for (key, v) in obj {
                    if let Some(attr) = key.strip_prefix('@') {
                        let s = v.as_str().ok_or_else(|| {
                            DocumentError::Json(format!("attribute `{attr}` must be a string"))
                        })?;
                        element.set_attr(attr, s);
                    } else if key == "#text" {
                        match v {
                            Value::String(s) => element.push_text(s.clone()),
                            _ => {
                                return Err(DocumentError::Json(
                                    "`#text` must be a string".to_string(),
                                ))
                            }
                        }
                    } else if key == "#children" {
                        let items = v.as_array().ok_or_else(|| {
                            DocumentError::Json("`#children` must be an array".to_string())
                        })?;
                        for item in items {
                            match item {
                                Value::String(s) => element.push_text(s.clone()),
                                Value::Object(one) if one.len() == 1 => {
                                    let (child_label, child) = one.iter().next().unwrap();
                                    element.push(Element::from_json_value(child_label, child)?);
                                }
                                _ => {
                                    return Err(DocumentError::Json(
                                        "`#children` entries are strings or one-key objects"
                                            .to_string(),
                                    ))
                                }
                            }
                        }
                    } else {
                        match v {
                            Value::Array(items) => {
                                for item in items {
                                    element.push(Element::from_json_value(key, item)?);
                                }
                            }
                            other => element.push(Element::from_json_value(key, other)?),
                        }
                    }
                }
            }
            Value::Null => {}
            other => {
                return Err(DocumentError::Json(format!(
                    "element `{label}` must be an object or string, found {other}"
                )))
            }
        }
        Ok(element)
    }
}

/// A whole data-view document: exactly one root element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ViewDocument {
    pub root: Element,
}

impl ViewDocument {
    pub fn new(root: Element) -> Self {
        Self { root }
    }

    /// Shorthand for a document whose root has no content.
    pub fn empty(label: impl Into<String>) -> Self {
        Self::new(Element::new(label))
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        self.root.write_xml(&mut out);
        out
    }

    /// Indented XML for human consumption; text-bearing elements stay on one line.
    pub fn to_xml_pretty(&self) -> String {
        let mut out = String::new();
        self.root.write_pretty(0, &mut out);
        out
    }

    pub fn to_json_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert(self.root.label.clone(), self.root.to_json_value());
        Value::Object(obj)
    }

    pub fn to_json(&self) -> String {
        self.to_json_value().to_string()
    }

    pub fn from_json_value(value: &Value) -> Result<Self, DocumentError> {
        match value {
            Value::Object(obj) if obj.len() == 1 => {
                let (label, body) = obj.iter().next().unwrap();
                Ok(Self::new(Element::from_json_value(label, body)?))
            }
            Value::Object(obj) if obj.is_empty() => Err(DocumentError::NoRoot),
            Value::Object(_) => Err(DocumentError::MultipleRoots),
            _ => Err(DocumentError::Json(
                "top level must be an object with one key".to_string(),
            )),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, DocumentError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| DocumentError::Json(e.to_string()))?;
        Self::from_json_value(&value)
    }

    /// Parses XML. Comments, processing instructions and the declaration are
    /// skipped; whitespace-only text is dropped; CDATA becomes text.
    pub fn from_xml(text: &str) -> Result<Self, DocumentError> {
        let mut reader = Reader::from_str(text);
        let mut stack: Vec<Element> = Vec::new();
        let mut root: Option<Element> = None;

        let xml_err = |reader: &Reader<&[u8]>, message: String| DocumentError::Xml {
            position: reader.buffer_position(),
            message,
        };

        loop {
            let event = reader
                .read_event()
                .map_err(|e| xml_err(&reader, e.to_string()))?;
            match event {
                Event::Start(start) => {
                    let element = start_element(&reader, &start)?;
                    if stack.is_empty() && root.is_some() {
                        return Err(DocumentError::MultipleRoots);
                    }
                    stack.push(element);
                }
                Event::Empty(start) => {
                    let element = start_element(&reader, &start)?;
                    match stack.last_mut() {
                        Some(parent) => parent.push(element),
                        None if root.is_some() => return Err(DocumentError::MultipleRoots),
                        None => root = Some(element),
                    }
                }
                Event::End(_) => {
                    let element = stack
                        .pop()
                        .ok_or_else(|| xml_err(&reader, "unbalanced end tag".to_string()))?;
                    match stack.last_mut() {
                        Some(parent) => parent.push(element),
                        None => root = Some(element),
                    }
                }
                Event::Text(t) => {
                    let raw = t
                        .unescape()
                        .map_err(|e| xml_err(&reader, e.to_string()))?;
                    if raw.trim().is_empty() {
                        continue;
                    }
                    match stack.last_mut() {
                        Some(parent) => parent.push_text(raw.into_owned()),
                        None => {
                            return Err(xml_err(&reader, "text outside the root element".into()))
                        }
                    }
                }
                Event::CData(c) => {
                    let raw = String::from_utf8(c.into_inner().into_owned())
                        .map_err(|e| xml_err(&reader, e.to_string()))?;
                    match stack.last_mut() {
                        Some(parent) => parent.push_text(raw),
                        None => {
                            return Err(xml_err(&reader, "CDATA outside the root element".into()))
                        }
                    }
                }
                Event::Eof => break,
                Event::Comment(_) | Event::Decl(_) | Event::PI(_) | Event::DocType(_) => {}
            }
        }
        if !stack.is_empty() {
            return Err(DocumentError::Xml {
                position: reader.buffer_position(),
                message: format!("unclosed element `{}`", stack.last().unwrap().label),
            });
        }
        root.map(Self::new).ok_or(DocumentError::NoRoot)
    }
}

impl fmt::Display for ViewDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_xml())
    }
}

fn start_element(
    reader: &Reader<&[u8]>,
    start: &quick_xml::events::BytesStart<'_>,
) -> Result<Element, DocumentError> {
    let err = |message: String| DocumentError::Xml {
        position: reader.buffer_position(),
        message,
    };
    let label = std::str::from_utf8(start.name().as_ref())
        .map_err(|e| err(e.to_string()))?
        .to_string();
    let mut element = Element::new(label);
    for attr in start.attributes() {
        let attr = attr.map_err(|e| err(e.to_string()))?;
        let name = std::str::from_utf8(attr.key.as_ref())
            .map_err(|e| err(e.to_string()))?
            .to_string();
        let value = attr
            .unescape_value()
            .map_err(|e| err(e.to_string()))?
            .into_owned();
        if element.attributes.insert(name.clone(), value).is_some() {
            return Err(err(format!("duplicate attribute `{name}`")));
        }
    }
    Ok(element)
}

fn escape_into(text: &str, attribute: bool, out: &mut String) {
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attribute => out.push_str("&quot;"),
            '\n' if attribute => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' if attribute => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
}

/// True when `name` is usable as an element or attribute name.
pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':'))
}
