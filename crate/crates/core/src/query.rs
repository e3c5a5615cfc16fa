//! Path queries over [`ViewDocument`]s.
//!
//! Grammar:
//!
//! ```text
//! query     := "/" | step+ [ "/text()" ]
//! step      := "/" name predicate*
//! predicate := "[" "@" name "=" literal "]"     attribute equals literal
//!            | "[" name "=" literal "]"         some child `name` has text equal to literal
//! literal   := "'" chars "'" | '"' chars '"'
//! ```
//!
//! The first step matches the root element. Results are copies of the selected
//! nodes in document order, wrapped under a `result` root.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::document::{Element, Node, ViewDocument};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("query parse error at position {position}: {message}")]
pub struct QueryParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Predicate {
    Attribute { name: String, value: String },
    ChildText { name: String, value: String },
}

impl Predicate {
    pub fn matches(&self, element: &Element) -> bool {
        match self {
            Predicate::Attribute { name, value } => element.attr(name) == Some(value.as_str()),
            Predicate::ChildText { name, value } => {
                element.elements_named(name).any(|c| c.text() == *value)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Step {
    pub label: String,
    pub predicates: Vec<Predicate>,
}

impl Step {
    pub fn matches(&self, element: &Element) -> bool {
        element.label == self.label && self.predicates.iter().all(|p| p.matches(element))
    }
}

/// A parsed path query.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PathQuery {
    pub steps: Vec<Step>,
    pub text: bool,
}

impl PathQuery {
    /// The identity query `/`.
    pub fn identity() -> Self {
        Self {
            steps: Vec::new(),
            text: false,
        }
    }

    pub fn parse(input: &str) -> Result<Self, QueryParseError> {
        Parser::new(input).parse()
    }

    /// Evaluates the query; the result root is labeled `result`.
    pub fn evaluate(&self, doc: &ViewDocument) -> ViewDocument {
        self.evaluate_as(doc, "result")
    }

    pub fn evaluate_as(&self, doc: &ViewDocument, root_label: &str) -> ViewDocument {
        let mut result = Element::new(root_label);
        if self.steps.is_empty() {
            if self.text {
                result.push_text(doc.root.text());
            } else {
                result.push(doc.root.clone());
            }
            return ViewDocument::new(result);
        }
        let mut current: Vec<&Element> = Vec::new();
        if self.steps[0].matches(&doc.root) {
            current.push(&doc.root);
        }
        for step in &self.steps[1..] {
            // Parents are visited in document order and never nest (all share
            // one depth), so concatenating their matching children keeps
            // document order.
            current = current
                .into_iter()
                .flat_map(|parent| parent.elements().filter(|c| step.matches(c)))
                .collect();
        }
        for element in current {
            if self.text {
                for child in &element.children {
                    if let Node::Text(t) = child {
                        result.children.push(Node::Text(t.clone()));
                    }
                }
            } else {
                result.push(element.clone());
            }
        }
        ViewDocument::new(result)
    }
}

impl FromStr for PathQuery {
    type Err = QueryParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for PathQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() && !self.text {
            return f.write_str("/");
        }
        for step in &self.steps {
            write!(f, "/{}", step.label)?;
            for p in &step.predicates {
                match p {
                    Predicate::Attribute { name, value } => write!(f, "[@{name}={}]", quote(value))?,
                    Predicate::ChildText { name, value } => write!(f, "[{name}={}]", quote(value))?,
                }
            }
        }
        if self.text {
            f.write_str("/text()")?;
        }
        Ok(())
    }
}

fn quote(value: &str) -> String {
    if value.contains('\'') {
        format!("\"{value}\"")
    } else {
        format!("'{value}'")
    }
}

struct Parser {
    chars: Vec<(usize, char)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn new(input: &str) -> Self {
        Self {
            chars: input.char_indices().collect(),
            pos: 0,
            len: input.len(),
        }
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map(|(i, _)| *i).unwrap_or(self.len)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|(_, c)| *c)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, QueryParseError> {
        Err(QueryParseError {
            position: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, want: char) -> Result<(), QueryParseError> {
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => self.error(format!("expected `{want}`, found `{c}`")),
            None => self.error(format!("expected `{want}`, found end of input")),
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn parse(mut self) -> Result<PathQuery, QueryParseError> {
        self.skip_ws();
        if self.peek().is_none() {
            return self.error("empty query");
        }
        let mut query = PathQuery::identity();
        self.expect('/')?;
        self.skip_ws();
        if self.peek().is_none() {
            return Ok(query);
        }
        loop {
            let name = self.name()?;
            if name == "text" && self.peek() == Some('(') {
                self.pos += 1;
                self.expect(')')?;
                if query.steps.is_empty() {
                    return self.error("`text()` needs at least one element step before it");
                }
                query.text = true;
                self.skip_ws();
                if self.peek().is_some() {
                    return self.error("`text()` must be the final step");
                }
                return Ok(query);
            }
            let mut step = Step {
                label: name,
                predicates: Vec::new(),
            };
            while self.peek() == Some('[') {
                self.pos += 1;
                step.predicates.push(self.predicate()?);
            }
            query.steps.push(step);
            self.skip_ws();
            match self.peek() {
                None => return Ok(query),
                Some('/') => {
                    self.pos += 1;
                }
                Some(c) => return self.error(format!("unexpected `{c}`")),
            }
        }
    }

    fn name(&mut self) -> Result<String, QueryParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            let ok = if self.pos == start {
                c.is_alphabetic() || c == '_'
            } else {
                c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')
            };
            if !ok {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return match self.peek() {
                Some(c) => self.error(format!("expected a name, found `{c}`")),
                None => self.error("expected a name, found end of input"),
            };
        }
        Ok(self.chars[start..self.pos].iter().map(|(_, c)| c).collect())
    }

    fn predicate(&mut self) -> Result<Predicate, QueryParseError> {
        self.skip_ws();
        let attribute = self.peek() == Some('@');
        if attribute {
            self.pos += 1;
        }
        let name = self.name()?;
        self.skip_ws();
        self.expect('=')?;
        self.skip_ws();
        let value = self.literal()?;
        self.skip_ws();
        self.expect(']')?;
        Ok(if attribute {
            Predicate::Attribute { name, value }
        } else {
            Predicate::ChildText { name, value }
        })
    }

    fn literal(&mut self) -> Result<String, QueryParseError> {
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            Some(c) => return self.error(format!("expected a quoted literal, found `{c}`")),
            None => return self.error("expected a quoted literal, found end of input"),
        };
        self.pos += 1;
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == quote {
                let value = self.chars[start..self.pos].iter().map(|(_, c)| c).collect();
                self.pos += 1;
                return Ok(value);
            }
            self.pos += 1;
        }
        self.error("unterminated literal")
    }
}
