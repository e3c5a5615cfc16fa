//! Structural schemas for generated views: allowed labels, required
//! attributes, and child cardinalities.
//!
//! ```xml
//! <schema root="sites">
//!   <element name="sites"><child name="site" min="0" max="unbounded"/></element>
//!   <element name="site" text="false">
//!     <attribute name="name" required="true"/>
//!     <child name="downtime" max="unbounded"/>
//!   </element>
//!   <element name="downtime"/>
//! </schema>
//! ```
//!
//! Undeclared attributes are accepted. Undeclared elements and children not
//! listed under their parent are rejected. Text content is rejected unless the
//! element declares `text="true"`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::document::{Element, ViewDocument};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid schema: {0}")]
pub struct SchemaError(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChildRule {
    pub label: String,
    pub min: usize,
    /// `None` means unbounded.
    pub max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ElementRule {
    pub required_attributes: Vec<String>,
    pub children: Vec<ChildRule>,
    pub text: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralSchema {
    pub root: String,
    pub elements: BTreeMap<String, ElementRule>,
}

impl StructuralSchema {
    pub fn from_document(doc: &ViewDocument) -> Result<Self, SchemaError> {
        let root_el = &doc.root;
        if root_el.label != "schema" {
            return Err(SchemaError(format!(
                "expected `schema` root, found `{}`",
                root_el.label
            )));
        }
        let root = root_el
            .attr("root")
            .ok_or_else(|| SchemaError("`schema` needs a `root` attribute".into()))?
            .to_string();
        let mut elements = BTreeMap::new();
        for decl in root_el.elements() {
            if decl.label != "element" {
                return Err(SchemaError(format!("unexpected `{}`", decl.label)));
            }
            let name = decl
                .attr("name")
                .ok_or_else(|| SchemaError("`element` needs a `name`".into()))?;
            let mut rule = ElementRule {
                text: decl.attr("text") == Some("true"),
                ..Default::default()
            };
            for item in decl.elements() {
                let item_name = item
                    .attr("name")
                    .ok_or_else(|| SchemaError(format!("`{}` needs a `name`", item.label)))?;
                match item.label.as_str() {
                    "attribute" => {
                        if item.attr("required") == Some("true") {
                            rule.required_attributes.push(item_name.to_string());
                        }
                    }
                    "child" => {
                        let min = match item.attr("min") {
                            None => 0,
                            Some(v) => v
                                .parse()
                                .map_err(|_| SchemaError(format!("bad min `{v}`")))?,
                        };
                        let max = match item.attr("max") {
                            None => Some(1),
                            Some("unbounded") => None,
                            Some(v) => Some(
                                v.parse()
                                    .map_err(|_| SchemaError(format!("bad max `{v}`")))?,
                            ),
                        };
                        if matches!(max, Some(m) if m < min) {
                            return Err(SchemaError(format!(
                                "child `{item_name}` has max < min"
                            )));
                        }
                        rule.children.push(ChildRule {
                            label: item_name.to_string(),
                            min,
                            max,
                        });
                    }
                    other => return Err(SchemaError(format!("unexpected `{other}`"))),
                }
            }
            if elements.insert(name.to_string(), rule).is_some() {
                return Err(SchemaError(format!("element `{name}` declared twice")));
            }
        }
        if !elements.contains_key(&root) {
            return Err(SchemaError(format!("root element `{root}` is not declared")));
        }
        Ok(Self { root, elements })
    }

    pub fn parse(xml: &str) -> Result<Self, SchemaError> {
        let doc = ViewDocument::from_xml(xml).map_err(|e| SchemaError(e.to_string()))?;
        Self::from_document(&doc)
    }

    /// Checks `doc`; the error is the first violation in document order.
    pub fn validate(&self, doc: &ViewDocument) -> Result<(), String> {
        if doc.root.label != self.root {
            return Err(format!(
                "/{}: expected root `{}`",
                doc.root.label, self.root
            ));
        }
        self.check(&doc.root, &format!("/{}", doc.root.label))
    }

    fn check(&self, element: &Element, path: &str) -> Result<(), String> {
        let rule = self
            .elements
            .get(&element.label)
            .ok_or_else(|| format!("{path}: undeclared element `{}`", element.label))?;
        for attr in &rule.required_attributes {
            if element.attr(attr).is_none() {
                return Err(format!("{path}: missing required attribute `{attr}`"));
            }
        }
        if !rule.text && !element.text().trim().is_empty() {
            return Err(format!("{path}: text content not allowed"));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (index, child) in element.elements().enumerate() {
            if !rule.children.iter().any(|c| c.label == child.label) {
                return Err(format!(
                    "{path}: `{}` not allowed under `{}`",
                    child.label, element.label
                ));
            }
            *counts.entry(child.label.as_str()).or_default() += 1;
            self.check(child, &format!("{path}/{}[{}]", child.label, index + 1))?;
        }
        for child_rule in &rule.children {
            let n = counts.get(child_rule.label.as_str()).copied().unwrap_or(0);
            if n < child_rule.min {
                return Err(format!(
                    "{path}: expected at least {} `{}`, found {n}",
                    child_rule.min, child_rule.label
                ));
            }
            if let Some(max) = child_rule.max {
                if n > max {
                    return Err(format!(
                        "{path}: expected at most {max} `{}`, found {n}",
                        child_rule.label
                    ));
                }
            }
        }
        Ok(())
    }
}
