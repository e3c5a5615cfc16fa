//! Response bodies in the requested format.
//!
//! View documents default to XML; records default to JSON. Records asked for
//! as XML become an element per object, scalar fields as attributes, nested
//! objects as child elements and array entries as repeated children.

use std::sync::Arc;

use axum::http::header::{CONTENT_TYPE, HeaderValue};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use gridops_core::clock::format_timestamp;
use gridops_core::document::is_valid_name;
use gridops_core::{Element, Format, ViewContent, ViewDocument};
use serde::Serialize;
use serde_json::Value;

use crate::error::ApiError;

pub enum Reply {
    View(Arc<ViewContent>),
    Doc(ViewDocument),
    Data {
        status: StatusCode,
        root: &'static str,
        /// Label for array entries.
        item: &'static str,
        value: Value,
    },
}

impl Reply {
    pub fn data(root: &'static str, item: &'static str, value: impl Serialize) -> Result<Self, ApiError> {
        let value = serde_json::to_value(value).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Reply::Data {
            status: StatusCode::OK,
            root,
            item,
            value,
        })
    }

    pub fn with_status(self, code: StatusCode) -> Self {
        match self {
            Reply::Data { root, item, value, .. } => Reply::Data {
                status: code,
                root,
                item,
                value,
            },
            other => other,
        }
    }
}

fn body(status: StatusCode, format: Format, text: String) -> Response {
    let mime = match format {
        Format::Xml => "application/xml",
        Format::Json => "application/json",
    };
    let mut res = (status, text).into_response();
    res.headers_mut().insert(CONTENT_TYPE, HeaderValue::from_static(mime));
    res
}

fn label(key: &str, fallback: &str) -> String {
    if is_valid_name(key) {
        key.to_string()
    } else {
        fallback.to_string()
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Converts a serialized record into an element named `name`.
pub fn value_to_element(name: &str, item: &str, value: &Value) -> Element {
    let mut el = Element::new(name);
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                match v {
                    Value::Null => {}
                    Value::Object(_) => el.push(value_to_element(&label(k, item), item, v)),
                    Value::Array(entries) => {
                        let mut list = Element::new(label(k, item));
                        for e in entries {
                            list.push(value_to_element(item, item, e));
                        }
                        el.push(list);
                    }
                    other => {
                        if is_valid_name(k) {
                            el.set_attr(k, scalar(other).unwrap_or_default());
                        }
                    }
                }
            }
        }
        Value::Array(entries) => {
            for e in entries {
                el.push(value_to_element(item, item, e));
            }
        }
        Value::Null => {}
        other => el.push_text(scalar(other).unwrap_or_default()),
    }
    el
}

pub fn render(format: Option<Format>, reply: Reply) -> Response {
    match reply {
        Reply::View(content) => {
            let format = format.unwrap_or(Format::Xml);
            let mut res = body(StatusCode::OK, format, content.render(format));
            let headers = res.headers_mut();
            headers.insert("x-content-version", HeaderValue::from(content.version));
            if let Ok(v) = HeaderValue::from_str(&format_timestamp(content.generated_at)) {
                headers.insert("x-generated-at", v);
            }
            res
        }
        Reply::Doc(doc) => {
            let format = format.unwrap_or(Format::Xml);
            let text = match format {
                Format::Xml => doc.to_xml(),
                Format::Json => doc.to_json(),
            };
            body(StatusCode::OK, format, text)
        }
        Reply::Data { status, root, item, value } => match format.unwrap_or(Format::Json) {
            Format::Json => body(status, Format::Json, value.to_string()),
            Format::Xml => body(status, Format::Xml, ViewDocument::new(value_to_element(root, item, &value)).to_xml()),
        },
    }
}

pub fn render_error(format: Option<Format>, err: ApiError) -> Response {
    let status = err.status;
    let value = serde_json::to_value(&err).unwrap_or(Value::Null);
    render(
        format,
        Reply::Data {
            status,
            root: "error",
            item: "item",
            value,
        },
    )
}

pub fn respond(format: Option<Format>, result: Result<Reply, ApiError>) -> Response {
    match result {
        Ok(reply) => render(format, reply),
        Err(e) => render_error(format, e),
    }
}
