//! Bearer-token identities and roles.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Ordered by privilege: each role can do everything the previous one can.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Readonly,
    Operator,
    Admin,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Readonly, Role::Operator, Role::Admin];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Readonly => "READONLY",
            Role::Operator => "OPERATOR",
            Role::Admin => "ADMIN",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorIdentity {
    pub token: String,
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, Default)]
pub struct Identities {
    by_token: BTreeMap<String, OperatorIdentity>,
}

impl Identities {
    pub fn new(list: impl IntoIterator<Item = OperatorIdentity>) -> Result<Self, String> {
        let mut by_token = BTreeMap::new();
        for id in list {
            if id.token.is_empty() {
                return Err(format!("operator `{}` has an empty token", id.name));
            }
            if let Some(prev) = by_token.insert(id.token.clone(), id) {
                return Err(format!("token of `{}` is not unique", prev.name));
            }
        }
        Ok(Self { by_token })
    }

    pub fn len(&self) -> usize {
        self.by_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_token.is_empty()
    }

    /// Resolves an `Authorization` header value.
    pub fn authenticate(&self, header: Option<&str>) -> Result<&OperatorIdentity, ApiError> {
        let header = header.ok_or_else(|| ApiError::unauthenticated("missing bearer token"))?;
        let token = header
            .strip_prefix("Bearer ")
            .or_else(|| header.strip_prefix("bearer "))
            .map(str::trim)
            .ok_or_else(|| ApiError::unauthenticated("expected `Authorization: Bearer <token>`"))?;
        self.by_token.get(token).ok_or_else(|| ApiError::unauthenticated("unknown token"))
    }

    /// Authenticates and checks the role in one step.
    pub fn authorize(&self, header: Option<&str>, required: Role) -> Result<&OperatorIdentity, ApiError> {
        let id = self.authenticate(header)?;
        if id.role < required {
            return Err(ApiError::forbidden(format!("{} needs {required}, `{}` is {}", "this endpoint", id.name, id.role)));
        }
        Ok(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids() -> Identities {
        Identities::new([
            OperatorIdentity {
                token: "r".into(),
                name: "reader".into(),
                role: Role::Readonly,
            },
            OperatorIdentity {
                token: "a".into(),
                name: "boss".into(),
                role: Role::Admin,
            },
        ])
        .unwrap()
    }

    #[test]
    fn roles_are_ordered() {
        assert!(Role::Readonly < Role::Operator && Role::Operator < Role::Admin);
        assert_eq!("operator".parse::<Role>().unwrap(), Role::Operator);
    }

    #[test]
    fn authorization_outcomes() {
        let ids = ids();
        assert_eq!(ids.authorize(None, Role::Readonly).unwrap_err().code, "UNAUTHENTICATED");
        assert_eq!(ids.authorize(Some("Bearer x"), Role::Readonly).unwrap_err().code, "UNAUTHENTICATED");
        assert_eq!(ids.authorize(Some("Basic r"), Role::Readonly).unwrap_err().code, "UNAUTHENTICATED");
        assert_eq!(ids.authorize(Some("Bearer r"), Role::Operator).unwrap_err().code, "FORBIDDEN");
        assert_eq!(ids.authorize(Some("Bearer a"), Role::Operator).unwrap().name, "boss");
    }

    #[test]
    fn duplicate_tokens_are_rejected() {
        let dup = OperatorIdentity {
            token: "t".into(),
            name: "x".into(),
            role: Role::Admin,
        };
        assert!(Identities::new([dup.clone(), dup]).is_err());
    }
}
