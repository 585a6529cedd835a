//! Identifier newtypes.
//!
//! Every entity class gets its own type so a `RoleId` can never be passed
//! where a `UserId` is expected. All of them share the same lexical rules:
//! non-empty UTF-8, at most 256 bytes, no whitespace and no control
//! characters. Ordering is byte-lexicographic, which is what the canonical
//! snapshot format sorts by.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

pub const MAX_ID_BYTES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("identifier is empty")]
    Empty,
    #[error("identifier exceeds {MAX_ID_BYTES} bytes ({0} bytes)")]
    TooLong(usize),
    #[error("identifier {0:?} contains whitespace or a control character")]
    BadChar(String),
}

pub fn check_identifier(raw: &str) -> Result<(), IdError> {
    if raw.is_empty() {
        return Err(IdError::Empty);
    }
    if raw.len() > MAX_ID_BYTES {
        return Err(IdError::TooLong(raw.len()));
    }
    if raw.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(IdError::BadChar(raw.to_string()));
    }
    Ok(())
}

/// A value strictly below every well-formed identifier; used as a range
/// lower bound over pair-keyed sets.
pub(crate) trait Bottom {
    fn bottom() -> Self;
}

macro_rules! identifier {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(raw: impl AsRef<str>) -> Result<Self, IdError> {
                let raw = raw.as_ref();
                check_identifier(raw)?;
                Ok(Self(Arc::from(raw)))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl Bottom for $name {
            fn bottom() -> Self {
                Self(Arc::from(""))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:?})", stringify!($name), &*self.0)
            }
        }

        impl FromStr for $name {
            type Err = IdError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::new(s)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

identifier!(
    /// A user (student, staff member) whose access is being managed.
    UserId
);
identifier!(RoleId);
identifier!(PermId);
identifier!(
    /// An organizational unit: department, course, semester cohort, ...
    OuId
);
identifier!(
    /// An already-authenticated administrative principal.
    PrincipalId
);
identifier!(
    /// Free-form identifier used for constraint ids, directive ids,
    /// department labels and permission operation/object names.
    Name
);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_dotted_names() {
        assert_eq!(UserId::new("u.alice").unwrap().as_str(), "u.alice");
        assert!(OuId::new("ou.cs.sem1").is_ok());
        assert!(Name::new("lab-pc").is_ok());
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(UserId::new(""), Err(IdError::Empty));
        assert!(matches!(UserId::new("a b"), Err(IdError::BadChar(_))));
        assert!(matches!(UserId::new("a\tb"), Err(IdError::BadChar(_))));
        assert!(matches!(UserId::new("a\u{7}"), Err(IdError::BadChar(_))));
        assert!(matches!(UserId::new("x".repeat(257)), Err(IdError::TooLong(257))));
        assert!(UserId::new("x".repeat(256)).is_ok());
    }

    #[test]
    fn orders_by_bytes() {
        let mut v = [RoleId::new("r.b").unwrap(), RoleId::new("R.z").unwrap(), RoleId::new("r.a").unwrap()];
        v.sort();
        let names: Vec<_> = v.iter().map(|r| r.as_str()).collect();
        assert_eq!(names, ["R.z", "r.a", "r.b"]);
    }
}
