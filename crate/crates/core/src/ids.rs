//! Opaque identifiers for the four cost layers, plus unit tags.

use std::cmp::Ordering;
use std::fmt;

use serde::Deserialize;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

string_id!(
    /// Identifies one interaction (a coherent unit of work).
    InteractionId
);
string_id!(ComponentId);
string_id!(
    /// Task ids are scoped to the component that owns the task table.
    TaskId
);
string_id!(MetricId);
string_id!(
    /// Opaque unit tag such as `ms` or `percent`. Tags never convert into
    /// each other; equality is the only relation.
    Unit
);

/// Orders strings so that embedded digit runs compare numerically:
/// `task3 < task10`, `temploop-2 < temploop-12`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let mut ca = Chunks(a);
    let mut cb = Chunks(b);
    loop {
        match (ca.next(), cb.next()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) => {
                let ord = match (x.parse::<u128>(), y.parse::<u128>()) {
                    (Ok(nx), Ok(ny)) => nx.cmp(&ny).then_with(|| x.len().cmp(&y.len())),
                    _ => x.cmp(y),
                };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
        }
    }
}

struct Chunks<'a>(&'a str);

impl<'a> Iterator for Chunks<'a> {
    type Item = &'a str;

    fn next(&mut self) -> Option<&'a str> {
        let first = self.0.chars().next()?;
        let digit = first.is_ascii_digit();
        let end = self
            .0
            .char_indices()
            .find(|(_, c)| c.is_ascii_digit() != digit)
            .map_or(self.0.len(), |(i, _)| i);
        let (head, tail) = self.0.split_at(end);
        self.0 = tail;
        Some(head)
    }
}
