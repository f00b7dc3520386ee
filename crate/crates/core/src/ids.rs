//! Content-derived identifiers for chunks, entities and edges.

use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const FIELD_SEP: u8 = 0x1f;

fn digest_hex(prefix: &str, fields: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for (i, field) in fields.iter().enumerate() {
        if i > 0 {
            hasher.update([FIELD_SEP]);
        }
        hasher.update(field);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(prefix.len() + 16);
    out.push_str(prefix);
    for byte in &digest[..8] {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            /// Wraps an existing identifier string without checking its shape.
            pub fn new(raw: impl Into<String>) -> Self {
                Self(raw.into())
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

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

id_type!(
    /// Identifier of a text-chunk node: hash of `(doc_id, span, text)`.
    ChunkId
);
id_type!(
    /// Identifier of an entity node: hash of the upsert key `(normalized_name, entity_type)`.
    EntityId
);
id_type!(
    /// Identifier of a relation edge: hash of `(src, dst, relation_type)`.
    EdgeId
);

impl ChunkId {
    pub fn derive(doc_id: &str, start: usize, end: usize, text: &str) -> Self {
        Self(digest_hex(
            "c_",
            &[
                doc_id.as_bytes(),
                start.to_string().as_bytes(),
                end.to_string().as_bytes(),
                text.as_bytes(),
            ],
        ))
    }
}

impl EntityId {
    pub fn derive(normalized_name: &str, entity_type: &str) -> Self {
        Self(digest_hex(
            "e_",
            &[normalized_name.as_bytes(), entity_type.as_bytes()],
        ))
    }
}

impl EdgeId {
    pub fn derive(src: &EntityId, dst: &EntityId, relation_type: &str) -> Self {
        Self(digest_hex(
            "r_",
            &[
                src.as_str().as_bytes(),
                dst.as_str().as_bytes(),
                relation_type.as_bytes(),
            ],
        ))
    }
}
