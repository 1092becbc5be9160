//! Graph serialization and communication summaries.
//!
//! Two forms are provided: a listing meant for people (`.fedgraph.txt`),
//! and a canonical `FEDGRAPH/1` encoding meant for tools (`.fedgraph`) that
//! round-trips exactly.

mod canonical;
mod text;

use std::fmt;

use crate::ir::{Graph, PrimitiveId};

pub use canonical::{parse, serialize_canonical};
pub use text::serialize_text;

/// Communication equations of a graph, in program order, each with the
/// shape of its operand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommSummary {
    pub entries: Vec<(PrimitiveId, Vec<usize>)>,
}

impl CommSummary {
    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(p, _)| p.name()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

impl fmt::Display for CommSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|(p, s)| {
                let dims: Vec<String> = s.iter().map(|d| d.to_string()).collect();
                format!("{p}[{}]", dims.join(","))
            })
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

pub fn comm_summary(g: &Graph) -> CommSummary {
    CommSummary {
        entries: g
            .equations()
            .iter()
            .filter(|e| e.primitive.id().is_communication())
            .map(|e| (e.primitive.id(), g.value(e.inputs[0]).shape.clone()))
            .collect(),
    }
}
