//! Byte accounting and the message transcript.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::Hasher;

use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher24;

use crate::audit::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    User,
    Tpa,
    Node(usize),
}

impl Party {
    pub fn role(self) -> Role {
        match self {
            Party::User => Role::User,
            Party::Tpa => Role::Tpa,
            Party::Node(_) => Role::Node,
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::User => f.write_str("user"),
            Party::Tpa => f.write_str("tpa"),
            Party::Node(i) => write!(f, "node{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    DataBlock,
    Tag,
    Coefficient,
    Proof,
    Control,
}

pub const CATEGORIES: [Category; 5] = [
    Category::DataBlock,
    Category::Tag,
    Category::Coefficient,
    Category::Proof,
    Category::Control,
];

/// Bytes sent and received per party and category. Every message is counted
/// once on each side.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ByteLedger {
    sent: BTreeMap<(Party, Category), u64>,
    received: BTreeMap<(Party, Category), u64>,
}

impl ByteLedger {
    pub fn record(&mut self, from: Party, to: Party, category: Category, bytes: usize) {
        *self.sent.entry((from, category)).or_default() += bytes as u64;
        *self.received.entry((to, category)).or_default() += bytes as u64;
    }

    pub fn sent(&self, party: Party, category: Category) -> u64 {
        self.sent.get(&(party, category)).copied().unwrap_or(0)
    }

    pub fn received(&self, party: Party, category: Category) -> u64 {
        self.received.get(&(party, category)).copied().unwrap_or(0)
    }

    /// Sent plus received.
    pub fn traffic(&self, party: Party, category: Category) -> u64 {
        self.sent(party, category) + self.received(party, category)
    }

    pub fn total_sent(&self) -> u64 {
        self.sent.values().sum()
    }

    pub fn total_received(&self) -> u64 {
        self.received.values().sum()
    }
}

/// One line of the transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub step: u64,
    pub event: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    records: Vec<Record>,
}

pub(crate) fn digest(bytes: &[u8]) -> String {
    let mut h = SipHasher24::new_with_keys(0, 0);
    h.write(bytes);
    format!("{:016x}", h.finish())
}

impl Transcript {
    pub(crate) fn message(&mut self, kind: &str, from: Party, to: Party, category: Category, payload: &[u8]) {
        let step = self.records.len() as u64;
        self.records.push(Record {
            step,
            event: kind.to_string(),
            from: Some(from.to_string()),
            to: Some(to.to_string()),
            category: Some(category),
            bytes: Some(payload.len()),
            digest: Some(digest(payload)),
            detail: None,
        });
    }

    pub(crate) fn event(&mut self, kind: &str, detail: serde_json::Value) {
        let step = self.records.len() as u64;
        self.records.push(Record {
            step,
            event: kind.to_string(),
            from: None,
            to: None,
            category: None,
            bytes: None,
            digest: None,
            detail: Some(detail),
        });
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_counts_both_sides() {
        let mut l = ByteLedger::default();
        l.record(Party::User, Party::Node(1), Category::DataBlock, 10);
        l.record(Party::Node(1), Party::Tpa, Category::Proof, 7);
        assert_eq!(l.sent(Party::User, Category::DataBlock), 10);
        assert_eq!(l.received(Party::Node(1), Category::DataBlock), 10);
        assert_eq!(l.received(Party::User, Category::DataBlock), 0);
        assert_eq!(l.total_sent(), l.total_received());
    }

    #[test]
    fn transcript_lines() {
        let mut t = Transcript::default();
        t.message("challenge", Party::Tpa, Party::Node(0), Category::Control, &[1, 2, 3]);
        t.event("verdict", serde_json::json!({"accepted": true}));
        let text = t.to_json_lines();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().contains("\"to\":\"node1\""));
        let back: Record = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(back.step, 1);
    }
}
