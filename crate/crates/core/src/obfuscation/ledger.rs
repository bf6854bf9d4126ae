//! Rewrite bookkeeping: which on-the-wire headers belong to which original
//! flows.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

/// Address pair identifying a flow at some hop.
pub type AddrPair = (Ipv4Addr, Ipv4Addr);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub original: AddrPair,
    pub hop_index: usize,
}

/// Bijective map between rewritten headers and the original flows they
/// carry. One entry per rewrite hop per active flow; entries leave the
/// ledger when the flow's rules are removed.
#[derive(Debug, Default)]
pub struct RewriteLedger {
    forward: BTreeMap<AddrPair, LedgerEntry>,
    reverse: BTreeMap<(AddrPair, usize), AddrPair>,
}

impl RewriteLedger {
    pub fn record(&mut self, rewritten: AddrPair, original: AddrPair, hop_index: usize) {
        debug_assert!(
            !self.forward.contains_key(&rewritten),
            "rewrite collision for {rewritten:?}"
        );
        self.forward.insert(
            rewritten,
            LedgerEntry {
                original,
                hop_index,
            },
        );
        self.reverse.insert((original, hop_index), rewritten);
    }

    pub fn original_of(&self, rewritten: AddrPair) -> Option<&LedgerEntry> {
        self.forward.get(&rewritten)
    }

    pub fn rewritten_of(&self, original: AddrPair, hop_index: usize) -> Option<AddrPair> {
        self.reverse.get(&(original, hop_index)).copied()
    }

    /// Drops every entry of `original`, used when the flow's rules expire.
    pub fn forget_flow(&mut self, original: AddrPair) {
        self.forward.retain(|_, e| e.original != original);
        self.reverse.retain(|(orig, _), _| *orig != original);
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Checks that the forward and reverse maps mirror each other exactly.
    pub fn is_bijective(&self) -> bool {
        self.forward.len() == self.reverse.len()
            && self.forward.iter().all(|(rewritten, e)| {
                self.reverse.get(&(e.original, e.hop_index)) == Some(rewritten)
            })
    }
}
