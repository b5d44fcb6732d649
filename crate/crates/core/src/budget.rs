//! Privacy budgets and the composition ledger.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{config, contract, Error, Result};

/// Relative slack allowed when comparing composed budgets to declared totals.
pub const AUDIT_TOLERANCE: f64 = 1e-12;

/// An (ε, δ) pair. `ε = ∞` marks non-private mode, in which every mechanism
/// is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return config(format!("epsilon must be positive and finite, got {epsilon}"));
        }
        if !(0.0..1.0).contains(&delta) {
            return config(format!("delta must lie in [0, 1), got {delta}"));
        }
        Ok(Self { epsilon, delta })
    }

    /// The sentinel that disables all noise.
    pub fn non_private() -> Self {
        Self {
            epsilon: f64::INFINITY,
            delta: 0.0,
        }
    }

    /// Nothing spent.
    pub fn zero() -> Self {
        Self {
            epsilon: 0.0,
            delta: 0.0,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn is_non_private(&self) -> bool {
        self.epsilon.is_infinite()
    }

    /// Both coordinates multiplied by `fraction`; non-private stays non-private.
    pub fn fraction(&self, fraction: f64) -> Self {
        if self.is_non_private() {
            return *self;
        }
        Self {
            epsilon: self.epsilon * fraction,
            delta: self.delta * fraction,
        }
    }

    /// True when `self` is no larger than `other` in both coordinates, up to
    /// [`AUDIT_TOLERANCE`]. A non-private `other` admits everything.
    pub fn within(&self, other: &PrivacyBudget) -> bool {
        if other.is_non_private() {
            return true;
        }
        let fits = |a: f64, b: f64| a <= b || a <= b + AUDIT_TOLERANCE * b.abs().max(1e-300);
        fits(self.epsilon, other.epsilon) && fits(self.delta, other.delta)
    }
}

impl fmt::Display for PrivacyBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_non_private() {
            write!(f, "(eps=inf, delta={}) [non-private]", self.delta)
        } else {
            write!(f, "(eps={}, delta={})", self.epsilon, self.delta)
        }
    }
}

/// Splits `total` proportionally to `shares`.
pub fn split_budget(total: &PrivacyBudget, shares: &[f64]) -> Result<Vec<PrivacyBudget>> {
    if shares.is_empty() {
        return contract("split_budget needs at least one share");
    }
    if let Some(w) = shares.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return contract(format!("budget shares must be positive, got {w}"));
    }
    let sum: f64 = shares.iter().sum();
    Ok(shares.iter().map(|w| total.fraction(w / sum)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Composition {
    Sequential,
    /// Spent on one part of a disjoint partition of the records. Entries with
    /// the same partition key cost their maximum, once.
    Parallel { partition: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub name: String,
    pub budget: PrivacyBudget,
    pub composition: Composition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetLedger {
    total: PrivacyBudget,
    entries: Vec<LedgerEntry>,
}

impl BudgetLedger {
    pub fn new(total: PrivacyBudget) -> Self {
        Self {
            total,
            entries: Vec::new(),
        }
    }

    pub fn total(&self) -> PrivacyBudget {
        self.total
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn record(&mut self, name: impl Into<String>, budget: PrivacyBudget, composition: Composition) {
        self.entries.push(LedgerEntry {
            name: name.into(),
            budget,
            composition,
        });
    }

    pub fn sequential(&mut self, name: impl Into<String>, budget: PrivacyBudget) {
        self.record(name, budget, Composition::Sequential);
    }

    pub fn audit(&self) -> Result<PrivacyBudget> {
        ledger_audit(self)
    }

    /// Human-readable audit trail, one entry per line, ending with the verdict.
    pub fn render(&self) -> String {
        let mut out = format!("privacy ledger: declared {}\n", self.total);
        for e in &self.entries {
            let kind = match &e.composition {
                Composition::Sequential => "sequential".to_string(),
                Composition::Parallel { partition } => format!("parallel[{partition}]"),
            };
            out.push_str(&format!("  {:<40} {:<40} {}\n", e.name, kind, e.budget));
        }
        match self.audit() {
            Ok(spent) => out.push_str(&format!("  composed {spent}: OK\n")),
            Err(err) => out.push_str(&format!("  {err}\n")),
        }
        out
    }
}

fn sorted_sum(mut values: Vec<f64>) -> f64 {
    // Summing in sorted order makes the result independent of entry order.
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

fn compose(entries: &[LedgerEntry]) -> (f64, f64) {
    let mut eps = Vec::new();
    let mut delta = Vec::new();
    let mut groups: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for e in entries {
        match &e.composition {
            Composition::Sequential => {
                eps.push(e.budget.epsilon);
                delta.push(e.budget.delta);
            }
            Composition::Parallel { partition } => {
                let g = groups.entry(partition.as_str()).or_insert((0.0, 0.0));
                g.0 = g.0.max(e.budget.epsilon);
                g.1 = g.1.max(e.budget.delta);
            }
        }
    }
    for (e, d) in groups.into_values() {
        eps.push(e);
        delta.push(d);
    }
    (sorted_sum(eps), sorted_sum(delta))
}

/// Composes all entries: sequential entries add, parallel entries over one
/// partition contribute their maximum once. Fails when the result exceeds
/// the ledger's declared total.
pub fn ledger_audit(ledger: &BudgetLedger) -> Result<PrivacyBudget> {
    let (epsilon, delta) = compose(&ledger.entries);
    let spent = PrivacyBudget { epsilon, delta };
    if spent.within(&ledger.total) {
        return Ok(spent);
    }
    // Report the entries from the point where the running total first overflows.
    let mut offending = Vec::new();
    for i in 0..ledger.entries.len() {
        let (e, d) = compose(&ledger.entries[..=i]);
        if !(PrivacyBudget { epsilon: e, delta: d }).within(&ledger.total) {
            offending = ledger.entries[i..].iter().map(|e| e.name.clone()).collect();
            break;
        }
    }
    Err(Error::Audit {
        epsilon,
        delta,
        total_epsilon: ledger.total.epsilon,
        total_delta: ledger.total.delta,
        offending,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(e: f64, d: f64) -> PrivacyBudget {
        PrivacyBudget::new(e, d).unwrap()
    }

    #[test]
    fn rejects_invalid_budgets() {
        assert!(PrivacyBudget::new(0.0, 0.0).is_err());
        assert!(PrivacyBudget::new(-1.0, 0.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1.5).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn five_equal_shares() {
        let parts = split_budget(&b(1.0, 1e-5), &[1.0; 5]).unwrap();
        assert_eq!(parts.len(), 5);
        for p in &parts {
            assert!((p.epsilon() - 0.2).abs() < 1e-15);
            assert!((p.delta() - 2e-6).abs() < 1e-20);
        }
    }

    #[test]
    fn single_share_is_identity() {
        let total = b(0.7, 1e-6);
        assert_eq!(split_budget(&total, &[3.0]).unwrap(), vec![total]);
    }

    #[test]
    fn proportional_shares() {
        let parts = split_budget(&b(1.0, 0.0), &[2.0, 3.0]).unwrap();
        assert!((parts[0].epsilon() - 0.4).abs() < 1e-15);
        assert!((parts[1].epsilon() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn empty_or_nonpositive_shares_rejected() {
        assert!(matches!(split_budget(&b(1.0, 0.0), &[]), Err(Error::Contract(_))));
        assert!(split_budget(&b(1.0, 0.0), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn sequential_shares_compose_to_total() {
        let total = b(1.0, 1e-5);
        let mut ledger = BudgetLedger::new(total);
        for (i, p) in split_budget(&total, &[1.0; 5]).unwrap().into_iter().enumerate() {
            ledger.sequential(format!("share-{i}"), p);
        }
        let spent = ledger.audit().unwrap();
        assert!((spent.epsilon() - 1.0).abs() < 1e-12);
        assert!((spent.delta() - 1e-5).abs() < 1e-17);
    }

    #[test]
    fn parallel_entries_count_once() {
        let mut ledger = BudgetLedger::new(b(1.0, 0.0));
        for c in 0..10 {
            ledger.record(
                format!("class-{c}"),
                b(1.0, 0.0),
                Composition::Parallel {
                    partition: "classes".into(),
                },
            );
        }
        let spent = ledger.audit().unwrap();
        assert_eq!((spent.epsilon(), spent.delta()), (1.0, 0.0));
    }

    #[test]
    fn empty_ledger_is_zero() {
        assert_eq!(
            BudgetLedger::new(b(1.0, 0.0)).audit().unwrap(),
            PrivacyBudget::zero()
        );
    }

    #[test]
    fn overspending_lists_offenders() {
        let mut ledger = BudgetLedger::new(b(1.0, 1e-5));
        ledger.sequential("a", b(0.6, 0.0));
        ledger.sequential("b", b(0.6, 0.0));
        ledger.sequential("c", b(0.1, 0.0));
        match ledger.audit() {
            Err(Error::Audit { offending, epsilon, .. }) => {
                assert_eq!(offending, vec!["b".to_string(), "c".to_string()]);
                assert!((epsilon - 1.3).abs() < 1e-12);
            }
            other => panic!("expected audit failure, got {other:?}"),
        }
    }

    #[test]
    fn non_private_total_accepts_non_private_spend() {
        let mut ledger = BudgetLedger::new(PrivacyBudget::non_private());
        ledger.sequential("x", PrivacyBudget::non_private());
        assert!(ledger.audit().unwrap().is_non_private());
    }

    proptest! {
        #[test]
        fn audit_is_permutation_invariant(
            items in prop::collection::vec((1e-3f64..1.0, 0.0f64..1e-4, 0u8..3), 1..12),
            seed in any::<u64>(),
        ) {
            let entries: Vec<LedgerEntry> = items.iter().enumerate().map(|(i, (e, d, kind))| LedgerEntry {
                name: format!("e{i}"),
                budget: b(*e, *d),
                composition: match kind {
                    0 => Composition::Sequential,
                    k => Composition::Parallel { partition: format!("p{k}") },
                },
            }).collect();
            let mut shuffled = entries.clone();
            // Deterministic Fisher-Yates driven by the proptest seed.
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let total = PrivacyBudget::non_private();
            let a = ledger_audit(&BudgetLedger { total, entries }).unwrap();
            let c = ledger_audit(&BudgetLedger { total, entries: shuffled }).unwrap();
            prop_assert_eq!(a.epsilon().to_bits(), c.epsilon().to_bits());
            prop_assert_eq!(a.delta().to_bits(), c.delta().to_bits());
        }

        #[test]
        fn split_recomposes(eps in 1e-3f64..10.0, delta in 0.0f64..0.1,
                            shares in prop::collection::vec(0.01f64..10.0, 1..8)) {
            let total = b(eps, delta);
            let mut ledger = BudgetLedger::new(total);
            for p in split_budget(&total, &shares).unwrap() {
                ledger.sequential("s", p);
            }
            let spent = ledger.audit().unwrap();
            prop_assert!((spent.epsilon() - eps).abs() <= 1e-12 * eps.max(1.0));
            prop_assert!((spent.delta() - delta).abs() <= 1e-12);
        }
    }
}
