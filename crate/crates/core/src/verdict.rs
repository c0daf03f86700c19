//! Conjunctive gate verdicts with a per-condition breakdown.
//!
//! Every gate in the crate (stress regime, residual gate, release predicate,
//! schedulability, combined envelope) is a conjunction of named inequalities.
//! [`Verdict`] records each condition in evaluation order so callers can
//! report the first failing one.

use std::fmt;

use serde::Serialize;

/// A named condition that can appear in a [`Verdict`].
pub trait Condition: Copy + fmt::Debug + PartialEq {
    /// Short machine-stable reason string, e.g. `"surge"`.
    fn reason(&self) -> &'static str;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check<C> {
    pub condition: C,
    pub passed: bool,
    /// Signed distance to the threshold, positive when satisfied. `None` for
    /// boolean conditions.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict<C> {
    pub checks: Vec<Check<C>>,
}

impl<C: Condition> Verdict<C> {
    pub fn new() -> Self {
        Self { checks: Vec::new() }
    }

    /// Record `lhs <= rhs` (inclusive, as written in the gate definitions).
    pub fn at_most(&mut self, condition: C, lhs: f64, rhs: f64) -> &mut Self {
        let passed = lhs <= rhs;
        self.checks.push(Check {
            condition,
            passed,
            margin: Some(rhs - lhs),
        });
        self
    }

    /// Record `lhs >= rhs`.
    pub fn at_least(&mut self, condition: C, lhs: f64, rhs: f64) -> &mut Self {
        let passed = lhs >= rhs;
        self.checks.push(Check {
            condition,
            passed,
            margin: Some(lhs - rhs),
        });
        self
    }

    /// Record strict `value > 0`.
    pub fn positive(&mut self, condition: C, value: f64) -> &mut Self {
        self.checks.push(Check {
            condition,
            passed: value > 0.0,
            margin: Some(value),
        });
        self
    }

    pub fn flag(&mut self, condition: C, passed: bool) -> &mut Self {
        self.checks.push(Check {
            condition,
            passed,
            margin: None,
        });
        self
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<C> {
        self.checks.iter().find(|c| !c.passed).map(|c| c.condition)
    }

    pub fn failures(&self) -> impl Iterator<Item = C> + '_ {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.condition)
    }

    pub fn get(&self, condition: C) -> Option<&Check<C>> {
        self.checks.iter().find(|c| c.condition == condition)
    }

    /// `"pass"` or `"denied: <reason>"`.
    pub fn summary(&self) -> String {
        match self.first_failure() {
            None => "pass".to_string(),
            Some(c) => format!("denied: {}", c.reason()),
        }
    }
}

impl<C: Condition> Default for Verdict<C> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq)]
    enum Toy {
        A,
        B,
    }

    impl Condition for Toy {
        fn reason(&self) -> &'static str {
            match self {
                Toy::A => "a",
                Toy::B => "b",
            }
        }
    }

    #[test]
    fn boundary_equality_passes_inclusive_checks() {
        let mut v = Verdict::new();
        v.at_most(Toy::A, 1.0, 1.0).at_least(Toy::B, 2.0, 2.0);
        assert!(v.passed());
    }

    #[test]
    fn first_failure_follows_insertion_order() {
        let mut v = Verdict::new();
        v.at_most(Toy::A, 0.0, 1.0).positive(Toy::B, 0.0);
        assert_eq!(v.first_failure(), Some(Toy::B));
        assert_eq!(v.summary(), "denied: b");
        assert_eq!(v.get(Toy::A).unwrap().margin, Some(1.0));
    }
}
