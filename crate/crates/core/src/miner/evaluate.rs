//! Significance testing of candidate itemsets and per-constraint
//! contribution scores.

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fpgrowth::FrequentItemset;
use super::{Constraint, Direction, Pattern};
use crate::dataset::DataMatrix;
use crate::discretizer::ItemUniverse;
use crate::stats::{self, Alternative, PooledRanks, StatsError};

/// Why a candidate was not tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    #[error("fewer than 2 inside counties with a target value")]
    TooFewInside,
    #[error("fewer than 2 outside counties with a target value")]
    TooFewOutside,
    #[error("target is constant")]
    Degenerate,
}

impl Rejection {
    pub fn code(self) -> &'static str {
        match self {
            Rejection::TooFewInside => "too_few_inside",
            Rejection::TooFewOutside => "too_few_outside",
            Rejection::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub p: f64,
    pub ln_p: f64,
    pub mean_inside: f64,
}

/// The target restricted to counties that have one, ranked once.
///
/// Index `k` here refers to the `k`-th county with a non-missing target, in
/// matrix row order.
#[derive(Debug, Clone)]
pub struct TargetTester {
    rows: Vec<usize>,
    values: Vec<f64>,
    ranks: PooledRanks,
    binary: bool,
    global_mean: f64,
}

impl TargetTester {
    pub fn new(matrix: &DataMatrix) -> Self {
        let rows: Vec<usize> = (0..matrix.n_counties())
            .filter(|&r| matrix.target(r).is_some())
            .collect();
        let values: Vec<f64> = rows.iter().map(|&r| matrix.target(r).unwrap()).collect();
        TargetTester {
            ranks: PooledRanks::new(&values),
            binary: matrix.target_is_binary(),
            global_mean: matrix.global_target_mean(),
            rows,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    pub fn mean_of(&self, inside: &[usize]) -> f64 {
        inside.iter().map(|&k| self.values[k]).sum::<f64>() / inside.len() as f64
    }

    /// Tests `inside` (tester indices) against every other county with a
    /// target: one-sided Mann-Whitney for a numeric target, chi-square on the
    /// 2x2 inside/outside × 0/1 table for a binary one.
    pub fn test(&self, inside: &[usize], direction: Direction) -> Result<TestOutcome, Rejection> {
        let n = inside.len();
        let m = self.values.len() - n;
        if n < 2 {
            return Err(Rejection::TooFewInside);
        }
        if m < 2 {
            return Err(Rejection::TooFewOutside);
        }
        let mean_inside = self.mean_of(inside);
        if self.binary {
            let ones_in = inside.iter().filter(|&&k| self.values[k] == 1.0).count() as u64;
            let ones_all = self.values.iter().filter(|&&v| v == 1.0).count() as u64;
            let table = vec![
                vec![ones_in, n as u64 - ones_in],
                vec![ones_all - ones_in, (m as u64) - (ones_all - ones_in)],
            ];
            return match stats::chi_square_independence(&table) {
                Ok(r) => Ok(TestOutcome {
                    p: r.p,
                    ln_p: r.ln_p,
                    mean_inside,
                }),
                Err(StatsError::DegenerateTable) => Err(Rejection::Degenerate),
                Err(_) => Err(Rejection::Degenerate),
            };
        }
        let alt = match direction {
            Direction::High => Alternative::Greater,
            Direction::Low => Alternative::Less,
        };
        let r = self.ranks.test(inside, alt).map_err(|_| Rejection::TooFewInside)?;
        if r.degenerate {
            return Err(Rejection::Degenerate);
        }
        Ok(TestOutcome {
            p: r.p_one_sided,
            ln_p: r.ln_p,
            mean_inside,
        })
    }
}

/// A tested itemset, before multiple-testing adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub item_ids: Vec<usize>,
    /// Tester indices of the members.
    pub members: Vec<usize>,
    pub mean_target: f64,
    pub p_value: f64,
    pub ln_p: f64,
    pub direction: Direction,
}

/// Items, their member bitsets and the target tester for one mining run.
#[derive(Debug)]
pub struct MiningContext<'a> {
    pub matrix: &'a DataMatrix,
    pub universe: ItemUniverse,
    pub tester: TargetTester,
    item_members: Vec<FixedBitSet>,
}

impl<'a> MiningContext<'a> {
    pub fn new(matrix: &'a DataMatrix, universe: ItemUniverse) -> Self {
        let tester = TargetTester::new(matrix);
        let mut item_members = vec![FixedBitSet::with_capacity(tester.len()); universe.items.len()];
        for (k, &row) in tester.rows().iter().enumerate() {
            for &item in &universe.transactions[row] {
                item_members[item].insert(k);
            }
        }
        MiningContext {
            matrix,
            universe,
            tester,
            item_members,
        }
    }

    /// Transactions of counties that have a target, so itemset support
    /// equals the member count.
    pub fn target_transactions(&self) -> Vec<Vec<usize>> {
        self.tester
            .rows()
            .iter()
            .map(|&r| self.universe.transactions[r].clone())
            .collect()
    }

    pub fn members_of(&self, item_ids: &[usize]) -> Vec<usize> {
        let Some((&first, rest)) = item_ids.split_first() else {
            return (0..self.tester.len()).collect();
        };
        let mut acc = self.item_members[first].clone();
        for &it in rest {
            acc.intersect_with(&self.item_members[it]);
        }
        acc.ones().collect()
    }

    /// Splits counties by the itemset and runs the significance test.
    pub fn evaluate(&self, itemset: &FrequentItemset, direction: Direction) -> Result<Candidate, Rejection> {
        let members = self.members_of(&itemset.item_ids);
        let outcome = self.tester.test(&members, direction)?;
        Ok(Candidate {
            item_ids: itemset.item_ids.clone(),
            members,
            mean_target: outcome.mean_inside,
            p_value: outcome.p,
            ln_p: outcome.ln_p,
            direction,
        })
    }

    /// Leave-one-out contribution weights for an itemset whose full-pattern
    /// log p-value is `ln_p_full`.
    pub fn contributions(&self, item_ids: &[usize], ln_p_full: f64, direction: Direction) -> Vec<f64> {
        let loo = (0..item_ids.len()).map(|skip| {
            if item_ids.len() == 1 {
                return None;
            }
            let rest: Vec<usize> = item_ids
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &it)| it)
                .collect();
            let members = self.members_of(&rest);
            Some(self.tester.test(&members, direction).map(|o| o.ln_p))
        });
        normalize_deterioration(loo.collect(), ln_p_full)
    }

    pub fn constraint(&self, item: usize) -> Constraint {
        let iv = &self.universe.items[item];
        Constraint {
            feature: self.matrix.features()[iv.feature_id].name.clone(),
            lo: iv.lo,
            hi: iv.hi,
        }
    }
}

/// Turns leave-one-out log p-values into weights summing to one.
///
/// `None` marks "nothing left to test" (single-constraint pattern). A failed
/// test counts as p = 1, the weakest possible remainder.
fn normalize_deterioration(loo: Vec<Option<Result<f64, Rejection>>>, ln_p_full: f64) -> Vec<f64> {
    if loo.len() == 1 {
        return vec![1.0];
    }
    let raw: Vec<f64> = loo
        .into_iter()
        .map(|r| {
            let ln_rest = match r {
                Some(Ok(l)) => l,
                _ => 0.0,
            };
            (ln_rest - ln_p_full).max(0.0)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return vec![1.0 / raw.len() as f64; raw.len()];
    }
    raw.iter().map(|r| r / total).collect()
}

/// Contribution weights of a stored pattern, recomputed from the raw matrix.
///
/// For each constraint, the pattern is re-tested with that constraint
/// removed; the weight is the loss in `-ln p`, clamped at zero and
/// normalized. Constraints whose feature is unknown to `matrix` contribute
/// nothing.
pub fn contribution_scores(pattern: &Pattern, matrix: &DataMatrix) -> Vec<f64> {
    let tester = TargetTester::new(matrix);
    let features: Vec<Option<usize>> = pattern
        .constraints
        .iter()
        .map(|c| matrix.feature_by_name(&c.feature).map(|f| f.feature_id))
        .collect();
    let members_without = |skip: Option<usize>| -> Vec<usize> {
        tester
            .rows()
            .iter()
            .enumerate()
            .filter(|&(_, &row)| {
                pattern
                    .constraints
                    .iter()
                    .zip(&features)
                    .enumerate()
                    .all(|(i, (c, f))| {
                        Some(i) == skip
                            || f.and_then(|f| matrix.value(row, f))
                                .is_some_and(|v| c.lo <= v && v <= c.hi)
                    })
            })
            .map(|(k, _)| k)
            .collect()
    };
    let full = tester.test(&members_without(None), pattern.direction);
    let ln_full = match full {
        Ok(o) => o.ln_p,
        Err(_) => return vec![1.0 / pattern.constraints.len().max(1) as f64; pattern.constraints.len()],
    };
    let loo = (0..pattern.constraints.len())
        .map(|i| {
            (pattern.constraints.len() > 1).then(|| {
                tester
                    .test(&members_without(Some(i)), pattern.direction)
                    .map(|o| o.ln_p)
            })
        })
        .collect();
    normalize_deterioration(loo, ln_full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CountyKey;

    fn matrix(cols: &[Vec<f64>], target: &[f64]) -> DataMatrix {
        let n = target.len();
        let counties = (0..n)
            .map(|i| CountyKey {
                fips: format!("{:05}", i + 1),
                name: String::new(),
                state: "XX".into(),
            })
            .collect();
        let values = (0..n).flat_map(|i| cols.iter().map(move |c| Some(c[i]))).collect();
        let names = (0..cols.len()).map(|j| format!("f{j}")).collect();
        DataMatrix::new(counties, names, values, target.iter().map(|&t| Some(t)).collect(), "t").unwrap()
    }

    fn pattern(constraints: Vec<Constraint>) -> Pattern {
        Pattern {
            id: String::new(),
            constraints,
            members: Vec::new(),
            mean_target: 0.0,
            p_value: 0.0,
            p_adjusted: 0.0,
            direction: Direction::High,
            contributions: Vec::new(),
        }
    }

    #[test]
    fn inside_high_against_uniform_background() {
        // Three counties with targets 9, 10, 11 against 1..=100.
        let mut target: Vec<f64> = (1..=100).map(f64::from).collect();
        target.extend([9.0, 10.0, 11.0]);
        let flag: Vec<f64> = (0..103).map(|i| if i >= 100 { 1.0 } else { 0.0 }).collect();
        let m = matrix(&[flag], &target);
        let tester = TargetTester::new(&m);
        let out = tester.test(&[100, 101, 102], Direction::High).unwrap();
        assert_eq!(out.mean_inside, 10.0);
        // The global mean is ~49.3, so this is not a high-risk group, and the
        // rank test agrees: p is close to 1.
        assert!(out.mean_inside < m.global_target_mean());
        let direct = stats::mann_whitney(&[9.0, 10.0, 11.0], &(1..=100).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert!((out.p - direct.p_one_sided).abs() < 1e-12);
        assert!(out.p > 0.9);
    }

    #[test]
    fn no_effect_gives_middling_p() {
        let target: Vec<f64> = (0..200).map(|i| ((i * 7919) % 200) as f64).collect();
        let flag: Vec<f64> = (0..200).map(|i| (i % 2) as f64).collect();
        let m = matrix(&[flag], &target);
        let inside: Vec<usize> = (0..200).filter(|i| i % 2 == 1).collect();
        let out = TargetTester::new(&m).test(&inside, Direction::High).unwrap();
        assert!(out.p > 0.2 && out.p < 0.8, "{}", out.p);
    }

    #[test]
    fn constant_target_is_degenerate() {
        let m = matrix(&[(0..30).map(f64::from).collect()], &[4.0; 30]);
        let out = TargetTester::new(&m).test(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9], Direction::High);
        assert_eq!(out, Err(Rejection::Degenerate));
    }

    #[test]
    fn too_few_counties_rejected() {
        let m = matrix(
            &[(0..30).map(f64::from).collect()],
            &(0..30).map(f64::from).collect::<Vec<_>>(),
        );
        let t = TargetTester::new(&m);
        assert_eq!(t.test(&[3], Direction::High), Err(Rejection::TooFewInside));
        let all_but_one: Vec<usize> = (1..30).collect();
        assert_eq!(t.test(&all_but_one, Direction::High), Err(Rejection::TooFewOutside));
        assert_eq!(Rejection::TooFewOutside.code(), "too_few_outside");
    }

    #[test]
    fn binary_target_uses_chi_square() {
        let target: Vec<f64> = (0..60)
            .map(|i| if i < 20 || (30..40).contains(&i) { 1.0 } else { 0.0 })
            .collect();
        let m = matrix(&[(0..60).map(f64::from).collect()], &target);
        let t = TargetTester::new(&m);
        assert!(t.is_binary());
        let inside: Vec<usize> = (0..30).collect();
        let out = t.test(&inside, Direction::High).unwrap();
        // [[20,10],[10,20]]
        assert!((out.p - 0.0098).abs() < 5e-4);
    }

    #[test]
    fn single_constraint_weight_is_one() {
        let m = matrix(
            &[(0..50).map(f64::from).collect()],
            &(0..50).map(f64::from).collect::<Vec<_>>(),
        );
        let p = pattern(vec![Constraint {
            feature: "f0".into(),
            lo: 30.0,
            hi: 49.0,
        }]);
        assert_eq!(contribution_scores(&p, &m), vec![1.0]);
    }

    #[test]
    fn separating_constraint_outweighs_passenger() {
        // f1 (B) alone separates the target; f0 (A) is unrelated noise.
        let n = 400;
        let a: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| (i % 4) as f64).collect();
        let target: Vec<f64> = (0..n)
            .map(|i| {
                if i % 4 == 3 {
                    50.0 + (i % 7) as f64
                } else {
                    (i % 11) as f64
                }
            })
            .collect();
        let m = matrix(&[a, b], &target);
        let p = pattern(vec![
            Constraint {
                feature: "f0".into(),
                lo: 0.0,
                hi: 70.0,
            },
            Constraint {
                feature: "f1".into(),
                lo: 3.0,
                hi: 3.0,
            },
        ]);
        let w = contribution_scores(&p, &m);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[1] > w[0], "{w:?}");
    }

    #[test]
    fn interchangeable_constraints_split_evenly() {
        let n = 300;
        let a: Vec<f64> = (0..n).map(|i| (i % 5) as f64).collect();
        let target: Vec<f64> = (0..n)
            .map(|i| {
                if i % 5 == 4 {
                    20.0 + (i % 3) as f64
                } else {
                    (i % 9) as f64
                }
            })
            .collect();
        let m = matrix(&[a.clone(), a], &target);
        let c = |f: &str| Constraint {
            feature: f.into(),
            lo: 4.0,
            hi: 4.0,
        };
        let w = contribution_scores(&pattern(vec![c("f0"), c("f1")]), &m);
        assert!((w[0] - 0.5).abs() < 1e-9 && (w[1] - 0.5).abs() < 1e-9, "{w:?}");
    }
}
