//! Per-class cluster budget controller.
//!
//! Each class carries an upper bound on the number of sub-classes X-Means may
//! produce for it, plus a direction flag. While a class's validation
//! false-negative rate exceeds the threshold its budget climbs to the cap,
//! then descends back to one, and so on. Classes at or below the threshold
//! are left alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub confusion_threshold: f64,
    pub max_clusters: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            confusion_threshold: 0.3,
            max_clusters: 5,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.confusion_threshold > 0.0 && self.confusion_threshold < 1.0) {
            return Err(Error::param(
                "confusion_threshold",
                format!("must lie in (0, 1), got {}", self.confusion_threshold),
            ));
        }
        if self.max_clusters == 0 {
            return Err(Error::param("max_clusters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterBudget {
    pub num_allowed: Vec<usize>,
    /// `true` once the budget has reached the cap and is descending.
    pub flags: Vec<bool>,
}

impl ClusterBudget {
    /// Every class starts with one allowed cluster and a cleared flag.
    pub fn initial(num_classes: usize) -> Self {
        Self {
            num_allowed: vec![1; num_classes],
            flags: vec![false; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_allowed.len()
    }
}

/// One controller step. `per_class_fn[c]` is class `c`'s false-negative rate.
pub fn update_budgets(
    budgets: &ClusterBudget,
    per_class_fn: &[f64],
    cfg: &ControllerConfig,
) -> Result<ClusterBudget> {
    if per_class_fn.len() != budgets.num_classes() {
        return Err(Error::Dimension {
            expected: budgets.num_classes(),
            got: per_class_fn.len(),
        });
    }
    let mut next = budgets.clone();
    for (c, &fnr) in per_class_fn.iter().enumerate() {
        if fnr <= cfg.confusion_threshold {
            continue;
        }
        let n = &mut next.num_allowed[c];
        let flag = &mut next.flags[c];
        if !*flag {
            *n = (*n + 1).min(cfg.max_clusters);
            if *n == cfg.max_clusters {
                *flag = true;
            }
        } else {
            *n = n.saturating_sub(1).max(1);
            if *n == 1 {
                *flag = false;
            }
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTrace {
    pub sequence: Vec<usize>,
    /// Number of times the budget changed direction (flat steps ignored).
    pub reversals: usize,
    pub final_value: usize,
}

/// Per-class summary of a budget history.
pub fn budget_trace(history: &[ClusterBudget]) -> Result<Vec<ClassTrace>> {
    let first = history
        .first()
        .ok_or_else(|| Error::EmptyInput("budget history".into()))?;
    let classes = first.num_classes();
    let mut out = Vec::with_capacity(classes);
    for c in 0..classes {
        let sequence: Vec<usize> = history.iter().map(|b| b.num_allowed[c]).collect();
        let mut reversals = 0;
        let mut last_dir = 0i8;
        for w in sequence.windows(2) {
            let dir = (w[1] as i64 - w[0] as i64).signum() as i8;
            if dir == 0 {
                continue;
            }
            if last_dir != 0 && dir != last_dir {
                reversals += 1;
            }
            last_dir = dir;
        }
        let final_value = *sequence.last().expect("non-empty");
        out.push(ClassTrace {
            sequence,
            reversals,
            final_value,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(n: usize, flag: bool) -> ClusterBudget {
        ClusterBudget {
            num_allowed: vec![n],
            flags: vec![flag],
        }
    }

    #[test]
    fn transitions() {
        let cfg = ControllerConfig::default();
        assert_eq!(update_budgets(&one(1, false), &[0.5], &cfg).unwrap(), one(2, false));
        assert_eq!(update_budgets(&one(4, false), &[0.5], &cfg).unwrap(), one(5, true));
        assert_eq!(update_budgets(&one(2, true), &[0.5], &cfg).unwrap(), one(1, false));
        for (n, f) in [(1, false), (3, true), (5, true)] {
            assert_eq!(update_budgets(&one(n, f), &[0.1], &cfg).unwrap(), one(n, f));
        }
        // equality does not trigger
        assert_eq!(update_budgets(&one(2, false), &[0.3], &cfg).unwrap(), one(2, false));
    }

    #[test]
    fn length_mismatch() {
        let cfg = ControllerConfig::default();
        assert!(matches!(
            update_budgets(&ClusterBudget::initial(3), &[0.5], &cfg),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn oscillation_period() {
        let cfg = ControllerConfig::default();
        let mut b = ClusterBudget::initial(1);
        let mut seq = vec![1];
        for _ in 0..16 {
            b = update_budgets(&b, &[0.9], &cfg).unwrap();
            seq.push(b.num_allowed[0]);
        }
        assert_eq!(seq, vec![1, 2, 3, 4, 5, 4, 3, 2, 1, 2, 3, 4, 5, 4, 3, 2, 1]);
    }

    #[test]
    fn cap_of_one_stays_at_one() {
        let cfg = ControllerConfig {
            confusion_threshold: 0.3,
            max_clusters: 1,
        };
        let mut b = ClusterBudget::initial(1);
        for _ in 0..4 {
            b = update_budgets(&b, &[0.9], &cfg).unwrap();
            assert_eq!(b.num_allowed, vec![1]);
        }
    }

    #[test]
    fn traces() {
        let h = |v: &[usize]| -> Vec<ClusterBudget> { v.iter().map(|&n| one(n, false)).collect() };
        let t = budget_trace(&h(&[2, 2, 2])).unwrap();
        assert_eq!(t[0].reversals, 0);
        let t = budget_trace(&h(&[1, 2, 3, 2])).unwrap();
        assert_eq!((t[0].reversals, t[0].final_value), (1, 2));
        let t = budget_trace(&h(&[4])).unwrap();
        assert_eq!((t[0].reversals, t[0].final_value), (0, 4));
        let t = budget_trace(&h(&[1, 2, 2, 3, 3, 2, 2, 3])).unwrap();
        assert_eq!(t[0].reversals, 2);
        assert!(budget_trace(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig::default().validate().is_ok());
        for bad in [0.0, 1.0, -0.2] {
            let c = ControllerConfig {
                confusion_threshold: bad,
                max_clusters: 5,
            };
            assert!(c.validate().is_err());
        }
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn state(max: usize) -> impl Strategy<Value = (ClusterBudget, Vec<f64>)> {
        (1usize..8).prop_flat_map(move |c| {
            (
                prop::collection::vec((1usize..=max, any::<bool>()), c),
                prop::collection::vec(0.0f64..=1.0, c),
            )
                .prop_map(|(s, f)| {
                    (
                        ClusterBudget {
                            num_allowed: s.iter().map(|x| x.0).collect(),
                            flags: s.iter().map(|x| x.1).collect(),
                        },
                        f,
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn stays_in_range_and_commutes_with_permutation((b, f) in state(5), rot in 0usize..8) {
            let cfg = ControllerConfig::default();
            let next = update_budgets(&b, &f, &cfg).unwrap();
            prop_assert!(next.num_allowed.iter().all(|&n| (1..=5).contains(&n)));
            for c in 0..b.num_classes() {
                if f[c] <= cfg.confusion_threshold {
                    prop_assert_eq!(next.num_allowed[c], b.num_allowed[c]);
                    prop_assert_eq!(next.flags[c], b.flags[c]);
                }
            }
            let n = b.num_classes();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let pb = ClusterBudget {
                num_allowed: perm.iter().map(|&i| b.num_allowed[i]).collect(),
                flags: perm.iter().map(|&i| b.flags[i]).collect(),
            };
            let pf: Vec<f64> = perm.iter().map(|&i| f[i]).collect();
            let pnext = update_budgets(&pb, &pf, &cfg).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(pnext.num_allowed[j], next.num_allowed[i]);
                prop_assert_eq!(pnext.flags[j], next.flags[i]);
            }
        }
    }
}
