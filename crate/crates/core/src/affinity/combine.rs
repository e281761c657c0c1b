use std::collections::BTreeMap;
use std::str::FromStr;

use super::{AffinityMatrix, Method};
use crate::error::{Error, Result};

const VOTERS: [Method; 3] = [Method::Confusion, Method::Prototype, Method::Text];

/// Tie-break used when the three estimators all disagree.
#[derive(Debug, Clone, PartialEq)]
pub enum FallbackRanking {
    /// Training-free FID per method; the lowest wins. Equal scores fall back
    /// to the order confusion, prototype, text.
    Scores(BTreeMap<Method, f64>),
    /// Explicit preference order, best first.
    Priority(Vec<Method>),
}

impl FallbackRanking {
    pub fn best(&self) -> Result<Method> {
        match self {
            FallbackRanking::Scores(scores) => {
                for (m, s) in scores {
                    if !VOTERS.contains(m) {
                        return Err(Error::InvalidArgument(format!(
                            "fallback score for non-voting method `{m}`"
                        )));
                    }
                    if !s.is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "fallback score for `{m}` is not finite"
                        )));
                    }
                }
                let mut best: Option<(Method, f64)> = None;
                for m in VOTERS {
                    let s = *scores.get(&m).ok_or_else(|| {
                        Error::InvalidArgument(format!("fallback ranking lacks `{m}`"))
                    })?;
                    if best.is_none_or(|(_, b)| s < b) {
                        best = Some((m, s));
                    }
                }
                Ok(best.expect("three voters").0)
            }
            FallbackRanking::Priority(order) => {
                for m in VOTERS {
                    if !order.contains(&m) {
                        return Err(Error::InvalidArgument(format!(
                            "fallback priority lacks `{m}`"
                        )));
                    }
                }
                match order.iter().find(|m| !VOTERS.contains(m)) {
                    Some(m) => Err(Error::InvalidArgument(format!(
                        "fallback priority names non-voting method `{m}`"
                    ))),
                    None => Ok(order[0]),
                }
            }
        }
    }
}

impl FromStr for FallbackRanking {
    type Err = Error;

    /// `confusion=48.7,prototype=49.5,text=51.6` gives scores;
    /// `confusion,prototype,text` gives a priority order.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
        if parts.iter().all(|p| p.contains('=')) {
            let mut scores = BTreeMap::new();
            for p in parts {
                let (m, v) = p.split_once('=').expect("checked");
                let v: f64 = v.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad fallback score `{p}`"))
                })?;
                if scores.insert(m.parse()?, v).is_some() {
                    return Err(Error::InvalidArgument(format!("`{m}` given twice")));
                }
            }
            Ok(FallbackRanking::Scores(scores))
        } else if parts.iter().any(|p| p.contains('=')) {
            Err(Error::InvalidArgument(format!(
                "fallback `{s}` mixes scores and a priority list"
            )))
        } else {
            let order = parts
                .into_iter()
                .map(str::parse)
                .collect::<Result<Vec<Method>>>()?;
            Ok(FallbackRanking::Priority(order))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteRule {
    Unanimous,
    TwoOfThree,
    Fallback(Method),
}

/// Outcome for one target class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vote {
    /// Per-estimator argmax, in the order confusion, prototype, text.
    pub argmaxes: [usize; 3],
    pub chosen: usize,
    pub rule: VoteRule,
}

#[derive(Debug, Clone)]
pub struct Combination {
    pub matrix: AffinityMatrix,
    pub votes: Vec<Vote>,
}

/// Majority vote over the three estimators' per-row argmaxes: a source class
/// picked by at least two estimators wins; otherwise the pick of the method
/// ranked best by `fallback`. The result is a hard matrix.
pub fn combine_majority(
    confusion: &AffinityMatrix,
    prototype: &AffinityMatrix,
    text: &AffinityMatrix,
    fallback: &FallbackRanking,
) -> Result<Combination> {
    let target = confusion.target_classes();
    let source = confusion.source_classes();
    prototype.check_classes(target, source)?;
    text.check_classes(target, source)?;
    let best = fallback.best()?;

    let votes: Vec<Vote> = (0..confusion.n_target())
        .map(|k| {
            let a = [
                confusion.row_argmax(k),
                prototype.row_argmax(k),
                text.row_argmax(k),
            ];
            let (chosen, rule) = if a[0] == a[1] && a[1] == a[2] {
                (a[0], VoteRule::Unanimous)
            } else if a[0] == a[1] || a[0] == a[2] {
                (a[0], VoteRule::TwoOfThree)
            } else if a[1] == a[2] {
                (a[1], VoteRule::TwoOfThree)
            } else {
                let i = VOTERS.iter().position(|m| *m == best).expect("voter");
                (a[i], VoteRule::Fallback(best))
            };
            Vote {
                argmaxes: a,
                chosen,
                rule,
            }
        })
        .collect();

    let assignment: Vec<usize> = votes.iter().map(|v| v.chosen).collect();
    let matrix = AffinityMatrix::from_assignment(
        target.clone(),
        source.clone(),
        &assignment,
        Method::Combined,
    )?;
    Ok(Combination { matrix, votes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassSet;
    use std::sync::Arc;

    fn hard(assign: &[usize], cs: usize) -> AffinityMatrix {
        let t: Vec<String> = (0..assign.len()).map(|i| format!("t{i}")).collect();
        let s: Vec<String> = (0..cs).map(|i| format!("s{i}")).collect();
        AffinityMatrix::from_assignment(
            Arc::new(ClassSet::from_names("t", &t).unwrap()),
            Arc::new(ClassSet::from_names("s", &s).unwrap()),
            assign,
            Method::Manual,
        )
        .unwrap()
    }

    #[test]
    fn parse_scores_and_priority() {
        let f: FallbackRanking = "confusion=48.7,prototype=49.5,text=51.6".parse().unwrap();
        assert_eq!(f.best().unwrap(), Method::Confusion);
        let f: FallbackRanking = "text, confusion, prototype".parse().unwrap();
        assert_eq!(f.best().unwrap(), Method::Text);
        assert!("confusion=1,prototype".parse::<FallbackRanking>().is_err());
        assert!("confusion=x".parse::<FallbackRanking>().is_err());
    }

    #[test]
    fn incomplete_fallback_rejected() {
        let f: FallbackRanking = "confusion=1,text=2".parse().unwrap();
        assert!(f.best().is_err());
        let f: FallbackRanking = "confusion,text".parse().unwrap();
        assert!(f.best().is_err());
        let f: FallbackRanking = "confusion=1,text=2,prototype=nan".parse().unwrap();
        assert!(f.best().is_err());
    }

    #[test]
    fn voting_rules() {
        let f = FallbackRanking::Priority(vec![Method::Prototype, Method::Confusion, Method::Text]);
        let c = combine_majority(
            &hard(&[4, 2, 1], 8),
            &hard(&[4, 2, 3], 8),
            &hard(&[4, 7, 5], 8),
            &f,
        )
        .unwrap();
        assert_eq!(c.matrix.argmaxes(), vec![4, 2, 3]);
        assert_eq!(c.votes[0].rule, VoteRule::Unanimous);
        assert_eq!(c.votes[1].rule, VoteRule::TwoOfThree);
        assert_eq!(c.votes[2].rule, VoteRule::Fallback(Method::Prototype));
        c.matrix.validate().unwrap();
    }

    #[test]
    fn class_set_mismatch_rejected() {
        let f = FallbackRanking::Priority(vec![Method::Confusion, Method::Prototype, Method::Text]);
        assert!(combine_majority(&hard(&[0], 2), &hard(&[0], 3), &hard(&[0], 2), &f).is_err());
    }
}
