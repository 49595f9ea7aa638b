use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::paired_t_test;
use crate::error::{Error, Result};

pub const ABLATION_HEADER: &str = "emotion_pair,n,mae_reg,mae_unreg,t,p,significant";
pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

/// Per-utterance scores of one condition: emotion pair -> utterance id -> MAE.
pub type ConditionScores = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub emotion_pair: String,
    pub n: usize,
    pub mae_reg: f64,
    pub mae_unreg: f64,
    /// Paired t on `reg - unreg`: negative when regularization lowers the error.
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
}

/// Compares the two conditions per emotion pair with a paired t-test over
/// utterances. Both conditions must score exactly the same utterances.
pub fn ablation_report(reg: &ConditionScores, unreg: &ConditionScores) -> Result<AblationResult> {
    let mut unmatched = Vec::new();
    for (this, other) in [(reg, unreg), (unreg, reg)] {
        for (pair, scores) in this {
            for id in scores.keys() {
                if !other.get(pair).is_some_and(|o| o.contains_key(id)) {
                    unmatched.push(format!("{pair}/{id}"));
                }
            }
        }
    }
    if !unmatched.is_empty() {
        unmatched.sort();
        unmatched.dedup();
        return Err(Error::Pairing(unmatched));
    }

    let mut rows = Vec::with_capacity(reg.len());
    for (pair, reg_scores) in reg {
        let a: Vec<f64> = reg_scores.values().copied().collect();
        let b: Vec<f64> = reg_scores.keys().map(|id| unreg[pair][id]).collect();
        let test = paired_t_test(&a, &b).map_err(|e| match e {
            Error::Degenerate(m) => Error::Degenerate(format!("{pair}: {m}")),
            Error::Precondition(m) => Error::Precondition(format!("{pair}: {m}")),
            other => other,
        })?;
        let n = a.len();
        rows.push(AblationRow {
            emotion_pair: pair.clone(),
            n,
            mae_reg: a.iter().sum::<f64>() / n as f64,
            mae_unreg: b.iter().sum::<f64>() / n as f64,
            t: test.t,
            p: test.p,
            significant: test.p < SIGNIFICANCE_LEVEL,
        });
    }
    Ok(AblationResult { rows })
}

impl AblationResult {
    /// Values print in shortest round-trip form, so [`Self::from_csv`]
    /// recovers them exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(ABLATION_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.emotion_pair, r.n, r.mae_reg, r.mae_unreg, r.t, r.p, r.significant
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(ABLATION_HEADER) {
            return Err(Error::Format("ablation csv header mismatch".into()));
        }
        let bad = |line: &str| Error::Format(format!("bad ablation row {line:?}"));
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 7 {
                    return Err(bad(line));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
                Ok(AblationRow {
                    emotion_pair: f[0].to_string(),
                    n: f[1].parse().map_err(|_| bad(line))?,
                    mae_reg: num(f[2])?,
                    mae_unreg: num(f[3])?,
                    t: num(f[4])?,
                    p: num(f[5])?,
                    significant: f[6].parse().map_err(|_| bad(line))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }
}
