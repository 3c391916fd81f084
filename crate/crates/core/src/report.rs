//! Aggregation of per-subject, per-organ evaluation records into mean ± sd
//! summaries, in machine-readable and text-table form.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean_sd, wilcoxon_signed_rank, WilcoxonResult};

/// One evaluated (subject, organ, method) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub subject: String,
    pub organ: String,
    pub method: String,
    pub dice: f64,
    /// `None` when either mask was empty.
    pub hd_mm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    fn of(values: &[f64]) -> Option<Self> {
        mean_sd(values).map(|(mean, sd)| Self {
            mean,
            sd,
            n: values.len(),
        })
    }
}

/// Summary of one organ (or the average row) for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganSummary {
    pub organ: String,
    pub dice: MeanSd,
    pub hd_mm: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Organs in order of first appearance.
    pub organs: Vec<OrganSummary>,
    /// Pooled over all of the method's records.
    pub average: OrganSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub method_a: String,
    pub method_b: String,
    pub test: WilcoxonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<PairedComparison>,
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for it in items {
        if !out.iter().any(|o| o == it) {
            out.push(it.into());
        }
    }
    out
}

fn summarize(organ: &str, recs: &[&EvalRecord]) -> OrganSummary {
    let dice: Vec<f64> = recs.iter().map(|r| r.dice).collect();
    let hd: Vec<f64> = recs.iter().filter_map(|r| r.hd_mm).collect();
    OrganSummary {
        organ: organ.into(),
        dice: MeanSd::of(&dice).expect("non-empty group"),
        hd_mm: MeanSd::of(&hd),
    }
}

/// Groups records by method and organ. Records with Dice outside [0, 1] or a
/// negative distance are rejected.
pub fn build_report(records: Vec<EvalRecord>) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no evaluation records"));
    }
    for r in &records {
        if !(0.0..=1.0).contains(&r.dice) || r.hd_mm.is_some_and(|h| !(h >= 0.0)) {
            return Err(Error::Validation(format!(
                "record {}/{}/{} out of range: dice {}, hd {:?}",
                r.subject, r.organ, r.method, r.dice, r.hd_mm
            )));
        }
    }
    let methods = first_seen(records.iter().map(|r| r.method.as_str()))
        .into_iter()
        .map(|method| {
            let mine: Vec<&EvalRecord> = records.iter().filter(|r| r.method == method).collect();
            let organs = first_seen(mine.iter().map(|r| r.organ.as_str()))
                .iter()
                .map(|organ| {
                    let group: Vec<&EvalRecord> = mine.iter().copied().filter(|r| &r.organ == organ).collect();
                    summarize(organ, &group)
                })
                .collect();
            let average = summarize("average", &mine);
            MethodSummary {
                method,
                organs,
                average,
            }
        })
        .collect();
    Ok(EvalReport {
        records,
        methods,
        comparisons: Vec::new(),
    })
}

impl EvalReport {
    /// Paired Wilcoxon test of Dice between two methods, pairing records by
    /// (subject, organ).
    pub fn compare(&mut self, method_a: &str, method_b: &str) -> Result<&PairedComparison> {
        let index = |m: &str| -> BTreeMap<(String, String), f64> {
            self.records
                .iter()
                .filter(|r| r.method == m)
                .map(|r| ((r.subject.clone(), r.organ.clone()), r.dice))
                .collect()
        };
        let a = index(method_a);
        let b = index(method_b);
        let (xs, ys): (Vec<f64>, Vec<f64>) = a.iter().filter_map(|(k, &x)| b.get(k).map(|&y| (x, y))).unzip();
        let test = wilcoxon_signed_rank(&xs, &ys)?;
        self.comparisons.push(PairedComparison {
            method_a: method_a.into(),
            method_b: method_b.into(),
            test,
        });
        Ok(self.comparisons.last().expect("just pushed"))
    }

    /// Aligned text table: one row per method, one column per organ plus the
    /// average, cells `mean±sd` of Dice.
    pub fn text_table(&self) -> String {
        let organs = first_seen(self.records.iter().map(|r| r.organ.as_str()));
        let mut header: Vec<String> = Vec::with_capacity(organs.len() + 2);
        header.push("method".into());
        header.extend(organs.iter().cloned());
        header.push("average".into());
        let mut rows: Vec<Vec<String>> = alloc::vec![header];
        for m in &self.methods {
            let mut row = Vec::with_capacity(organs.len() + 2);
            row.push(m.method.clone());
            for o in &organs {
                row.push(match m.organs.iter().find(|s| &s.organ == o) {
                    Some(s) => format!("{:.3}±{:.3}", s.dice.mean, s.dice.sd),
                    None => "-".into(),
                });
            }
            row.push(format!("{:.3}±{:.3}", m.average.dice.mean, m.average.dice.sd));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        for c in &self.comparisons {
            let _ = writeln!(
                out,
                "wilcoxon {} vs {}: n={} W+={} p={:.5}",
                c.method_a, c.method_b, c.test.n, c.test.w_plus, c.test.p_value
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(subject: &str, organ: &str, method: &str, dice: f64) -> EvalRecord {
        EvalRecord {
            subject: subject.into(),
            organ: organ.into(),
            method: method.into(),
            dice,
            hd_mm: Some(1.0),
        }
    }

    #[test]
    fn single_record() {
        let r = build_report(alloc::vec![rec("s1", "liver", "a", 0.5)]).unwrap();
        assert_eq!(
            r.methods[0].average.dice,
            MeanSd {
                mean: 0.5,
                sd: 0.0,
                n: 1
            }
        );
    }

    #[test]
    fn two_records_population_sd() {
        let r = build_report(alloc::vec![rec("s1", "liver", "a", 0.4), rec("s2", "liver", "a", 0.6)]).unwrap();
        let d = r.methods[0].organs[0].dice;
        assert!((d.mean - 0.5).abs() < 1e-12 && (d.sd - 0.1).abs() < 1e-12);
    }

    #[test]
    fn thirteen_organs_two_subjects() {
        let mut recs = Vec::new();
        for s in ["s1", "s2"] {
            for o in 0..13 {
                recs.push(rec(s, &format!("organ{o}"), "a", 0.5));
            }
        }
        let r = build_report(recs).unwrap();
        assert_eq!(r.records.len(), 26);
        assert_eq!(r.methods[0].organs.len(), 13);
        let table = r.text_table();
        assert_eq!(table.lines().count(), 2);
        assert!(table.lines().next().unwrap().ends_with("average"));
    }

    #[test]
    fn rejects_out_of_range_and_empty() {
        assert!(build_report(Vec::new()).is_err());
        assert!(build_report(alloc::vec![rec("s", "o", "m", 1.5)]).is_err());
    }

    #[test]
    fn comparison_pairs_by_subject_and_organ() {
        let mut recs = Vec::new();
        for s in 0..6 {
            recs.push(rec(&format!("s{s}"), "liver", "a", 0.5 + 0.05 * s as f64));
            recs.push(rec(&format!("s{s}"), "liver", "b", 0.4));
        }
        let mut r = build_report(recs).unwrap();
        let c = r.compare("a", "b").unwrap();
        assert_eq!(c.test.p_value, 0.03125);
        assert!(r.text_table().contains("wilcoxon a vs b"));
    }
}
