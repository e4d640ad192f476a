//! Confusion matrices, per-class and averaged scores, comparison tables.
//!
//! Undefined ratios follow one rule: the value is reported as 0, flagged, and left
//! out of the macro and weighted means. Precision is undefined for a class that is
//! never predicted; recall and F1 are undefined for a class with no support.

use crate::error::{config_err, input_err, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// `counts[t][p]` = samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![vec![0; k]; k] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(input_err!("cannot merge {}-class and {}-class confusion matrices", self.k, other.k));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn to_text(&self, labels: &[String]) -> String {
        let name = |i: usize| labels.get(i).cloned().unwrap_or_else(|| i.to_string());
        let width = (0..self.k).map(|i| name(i).len()).max().unwrap_or(1).max(6);
        let mut out = format!("{:>width$}", "true\\pred");
        for p in 0..self.k {
            write!(out, " {:>width$}", name(p)).unwrap();
        }
        out.push('\n');
        for t in 0..self.k {
            write!(out, "{:>width$}", name(t)).unwrap();
            for p in 0..self.k {
                write!(out, " {:>width$}", self.counts[t][p]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Counts `(true, predicted)` pairs.
pub fn confusion(true_ids: &[usize], pred_ids: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if true_ids.len() != pred_ids.len() {
        return Err(input_err!("{} true labels but {} predictions", true_ids.len(), pred_ids.len()));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (i, (&t, &p)) in true_ids.iter().zip(pred_ids).enumerate() {
        if t >= k || p >= k {
            return Err(input_err!("sample {i}: label pair ({t}, {p}) outside [0, {k})"));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: u64,
    pub predicted: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    /// False when the class has no support; recall and F1 are then 0 and excluded.
    pub recall_defined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean over classes where each value is defined.
    pub macro_avg: Averages,
    /// Support-weighted mean over classes with support.
    pub weighted_avg: Averages,
    /// Classes without support, excluded from the averages.
    pub zero_support: Vec<usize>,
    pub confusion: ConfusionMatrix,
}

fn ratio(n: u64, d: u64) -> (f64, bool) {
    if d == 0 {
        (0.0, false)
    } else {
        (n as f64 / d as f64, true)
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(input_err!("nothing was evaluated (empty confusion matrix)"));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let (support, predicted) = (cm.support(c), cm.predicted(c));
            let (precision, precision_defined) = ratio(tp, predicted);
            let (recall, recall_defined) = ratio(tp, support);
            let f1 = if recall_defined { harmonic(precision, recall) } else { 0.0 };
            ClassMetrics { support, predicted, precision, recall, f1, precision_defined, recall_defined }
        })
        .collect();
    let mean = |vals: Vec<(f64, f64)>| {
        let w: f64 = vals.iter().map(|v| v.1).sum();
        if w == 0.0 {
            0.0
        } else {
            vals.iter().map(|v| v.0 * v.1).sum::<f64>() / w
        }
    };
    let avg = |weighted: bool| {
        let wt = |m: &ClassMetrics| if weighted { m.support as f64 } else { 1.0 };
        Averages {
            precision: mean(per_class.iter().filter(|m| m.precision_defined && m.recall_defined).map(|m| (m.precision, wt(m))).collect()),
            recall: mean(per_class.iter().filter(|m| m.recall_defined).map(|m| (m.recall, wt(m))).collect()),
            f1: mean(per_class.iter().filter(|m| m.recall_defined).map(|m| (m.f1, wt(m))).collect()),
        }
    };
    Ok(MetricsReport {
        total,
        accuracy: cm.trace() as f64 / total as f64,
        macro_avg: avg(false),
        weighted_avg: avg(true),
        zero_support: (0..cm.k).filter(|&c| !per_class[c].recall_defined).collect(),
        per_class,
        confusion: cm.clone(),
    })
}

impl MetricsReport {
    pub fn to_text(&self, labels: &[String]) -> String {
        let name = |i: usize| labels.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut out = format!("samples {}  accuracy {:.4}  macro F1 {:.4}\n", self.total, self.accuracy, self.macro_avg.f1);
        out.push_str("class        support  precision  recall     f1\n");
        for (c, m) in self.per_class.iter().enumerate() {
            let flag = |defined: bool| if defined { ' ' } else { '*' };
            writeln!(
                out,
                "{:<12} {:>7}  {:>8.4}{} {:>7.4}{} {:.4}",
                name(c),
                m.support,
                m.precision,
                flag(m.precision_defined),
                m.recall,
                flag(m.recall_defined),
                m.f1
            )
            .unwrap();
        }
        let a = &self.macro_avg;
        writeln!(out, "{:<12} {:>7}  {:>8.4}  {:>7.4}  {:.4}", "macro", self.total, a.precision, a.recall, a.f1).unwrap();
        let w = &self.weighted_avg;
        writeln!(out, "{:<12} {:>7}  {:>8.4}  {:>7.4}  {:.4}", "weighted", self.total, w.precision, w.recall, w.f1).unwrap();
        if self.per_class.iter().any(|m| !m.precision_defined || !m.recall_defined) {
            out.push_str("* undefined, shown as 0 and excluded from averages\n");
        }
        out
    }
}

/// One cell group of a comparison table. Accuracy is a fraction in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub accuracy: f64,
    pub macro_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_std: Option<f64>,
}

impl TableEntry {
    pub fn new(accuracy: f64, macro_f1: f64) -> Self {
        TableEntry { accuracy, macro_f1, accuracy_std: None, f1_std: None }
    }

    pub fn from_report(r: &MetricsReport) -> Self {
        TableEntry::new(r.accuracy, r.macro_avg.f1)
    }
}

/// Models as rows, accuracy (%) and macro F1 per dataset as columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub datasets: Vec<String>,
    pub rows: Vec<(String, Vec<TableEntry>)>,
}

pub fn comparison_table(rows: Vec<(String, Vec<TableEntry>)>, dataset_names: &[String]) -> Result<ComparisonTable> {
    if dataset_names.is_empty() {
        return Err(config_err!("comparison table needs at least one dataset name"));
    }
    if rows.is_empty() {
        return Err(config_err!("comparison table needs at least one model row"));
    }
    for (name, entries) in &rows {
        if entries.len() != dataset_names.len() {
            return Err(input_err!("row {name:?} has {} entries for {} datasets", entries.len(), dataset_names.len()));
        }
    }
    Ok(ComparisonTable { datasets: dataset_names.to_vec(), rows })
}

impl ComparisonTable {
    /// Markdown table; the best value in each column (after rounding) is bold.
    pub fn to_text(&self) -> String {
        let acc = |e: &TableEntry| format!("{:.1}", e.accuracy * 100.0);
        let f1 = |e: &TableEntry| format!("{:.2}", e.macro_f1);
        let with_std = |v: String, s: Option<f64>, scale: f64, prec: usize| match s {
            Some(s) => format!("{v} ± {:.prec$}", s * scale),
            None => v,
        };
        let mut header = vec!["Model".to_string()];
        header.extend(self.datasets.iter().map(|d| format!("{d} Accuracy (%)")));
        header.extend(self.datasets.iter().map(|d| format!("{d} F1")));
        let mut cells: Vec<Vec<String>> = self.rows.iter().map(|(name, _)| vec![name.clone()]).collect();
        let columns: [(&dyn Fn(&TableEntry) -> String, fn(&TableEntry) -> Option<f64>, f64, usize); 2] =
            [(&acc, |e| e.accuracy_std, 100.0, 1), (&f1, |e| e.f1_std, 1.0, 2)];
        for (fmt, std_of, scale, prec) in columns {
            for j in 0..self.datasets.len() {
                let shown: Vec<String> = self.rows.iter().map(|(_, e)| fmt(&e[j])).collect();
                let best = shown.iter().map(|s| s.parse::<f64>().unwrap()).fold(f64::NEG_INFINITY, f64::max);
                for (i, (_, e)) in self.rows.iter().enumerate() {
                    let v = with_std(shown[i].clone(), std_of(&e[j]), scale, prec);
                    let is_best = shown[i].parse::<f64>().unwrap() == best;
                    cells[i].push(if is_best { format!("**{v}**") } else { v });
                }
            }
        }
        let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
        for row in cells {
            writeln!(out, "| {} |", row.join(" | ")).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|(name, entries)| {
                let per: serde_json::Map<String, serde_json::Value> = self
                    .datasets
                    .iter()
                    .zip(entries)
                    .map(|(d, e)| (d.clone(), serde_json::to_value(e).expect("plain data")))
                    .collect();
                serde_json::json!({ "model": name, "datasets": per })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({ "datasets": self.datasets, "rows": rows })).expect("plain data")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap().trace(), 3);
        assert_eq!(confusion(&[], &[], 3).unwrap(), ConfusionMatrix::zeros(3));
        assert_eq!(confusion(&[0], &[0, 1], 2).unwrap_err().category(), "input");
        assert_eq!(confusion(&[0], &[2], 2).unwrap_err().category(), "input");
    }

    #[test]
    fn metrics_examples() {
        let r = compute_metrics(&confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap()).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        let (c0, c1) = (&r.per_class[0], &r.per_class[1]);
        assert_eq!((c0.precision, c0.recall), (1.0, 0.5));
        assert_eq!((c1.precision, c1.recall), (0.5, 1.0));
        assert!((c0.f1 - 2.0 / 3.0).abs() < 1e-15 && (c1.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.macro_avg.f1 - 2.0 / 3.0).abs() < 1e-15);

        let perfect = compute_metrics(&confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap()).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        assert!(perfect.per_class.iter().all(|m| m.f1 == 1.0));
        assert_eq!(compute_metrics(&ConfusionMatrix::zeros(2)).unwrap_err().category(), "input");
    }

    #[test]
    fn zero_support_is_flagged_and_excluded() {
        // class 2 never occurs; class 1 is never predicted
        let r = compute_metrics(&confusion(&[0, 0, 1], &[0, 0, 0], 3).unwrap()).unwrap();
        assert_eq!(r.zero_support, vec![2]);
        assert!(!r.per_class[2].recall_defined && r.per_class[2].f1 == 0.0);
        assert!(!r.per_class[1].precision_defined);
        // macro F1 over classes 0 and 1: (0.8 + 0) / 2
        assert!((r.macro_avg.f1 - 0.4).abs() < 1e-12);
        assert!(r.to_text(&[]).contains('*'));
    }

    #[test]
    fn published_row_renders_verbatim() {
        let t = comparison_table(
            vec![
                ("CNN Only".into(), vec![TableEntry::new(0.812, 0.82), TableEntry::new(0.785, 0.80)]),
                ("Transformer Only".into(), vec![TableEntry::new(0.854, 0.86), TableEntry::new(0.832, 0.84)]),
                ("Fusion Model".into(), vec![TableEntry::new(0.909, 0.91), TableEntry::new(0.873, 0.89)]),
            ],
            &["Chinese painting".into(), "Oil painting".into()],
        )
        .unwrap();
        let text = t.to_text();
        assert!(text.contains("| Fusion Model | **90.9** | **87.3** | **0.91** | **0.89** |"), "{text}");
        assert!(text.contains("| CNN Only | 81.2 | 78.5 | 0.82 | 0.80 |"), "{text}");
        assert!(text.starts_with("| Model | Chinese painting Accuracy (%) | Oil painting Accuracy (%) | Chinese painting F1 |"));
        assert_eq!(text.lines().count(), 5);
        let json: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(json["rows"][2]["datasets"]["Chinese painting"]["accuracy"], 0.909);

        let one = comparison_table(vec![("Fusion Model".into(), vec![TableEntry::new(0.909, 0.91)])], &["x".into()]).unwrap();
        assert!(one.to_text().contains("| Fusion Model | **90.9** | **0.91** |"));
        assert!(comparison_table(vec![], &["x".into()]).is_err());
        assert!(comparison_table(vec![("a".into(), vec![])], &[]).is_err());
    }

    fn random_pairs(rng: &mut Rng, n: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
        let t: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        // bias predictions toward the truth so the matrices are not uniform
        let p = t.iter().map(|&t| if rng.bernoulli(0.6) { t } else { rng.below(k) }).collect();
        (t, p)
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

        #[test]
        fn agrees_with_per_sample_counting(seed in 0u64..10_000, n in 1usize..1000, k in 1usize..=10) {
            let (t, p) = random_pairs(&mut Rng::new(seed), n, k);
            let r = compute_metrics(&confusion(&t, &p, k).unwrap()).unwrap();
            let correct = t.iter().zip(&p).filter(|(a, b)| a == b).count();
            prop_assert_eq!(r.accuracy, correct as f64 / n as f64);
            let mut micro = 0.0;
            for c in 0..k {
                let tp = t.iter().zip(&p).filter(|&(&a, &b)| a == c && b == c).count();
                let sup = t.iter().filter(|&&a| a == c).count();
                let pred = p.iter().filter(|&&b| b == c).count();
                let m = &r.per_class[c];
                prop_assert_eq!(m.support, sup as u64);
                prop_assert_eq!(m.predicted, pred as u64);
                if pred > 0 { prop_assert_eq!(m.precision, tp as f64 / pred as f64); }
                if sup > 0 {
                    prop_assert_eq!(m.recall, tp as f64 / sup as f64);
                    micro += m.recall * sup as f64;
                }
                let (pp, rr) = (m.precision, m.recall);
                let oracle = if pp + rr == 0.0 { 0.0 } else { 2.0 * pp * rr / (pp + rr) };
                if sup > 0 { prop_assert!((m.f1 - oracle).abs() <= 1e-15); }
                prop_assert!(m.f1 >= 0.0 && m.f1 <= pp.max(rr) + 1e-15);
                prop_assert!((0.0..=1.0).contains(&m.precision) && (0.0..=1.0).contains(&m.recall));
            }
            prop_assert!((micro / n as f64 - r.accuracy).abs() <= 1e-9);
        }

        #[test]
        fn symmetric_matrices_swap_roles(seed in 0u64..10_000, k in 2usize..6) {
            let mut rng = Rng::new(seed);
            let mut cm = ConfusionMatrix::zeros(k);
            for i in 0..k {
                for j in i..k {
                    let v = rng.below(20) as u64 + u64::from(i == j);
                    cm.counts[i][j] = v;
                    cm.counts[j][i] = v;
                }
            }
            let r = compute_metrics(&cm).unwrap();
            for m in &r.per_class {
                prop_assert_eq!(m.precision, m.recall);
            }
        }
    }
}
