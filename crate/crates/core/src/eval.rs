//! Top-k recall per class, top-k accuracy, and the per-class report.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedExample, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::fusion::FusionModel;

pub const REPORT_VERSION: u32 = 1;
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

fn validate(preds: &[Vec<usize>], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::shape("topk", format!("{} predictions", preds.len()), format!("{} labels", labels.len())));
    }
    let k = preds.first().map_or(0, |p| p.len());
    for (i, p) in preds.iter().enumerate() {
        if p.len() != k || k == 0 {
            return Err(Error::Argument(format!("prediction {i} has {} entries, expected {k} >= 1", p.len())));
        }
        for (j, c) in p.iter().enumerate() {
            if p[..j].contains(c) {
                return Err(Error::Argument(format!("prediction {i} repeats class {c}")));
            }
        }
    }
    Ok(())
}

/// Fraction of the cases labelled `class` whose label is in their top-k list.
/// `None` when no case carries that label.
pub fn topk_recall(preds: &[Vec<usize>], labels: &[usize], class: usize) -> Result<Option<f64>> {
    validate(preds, labels)?;
    let mut n_k = 0usize;
    let mut hits = 0usize;
    for (p, &y) in preds.iter().zip(labels) {
        if y == class {
            n_k += 1;
            hits += p.contains(&y) as usize;
        }
    }
    Ok((n_k > 0).then(|| hits as f64 / n_k as f64))
}

/// Fraction of all cases whose label is in their top-k list.
pub fn topk_accuracy(preds: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    validate(preds, labels)?;
    if labels.is_empty() {
        return Err(Error::Argument("top-k accuracy of an empty set".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p.contains(y)).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecall {
    pub name: String,
    pub n_k: usize,
    /// `null` when the class is absent from the evaluated set.
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub k: usize,
    pub n: usize,
    pub per_class: Vec<ClassRecall>,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

pub fn class_name(idx: usize, num_classes: usize) -> String {
    if num_classes == CLASS_NAMES.len() {
        CLASS_NAMES[idx].to_string()
    } else {
        format!("class_{idx}")
    }
}

impl EvalReport {
    pub fn from_predictions(preds: &[Vec<usize>], labels: &[usize], num_classes: usize) -> Result<Self> {
        let accuracy = topk_accuracy(preds, labels)?;
        if let Some(bad) = labels.iter().chain(preds.iter().flatten()).find(|c| **c >= num_classes) {
            return Err(Error::Argument(format!("class index {bad} out of range for {num_classes} classes")));
        }
        let per_class = (0..num_classes)
            .map(|c| {
                Ok(ClassRecall {
                    name: class_name(c, num_classes),
                    n_k: labels.iter().filter(|y| **y == c).count(),
                    recall: topk_recall(preds, labels, c)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = Self {
            version: REPORT_VERSION,
            k: preds[0].len(),
            n: labels.len(),
            per_class,
            accuracy,
            model: None,
        };
        report.check_identity()?;
        Ok(report)
    }

    /// `sum_k (n_k / n) * recall_k`.
    pub fn weighted_recall(&self) -> f64 {
        self.per_class
            .iter()
            .filter_map(|c| c.recall.map(|r| c.n_k as f64 / self.n as f64 * r))
            .sum()
    }

    /// Checks accuracy against the class-weighted recall, and basic ranges.
    pub fn check_identity(&self) -> Result<()> {
        let gap = (self.accuracy - self.weighted_recall()).abs();
        if !(gap <= IDENTITY_TOLERANCE) {
            return Err(Error::Argument(format!(
                "report identity violated: accuracy {} vs weighted recall {} (gap {gap:e})",
                self.accuracy,
                self.weighted_recall()
            )));
        }
        if self.per_class.iter().map(|c| c.n_k).sum::<usize>() != self.n {
            return Err(Error::Argument("per-class counts do not sum to n".into()));
        }
        for c in &self.per_class {
            match c.recall {
                Some(r) if !(0.0..=1.0).contains(&r) => {
                    return Err(Error::Argument(format!("recall of {} out of range: {r}", c.name)))
                }
                None if c.n_k > 0 => {
                    return Err(Error::Argument(format!("recall of {} missing with n_k = {}", c.name, c.n_k)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn recall_of(&self, name: &str) -> Option<f64> {
        self.per_class.iter().find(|c| c.name == name).and_then(|c| c.recall)
    }

    /// Pooled recall over a set of classes: hits over cases, weighted by n_k.
    pub fn pooled_recall(&self, names: &[&str]) -> Option<f64> {
        let (mut hits, mut n) = (0.0, 0usize);
        for c in self.per_class.iter().filter(|c| names.contains(&c.name.as_str())) {
            if let Some(r) = c.recall {
                hits += r * c.n_k as f64;
                n += c.n_k;
            }
        }
        (n > 0).then(|| hits / n as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text)?;
        if report.version != REPORT_VERSION {
            return Err(Error::Argument(format!(
                "{}: report version {} not supported (expected {REPORT_VERSION})",
                path.display(),
                report.version
            )));
        }
        report.check_identity()?;
        Ok(report)
    }

    /// Accuracy line followed by one recall line per class, in class order.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let label = self.model.as_deref().unwrap_or("model");
        let _ = writeln!(s, "{label}: top-{} accuracy {:.4} over {} cases", self.k, self.accuracy, self.n);
        for c in &self.per_class {
            let r = c.recall.map_or("undefined".to_string(), |r| format!("{r:.4}"));
            let _ = writeln!(s, "  {:<32} n={:<5} recall@{} {r}", c.name, c.n_k, self.k);
        }
        let _ = writeln!(
            s,
            "identity: accuracy {:.12} == weighted recall {:.12}",
            self.accuracy,
            self.weighted_recall()
        );
        s
    }
}

/// Runs `predict_topk` over `set` and aggregates the report.
pub fn report(model: &FusionModel, set: &[EncodedExample], k: usize) -> Result<EvalReport> {
    let preds = set
        .par_iter()
        .map(|ex| {
            model
                .predict_topk(&ex.input(), k)
                .map(|p| p.top_k)
                .map_err(|e| e.with_example(&ex.id))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = set.iter().map(|e| e.label).collect();
    let mut r = EvalReport::from_predictions(&preds, &labels, model.config().num_classes)?;
    r.model = Some(model.variant().to_string());
    Ok(r)
}

/// Side-by-side per-class recall and accuracy for several reports, followed
/// by the accuracy ordering.
pub fn compare(reports: &[EvalReport]) -> Result<String> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Argument("nothing to compare".into()))?;
    if reports.iter().any(|r| r.k != first.k || r.per_class.len() != first.per_class.len()) {
        return Err(Error::Argument("reports differ in k or class count".into()));
    }
    let names: Vec<String> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| r.model.clone().unwrap_or_else(|| format!("report{}", i + 1)))
        .collect();
    let mut s = String::new();
    let _ = write!(s, "{:<32}", format!("top-{} recall", first.k));
    for n in &names {
        let _ = write!(s, " {n:>10}");
    }
    s.push('\n');
    for (ci, c) in first.per_class.iter().enumerate() {
        let _ = write!(s, "{:<32}", c.name);
        for r in reports {
            let cell = r.per_class[ci].recall.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = write!(s, " {cell:>10}");
        }
        s.push('\n');
    }
    let _ = write!(s, "{:<32}", format!("top-{} accuracy", first.k));
    for r in reports {
        let _ = write!(s, " {:>10.4}", r.accuracy);
    }
    s.push('\n');
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| reports[b].accuracy.total_cmp(&reports[a].accuracy));
    let ranking: Vec<String> = order
        .iter()
        .map(|&i| format!("{} ({:.4})", names[i], reports[i].accuracy))
        .collect();
    let _ = writeln!(s, "ordering: {}", ranking.join(" > "));
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn random_case(rng: &mut Rng, n: usize, classes: usize, k: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
        let preds = (0..n)
            .map(|_| {
                let mut all: Vec<usize> = (0..classes).collect();
                rng.shuffle(&mut all);
                all.truncate(k);
                all
            })
            .collect();
        let labels = (0..n).map(|_| rng.below(classes)).collect();
        (preds, labels)
    }

    #[test]
    fn trivial_recalls() {
        let labels = vec![2; 4];
        let hit = vec![vec![0, 2, 5]; 4];
        let miss = vec![vec![0, 1, 5]; 4];
        assert_eq!(topk_recall(&hit, &labels, 2).unwrap(), Some(1.0));
        assert_eq!(topk_recall(&miss, &labels, 2).unwrap(), Some(0.0));
        assert_eq!(topk_recall(&hit, &labels, 3).unwrap(), None);
    }

    #[test]
    fn trivial_accuracy() {
        let preds = vec![vec![0, 1, 2], vec![0, 1, 2], vec![3, 4, 5], vec![1, 2, 3]];
        assert_eq!(topk_accuracy(&preds, &[0, 2, 4, 0]).unwrap(), 0.75);
        assert!(topk_accuracy(&[], &[]).is_err());
        let full = vec![vec![2, 0, 1]; 3];
        assert_eq!(topk_accuracy(&full, &[0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn malformed_predictions_error() {
        assert!(topk_accuracy(&[vec![1, 1, 2]], &[1]).is_err());
        assert!(topk_accuracy(&[vec![1, 2, 3], vec![1]], &[1, 1]).is_err());
        assert!(topk_accuracy(&[vec![1, 2, 3]], &[1, 1]).is_err());
    }

    #[test]
    fn single_class_dataset() {
        let preds = vec![vec![4, 0, 1], vec![0, 1, 2], vec![4, 5, 6]];
        let r = EvalReport::from_predictions(&preds, &[4, 4, 4], 13).unwrap();
        assert_eq!(r.per_class[4].recall, Some(2.0 / 3.0));
        assert_eq!(r.per_class.iter().filter(|c| c.recall.is_none()).count(), 12);
        assert_eq!(r.accuracy, r.per_class[4].recall.unwrap());
    }

    #[test]
    fn matches_enumeration_and_identity() {
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let n = 1 + rng.below(60);
            let (preds, labels) = random_case(&mut rng, n, 13, 3);
            let r = EvalReport::from_predictions(&preds, &labels, 13).unwrap();
            for c in 0..13 {
                let mut n_k = 0;
                let mut hits = 0;
                for i in 0..n {
                    if labels[i] == c {
                        n_k += 1;
                        if preds[i][0] == c || preds[i][1] == c || preds[i][2] == c {
                            hits += 1;
                        }
                    }
                }
                let want = if n_k == 0 { None } else { Some(hits as f64 / n_k as f64) };
                assert_eq!(r.per_class[c].recall, want);
            }
        }
    }

    #[test]
    fn permutation_invariant_and_monotone_in_k() {
        let mut rng = Rng::new(5);
        let (preds5, labels) = random_case(&mut rng, 80, 13, 5);
        let mut prev = 0.0;
        for k in 1..=5 {
            let pk: Vec<Vec<usize>> = preds5.iter().map(|p| p[..k].to_vec()).collect();
            let acc = topk_accuracy(&pk, &labels).unwrap();
            assert!(acc >= prev);
            prev = acc;
        }
        let mut idx: Vec<usize> = (0..80).collect();
        rng.shuffle(&mut idx);
        let p2: Vec<Vec<usize>> = idx.iter().map(|&i| preds5[i].clone()).collect();
        let l2: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let a = EvalReport::from_predictions(&preds5, &labels, 13).unwrap();
        let b = EvalReport::from_predictions(&p2, &l2, 13).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_and_schema() {
        let mut rng = Rng::new(6);
        let (preds, labels) = random_case(&mut rng, 20, 13, 3);
        let r = EvalReport::from_predictions(&preds, &labels, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        r.save(&p).unwrap();
        assert_eq!(EvalReport::load(&p).unwrap(), r);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        for key in ["version", "k", "n", "per_class", "accuracy"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let first = &v["per_class"][0];
        assert!(first.get("name").is_some() && first.get("n_k").is_some() && first.get("recall").is_some());
    }

    #[test]
    fn compare_orders_by_accuracy() {
        let mut reports = Vec::new();
        for (name, hits) in [("mlp", 1), ("fusion", 3), ("text", 2)] {
            let preds: Vec<Vec<usize>> = (0..4).map(|i| if i < hits { vec![0, 1, 2] } else { vec![3, 4, 5] }).collect();
            let mut r = EvalReport::from_predictions(&preds, &[0, 0, 0, 0], 13).unwrap();
            r.model = Some(name.into());
            reports.push(r);
        }
        let table = compare(&reports).unwrap();
        let last = table.lines().last().unwrap();
        assert!(last.starts_with("ordering: fusion") && last.find("text") < last.find("mlp"), "{table}");
    }
}
