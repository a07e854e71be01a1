use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::task::{collapse_index, TaskId};

/// Rows are truth, columns are prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
            class_names: (0..classes).map(|i| i.to_string()).collect(),
        }
    }

    pub fn for_task(task: TaskId) -> Self {
        let mut m = Self::zeros(task.n_classes());
        m.class_names = task.class_names().iter().map(|s| s.to_string()).collect();
        m
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        let c = self.classes();
        for index in [truth, pred] {
            if index >= c {
                return Err(Error::IndexOutOfRange { index, classes: c });
            }
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    /// Collapse a 1-2 (or 2-2) matrix onto the coarse task's classes.
    pub fn collapse(&self, fine: TaskId) -> Result<ConfusionMatrix> {
        let coarse = fine.coarse().ok_or_else(|| Error::Config(format!("task {fine} has no coarse form")))?;
        let mut out = ConfusionMatrix::for_task(coarse);
        for t in 0..self.classes() {
            for p in 0..self.classes() {
                out.counts[collapse_index(fine, t)?][collapse_index(fine, p)?] += self.counts[t][p];
            }
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\pred");
        for n in &self.class_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (n, row) in self.class_names.iter().zip(&self.counts) {
            s.push_str(n);
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(predictions: &[usize], truths: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut m = ConfusionMatrix::zeros(classes);
    for (&p, &t) in predictions.iter().zip(truths) {
        m.record(t, p)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeAggregation {
    #[default]
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PqMode {
    #[default]
    Pooled,
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreOptions {
    pub se: SeAggregation,
    pub pq: PqMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: TaskId,
    pub gamma: Option<f64>,
    pub se: f64,
    pub sp: f64,
    #[serde(rename = "as")]
    pub as_: f64,
    pub hs: f64,
    pub score: f64,
    pub n_samples: u64,
    #[serde(default)]
    pub per_class_recall: Vec<Option<f64>>,
}

/// `(AS, HS, Score)` from sensitivity and specificity.
pub fn combine(se: f64, sp: f64) -> (f64, f64, f64) {
    let as_ = (se + sp) / 2.0;
    let hs = if se + sp == 0.0 { 0.0 } else { 2.0 * se * sp / (se + sp) };
    (as_, hs, (as_ + hs) / 2.0)
}

impl ScoreReport {
    pub fn from_se_sp(task: TaskId, se: f64, sp: f64) -> Self {
        let (as_, hs, score) = combine(se, sp);
        ScoreReport {
            task,
            gamma: None,
            se,
            sp,
            as_,
            hs,
            score,
            n_samples: 0,
            per_class_recall: Vec::new(),
        }
    }

    /// True when AS, HS and Score are exactly what SE and SP imply.
    pub fn is_consistent(&self) -> bool {
        combine(self.se, self.sp) == (self.as_, self.hs, self.score)
    }
}

pub fn challenge_scores(m: &ConfusionMatrix, task: TaskId) -> Result<ScoreReport> {
    challenge_scores_with(m, task, ScoreOptions::default())
}

pub fn challenge_scores_with(m: &ConfusionMatrix, task: TaskId, opts: ScoreOptions) -> Result<ScoreReport> {
    if m.classes() != task.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{}-class matrix for task {task} with {} classes",
            m.classes(),
            task.n_classes()
        )));
    }
    let normal = m.row_total(0);
    if normal == 0 {
        return Err(Error::UndefinedMetric("no Normal samples".into()));
    }
    let abnormal: Vec<usize> = (1..m.classes())
        .filter(|&i| !(opts.pq == PqMode::Excluded && task.pq_index() == Some(i)))
        .collect();
    let abnormal_total: u64 = abnormal.iter().map(|&i| m.row_total(i)).sum();
    if abnormal_total == 0 {
        return Err(Error::UndefinedMetric("no non-Normal samples".into()));
    }
    let recall = |i: usize| {
        let n = m.row_total(i);
        (n > 0).then(|| m.counts[i][i] as f64 / n as f64)
    };
    let se = match opts.se {
        SeAggregation::Micro => abnormal.iter().map(|&i| m.counts[i][i]).sum::<u64>() as f64 / abnormal_total as f64,
        SeAggregation::Macro => {
            let r: Vec<f64> = abnormal.iter().filter_map(|&i| recall(i)).collect();
            r.iter().sum::<f64>() / r.len() as f64
        }
    };
    let sp = m.counts[0][0] as f64 / normal as f64;
    let mut rep = ScoreReport::from_se_sp(task, se, sp);
    rep.n_samples = m.total();
    rep.per_class_recall = (0..m.classes()).map(recall).collect();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let m = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0], vec![1, 1]]);
        assert_eq!(confusion(&[], &[], 3).unwrap().total(), 0);
        let d = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(d.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert!(matches!(confusion(&[3], &[0], 3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn combine_arithmetic() {
        assert_eq!(combine(1.0, 1.0), (1.0, 1.0, 1.0));
        assert_eq!(combine(0.0, 1.0), (0.5, 0.0, 0.25));
        assert_eq!(combine(0.0, 0.0), (0.0, 0.0, 0.0));
        let (a, h, s) = combine(0.891, 0.914);
        assert!((a - 0.9025).abs() < 1e-12);
        assert!((h - 0.90235).abs() < 5e-6);
        assert!((s - 0.90243).abs() < 5e-6);
    }

    #[test]
    fn pooled_and_excluded_pq() {
        // Task 2-1: Normal 10 (8 right), Adventitious 6 (3 right), PQ 4 (1 right).
        let mut m = ConfusionMatrix::for_task(TaskId::Task2_1);
        m.counts = vec![vec![8, 2, 0], vec![3, 3, 0], vec![2, 1, 1]];
        let pooled = challenge_scores(&m, TaskId::Task2_1).unwrap();
        assert!((pooled.se - 0.4).abs() < 1e-12);
        assert!((pooled.sp - 0.8).abs() < 1e-12);
        let ex = challenge_scores_with(&m, TaskId::Task2_1, ScoreOptions { pq: PqMode::Excluded, ..Default::default() }).unwrap();
        assert!((ex.se - 0.5).abs() < 1e-12);
        let mac = challenge_scores_with(&m, TaskId::Task2_1, ScoreOptions { se: SeAggregation::Macro, ..Default::default() }).unwrap();
        assert!((mac.se - (0.5 + 0.25) / 2.0).abs() < 1e-12);
        assert!(pooled.is_consistent());
    }

    #[test]
    fn undefined_without_both_groups() {
        let mut m = ConfusionMatrix::for_task(TaskId::Task1_1);
        m.counts = vec![vec![0, 0], vec![1, 2]];
        assert!(matches!(challenge_scores(&m, TaskId::Task1_1), Err(Error::UndefinedMetric(_))));
        m.counts = vec![vec![3, 0], vec![0, 0]];
        assert!(matches!(challenge_scores(&m, TaskId::Task1_1), Err(Error::UndefinedMetric(_))));
    }

    proptest::proptest! {
        #[test]
        fn identities_and_invariances(
            pairs in proptest::collection::vec((0usize..7, 0usize..7), 1..200),
            seed in 0u64..1000,
        ) {
            let mut pairs = pairs;
            pairs.push((0, 0));
            pairs.push((3, 1));
            let truths: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let m = confusion(&preds, &truths, 7).unwrap();
            let r = challenge_scores(&m, TaskId::Task1_2).unwrap();
            proptest::prop_assert!(r.is_consistent());
            proptest::prop_assert!(r.hs <= r.as_ + 1e-15);
            for v in [r.se, r.sp, r.as_, r.hs, r.score] {
                proptest::prop_assert!((0.0..=1.0).contains(&v));
            }

            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            crate::autodiff::Rng::new(seed).shuffle(&mut idx);
            let t2: Vec<usize> = idx.iter().map(|&i| truths[i]).collect();
            let p2: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
            let r2 = challenge_scores(&confusion(&p2, &t2, 7).unwrap(), TaskId::Task1_2).unwrap();
            proptest::prop_assert_eq!(&r, &r2);

            let coarse = |v: &[usize]| v.iter().map(|&i| collapse_index(TaskId::Task1_2, i).unwrap()).collect::<Vec<_>>();
            let direct = challenge_scores(&confusion(&coarse(&preds), &coarse(&truths), 2).unwrap(), TaskId::Task1_1).unwrap();
            let collapsed = challenge_scores(&m.collapse(TaskId::Task1_2).unwrap(), TaskId::Task1_1).unwrap();
            proptest::prop_assert_eq!((direct.se, direct.sp, direct.score), (collapsed.se, collapsed.sp, collapsed.score));
        }
    }
}
