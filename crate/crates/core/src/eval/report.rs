use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::metrics::{combine, ScoreReport};
use super::task::TaskId;

pub const CSV_FIELDS: [&str; 8] = ["task", "gamma", "se", "sp", "as", "hs", "score", "n_samples"];

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    task: TaskId,
    gamma: Option<f64>,
    se: f64,
    sp: f64,
    #[serde(rename = "as")]
    as_: f64,
    hs: f64,
    score: f64,
    n_samples: u64,
}

impl From<&ScoreReport> for Row {
    fn from(r: &ScoreReport) -> Self {
        Row {
            task: r.task,
            gamma: r.gamma,
            se: round4(r.se),
            sp: round4(r.sp),
            as_: round4(r.as_),
            hs: round4(r.hs),
            score: round4(r.score),
            n_samples: r.n_samples,
        }
    }
}

impl From<Row> for ScoreReport {
    fn from(r: Row) -> Self {
        ScoreReport {
            task: r.task,
            gamma: r.gamma,
            se: r.se,
            sp: r.sp,
            as_: r.as_,
            hs: r.hs,
            score: r.score,
            n_samples: r.n_samples,
            per_class_recall: Vec::new(),
        }
    }
}

pub fn render(reports: &[ScoreReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => reports_to_json(reports),
        ReportFormat::Csv => reports_to_csv(reports),
    }
}

/// JSON array of reports, metrics rounded to four decimals.
pub fn reports_to_json(reports: &[ScoreReport]) -> String {
    let rows: Vec<Row> = reports.iter().map(Row::from).collect();
    serde_json::to_string_pretty(&rows).expect("report rows serialize") + "\n"
}

pub fn reports_from_json(text: &str) -> Result<Vec<ScoreReport>> {
    let rows: Vec<Row> = serde_json::from_str(text).map_err(|e| Error::Format(format!("report JSON: {e}")))?;
    Ok(rows.into_iter().map(ScoreReport::from).collect())
}

pub fn reports_to_csv(reports: &[ScoreReport]) -> String {
    let mut s = CSV_FIELDS.join(",");
    s.push('\n');
    for r in reports {
        let gamma = r.gamma.map(|g| format!("{g}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{}\n",
            r.task, gamma, r.se, r.sp, r.as_, r.hs, r.score, r.n_samples
        ));
    }
    s
}

pub fn reports_from_csv(text: &str) -> Result<Vec<ScoreReport>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_FIELDS {
        return Err(Error::Format(format!("unexpected report header {headers:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let num = |i: usize| -> Result<f64> { rec[i].parse().map_err(|e| Error::Format(format!("field {}: {e}", CSV_FIELDS[i]))) };
        out.push(ScoreReport {
            task: rec[0].parse()?,
            gamma: if rec[1].is_empty() { None } else { Some(num(1)?) },
            se: num(2)?,
            sp: num(3)?,
            as_: num(4)?,
            hs: num(5)?,
            score: num(6)?,
            n_samples: rec[7].parse().map_err(|e| Error::Format(format!("n_samples: {e}")))?,
            per_class_recall: Vec::new(),
        });
    }
    Ok(out)
}

/// A printed result row: SE, SP and the three derived metrics as published.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PublishedRow {
    pub task: TaskId,
    pub gamma: f64,
    pub se: f64,
    pub sp: f64,
    pub as_: f64,
    pub hs: f64,
    pub score: f64,
}

/// Reference focal-parameter ablation rows, as printed.
pub const REFERENCE_ROWS: [PublishedRow; 16] = {
    const fn r(task: TaskId, gamma: f64, v: [f64; 5]) -> PublishedRow {
        PublishedRow {
            task,
            gamma,
            se: v[0],
            sp: v[1],
            as_: v[2],
            hs: v[3],
            score: v[4],
        }
    }
    use TaskId::*;
    [
        r(Task1_1, 2.0, [0.891, 0.910, 0.900, 0.900, 0.900]),
        r(Task1_1, 3.0, [0.895, 0.905, 0.900, 0.900, 0.900]),
        r(Task1_1, 4.0, [0.891, 0.914, 0.904, 0.904, 0.904]),
        r(Task1_1, 5.0, [0.903, 0.905, 0.902, 0.902, 0.900]),
        r(Task1_2, 2.0, [0.765, 0.909, 0.837, 0.831, 0.838]),
        r(Task1_2, 3.0, [0.753, 0.931, 0.842, 0.833, 0.838]),
        r(Task1_2, 4.0, [0.783, 0.912, 0.847, 0.842, 0.845]),
        r(Task1_2, 5.0, [0.769, 0.901, 0.839, 0.830, 0.832]),
        r(Task2_1, 2.0, [0.726, 0.670, 0.697, 0.696, 0.696]),
        r(Task2_1, 3.0, [0.612, 0.807, 0.709, 0.698, 0.706]),
        r(Task2_1, 4.0, [0.665, 0.718, 0.692, 0.691, 0.691]),
        r(Task2_1, 5.0, [0.590, 0.843, 0.730, 0.710, 0.720]),
        r(Task2_2, 2.0, [0.446, 0.716, 0.581, 0.550, 0.566]),
        r(Task2_2, 3.0, [0.418, 0.780, 0.599, 0.544, 0.571]),
        r(Task2_2, 4.0, [0.397, 0.757, 0.577, 0.526, 0.549]),
        r(Task2_2, 5.0, [0.434, 0.734, 0.584, 0.546, 0.565]),
    ]
};

pub fn reference_row(task: TaskId, gamma: f64) -> Option<PublishedRow> {
    REFERENCE_ROWS.iter().copied().find(|r| r.task == task && r.gamma == gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub field: &'static str,
    pub printed: f64,
    pub recomputed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowCheck {
    pub row: PublishedRow,
    pub recomputed: (f64, f64, f64),
    pub discrepancies: Vec<Discrepancy>,
}

impl RowCheck {
    pub fn consistent(&self) -> bool {
        self.discrepancies.is_empty()
    }
}

/// Recompute AS, HS and Score from a row's SE and SP; report fields off by more than `slack`.
pub fn check_published_row(row: &PublishedRow, slack: f64) -> RowCheck {
    let (a, h, s) = combine(row.se, row.sp);
    let discrepancies = [("as", row.as_, a), ("hs", row.hs, h), ("score", row.score, s)]
        .into_iter()
        .filter(|(_, printed, re)| (printed - re).abs() > slack)
        .map(|(field, printed, recomputed)| Discrepancy { field, printed, recomputed })
        .collect();
    RowCheck {
        row: *row,
        recomputed: (a, h, s),
        discrepancies,
    }
}

/// Run `leg` once per focusing value, stamping each report with its gamma.
pub fn gamma_sweep<F>(gammas: &[f64], mut leg: F) -> Result<Vec<ScoreReport>>
where
    F: FnMut(f64) -> Result<ScoreReport>,
{
    gammas
        .iter()
        .map(|&g| {
            let mut r = leg(g)?;
            r.gamma = Some(g);
            Ok(r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ScoreReport {
        let mut r = ScoreReport::from_se_sp(TaskId::Task1_1, 0.891, 0.914);
        r.gamma = Some(4.0);
        r.n_samples = 120;
        r
    }

    #[test]
    fn empty_documents() {
        assert_eq!(reports_from_json(&reports_to_json(&[])).unwrap(), vec![]);
        assert_eq!(reports_to_csv(&[]), "task,gamma,se,sp,as,hs,score,n_samples\n");
        assert!(reports_from_csv(&reports_to_csv(&[])).unwrap().is_empty());
    }

    #[test]
    fn four_decimal_fields() {
        let csv = reports_to_csv(&[sample()]);
        assert_eq!(csv.lines().nth(1).unwrap(), "1-1,4,0.8910,0.9140,0.9025,0.9024,0.9024,120");
        let json = reports_to_json(&[sample()]);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for k in ["se", "sp", "as", "hs", "score"] {
            assert!(v[0][k].is_number(), "{k}");
        }
        assert_eq!(v[0]["as"], 0.9025);
        let keys: Vec<&str> = json.lines().filter_map(|l| l.trim().split('"').nth(1)).collect();
        assert_eq!(keys, CSV_FIELDS.to_vec());
    }

    #[test]
    fn csv_round_trip_is_idempotent() {
        let csv = reports_to_csv(&[sample(), ScoreReport::from_se_sp(TaskId::Task2_2, 0.4, 0.7)]);
        assert_eq!(reports_to_csv(&reports_from_csv(&csv).unwrap()), csv);
        let json = reports_to_json(&[sample()]);
        assert_eq!(reports_to_json(&reports_from_json(&json).unwrap()), json);
    }

    #[test]
    fn reference_row_checks() {
        let ok = check_published_row(&reference_row(TaskId::Task1_1, 4.0).unwrap(), 0.005);
        assert!(ok.consistent(), "{ok:?}");
        let bad = check_published_row(&reference_row(TaskId::Task2_1, 5.0).unwrap(), 0.005);
        let fields: Vec<&str> = bad.discrepancies.iter().map(|d| d.field).collect();
        assert_eq!(fields, vec!["as", "hs", "score"]);
        assert!((bad.recomputed.0 - 0.7165).abs() < 1e-12);
    }

    #[test]
    fn sweep_shape() {
        let rows = gamma_sweep(&[2.0, 3.0, 4.0, 5.0], |g| Ok(ScoreReport::from_se_sp(TaskId::Task1_1, 0.5, g / 10.0))).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].gamma, Some(4.0));
    }
}
