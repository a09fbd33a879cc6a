use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{niqe_score, piqe, IqaError, Luma, NiqeModel, PiqeConfig};
use crate::data::{load_image, resize_to};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub image: String,
    pub group: String,
    pub niqe: Option<f64>,
    pub piqe: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub group: String,
    pub count: usize,
    pub errors: usize,
    pub niqe_mean: Option<f64>,
    pub niqe_median: Option<f64>,
    pub piqe_mean: Option<f64>,
    pub piqe_median: Option<f64>,
}

/// Scores every `(path, group)` in order. Unreadable or unscorable files
/// produce a row with `error` set instead of aborting the run.
pub fn score_corpus(
    items: &[(PathBuf, String)],
    model: Option<&NiqeModel>,
    piqe_cfg: &PiqeConfig,
    resize: Option<usize>,
) -> Vec<ScoreRow> {
    items
        .iter()
        .map(|(path, group)| {
            let mut row = ScoreRow {
                image: path.display().to_string(),
                group: group.clone(),
                niqe: None,
                piqe: None,
                error: None,
            };
            let mut errors = Vec::new();
            match load_image(path) {
                Ok(s) => {
                    let s = resize.map_or(s.clone(), |n| resize_to(&s, n));
                    let luma = Luma::from_sample(&s);
                    match piqe(&luma, piqe_cfg) {
                        Ok(r) => row.piqe = Some(r.score),
                        Err(e) => errors.push(format!("piqe: {e}")),
                    }
                    if let Some(m) = model {
                        match niqe_score(&luma, m) {
                            Ok(v) => row.niqe = Some(v),
                            Err(e) => errors.push(format!("niqe: {e}")),
                        }
                    }
                }
                Err(e) => errors.push(e.to_string()),
            }
            if !errors.is_empty() {
                row.error = Some(errors.join("; "));
            }
            row
        })
        .collect()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IqaError + '_ {
    move |e| IqaError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_scores_csv(rows: &[ScoreRow], path: &Path) -> Result<(), IqaError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["image", "group", "niqe", "piqe", "error"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.image.as_str(),
            &r.group,
            &opt(r.niqe),
            &opt(r.piqe),
            r.error.as_deref().unwrap_or(""),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| IqaError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a scores CSV. Errors carry the 1-based line number.
pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>, (usize, String)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| (0, e.to_string()))?;
    let headers = r.headers().map_err(|e| (1, e.to_string()))?.clone();
    let expected = ["image", "group", "niqe", "piqe", "error"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err((1, format!("expected header {}", expected.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| (line, e.to_string()))?;
        let num = |k: usize| -> Result<Option<f64>, (usize, String)> {
            match rec.get(k).unwrap_or("") {
                "" => Ok(None),
                s => s
                    .parse()
                    .map(Some)
                    .map_err(|_| (line, format!("column {} is not a number: {s:?}", expected[k]))),
            }
        };
        rows.push(ScoreRow {
            image: rec[0].to_string(),
            group: rec[1].to_string(),
            niqe: num(2)?,
            piqe: num(3)?,
            error: Some(rec[4].to_string()).filter(|s| !s.is_empty()),
        });
    }
    Ok(rows)
}

fn mean_median(mut v: Vec<f64>) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    (Some(mean), Some(median))
}

/// Per-group mean and median of each metric, groups sorted by name.
pub fn summarize(rows: &[ScoreRow]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<&str, Vec<&ScoreRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.group).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(g, rs)| {
            let (niqe_mean, niqe_median) = mean_median(rs.iter().filter_map(|r| r.niqe).collect());
            let (piqe_mean, piqe_median) = mean_median(rs.iter().filter_map(|r| r.piqe).collect());
            GroupSummary {
                group: g.to_string(),
                count: rs.len(),
                errors: rs.iter().filter(|r| r.error.is_some()).count(),
                niqe_mean,
                niqe_median,
                piqe_mean,
                piqe_median,
            }
        })
        .collect()
}

pub fn write_summary(summary: &[GroupSummary], path: &Path) -> Result<(), IqaError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["group", "count", "errors", "niqe_mean", "niqe_median", "piqe_mean", "piqe_median"])
        .map_err(csv_err(path))?;
    for s in summary {
        w.write_record([
            s.group.clone(),
            s.count.to_string(),
            s.errors.to_string(),
            opt(s.niqe_mean),
            opt(s.niqe_median),
            opt(s.piqe_mean),
            opt(s.piqe_median),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| IqaError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
