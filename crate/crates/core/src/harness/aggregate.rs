use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{MetricReport, TABLE_COLUMNS};

/// Mean and sample standard deviation; one value gives sd 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub lambda: f64,
    pub cider_mean: f64,
    pub cider_sd: f64,
}

/// `per_seed[s][g]` is seed `s`'s CIDEr at `grid[g]`.
pub fn curve(grid: &[f64], per_seed: &[Vec<f64>]) -> Result<Vec<CurveRow>> {
    if per_seed.is_empty() {
        return Err(Error::Empty("no seeds for the curve".into()));
    }
    if let Some(s) = per_seed.iter().find(|s| s.len() != grid.len()) {
        return Err(Error::Dimension {
            op: "curve",
            lhs: vec![grid.len()],
            rhs: vec![s.len()],
        });
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, &lambda)| {
            let vals: Vec<f64> = per_seed.iter().map(|s| s[g]).collect();
            let (cider_mean, cider_sd) = mean_sd(&vals);
            CurveRow {
                lambda,
                cider_mean,
                cider_sd,
            }
        })
        .collect())
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("lambda,cider_mean,cider_sd\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.lambda, r.cider_mean, r.cider_sd));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub configuration: String,
    pub runs: usize,
    /// `(mean, sd)` ×100 per column; `None` where no run has the metric.
    pub cells: Vec<Option<(f64, f64)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub rows: Vec<TableRow>,
}

fn run_dirs(config_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(config_dir).map_err(|e| Error::io(config_dir, e))?;
    let mut dirs = Vec::new();
    for e in entries {
        let e = e.map_err(|err| Error::io(config_dir, err))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.starts_with("seed_") && e.path().is_dir() {
            dirs.push(e.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Aggregates `report_name` across the `seed_*` runs of each configuration
/// directory. Every run of a configuration must report the same metrics.
pub fn table(config_dirs: &[PathBuf], report_name: &str) -> Result<Table> {
    let mut rows = Vec::with_capacity(config_dirs.len());
    for dir in config_dirs {
        let reports = run_dirs(dir)?
            .into_iter()
            .map(|d| MetricReport::load(d.join(report_name)))
            .collect::<Result<Vec<_>>>()?;
        if reports.is_empty() {
            return Err(Error::Empty(format!("no completed runs under {}", dir.display())));
        }
        let present = |r: &MetricReport| r.corpus.columns().map(|c| c.is_some());
        let shape = present(&reports[0]);
        if reports.iter().any(|r| present(r) != shape) {
            return Err(Error::Contract(format!(
                "runs under {} report different metric sets",
                dir.display()
            )));
        }
        let cells = (0..TABLE_COLUMNS.len())
            .map(|k| {
                shape[k].then(|| {
                    let vals: Vec<f64> = reports.iter().map(|r| r.corpus.columns()[k].unwrap() * 100.0).collect();
                    mean_sd(&vals)
                })
            })
            .collect();
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned());
        rows.push(TableRow {
            configuration: name.unwrap_or_else(|| dir.display().to_string()),
            runs: reports.len(),
            cells,
        });
    }
    Ok(Table { rows })
}

impl Table {
    pub fn to_markdown(&self) -> String {
        let mut s = format!("| Configuration | Runs | {} |\n", TABLE_COLUMNS.join(" | "));
        s.push_str(&format!("|---|---:|{}\n", "---:|".repeat(TABLE_COLUMNS.len())));
        for r in &self.rows {
            let cells: Vec<String> = r
                .cells
                .iter()
                .map(|c| match c {
                    Some((m, sd)) => format!("{m:.2} ± {sd:.2}"),
                    None => "n/a".into(),
                })
                .collect();
            s.push_str(&format!("| {} | {} | {} |\n", r.configuration, r.runs, cells.join(" | ")));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut header = vec!["configuration".to_string(), "runs".to_string()];
        for c in TABLE_COLUMNS {
            header.push(c.to_string());
            header.push(format!("{c} sd"));
        }
        let mut s = header.join(",") + "\n";
        for r in &self.rows {
            let mut fields = vec![r.configuration.clone(), r.runs.to_string()];
            for c in &r.cells {
                match c {
                    Some((m, sd)) => fields.extend([format!("{m:.4}"), format!("{sd:.4}")]),
                    None => fields.extend([String::new(), String::new()]),
                }
            }
            s.push_str(&(fields.join(",") + "\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{evaluate_pairs, EvalPair, MetricOptions};
    use crate::textproc::tokenize;

    #[test]
    fn mean_sd_by_hand() {
        assert_eq!(mean_sd(&[3.0]), (3.0, 0.0));
        let (m, sd) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn curve_has_one_row_per_grid_point() {
        let rows = curve(&[0.0, 1.0], &[vec![1.0, 2.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].cider_mean, rows[1].cider_sd), (2.0, 0.0));
        assert_eq!(curve_csv(&rows).lines().count(), 3);
        assert!(curve(&[0.0], &[vec![1.0, 2.0]]).is_err());
        assert!(curve(&[0.0], &[]).is_err());
    }

    fn report(candidate: &str) -> MetricReport {
        let pair = |id: &str, c: &str, r: &str| EvalPair {
            clip_id: id.into(),
            candidate: tokenize(c),
            references: vec![tokenize(r)],
        };
        let pairs = vec![
            pair("a", candidate, "a dog barks then a cat meows"),
            pair("b", "a bell rings", "a bell rings twice"),
        ];
        evaluate_pairs(&pairs, &MetricOptions::default()).unwrap()
    }

    fn write_runs(root: &Path, name: &str, candidates: &[&str]) -> PathBuf {
        let dir = root.join(name);
        for (i, c) in candidates.iter().enumerate() {
            let run = dir.join(format!("seed_{i}"));
            std::fs::create_dir_all(&run).unwrap();
            report(c).save(run.join("eval_report.json")).unwrap();
        }
        dir
    }

    #[test]
    fn table_matches_hand_aggregation() {
        let tmp = tempfile::tempdir().unwrap();
        let one = write_runs(tmp.path(), "single", &["a dog barks"]);
        let two = write_runs(tmp.path(), "pair", &["a dog barks", "a cat meows"]);
        let t = table(&[one, two], "eval_report.json").unwrap();
        let single = &t.rows[0];
        assert_eq!(single.runs, 1);
        assert!(single.cells[..4].iter().all(|c| c.unwrap().1 == 0.0));
        assert!(single.cells[4].is_none() && single.cells[5].is_none());
        let r = [report("a dog barks"), report("a cat meows")];
        let meteors: Vec<f64> = r.iter().map(|r| r.corpus.meteor * 100.0).collect();
        let (m, sd) = t.rows[1].cells[1].unwrap();
        assert!((m - (meteors[0] + meteors[1]) / 2.0).abs() < 1e-12);
        assert!((sd - (meteors[0] - meteors[1]).abs() / 2f64.sqrt()).abs() < 1e-12);
        let md = t.to_markdown();
        assert!(md.lines().nth(2).unwrap().starts_with("| single | 1 |"));
        assert!(md.contains(" ± 0.00 |"));
        assert_eq!(t.to_csv().lines().count(), 3);
    }

    #[test]
    fn mixed_metric_sets_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_runs(tmp.path(), "cfg", &["a dog", "a cat"]);
        let mut r = report("a dog");
        r.corpus.spice = Some(0.1);
        r.corpus.spider = Some(0.2);
        r.save(dir.join("seed_1/eval_report.json")).unwrap();
        assert!(matches!(table(&[dir], "eval_report.json"), Err(Error::Contract(_))));
        assert!(table(&[tmp.path().join("missing")], "eval_report.json").is_err());
    }
}
