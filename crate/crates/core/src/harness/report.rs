//! Rendering a [`TestReport`] to CSV tables and a plain-text summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::analysis::{FamilyReport, TestReport};
use crate::error::{bail, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" => Ok(ReportFormat::Text),
            other => bail!(Usage, "unknown report format {other:?} (expected csv or text)"),
        }
    }
}

/// Three decimals, with anything below 0.0005 shown as `<0.001`.
pub fn format_p(p: f64) -> String {
    if p < 0.0005 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl Table {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        writer
            .write_record(header)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(Table { path, writer })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .map_err(|e| Error::Format(format!("{}: {e}", self.path.display())))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn pvalue_table(dir: &Path, fam: &FamilyReport) -> Result<PathBuf> {
    let mut header = vec!["comparison"];
    header.extend(fam.columns.iter().map(String::as_str));
    let mut t = Table::create(dir, &format!("pvalues_{}.csv", fam.name), &header)?;
    for row in &fam.rows {
        let mut fields = vec![row.clone()];
        for col in &fam.columns {
            fields.push(fam.lookup(row, col).map_or_else(String::new, |c| c.result.p_adjusted.to_string()));
        }
        t.row(fields)?;
    }
    t.finish()
}

/// Writes every CSV table into `dir` and returns the paths written.
pub fn write_csv(report: &TestReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for fam in &report.families {
        written.push(pvalue_table(dir, fam)?);
    }

    let mut tests = Table::create(
        dir,
        "tests.csv",
        &[
            "family", "column", "comparison", "test", "alternative", "n_left", "n_right", "mean_left", "mean_right",
            "statistic", "df", "p_raw", "p_adjusted", "degenerate",
        ],
    )?;
    for fam in &report.families {
        for c in &fam.comparisons {
            tests.row([
                fam.name.clone(),
                c.column.clone(),
                c.row.clone(),
                format!("{:?}", fam.test).to_lowercase(),
                format!("{:?}", fam.alternative).to_lowercase(),
                c.n_left.to_string(),
                c.n_right.to_string(),
                c.mean_left.to_string(),
                c.mean_right.to_string(),
                c.result.statistic.to_string(),
                c.result.df.to_string(),
                c.result.p_raw.to_string(),
                c.result.p_adjusted.to_string(),
                c.result.degenerate.map_or_else(String::new, |d| format!("{d:?}")),
            ])?;
        }
    }
    written.push(tests.finish()?);

    let mut ci = Table::create(
        dir,
        "ci_alpha.csv",
        &[
            "dataset", "arch", "method", "ratio", "n", "mean_alpha", "ci_lower", "ci_upper", "level", "class",
            "pooled_alpha", "r_squared", "mean_accuracy",
        ],
    )?;
    for c in &report.cells {
        ci.row([
            c.dataset.clone(),
            c.arch.clone(),
            c.method.clone(),
            c.ratio.to_string(),
            c.n.to_string(),
            c.mean_alpha.to_string(),
            opt(c.ci.map(|x| x.lower)),
            opt(c.ci.map(|x| x.upper)),
            report.level.to_string(),
            c.class.clone().unwrap_or_default(),
            opt(c.pooled.map(|p| p.alpha)),
            opt(c.pooled.map(|p| p.r_squared)),
            opt(c.pooled.map(|p| p.mean_accuracy)),
        ])?;
    }
    written.push(ci.finish()?);

    let mut tradeoff = Table::create(
        dir,
        "tradeoff.csv",
        &["dataset", "arch", "method", "ratio", "n", "mean_acc_before", "mean_acc_after", "se_acc_after", "mean_alpha", "se_alpha"],
    )?;
    for c in &report.cells {
        tradeoff.row([
            c.dataset.clone(),
            c.arch.clone(),
            c.method.clone(),
            c.ratio.to_string(),
            c.n.to_string(),
            c.mean_acc_before.to_string(),
            c.mean_acc_after.to_string(),
            opt(c.se_acc_after),
            c.mean_alpha.to_string(),
            opt(c.se_alpha),
        ])?;
    }
    written.push(tradeoff.finish()?);

    let mut box_data = Table::create(
        dir,
        "box_alpha.csv",
        &["dataset", "arch", "method", "ratio", "seed", "alpha", "acc_before", "acc_after"],
    )?;
    for m in &report.models {
        box_data.row([
            m.dataset.clone(),
            m.arch.clone(),
            m.method.clone(),
            m.ratio.to_string(),
            m.seed.to_string(),
            m.alpha.map_or_else(|| "NA".to_string(), |a| a.to_string()),
            m.acc_before.to_string(),
            m.acc_after.to_string(),
        ])?;
    }
    written.push(box_data.finish()?);

    let mut scatter = Table::create(
        dir,
        "scatter_balance.csv",
        &["dataset", "arch", "method", "ratio", "seed", "class", "normalized_before", "normalized_after"],
    )?;
    for p in &report.classes {
        scatter.row([
            p.dataset.clone(),
            p.arch.clone(),
            p.method.clone(),
            p.ratio.to_string(),
            p.seed.to_string(),
            p.class.to_string(),
            p.normalized_before.to_string(),
            p.normalized_after.to_string(),
        ])?;
    }
    written.push(scatter.finish()?);

    let mut gaps = Table::create(dir, "gaps.csv", &["family", "item", "reason"])?;
    for g in &report.gaps {
        gaps.row([g.family.clone().unwrap_or_default(), g.item.clone(), g.reason.clone()])?;
    }
    written.push(gaps.finish()?);
    Ok(written)
}

fn pad_table(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|i| rows.iter().filter_map(|r| r.get(i)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(s, &w)| format!("{s:<w$}")).collect();
        let _ = writeln!(out, "  {}", line.join("  ").trim_end());
    }
}

/// Plain-text rendering of every table.
pub fn render_text(report: &TestReport) -> String {
    let mut out = String::new();
    for fam in &report.families {
        let _ = writeln!(
            out,
            "{}: {:?} {:?} t-tests on alpha across {}, Bonferroni per {}",
            fam.name,
            fam.test,
            fam.alternative,
            fam.compare,
            match fam.correction {
                super::analysis::Correction::Column => "column",
                super::analysis::Correction::Table => "table",
            }
        );
        let mut rows = vec![std::iter::once(String::new()).chain(fam.columns.iter().cloned()).collect::<Vec<_>>()];
        for row in &fam.rows {
            let mut r = vec![row.clone()];
            for col in &fam.columns {
                r.push(fam.lookup(row, col).map_or_else(|| "-".to_string(), |c| format_p(c.result.p_adjusted)));
            }
            rows.push(r);
        }
        pad_table(&mut out, &rows);
        out.push('\n');
    }

    let _ = writeln!(out, "alpha by cell ({:.0}% CI, classified against {})", report.level * 100.0, report.reference);
    let mut rows = vec![["group", "ratio", "n", "mean", "ci", "", "pooled", "r2", "acc"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for c in &report.cells {
        rows.push(vec![
            c.group(),
            c.ratio.to_string(),
            c.n.to_string(),
            format!("{:.3}", c.mean_alpha),
            c.ci.map_or_else(|| "-".to_string(), |ci| format!("[{:.3}, {:.3}]", ci.lower, ci.upper)),
            c.class.clone().unwrap_or_else(|| "-".to_string()),
            c.pooled.map_or_else(|| "-".to_string(), |p| format!("{:.3}", p.alpha)),
            c.pooled.map_or_else(|| "-".to_string(), |p| format!("{:.3}", p.r_squared)),
            format!("{:.4}", c.mean_acc_after),
        ]);
    }
    pad_table(&mut out, &rows);

    if !report.gaps.is_empty() {
        let _ = writeln!(out, "\ngaps ({}):", report.gaps.len());
        for g in &report.gaps {
            match &g.family {
                Some(f) => {
                    let _ = writeln!(out, "  {f}: {}: {}", g.item, g.reason);
                }
                None => {
                    let _ = writeln!(out, "  {}: {}", g.item, g.reason);
                }
            }
        }
    }
    out
}

pub fn load_report(path: &Path) -> Result<TestReport> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_report(report: &TestReport, path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::analysis::{analyze, ComparisonPlan};

    #[test]
    fn p_value_rendering() {
        assert_eq!(format_p(0.0003), "<0.001");
        assert_eq!(format_p(0.036), "0.036");
        assert_eq!(format_p(1.0), "1.000");
        assert_eq!(format_p(0.0), "<0.001");
    }

    #[test]
    fn empty_report_gives_header_only_tables() {
        let plan = ComparisonPlan::parse(
            "[[family]]\nname = \"r\"\ncompare = \"ratio\"\npairs = \"consecutive\"\ntest = \"paired\"\nalternative = \"less\"\n",
        )
        .unwrap();
        let report = analyze(&[], &plan).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_csv(&report, dir.path()).unwrap();
        for f in &files {
            let text = std::fs::read_to_string(f).unwrap();
            assert_eq!(text.lines().count(), 1, "{}", f.display());
        }
        assert!(files.iter().any(|f| f.ends_with("pvalues_r.csv")));
        assert!(render_text(&report).contains("r: Paired Less"));
    }
}
