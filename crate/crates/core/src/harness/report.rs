use std::fmt::Write as _;
use std::path::Path;

use super::run::EvalReport;
use crate::{Error, Result};

/// One named `(x, y)` series of a figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Plot data for one figure.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub figure: String,
    pub series: Vec<Series>,
}

impl PlotData {
    /// `# figure <name>` followed by one `# series <name>` block of `x y`
    /// lines per series. Values use the shortest exact decimal form.
    pub fn to_text(&self) -> String {
        let mut s = format!("# figure {}\n", self.figure);
        for series in &self.series {
            let _ = writeln!(s, "# series {}", series.name);
            for (x, y) in &series.points {
                let _ = writeln!(s, "{x} {y}");
            }
        }
        s
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let figure = lines
            .next()
            .and_then(|l| l.strip_prefix("# figure "))
            .ok_or_else(|| Error::format(source, "missing `# figure` header"))?
            .to_string();
        let mut series: Vec<Series> = Vec::new();
        for line in lines {
            if let Some(name) = line.strip_prefix("# series ") {
                series.push(Series { name: name.to_string(), points: Vec::new() });
                continue;
            }
            let current = series.last_mut().ok_or_else(|| Error::format(source, "point before any series"))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |t: &str| t.parse::<f64>().map_err(|_| Error::format(source, format!("bad number `{t}`")));
            if parts.len() != 2 {
                return Err(Error::format(source, format!("expected `x y`, found `{line}`")));
            }
            current.points.push((parse(parts[0])?, parse(parts[1])?));
        }
        Ok(PlotData { figure, series })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        Ok(std::fs::write(dir.join(format!("{}.dat", self.figure)), self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, &path.display().to_string())
    }
}

/// A comparison table with the plot data of its figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub table: String,
    pub plot: PlotData,
}

impl Comparison {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("table.txt"), &self.table)?;
        self.plot.save(dir)
    }
}

pub const TABLE_COLUMNS: [&str; 8] = [
    "config",
    "params",
    "iterations",
    "frame_error",
    "heldout_frame_error",
    "heldout_loss",
    "phi_increase_traces",
    "config_hash",
];

/// Builds a comparison table with one row per report, sorted by config
/// name, and a figure of held-out loss against iteration with one series
/// per report. Reports over different corpora are refused.
pub fn emit_report(figure: &str, reports: &[EvalReport]) -> Result<Comparison> {
    let first = reports.first().ok_or_else(|| Error::Degenerate("no reports to compare".into()))?;
    if let Some(r) = reports.iter().find(|r| r.corpus_hash != first.corpus_hash) {
        return Err(Error::Incomparable(format!(
            "`{}` uses corpus {} but `{}` uses {}",
            first.config_name, first.corpus_hash, r.config_name, r.corpus_hash
        )));
    }
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.config_name.cmp(&b.config_name).then_with(|| a.config_hash.cmp(&b.config_hash)));

    let mut table = format!("# corpus {}\n{}\n", first.corpus_hash, TABLE_COLUMNS.join("\t"));
    for r in &sorted {
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.6}\t{}\t{}",
            r.config_name,
            r.num_params,
            r.iterations(),
            r.frame_error,
            r.heldout_frame_error,
            r.heldout_loss,
            r.nonmonotone_traces(),
            &r.config_hash[..16.min(r.config_hash.len())],
        );
    }
    let series = sorted
        .iter()
        .map(|r| Series {
            name: r.config_name.clone(),
            points: r.loss_series.iter().map(|x| (x.iteration as f64, x.heldout_loss)).collect(),
        })
        .collect();
    Ok(Comparison { table, plot: PlotData { figure: figure.to_string(), series } })
}
