//! Report records: metrics with both sides of their inequality, plot series, provenance.

use std::io::Write;

use crate::error::Result;
use crate::model::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
}

impl Relation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
        }
    }

    pub fn holds(&self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Le => lhs <= rhs,
            Relation::Ge => lhs >= rhs,
        }
    }
}

/// One reported quantity. If `verdict` is set, it is `lhs relation rhs`, where `rhs`
/// already contains `tolerance` (statistical plus discretization parts).
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lhs: f64,
    pub relation: Relation,
    pub rhs: f64,
    pub tolerance: f64,
    pub verdict: Option<Verdict>,
    pub note: String,
}

impl Metric {
    /// A checked inequality `lhs relation rhs`.
    pub fn check(name: impl Into<String>, estimate: f64, std_error: f64, lhs: f64, relation: Relation, rhs: f64, tolerance: f64) -> Self {
        let ok = relation.holds(lhs, rhs);
        Self {
            name: name.into(),
            estimate,
            std_error,
            lhs,
            relation,
            rhs,
            tolerance,
            verdict: Some(Verdict::from_bool(ok)),
            note: String::new(),
        }
    }

    /// A reported value without a verdict.
    pub fn info(name: impl Into<String>, estimate: f64, std_error: f64) -> Self {
        Self {
            name: name.into(),
            estimate,
            std_error,
            lhs: estimate,
            relation: Relation::Le,
            rhs: f64::NAN,
            tolerance: 0.0,
            verdict: None,
            note: String::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict != Some(Verdict::Fail)
    }
}

/// x-y points of one curve in one figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub figure: String,
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub stream: String,
    pub paths: usize,
    pub dim: usize,
    pub cells: usize,
    pub dt: f64,
    pub steps: usize,
    pub horizon: f64,
    pub levels: Vec<u32>,
}

impl Provenance {
    pub fn to_line(&self) -> String {
        let levels: Vec<String> = self.levels.iter().map(|n| n.to_string()).collect();
        format!(
            "seed={} stream={} paths={} dim={} cells={} dt={:e} steps={} horizon={} levels={}",
            self.seed,
            self.stream,
            self.paths,
            self.dim,
            self.cells,
            self.dt,
            self.steps,
            self.horizon,
            levels.join(";")
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub suite: String,
    pub metrics: Vec<Metric>,
    pub series: Vec<Series>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn new(suite: impl Into<String>, provenance: Provenance) -> Self {
        Self { suite: suite.into(), metrics: Vec::new(), series: Vec::new(), provenance }
    }

    pub fn push(&mut self, m: Metric) {
        self.metrics.push(m);
    }

    pub fn passed(&self) -> bool {
        self.metrics.iter().all(Metric::passed)
    }

    pub fn failures(&self) -> Vec<&Metric> {
        self.metrics.iter().filter(|m| !m.passed()).collect()
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn summary(&self) -> String {
        let checked = self.metrics.iter().filter(|m| m.verdict.is_some()).count();
        let failed = self.failures().len();
        format!(
            "{}: {} ({} checks, {} failed)",
            self.suite,
            if failed == 0 { "PASS" } else { "FAIL" },
            checked,
            failed
        )
    }

    fn header<W: Write>(&self, w: &mut W, config_hash: &str) -> Result<()> {
        writeln!(w, "# suite={}", self.suite)?;
        writeln!(w, "# config_hash={config_hash}")?;
        writeln!(w, "# {}", self.provenance.to_line())?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W, config_hash: &str) -> Result<()> {
        self.header(&mut w, config_hash)?;
        writeln!(w, "metric,estimate,std_error,lhs,relation,rhs,tolerance,verdict,note")?;
        for m in &self.metrics {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{},{:e},{:e},{},{}",
                m.name,
                m.estimate,
                m.std_error,
                m.lhs,
                m.relation.as_str(),
                m.rhs,
                m.tolerance,
                m.verdict.map_or("info", |v| v.as_str()),
                m.note.replace(',', ";")
            )?;
        }
        Ok(())
    }

    pub fn write_plot_data<W: Write>(&self, mut w: W, config_hash: &str) -> Result<()> {
        self.header(&mut w, config_hash)?;
        writeln!(w, "figure,series,x,y")?;
        for s in &self.series {
            for (x, y) in &s.points {
                writeln!(w, "{},{},{:e},{:e}", s.figure, s.name, x, y)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance { seed: 7, stream: "s".into(), paths: 2, dim: 1, cells: 8, dt: 0.1, steps: 10, horizon: 1.0, levels: vec![8, 16] }
    }

    #[test]
    fn verdicts_and_csv() {
        let mut r = ExperimentReport::new("demo", prov());
        r.push(Metric::check("a", 1.0, 0.1, 1.0, Relation::Le, 2.0, 0.3));
        r.push(Metric::info("b", 3.0, 0.0).with_note("no bound, reported"));
        assert!(r.passed());
        r.push(Metric::check("c", 1.0, 0.0, 1.0, Relation::Ge, 2.0, 0.0));
        assert!(!r.passed());
        assert_eq!(r.failures().len(), 1);
        let mut buf = Vec::new();
        r.write_csv(&mut buf, "abc").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# config_hash=abc"));
        assert!(text.contains("seed=7"));
        assert!(text.contains("c,1e0,0e0,1e0,>=,2e0,0e0,fail,"));
        assert!(text.contains("no bound; reported"));
        assert!(r.summary().contains("FAIL"));
    }
}
