#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_biasaudit");

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small two-model cohort: `sex` (F/M) and `race` (A/B/C); `x` is shifted
/// for race C, `M2` additionally sees the protected attributes.
pub const SYNTH: &str = r#"
n = 2400
seed = 11

[[protected]]
name = "sex"
levels = [{ level = "F", probability = 0.5 }, { level = "M", probability = 0.5 }]

[[protected]]
name = "race"
levels = [
  { level = "A", probability = 0.5 },
  { level = "B", probability = 0.3 },
  { level = "C", probability = 0.2 },
]

[[covariates]]
name = "x"
generator = { kind = "gaussian", mean = 0.0, sd = 1.0 }
dependence = [{ attribute = "race", level = "C", coefficient = 0.8 }]

[[covariates]]
name = "w"
generator = { kind = "bernoulli", p = 0.3 }

[outcome]
intercept = -0.8
coefficients = [{ covariate = "x", coefficient = 1.2 }, { covariate = "w", coefficient = 0.5 }]

[score]
kind = "trained_logistic"
test_fraction = 0.5
models = [
  { name = "M1", features = ["x", "w"] },
  { name = "M2", features = ["x", "w", "sex", "race"] },
]
"#;

pub fn audit_config(extra_audit: &str, top: &str) -> String {
    format!(
        r#"cohort = "cohort.csv"
output_dir = "report"
models_with_protected = ["M2"]
{top}

[schema]
score_columns = [{{ model = "M1", column = "M1" }}, {{ model = "M2", column = "M2" }}]
protected_columns = [{{ name = "sex", kind = "categorical" }}, {{ name = "race", kind = "categorical" }}]
covariate_columns = [{{ name = "x", kind = "numeric" }}, {{ name = "w", kind = "binary" }}]

[audit]
n_bootstrap = 30
seed = 3
min_group_size = 30
min_matched_n = 20
propensity_covariates = ["x", "w"]
{extra_audit}
"#
    )
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    /// Synthesizes the cohort and writes `audit.toml` next to it.
    pub fn new(extra_audit: &str, top: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let synth = dir.path().join("synth.toml");
        fs::write(&synth, SYNTH).unwrap();
        let cohort = dir.path().join("cohort.csv");
        let out = run(&[
            "synth",
            synth.to_str().unwrap(),
            "--out",
            cohort.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let f = Self { dir };
        f.write_config(extra_audit, top);
        f
    }

    pub fn write_config(&self, extra_audit: &str, top: &str) {
        fs::write(self.config(), audit_config(extra_audit, top)).unwrap();
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.path("audit.toml")
    }

    pub fn config_str(&self) -> String {
        self.config().to_str().unwrap().to_owned()
    }
}

pub fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Header and rows of a report CSV, skipping the schema comment.
pub fn csv_cells(text: &str) -> Vec<Vec<String>> {
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(body.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_owned).collect())
        .collect()
}

/// Header and rows of the markdown table under `## title`.
pub fn markdown_cells(text: &str, title: &str) -> Vec<Vec<String>> {
    let heading = format!("## {title}");
    let mut lines = text.lines().skip_while(|l| *l != heading).skip(1);
    let mut out = Vec::new();
    for l in lines.by_ref() {
        if l.is_empty() && out.is_empty() {
            continue;
        }
        if !l.starts_with('|') {
            break;
        }
        if l.starts_with("|---") {
            continue;
        }
        let inner = &l[2..l.len() - 2];
        out.push(inner.split(" | ").map(|c| c.replace("\\|", "|")).collect());
    }
    out
}
