use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrialResult;
use crate::data::sha256_hex;
use crate::error::{Error, Result};
use crate::objectives::write_loss_trace;

/// One trial as written to `rows.csv`. Accuracies are fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub k: usize,
    pub target_domain: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub wall_time_s: f64,
}

impl From<&TrialResult> for ResultRow {
    fn from(t: &TrialResult) -> Self {
        Self {
            method: t.label.clone(),
            k: t.branch_point,
            target_domain: t.target_domain,
            seed: t.seed,
            alpha: t.alpha,
            beta: t.beta,
            lr: t.learning_rate,
            val_acc: t.val_acc,
            test_acc: t.test_acc,
            wall_time_s: t.wall_time_s,
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: String,
    pub k: usize,
    pub target_domain: usize,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub k: usize,
    /// Mean over target domains of the per-domain means.
    pub average: f64,
    pub domains: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cells: Vec<Cell>,
    pub methods: Vec<MethodSummary>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

type Key = (String, usize, usize, u64);

fn key(r: &ResultRow) -> Key {
    (r.method.clone(), r.k, r.target_domain, r.seed)
}

impl ResultTable {
    pub fn from_trials<'a>(trials: impl IntoIterator<Item = &'a TrialResult>) -> Self {
        let mut t = Self {
            rows: trials.into_iter().map(ResultRow::from).collect(),
        };
        t.sort();
        t
    }

    pub fn sort(&mut self) {
        self.rows.sort_by_key(key);
    }

    /// Appends rows, replacing any with the same key.
    pub fn merge(&mut self, other: ResultTable) {
        let mut by_key: BTreeMap<Key, ResultRow> = self.rows.drain(..).map(|r| (key(&r), r)).collect();
        for r in other.rows {
            by_key.insert(key(&r), r);
        }
        self.rows = by_key.into_values().collect();
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Test accuracy of each seed, grouped by `(method, k, target_domain)`.
    pub fn groups(&self) -> BTreeMap<(String, usize, usize), Vec<f64>> {
        let mut groups: BTreeMap<_, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.method.clone(), r.k, r.target_domain))
                .or_default()
                .push(r.test_acc);
        }
        groups
    }

    pub fn summary(&self) -> Summary {
        let mut cells = Vec::new();
        let mut per_method: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
        for ((method, k, d), accs) in self.groups() {
            let (mean, std) = mean_std(&accs);
            per_method.entry((method.clone(), k)).or_default().push(mean);
            cells.push(Cell {
                method,
                k,
                target_domain: d,
                seeds: accs.len(),
                mean,
                std,
            });
        }
        let methods = per_method
            .into_iter()
            .map(|((method, k), means)| MethodSummary {
                method,
                k,
                average: mean_std(&means).0,
                domains: means.len(),
            })
            .collect();
        Summary { cells, methods }
    }

    /// Mean test accuracy over every row of a method and branch point.
    pub fn mean_test_acc(&self, method: &str, k: usize) -> Option<f64> {
        let accs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.k == k)
            .map(|r| r.test_acc)
            .collect();
        (!accs.is_empty()).then(|| mean_std(&accs).0)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["method", "k", "target_domain", "seed", "alpha", "beta", "lr", "val_acc", "test_acc", "wall_time_s"])?;
        }
        w.flush().map_err(|e| Error::io("<rows>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(Self { rows })
    }

    /// sha256 of the rows with the wall-clock column zeroed, so that
    /// identical runs hash identically.
    pub fn rows_digest(&self) -> String {
        let mut t = self.clone();
        t.rows.iter_mut().for_each(|r| r.wall_time_s = 0.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).expect("in-memory write");
        sha256_hex(&buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }

    /// Plain-text rendering of the summary with percentages.
    pub fn render(&self) -> String {
        let s = self.summary();
        let mut out = String::from("method\tk\tdomain\tseeds\ttest_acc\n");
        for c in &s.cells {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.1} ± {:.1}\n",
                c.method,
                c.k,
                c.target_domain,
                c.seeds,
                100.0 * c.mean,
                100.0 * c.std
            ));
        }
        for m in &s.methods {
            out.push_str(&format!("{}\t{}\tavg\t{}\t{:.1}\n", m.method, m.k, m.domains, 100.0 * m.average));
        }
        out
    }
}

/// Writes `rows.csv`, `summary.json` and `losses/<trial>.csv` under `dir`.
pub fn write_outputs(dir: &Path, table: &ResultTable, trials: &[TrialResult]) -> Result<()> {
    let losses = dir.join("losses");
    std::fs::create_dir_all(&losses).map_err(|e| Error::io(&losses, e))?;
    write_table(dir, table)?;
    for t in trials {
        let path = losses.join(format!("{}.csv", t.trial_id()));
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let points: Vec<_> = t.loss_trace.iter().map(|p| (p.step, p.loss)).collect();
        write_loss_trace(std::io::BufWriter::new(f), &points)?;
    }
    Ok(())
}

/// Writes `rows.csv` and `summary.json`.
pub fn write_table(dir: &Path, table: &ResultTable) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = dir.join("rows.csv");
    let f = std::fs::File::create(&rows).map_err(|e| Error::io(&rows, e))?;
    table.write_csv(f)?;
    let summary = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&table.summary())?;
    std::fs::write(&summary, text).map_err(|e| Error::io(&summary, e))
}
