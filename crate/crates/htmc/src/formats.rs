//! On-disk formats. JSON for chains, mixtures, estimates, configs and reports;
//! JSONL for trails (one object per line); header-less CSV for bare matrices.
//!
//! Every writer is deterministic and every reader accepts exactly what the
//! writer produces, so write, read, write gives identical bytes.

use std::fs;
use std::path::Path;

use htmc_core::chains::{Chain, MixtureModel, Mode};
use htmc_core::hitting::{HittingTimeEstimate, Mask};
use htmc_core::learn::{Descent, Init, LearnConfig, LearnReport};
use htmc_core::metrics::EvalReport;
use htmc_core::mixture::{EmRound, MixtureConfig, MixtureFit};
use htmc_core::simulate::Trail;
use htmc_core::nalgebra::{DMatrix, Scalar};
use htmc_core::Matrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Failure, Result};

mod mode_str {
    use htmc_core::chains::Mode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mode: &Mode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(mode.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mode, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows<T: Scalar>(what: &str, rows: &[Vec<T>], ncols: Option<usize>) -> Result<DMatrix<T>> {
    let nrows = rows.len();
    let ncols = ncols.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Failure::param(format!("{what}: row {i} has {} entries, expected {ncols}", r.len())));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j].clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDoc {
    #[serde(with = "mode_str")]
    pub mode: Mode,
    pub n: usize,
    pub matrix: Vec<Vec<f64>>,
}

impl ChainDoc {
    pub fn from_chain(c: &Chain) -> Self {
        Self { mode: c.mode(), n: c.n(), matrix: rows(c.matrix()) }
    }

    pub fn to_chain(&self) -> Result<Chain> {
        if self.matrix.len() != self.n {
            return Err(Failure::param(format!("chain declares n = {} but has {} rows", self.n, self.matrix.len())));
        }
        Ok(Chain::new(self.mode, from_rows("chain matrix", &self.matrix, Some(self.n))?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureDoc {
    pub chains: Vec<ChainDoc>,
    pub alpha: Vec<Vec<f64>>,
}

impl MixtureDoc {
    pub fn from_mixture(m: &MixtureModel) -> Self {
        Self { chains: m.chains().iter().map(ChainDoc::from_chain).collect(), alpha: rows(m.alpha()) }
    }

    pub fn to_mixture(&self) -> Result<MixtureModel> {
        let chains = self.chains.iter().map(ChainDoc::to_chain).collect::<Result<Vec<_>>>()?;
        let n = chains.first().map_or(0, Chain::n);
        Ok(MixtureModel::new(chains, from_rows("alpha", &self.alpha, Some(n))?)?)
    }
}

/// Either a single chain or a mixture, told apart by their keys.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Chain(Chain),
    Mixture(MixtureModel),
}

impl Model {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Failure::param(format!("invalid JSON: {e}")))?;
        if value.get("chains").is_some() {
            let doc: MixtureDoc = serde_json::from_value(value).map_err(|e| Failure::param(format!("invalid mixture: {e}")))?;
            Ok(Model::Mixture(doc.to_mixture()?))
        } else {
            let doc: ChainDoc = serde_json::from_value(value).map_err(|e| Failure::param(format!("invalid chain: {e}")))?;
            Ok(Model::Chain(doc.to_chain()?))
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            Model::Chain(c) => to_json(&ChainDoc::from_chain(c)),
            Model::Mixture(m) => to_json(&MixtureDoc::from_mixture(m)),
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Model::Chain(c) => c.mode(),
            Model::Mixture(m) => m.mode(),
        }
    }

    /// A single chain becomes a one-component mixture with uniform starts.
    pub fn into_mixture(self) -> Result<MixtureModel> {
        match self {
            Model::Chain(c) => Ok(MixtureModel::uniform(vec![c])?),
            Model::Mixture(m) => Ok(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrailDoc {
    pub states: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holds: Option<Vec<f64>>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

fn unit_weight() -> f64 {
    1.0
}

impl TrailDoc {
    pub fn from_trail(t: &Trail) -> Self {
        Self { states: t.states().to_vec(), holds: t.holds().map(<[f64]>::to_vec), weight: t.weight(), label: t.label() }
    }

    pub fn to_trail(&self) -> Result<Trail> {
        let mode = if self.holds.is_some() { Mode::Continuous } else { Mode::Discrete };
        Ok(Trail::new(mode, self.states.clone(), self.holds.clone(), self.weight, self.label)?)
    }
}

pub fn trails_to_jsonl(trails: &[Trail]) -> String {
    let mut out = String::new();
    for t in trails {
        out.push_str(&serde_json::to_string(&TrailDoc::from_trail(t)).expect("trail serializes"));
        out.push('\n');
    }
    out
}

/// Blank lines are skipped; errors name the offending line.
pub fn trails_from_jsonl(text: &str) -> Result<Vec<Trail>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let doc: TrailDoc =
                serde_json::from_str(l).map_err(|e| Failure::param(format!("trail on line {}: {e}", i + 1)))?;
            doc.to_trail().map_err(|e| Failure::param(format!("trail on line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateDoc {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub weight_sum: Vec<Vec<f64>>,
}

impl EstimateDoc {
    pub fn from_estimate(e: &HittingTimeEstimate) -> Self {
        let mask = e.mask().row_iter().map(|r| r.iter().copied().collect()).collect();
        Self { h: rows(e.h()), mask, weight_sum: rows(e.weight_sum()) }
    }

    pub fn to_estimate(&self) -> Result<HittingTimeEstimate> {
        let n = self.h.len();
        let h = from_rows("H", &self.h, Some(n))?;
        let mask: Mask = from_rows("mask", &self.mask, Some(n))?;
        let w = from_rows("weight_sum", &self.weight_sum, Some(n))?;
        if mask.nrows() != n || w.nrows() != n {
            return Err(Failure::param("H, mask and weight_sum must have the same size"));
        }
        Ok(HittingTimeEstimate::new(h, mask, w)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescentDoc {
    Chain,
    Pseudoinverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitDoc {
    Random,
    Wsbt,
    Given(ChainDoc),
}

/// JSON mirror of [`LearnConfig`]; missing fields take the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfigDoc {
    #[serde(with = "mode_str")]
    pub mode: Mode,
    pub descent: DescentDoc,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub project_every: usize,
    pub init: InitDoc,
    pub seed: u64,
    pub loss_tol: f64,
}

impl Default for LearnConfigDoc {
    fn default() -> Self {
        Self::from_config(&LearnConfig::default())
    }
}

impl LearnConfigDoc {
    pub fn from_config(c: &LearnConfig) -> Self {
        Self {
            mode: c.mode,
            descent: match c.descent {
                Descent::Chain => DescentDoc::Chain,
                Descent::Pseudoinverse => DescentDoc::Pseudoinverse,
            },
            iterations: c.iterations,
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            adam_eps: c.adam_eps,
            project_every: c.project_every,
            init: match &c.init {
                Init::Random => InitDoc::Random,
                Init::Wsbt => InitDoc::Wsbt,
                Init::Given(ch) => InitDoc::Given(ChainDoc::from_chain(ch)),
            },
            seed: c.seed,
            loss_tol: c.loss_tol,
        }
    }

    pub fn to_config(&self) -> Result<LearnConfig> {
        let cfg = LearnConfig {
            mode: self.mode,
            descent: match self.descent {
                DescentDoc::Chain => Descent::Chain,
                DescentDoc::Pseudoinverse => Descent::Pseudoinverse,
            },
            iterations: self.iterations,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            project_every: self.project_every,
            init: match &self.init {
                InitDoc::Random => Init::Random,
                InitDoc::Wsbt => Init::Wsbt,
                InitDoc::Given(doc) => Init::Given(doc.to_chain()?),
            },
            seed: self.seed,
            loss_tol: self.loss_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnReportDoc {
    pub chain: ChainDoc,
    pub loss_curve: Vec<f64>,
    pub iterations_run: usize,
    /// `null` when no feasible iterate had a finite loss.
    pub best_loss: Option<f64>,
    pub warnings: Vec<String>,
}

impl LearnReportDoc {
    pub fn from_report(r: &LearnReport) -> Self {
        Self {
            chain: ChainDoc::from_chain(&r.chain),
            loss_curve: r.loss_curve.clone(),
            iterations_run: r.iterations_run,
            best_loss: r.best_loss.is_finite().then_some(r.best_loss),
            warnings: r.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureConfigDoc {
    pub em_iterations: usize,
    pub inner: LearnConfigDoc,
    pub convergence_tol: f64,
    pub seed: u64,
    pub use_alpha: bool,
}

impl Default for MixtureConfigDoc {
    fn default() -> Self {
        Self::from_config(&MixtureConfig::default())
    }
}

impl MixtureConfigDoc {
    pub fn from_config(c: &MixtureConfig) -> Self {
        Self {
            em_iterations: c.em_iterations,
            inner: LearnConfigDoc::from_config(&c.inner),
            convergence_tol: c.convergence_tol,
            seed: c.seed,
            use_alpha: c.use_alpha,
        }
    }

    pub fn to_config(&self) -> Result<MixtureConfig> {
        let cfg = MixtureConfig {
            em_iterations: self.em_iterations,
            inner: self.inner.to_config()?,
            convergence_tol: self.convergence_tol,
            seed: self.seed,
            use_alpha: self.use_alpha,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundDoc {
    pub round: usize,
    pub entropy: f64,
    pub losses: Vec<Option<f64>>,
    pub change: f64,
    pub recovery_error: Option<f64>,
}

impl RoundDoc {
    pub fn from_round(r: &EmRound) -> Self {
        Self {
            round: r.round,
            entropy: r.entropy,
            losses: r.losses.iter().map(|l| l.filter(|x| x.is_finite())).collect(),
            change: r.change,
            recovery_error: r.recovery_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryDoc {
    pub initial: MixtureDoc,
    pub rounds: Vec<RoundDoc>,
    pub warnings: Vec<String>,
}

impl HistoryDoc {
    pub fn from_fit(fit: &MixtureFit) -> Self {
        Self {
            initial: MixtureDoc::from_mixture(&fit.initial),
            rounds: fit.history.iter().map(RoundDoc::from_round).collect(),
            warnings: fit.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReportDoc {
    pub recovery_error: f64,
    pub per_chain_errors: Vec<f64>,
    pub assignment: Vec<usize>,
    pub frobenius_ht_error: Option<f64>,
}

impl EvalReportDoc {
    pub fn from_report(r: &EvalReport) -> Self {
        Self {
            recovery_error: r.recovery_error,
            per_chain_errors: r.per_chain_errors.clone(),
            assignment: r.assignment.clone(),
            frobenius_ht_error: r.frobenius_ht_error,
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize");
    s.push('\n');
    s
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Failure::param(format!("invalid JSON: {e}")))
}

/// Header-less CSV, one matrix row per line.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in m.row_iter() {
        w.write_record(r.iter().map(|x| x.to_string())).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut data: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Failure::param(format!("CSV row {}: {e}", i + 1)))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Failure::param(format!("CSV row {}: '{f}': {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        data.push(row);
    }
    from_rows("CSV matrix", &data, None)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json(&read_text(path)?).map_err(|e| Failure::param(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}

pub fn read_model(path: &Path) -> Result<Model> {
    Model::from_json(&read_text(path)?).map_err(|e| match e {
        Failure::Parameter(m) => Failure::Parameter(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_trails(path: &Path) -> Result<Vec<Trail>> {
    trails_from_jsonl(&read_text(path)?).map_err(|e| match e {
        Failure::Parameter(m) => Failure::Parameter(format!("{}: {m}", path.display())),
        other => other,
    })
}
