//! The masking-probability sweep: mask, train every regime, evaluate, and
//! summarise with degradation rates.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::{mask_entities, Corpus};
use crate::error::{Error, Result};
use crate::metrics::{DegradationReport, EvalReport};
use crate::train::{train_model, Regime, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub probs: Vec<f64>,
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
    /// Ratios swept for the sampled regime; empty means `train.lambda` only.
    pub lambdas: Vec<f64>,
    pub mask_seed: u64,
    /// Template for every cell; `regime`, `lambda` and `seed` are overridden.
    pub train: TrainConfig,
    /// Cells trained concurrently.
    pub jobs: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            probs: vec![0.0, 0.1, 0.2, 0.4, 0.5, 0.6],
            regimes: vec![Regime::Sampled, Regime::Full, Regime::Oracle],
            seeds: vec![1],
            lambdas: Vec::new(),
            mask_seed: 13,
            train: TrainConfig::default(),
            jobs: 1,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probs.is_empty() || self.regimes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("study needs probabilities, regimes and seeds".into()));
        }
        if let Some(p) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Argument(format!("masking probability {p} outside [0, 1]")));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be positive".into()));
        }
        self.train.validate()?;
        for &lambda in &self.lambdas {
            TrainConfig {
                lambda,
                ..self.train.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    fn sampled_lambdas(&self) -> Vec<f64> {
        if self.lambdas.is_empty() {
            vec![self.train.lambda]
        } else {
            self.lambdas.clone()
        }
    }

    /// The ratio whose sampled-regime cells feed the degradation summary.
    pub fn primary_lambda(&self) -> f64 {
        let l = self.sampled_lambdas();
        if l.contains(&self.train.lambda) {
            self.train.lambda
        } else {
            l[0]
        }
    }
}

/// One training run of the sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub p: f64,
    pub regime: Regime,
    /// Only for the sampled regime.
    pub lambda: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: std::result::Result<EvalReport, String>,
    pub best_epoch: usize,
    pub log: String,
    pub seconds: f64,
}

pub fn plan_cells(cfg: &StudyConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &p in &cfg.probs {
        for &regime in &cfg.regimes {
            let lambdas: Vec<Option<f64>> = if regime.uses_lambda() {
                cfg.sampled_lambdas().into_iter().map(Some).collect()
            } else {
                vec![None]
            };
            for lambda in lambdas {
                for &seed in &cfg.seeds {
                    cells.push(Cell {
                        p,
                        regime,
                        lambda,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

/// Depends on the value of `p`, so separate sweeps mask identically.
fn mask_seed(base: u64, p: f64, seed: u64) -> u64 {
    base ^ p.to_bits().rotate_left(29) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Runs every cell. Failures are recorded per cell and do not stop the sweep.
/// All regimes at one `(p, seed)` share the same masked corpus.
pub fn run_study(
    gold: &Corpus,
    dev: Option<&Corpus>,
    test: &Corpus,
    cfg: &StudyConfig,
) -> Result<StudyResult> {
    cfg.validate()?;
    if gold.hidden_count() > 0 {
        return Err(Error::Contract("study input must be fully annotated".into()));
    }
    let mut masked = Vec::new();
    for &p in &cfg.probs {
        for &seed in &cfg.seeds {
            masked.push(((p, seed), mask_entities(gold, p, mask_seed(cfg.mask_seed, p, seed))?));
        }
    }
    let cells = plan_cells(cfg);
    let run = |cell: &Cell| -> CellResult {
        let started = Instant::now();
        let corpus = &masked
            .iter()
            .find(|((p, s), _)| *p == cell.p && *s == cell.seed)
            .expect("masked corpus planned")
            .1;
        let tc = TrainConfig {
            regime: cell.regime,
            lambda: cell.lambda.unwrap_or(cfg.train.lambda),
            seed: cell.seed,
            ..cfg.train.clone()
        };
        let trained = train_model(corpus, dev, &tc);
        let (outcome, best_epoch, log) = match trained {
            Ok(t) => (
                t.model.evaluate(test).map_err(|e| e.to_string()),
                t.best_epoch,
                t.log_table(),
            ),
            Err(e) => (Err(e.to_string()), 0, String::new()),
        };
        CellResult {
            cell: *cell,
            outcome,
            best_epoch,
            log,
            seconds: started.elapsed().as_secs_f64(),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results = pool.install(|| cells.par_iter().map(run).collect());
    Ok(StudyResult {
        config: cfg.clone(),
        cells: results,
    })
}

#[derive(Clone, Debug)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub cells: Vec<CellResult>,
}

impl StudyResult {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    /// Mean held-out F1 over seeds; `None` if any matching cell failed or
    /// none exists.
    pub fn f1(&self, p: f64, regime: Regime, lambda: Option<f64>) -> Option<f64> {
        let lambda = if regime.uses_lambda() {
            Some(lambda.unwrap_or_else(|| self.config.primary_lambda()))
        } else {
            None
        };
        let scores: Option<Vec<f64>> = self
            .cells
            .iter()
            .filter(|c| c.cell.p == p && c.cell.regime == regime && c.cell.lambda == lambda)
            .map(|c| c.outcome.as_ref().ok().map(|r| r.f1))
            .collect();
        let scores = scores?;
        (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
    }

    /// Degradation rates of a plain regime against its adjusted counterpart
    /// over every swept `p`; `f_0^a` comes from the adjusted run at `p = 0`.
    pub fn degradation(&self, plain: Regime) -> Result<DegradationReport> {
        let adjusted = plain
            .adjusted()
            .ok_or_else(|| Error::Argument(format!("`{plain}` has no adjusted counterpart")))?;
        let f0a = self.f1(0.0, adjusted, None).ok_or_else(|| {
            Error::Undefined(format!("no successful `{adjusted}` run at p = 0"))
        })?;
        let mut points = Vec::new();
        for &p in &self.config.probs {
            if let (Some(fp), Some(fpa)) = (self.f1(p, plain, None), self.f1(p, adjusted, None)) {
                points.push((p, fp, fpa));
            }
        }
        Ok(DegradationReport::new(f0a, &points))
    }

    /// One row per cell.
    pub fn cells_table(&self) -> String {
        let mut out =
            String::from("# p\tregime\tlambda\tseed\tprecision\trecall\tf1\tbest_epoch\tseconds\tstatus\n");
        for c in &self.cells {
            let lambda = c.cell.lambda.map_or_else(|| "NA".to_string(), |l| l.to_string());
            let (prf, status) = match &c.outcome {
                Ok(r) => (
                    format!("{:.4}\t{:.4}\t{:.4}", r.precision, r.recall, r.f1),
                    "ok".to_string(),
                ),
                Err(e) => ("NA\tNA\tNA".to_string(), format!("error: {e}")),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{lambda}\t{}\t{prf}\t{}\t{:.1}\t{status}",
                c.cell.p, c.cell.regime, c.cell.seed, c.best_epoch, c.seconds
            );
        }
        out
    }

    /// Degradation rows for every plain regime whose counterpart was run.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "# plain regime f_p against adjusted f_p^a; sampled lambda = {}\n",
            self.config.primary_lambda()
        );
        for plain in [Regime::Sampled, Regime::Full, Regime::Tagging] {
            if !self.config.regimes.contains(&plain) {
                continue;
            }
            let _ = writeln!(out, "# regime {plain} against {}", plain.adjusted().unwrap());
            match self.degradation(plain) {
                Ok(d) => out.push_str(&d.to_table()),
                Err(e) => {
                    let _ = writeln!(out, "# unavailable: {e}");
                }
            }
        }
        out
    }

    /// Sampled-regime F1 for every `(p, lambda)`.
    pub fn lambda_table(&self) -> String {
        let mut out = String::from("# p\tlambda\tf1\n");
        for &p in &self.config.probs {
            for lambda in self.config.sampled_lambdas() {
                let f = self
                    .f1(p, Regime::Sampled, Some(lambda))
                    .map_or_else(|| "NA".to_string(), |f| format!("{f:.4}"));
                let _ = writeln!(out, "{p}\t{lambda}\t{f}");
            }
        }
        out
    }
}
