//! Entity-level scores, degradation rates, Pearson correlation and the
//! non-selection bound for sampled negatives.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::EntitySpan;
use crate::error::{Error, Result};
use crate::spanscorer::enumerate_spans;
use crate::train::{sample_negatives, sample_size};

/// True/false positive and false negative counts under exact matching.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Micro-averaged entity scores with a per-label breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_label: BTreeMap<String, Counts>,
}

impl EvalReport {
    fn from_counts(counts: Counts, per_label: BTreeMap<String, Counts>) -> Self {
        EvalReport {
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            per_label,
        }
    }

    /// Tab-separated table: one row per label, then the overall row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# label\ttp\tfp\tfn\tprecision\trecall\tf1\n");
        let rows = self
            .per_label
            .iter()
            .map(|(l, c)| (l.as_str(), *c))
            .chain(std::iter::once(("overall", self.counts)));
        for (label, c) in rows {
            let _ = writeln!(
                out,
                "{label}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                c.tp,
                c.fp,
                c.fn_,
                c.precision(),
                c.recall(),
                c.f1()
            );
        }
        out
    }
}

/// Exact `(i, j, label)` matching, micro-averaged over sentences.
pub fn entity_f1(pred: &[Vec<EntitySpan>], gold: &[Vec<EntitySpan>]) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::Argument(format!(
            "{} predicted sentences but {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut total = Counts::default();
    let mut per_label: BTreeMap<String, Counts> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gold) {
        let ps: HashSet<&EntitySpan> = p.iter().collect();
        let gs: HashSet<&EntitySpan> = g.iter().collect();
        for e in &ps {
            let c = per_label.entry(e.label.clone()).or_default();
            if gs.contains(e) {
                c.tp += 1;
                total.tp += 1;
            } else {
                c.fp += 1;
                total.fp += 1;
            }
        }
        for e in gs.difference(&ps) {
            per_label.entry(e.label.clone()).or_default().fn_ += 1;
            total.fn_ += 1;
        }
    }
    Ok(EvalReport::from_counts(total, per_label))
}

/// Erosion and misguidance rates `(alpha_p, beta_p)`:
/// `alpha = (f0a - fpa) / f0a`, `beta = (fpa - fp) / fpa`.
// Negated comparisons so that NaN is rejected too.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn degradation_rates(f0a: f64, fpa: f64, fp: f64) -> Result<(f64, f64)> {
    if !(f0a > 0.0) || !(fpa > 0.0) {
        return Err(Error::Undefined(format!(
            "degradation rates need positive adjusted scores (f0a = {f0a}, fpa = {fpa})"
        )));
    }
    Ok(((f0a - fpa) / f0a, (fpa - fp) / fpa))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Argument(format!(
            "pearson needs two series of equal length >= 2 (got {} and {})",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson correlation of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One masking probability of a degradation study.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationRow {
    pub p: f64,
    /// F1 of the plain model.
    pub fp: f64,
    /// F1 of the adjusted model.
    pub fpa: f64,
    /// `None` where a denominator vanishes.
    pub rates: Option<(f64, f64)>,
}

/// Degradation rates over a series of masking probabilities, with the
/// correlation of each rate series against the plain F1 series. Every
/// evaluated `p` enters the correlations, `p = 0` included.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationReport {
    pub f0a: f64,
    pub rows: Vec<DegradationRow>,
    pub pcc_alpha: Option<f64>,
    pub pcc_beta: Option<f64>,
}

impl DegradationReport {
    /// `points` holds `(p, fp, fpa)` triples.
    pub fn new(f0a: f64, points: &[(f64, f64, f64)]) -> Self {
        let rows: Vec<DegradationRow> = points
            .iter()
            .map(|&(p, fp, fpa)| DegradationRow {
                p,
                fp,
                fpa,
                rates: degradation_rates(f0a, fpa, fp).ok(),
            })
            .collect();
        let defined: Vec<&DegradationRow> = rows.iter().filter(|r| r.rates.is_some()).collect();
        let f1: Vec<f64> = defined.iter().map(|r| r.fp).collect();
        let alpha: Vec<f64> = defined.iter().map(|r| r.rates.unwrap().0).collect();
        let beta: Vec<f64> = defined.iter().map(|r| r.rates.unwrap().1).collect();
        DegradationReport {
            f0a,
            pcc_alpha: pearson(&alpha, &f1).ok(),
            pcc_beta: pearson(&beta, &f1).ok(),
            rows,
        }
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        let mut out = String::from("# pcc over every evaluated p, p = 0 included\n");
        out.push_str("# p\tf_p\tf_p_adj\tf_0_adj\talpha\tbeta\tpcc_alpha_f1\tpcc_beta_f1\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}",
                r.p,
                r.fp,
                r.fpa,
                self.f0a,
                fmt(r.rates.map(|x| x.0)),
                fmt(r.rates.map(|x| x.1)),
                fmt(self.pcc_alpha),
                fmt(self.pcc_beta)
            );
        }
        out
    }
}

/// `1 - 2/(n-3)`, defined for `n >= 4`.
pub fn nonselection_bound(n: usize) -> Option<f64> {
    (n >= 4).then(|| 1.0 - 2.0 / (n as f64 - 3.0))
}

fn bound_setup(n: usize, m: usize, lambda: f64) -> Result<(usize, usize)> {
    if n == 0 {
        return Err(Error::Argument("sentence length must be positive".into()));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Argument(format!("lambda {lambda} outside (0, 1)")));
    }
    let total = n * (n + 1) / 2;
    if m > total {
        return Err(Error::Argument(format!("m = {m} exceeds the {total} spans")));
    }
    let big_n = total - m;
    let k = sample_size(n, lambda, usize::MAX);
    if k > big_n {
        return Err(Error::Argument(format!(
            "sample size {k} exceeds the {big_n} negative candidates"
        )));
    }
    Ok((k, big_n))
}

/// Probability that one fixed candidate escapes a uniform sample of
/// `k = ceil(lambda n)` out of `N = n(n+1)/2 - m` candidates: `1 - k/N`.
pub fn bound_exact(n: usize, m: usize, lambda: f64) -> Result<f64> {
    let (k, big_n) = bound_setup(n, m, lambda)?;
    Ok(1.0 - k as f64 / big_n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub k: usize,
    pub candidates: usize,
    pub exact: f64,
    pub bound: Option<f64>,
    pub trials: u64,
    pub empirical: f64,
    pub stderr: f64,
}

impl BoundReport {
    pub const HEADER: &'static str = "# n\tm\tlambda\tk\tN\texact\tbound\tempirical\tstderr";

    pub fn summary_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{:.5}\t{}\t{:.5}\t{:.5}",
            self.n,
            self.m,
            self.lambda,
            self.k,
            self.candidates,
            self.exact,
            self.bound.map_or_else(|| "NA".to_string(), |b| format!("{b:.5}")),
            self.empirical,
            self.stderr
        )
    }

    /// Whether the estimate sits below the bound by more than three
    /// standard errors.
    pub fn violates_bound(&self) -> bool {
        self.bound
            .is_some_and(|b| self.empirical < b - 3.0 * self.stderr)
    }
}

const SHARDS: u64 = 16;

/// Runs `trials` draws split over fixed shards, each with its own stream, and
/// counts the draws in which `hit` is false.
fn count_misses(
    candidates: &[(usize, usize)],
    n: usize,
    lambda: f64,
    trials: u64,
    seed: u64,
    hit: impl Fn(&[(usize, usize)]) -> bool + Sync,
) -> u64 {
    (0..SHARDS)
        .into_par_iter()
        .map(|shard| {
            let share = trials / SHARDS + u64::from(shard < trials % SHARDS);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            (0..share)
                .filter(|_| !hit(&sample_negatives(candidates, n, lambda, &mut rng)))
                .count() as u64
        })
        .sum()
}

/// The first `m` enumerated spans act as gold; the rest are candidates.
fn bound_candidates(n: usize, m: usize) -> Vec<(usize, usize)> {
    enumerate_spans(n, None).into_iter().skip(m).collect()
}

/// Monte-Carlo frequency with which one designated unlabeled span (the last
/// candidate) is left out of the negative sample.
pub fn bound_montecarlo(n: usize, m: usize, lambda: f64, trials: u64, seed: u64) -> Result<BoundReport> {
    let (k, big_n) = bound_setup(n, m, lambda)?;
    if trials == 0 {
        return Err(Error::Argument("trials must be positive".into()));
    }
    if big_n == 0 {
        return Err(Error::Argument("no negative candidates to draw from".into()));
    }
    let cands = bound_candidates(n, m);
    let target = *cands.last().expect("non-empty");
    let misses = count_misses(&cands, n, lambda, trials, seed, |s| s.contains(&target));
    let p = misses as f64 / trials as f64;
    Ok(BoundReport {
        n,
        m,
        lambda,
        k,
        candidates: big_n,
        exact: 1.0 - k as f64 / big_n as f64,
        bound: nonselection_bound(n),
        trials,
        empirical: p,
        stderr: (p * (1.0 - p) / trials as f64).sqrt(),
    })
}

/// Frequency with which none of `hidden` designated unlabeled spans is drawn.
/// This goes beyond the single-entity case the bound covers and is reported
/// as extra data only.
pub fn multi_hidden_escape(
    n: usize,
    m: usize,
    hidden: usize,
    lambda: f64,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    let (_, big_n) = bound_setup(n, m, lambda)?;
    if hidden == 0 || hidden > big_n || trials == 0 {
        return Err(Error::Argument(format!(
            "need 1..={big_n} hidden spans and positive trials"
        )));
    }
    let cands = bound_candidates(n, m);
    let targets: HashSet<(usize, usize)> = cands[big_n - hidden..].iter().copied().collect();
    let misses = count_misses(&cands, n, lambda, trials, seed, |s| {
        s.iter().any(|x| targets.contains(x))
    });
    Ok(misses as f64 / trials as f64)
}
