//! Helpers shared by the integration tests: an independent port of the
//! conlleval chunk scorer and a central finite-difference gradient checker.

#![allow(dead_code)]

pub mod checks;

use negspan_core::numcore::{ParamStore, Tape, Var};
use negspan_core::Result;

/// Chunk counts as produced by the conlleval script.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChunkCounts {
    pub correct: usize,
    pub found_guessed: usize,
    pub found_correct: usize,
}

impl ChunkCounts {
    pub fn precision(&self) -> f64 {
        if self.found_guessed == 0 {
            0.0
        } else {
            self.correct as f64 / self.found_guessed as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.found_correct == 0 {
            0.0
        } else {
            self.correct as f64 / self.found_correct as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn split_tag(tag: &str) -> (&str, &str) {
    match tag.split_once('-') {
        Some((t, ty)) => (t, ty),
        None => (tag, ""),
    }
}

fn end_of_chunk(prev_tag: &str, tag: &str, prev_type: &str, ty: &str) -> bool {
    let mut end = matches!(
        (prev_tag, tag),
        ("B", "B") | ("B", "O") | ("I", "B") | ("I", "O")
    );
    if prev_tag != "O" && prev_tag != "." && prev_type != ty {
        end = true;
    }
    end
}

fn start_of_chunk(prev_tag: &str, tag: &str, prev_type: &str, ty: &str) -> bool {
    let mut start = matches!(
        (prev_tag, tag),
        ("B", "B") | ("I", "B") | ("O", "B") | ("O", "I")
    );
    if tag != "O" && tag != "." && prev_type != ty {
        start = true;
    }
    start
}

/// Scores `(guessed, correct)` tag sequences sentence by sentence, with the
/// script's blank-line boundary handling between sentences.
pub fn conlleval<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)]) -> ChunkCounts {
    let mut c = ChunkCounts::default();
    let (mut last_g, mut last_c) = ("O".to_string(), "O".to_string());
    let (mut last_gt, mut last_ct) = (String::new(), String::new());
    let mut in_correct = false;

    let mut step = |guess: &str, corr: &str, c: &mut ChunkCounts| {
        let (g, gt) = split_tag(guess);
        let (k, kt) = split_tag(corr);
        if in_correct {
            let end_c = end_of_chunk(&last_c, k, &last_ct, kt);
            let end_g = end_of_chunk(&last_g, g, &last_gt, gt);
            if end_c && end_g && last_gt == last_ct {
                in_correct = false;
                c.correct += 1;
            } else if end_c != end_g || gt != kt {
                in_correct = false;
            }
        }
        let start_c = start_of_chunk(&last_c, k, &last_ct, kt);
        let start_g = start_of_chunk(&last_g, g, &last_gt, gt);
        if start_c && start_g && gt == kt {
            in_correct = true;
        }
        if start_c {
            c.found_correct += 1;
        }
        if start_g {
            c.found_guessed += 1;
        }
        last_g = g.to_string();
        last_c = k.to_string();
        last_gt = gt.to_string();
        last_ct = kt.to_string();
    };

    for (guess, corr) in pairs {
        assert_eq!(guess.len(), corr.len());
        for (g, k) in guess.iter().zip(corr) {
            step(g.as_ref(), k.as_ref(), &mut c);
        }
        // sentence boundary: the script feeds an `O O` line
        step("O", "O", &mut c);
    }
    if in_correct {
        c.correct += 1;
    }
    c
}

/// Relative error with an absolute floor in the denominator, so that
/// gradients that are zero up to rounding compare on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares tape gradients of `loss` against central differences over every
/// entry of every parameter in `store`.
pub fn grad_check(
    store: &mut ParamStore,
    loss: impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
) -> GradReport {
    let mut tape = Tape::new();
    let l = loss(&mut tape, store).expect("loss");
    let grads = tape.backward(l).expect("backward");
    let analytic = tape.param_grads(&grads);
    let value = |store: &ParamStore| {
        let mut t = Tape::new();
        let v = loss(&mut t, store).expect("loss");
        t.value(v).item()
    };
    let mut report = GradReport::default();
    let names: Vec<String> = store.names().to_vec();
    for name in names {
        let size = store.get(&name).unwrap().numel();
        let grad = analytic.iter().find(|(n, _)| *n == name).map(|(_, g)| g.clone());
        for k in 0..size {
            let orig = store.get(&name).unwrap().data()[k];
            store.get_mut(&name).unwrap()[k] = orig + FD_STEP;
            let up = value(store);
            store.get_mut(&name).unwrap()[k] = orig - FD_STEP;
            let down = value(store);
            store.get_mut(&name).unwrap()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.as_ref().map_or(0.0, |g| g.data()[k]);
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel {
                report.max_rel = e;
                report.worst = format!("{name}[{k}]: analytic {a:.6e}, numeric {numeric:.6e}");
            }
        }
    }
    report
}
