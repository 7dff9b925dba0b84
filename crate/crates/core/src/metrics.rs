//! Accuracy and calibration metrics over multiple-choice predictions.
//!
//! Confidence bins are equal-width over `[0, 1]`: bin `b` covers
//! `[b/B, (b+1)/B)` and the last bin is closed at 1. Empty bins contribute
//! nothing. Argmax ties go to the lowest option index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 25;
pub const NLL_FLOOR: f64 = 1e-12;

/// Per-question option distributions with the index of the correct option.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    probs: Vec<Vec<f64>>,
    correct: Vec<usize>,
}

impl EvalSet {
    pub fn new(probs: Vec<Vec<f64>>, correct: Vec<usize>) -> Result<Self> {
        if probs.len() != correct.len() {
            return Err(Error::LengthMismatch(probs.len(), correct.len()));
        }
        if probs.is_empty() {
            return Err(Error::EmptyInput("evaluation set"));
        }
        for (p, &c) in probs.iter().zip(&correct) {
            if c >= p.len() {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    len: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NonFinite("probability entry".into()));
            }
            if (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::BadConfig("probabilities do not sum to 1".into()));
            }
        }
        Ok(Self { probs, correct })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn correct(&self) -> &[usize] {
        &self.correct
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = j;
        }
    }
    best
}

pub fn bin_index(conf: f64, bins: usize) -> usize {
    let b = (conf * bins as f64).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

pub fn accuracy(ev: &EvalSet) -> f64 {
    let hits = ev
        .probs
        .iter()
        .zip(&ev.correct)
        .filter(|(p, &c)| argmax(p) == c)
        .count();
    hits as f64 / ev.len() as f64
}

#[derive(Debug, Clone, Copy, Default)]
struct BinAcc {
    count: usize,
    conf: f64,
    hits: f64,
}

/// Weighted bin gap for (confidence, outcome) pairs.
fn binned_gap(pairs: impl Iterator<Item = (f64, bool)>, bins: usize, n: usize) -> (f64, Vec<BinAcc>) {
    let mut acc = vec![BinAcc::default(); bins];
    for (conf, hit) in pairs {
        let b = &mut acc[bin_index(conf, bins)];
        b.count += 1;
        b.conf += conf;
        if hit {
            b.hits += 1.0;
        }
    }
    let gap = acc
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| {
            let c = b.count as f64;
            (c / n as f64) * (b.hits / c - b.conf / c).abs()
        })
        .sum();
    (gap, acc)
}

pub fn ece(ev: &EvalSet, bins: usize) -> f64 {
    let bins = bins.max(1);
    let pairs = ev.probs.iter().zip(&ev.correct).map(|(p, &c)| {
        let k = argmax(p);
        (p[k], k == c)
    });
    binned_gap(pairs, bins, ev.len()).0
}

pub fn cwece(ev: &EvalSet, bins: usize) -> Result<f64> {
    let bins = bins.max(1);
    let n = ev.probs[0].len();
    if ev.probs.iter().any(|p| p.len() != n) {
        return Err(Error::MixedOptionCounts);
    }
    let total: f64 = (0..n)
        .map(|class| {
            let pairs = ev
                .probs
                .iter()
                .zip(&ev.correct)
                .map(|(p, &c)| (p[class], c == class));
            binned_gap(pairs, bins, ev.len()).0
        })
        .sum();
    Ok(total / n as f64)
}

pub fn brier(ev: &EvalSet) -> f64 {
    let total: f64 = ev
        .probs
        .iter()
        .zip(&ev.correct)
        .map(|(p, &c)| {
            p.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let t = if j == c { 1.0 } else { 0.0 };
                    (v - t) * (v - t)
                })
                .sum::<f64>()
        })
        .sum();
    total / ev.len() as f64
}

/// Mean negative log-probability of the correct option (nats), and how many
/// questions hit the probability floor.
pub fn nll_with_floor_count(ev: &EvalSet) -> (f64, usize) {
    let mut floored = 0;
    let total: f64 = ev
        .probs
        .iter()
        .zip(&ev.correct)
        .map(|(p, &c)| {
            if p[c] < NLL_FLOOR {
                floored += 1;
            }
            -p[c].max(NLL_FLOOR).ln()
        })
        .sum();
    (total / ev.len() as f64, floored)
}

pub fn nll(ev: &EvalSet) -> f64 {
    nll_with_floor_count(ev).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub mean_conf: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub cwece: f64,
    pub brier: f64,
    pub nll: f64,
    pub nll_floored: usize,
    pub bin_count: usize,
    pub bins: Vec<ReliabilityBin>,
}

pub fn report(ev: &EvalSet, bins: usize) -> Result<CalibrationReport> {
    let bins = bins.max(1);
    let pairs = ev.probs.iter().zip(&ev.correct).map(|(p, &c)| {
        let k = argmax(p);
        (p[k], k == c)
    });
    let (_, acc) = binned_gap(pairs, bins, ev.len());
    let table = acc
        .iter()
        .enumerate()
        .map(|(b, a)| ReliabilityBin {
            low: b as f64 / bins as f64,
            high: (b + 1) as f64 / bins as f64,
            count: a.count,
            mean_conf: if a.count > 0 { a.conf / a.count as f64 } else { 0.0 },
            acc: if a.count > 0 { a.hits / a.count as f64 } else { 0.0 },
        })
        .collect();
    let (nll, nll_floored) = nll_with_floor_count(ev);
    Ok(CalibrationReport {
        n: ev.len(),
        accuracy: accuracy(ev),
        ece: ece(ev, bins),
        cwece: cwece(ev, bins)?,
        brier: brier(ev),
        nll,
        nll_floored,
        bin_count: bins,
        bins: table,
    })
}

impl CalibrationReport {
    /// `reliability.csv` contents.
    pub fn reliability_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count,mean_conf,acc\n");
        for b in &self.bins {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                b.low, b.high, b.count, b.mean_conf, b.acc
            ));
        }
        s
    }

    /// The five headline metrics, in order (accuracy, ECE, cwECE, Brier, NLL).
    pub fn headline(&self) -> [f64; 5] {
        [self.accuracy, self.ece, self.cwece, self.brier, self.nll]
    }
}
