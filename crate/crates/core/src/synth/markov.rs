use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::signal_io::{StageLabel, NUM_STAGES};

type Matrix = [[f64; NUM_STAGES]; NUM_STAGES];

/// Typical stage prevalence (W, N1, N2, N3, REM), N2-heavy.
pub const DEFAULT_STATIONARY: [f64; NUM_STAGES] = [0.20, 0.08, 0.42, 0.13, 0.17];

/// Preferred order in which the concentrated family routes transition mass:
/// wake/N1 flicker first, then the usual sleep-cycle edges, then the rest.
const BOUNCE_EDGES: [(usize, usize); 10] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (2, 4),
    (4, 0),
    (1, 4),
    (0, 2),
    (3, 4),
    (0, 3),
    (1, 3),
];

const ROW_TOLERANCE: f64 = 1e-12;

/// First-order Markov chain over the five stages.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovStageModel {
    pub initial: [f64; NUM_STAGES],
    pub transition: Matrix,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = [[0.0; NUM_STAGES]; NUM_STAGES];
    for i in 0..NUM_STAGES {
        for k in 0..NUM_STAGES {
            for j in 0..NUM_STAGES {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

impl MarkovStageModel {
    pub fn new(initial: [f64; NUM_STAGES], transition: Matrix) -> Result<Self> {
        let m = MarkovStageModel { initial, transition };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        check_distribution(&self.initial, "initial distribution")?;
        for (i, row) in self.transition.iter().enumerate() {
            check_distribution(row, &format!("transition row {i}"))?;
        }
        Ok(())
    }

    /// `P^k`.
    pub fn power(&self, k: usize) -> Matrix {
        let mut out = [[0.0; NUM_STAGES]; NUM_STAGES];
        for (i, row) in out.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for _ in 0..k {
            out = mat_mul(&out, &self.transition);
        }
        out
    }

    /// Stationary distribution, by repeated squaring of the lazy chain
    /// `(P + I) / 2` (same stationary law, never periodic).
    pub fn stationary(&self) -> [f64; NUM_STAGES] {
        let mut lazy = self.transition;
        for (i, row) in lazy.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v *= 0.5;
            }
            row[i] += 0.5;
        }
        for _ in 0..64 {
            lazy = mat_mul(&lazy, &lazy);
            // keep rounding in the row sums from compounding
            for row in lazy.iter_mut() {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        // average the rows so a reducible chain still yields a distribution
        let mut pi = [0.0; NUM_STAGES];
        for (j, p) in pi.iter_mut().enumerate() {
            *p = lazy.iter().map(|r| r[j]).sum::<f64>() / NUM_STAGES as f64;
        }
        pi
    }

    /// Stationary probability that epochs `k` apart share a label.
    pub fn lag_same(&self, k: usize) -> f64 {
        let pi = self.stationary();
        let pk = self.power(k);
        (0..NUM_STAGES).map(|i| pi[i] * pk[i][i]).sum()
    }

    pub fn sample_sequence<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<StageLabel>> {
        let initial = WeightedIndex::new(self.initial).map_err(|e| Error::invalid(e.to_string()))?;
        let rows = self
            .transition
            .iter()
            .map(|r| WeightedIndex::new(r).map_err(|e| Error::invalid(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(n);
        if n == 0 {
            return Ok(out);
        }
        let mut s = initial.sample(rng);
        out.push(StageLabel::ALL[s]);
        for _ in 1..n {
            s = rows[s].sample(rng);
            out.push(StageLabel::ALL[s]);
        }
        Ok(out)
    }
}

/// Symmetric flow matrices `C = diag(pi) P` describe reversible chains with
/// stationary law `pi`; the lag-1 same-label ratio is `trace(C)` and the
/// lag-2 ratio is `sum C_ij^2 / pi_j`.
fn lag2_of_flows(c: &Matrix, pi: &[f64; NUM_STAGES]) -> f64 {
    let mut s = 0.0;
    for row in c {
        for j in 0..NUM_STAGES {
            s += row[j] * row[j] / pi[j];
        }
    }
    s
}

fn fill_diagonal(c: &mut Matrix, pi: &[f64; NUM_STAGES]) -> Result<()> {
    for i in 0..NUM_STAGES {
        let off: f64 = (0..NUM_STAGES).filter(|&j| j != i).map(|j| c[i][j]).sum();
        let d = pi[i] - off;
        if d < -1e-12 {
            return Err(Error::Infeasible(format!(
                "stage {} cannot shed {off:.4} of transition mass",
                StageLabel::ALL[i]
            )));
        }
        c[i][i] = d.max(0.0);
    }
    Ok(())
}

/// Off-diagonal mass spread proportionally to `pi_i pi_j`.
fn spread_flows(lag1: f64, pi: &[f64; NUM_STAGES]) -> Result<Matrix> {
    let mut c = [[0.0; NUM_STAGES]; NUM_STAGES];
    let norm: f64 = (0..NUM_STAGES)
        .flat_map(|i| (0..NUM_STAGES).filter(move |&j| j != i).map(move |j| pi[i] * pi[j]))
        .sum();
    for i in 0..NUM_STAGES {
        for j in 0..NUM_STAGES {
            if i != j {
                c[i][j] = pi[i] * pi[j] / norm * (1.0 - lag1);
            }
        }
    }
    fill_diagonal(&mut c, pi)?;
    Ok(c)
}

/// Off-diagonal mass poured greedily into `BOUNCE_EDGES`, each edge taking
/// as much as both endpoints can still give.
fn bounce_flows(lag1: f64, pi: &[f64; NUM_STAGES]) -> Result<Matrix> {
    let mut c = [[0.0; NUM_STAGES]; NUM_STAGES];
    let mut left = (1.0 - lag1) / 2.0;
    let mut cap = *pi;
    for &(i, j) in &BOUNCE_EDGES {
        let f = left.min(cap[i]).min(cap[j]);
        c[i][j] += f;
        c[j][i] += f;
        cap[i] -= f;
        cap[j] -= f;
        left -= f;
    }
    if left > 1e-12 {
        return Err(Error::Infeasible(format!(
            "lag-1 ratio {lag1} needs more transition mass than the stages hold"
        )));
    }
    fill_diagonal(&mut c, pi)?;
    Ok(c)
}

fn mix(a: &Matrix, b: &Matrix, beta: f64) -> Matrix {
    let mut c = *a;
    for i in 0..NUM_STAGES {
        for j in 0..NUM_STAGES {
            c[i][j] = (1.0 - beta) * a[i][j] + beta * b[i][j];
        }
    }
    c
}

/// Finds a reversible chain with stationary law `stationary` whose lag-1 and
/// lag-2 same-label ratios equal the targets.
///
/// The family is `C(beta) = (1 - beta) S + beta B` where `S` spreads the
/// transition mass over all stage pairs and `B` concentrates it on a few
/// back-and-forth edges. Both share the stationary law and the lag-1 ratio;
/// the lag-2 ratio grows from `S` to `B`, and `beta` is found by bisection.
pub fn calibrate_transition_matrix(
    target_lag1: f64,
    target_lag2: f64,
    stationary: [f64; NUM_STAGES],
) -> Result<MarkovStageModel> {
    for (name, v) in [("lag-1", target_lag1), ("lag-2", target_lag2)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Infeasible(format!("{name} target {v} outside (0, 1)")));
        }
    }
    check_distribution(&stationary, "stationary distribution")?;
    if stationary.iter().any(|&p| p == 0.0) {
        return Err(Error::invalid("every stage needs positive stationary mass"));
    }
    let pi = stationary;
    let s = spread_flows(target_lag1, &pi)?;
    let b = bounce_flows(target_lag1, &pi)?;
    let (lo_val, hi_val) = (lag2_of_flows(&s, &pi), lag2_of_flows(&b, &pi));
    if target_lag2 < lo_val || target_lag2 > hi_val {
        return Err(Error::Infeasible(format!(
            "lag-2 target {target_lag2} outside the reachable range [{lo_val:.4}, {hi_val:.4}] for lag-1 {target_lag1}"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if lag2_of_flows(&mix(&s, &b, mid), &pi) < target_lag2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    let c = mix(&s, &b, beta);
    let mut transition = [[0.0; NUM_STAGES]; NUM_STAGES];
    for i in 0..NUM_STAGES {
        for j in 0..NUM_STAGES {
            transition[i][j] = c[i][j] / pi[i];
        }
        let sum: f64 = transition[i].iter().sum();
        transition[i].iter_mut().for_each(|v| *v /= sum);
    }
    MarkovStageModel::new(stationary, transition)
}

/// Empirical share of label pairs `k` apart that agree.
pub fn empirical_lag_same(labels: &[StageLabel], k: usize) -> Option<f64> {
    if labels.len() <= k {
        return None;
    }
    let pairs = labels.len() - k;
    let same = labels.iter().zip(&labels[k..]).filter(|(a, b)| a == b).count();
    Some(same as f64 / pairs as f64)
}
