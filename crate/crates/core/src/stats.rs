//! Empirical distribution functions and the one-sided Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Pooled size at or below which p-values are computed exactly.
pub const EXACT_LIMIT: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub label: String,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample values".into()));
        }
        Ok(Self {
            label: label.into(),
            values,
        })
    }
}

/// Right-continuous step function `F(x) = P(X ≤ x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    /// Distinct sample values in increasing order with `F` at each.
    pub points: Vec<(f64, f64)>,
}

impl EmpiricalCdf {
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.points.partition_point(|&(v, _)| v <= x);
        if k == 0 {
            0.0
        } else {
            self.points[k - 1].1
        }
    }
}

pub fn empirical_cdf(samples: &[f64]) -> Result<EmpiricalCdf> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("sample values".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == v => last.1 = f,
            _ => points.push((v, f)),
        }
    }
    Ok(EmpiricalCdf { points })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UTest {
    /// `Σ_{x,y} [x > y] + ½ [x = y]`.
    pub u: f64,
    /// `P(U* ≥ U)` under the null; small values favour `X` exceeding `Y`.
    pub p: f64,
    pub method: PMethod,
}

/// `U` statistic for `x` against `y`.
pub fn u_statistic(x: &[f64], y: &[f64]) -> f64 {
    let mut u = 0.0;
    for &a in x {
        for &b in y {
            if a > b {
                u += 1.0;
            } else if a == b {
                u += 0.5;
            }
        }
    }
    u
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sample values".into()));
    }
    Ok(())
}

/// Doubled midranks of the pooled sample, `x` first then `y`.
fn doubled_midranks(x: &[f64], y: &[f64]) -> Vec<u64> {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        // ranks i+1..=j, doubled midrank = i + 1 + j
        for &k in &order[i..j] {
            ranks[k] = (i + 1 + j) as u64;
        }
        i = j;
    }
    ranks
}

/// Exact one-sided p-value: the fraction of the `C(n_x + n_y, n_x)` ways of
/// assigning the pooled (midranked) values to `x` whose `U` reaches the
/// observed one.
pub fn mann_whitney_exact(x: &[f64], y: &[f64]) -> Result<UTest> {
    check(x, y)?;
    let ranks = doubled_midranks(x, y);
    let nx = x.len();
    let observed: u64 = ranks[..nx].iter().sum();
    let max_sum: u64 = ranks.iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0f64; max_sum as usize + 1]; nx + 1];
    counts[0][0] = 1.0;
    for &r in &ranks {
        for k in (1..=nx).rev() {
            let (lower, upper) = counts.split_at_mut(k);
            for s in (r as usize..=max_sum as usize).rev() {
                upper[0][s] += lower[k - 1][s - r as usize];
            }
        }
    }
    let total: f64 = counts[nx].iter().sum();
    let hits: f64 = counts[nx][observed as usize..].iter().sum();
    Ok(UTest {
        u: u_statistic(x, y),
        p: hits / total,
        method: PMethod::Exact,
    })
}

/// Normal approximation with tie-corrected variance and a continuity
/// correction of one half.
pub fn mann_whitney_normal(x: &[f64], y: &[f64]) -> Result<UTest> {
    check(x, y)?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let n = nx + ny;
    let u = u_statistic(x, y);
    let ranks = doubled_midranks(x, y);
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = nx * ny / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let mean = nx * ny / 2.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (u - mean - 0.5) / var.sqrt();
        let normal = Normal::standard();
        normal.sf(z)
    };
    Ok(UTest {
        u,
        p,
        method: PMethod::Normal,
    })
}

/// One-sided test of `X` exceeding `Y`; exact for pooled size up to
/// [`EXACT_LIMIT`], normal approximation above.
pub fn mann_whitney_u(x: &SampleSet, y: &SampleSet) -> Result<UTest> {
    if x.values.len() + y.values.len() <= EXACT_LIMIT {
        mann_whitney_exact(&x.values, &y.values)
    } else {
        mann_whitney_normal(&x.values, &y.values)
    }
}

/// One-sided p-values for every ordered pair of distinct sample sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PMatrix {
    pub labels: Vec<String>,
    /// `p[i][j]` tests `labels[i]` exceeding `labels[j]`; `None` on the diagonal.
    pub p: Vec<Vec<Option<f64>>>,
}

impl PMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,p\n");
        for (i, row) in self.p.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                if let Some(p) = p {
                    out.push_str(&format!("{},{},{}\n", self.labels[i], self.labels[j], p));
                }
            }
        }
        out
    }
}

pub fn pairwise_p_values(sets: &[SampleSet]) -> Result<PMatrix> {
    let mut p = vec![vec![None; sets.len()]; sets.len()];
    for (i, x) in sets.iter().enumerate() {
        for (j, y) in sets.iter().enumerate() {
            if i != j {
                p[i][j] = Some(mann_whitney_u(x, y)?.p);
            }
        }
    }
    Ok(PMatrix {
        labels: sets.iter().map(|s| s.label.clone()).collect(),
        p,
    })
}

/// CDF steps of several sample sets as `label,x,F` rows.
pub fn cdf_table_csv(sets: &[SampleSet]) -> Result<String> {
    let mut out = String::from("label,x,F\n");
    for s in sets {
        for (x, f) in empirical_cdf(&s.values)?.points {
            out.push_str(&format!("{},{},{}\n", s.label, x, f));
        }
    }
    Ok(out)
}
