//! One-sided Mann-Whitney U, chi-square independence and Benjamini-Hochberg
//! adjustment.
//!
//! Every test also reports `ln_p`, the natural log of its p-value computed
//! without underflow, so that very strong patterns remain comparable.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("degenerate contingency table")]
    DegenerateTable,
    #[error("degrees of freedom must be positive")]
    ZeroDf,
    #[error("statistic must be non-negative and finite, got {0}")]
    BadStatistic(f64),
}

/// Largest per-group size for which the exact permutation distribution is used.
pub const EXACT_CUTOFF: usize = 8;

/// Which tail of the inside distribution counts as interesting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    /// Inside stochastically greater than outside.
    Greater,
    /// Inside stochastically smaller than outside.
    Less,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MannWhitneyResult {
    /// Pairs with inside > outside, ties counted as one half.
    pub u_inside: f64,
    pub u_outside: f64,
    /// Tie-corrected standard normal deviate of `u_inside` (no continuity
    /// correction).
    pub z: f64,
    pub p_one_sided: f64,
    pub ln_p: f64,
    pub n_inside: usize,
    pub n_outside: usize,
    /// p came from the exact permutation distribution.
    pub exact: bool,
    /// All pooled values identical; p is fixed at 0.5.
    pub degenerate: bool,
}

/// Standard normal upper tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `ln(normal_sf(z))`, finite for any finite `z`.
pub fn normal_ln_sf(z: f64) -> f64 {
    let p = normal_sf(z);
    if p > 1e-300 {
        return p.ln();
    }
    // Asymptotic expansion of the Mills ratio; z > 37 here.
    let z2 = z * z;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    -0.5 * z2 - z.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// Midranks (1-based) of `values` and the tie term `Σ (t³ - t)`.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    (ranks, tie_term)
}

/// Number of ways (out of C(n+m, n)) for which the tie-free U statistic takes
/// each value `0..=n*m`.
fn u_distribution(n: usize, m: usize) -> Vec<f64> {
    // counts[a][b][u]: arrangements of a inside and b outside items with U = u
    let max_u = n * m;
    let mut table = vec![vec![vec![0.0f64; max_u + 1]; m + 1]; n + 1];
    for row in table.iter_mut() {
        row[0][0] = 1.0;
    }
    for col in table[0].iter_mut() {
        col[0] = 1.0;
    }
    for a in 1..=n {
        for b in 1..=m {
            for u in 0..=a * b {
                // Largest item is inside: it beats all b outside items.
                let from_inside = if u >= b { table[a - 1][b][u - b] } else { 0.0 };
                let from_outside = table[a][b - 1][u];
                table[a][b][u] = from_inside + from_outside;
            }
        }
    }
    std::mem::take(&mut table[n][m])
}

/// Exact one-sided p for small samples. Without ties this is the classic
/// U distribution; with ties it enumerates every inside/outside labelling
/// of the pooled midranks.
fn exact_p(doubled_ranks: &[i64], n: usize, observed_doubled_sum: i64, alt: Alternative, ties: bool) -> f64 {
    let big_n = doubled_ranks.len();
    let m = big_n - n;
    if !ties {
        let dist = u_distribution(n, m);
        let total: f64 = dist.iter().sum();
        // doubled rank sum = 2U + n(n+1)
        let u_obs = ((observed_doubled_sum - (n * (n + 1)) as i64) / 2) as usize;
        let tail: f64 = match alt {
            Alternative::Greater => dist[u_obs..].iter().sum(),
            Alternative::Less => dist[..=u_obs].iter().sum(),
        };
        return tail / total;
    }
    let mut hits = 0u64;
    let mut total = 0u64;
    fn walk(ranks: &[i64], start: usize, left: usize, acc: i64, visit: &mut dyn FnMut(i64)) {
        if left == 0 {
            visit(acc);
            return;
        }
        for i in start..=ranks.len() - left {
            walk(ranks, i + 1, left - 1, acc + ranks[i], visit);
        }
    }
    walk(doubled_ranks, 0, n, 0, &mut |s| {
        total += 1;
        let hit = match alt {
            Alternative::Greater => s >= observed_doubled_sum,
            Alternative::Less => s <= observed_doubled_sum,
        };
        if hit {
            hits += 1;
        }
    });
    hits as f64 / total as f64
}

fn normal_p(u: f64, n: usize, m: usize, tie_term: f64, alt: Alternative) -> (f64, f64, f64) {
    let (nf, mf) = (n as f64, m as f64);
    let big_n = nf + mf;
    let mean = nf * mf / 2.0;
    let var = nf * mf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    let sd = var.sqrt();
    let z = (u - mean) / sd;
    let zc = match alt {
        Alternative::Greater => (u - mean - 0.5) / sd,
        Alternative::Less => -(u - mean + 0.5) / sd,
    };
    let ln_p = normal_ln_sf(zc);
    (z, normal_sf(zc), ln_p)
}

/// One-sided test that `inside` is stochastically greater than `outside`.
pub fn mann_whitney(inside: &[f64], outside: &[f64]) -> Result<MannWhitneyResult, StatsError> {
    mann_whitney_alt(inside, outside, Alternative::Greater)
}

/// One-sided Mann-Whitney U test.
///
/// Both samples of size ≤ [`EXACT_CUTOFF`] use the exact permutation
/// distribution (over midranks when there are ties). Larger samples use the
/// normal approximation with tie-corrected variance and a ½ continuity
/// correction.
pub fn mann_whitney_alt(inside: &[f64], outside: &[f64], alt: Alternative) -> Result<MannWhitneyResult, StatsError> {
    mann_whitney_impl(inside, outside, alt, EXACT_CUTOFF)
}

/// Like [`mann_whitney_alt`] but always uses the normal approximation.
pub fn mann_whitney_normal(inside: &[f64], outside: &[f64], alt: Alternative) -> Result<MannWhitneyResult, StatsError> {
    mann_whitney_impl(inside, outside, alt, 0)
}

fn mann_whitney_impl(
    inside: &[f64],
    outside: &[f64],
    alt: Alternative,
    exact_cutoff: usize,
) -> Result<MannWhitneyResult, StatsError> {
    let (n, m) = (inside.len(), outside.len());
    if n == 0 || m == 0 {
        return Err(StatsError::EmptySample);
    }
    let pooled: Vec<f64> = inside.iter().chain(outside).copied().collect();
    let (ranks, tie_term) = midranks(&pooled);
    let rank_sum: f64 = ranks[..n].iter().sum();
    let u_inside = rank_sum - (n * (n + 1)) as f64 / 2.0;
    let u_outside = (n * m) as f64 - u_inside;
    let mut res = MannWhitneyResult {
        u_inside,
        u_outside,
        z: 0.0,
        p_one_sided: 0.5,
        ln_p: 0.5f64.ln(),
        n_inside: n,
        n_outside: m,
        exact: false,
        degenerate: false,
    };
    if pooled.iter().all(|&v| v == pooled[0]) {
        res.degenerate = true;
        return Ok(res);
    }
    let (z, p, ln_p) = normal_p(u_inside, n, m, tie_term, alt);
    res.z = z;
    if n <= exact_cutoff && m <= exact_cutoff {
        let doubled: Vec<i64> = ranks.iter().map(|r| (2.0 * r).round() as i64).collect();
        let obs: i64 = doubled[..n].iter().sum();
        let p = exact_p(&doubled, n, obs, alt, tie_term > 0.0);
        res.p_one_sided = p;
        res.ln_p = p.ln();
        res.exact = true;
    } else {
        res.p_one_sided = p;
        res.ln_p = ln_p;
    }
    Ok(res)
}

/// Pooled midranks of a fixed population, for testing many inside subsets
/// against their complements without re-ranking.
///
/// Because inside ∪ outside is always the whole population, the pooled ranks
/// are the population ranks and `U = Σ ranks(inside) − n(n+1)/2`.
#[derive(Debug, Clone)]
pub struct PooledRanks {
    values: Vec<f64>,
    ranks: Vec<f64>,
    tie_term: f64,
    constant: bool,
}

impl PooledRanks {
    pub fn new(values: &[f64]) -> Self {
        let (ranks, tie_term) = midranks(values);
        PooledRanks {
            values: values.to_vec(),
            ranks,
            tie_term,
            constant: values.windows(2).all(|w| w[0] == w[1]),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Tests the population members at `inside` (distinct indices) against
    /// all the others.
    pub fn test(&self, inside: &[usize], alt: Alternative) -> Result<MannWhitneyResult, StatsError> {
        let n = inside.len();
        let m = self.values.len() - n;
        if n == 0 || m == 0 {
            return Err(StatsError::EmptySample);
        }
        if n <= EXACT_CUTOFF && m <= EXACT_CUTOFF {
            let mut is_in = vec![false; self.values.len()];
            for &i in inside {
                is_in[i] = true;
            }
            let ins: Vec<f64> = inside.iter().map(|&i| self.values[i]).collect();
            let outs: Vec<f64> = (0..self.values.len())
                .filter(|&i| !is_in[i])
                .map(|i| self.values[i])
                .collect();
            return mann_whitney_alt(&ins, &outs, alt);
        }
        let rank_sum: f64 = inside.iter().map(|&i| self.ranks[i]).sum();
        let u_inside = rank_sum - (n * (n + 1)) as f64 / 2.0;
        let mut res = MannWhitneyResult {
            u_inside,
            u_outside: (n * m) as f64 - u_inside,
            z: 0.0,
            p_one_sided: 0.5,
            ln_p: 0.5f64.ln(),
            n_inside: n,
            n_outside: m,
            exact: false,
            degenerate: self.constant,
        };
        if !self.constant {
            let (z, p, ln_p) = normal_p(u_inside, n, m, self.tie_term, alt);
            res.z = z;
            res.p_one_sided = p;
            res.ln_p = ln_p;
        }
        Ok(res)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
    pub ln_p: f64,
}

/// Pearson chi-square test of independence (no Yates correction).
pub fn chi_square_independence(table: &[Vec<u64>]) -> Result<ChiSquareResult, StatsError> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(StatsError::DegenerateTable);
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    if row_sums.iter().chain(&col_sums).any(|&s| s == 0.0) {
        return Err(StatsError::DegenerateTable);
    }
    let total: f64 = row_sums.iter().sum();
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / total;
            let d = obs as f64 - expected;
            statistic += d * d / expected;
        }
    }
    let df = (rows - 1) * (cols - 1);
    let ln_p = chi_square_ln_sf(statistic, df)?;
    Ok(ChiSquareResult {
        statistic,
        df,
        p: ln_p.exp(),
        ln_p,
    })
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: usize) -> Result<f64, StatsError> {
    chi_square_ln_sf(x, df).map(f64::exp)
}

/// `ln` of the chi-square upper tail, via the regularized upper incomplete
/// gamma function Q(df/2, x/2).
pub fn chi_square_ln_sf(x: f64, df: usize) -> Result<f64, StatsError> {
    if df == 0 {
        return Err(StatsError::ZeroDf);
    }
    if !(x >= 0.0 && x.is_finite()) {
        return Err(StatsError::BadStatistic(x));
    }
    Ok(ln_gamma_q(df as f64 / 2.0, x / 2.0))
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_MAX_ITER: usize = 10_000;

/// ln Q(a, x), the regularized upper incomplete gamma function.
fn ln_gamma_q(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let ln_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // Series for P(a, x); Q = 1 - P is not small in this region.
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..GAMMA_MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        let p = (ln_prefix + sum.ln()).exp();
        (1.0 - p).max(0.0).ln()
    } else {
        // Continued fraction for Q(a, x), modified Lentz.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..GAMMA_MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        ln_prefix + h.ln()
    }
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(p_values: &[f64]) -> Vec<f64> {
    let ln: Vec<f64> = p_values.iter().map(|p| p.ln()).collect();
    bh_adjust_ln(&ln).into_iter().map(f64::exp).collect()
}

/// [`bh_adjust`] on natural-log p-values: `min_{j ≥ i} ln p_(j) + ln(n / j)`,
/// capped at 0.
pub fn bh_adjust_ln(ln_p: &[f64]) -> Vec<f64> {
    let n = ln_p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ln_p[a].total_cmp(&ln_p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let mut running = 0.0f64;
    let ln_n = (n as f64).ln();
    for (pos, &idx) in order.iter().enumerate().rev() {
        let rank = (pos + 1) as f64;
        let adj = ln_p[idx] + ln_n - rank.ln();
        running = running.min(adj);
        out[idx] = running;
    }
    out
}
