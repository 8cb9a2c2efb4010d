//! Small deterministic reductions shared by the moment estimators.
//!
//! All sums run sequentially in trajectory order so results do not depend on
//! how trajectories were partitioned across workers.

/// Default number of jackknife blocks.
pub const JACKKNIFE_BLOCKS: usize = 100;

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    ss / (values.len() as f64 - 1.0)
}

/// Unbiased sample covariance (two-pass).
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a), mean(b));
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    s / (a.len() as f64 - 1.0)
}

pub fn standard_error_of_mean(values: &[f64]) -> f64 {
    (variance(values) / values.len() as f64).sqrt()
}

/// Half-open index ranges of `blocks` contiguous, near-equal blocks.
fn block_bounds(n: usize, blocks: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..blocks).map(move |b| (b * n / blocks, (b + 1) * n / blocks))
}

/// Delete-one-block jackknife standard error of the sample variance.
///
/// Uses `min(blocks, n)` contiguous blocks. Values are centred on the full
/// mean first so large offsets do not cancel catastrophically.
pub fn jackknife_variance_se(values: &[f64], blocks: usize) -> f64 {
    let n = values.len();
    let blocks = blocks.min(n);
    if blocks < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let mut s1 = Vec::with_capacity(blocks);
    let mut s2 = Vec::with_capacity(blocks);
    let mut counts = Vec::with_capacity(blocks);
    for (lo, hi) in block_bounds(n, blocks) {
        let (mut a, mut b) = (0.0, 0.0);
        for v in &values[lo..hi] {
            let c = v - m;
            a += c;
            b += c * c;
        }
        s1.push(a);
        s2.push(b);
        counts.push((hi - lo) as f64);
    }
    let t1: f64 = s1.iter().sum();
    let t2: f64 = s2.iter().sum();
    let leave_out: Vec<f64> = (0..blocks)
        .map(|b| {
            let k = n as f64 - counts[b];
            let a = t1 - s1[b];
            let q = t2 - s2[b];
            (q - a * a / k) / (k - 1.0)
        })
        .collect();
    let lm = mean(&leave_out);
    let spread: f64 = leave_out.iter().map(|v| (v - lm) * (v - lm)).sum();
    ((blocks as f64 - 1.0) / blocks as f64 * spread).sqrt()
}
