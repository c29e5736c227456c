//! Parameter accounting for dense, Tucker, MPS, layer-wise and trimmed
//! parametrizations, and the compression-ratio tables built on it.
//!
//! Published compression ratios include parameters outside the weight
//! tensor (stem, prediction heads, normalization). They are modelled as one
//! additive constant `E` on both sides of the ratio,
//! `(dense + E) / (compressed + E)`, with `E` fitted to the single-mode
//! Tucker ablation rows by [`fit_overhead`].

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tnet::ArchConfig;

/// Fitted untensorized-parameter count; equal to `fit_overhead()`.
pub const DEFAULT_OVERHEAD: u64 = 1_633_000;

pub fn count_dense(arch: &ArchConfig) -> u64 {
    arch.dims().iter().map(|&d| d as u64).product()
}

fn check_tucker_ranks(arch: &ArchConfig, ranks: &[usize]) -> Result<()> {
    let dims = arch.dims();
    if ranks.len() != 8 {
        return Err(Error::Rank(format!("expected 8 Tucker ranks, got {}", ranks.len())));
    }
    for (k, (&r, &i)) in ranks.iter().zip(&dims).enumerate() {
        if r == 0 || r > i {
            return Err(Error::Rank(format!("rank {r} on mode {k} must lie in 1..={i}")));
        }
    }
    Ok(())
}

/// `prod_k R_k + sum_k R_k I_k`.
pub fn count_tucker(arch: &ArchConfig, ranks: &[usize]) -> Result<u64> {
    check_tucker_ranks(arch, ranks)?;
    let core: u64 = ranks.iter().map(|&r| r as u64).product();
    let factors: u64 = ranks
        .iter()
        .zip(arch.dims())
        .map(|(&r, i)| (r * i) as u64)
        .sum();
    Ok(core + factors)
}

/// `sum_k R_k I_k R_{k+1}` over a chain `(R_0, ..., R_8)` with unit ends.
pub fn count_mps(arch: &ArchConfig, chain: &[usize]) -> Result<u64> {
    let dims = arch.dims();
    crate::decomp::validate_chain(&dims, chain)?;
    Ok(dims
        .iter()
        .enumerate()
        .map(|(k, &i)| (chain[k] * i * chain[k + 1]) as u64)
        .sum())
}

/// Every convolution compressed on its own with feature ranks `(R_4, R_5)`:
/// `N_conv (R_4 R_5 I_6 I_7 + R_4 I_4 + R_5 I_5)` with
/// `N_conv = I_0 I_1 I_2 I_3`.
pub fn count_layerwise(arch: &ArchConfig, r_in: usize, r_out: usize) -> Result<u64> {
    check_feature_ranks(arch, r_in, r_out)?;
    let per_layer = r_in * r_out * arch.kernel_h * arch.kernel_w + r_in * arch.f_in + r_out * arch.f_out;
    Ok(arch.n_conv() as u64 * per_layer as u64)
}

/// A single network tensor with feature ranks `(R_4, R_5)` and every other
/// mode at full rank, counted as a shared feature basis plus one small core
/// per layer: `N_conv R_4 R_5 I_6 I_7 + R_4 I_4 + R_5 I_5`.
pub fn count_shared_features(arch: &ArchConfig, r_in: usize, r_out: usize) -> Result<u64> {
    check_feature_ranks(arch, r_in, r_out)?;
    let cores = arch.n_conv() * r_in * r_out * arch.kernel_h * arch.kernel_w;
    Ok((cores + r_in * arch.f_in + r_out * arch.f_out) as u64)
}

fn check_feature_ranks(arch: &ArchConfig, r_in: usize, r_out: usize) -> Result<()> {
    if r_in == 0 || r_in > arch.f_in || r_out == 0 || r_out > arch.f_out {
        return Err(Error::Rank(format!(
            "feature ranks ({r_in}, {r_out}) must lie in 1..={} x 1..={}",
            arch.f_in, arch.f_out
        )));
    }
    Ok(())
}

/// Dense count with both feature modes trimmed to `new_f` channels.
pub fn count_trimmed(arch: &ArchConfig, new_f: usize) -> Result<u64> {
    if new_f == 0 || new_f > arch.f_in || new_f > arch.f_out {
        return Err(Error::Rank(format!("trimmed width {new_f} must lie in 1..={}", arch.f_in.min(arch.f_out))));
    }
    let mut trimmed = *arch;
    trimmed.f_in = new_f;
    trimmed.f_out = new_f;
    Ok(count_dense(&trimmed))
}

/// Uncompressed total over compressed total.
pub fn compression_ratio(method_total: u64, dense_total: u64) -> f64 {
    dense_total as f64 / method_total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMethod {
    Dense,
    Tucker,
    Mps,
    Layerwise,
    Trimmed,
}

impl ParamMethod {
    pub fn name(self) -> &'static str {
        match self {
            ParamMethod::Dense => "dense",
            ParamMethod::Tucker => "tucker",
            ParamMethod::Mps => "mps",
            ParamMethod::Layerwise => "layerwise",
            ParamMethod::Trimmed => "trimmed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub method: ParamMethod,
    /// Rank tuple or width, as printed (`4,4,3,2,96,96,3,3`, `f=64`).
    pub descriptor: String,
    pub tensorized: u64,
    pub overhead: u64,
    pub total: u64,
    pub ratio: f64,
    /// Published ratio for this configuration, when there is one.
    pub published: Option<f64>,
}

impl ParamReport {
    pub fn new(method: ParamMethod, descriptor: String, tensorized: u64, overhead: u64, dense: u64) -> Self {
        let total = tensorized + overhead;
        Self {
            method,
            descriptor,
            tensorized,
            overhead,
            total,
            ratio: compression_ratio(total, dense + overhead),
            published: None,
        }
    }

    fn with_published(mut self, p: f64) -> Self {
        self.published = Some(p);
        self
    }
}

fn join(ranks: &[usize]) -> String {
    ranks.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Single-mode Tucker ablation on the 4-stack, 128-feature network, with
/// the published compression ratios.
pub const TABLE2_ROWS: [([usize; 8], f64); 13] = [
    ([3, 4, 3, 2, 128, 128, 3, 3], 1.28),
    ([2, 4, 3, 2, 128, 128, 3, 3], 1.82),
    ([1, 4, 3, 2, 128, 128, 3, 3], 3.03),
    ([4, 3, 3, 2, 128, 128, 3, 3], 1.28),
    ([4, 2, 3, 2, 128, 128, 3, 3], 1.82),
    ([4, 1, 3, 2, 128, 128, 3, 3], 3.03),
    ([4, 4, 2, 2, 128, 128, 3, 3], 1.43),
    ([4, 4, 1, 2, 128, 128, 3, 3], 2.50),
    ([4, 4, 3, 1, 128, 128, 3, 3], 1.82),
    ([4, 4, 3, 2, 96, 96, 3, 3], 1.64),
    ([4, 4, 3, 2, 64, 64, 3, 3], 3.03),
    ([4, 4, 3, 2, 32, 32, 3, 3], 6.25),
    ([4, 4, 3, 2, 128, 128, 2, 2], 1.98),
];

/// Multi-mode Tucker configurations with published ratios.
pub const TABLE3_TUCKER_ROWS: [([usize; 8], f64); 6] = [
    ([4, 3, 3, 2, 110, 110, 3, 3], 1.7),
    ([4, 4, 2, 2, 110, 110, 3, 3], 1.8),
    ([3, 3, 3, 2, 110, 110, 2, 2], 3.7),
    ([3, 2, 3, 2, 96, 96, 3, 3], 3.4),
    ([3, 3, 2, 2, 80, 80, 3, 3], 4.2),
    ([2, 2, 2, 2, 96, 96, 3, 3], 5.2),
];

pub const TABLE3_MPS_ROW: ([usize; 9], f64) = ([1, 4, 4, 12, 24, 110, 9, 3, 1], 7.4);

pub fn tucker_report(arch: &ArchConfig, ranks: &[usize], overhead: u64) -> Result<ParamReport> {
    Ok(ParamReport::new(
        ParamMethod::Tucker,
        join(ranks),
        count_tucker(arch, ranks)?,
        overhead,
        count_dense(arch),
    ))
}

pub fn mps_report(arch: &ArchConfig, chain: &[usize], overhead: u64) -> Result<ParamReport> {
    Ok(ParamReport::new(
        ParamMethod::Mps,
        join(chain),
        count_mps(arch, chain)?,
        overhead,
        count_dense(arch),
    ))
}

pub fn dense_report(arch: &ArchConfig, overhead: u64) -> ParamReport {
    let d = count_dense(arch);
    ParamReport::new(ParamMethod::Dense, join(&arch.dims()), d, overhead, d)
}

pub fn layerwise_report(arch: &ArchConfig, r_in: usize, r_out: usize, overhead: u64) -> Result<ParamReport> {
    Ok(ParamReport::new(
        ParamMethod::Layerwise,
        format!("{r_in},{r_out},{},{}", arch.kernel_h, arch.kernel_w),
        count_layerwise(arch, r_in, r_out)?,
        overhead,
        count_dense(arch),
    ))
}

pub fn trimmed_report(arch: &ArchConfig, new_f: usize, overhead: u64) -> Result<ParamReport> {
    Ok(ParamReport::new(
        ParamMethod::Trimmed,
        format!("f={new_f}"),
        count_trimmed(arch, new_f)?,
        overhead,
        count_dense(arch),
    ))
}

/// The single-mode ablation rows, preceded by the uncompressed baseline.
pub fn table2(arch: &ArchConfig, overhead: u64) -> Result<Vec<ParamReport>> {
    let mut rows = vec![dense_report(arch, overhead).with_published(1.0)];
    for (ranks, published) in TABLE2_ROWS {
        rows.push(tucker_report(arch, &ranks, overhead)?.with_published(published));
    }
    Ok(rows)
}

/// Baseline, multi-mode Tucker rows and the MPS row.
pub fn table3(arch: &ArchConfig, overhead: u64) -> Result<Vec<ParamReport>> {
    let mut rows = vec![dense_report(arch, overhead).with_published(1.0)];
    for (ranks, published) in TABLE3_TUCKER_ROWS {
        rows.push(tucker_report(arch, &ranks, overhead)?.with_published(published));
    }
    let (chain, published) = TABLE3_MPS_ROW;
    rows.push(mps_report(arch, &chain, overhead)?.with_published(published));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub table2: Vec<ParamReport>,
    pub table3: Vec<ParamReport>,
}

pub fn reproduce_tables(arch: &ArchConfig, overhead: u64) -> Result<Tables> {
    Ok(Tables {
        table2: table2(arch, overhead)?,
        table3: table3(arch, overhead)?,
    })
}

/// Least-squares fit of the overhead constant to the ablation ratios:
/// scan `E` over `0..=5_000_000` in steps of 1000.
pub fn fit_overhead() -> u64 {
    let arch = ArchConfig::full_scale();
    let dense = count_dense(&arch);
    let counts: Vec<(u64, f64)> = TABLE2_ROWS
        .iter()
        .map(|(r, p)| (count_tucker(&arch, r).expect("valid ranks"), *p))
        .collect();
    let mut best = (f64::INFINITY, 0);
    for e in (0..=5_000_000u64).step_by(1000) {
        let sse: f64 = counts
            .iter()
            .map(|&(c, p)| {
                let d = compression_ratio(c + e, dense + e) - p;
                d * d
            })
            .sum();
        if sse < best.0 {
            best = (sse, e);
        }
    }
    best.1
}

/// Two decimals and an `x`, e.g. `1.64x`. Exact binary ties round to even.
pub fn format_ratio(r: f64) -> String {
    format!("{r:.2}x")
}

/// Aligned plain-text rendering.
pub fn render_table(rows: &[ParamReport]) -> String {
    let header = ["method", "ranks", "tensorized", "overhead", "total", "published", "ratio"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.method.name().to_string(),
                r.descriptor.clone(),
                r.tensorized.to_string(),
                r.overhead.to_string(),
                r.total.to_string(),
                r.published.map(format_ratio).unwrap_or_else(|| "-".into()),
                format_ratio(r.ratio),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let mut s = String::new();
        for (k, (cell, w)) in cells.iter().zip(widths).enumerate() {
            if k > 0 {
                s.push_str("  ");
            }
            if k < 2 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "{cell:>w$}");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(&header.map(String::from));
    for row in &body {
        line(row);
    }
    out
}

/// CSV with columns `method,ranks,tensorized,overhead,total,ratio`.
pub fn to_csv(rows: &[ParamReport]) -> String {
    let mut out = String::from("method,ranks,tensorized,overhead,total,ratio\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},\"{}\",{},{},{},{:.16e}",
            r.method.name(),
            r.descriptor,
            r.tensorized,
            r.overhead,
            r.total,
            r.ratio
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ArchConfig {
        ArchConfig::full_scale()
    }

    #[test]
    fn dense_counts() {
        assert_eq!(count_dense(&arch()), 14_155_776);
        assert_eq!(count_dense(&ArchConfig::new([1; 8], 0).unwrap()), 1);
        assert_eq!(count_dense(&ArchConfig::toy()), 13_824);
    }

    #[test]
    fn tucker_counts() {
        assert_eq!(count_tucker(&arch(), &[4, 3, 3, 2, 128, 128, 3, 3]).unwrap(), 10_649_659);
        let dims = arch().dims();
        let full = count_tucker(&arch(), &dims).unwrap();
        let sq: u64 = dims.iter().map(|&d| (d * d) as u64).sum();
        assert_eq!(full, count_dense(&arch()) + sq);
        let sum: u64 = dims.iter().map(|&d| d as u64).sum();
        assert_eq!(count_tucker(&arch(), &[1; 8]).unwrap(), 1 + sum);
        assert!(count_tucker(&arch(), &[5, 1, 1, 1, 1, 1, 1, 1]).is_err());
        assert!(count_tucker(&arch(), &[1; 7]).is_err());
    }

    #[test]
    fn mps_counts() {
        assert_eq!(count_mps(&arch(), &[1, 4, 4, 12, 24, 110, 9, 3, 1]).unwrap(), 465_530);
        let sum: u64 = arch().dims().iter().map(|&d| d as u64).sum();
        assert_eq!(count_mps(&arch(), &[1; 9]).unwrap(), sum);
        assert!(count_mps(&arch(), &[2, 4, 4, 12, 24, 110, 9, 3, 1]).is_err());
    }

    #[test]
    fn layerwise_counts() {
        assert_eq!(count_layerwise(&arch(), 64, 64).unwrap(), 5_111_808);
        let full = count_layerwise(&arch(), 128, 128).unwrap();
        assert_eq!(full, 96 * (147_456 + 16_384 + 16_384));
        assert!(full > count_dense(&arch()));
        let saving = count_layerwise(&arch(), 64, 32).unwrap() - count_shared_features(&arch(), 64, 32).unwrap();
        assert_eq!(saving, 95 * (64 * 128 + 32 * 128));
        assert!(count_layerwise(&arch(), 129, 1).is_err());
    }

    #[test]
    fn trimmed_counts() {
        assert_eq!(count_trimmed(&arch(), 64).unwrap(), 3_538_944);
        assert_eq!(count_trimmed(&arch(), 128).unwrap(), count_dense(&arch()));
        assert_eq!(count_trimmed(&arch(), 1).unwrap(), 864);
        assert!(count_trimmed(&arch(), 0).is_err());
    }

    #[test]
    fn ratios() {
        assert_eq!(compression_ratio(10, 10), 1.0);
        assert_eq!(compression_ratio(5, 10), 2.0);
        let e = 1_642_000;
        let t = count_tucker(&arch(), &[1, 4, 3, 2, 128, 128, 3, 3]).unwrap();
        assert_eq!(t, 3_571_763);
        let r = compression_ratio(t + e, count_dense(&arch()) + e);
        assert!((r - 3.03).abs() < 0.01, "{r}");
    }

    #[test]
    fn default_overhead_is_the_fit() {
        assert_eq!(fit_overhead(), DEFAULT_OVERHEAD);
    }

    #[test]
    fn formatting() {
        assert_eq!(format_ratio(1.6412), "1.64x");
        assert_eq!(format_ratio(0.125), "0.12x");
        assert_eq!(format_ratio(0.375), "0.38x");
        let rows = table3(&arch(), DEFAULT_OVERHEAD).unwrap();
        let text = render_table(&rows);
        assert_eq!(text.lines().count(), rows.len() + 1);
        let csv = to_csv(&rows);
        assert!(csv.starts_with("method,ranks,tensorized,overhead,total,ratio\n"));
        assert!(csv.contains("mps,\"1,4,4,12,24,110,9,3,1\",465530,"));
        assert!(!csv.contains('\r'));
    }
}
