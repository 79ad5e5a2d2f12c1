//! Wall-clock scaling of deformable versus dense cross-attention.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::camf::deform_attn;
use crate::error::{Error, Result};
use crate::oracle::dense_cross_attention;
use crate::testkit as tk;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Query/key counts (H·W); each must be a perfect square.
    pub sizes: Vec<usize>,
    pub channels: usize,
    pub heads: usize,
    pub points: usize,
    pub seed: u64,
    /// Deform rounds repeat at least `min_runs` times and until this much
    /// time has been spent; the fastest run per size is kept.
    pub min_sample: Duration,
    pub min_runs: usize,
    /// Rounds of the dense oracle; each is seconds long at the largest size.
    pub dense_runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![256, 1024, 4096, 16384],
            channels: 32,
            heads: 4,
            points: 4,
            seed: 11,
            min_sample: Duration::from_millis(200),
            min_runs: 7,
            dense_runs: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: &'static str,
    pub hw: usize,
    pub side: usize,
    pub millis: f64,
    /// Time growth per doubling of H·W, relative to the previous row of the
    /// same method.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn ratios(&self, method: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method).filter_map(|r| r.ratio).collect()
    }

    pub fn max_ratio(&self, method: &str) -> f64 {
        self.ratios(method).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ratio(&self, method: &str) -> f64 {
        self.ratios(method).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<12} {:>7} {:>5} {:>12} {:>8}\n", "method", "H*W", "side", "ms", "ratio");
        for r in &self.rows {
            let ratio = r.ratio.map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(s, "{:<12} {:>7} {:>5} {:>12.3} {:>8}", r.method, r.hw, r.side, r.millis, ratio);
        }
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "hw", "side", "millis", "ratio"]).map_err(|e| Error::format(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.method.to_string(),
                r.hw.to_string(),
                r.side.to_string(),
                format!("{:.6}", r.millis),
                r.ratio.map_or(String::new(), |v| format!("{v:.4}")),
            ])
            .map_err(|e| Error::format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::format(e.to_string()))
    }
}

fn side_of(hw: usize) -> Result<usize> {
    let s = (hw as f64).sqrt().round() as usize;
    if s * s != hw || s == 0 {
        return Err(Error::config(format!("bench size {hw} is not a square")));
    }
    Ok(s)
}

fn time_ms(f: impl FnOnce() -> Result<()>) -> Result<f64> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

/// Growth per doubling of H·W when adjacent sizes differ by `hw_ratio`.
fn per_doubling(t_prev: f64, t: f64, hw_ratio: f64) -> f64 {
    (t / t_prev).powf(1.0 / hw_ratio.log2())
}

/// Times both methods at each size on a single thread.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchTable> {
    if cfg.sizes.is_empty() || cfg.channels % cfg.heads != 0 {
        return Err(Error::config("bench needs sizes and channels divisible by heads"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::config(e.to_string()))?;
    pool.install(|| {
        let mut rng = tk::rng(cfg.seed);
        let p = tk::deform(&mut rng, cfg.channels, cfg.channels, cfg.heads, cfg.points);
        let mut inputs = Vec::new();
        for &hw in &cfg.sizes {
            let side = side_of(hw)?;
            let z = tk::feature_map(&mut rng, cfg.channels, side, side, 1.0);
            let f = tk::feature_map(&mut rng, cfg.channels, side, side, 1.0);
            let (q, kv) = (z.to_pixel_matrix(), f.to_pixel_matrix());
            inputs.push((hw, side, z, f, q, kv));
        }
        // sizes are interleaved round-robin so a slow spell on a shared core
        // hits every size rather than skewing one of them
        let mut best_def = vec![f64::INFINITY; inputs.len()];
        let start = Instant::now();
        let mut round = 0;
        while round < cfg.min_runs || start.elapsed() < cfg.min_sample {
            for (b, (_, _, z, f, _, _)) in best_def.iter_mut().zip(&inputs) {
                *b = b.min(time_ms(|| deform_attn(z, None, f, &p).map(|_| ()))?);
            }
            round += 1;
        }
        let mut best_dense = vec![f64::INFINITY; inputs.len()];
        for _ in 0..cfg.dense_runs.max(1) {
            for (b, (_, _, _, _, q, kv)) in best_dense.iter_mut().zip(&inputs) {
                *b = b.min(time_ms(|| {
                    std::hint::black_box(dense_cross_attention(q, kv, kv));
                    Ok(())
                })?);
            }
        }
        let deform_rows: Vec<_> = inputs.iter().zip(&best_def).map(|(i, &t)| (i.0, i.1, t)).collect();
        let dense_rows: Vec<_> = inputs.iter().zip(&best_dense).map(|(i, &t)| (i.0, i.1, t)).collect();
        let mut rows = Vec::new();
        for (method, series) in [("deform_attn", deform_rows), ("dense_attn", dense_rows)] {
            for (i, &(hw, side, ms)) in series.iter().enumerate() {
                let ratio = (i > 0).then(|| {
                    let (hw0, _, ms0) = series[i - 1];
                    per_doubling(ms0, ms, hw as f64 / hw0 as f64)
                });
                rows.push(BenchRow {
                    method,
                    hw,
                    side,
                    millis: ms,
                    ratio,
                });
            }
        }
        Ok(BenchTable { rows })
    })
}
