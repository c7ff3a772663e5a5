//! Full-reference evaluation: MSE, PSNR, SSIM and ER3C (error of the ratio
//! of three channels), plus the dataset evaluation harness and report
//! serialization (CSV, JSON, aligned table).

use rayon::prelude::*;
use serde_json::json;

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::loss;
use crate::net::{hifi_forward, NetworkParams};
use crate::tensor::{kernels, Tensor};

fn check_same_shape(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "metric inputs must have equal shapes, got {} and {}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let sq = kernels::zip_map(pred, gt, |a, b| (a - b) * (a - b));
    Ok(kernels::mean_all(&sq))
}

/// `10 * log10(max_val^2 / mse)`; infinity when the error is zero.
pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

pub fn psnr(pred: &Tensor, gt: &Tensor, max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) {
        return Err(Error::Usage(format!("psnr max_val must be positive, got {max_val}")));
    }
    Ok(psnr_from_mse(mse(pred, gt)?, max_val))
}

/// Guard for the per-pixel average gray value: black pixels would make the
/// channel ratios undefined, so denominators are floored at this value.
pub const ER3C_DELTA: f64 = 1e-8;

/// Error of the ratio of three channels: the mean over pixels of the L1
/// distance between per-pixel `channel / average-gray` vectors of the two
/// images. Zero iff the RGB structure matches; invariant to per-pixel
/// positive scaling of either image.
pub fn er3c(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let s = pred.shape();
    if s.c != 3 {
        return Err(Error::Usage(format!("er3c requires 3-channel images, got {}", s)));
    }
    let (p, g) = (pred.data(), gt.data());
    let hw = s.h * s.w;
    let mut acc = 0.0;
    for n in 0..s.n {
        let p0 = &p[s.plane(n, 0)..s.plane(n, 0) + hw];
        let p1 = &p[s.plane(n, 1)..s.plane(n, 1) + hw];
        let p2 = &p[s.plane(n, 2)..s.plane(n, 2) + hw];
        let g0 = &g[s.plane(n, 0)..s.plane(n, 0) + hw];
        let g1 = &g[s.plane(n, 1)..s.plane(n, 1) + hw];
        let g2 = &g[s.plane(n, 2)..s.plane(n, 2) + hw];
        for i in 0..hw {
            let pa = ((p0[i] + p1[i] + p2[i]) / 3.0).max(ER3C_DELTA);
            let ga = ((g0[i] + g1[i] + g2[i]) / 3.0).max(ER3C_DELTA);
            acc += (p0[i] / pa - g0[i] / ga).abs()
                + (p1[i] / pa - g1[i] / ga).abs()
                + (p2[i] / pa - g2[i] / ga).abs();
        }
    }
    Ok(acc / (s.n * hw) as f64)
}

/// One evaluated image pair.
#[derive(Clone, Debug)]
pub struct MetricRow {
    pub id: String,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub er3c: f64,
}

/// Mean and (population) standard deviation of one metric column.
#[derive(Clone, Copy, Debug)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: impl Iterator<Item = f64> + Clone, count: usize) -> Aggregate {
    let mean = values.clone().sum::<f64>() / count as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    Aggregate { mean, std: var.sqrt() }
}

/// Per-image and aggregate metrics for one evaluation run. Aggregates are
/// always recomputed from the rows.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub per_image: Vec<MetricRow>,
    pub errors: Vec<(String, String)>,
}

pub const CSV_HEADER: &str = "id,mse,psnr,ssim,er3c";

impl MetricReport {
    pub fn count(&self) -> usize {
        self.per_image.len()
    }

    pub fn aggregate_mse(&self) -> Aggregate {
        aggregate(self.per_image.iter().map(|r| r.mse), self.count())
    }

    pub fn aggregate_psnr(&self) -> Aggregate {
        aggregate(self.per_image.iter().map(|r| r.psnr), self.count())
    }

    pub fn aggregate_ssim(&self) -> Aggregate {
        aggregate(self.per_image.iter().map(|r| r.ssim), self.count())
    }

    pub fn aggregate_er3c(&self) -> Aggregate {
        aggregate(self.per_image.iter().map(|r| r.er3c), self.count())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.per_image {
            out.push_str(&format!("{},{},{},{},{}\n", r.id, r.mse, r.psnr, r.ssim, r.er3c));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let num = |v: f64| -> serde_json::Value {
            if v.is_finite() {
                json!(v)
            } else {
                json!(v.to_string())
            }
        };
        let agg = |a: Aggregate| json!({ "mean": num(a.mean), "std": num(a.std) });
        json!({
            "count": self.count(),
            "per_image": self.per_image.iter().map(|r| json!({
                "id": r.id,
                "mse": num(r.mse),
                "psnr": num(r.psnr),
                "ssim": num(r.ssim),
                "er3c": num(r.er3c),
            })).collect::<Vec<_>>(),
            "aggregate": {
                "mse": agg(self.aggregate_mse()),
                "psnr": agg(self.aggregate_psnr()),
                "ssim": agg(self.aggregate_ssim()),
                "er3c": agg(self.aggregate_er3c()),
            },
            "errors": self.errors.iter().map(|(id, msg)| json!({ "id": id, "error": msg })).collect::<Vec<_>>(),
        })
    }

    /// Aligned summary table for terminal output.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>12} {:>10} {:>8} {:>10}\n",
            "id", "mse", "psnr", "ssim", "er3c"
        ));
        for r in &self.per_image {
            out.push_str(&format!(
                "{:<24} {:>12.6} {:>10.4} {:>8.4} {:>10.6}\n",
                r.id, r.mse, r.psnr, r.ssim, r.er3c
            ));
        }
        let (m, p, s, e) = (
            self.aggregate_mse(),
            self.aggregate_psnr(),
            self.aggregate_ssim(),
            self.aggregate_er3c(),
        );
        out.push_str(&format!(
            "{:<24} {:>12.6} {:>10.4} {:>8.4} {:>10.6}\n",
            "mean", m.mean, p.mean, s.mean, e.mean
        ));
        out.push_str(&format!(
            "{:<24} {:>12.6} {:>10.4} {:>8.4} {:>10.6}\n",
            "std", m.std, p.std, s.std, e.std
        ));
        out
    }
}

/// All four metrics for one prediction/ground-truth pair (in [0,1]).
pub fn compare_pair(id: &str, pred: &Tensor, gt: &Tensor) -> Result<MetricRow> {
    let mse_v = mse(pred, gt)?;
    Ok(MetricRow {
        id: id.to_string(),
        mse: mse_v,
        psnr: psnr_from_mse(mse_v, 1.0),
        ssim: loss::ssim(pred, gt)?,
        er3c: er3c(pred, gt)?,
    })
}

/// Evaluates an enhancement function over a pair list. Per-item failures are
/// recorded and the run continues; rows keep the input order.
pub fn evaluate_with(
    pairs: &[ImagePair],
    enhance: impl Fn(&Tensor) -> Result<Tensor> + Sync,
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Usage("evaluation requires a non-empty pair list".to_string()));
    }
    let results: Vec<std::result::Result<MetricRow, (String, String)>> = pairs
        .par_iter()
        .map(|pair| {
            let run = || -> Result<MetricRow> {
                let enhanced = enhance(&pair.degraded)?.clamp(0.0, 1.0);
                compare_pair(&pair.id, &enhanced, &pair.ground_truth)
            };
            run().map_err(|e| (pair.id.clone(), e.to_string()))
        })
        .collect();

    let mut per_image = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(row) => per_image.push(row),
            Err(e) => errors.push(e),
        }
    }
    Ok(MetricReport { per_image, errors })
}

/// Runs the network over every degraded image (clamping its output to
/// [0,1]) and compares against the ground truth.
pub fn evaluate_dataset(pairs: &[ImagePair], params: &NetworkParams) -> Result<MetricReport> {
    evaluate_with(pairs, |degraded| hifi_forward(degraded, params))
}

/// Scores the degraded images directly against ground truth (identity
/// enhancement); the baseline every enhancer must beat.
pub fn evaluate_identity(pairs: &[ImagePair]) -> Result<MetricReport> {
    evaluate_with(pairs, |degraded| Ok(degraded.clone()))
}
