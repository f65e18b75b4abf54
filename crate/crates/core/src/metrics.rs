//! Error measures for rollouts against reference snapshots.

use rayon::prelude::*;

use crate::burgers::central_difference_oracle;
use crate::dataset::SnapshotDataset;
use crate::error::{Error, Result};
use crate::integrator::{rollout, IntegratorConfig, Scheme};
use crate::model::{Domain, GradeModel};
use crate::tensor::Tensor;

/// Predicted or reference states indexed `[sample][time]`.
pub type Rollouts = Vec<Vec<Tensor>>;

fn check_pair(pred: &[Vec<Tensor>], target: &[Vec<Tensor>], j: usize) -> Result<()> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::shape(
            "metrics",
            format!("{} predicted samples, {} reference samples", pred.len(), target.len()),
        ));
    }
    for (p, t) in pred.iter().zip(target) {
        if j >= p.len() || j >= t.len() {
            return Err(Error::shape("metrics", format!("time index {j} out of range")));
        }
        p[j].same_shape(&t[j], "metrics")?;
    }
    Ok(())
}

/// `ε_j = Σ_samples ||u_pred,j − u_true,j||²`, unnormalised.
pub fn l2_error_per_time_index(pred: &[Vec<Tensor>], target: &[Vec<Tensor>], j: usize) -> Result<f64> {
    check_pair(pred, target, j)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            p[j].data()
                .iter()
                .zip(t[j].data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum())
}

/// Per-entry `|pred − target|`.
pub fn l1_error_field(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    pred.same_shape(target, "l1_error_field")?;
    let data = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).collect();
    Tensor::new(pred.shape().to_vec(), data)
}

/// Mean over samples of `||pred_j − true_j|| / ||true_j||` for every `j`.
pub fn relative_errors(pred: &[Vec<Tensor>], target: &[Vec<Tensor>]) -> Result<Vec<f64>> {
    let steps = pred.first().map_or(0, |p| p.len());
    (0..steps)
        .map(|j| {
            check_pair(pred, target, j)?;
            let total: f64 = pred
                .iter()
                .zip(target)
                .map(|(p, t)| relative_l2(p[j].data(), t[j].data()))
                .sum();
            Ok(total / pred.len() as f64)
        })
        .collect()
}

pub(crate) fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Reference snapshots `0..=steps` of the given samples.
pub fn reference(ds: &SnapshotDataset, samples: std::ops::Range<usize>, steps: usize) -> Result<Rollouts> {
    if steps >= ds.n_times || samples.end > ds.n_samples {
        return Err(Error::config(format!(
            "dataset has {} samples × {} snapshots, asked for samples {samples:?} to index {steps}",
            ds.n_samples, ds.n_times
        )));
    }
    Ok(samples.map(|s| (0..=steps).map(|k| ds.snapshot(s, k)).collect()).collect())
}

/// Roll the model out from each sample's first snapshot.
pub fn predict(
    model: &GradeModel,
    domain: &Domain,
    ds: &SnapshotDataset,
    samples: std::ops::Range<usize>,
    steps: usize,
    scheme: Scheme,
) -> Result<Rollouts> {
    if samples.end > ds.n_samples {
        return Err(Error::config(format!("sample range {samples:?} exceeds {}", ds.n_samples)));
    }
    let cfg = IntegratorConfig::new(scheme, ds.dt, steps)?;
    samples
        .into_par_iter()
        .map(|s| {
            let mut sys = model.system(domain)?;
            rollout(&mut sys, &ds.snapshot(s, 0), &cfg)
                .map(|t| t.states)
                .map_err(|e| e.with_context(format!("prediction for sample {s}")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub time_index: usize,
    pub eps_l2: f64,
    pub mean_l1: f64,
    /// `ε_j` divided by samples × nodes × channels.
    pub eps_l2_normalized: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub model_id: String,
    pub dataset_id: String,
    pub rows: Vec<MetricsRow>,
}

const HEADER: &str = "time_index,eps_l2,mean_l1,eps_l2_normalized";

impl MetricsTable {
    pub fn compute(pred: &[Vec<Tensor>], target: &[Vec<Tensor>], model_id: &str, dataset_id: &str) -> Result<Self> {
        let steps = pred.first().map_or(0, |p| p.len());
        let mut rows = Vec::with_capacity(steps);
        for j in 0..steps {
            let eps = l2_error_per_time_index(pred, target, j)?;
            let entries: usize = pred.iter().map(|p| p[j].len()).sum();
            let mut l1 = 0.0;
            for (p, t) in pred.iter().zip(target) {
                l1 += l1_error_field(&p[j], &t[j])?.sum();
            }
            rows.push(MetricsRow {
                time_index: j,
                eps_l2: eps,
                mean_l1: l1 / entries as f64,
                eps_l2_normalized: eps / entries as f64,
            });
        }
        Ok(MetricsTable {
            model_id: model_id.to_string(),
            dataset_id: dataset_id.to_string(),
            rows,
        })
    }

    /// CSV with `#` metadata lines; floats use 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# model_id={}\n# dataset_id={}\n{HEADER}\n", self.model_id, self.dataset_id);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e}\n",
                r.time_index, r.eps_l2, r.mean_l1, r.eps_l2_normalized
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut table = MetricsTable::default();
        let mut header_seen = false;
        for (n, line) in text.lines().enumerate() {
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k {
                        "model_id" => table.model_id = v.to_string(),
                        "dataset_id" => table.dataset_id = v.to_string(),
                        _ => {}
                    }
                }
                continue;
            }
            if !header_seen {
                if line != HEADER {
                    return Err(Error::Format(format!("metrics header {line:?}")));
                }
                header_seen = true;
                continue;
            }
            let bad = || Error::Format(format!("metrics line {}: {line:?}", n + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            table.rows.push(MetricsRow {
                time_index: f[0].parse().map_err(|_| bad())?,
                eps_l2: num(1)?,
                mean_l1: num(2)?,
                eps_l2_normalized: num(3)?,
            });
        }
        if !header_seen {
            return Err(Error::Format("metrics file has no header".into()));
        }
        if table.rows.windows(2).any(|w| w[1].time_index <= w[0].time_index) {
            return Err(Error::Format("time indices must increase".into()));
        }
        Ok(table)
    }
}

/// Relative L2 discrepancy of the model's derivative layers against
/// central differences, averaged over snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeReport {
    pub snapshots: usize,
    pub first_order: f64,
    pub second_order: f64,
    /// First-order discrepancy after the best single scalar rescaling of
    /// the layer output. Shows how much of the gap is a scale factor.
    pub first_order_scaled: f64,
}

pub fn derivative_capture_report(
    model: &GradeModel,
    domain: &Domain,
    ds: &SnapshotDataset,
    samples: std::ops::Range<usize>,
    times: std::ops::Range<usize>,
) -> Result<DerivativeReport> {
    if model.config().ndim != ds.ndim() || domain.n_nodes() != ds.n_nodes() {
        return Err(Error::shape(
            "derivative_capture_report",
            format!("{}-D model, dataset grid {:?}", model.config().ndim, ds.dims),
        ));
    }
    if samples.end > ds.n_samples || times.end > ds.n_times || samples.is_empty() || times.is_empty() {
        return Err(Error::config("snapshot range outside the dataset"));
    }
    let spacing = ds.spacing();
    let mut acc = [0.0; 3];
    let mut count = 0;
    for s in samples {
        for t in times.clone() {
            let u = ds.snapshot(s, t);
            let g = model.graph_layer1(domain, &u)?;
            let h = model.graph_layer2(domain, &g)?;
            let g_ref = central_difference_oracle(&u, &ds.dims, &spacing, 1)?;
            let h_ref = central_difference_oracle(&u, &ds.dims, &spacing, 2)?;
            acc[0] += relative_l2(g.data(), g_ref.data());
            acc[1] += relative_l2(h.data(), h_ref.data());
            let gg: f64 = g.data().iter().map(|v| v * v).sum();
            let a = if gg > 0.0 {
                g.data().iter().zip(g_ref.data()).map(|(x, y)| x * y).sum::<f64>() / gg
            } else {
                0.0
            };
            let scaled: Vec<f64> = g.data().iter().map(|v| a * v).collect();
            acc[2] += relative_l2(&scaled, g_ref.data());
            count += 1;
        }
    }
    let n = count as f64;
    Ok(DerivativeReport {
        snapshots: count,
        first_order: acc[0] / n,
        second_order: acc[1] / n,
        first_order_scaled: acc[2] / n,
    })
}
