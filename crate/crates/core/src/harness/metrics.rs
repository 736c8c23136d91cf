use serde::{Deserialize, Serialize};

/// One epoch of a training run. Encoder-decoder runs leave the policy
/// columns empty and vice versa.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_recon: Option<f64>,
    pub train_pred: Option<f64>,
    pub train_plan: Option<f64>,
    pub test_recon: Option<f64>,
    pub test_pred: Option<f64>,
    pub test_plan: Option<f64>,
    pub test_steer: Option<f64>,
    pub test_acc: Option<f64>,
    pub wall_s: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,train_loss,train_recon,train_pred,train_plan,test_recon,test_pred,test_plan,test_steer_smooth_l1,test_acc_accuracy,wall_s";

/// Fixed-precision float formatting shared by every CSV the harness writes.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.9}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

impl MetricsRow {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        [self.train_loss, self.wall_s].into_iter().chain(
            [
                self.train_recon,
                self.train_pred,
                self.train_plan,
                self.test_recon,
                self.test_pred,
                self.test_plan,
                self.test_steer,
                self.test_acc,
            ]
            .into_iter()
            .flatten(),
        )
    }

    pub fn csv_fields(&self) -> String {
        [
            self.epoch.to_string(),
            fmt_f(self.train_loss),
            opt(self.train_recon),
            opt(self.train_pred),
            opt(self.train_plan),
            opt(self.test_recon),
            opt(self.test_pred),
            opt(self.test_plan),
            opt(self.test_steer),
            opt(self.test_acc),
            format!("{:.3}", self.wall_s),
        ]
        .join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_fields());
            out.push('\n');
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.values().all(f64::is_finite))
    }

    /// Mean of `f` over the last `k` rows that have a value.
    pub fn tail_mean(&self, k: usize, f: impl Fn(&MetricsRow) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter_map(&f).collect();
        if vals.is_empty() {
            return None;
        }
        let tail = &vals[vals.len().saturating_sub(k)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn column(&self, f: impl Fn(&MetricsRow) -> Option<f64>) -> Vec<f64> {
        self.rows.iter().filter_map(f).collect()
    }
}

/// Mean and population standard deviation of each index across curves of equal length.
pub fn mean_std(curves: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let n = curves.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for i in 0..len {
        let m = curves.iter().map(|c| c[i]).sum::<f64>() / n;
        let v = curves.iter().map(|c| (c[i] - m).powi(2)).sum::<f64>() / n;
        mean[i] = m;
        std[i] = v.sqrt();
    }
    (mean, std)
}

/// First 1-based epoch at which `curve` reaches `target` (≥), if any.
pub fn convergence_epoch(curve: &[f64], target: f64) -> Option<usize> {
    curve.iter().position(|&v| v >= target).map(|i| i + 1)
}
