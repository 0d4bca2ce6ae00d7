//! Sweep plumbing shared by the CLI and the acceptance suite: per-run
//! records, the results CSV schema, and a deterministic worker pool for
//! fanning independent runs across threads.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::bundle::GraphBundle;
use crate::metrics::global_edge_homophily;
use crate::models::{train, ModelSpec, Result, TrainConfig};

/// One row of the results CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub model: String,
    pub variant: String,
    pub seed: u64,
    pub h: f64,
    pub alpha: f64,
    pub k: usize,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    pub wall_time_ms: f64,
}

pub const CSV_HEADER: &str =
    "dataset,model,variant,seed,h,alpha,k,best_epoch,val_acc,test_acc,wall_time_ms";

/// Six significant digits, plain decimal notation.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

impl RunRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.model,
            self.variant,
            self.seed,
            fmt_sig(self.h),
            fmt_sig(self.alpha),
            self.k,
            self.best_epoch,
            fmt_sig(self.val_acc),
            fmt_sig(self.test_acc),
            fmt_sig(self.wall_time_ms),
        )
    }
}

/// Header plus one row per record, sorted by (dataset, model, seed).
pub fn render_csv(records: &[RunRecord]) -> String {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.dataset, &a.model, a.seed, &a.variant).cmp(&(&b.dataset, &b.model, b.seed, &b.variant))
    });
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Train one model on one bundle and summarize it as a CSV record.
pub fn run_one(
    dataset: &str,
    bundle: &GraphBundle,
    model: &ModelSpec,
    tcfg: &TrainConfig,
) -> Result<RunRecord> {
    let (report, _) = train(model, bundle, tcfg)?;
    let (alpha, k, variant) = match model {
        ModelSpec::Mwgnn(cfg) => (cfg.alpha, cfg.k, cfg.ablation.to_string()),
        _ => (f64::NAN, 0, "none".to_string()),
    };
    let h = global_edge_homophily(bundle).unwrap_or(f64::NAN);
    Ok(RunRecord {
        dataset: dataset.to_string(),
        model: model.name().to_string(),
        variant,
        seed: tcfg.seed,
        h,
        alpha,
        k,
        best_epoch: report.best_epoch,
        val_acc: report.best_val_acc,
        test_acc: report.test_acc,
        wall_time_ms: report.wall_time_ms,
    })
}

/// Worker count: the MWGNN_THREADS environment variable, defaulting to 1.
pub fn worker_count() -> usize {
    std::env::var("MWGNN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(1)
}

/// Run independent jobs across `workers` threads. Job outputs land at their
/// job index, so results are identical for any worker count.
pub fn parallel_map<T, F>(jobs: Vec<F>, workers: usize) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let n = jobs.len();
    if workers <= 1 || n <= 1 {
        return jobs.into_iter().map(|j| j()).collect();
    }
    let queue: Vec<Mutex<Option<F>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(n) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let job = queue[i].lock().unwrap().take().expect("job taken once");
                *results[i].lock().unwrap() = Some(job());
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("job ran"))
        .collect()
}
