//! Quick manual smoke run: train each model on one synthetic graph and
//! print accuracy and timing.

use mwgnn_core::models::{train, ModelSpec, MwgnnConfig, TrainConfig};
use mwgnn_core::synthgen::{generate_graph, SyntheticSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(300);
    let h: f64 = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(0.5);
    let epochs: usize = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(200);
    let ablation: mwgnn_core::models::Ablation = args
        .get(4)
        .map(|v| v.parse().unwrap())
        .unwrap_or(mwgnn_core::models::Ablation::None);
    let mu_gap: f64 = args.get(5).and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let d_meta: usize = args.get(6).and_then(|v| v.parse().ok()).unwrap_or(32);
    let lambda2: f64 = args.get(7).and_then(|v| v.parse().ok()).unwrap_or(0.1);
    let patience: usize = args.get(8).and_then(|v| v.parse().ok()).unwrap_or(30);
    let alpha: f64 = args.get(9).and_then(|v| v.parse().ok()).unwrap_or(0.5);

    let spec = SyntheticSpec::with_target_h(n, 5, 100, 0.05, h, mu_gap, 1.0, 7).unwrap();
    let bundle = generate_graph(&spec).unwrap();
    let h_real = mwgnn_core::metrics::global_edge_homophily(&bundle).unwrap();
    println!(
        "bundle: N={} E={} h={:.3}",
        bundle.num_nodes(),
        bundle.graph.num_edges(),
        h_real
    );

    let train_seed: u64 = args.get(10).and_then(|v| v.parse().ok()).unwrap_or(1);
    let tcfg = TrainConfig {
        max_epochs: epochs,
        seed: train_seed,
        patience,
        ..TrainConfig::default()
    };
    for model in [
        ModelSpec::Mlp {
            layers: 2,
            d_hidden: 128,
        },
        ModelSpec::Gcn {
            layers: 2,
            d_hidden: 128,
        },
        ModelSpec::Mwgnn(MwgnnConfig {
            ablation,
            d_meta,
            d_psi: d_meta,
            lambda2,
            alpha,
            ..MwgnnConfig::default()
        }),
    ] {
        let t0 = std::time::Instant::now();
        let (report, _) = train(&model, &bundle, &tcfg).unwrap();
        println!(
            "{:>6}: test={:.3} val={:.3} best_epoch={} epochs_run={} time={:.1}s ({:.0} ms/epoch)",
            model.name(),
            report.test_acc,
            report.best_val_acc,
            report.best_epoch,
            report.val_acc_history.len(),
            t0.elapsed().as_secs_f64(),
            t0.elapsed().as_secs_f64() * 1e3 / report.val_acc_history.len() as f64,
        );
    }
}
