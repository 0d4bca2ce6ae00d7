//! Manual check on the combined-graph benchmarks: full model vs the
//! no-meta ablation over a few seeds.

use mwgnn_core::metrics::global_edge_homophily;
use mwgnn_core::models::{run_ablation, Ablation, MwgnnConfig, TrainConfig};
use mwgnn_core::synthgen::{combine_graphs, CombineSpec, SyntheticSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("mixed");
    let mu_gap: f64 = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let seeds: u64 = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(3);
    let d_meta: usize = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(16);

    let spec = match which {
        "homo" => CombineSpec {
            spec_1: SyntheticSpec::with_target_h(500, 5, 100, 0.20, 0.50, mu_gap, 1.0, 71).unwrap(),
            spec_2: SyntheticSpec::with_target_h(500, 5, 100, 0.20, 0.50, mu_gap, 1.0, 72).unwrap(),
            cross_edge_prob: 0.010,
            seed: 73,
        },
        "mixedperm" => {
            let spec_1 =
                SyntheticSpec::with_target_h(500, 5, 100, 0.04, 0.10, mu_gap, 1.0, 71).unwrap();
            let mut spec_2 =
                SyntheticSpec::with_target_h(500, 5, 100, 0.30, 0.75, mu_gap, 1.0, 72).unwrap();
            // Second half expresses each class with the next class's mean:
            // feature similarity no longer implies label agreement across
            // halves.
            spec_2.class_means.rotate_left(1);
            CombineSpec {
                spec_1,
                spec_2,
                cross_edge_prob: 0.014,
                seed: 73,
            }
        }
        "mixeddense" => {
            let spec_1 =
                SyntheticSpec::with_target_h(500, 5, 100, 0.06, 0.10, mu_gap, 1.0, 71).unwrap();
            let mut spec_2 =
                SyntheticSpec::with_target_h(500, 5, 100, 0.45, 0.75, mu_gap, 1.0, 72).unwrap();
            spec_2.class_means.rotate_left(1);
            CombineSpec {
                spec_1,
                spec_2,
                cross_edge_prob: 0.014,
                seed: 73,
            }
        }
        _ => CombineSpec {
            spec_1: SyntheticSpec::with_target_h(500, 5, 100, 0.04, 0.10, mu_gap, 1.0, 71).unwrap(),
            spec_2: SyntheticSpec::with_target_h(500, 5, 100, 0.30, 0.75, mu_gap, 1.0, 72).unwrap(),
            cross_edge_prob: 0.014,
            seed: 73,
        },
    };
    let bundle = combine_graphs(&spec).unwrap();
    println!(
        "{which}: N={} E={} h={:.3}",
        bundle.num_nodes(),
        bundle.graph.num_edges(),
        global_edge_homophily(&bundle).unwrap()
    );

    let k: usize = args.get(5).and_then(|v| v.parse().ok()).unwrap_or(2);
    let lambda1: f64 = args.get(6).and_then(|v| v.parse().ok()).unwrap_or(0.1);
    let lambda2: f64 = args.get(7).and_then(|v| v.parse().ok()).unwrap_or(0.1);
    let alpha: f64 = args.get(8).and_then(|v| v.parse().ok()).unwrap_or(0.5);
    let cfg = MwgnnConfig {
        d_meta,
        d_psi: d_meta,
        k,
        lambda1,
        lambda2,
        alpha,
        ..MwgnnConfig::default()
    };
    let patience: usize = args.get(9).and_then(|v| v.parse().ok()).unwrap_or(30);
    let max_epochs: usize = args.get(10).and_then(|v| v.parse().ok()).unwrap_or(200);
    let tcfg = TrainConfig {
        patience,
        max_epochs,
        ..TrainConfig::default()
    };
    let seed_list: Vec<u64> = (0..seeds).collect();
    for variant in [Ablation::None, Ablation::NoMeta] {
        let t0 = std::time::Instant::now();
        let out = run_ablation(&bundle, &cfg, variant, &tcfg, &seed_list).unwrap();
        println!(
            "{:>10}: mean={:.4} std={:.4} accs={:?} ({:.0}s)",
            out.variant,
            out.mean,
            out.std,
            out.accs.iter().map(|a| (a * 1e3).round() / 1e3).collect::<Vec<_>>(),
            t0.elapsed().as_secs_f64()
        );
    }
}
