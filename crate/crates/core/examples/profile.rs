//! Manual stage timing for one training epoch shape.

use std::time::Instant;

use mwgnn_core::models::{
    init_mwgnn_params, mwgnn_forward, precompute, MwgnnConfig, TrainConfig,
};
use mwgnn_core::synthgen::{generate_graph, SyntheticSpec};
use mwgnn_core::autodiff::{AdamConfig, AdamState, Tape};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(1000);
    let h: f64 = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(0.1);
    let d_meta: usize = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(16);

    let spec = SyntheticSpec::with_target_h(n, 5, 100, 0.05, h, 1.0, 1.0, 7).unwrap();
    let bundle = generate_graph(&spec).unwrap();
    println!("N={} E={}", bundle.num_nodes(), bundle.graph.num_edges());

    let cfg = MwgnnConfig {
        d_meta,
        d_psi: d_meta,
        ..MwgnnConfig::default()
    };
    let tcfg = TrainConfig::default();
    let t0 = Instant::now();
    let pre = precompute(&bundle, &cfg).unwrap();
    println!("precompute: {:.0} ms", t0.elapsed().as_secs_f64() * 1e3);
    let mut params = init_mwgnn_params(&bundle, &cfg, tcfg.seed).unwrap();
    let mut adam = AdamState::new(AdamConfig::new(tcfg.lr, tcfg.weight_decay), &params);

    let labels = std::rc::Rc::new(bundle.labels.clone());
    let mask = std::rc::Rc::new(bundle.train_mask.clone());
    for epoch in 0..5 {
        let t0 = Instant::now();
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape);
        let out = mwgnn_forward(&mut tape, &binding, &bundle, &pre, &cfg).unwrap();
        let t_fwd = t0.elapsed().as_secs_f64() * 1e3;
        let nodes_fwd = tape.len();
        let loss = tape
            .masked_cross_entropy(out.logits, labels.clone(), mask.clone())
            .unwrap();
        let t1 = Instant::now();
        tape.backward(loss).unwrap();
        let t_bwd = t1.elapsed().as_secs_f64() * 1e3;
        let t2 = Instant::now();
        let grads = binding.grads(&tape).unwrap();
        adam.step(&mut params, &grads).unwrap();
        let t_adam = t2.elapsed().as_secs_f64() * 1e3;
        println!(
            "epoch {epoch}: fwd {t_fwd:.0} ms ({nodes_fwd} tape nodes), bwd {t_bwd:.0} ms, adam {t_adam:.0} ms"
        );
    }
}
