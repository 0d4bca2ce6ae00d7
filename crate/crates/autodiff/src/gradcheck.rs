//! Central finite differences against tape gradients.
//!
//! The checker only calls the forward path, so it stays independent of the
//! reverse sweep it validates.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    /// (param name, flat index, analytic, finite-difference) of the worst probe.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Probe `probes` random parameter coordinates with step `h` and compare the
/// central difference of `loss_fn` against `analytic`.
pub fn check_gradients(
    params: &ParamStore,
    analytic: &IndexMap<String, Array2<f64>>,
    mut loss_fn: impl FnMut(&ParamStore) -> Result<f64>,
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = params.names().cloned().collect();
    let mut report = GradCheckReport {
        probes: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for _ in 0..probes {
        let name = &names[rng.gen_range(0..names.len())];
        let len = params.get(name)?.len();
        let idx = rng.gen_range(0..len);

        let mut perturbed = params.clone();
        bump(&mut perturbed, name, idx, h)?;
        let up = loss_fn(&perturbed)?;
        bump(&mut perturbed, name, idx, -2.0 * h)?;
        let down = loss_fn(&perturbed)?;
        let fd = (up - down) / (2.0 * h);

        let an = analytic
            .get(name)
            .map(|g| g.as_slice().expect("contiguous")[idx])
            .unwrap_or(0.0);
        let denom = an.abs().max(fd.abs()).max(1e-6);
        let rel = (an - fd).abs() / denom;
        report.probes += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((name.clone(), idx, an, fd));
        }
    }
    Ok(report)
}

fn bump(params: &mut ParamStore, name: &str, idx: usize, delta: f64) -> Result<()> {
    let arr = params.get_mut(name)?;
    arr.as_slice_mut().expect("contiguous")[idx] += delta;
    Ok(())
}
