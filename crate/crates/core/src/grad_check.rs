//! Central finite differences for gradient verification. Used by the
//! `selftest` command and by tests; kept independent of the analytic
//! backward passes it checks.

/// Central-difference gradient of a scalar function at `params`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let fp = f(&p);
        p[i] = orig - h;
        let fm = f(&p);
        p[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Largest relative error between analytic and numeric gradients, with an
/// absolute floor so near-zero pairs do not blow up the ratio.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs()).max(1e-6);
            (a - n).abs() / scale
        })
        .fold(0.0, f64::max)
}
