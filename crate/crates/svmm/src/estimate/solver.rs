//! A small derivative-free simplex minimizer (Nelder-Mead) for the extension
//! moment matcher. Standard coefficients: reflection 1, expansion 2,
//! contraction 1/2, shrink 1/2. Non-finite objective values are treated as
//! infinitely bad, which is how the callers encode invalid parameter
//! candidates.

/// Termination controls.
#[derive(Debug, Clone, Copy)]
pub struct NmOptions {
    /// Budget of objective evaluations.
    pub max_evals: usize,
    /// Converged when the simplex function spread falls below
    /// `ftol * (1 + |f_best|)`.
    pub ftol: f64,
    /// ... and the simplex diameter below `xtol * (1 + |x_best|_inf)`.
    pub xtol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self { max_evals: 20_000, ftol: 1e-14, xtol: 1e-9 }
    }
}

/// Best point found, its value, the evaluation count, and whether the
/// simplex collapsed within budget.
#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0`, with the initial simplex spanned by per-dimension
/// offsets `step`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    opts: &NmOptions,
) -> NmResult {
    let n = x0.len();
    assert!(n >= 1, "need at least one dimension");
    assert_eq!(step.len(), n, "one step per dimension");

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };

    // Initial simplex: x0 plus one vertex per coordinate offset.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let (fb, fw) = (simplex[0].1, simplex[n].1);
        let spread_ok = fw.is_finite() && (fw - fb).abs() <= opts.ftol * (1.0 + fb.abs());
        let xb_scale = 1.0 + simplex[0].0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diam = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if spread_ok && diam <= opts.xtol * xb_scale {
            converged = true;
            break;
        }

        // Centroid of all vertices but the worst.
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let mix = |a: f64| -> Vec<f64> {
            centroid.iter().zip(&worst).map(|(c, w)| c + a * (c - w)).collect()
        };

        let xr = mix(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = mix(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = mix(0.5); // outside contraction
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = mix(-0.5); // inside contraction
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (xc, fc);
            } else {
                // Shrink every vertex toward the best one.
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    for (v, b) in entry.0.iter_mut().zip(&best) {
                        *v = b + 0.5 * (*v - b);
                    }
                    entry.1 = eval(&entry.0.clone(), &mut evals);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, fx) = simplex.swap_remove(0);
    NmResult { x, fx, evals, converged }
}
