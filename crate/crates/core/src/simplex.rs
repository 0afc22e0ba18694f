//! Box-constrained Nelder-Mead.

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SimplexOptions {
    /// Stop once every vertex lies within this distance (max norm) of the
    /// best one.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Fresh simplices built around the incumbent after convergence; the
    /// search stops at the first restart that does not improve it.
    pub restarts: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Minimizes `f` over the box `[lo, hi]` starting from `x0`, whose value is
/// always kept as a vertex so the result is never worse than the start.
/// `steps` gives the initial edge length per coordinate; an edge that would
/// leave the box is flipped.
pub(crate) fn minimize<F>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    lo: &[f64],
    hi: &[f64],
    options: SimplexOptions,
) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut best_x = x0.to_vec();
    project(&mut best_x, lo, hi);
    let mut best_f = eval(&best_x);
    if d == 0 {
        return SimplexResult {
            x: best_x,
            f: best_f,
            iterations: 0,
            converged: true,
        };
    }

    let mut iterations = 0;
    let mut converged = false;
    for round in 0..=options.restarts {
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
        simplex.push((best_x.clone(), best_f));
        for i in 0..d {
            let mut v = best_x.clone();
            let step = steps[i];
            v[i] = if v[i] + step <= hi[i] {
                v[i] + step
            } else {
                v[i] - step
            };
            project(&mut v, lo, hi);
            let fv = eval(&v);
            simplex.push((v, fv));
        }

        let mut round_converged = false;
        while iterations < options.max_iterations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[1..]
                .iter()
                .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0f64, f64::max);
            if spread <= options.tolerance {
                round_converged = true;
                break;
            }
            iterations += 1;

            let mut centroid = vec![0.0; d];
            for (v, _) in &simplex[..d] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / d as f64;
                }
            }
            let along = |coef: f64, worst: &[f64]| {
                let mut p: Vec<f64> = centroid
                    .iter()
                    .zip(worst)
                    .map(|(c, w)| c + coef * (c - w))
                    .collect();
                project(&mut p, lo, hi);
                p
            };

            let worst = simplex[d].0.clone();
            let f_best = simplex[0].1;
            let f_second = simplex[d - 1].1;
            let f_worst = simplex[d].1;
            let xr = along(REFLECT, &worst);
            let fr = eval(&xr);
            if fr < f_best {
                let xe = along(EXPAND, &worst);
                let fe = eval(&xe);
                simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < f_second {
                simplex[d] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < f_worst {
                let xc = along(CONTRACT * REFLECT, &worst);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-CONTRACT, &worst);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < f_worst.min(fr) {
                simplex[d] = (xc, fc);
                continue;
            }
            let anchor = simplex[0].0.clone();
            for (v, fv) in simplex.iter_mut().skip(1) {
                for (x, a) in v.iter_mut().zip(&anchor) {
                    *x = a + SHRINK * (*x - a);
                }
                *fv = eval(v);
            }
        }

        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, fx) = simplex.swap_remove(0);
        let improved = fx < best_f;
        if fx <= best_f {
            best_x = x;
            best_f = fx;
        }
        converged = round_converged;
        if !round_converged || (round > 0 && !improved) {
            break;
        }
    }

    SimplexResult {
        x: best_x,
        f: best_f,
        iterations,
        converged,
    }
}
