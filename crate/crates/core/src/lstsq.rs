//! Householder least squares for tall systems with four unknowns.

/// Number of unknowns.
pub(crate) const P: usize = 4;

/// Ratio of extreme diagonal entries of `R`, after column equilibration,
/// above which the design is treated as rank deficient.
pub(crate) const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Solution {
    pub coef: [f64; P],
    pub sse: f64,
}

/// Column-major storage for an `n x 4` design matrix and its right-hand
/// side, reused across solves.
#[derive(Debug, Clone)]
pub(crate) struct System {
    n: usize,
    data: Vec<f64>,
}

impl System {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * (P + 1)],
        }
    }

    /// Mutable views of the four design columns and the right-hand side.
    pub fn columns_mut(&mut self) -> [&mut [f64]; P + 1] {
        let n = self.n;
        let (c0, rest) = self.data.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, rest) = rest.split_at_mut(n);
        let (c3, rhs) = rest.split_at_mut(n);
        [c0, c1, c2, c3, rhs]
    }

    /// Minimizes `|X b - y|^2`, destroying the stored system. On rank
    /// deficiency returns the condition estimate.
    pub fn solve(&mut self) -> Result<Solution, f64> {
        let n = self.n;
        debug_assert!(n >= P);
        let data = &mut self.data;

        let mut scale = [0.0; P];
        for (j, s) in scale.iter_mut().enumerate() {
            let col = &mut data[j * n..(j + 1) * n];
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(f64::INFINITY);
            }
            col.iter_mut().for_each(|x| *x /= norm);
            *s = norm;
        }

        let mut diag = [0.0; P];
        for j in 0..P {
            let (head, tail) = data.split_at_mut((j + 1) * n);
            let v = &mut head[j * n + j..(j + 1) * n];
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(f64::INFINITY);
            }
            let alpha = if v[0] > 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vtv = v.iter().map(|x| x * x).sum::<f64>();
            diag[j] = alpha;
            if vtv == 0.0 {
                continue;
            }
            for k in 0..(P - j) {
                let col = &mut tail[k * n + j..(k + 1) * n];
                let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                let f = 2.0 * dot / vtv;
                col.iter_mut().zip(v.iter()).for_each(|(c, a)| *c -= f * a);
            }
        }

        let (dmax, dmin) = diag.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), d| {
            (hi.max(d.abs()), lo.min(d.abs()))
        });
        let condition = dmax / dmin;
        if !(condition <= MAX_CONDITION) {
            return Err(condition);
        }

        let rhs = &data[P * n..];
        let mut coef = [0.0; P];
        for i in (0..P).rev() {
            let mut acc = rhs[i];
            for (k, c) in coef.iter().enumerate().skip(i + 1) {
                acc -= data[k * n + i] * c;
            }
            coef[i] = acc / diag[i];
        }
        for (c, s) in coef.iter_mut().zip(scale) {
            *c /= s;
        }
        let sse = rhs[P..].iter().map(|r| r * r).sum();
        Ok(Solution { coef, sse })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fill(sys: &mut System, x: &DMatrix<f64>, y: &DVector<f64>) {
        let cols = sys.columns_mut();
        for (j, c) in cols.into_iter().enumerate() {
            for (i, v) in c.iter_mut().enumerate() {
                *v = if j < P { x[(i, j)] } else { y[i] };
            }
        }
    }

    #[test]
    fn matches_svd_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [4usize, 6, 17, 200] {
            let x = DMatrix::from_fn(n, P, |_, _| rng.random_range(-3.0..3.0));
            let y = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
            let mut sys = System::new(n);
            fill(&mut sys, &x, &y);
            let sol = sys.solve().unwrap();
            let reference = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
            for j in 0..P {
                assert!((sol.coef[j] - reference[j]).abs() < 1e-10 * (1.0 + reference[j].abs()));
            }
            let r = &y - &x * reference;
            assert!((sol.sse - r.dot(&r)).abs() < 1e-9 * (1.0 + r.dot(&r)));
        }
    }

    #[test]
    fn collinear_columns_are_rejected() {
        let n = 10;
        let x = DMatrix::from_fn(n, P, |i, j| {
            if j == 3 {
                2.0 * i as f64
            } else {
                (i * (j + 1)) as f64 + (j as f64).powi(2) * (i as f64).sqrt()
            }
        });
        let x = {
            let mut x = x;
            for i in 0..n {
                x[(i, 3)] = 2.0 * x[(i, 1)];
            }
            x
        };
        let y = DVector::from_fn(n, |i, _| i as f64);
        let mut sys = System::new(n);
        fill(&mut sys, &x, &y);
        assert!(sys.solve().unwrap_err() > MAX_CONDITION);

        let mut sys = System::new(n);
        fill(&mut sys, &DMatrix::zeros(n, P), &y);
        assert_eq!(sys.solve().unwrap_err(), f64::INFINITY);
    }
}
