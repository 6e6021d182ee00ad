//! Fully-corrective Frank-Wolfe for least squares over the probability
//! simplex: min ‖A w − b‖² subject to w ≥ 0, Σw = 1.
//!
//! Each outer iteration adds the linear-minimization vertex to an atom set
//! and re-solves the problem restricted to those atoms exactly
//! (equality-constrained least squares with nonnegativity handled by an
//! active-set inner loop); a plain line-search step is the fallback, so the
//! objective never increases. The Frank-Wolfe duality gap certifies
//! optimality.

use nalgebra::{DMatrix, DVector};

use crate::linalg;

/// Solver outcome; `weights` always lies on the simplex.
#[derive(Debug, Clone)]
pub struct SimplexLsq {
    pub weights: DVector<f64>,
    /// ‖A w − b‖² at the returned weights.
    pub objective: f64,
    /// Final Frank-Wolfe duality gap.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn objective(a: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>) -> f64 {
    (a * w - b).norm_squared()
}

/// Exact minimizer of ‖A w − b‖² over {w: supp(w) ⊆ atoms, w ≥ 0, Σw = 1}.
/// Lawson-Hanson style active set on top of the equality-constrained KKT
/// system; `atoms` stays small (the accumulated Frank-Wolfe vertices), so
/// the KKT solves are cheap.
fn corrective_step(a: &DMatrix<f64>, b: &DVector<f64>, atoms: &[usize]) -> DVector<f64> {
    let n = a.ncols();
    let mut positive: Vec<usize> = atoms.to_vec();
    let mut current = DVector::<f64>::zeros(n);
    for &j in atoms {
        current[j] = 1.0 / atoms.len() as f64;
    }

    // each drop removes one variable, each re-entry strictly decreases the
    // objective; the bound below is generous
    for _ in 0..(4 * atoms.len().max(1) + 8) {
        // KKT solve on the positive set:
        // [2 A_P'A_P  1; 1' 0] [w; mu] = [2 A_P'b; 1]
        let p = positive.len();
        let ap = a.select_columns(positive.iter());
        let mut kkt = DMatrix::<f64>::zeros(p + 1, p + 1);
        let gram = ap.transpose() * &ap * 2.0;
        kkt.view_mut((0, 0), (p, p)).copy_from(&gram);
        for i in 0..p {
            kkt[(i, p)] = 1.0;
            kkt[(p, i)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(p + 1);
        rhs.rows_mut(0, p).copy_from(&(ap.transpose() * b * 2.0));
        rhs[p] = 1.0;
        // min-norm solve tolerates duplicated columns (degenerate faces)
        let sol = linalg::svd_pinv(&kkt, None) * rhs;

        let mut candidate = DVector::<f64>::zeros(n);
        for (k, &j) in positive.iter().enumerate() {
            candidate[j] = sol[k];
        }

        if positive.iter().all(|&j| candidate[j] >= -1e-12) {
            for &j in &positive {
                if candidate[j] < 0.0 {
                    candidate[j] = 0.0;
                }
            }
            // check the zeroed atoms for a profitable re-entry: on the
            // positive set the gradient is constant and equals g·w
            let grad = (a * &candidate - b).transpose() * a * 2.0;
            let on_face = grad.transpose().dot(&candidate);
            let tol = 1e-12 * grad.amax().max(1.0);
            let mut worst: Option<(usize, f64)> = None;
            for &j in atoms {
                if candidate[j] == 0.0 {
                    let slack = grad[j] - on_face;
                    if slack < -tol && worst.map_or(true, |(_, s)| slack < s) {
                        worst = Some((j, slack));
                    }
                }
            }
            match worst {
                Some((j, _)) => {
                    current = candidate;
                    if !positive.contains(&j) {
                        positive.push(j);
                    }
                }
                None => return candidate,
            }
        } else {
            // step toward the candidate until the first coordinate hits zero
            let mut alpha: f64 = 1.0;
            for &j in &positive {
                if candidate[j] < 0.0 {
                    let denom = current[j] - candidate[j];
                    if denom > 0.0 {
                        alpha = alpha.min(current[j] / denom);
                    }
                }
            }
            let mut stepped = DVector::<f64>::zeros(n);
            for &j in &positive {
                let v = current[j] + alpha * (candidate[j] - current[j]);
                stepped[j] = if v < 1e-14 { 0.0 } else { v };
            }
            positive.retain(|&j| stepped[j] > 0.0);
            if positive.is_empty() {
                // numerically stuck; restart from the best single atom
                let grad = (a * &current - b).transpose() * a * 2.0;
                let j = atoms
                    .iter()
                    .copied()
                    .min_by(|&x, &y| grad[x].total_cmp(&grad[y]))
                    .unwrap();
                positive.push(j);
            }
            current = stepped;
        }
    }
    current
}

/// Minimize ‖A w − b‖² over the probability simplex (warm start: uniform).
///
/// Stops when the duality gap drops below `gap_tol` or after `max_iter`
/// outer iterations; the objective never increases across iterations.
pub fn simplex_lsq(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    max_iter: usize,
    gap_tol: f64,
) -> SimplexLsq {
    let n = a.ncols();
    assert!(n >= 1, "simplex_lsq needs at least one column");
    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut atoms: Vec<usize> = Vec::new();
    let mut gap = f64::INFINITY;
    let mut iterations = 0;

    for it in 0..max_iter {
        iterations = it + 1;
        let residual = a * &w - b;
        let grad = residual.transpose() * a * 2.0;
        let s = (0..n).min_by(|&x, &y| grad[x].total_cmp(&grad[y])).unwrap();
        gap = grad.transpose().dot(&w) - grad[s];
        if gap < gap_tol {
            return SimplexLsq {
                objective: objective(a, b, &w),
                weights: w,
                gap,
                iterations: it,
                converged: true,
            };
        }
        if !atoms.contains(&s) {
            atoms.push(s);
        }

        let corrected = corrective_step(a, b, &atoms);

        // plain Frank-Wolfe step with exact line search as the fallback
        let mut dir = -w.clone();
        dir[s] += 1.0;
        let ad = a * &dir;
        let denom = ad.norm_squared();
        let fw = if denom > 0.0 {
            let gamma = (-(residual.dot(&ad)) / denom).clamp(0.0, 1.0);
            Some(&w + dir * gamma)
        } else {
            None
        };

        let obj_now = objective(a, b, &w);
        let mut best = w.clone();
        let mut best_obj = obj_now;
        let obj_corr = objective(a, b, &corrected);
        if obj_corr <= best_obj {
            best = corrected;
            best_obj = obj_corr;
        }
        if let Some(fw_step) = fw {
            let obj_fw = objective(a, b, &fw_step);
            if obj_fw < best_obj {
                best = fw_step;
                best_obj = obj_fw;
            }
        }
        let _ = best_obj;
        w = best;
        // keep only atoms that carry weight; s re-enters next round if needed
        atoms.retain(|&j| w[j] > 0.0);
    }

    SimplexLsq {
        objective: objective(a, b, &w),
        weights: w,
        gap,
        iterations,
        converged: gap < gap_tol,
    }
}
