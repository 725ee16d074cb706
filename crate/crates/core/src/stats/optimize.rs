//! Derivative-free minimization (Nelder-Mead simplex).

#[derive(Clone, Copy, Debug)]
pub struct NelderMeadOptions {
    /// Stop when every vertex lies within `tol * (1 + |best_i|)` of the best
    /// vertex in every coordinate.
    pub tol: f64,
    pub max_evals: usize,
    /// Restart from the best vertex after convergence, up to this many times,
    /// while the restart keeps improving the objective.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_evals: 20_000,
            restarts: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0` with initial simplex edge lengths `step`.
/// `f` may return `+inf` for infeasible points; such vertices are always the
/// first to be replaced.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: &[f64], opts: NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x0.len(), step.len());
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best = x0.to_vec();
    let mut best_f = eval(&best, &mut evals);
    let mut converged = false;
    for round in 0..=opts.restarts {
        let (x, fx, ok) = run(&mut eval, &best, step, opts, &mut evals);
        let improved = fx < best_f - 1e-12 * best_f.abs().max(1.0);
        if fx <= best_f {
            best = x;
            best_f = fx;
        }
        converged = ok;
        if !ok || (round > 0 && !improved) || evals >= opts.max_evals {
            break;
        }
    }
    NelderMeadResult {
        x: best,
        fx: best_f,
        evals,
        converged,
    }
}

fn run<E>(
    eval: &mut E,
    x0: &[f64],
    step: &[f64],
    opts: NelderMeadOptions,
    evals: &mut usize,
) -> (Vec<f64>, f64, bool)
where
    E: FnMut(&[f64], &mut usize) -> f64,
{
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0, evals)));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        let fv = eval(&v, evals);
        simplex.push((v, fv));
    }

    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if converged(&simplex, opts.tol) {
            let (x, fx) = simplex.swap_remove(0);
            return (x, fx, true);
        }
        if *evals >= opts.max_evals {
            let (x, fx) = simplex.swap_remove(0);
            return (x, fx, false);
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (v, _) in &simplex[..n] {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let point = |coef: f64, out: &mut Vec<f64>| {
            for i in 0..n {
                out[i] = centroid[i] + coef * (worst[i] - centroid[i]);
            }
        };

        point(-REFLECT, &mut trial);
        let fr = eval(&trial, evals);
        if fr < simplex[0].1 {
            let reflected = trial.clone();
            point(-EXPAND, &mut trial);
            let fe = eval(&trial, evals);
            simplex[n] = if fe < fr {
                (trial.clone(), fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (trial.clone(), fr);
            continue;
        }
        // Outside contraction when the reflection beats the worst vertex,
        // inside contraction otherwise.
        let (coef, bound) = if fr < simplex[n].1 {
            (-CONTRACT, fr)
        } else {
            (CONTRACT, simplex[n].1)
        };
        point(coef, &mut trial);
        let fc = eval(&trial, evals);
        if fc.is_finite() && fc <= bound {
            simplex[n] = (trial.clone(), fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            for i in 0..n {
                v[i] = best[i] + SHRINK * (v[i] - best[i]);
            }
            *fv = eval(v, evals);
        }
    }
}

fn converged(simplex: &[(Vec<f64>, f64)], tol: f64) -> bool {
    let best = &simplex[0].0;
    if !simplex[0].1.is_finite() {
        return false;
    }
    simplex[1..].iter().all(|(v, _)| {
        v.iter()
            .zip(best)
            .all(|(a, b)| (a - b).abs() <= tol * (1.0 + b.abs()))
    })
}
