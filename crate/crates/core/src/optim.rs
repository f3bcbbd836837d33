//! Derivative-free Nelder–Mead minimization. Infeasible points are encoded
//! as `+∞` and simply lose every comparison.

#[derive(Clone, Copy, Debug)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Converged once every vertex lies within this distance of the best.
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 4000,
            xtol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
    /// Best value after each iteration.
    pub history: Vec<f64>,
}

fn diameter(simplex: &[Vec<f64>], best: usize) -> f64 {
    simplex
        .iter()
        .map(|v| {
            v.iter()
                .zip(&simplex[best])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Minimizes `f` from `x0` with initial simplex edges `step[i]` along each
/// axis. Uses the dimension-adaptive coefficients of Gao and Han.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let d = x0.len();
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
    if d == 0 {
        let v = eval(x0, &mut evals);
        return NelderMeadResult {
            x: vec![],
            f: v,
            evals,
            converged: true,
            history: vec![v],
        };
    }
    let df = d as f64;
    let (alpha, gamma, rho, sigma) = if d >= 2 {
        (1.0, 1.0 + 2.0 / df, 0.75 - 1.0 / (2.0 * df), 1.0 - 1.0 / df)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
    let mut history = Vec::new();
    let mut converged = false;
    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();
        history.push(fv[0]);
        if diameter(&simplex, 0) < opts.xtol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / df)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < fv[0] {
            let xe = along(alpha * gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[d] = xe;
                fv[d] = fe;
            } else {
                simplex[d] = xr;
                fv[d] = fr;
            }
            continue;
        }
        if fr < fv[d - 1] {
            simplex[d] = xr;
            fv[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < fv[d] {
            let xc = along(alpha * rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fv[d].min(fr) {
            simplex[d] = xc;
            fv[d] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=d {
            let v: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, x)| b + sigma * (x - b))
                .collect();
            fv[i] = eval(&v, &mut evals);
            simplex[i] = v;
        }
    }
    let best = (0..=d)
        .min_by(|&a, &b| fv[a].total_cmp(&fv[b]).then(a.cmp(&b)))
        .unwrap();
    NelderMeadResult {
        x: simplex[best].clone(),
        f: fv[best],
        evals,
        converged,
        history,
    }
}
