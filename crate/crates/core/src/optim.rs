//! Derivative-free minimization on the unit cube: Nelder–Mead with
//! coordinates clamped to `[0, 1]`, and deterministic Halton start points.

/// Stopping rule and budget for [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of objective values over the simplex is below this.
    pub f_tol: f64,
    /// ... and the simplex diameter is below this.
    pub x_tol: f64,
    /// Edge length of the initial simplex.
    pub step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            f_tol: 1e-10,
            x_tol: 1e-8,
            step: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

fn clamp_unit(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Minimizes `f` over `[0, 1]^k` starting from `x0`. Non-finite objective
/// values are treated as `+∞`.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let k = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    clamp_unit(&mut start);
    let mut simplex = vec![start.clone()];
    for i in 0..k {
        let mut p = start.clone();
        // step inwards when the start sits near the upper face
        p[i] = if p[i] + opts.step <= 1.0 { p[i] + opts.step } else { p[i] - opts.step };
        clamp_unit(&mut p);
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p)).collect();

    loop {
        let mut order: Vec<usize> = (0..=k).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[k] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let flat = spread.is_finite() && spread <= opts.f_tol * (1.0 + values[0].abs());
        if (flat && diameter <= opts.x_tol.max(1e-4)) || diameter <= opts.x_tol || evals.get() >= opts.max_evals {
            break;
        }

        let centroid: Vec<f64> = (0..k)
            .map(|j| simplex[..k].iter().map(|p| p[j]).sum::<f64>() / k as f64)
            .collect();
        let towards = |t: f64| {
            let mut p: Vec<f64> = (0..k).map(|j| centroid[j] + t * (simplex[k][j] - centroid[j])).collect();
            clamp_unit(&mut p);
            p
        };

        let reflected = towards(-1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = towards(-2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[k] = expanded;
                values[k] = fe;
            } else {
                simplex[k] = reflected;
                values[k] = fr;
            }
            continue;
        }
        if fr < values[k - 1] {
            simplex[k] = reflected;
            values[k] = fr;
            continue;
        }
        // outside contraction if the reflection improved on the worst point
        let contracted = towards(if fr < values[k] { -0.5 } else { 0.5 });
        let fc = eval(&contracted);
        if fc < values[k].min(fr) {
            simplex[k] = contracted;
            values[k] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=k {
            let mut p: Vec<f64> = (0..k).map(|j| best[j] + 0.5 * (simplex[i][j] - best[j])).collect();
            clamp_unit(&mut p);
            values[i] = eval(&p);
            simplex[i] = p;
        }
    }

    let best = (0..=k)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evals: evals.get(),
    }
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// First `n` points of the Halton sequence in `[0, 1)^dim`, skipping the
/// origin. Supports `dim ≤ 8`.
pub fn halton_points(n: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "halton_points supports at most {} dimensions", PRIMES.len());
    (1..=n as u64)
        .map(|i| PRIMES[..dim].iter().map(|&b| radical_inverse(i, b)).collect())
        .collect()
}

/// The `2^dim` vertices of the unit cube, in binary counting order.
pub fn cube_corners(dim: usize) -> Vec<Vec<f64>> {
    (0..1usize << dim)
        .map(|m| (0..dim).map(|j| ((m >> j) & 1) as f64).collect())
        .collect()
}
