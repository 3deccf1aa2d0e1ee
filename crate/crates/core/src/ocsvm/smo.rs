//! SMO solver for the one-class SVM dual
//!
//! ```text
//! min_a  1/2 a^T K a
//! s.t.   0 <= a_i <= 1 / (nu n),   sum_i a_i = 1
//! ```
//!
//! Working-set selection follows the second-order rule of Fan, Chen & Lin
//! (2005) specialised to a single class: `i` is the smallest-gradient variable
//! that can grow, `j` maximises the predicted decrease among variables that
//! can shrink. Ties resolve to the lowest index so training is reproducible.

/// Dense symmetric kernel matrix, row-major.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    n: usize,
    data: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        Self {
            n,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once the maximal KKT violation drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 10_000_000,
        }
    }
}

/// Coefficients within this distance of a bound count as at the bound when
/// classifying support vectors.
pub const FREE_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// `(K a)_i`, i.e. the decision value before subtracting `rho`.
    pub gradient: Vec<f64>,
    pub rho: f64,
    pub upper_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    /// No coefficient was strictly inside the box; `rho` came from bounded vectors.
    pub no_free_sv: bool,
}

impl DualSolution {
    pub fn objective(&self) -> f64 {
        0.5 * self.alpha.iter().zip(&self.gradient).map(|(a, g)| a * g).sum::<f64>()
    }

    /// Largest KKT violation over all points, measured against `rho`.
    pub fn kkt_residual(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.gradient)
            .map(|(&a, &g)| {
                let f = g - self.rho;
                if a <= FREE_MARGIN {
                    (-f).max(0.0)
                } else if a >= self.upper_bound - FREE_MARGIN {
                    f.max(0.0)
                } else {
                    f.abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Solves the one-class dual. `nu` must lie in `(0, 1]` and `kernel` be non-empty.
pub fn solve(kernel: &KernelMatrix, nu: f64, opts: &SolverOptions) -> DualSolution {
    let n = kernel.len();
    let c = 1.0 / (nu * n as f64);

    // Feasible start: fill coefficients to the bound in index order.
    let mut alpha = vec![0.0; n];
    let mut remaining = 1.0f64;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        *a = remaining.min(c);
        remaining -= *a;
    }

    let mut grad: Vec<f64> = (0..n)
        .map(|t| (0..n).map(|s| kernel.get(t, s) * alpha[s]).sum())
        .collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        // i: can grow, smallest gradient
        let mut i = usize::MAX;
        let mut g_min = f64::INFINITY;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] < c && grad[t] < g_min {
                g_min = grad[t];
                i = t;
            }
            if alpha[t] > 0.0 && grad[t] > g_max {
                g_max = grad[t];
            }
        }
        if i == usize::MAX || g_max - g_min < opts.tolerance {
            converged = true;
            break;
        }

        // j: can shrink, best second-order decrease
        let mut j = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        let kii = kernel.get(i, i);
        for t in 0..n {
            if alpha[t] > 0.0 && grad[t] > g_min {
                let b = grad[t] - g_min;
                let mut a = kii + kernel.get(t, t) - 2.0 * kernel.get(i, t);
                if a <= 0.0 {
                    a = 1e-12;
                }
                let gain = b * b / a;
                if gain > best {
                    best = gain;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            converged = true;
            break;
        }

        let mut curv = kii + kernel.get(j, j) - 2.0 * kernel.get(i, j);
        if curv <= 0.0 {
            curv = 1e-12;
        }
        let mut step = (grad[j] - grad[i]) / curv;
        let room_i = c - alpha[i];
        let room_j = alpha[j];
        if step >= room_i.min(room_j) {
            step = room_i.min(room_j);
            if room_i <= room_j {
                alpha[i] = c;
                alpha[j] -= step;
                if room_i == room_j {
                    alpha[j] = 0.0;
                }
            } else {
                alpha[i] += step;
                alpha[j] = 0.0;
            }
        } else {
            alpha[i] += step;
            alpha[j] -= step;
        }

        let (ri, rj) = (kernel.row(i), kernel.row(j));
        for t in 0..n {
            grad[t] += step * (ri[t] - rj[t]);
        }
        iterations += 1;
    }

    let (rho, no_free_sv) = offset(&alpha, &grad, c);
    DualSolution {
        alpha,
        gradient: grad,
        rho,
        upper_bound: c,
        iterations,
        converged,
        no_free_sv,
    }
}

/// Average gradient over free coefficients; without any, the largest gradient
/// among coefficients at the upper bound.
fn offset(alpha: &[f64], grad: &[f64], c: f64) -> (f64, bool) {
    let free: Vec<f64> = alpha
        .iter()
        .zip(grad)
        .filter(|(&a, _)| a > FREE_MARGIN && a < c - FREE_MARGIN)
        .map(|(_, &g)| g)
        .collect();
    if !free.is_empty() {
        return (free.iter().sum::<f64>() / free.len() as f64, false);
    }
    let bounded = alpha
        .iter()
        .zip(grad)
        .filter(|(&a, _)| a >= c - FREE_MARGIN)
        .map(|(_, &g)| g)
        .fold(f64::NEG_INFINITY, f64::max);
    if bounded.is_finite() {
        (bounded, true)
    } else {
        let lo = grad.iter().cloned().fold(f64::INFINITY, f64::min);
        (lo, true)
    }
}
