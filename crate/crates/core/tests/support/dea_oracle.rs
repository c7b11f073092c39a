//! Reference hyperbolic efficiency that never touches the simplex.
//!
//! `(θX_i, Y_i/θ)` is attainable iff some λ on the unit simplex satisfies every
//! constraint. By the minimax theorem this holds iff, for every weighting `w`
//! of the constraints, the best single unit `j` meets the weighted constraint:
//!
//! ```text
//! max_{w ∈ Δ} min_j Σ_c w_c · slack_c(j, θ) ≤ 0
//! ```
//!
//! The inner minimum is concave in `w`, so the maximum is found by nested
//! golden-section searches over the simplex (one level per extra constraint).
//! Only inputs with one or two columns and a single output are supported.

#![allow(dead_code)]

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const SEARCH_ITERS: usize = 60;
const BISECT_ITERS: usize = 40;

fn golden_max(lo: f64, hi: f64, f: &mut dyn FnMut(f64) -> f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..SEARCH_ITERS {
        if fc < fd {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        }
    }
    fc.max(fd).max(f(lo)).max(f(hi))
}

/// `slack[c][j]`: how far unit `j` misses constraint `c` at θ (≤ 0 is met).
fn slacks(inputs: &[Vec<f64>], outputs: &[f64], i: usize, theta: f64) -> Vec<Vec<f64>> {
    let p = inputs[i].len();
    let mut rows: Vec<Vec<f64>> = (0..p)
        .map(|k| inputs.iter().map(|x| x[k] / inputs[i][k] - theta).collect())
        .collect();
    rows.push(
        outputs
            .iter()
            .map(|y| 1.0 / theta - y / outputs[i])
            .collect(),
    );
    rows
}

fn worst_case(rows: &[Vec<f64>], w: &[f64]) -> f64 {
    (0..rows[0].len())
        .map(|j| rows.iter().zip(w).map(|(r, wc)| wc * r[j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

pub fn oracle_feasible(inputs: &[Vec<f64>], outputs: &[f64], i: usize, theta: f64) -> bool {
    let rows = slacks(inputs, outputs, i, theta);
    let value = match rows.len() {
        2 => golden_max(0.0, 1.0, &mut |a| worst_case(&rows, &[a, 1.0 - a])),
        3 => golden_max(0.0, 1.0, &mut |out_w| {
            golden_max(0.0, 1.0, &mut |split| {
                let rest = 1.0 - out_w;
                worst_case(&rows, &[rest * split, rest * (1.0 - split), out_w])
            })
        }),
        _ => panic!("oracle supports one or two inputs and one output"),
    };
    value <= 1e-9
}

pub fn oracle_theta(inputs: &[Vec<f64>], outputs: &[f64], i: usize) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if oracle_feasible(inputs, outputs, i, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
