//! Bounded tension distribution.
//!
//! Finds cable tensions `0 <= t_i <= t_max` whose resultant force
//! `sum_i -t_i S_i` is as close as possible to a desired force. The problem is
//! underdetermined (four cables, three force components), so a tiny ridge term
//! selects the minimum-norm tension vector among the minimizers:
//!
//! ```text
//! minimize |A t - f|^2 + mu |t|^2   subject to 0 <= t <= t_max,   A = -J^T
//! ```
//!
//! With four variables the active set is solved exactly by enumerating all
//! `3^4` lower/free/upper assignments and keeping the KKT point.

use crate::geometry::{Jacobian4x3, Vec3, NUM_CABLES};

const RIDGE: f64 = 1e-10;
const KKT_TOL: f64 = 1e-9;

/// Cable tensions in newtons. Cables only pull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CableTensions(pub [f64; NUM_CABLES]);

impl CableTensions {
    pub fn zero() -> Self {
        CableTensions([0.0; NUM_CABLES])
    }

    pub fn is_within(&self, max_tension: f64) -> bool {
        self.0.iter().all(|t| *t >= 0.0 && *t <= max_tension)
    }

    pub fn as_array(&self) -> &[f64; NUM_CABLES] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensionSolution {
    pub tensions: CableTensions,
    /// Force actually produced by the cables, `-J^T t`.
    pub realized_force: Vec3,
    /// `|realized_force - desired|`.
    pub residual: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Free,
    Upper,
}

/// Force exerted on the end effector by tensions `t`.
pub fn cable_force(jac: &Jacobian4x3, t: &[f64; NUM_CABLES]) -> Vec3 {
    -jac.transpose_mul(t)
}

pub fn distribute(jac: &Jacobian4x3, desired: &Vec3, max_tension: f64) -> TensionSolution {
    // Hessian H = A^T A + mu I with A columns -S_i; linear term g = A^T f.
    let mut h = [[0.0; NUM_CABLES]; NUM_CABLES];
    let mut g = [0.0; NUM_CABLES];
    for i in 0..NUM_CABLES {
        for j in 0..NUM_CABLES {
            h[i][j] = jac.rows[i].dot(&jac.rows[j]);
        }
        h[i][i] += RIDGE;
        g[i] = -jac.rows[i].dot(desired);
    }

    let objective = |t: &[f64; NUM_CABLES]| {
        let mut q = 0.0;
        for i in 0..NUM_CABLES {
            for j in 0..NUM_CABLES {
                q += 0.5 * t[i] * h[i][j] * t[j];
            }
            q -= g[i] * t[i];
        }
        q
    };

    let mut best: Option<([f64; NUM_CABLES], f64)> = None;
    for code in 0..3usize.pow(NUM_CABLES as u32) {
        let mut c = code;
        let bounds: [Bound; NUM_CABLES] = std::array::from_fn(|_| {
            let b = match c % 3 {
                0 => Bound::Lower,
                1 => Bound::Free,
                _ => Bound::Upper,
            };
            c /= 3;
            b
        });
        let Some(t) = solve_active_set(&h, &g, &bounds, max_tension) else {
            continue;
        };
        // multipliers: gradient Ht - g must push against each active bound
        let kkt = (0..NUM_CABLES).all(|i| {
            let grad: f64 = (0..NUM_CABLES).map(|j| h[i][j] * t[j]).sum::<f64>() - g[i];
            match bounds[i] {
                Bound::Lower => grad >= -KKT_TOL,
                Bound::Upper => grad <= KKT_TOL,
                Bound::Free => t[i] >= -KKT_TOL && t[i] <= max_tension + KKT_TOL,
            }
        });
        if !kkt {
            continue;
        }
        let t = t.map(|x| x.clamp(0.0, max_tension));
        let q = objective(&t);
        if best.is_none_or(|(_, bq)| q < bq) {
            best = Some((t, q));
        }
    }

    // The problem is strictly convex so a KKT point always exists; the
    // fallback only guards against a pathological floating-point miss.
    let t = best.map(|(t, _)| t).unwrap_or([0.0; NUM_CABLES]);
    let realized_force = cable_force(jac, &t);
    TensionSolution {
        tensions: CableTensions(t),
        realized_force,
        residual: (realized_force - desired).norm(),
    }
}

fn solve_active_set(
    h: &[[f64; NUM_CABLES]; NUM_CABLES],
    g: &[f64; NUM_CABLES],
    bounds: &[Bound; NUM_CABLES],
    max_tension: f64,
) -> Option<[f64; NUM_CABLES]> {
    let mut t = [0.0; NUM_CABLES];
    let mut free = [0usize; NUM_CABLES];
    let mut n = 0;
    for i in 0..NUM_CABLES {
        match bounds[i] {
            Bound::Lower => t[i] = 0.0,
            Bound::Upper => t[i] = max_tension,
            Bound::Free => {
                free[n] = i;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Some(t);
    }
    let mut m = [[0.0; NUM_CABLES + 1]; NUM_CABLES];
    for (r, &i) in free[..n].iter().enumerate() {
        for (c, &j) in free[..n].iter().enumerate() {
            m[r][c] = h[i][j];
        }
        let fixed: f64 = (0..NUM_CABLES)
            .filter(|j| bounds[*j] != Bound::Free)
            .map(|j| h[i][j] * t[j])
            .sum();
        m[r][n] = g[i] - fixed;
    }
    let x = gauss_solve(&mut m, n)?;
    for (r, &i) in free[..n].iter().enumerate() {
        t[i] = x[r];
    }
    Some(t)
}

/// Gaussian elimination with partial pivoting on an augmented `n x (n+1)` system.
fn gauss_solve(m: &mut [[f64; NUM_CABLES + 1]; NUM_CABLES], n: usize) -> Option<[f64; NUM_CABLES]> {
    for col in 0..n {
        let pivot = (col..n).max_by(|a, b| m[*a][col].abs().total_cmp(&m[*b][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = [0.0; NUM_CABLES];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (m[row][n] - s) / m[row][row];
    }
    Some(x)
}
