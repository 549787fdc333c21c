//! Slow reference implementation of the SDR/SIR/SAR decomposition:
//! materialize the shifted-reference basis as an explicit matrix, form the
//! Gram by direct dot products, and solve the normal equations with
//! hand-rolled Gaussian elimination. Exists purely to verify the
//! FFT/Cholesky implementation; tests and the acceptance gate compare
//! against it.

use super::BssScores;

/// Columns are r_k delayed by lag, zero-padded to t + l − 1.
fn shift_basis(refs: &[Vec<f64>], l: usize) -> Vec<Vec<f64>> {
    let t = refs[0].len();
    let m = t + l - 1;
    let mut cols = Vec::new();
    for r in refs {
        for lag in 0..l {
            let mut col = vec![0.0; m];
            for (i, &s) in r.iter().enumerate() {
                col[i + lag] = s;
            }
            cols.push(col);
        }
    }
    cols
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 0.0, "singular oracle system");
        for row in col + 1..n {
            let f = a[row][col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    x
}

/// Project `target` onto the span of `cols` by normal equations, with the
/// same relative ridge the implementation uses.
fn project(cols: &[Vec<f64>], target: &[f64]) -> Vec<f64> {
    let n = cols.len();
    let mut gram = vec![vec![0.0; n]; n];
    let mut max_diag = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            gram[i][j] = dot(&cols[i], &cols[j]);
        }
        max_diag = max_diag.max(gram[i][i]);
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += 1e-10 * max_diag;
    }
    let rhs: Vec<f64> = cols.iter().map(|c| dot(c, target)).collect();
    let coef = gauss_solve(gram, rhs);
    let m = target.len();
    let mut out = vec![0.0; m];
    for (c, col) in coef.iter().zip(cols) {
        for (slot, v) in out.iter_mut().zip(col) {
            *slot += c * v;
        }
    }
    out
}

fn db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        return -60.0;
    }
    if den <= num * 1e-12 {
        return 60.0;
    }
    (10.0 * (num / den).log10()).clamp(-60.0, 60.0)
}

/// The decomposition's three component vectors (target, interference,
/// artifact), exposed so callers can assert orthogonality directly.
pub struct OracleParts {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

pub fn oracle_parts(estimate: &[f64], refs: &[Vec<f64>], target: usize, l: usize) -> OracleParts {
    let basis_all = shift_basis(refs, l);
    let basis_own = shift_basis(&[refs[target].clone()], l);
    let m = refs[0].len() + l - 1;
    let mut padded = estimate.to_vec();
    padded.resize(m, 0.0);

    let p_all = project(&basis_all, &padded);
    let s_target = project(&basis_own, &padded);
    let e_interf: Vec<f64> = p_all.iter().zip(&s_target).map(|(a, b)| a - b).collect();
    let e_artif: Vec<f64> = padded.iter().zip(&p_all).map(|(a, b)| a - b).collect();
    OracleParts { s_target, e_interf, e_artif }
}

pub fn oracle_scores(estimate: &[f64], refs: &[Vec<f64>], target: usize, l: usize) -> BssScores {
    let parts = oracle_parts(estimate, refs, target, l);
    let et = dot(&parts.s_target, &parts.s_target);
    let ei = dot(&parts.e_interf, &parts.e_interf);
    let ea = dot(&parts.e_artif, &parts.e_artif);
    let dist: f64 =
        parts.e_interf.iter().zip(&parts.e_artif).map(|(a, b)| (a + b) * (a + b)).sum();
    BssScores {
        sdr: db(et, dist),
        sir: db(et, ei),
        sar: db(et + ei, ea),
        capped: false,
    }
}
