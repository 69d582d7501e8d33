//! Independent reference computations shared by integration tests.

#![allow(dead_code)]

/// Dense square solve by Gauss–Jordan elimination with partial pivoting.
/// Returns `None` when a pivot falls below `tol` times the largest diagonal.
pub fn gauss_jordan_inverse(m: &[Vec<f64>], tol: f64) -> Option<Vec<Vec<f64>>> {
    let p = m.len();
    let scale = (0..p).map(|i| m[i][i].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..p).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for k in 0..p {
        let piv = (k..p).max_by(|x, y| a[*x][k].abs().total_cmp(&a[*y][k].abs()))?;
        if a[piv][k].abs() < tol * scale {
            return None;
        }
        a.swap(k, piv);
        let d = a[k][k];
        for v in a[k].iter_mut() {
            *v /= d;
        }
        for i in 0..p {
            if i != k {
                let f = a[i][k];
                if f != 0.0 {
                    for j in 0..2 * p {
                        a[i][j] -= f * a[k][j];
                    }
                }
            }
        }
    }
    Some(a.into_iter().map(|r| r[p..].to_vec()).collect())
}

/// Rows with every value present, as a dense design with a leading intercept.
pub fn complete_rows(y: &[Option<f64>], x: &[Vec<Option<f64>>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut ys = Vec::new();
    let mut rows = Vec::new();
    for r in 0..y.len() {
        if let Some(v) = y[r] {
            let vals: Option<Vec<f64>> = x.iter().map(|c| c[r]).collect();
            if let Some(vals) = vals {
                ys.push(v);
                let mut row = vec![1.0];
                row.extend(vals);
                rows.push(row);
            }
        }
    }
    (ys, rows)
}

/// `X'X` of a dense row-major design.
pub fn gram(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = rows.first().map_or(0, |r| r.len());
    let mut g = vec![vec![0.0; p]; p];
    for r in rows {
        for i in 0..p {
            for j in 0..p {
                g[i][j] += r[i] * r[j];
            }
        }
    }
    g
}

/// OLS with intercept by the normal equations, after scaling `X'X` to unit
/// diagonal. `None` when the scaled system is numerically singular.
pub fn normal_equations(y: &[f64], rows: &[Vec<f64>]) -> Option<Vec<f64>> {
    let g = gram(rows);
    let p = g.len();
    let d: Vec<f64> = (0..p).map(|i| g[i][i].sqrt()).collect();
    if d.iter().any(|v| *v == 0.0) {
        return None;
    }
    let scaled: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| g[i][j] / (d[i] * d[j])).collect()).collect();
    let inv = gauss_jordan_inverse(&scaled, 1e-12)?;
    let xty: Vec<f64> = (0..p).map(|i| rows.iter().zip(y).map(|(r, v)| r[i] * v).sum::<f64>() / d[i]).collect();
    Some((0..p).map(|i| (0..p).map(|j| inv[i][j] * xty[j]).sum::<f64>() / d[i]).collect())
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
