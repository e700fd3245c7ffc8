//! Dense reference implementation of the constant-mean GP posterior,
//! written against plain `Vec<Vec<f64>>` with Gauss-Jordan elimination so it
//! shares no numerical code with the library.

pub struct DenseGp {
    pub inputs: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub lengthscales: Vec<f64>,
    pub scale: f64,
    pub noise: f64,
}

pub struct DenseResult {
    pub beta: f64,
    pub lml: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

fn corr(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| (x - y).powi(2) / (2.0 * l * l)).sum();
    (-s).exp()
}

/// Inverse and log-determinant by Gauss-Jordan with partial pivoting.
pub fn invert(m: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut log_det = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let piv = a[c][c];
        // a positive definite matrix keeps a positive determinant, so the
        // sign of the swaps can be ignored
        log_det += piv.abs().ln();
        for j in 0..n {
            a[c][j] /= piv;
            inv[c][j] /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                if f != 0.0 {
                    for j in 0..n {
                        a[r][j] -= f * a[c][j];
                        inv[r][j] -= f * inv[c][j];
                    }
                }
            }
        }
    }
    (inv, log_det)
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl DenseGp {
    pub fn evaluate(&self, queries: &[Vec<f64>]) -> DenseResult {
        let n = self.inputs.len();
        let s: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let k = corr(&self.inputs[i], &self.inputs[j], &self.lengthscales);
                        self.scale * (k + if i == j { self.noise } else { 0.0 })
                    })
                    .collect()
            })
            .collect();
        let (si, log_det) = invert(&s);
        let ones = vec![1.0; n];
        let si_one = mat_vec(&si, &ones);
        let denom = dot(&ones, &si_one);
        let beta = dot(&si_one, &self.y) / denom;
        let r: Vec<f64> = self.y.iter().map(|v| v - beta).collect();
        let si_r = mat_vec(&si, &r);
        let lml = -0.5 * dot(&r, &si_r) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let mut mean = Vec::new();
        let mut variance = Vec::new();
        for q in queries {
            let c: Vec<f64> = self.inputs.iter().map(|x| self.scale * corr(x, q, &self.lengthscales)).collect();
            let si_c = mat_vec(&si, &c);
            mean.push(beta + dot(&c, &si_r));
            let b = 1.0 - dot(&c, &si_one);
            variance.push(self.scale - dot(&c, &si_c) + b * b / denom);
        }
        DenseResult {
            beta,
            lml,
            mean,
            variance,
        }
    }
}

/// `|a - b| <= tol * max(|a|, |b|)`, with exact zeros equal.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
