//! Channel concurrency model: throughput in the number of parallel hub
//! channels follows `eps * n / (1 + sigma (n - 1) + varpi n (n - 1))`.

use super::SimError;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct CcbtParams {
    pub epsilon: f64,
    pub sigma_contention: f64,
    pub varpi_coherence: f64,
}

impl CcbtParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let frac = |v: f64| (0.0..1.0).contains(&v);
        if !(self.epsilon.is_finite()
            && self.epsilon > 0.0
            && frac(self.sigma_contention)
            && frac(self.varpi_coherence))
        {
            return Err(SimError::Config(format!("CCBT parameters out of range: {self:?}")));
        }
        Ok(())
    }

    /// Integer channel count with the highest modeled throughput in `1..=limit`.
    pub fn peak(&self, limit: usize) -> usize {
        let mut best = (1, f64::NEG_INFINITY);
        for n in 1..=limit.max(1) {
            let t = ccbt_value(n as f64, self);
            if t > best.1 {
                best = (n, t);
            }
        }
        best.0
    }
}

fn ccbt_value(n: f64, p: &CcbtParams) -> f64 {
    p.epsilon * n / (1.0 + p.sigma_contention * (n - 1.0) + p.varpi_coherence * n * (n - 1.0))
}

pub fn ccbt_throughput(n_cc: usize, params: &CcbtParams) -> Result<f64, SimError> {
    if n_cc == 0 {
        return Err(SimError::Config("n_cc must be at least 1".into()));
    }
    params.validate()?;
    Ok(ccbt_value(n_cc as f64, params))
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct CcbtFit {
    pub params: CcbtParams,
    /// Root mean square of the throughput residuals.
    pub residual_rms: f64,
    /// `residual_rms` over the range of the measured throughputs.
    pub relative_residual: f64,
}

const FRACTION_MAX: f64 = 1.0 - 1e-9;

fn project(p: [f64; 3]) -> [f64; 3] {
    [p[0].max(1e-12), p[1].clamp(0.0, FRACTION_MAX), p[2].clamp(0.0, FRACTION_MAX)]
}

fn to_params(p: [f64; 3]) -> CcbtParams {
    CcbtParams { epsilon: p[0], sigma_contention: p[1], varpi_coherence: p[2] }
}

fn sse(data: &[(f64, f64)], p: [f64; 3]) -> f64 {
    data.iter().map(|&(n, y)| (ccbt_value(n, &to_params(p)) - y).powi(2)).sum()
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `n / T` is linear in `(1/eps, sigma/eps, varpi/eps)`, which gives a
/// closed-form starting point.
fn linear_start(data: &[(f64, f64)]) -> Option<[f64; 3]> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for &(n, y) in data.iter().filter(|(_, y)| *y > 0.0) {
        let row = [1.0, n - 1.0, n * (n - 1.0)];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * n / y;
        }
    }
    let [a, b, c] = solve3(ata, atb)?;
    if a <= 0.0 {
        return None;
    }
    Some(project([1.0 / a, b / a, c / a]))
}

fn levenberg_marquardt(data: &[(f64, f64)], start: [f64; 3]) -> [f64; 3] {
    let mut p = project(start);
    let mut cost = sse(data, p);
    let mut damping = 1e-3;
    for _ in 0..500 {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(n, y) in data {
            let d = 1.0 + p[1] * (n - 1.0) + p[2] * n * (n - 1.0);
            let t = p[0] * n / d;
            let grad = [n / d, -t * (n - 1.0) / d, -t * n * (n - 1.0) / d];
            for i in 0..3 {
                for j in 0..3 {
                    jtj[i][j] += grad[i] * grad[j];
                }
                jtr[i] += grad[i] * (t - y);
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += damping * jtj[i][i].max(1e-12);
            }
            let Some(step) = solve3(a, [-jtr[0], -jtr[1], -jtr[2]]) else {
                damping *= 10.0;
                continue;
            };
            let cand = project([p[0] + step[0], p[1] + step[1], p[2] + step[2]]);
            let c = sse(data, cand);
            if c < cost {
                let gain = cost - c;
                p = cand;
                cost = c;
                damping = (damping * 0.3).max(1e-15);
                improved = gain > 1e-30 * cost.max(1e-300);
                break;
            }
            damping *= 10.0;
        }
        if !improved || cost == 0.0 {
            break;
        }
    }
    p
}

/// Bounded least-squares fit of the concurrency model.
pub fn ccbt_fit(measured: &[(usize, f64)]) -> Result<CcbtFit, SimError> {
    let mut distinct: Vec<usize> = measured.iter().map(|m| m.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(SimError::Fit(format!("need at least 3 distinct n_cc values, got {}", distinct.len())));
    }
    if distinct[0] == 0 || measured.iter().any(|m| !m.1.is_finite() || m.1 < 0.0) {
        return Err(SimError::Fit("n_cc must be positive and throughputs finite and nonnegative".into()));
    }
    let data: Vec<(f64, f64)> = measured.iter().map(|&(n, y)| (n as f64, y)).collect();
    let y_max = data.iter().map(|d| d.1).fold(0.0, f64::max);
    let mut starts: Vec<[f64; 3]> = linear_start(&data).into_iter().collect();
    for s in [0.0, 0.1, 0.5] {
        for v in [0.0, 0.01, 0.1] {
            starts.push([y_max.max(1e-9), s, v]);
        }
    }
    let best = starts
        .into_iter()
        .map(|s| levenberg_marquardt(&data, s))
        .map(|p| (sse(&data, p), p))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one start")
        .1;
    let rms = (sse(&data, best) / data.len() as f64).sqrt();
    let y_min = data.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
    let range = y_max - y_min;
    Ok(CcbtFit {
        params: to_params(best),
        residual_rms: rms,
        relative_residual: if range > 0.0 { rms / range } else { 0.0 },
    })
}

/// True when the sequence rises (weakly) to a single maximum and then falls
/// (weakly), allowing `tol` of relative noise.
pub fn is_unimodal(values: &[f64], tol: f64) -> bool {
    let Some(peak) = (0..values.len()).max_by(|&a, &b| values[a].total_cmp(&values[b])) else {
        return true;
    };
    let slack = tol * values[peak].abs();
    values[..=peak].windows(2).all(|w| w[1] >= w[0] - slack) && values[peak..].windows(2).all(|w| w[1] <= w[0] + slack)
}
