//! ODE gain by pole placement, the gain function `phi(x) = (0, -K) e^{xM} E`,
//! and the Lyapunov certificate of the target system.

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use crate::error::{BackstepError, Result};
use crate::system_model::{controllability_matrix, controllability_rank, PlantSpec};

/// Feedback gain `K` with the closed-loop spectrum it was designed for.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizingGain {
    pub k: RowDVector<f64>,
    pub poles: Vec<Complex64>,
}

/// Default closed-loop poles `{-1, -2, ..., -n}`.
pub fn default_poles(n: usize) -> Vec<Complex64> {
    (1..=n).map(|k| Complex64::new(-(k as f64), 0.0)).collect()
}

/// Real coefficients `c` of `prod (s - p_i) = s^n + c[n-1] s^{n-1} + ... + c[0]`.
fn char_poly(poles: &[Complex64]) -> Result<Vec<f64>> {
    check_conjugate_closed(poles)?;
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &p in poles {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * p;
        }
        coeffs = next;
    }
    // coeffs[k] multiplies s^k; imaginary parts cancel for conjugate-closed sets.
    Ok(coeffs[..poles.len()].iter().map(|c| c.re).collect())
}

fn check_conjugate_closed(poles: &[Complex64]) -> Result<()> {
    let scale = poles.iter().fold(1.0_f64, |m, p| m.max(p.norm()));
    let tol = 1e-10 * scale;
    let mut used = vec![false; poles.len()];
    for i in 0..poles.len() {
        if used[i] {
            continue;
        }
        let p = poles[i];
        if p.im.abs() <= tol {
            used[i] = true;
            continue;
        }
        let partner = (0..poles.len())
            .find(|&j| j != i && !used[j] && (poles[j] - p.conj()).norm() <= tol);
        match partner {
            Some(j) => {
                used[i] = true;
                used[j] = true;
            }
            None => return Err(BackstepError::PolesNotConjugateClosed(format!("{p}"))),
        }
    }
    Ok(())
}

/// Single-input Ackermann placement: `K = -e_n^T C^{-1} p(A)`, so that
/// `A + B K` has the requested spectrum.
pub fn pole_place(a: &DMatrix<f64>, b: &DVector<f64>, poles: &[Complex64]) -> Result<StabilizingGain> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n || poles.len() != n {
        return Err(BackstepError::BadDimension(format!(
            "A is {}x{}, B has {} rows, {} poles requested",
            a.nrows(),
            a.ncols(),
            n,
            poles.len()
        )));
    }
    if let Some(p) = poles.iter().find(|p| p.re >= 0.0) {
        return Err(BackstepError::NotHurwitz(format!("requested pole {p} is not in the open left half-plane")));
    }
    let rank = controllability_rank(a, b);
    if rank < n {
        return Err(BackstepError::NotControllable { rank, n });
    }
    let coeffs = char_poly(poles)?;

    // p(A) by Horner.
    let mut pa = DMatrix::identity(n, n);
    for k in (0..n).rev() {
        pa = a * pa + DMatrix::identity(n, n) * coeffs[k];
    }

    let c = controllability_matrix(a, b);
    // Last row of C^{-1}: solve C^T y = e_n.
    let mut e_n = DVector::zeros(n);
    e_n[n - 1] = 1.0;
    let y = c
        .transpose()
        .lu()
        .solve(&e_n)
        .ok_or(BackstepError::NotControllable { rank: n - 1, n })?;
    let k = -(y.transpose() * pa);
    Ok(StabilizingGain { k, poles: poles.to_vec() })
}

/// Eigenvalues of a real square matrix.
pub fn spectrum(m: &DMatrix<f64>) -> Vec<Complex64> {
    m.complex_eigenvalues().iter().map(|z| Complex64::new(z.re, z.im)).collect()
}

/// Largest distance between two spectra after greedy nearest matching.
pub fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for z in a {
        let mut best = None;
        for (j, w) in b.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = (z - w).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        match best {
            Some((j, d)) => {
                used[j] = true;
                worst = worst.max(d);
            }
            None => return f64::INFINITY,
        }
    }
    worst
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(x M)` by scaling and squaring with a truncated Taylor series.
///
/// The scaled argument has 1-norm `theta <= 1/2`; terms are added until the
/// Taylor remainder bound, inflated by `e^theta` and the number of squarings,
/// drops below `rel_tol`.
pub fn mat_exp(m: &DMatrix<f64>, x: f64, rel_tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let scaled = m * x;
    let norm = norm1(&scaled);
    if norm == 0.0 {
        return DMatrix::identity(n, n);
    }
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let arg = scaled / 2f64.powi(squarings);
    let theta = norm / 2f64.powi(squarings);
    let target = rel_tol.max(f64::EPSILON) * (-theta).exp() / 2f64.powi(squarings);

    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    let mut theta_pow = 1.0;
    for k in 1..64 {
        term = &term * &arg / k as f64;
        result += &term;
        theta_pow *= theta / k as f64;
        // Remainder after the degree-k term: theta^{k+1}/(k+1)! * 1/(1 - theta/(k+2)).
        let remainder = theta_pow * theta / (k + 1) as f64 / (1.0 - theta / (k + 2) as f64);
        if remainder <= target {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// `phi(x) = (0, -K) e^{xM} E` with `M = [[0, A], [I, 0]]`, `E = [I; 0]`,
/// cached at the grid nodes it was built for.
#[derive(Debug, Clone)]
pub struct PhiFunction {
    pub k: RowDVector<f64>,
    pub m: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub l: f64,
    pub rel_tol: f64,
    row: RowDVector<f64>,
    nodes: Vec<f64>,
    values: Vec<RowDVector<f64>>,
    derivatives: Vec<RowDVector<f64>>,
}

impl PhiFunction {
    /// Builds `phi` for gain `k` on `[0, l]`, caching values at `nodes`.
    pub fn new(a: &DMatrix<f64>, k: &RowDVector<f64>, l: f64, nodes: &[f64], rel_tol: f64) -> Result<Self> {
        let n = a.nrows();
        if k.len() != n {
            return Err(BackstepError::BadDimension(format!("K has {} entries, A is {n}x{n}", k.len())));
        }
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, n), (n, n)).copy_from(a);
        m.view_mut((n, 0), (n, n)).fill_with_identity();
        let mut e = DMatrix::zeros(2 * n, n);
        e.view_mut((0, 0), (n, n)).fill_with_identity();
        let mut row = RowDVector::zeros(2 * n);
        row.columns_mut(n, n).copy_from(&(-k));

        let mut pf = Self {
            k: k.clone(),
            m,
            e,
            l,
            rel_tol,
            row,
            nodes: Vec::new(),
            values: Vec::new(),
            derivatives: Vec::new(),
        };
        let mut sorted: Vec<f64> = nodes.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        for &x in &sorted {
            let (v, d) = pf.compute(x)?;
            pf.values.push(v);
            pf.derivatives.push(d);
        }
        pf.nodes = sorted;
        Ok(pf)
    }

    pub fn n(&self) -> usize {
        self.k.len()
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        let slack = 1e-12 * self.l.max(1.0);
        if !(x >= -slack && x <= self.l + slack) {
            return Err(BackstepError::OutOfDomain(format!("phi queried at x = {x} outside [0, {}]", self.l)));
        }
        Ok(())
    }

    fn compute(&self, x: f64) -> Result<(RowDVector<f64>, RowDVector<f64>)> {
        self.check_domain(x)?;
        let ex = mat_exp(&self.m, x, self.rel_tol);
        let left = &self.row * ex;
        let value = &left * &self.e;
        let deriv = &left * &self.m * &self.e;
        Ok((value, deriv))
    }

    fn cached(&self, x: f64) -> Option<usize> {
        self.nodes
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
            .ok()
    }

    /// `phi(x)` as a `1 x n` row.
    pub fn eval(&self, x: f64) -> Result<RowDVector<f64>> {
        match self.cached(x) {
            Some(i) => Ok(self.values[i].clone()),
            None => Ok(self.compute(x)?.0),
        }
    }

    /// `phi'(x)`.
    pub fn derivative(&self, x: f64) -> Result<RowDVector<f64>> {
        match self.cached(x) {
            Some(i) => Ok(self.derivatives[i].clone()),
            None => Ok(self.compute(x)?.1),
        }
    }
}

pub fn phi_eval(pf: &PhiFunction, x: f64) -> Result<RowDVector<f64>> {
    pf.eval(x)
}

pub fn phi_prime(pf: &PhiFunction, x: f64) -> Result<RowDVector<f64>> {
    pf.derivative(x)
}

fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = m.clone().symmetric_eigenvalues();
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Solves `P Acl + Acl^T P = -Q` through the vectorised `n^2` system.
pub fn solve_lyapunov(acl: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = acl.nrows();
    if acl.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(BackstepError::BadDimension("Acl and Q must be square of equal size".into()));
    }
    let q_norm = q.norm();
    let asym = (q - q.transpose()).norm();
    if asym > 1e-12 * q_norm.max(f64::MIN_POSITIVE) {
        return Err(BackstepError::AsymmetricQ(asym));
    }
    if symmetric_extremes(q).0 <= 0.0 {
        return Err(BackstepError::NotPositiveDefinite("Q".into()));
    }

    // Column-major vec: vec(P Acl) = (Acl^T ⊗ I) vec P, vec(Acl^T P) = (I ⊗ Acl^T) vec P.
    let at = acl.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = at.kronecker(&eye) + eye.kronecker(&at);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let lu = op.clone().lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| BackstepError::NotHurwitz("Lyapunov operator is singular".into()))?;
    // One step of iterative refinement.
    let resid = &rhs - &op * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(BackstepError::NotHurwitz("Lyapunov solve produced non-finite entries".into()));
    }
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    let (lo, _) = symmetric_extremes(&p);
    if lo <= 0.0 {
        return Err(BackstepError::NotHurwitz(format!(
            "Lyapunov solution is not positive definite (min eigenvalue {lo:e})"
        )));
    }
    Ok(p)
}

/// `|P Acl + Acl^T P + Q|` in the Frobenius norm.
pub fn lyapunov_residual(p: &DMatrix<f64>, acl: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (p * acl + acl.transpose() * p + q).norm()
}

/// Explicit stability certificate for `V = X^T P X + a/2 |w|^2 + b/2 |w_x|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub a: f64,
    pub b: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub delta: f64,
    /// `|PB|`, `lambda_min(Q)`, `lambda_min(P)`, `lambda_max(P)` as used above.
    pub pb_norm: f64,
    pub q_min: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub margin: f64,
    pub l: f64,
}

impl LyapunovCertificate {
    /// Assembles the certificate from its scalar ingredients.
    ///
    /// `b = margin * 2|PB|^2 / lambda_min(Q)`, `a = margin * (2b(1+l)/l + 2)`,
    /// `delta = min(lambda_min(Q) / (2 lambda_max(P)), 1/(4 l^2), 2/b)`.
    pub fn from_parts(
        p: DMatrix<f64>,
        q: DMatrix<f64>,
        pb_norm: f64,
        l: f64,
        margin: f64,
    ) -> Result<Self> {
        if !(margin > 1.0) {
            return Err(BackstepError::MarginTooSmall(margin));
        }
        let (q_min, _) = symmetric_extremes(&q);
        let (p_min, p_max) = symmetric_extremes(&p);
        Ok(Self::from_scalars(p, q, pb_norm, q_min, p_min, p_max, l, margin))
    }

    #[allow(clippy::too_many_arguments)]
    fn from_scalars(
        p: DMatrix<f64>,
        q: DMatrix<f64>,
        pb_norm: f64,
        q_min: f64,
        p_min: f64,
        p_max: f64,
        l: f64,
        margin: f64,
    ) -> Self {
        let b = margin * 2.0 * pb_norm * pb_norm / q_min;
        let a = margin * (2.0 * b * (1.0 + l) / l + 2.0);
        let alpha1 = p_min.min(a / 2.0).min(b / 2.0);
        let alpha2 = p_max.max(a / 2.0).max(b / 2.0);
        let delta = (q_min / (2.0 * p_max)).min(1.0 / (4.0 * l * l)).min(2.0 / b);
        Self { p, q, a, b, alpha1, alpha2, delta, pb_norm, q_min, p_min, p_max, margin, l }
    }

    /// Whether `b` and `a` satisfy the strict inequalities.
    pub fn inequalities_hold(&self) -> bool {
        let b_floor = 2.0 * self.pb_norm.powi(2) / self.q_min;
        let a_floor = 2.0 * self.b * (1.0 + self.l) / self.l + 2.0;
        self.b > b_floor && self.a > a_floor
    }

    /// Key-value text report.
    pub fn report(&self, gain: &StabilizingGain) -> String {
        let row = |v: &[f64]| v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(", ");
        let mat = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| format!("[{}]", row(&m.row(i).iter().cloned().collect::<Vec<_>>())))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let poles = gain
            .poles
            .iter()
            .map(|p| format!("[{:.17e}, {:.17e}]", p.re, p.im))
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "k = [{}]\npoles = [{}]\np = [{}]\nq = [{}]\na = {:.17e}\nb = {:.17e}\nalpha1 = {:.17e}\nalpha2 = {:.17e}\ndelta = {:.17e}\npb_norm = {:.17e}\nq_min = {:.17e}\np_min = {:.17e}\np_max = {:.17e}\nmargin = {:.17e}\n",
            row(&gain.k.iter().cloned().collect::<Vec<_>>()),
            poles,
            mat(&self.p),
            mat(&self.q),
            self.a,
            self.b,
            self.alpha1,
            self.alpha2,
            self.delta,
            self.pb_norm,
            self.q_min,
            self.p_min,
            self.p_max,
            self.margin,
        )
    }
}

/// Solves the Lyapunov equation for `A + BK` and picks `a`, `b`, `delta`.
pub fn build_certificate(
    plant: &PlantSpec,
    k: &RowDVector<f64>,
    q: &DMatrix<f64>,
    margin: f64,
) -> Result<LyapunovCertificate> {
    if !(margin > 1.0) {
        return Err(BackstepError::MarginTooSmall(margin));
    }
    let acl = &plant.a + &plant.b * k;
    let p = solve_lyapunov(&acl, q)?;
    let pb_norm = (&p * &plant.b).norm();
    LyapunovCertificate::from_parts(p, q.clone(), pb_norm, plant.l, margin)
}
