//! Dense univariate polynomials over the complex numbers, plus a
//! simultaneous-iteration root finder. Coefficients are stored in
//! ascending order; construction trims exactly-zero trailing
//! coefficients so degrees stay honest after arithmetic that cancels
//! leading terms. Only exact zeros are trimmed: a monic polynomial
//! with large roots has a lead far below its biggest coefficient, and
//! a relative cut would silently drop its degree.

use num_complex::Complex64;

use super::LaplaceError;

const RESIDUAL_REL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPolynomial {
    // ascending; empty means the zero polynomial
    coeffs: Vec<Complex64>,
}

impl ComplexPolynomial {
    pub fn new(mut coeffs: Vec<Complex64>) -> Self {
        while coeffs.last() == Some(&Complex64::ZERO) {
            coeffs.pop();
        }
        ComplexPolynomial { coeffs }
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        ComplexPolynomial::new(coeffs.iter().map(|&r| Complex64::new(r, 0.0)).collect())
    }

    pub fn zero() -> Self {
        ComplexPolynomial { coeffs: Vec::new() }
    }

    pub fn constant(c: Complex64) -> Self {
        ComplexPolynomial::new(vec![c])
    }

    /// The monic linear factor `p - root`.
    pub fn linear(root: Complex64) -> Self {
        ComplexPolynomial { coeffs: vec![-root, Complex64::ONE] }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree after trimming; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> Complex64 {
        self.coeffs.get(k).copied().unwrap_or(Complex64::ZERO)
    }

    pub fn max_coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn eval(&self, p: Complex64) -> Complex64 {
        let mut acc = Complex64::ZERO;
        for c in self.coeffs.iter().rev() {
            acc = acc * p + c;
        }
        acc
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() <= 1 {
            return ComplexPolynomial::zero();
        }
        ComplexPolynomial::new(
            self.coeffs[1..]
                .iter()
                .enumerate()
                .map(|(i, c)| c * (i as f64 + 1.0))
                .collect(),
        )
    }

    pub fn add(&self, rhs: &Self) -> Self {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        ComplexPolynomial::new((0..n).map(|k| self.coeff(k) + rhs.coeff(k)).collect())
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        ComplexPolynomial::new((0..n).map(|k| self.coeff(k) - rhs.coeff(k)).collect())
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        if self.is_zero() || rhs.is_zero() {
            return ComplexPolynomial::zero();
        }
        let mut out = vec![Complex64::ZERO; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        ComplexPolynomial::new(out)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        ComplexPolynomial::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Synthetic division by `p - root`, discarding the remainder. Only
    /// meaningful when `root` is (numerically) a root of `self`.
    pub fn deflate(&self, root: Complex64) -> Self {
        if self.coeffs.len() <= 1 {
            return ComplexPolynomial::zero();
        }
        let n = self.coeffs.len();
        let mut out = vec![Complex64::ZERO; n - 1];
        let mut carry = self.coeffs[n - 1];
        for k in (0..n - 1).rev() {
            out[k] = carry;
            carry = self.coeffs[k] + carry * root;
        }
        // carry is the remainder, dropped by contract
        ComplexPolynomial { coeffs: out }
    }

    /// Division by `p` when the constant term is exactly zero: a pure
    /// coefficient shift, no rounding.
    pub fn shift_down(&self) -> Self {
        debug_assert!(self.coeffs.is_empty() || self.coeffs[0] == Complex64::ZERO);
        if self.coeffs.len() <= 1 {
            return ComplexPolynomial::zero();
        }
        ComplexPolynomial { coeffs: self.coeffs[1..].to_vec() }
    }

    /// Substitutes `p -> s * p`, i.e. returns the coefficients of
    /// `self(s p)`.
    pub fn stretch(&self, s: Complex64) -> Self {
        let mut pw = Complex64::ONE;
        ComplexPolynomial::new(
            self.coeffs
                .iter()
                .map(|c| {
                    let out = c * pw;
                    pw *= s;
                    out
                })
                .collect(),
        )
    }
}

/// All complex roots, with multiplicity. Exact zero constant terms peel off
/// as exact zero roots; what remains goes through Aberth-Ehrlich
/// simultaneous iteration on magnitude-normalized coefficients. Every root
/// is verified against the residual bound
/// `|poly(root)| <= 1e-8 * max|coeff| * max(1, |root|)^degree`.
pub fn poly_roots(poly: &ComplexPolynomial) -> Result<Vec<Complex64>, LaplaceError> {
    assert!(
        !poly.is_zero() && poly.degree() >= 1,
        "root finding needs degree >= 1"
    );
    let mut roots: Vec<Complex64> = Vec::with_capacity(poly.degree());
    let mut lo = 0;
    while lo < poly.coeffs.len() - 1 && poly.coeffs[lo] == Complex64::ZERO {
        roots.push(Complex64::ZERO);
        lo += 1;
    }
    let work = &poly.coeffs[lo..];
    let n = work.len() - 1;

    match n {
        0 => {}
        1 => roots.push(-work[0] / work[1]),
        2 => roots.extend(quadratic(work[0], work[1], work[2])),
        _ => roots.extend(aberth(work)?),
    }

    let maxc = poly.max_coeff_norm();
    let deg = poly.degree() as i32;
    for r in &roots {
        let bound = RESIDUAL_REL * maxc * r.norm().max(1.0).powi(deg);
        if !(poly.eval(*r).norm() <= bound) {
            return Err(LaplaceError::NoConvergence);
        }
    }
    roots.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    Ok(roots)
}

fn quadratic(c0: Complex64, c1: Complex64, c2: Complex64) -> [Complex64; 2] {
    let mut s = (c1 * c1 - 4.0 * c2 * c0).sqrt();
    // pick the sign that adds constructively to c1
    if (c1.conj() * s).re < 0.0 {
        s = -s;
    }
    let q = -0.5 * (c1 + s);
    let r1 = q / c2;
    if q.norm() > 0.0 {
        [r1, c0 / q]
    } else {
        // c1 = c0 = 0 up to rounding: double root at the origin-ish point
        [r1, -r1 - c1 / c2]
    }
}

fn aberth(coeffs: &[Complex64]) -> Result<Vec<Complex64>, LaplaceError> {
    let n = coeffs.len() - 1;
    let lead = coeffs[n];

    // normalize the root magnitudes to ~1 so huge/tiny coefficient spreads
    // do not wreck the iteration
    let mut sigma: f64 = 0.0;
    for (k, c) in coeffs.iter().enumerate().take(n) {
        if c.norm() > 0.0 {
            sigma = sigma.max((c.norm() / lead.norm()).powf(1.0 / (n - k) as f64));
        }
    }
    if sigma <= 0.0 {
        // only the leading coefficient is nonzero: p^n up to trimming
        return Ok(vec![Complex64::ZERO; n]);
    }
    let mut d: Vec<Complex64> = Vec::with_capacity(n + 1);
    for (k, c) in coeffs.iter().enumerate() {
        d.push(c / lead * sigma.powi(k as i32 - n as i32));
    }

    let horner2 = |z: Complex64| -> (Complex64, Complex64) {
        let mut f = Complex64::ZERO;
        let mut df = Complex64::ZERO;
        for c in d.iter().rev() {
            df = df * z + f;
            f = f * z + c;
        }
        (f, df)
    };

    // Cauchy bound after normalization is at most 2; start just outside
    let mut z: Vec<Complex64> = (0..n)
        .map(|j| 1.3 * Complex64::from_polar(1.0, std::f64::consts::TAU * j as f64 / n as f64 + 0.43))
        .collect();

    let mut converged = false;
    for _ in 0..100 {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let (f, df) = horner2(z[i]);
            if f.norm() == 0.0 {
                continue;
            }
            let newton = if df.norm() > 0.0 {
                f / df
            } else {
                Complex64::new(1e-8, 1e-8)
            };
            let mut s = Complex64::ZERO;
            for j in 0..n {
                if j != i {
                    s += (z[i] - z[j]).finv();
                }
            }
            let denom = Complex64::ONE - newton * s;
            let w = if denom.norm() > 1e-290 {
                newton / denom
            } else {
                newton
            };
            z[i] -= w;
            worst = worst.max(w.norm() / z[i].norm().max(1.0));
        }
        if worst <= 1e-14 {
            converged = true;
            break;
        }
    }
    if !converged {
        // multiple roots converge slowly; the residual gate in the caller
        // decides whether the result is still acceptable
    }
    Ok(z.into_iter().map(|q| q * sigma).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::TAU;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn trimming_and_degree() {
        let p = ComplexPolynomial::new(vec![c(1.0, 0.0), c(2.0, 0.0), Complex64::ZERO]);
        assert_eq!(p.degree(), 1);
        assert_eq!(p.coeffs().len(), 2);
        assert!(ComplexPolynomial::new(vec![Complex64::ZERO; 4]).is_zero());
        // only exact zeros trim: a tiny genuine lead must survive, or a
        // monic polynomial with large roots would lose its degree
        let q = ComplexPolynomial::new(vec![c(1e8, 0.0), c(1.0, 0.0), c(1e-15, 0.0)]);
        assert_eq!(q.degree(), 2);
        assert_eq!(q.coeff(0), c(1e8, 0.0));
    }

    #[test]
    fn arithmetic_identities() {
        let a = ComplexPolynomial::from_real(&[1.0, 1.0]); // 1 + p
        let b = ComplexPolynomial::from_real(&[1.0, -1.0]); // 1 - p
        let prod = a.mul(&b);
        assert_eq!(prod.coeffs(), &[c(1.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]);
        assert!(a.sub(&a).is_zero());
        let p = c(0.3, -0.8);
        assert!((prod.eval(p) - (Complex64::ONE - p * p)).norm() < 1e-15);

        let d = prod.derivative();
        assert_eq!(d.coeffs(), &[c(0.0, 0.0), c(-2.0, 0.0)]);

        let lin = ComplexPolynomial::linear(c(2.0, 1.0));
        assert!(lin.eval(c(2.0, 1.0)).norm() == 0.0);
    }

    #[test]
    fn deflate_and_shift() {
        // (p-1)(p-2)(p-3) = -6 + 11p - 6p^2 + p^3
        let p = ComplexPolynomial::from_real(&[-6.0, 11.0, -6.0, 1.0]);
        let q = p.deflate(c(2.0, 0.0));
        // quotient (p-1)(p-3) = 3 - 4p + p^2
        assert!((q.coeff(0) - c(3.0, 0.0)).norm() < 1e-12);
        assert!((q.coeff(1) - c(-4.0, 0.0)).norm() < 1e-12);
        assert!((q.coeff(2) - c(1.0, 0.0)).norm() < 1e-12);

        let s = ComplexPolynomial::new(vec![Complex64::ZERO, c(2.0, 0.0), c(5.0, 0.0)]);
        let down = s.shift_down();
        assert_eq!(down.coeffs(), &[c(2.0, 0.0), c(5.0, 0.0)]);
    }

    #[test]
    fn stretch_substitutes_scaled_argument() {
        let p = ComplexPolynomial::from_real(&[1.0, 2.0, 3.0]);
        let s = c(0.5, 0.25);
        let q = p.stretch(s);
        let x = c(-1.2, 0.7);
        assert!((q.eval(x) - p.eval(s * x)).norm() < 1e-13);
    }

    #[test]
    fn cubic_real_roots() {
        let p = ComplexPolynomial::from_real(&[-6.0, 11.0, -6.0, 1.0]);
        let roots = poly_roots(&p).unwrap();
        let expect = [1.0, 2.0, 3.0];
        for (r, e) in roots.iter().zip(expect) {
            assert!((r - c(e, 0.0)).norm() < 1e-10, "{r} vs {e}");
        }
    }

    #[test]
    fn damped_oscillator_conjugate_pair() {
        // p^2 + G p + (W/2)^2 with angular G, W: poles of a damped nutation
        let g = TAU * 5.68;
        let w = TAU * 45.0;
        let p = ComplexPolynomial::from_real(&[(w / 2.0) * (w / 2.0), g, 1.0]);
        let roots = poly_roots(&p).unwrap();
        let im = ((w / 2.0) * (w / 2.0) - g * g / 4.0).sqrt();
        // conjugate real parts agree only to rounding, so the (re, im)
        // sort order between them is not pinned; match by distance
        for e in [c(-g / 2.0, -im), c(-g / 2.0, im)] {
            let gap = roots.iter().map(|r| (r - e).norm()).fold(f64::INFINITY, f64::min);
            assert!(gap < 1e-9 * e.norm(), "no root near {e}");
        }
    }

    #[test]
    fn exact_zero_roots_stay_exact() {
        // p^3 (p - 1): constant terms exactly zero
        let p = ComplexPolynomial::new(vec![
            Complex64::ZERO,
            Complex64::ZERO,
            Complex64::ZERO,
            c(-1.0, 0.0),
            c(1.0, 0.0),
        ]);
        let roots = poly_roots(&p).unwrap();
        assert_eq!(roots.len(), 4);
        assert_eq!(roots.iter().filter(|r| **r == Complex64::ZERO).count(), 3);
        assert!((roots.last().unwrap() - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn roots_of_unity() {
        let mut coeffs = vec![Complex64::ZERO; 11];
        coeffs[0] = c(-1.0, 0.0);
        coeffs[10] = c(1.0, 0.0);
        let roots = poly_roots(&ComplexPolynomial::new(coeffs)).unwrap();
        assert_eq!(roots.len(), 10);
        for r in roots {
            assert!((r.norm() - 1.0).abs() < 1e-12);
            assert!((r.powi(10) - Complex64::ONE).norm() < 1e-11);
        }
    }

    #[test]
    fn widely_scaled_coefficients() {
        // roots at 1e8, 1, 1e-8 stress the magnitude normalization
        let p = ComplexPolynomial::linear(c(1e8, 0.0))
            .mul(&ComplexPolynomial::linear(c(1.0, 0.0)))
            .mul(&ComplexPolynomial::linear(c(1e-8, 0.0)));
        let roots = poly_roots(&p).unwrap();
        let want = [1e-8, 1.0, 1e8];
        for (r, e) in roots.iter().zip(want) {
            assert!((r - c(e, 0.0)).norm() < 1e-6 * e, "{r} vs {e}");
        }
    }

    #[test]
    fn double_root_passes_residual_gate() {
        // (p + 2)^2 (p - 5)
        let p = ComplexPolynomial::linear(c(-2.0, 0.0))
            .mul(&ComplexPolynomial::linear(c(-2.0, 0.0)))
            .mul(&ComplexPolynomial::linear(c(5.0, 0.0)));
        let roots = poly_roots(&p).unwrap();
        assert_eq!(roots.len(), 3);
        let near_minus2 = roots.iter().filter(|r| (*r - c(-2.0, 0.0)).norm() < 1e-5).count();
        assert_eq!(near_minus2, 2);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn random_roots_reconstruct_the_polynomial(
            res in proptest::collection::vec(-100.0f64..100.0, 1..=8),
            ims in proptest::collection::vec(-100.0f64..100.0, 1..=8),
        ) {
            let n = res.len().min(ims.len());
            let mut poly = ComplexPolynomial::constant(c(1.0, 0.0));
            for k in 0..n {
                poly = poly.mul(&ComplexPolynomial::linear(c(res[k], ims[k])));
            }
            let roots = poly_roots(&poly).unwrap();
            proptest::prop_assert_eq!(roots.len(), n);
            // compare via evaluation: the recovered factorization must
            // reproduce the polynomial at fresh probe points
            let radius = 2.0 * roots.iter().map(|r| r.norm()).fold(1.0, f64::max);
            for k in 0..8 {
                let probe = Complex64::from_polar(radius, 0.9 + k as f64);
                let mut prod = Complex64::ONE;
                for r in &roots {
                    prod *= probe - r;
                }
                let reference = poly.eval(probe);
                proptest::prop_assert!(
                    (prod - reference).norm() <= 1e-7 * reference.norm(),
                    "probe {} mismatch: {} vs {}", probe, prod, reference
                );
            }
        }
    }
}
