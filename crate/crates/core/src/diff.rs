//! Forward-mode algorithmic differentiation over first-order jets, plus
//! the finite-difference oracle and small dense determinant helpers.
//!
//! A [`Jet`] carries a value and the partials with respect to the chart
//! coordinates; time is a passive parameter and is never differentiated.
//! Jets nest: `Jet<Jet<f64>>` yields Hessians while every individual
//! layer stays first-order.

use crate::expr::{EvalError, ScalarField};
use crate::nambu::VectorField;

/// Numeric carrier for expression evaluation: plain reals or jets.
pub trait Carrier: Clone + std::fmt::Debug + Send + Sync {
    /// Constant with the same jet shape as `self`.
    fn constant_like(&self, c: f64) -> Self;
    /// Constant with no derivative structure; used only where no shape
    /// template exists (coefficient evaluation over an empty point).
    fn from_f64(c: f64) -> Self;
    /// Innermost real value.
    fn val(&self) -> f64;
    /// True if every derivative slot (at every nesting level) is zero.
    fn is_const(&self) -> bool;

    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn scale(&self, c: f64) -> Self;
    /// `None` when the divisor value is exactly zero.
    fn div(&self, o: &Self) -> Option<Self>;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn tanh(&self) -> Self;
    fn abs(&self) -> Self;
    /// `None` for non-positive values.
    fn ln(&self) -> Option<Self>;
    /// `None` for negative values (and zero under a jet, where the
    /// derivative factor 1/(2√x) does not exist).
    fn sqrt(&self) -> Option<Self>;
    /// Integer power by repeated multiplication; `None` for a zero base
    /// with negative exponent.
    fn powi(&self, k: i32) -> Option<Self>;
}

impl Carrier for f64 {
    fn constant_like(&self, c: f64) -> f64 {
        c
    }
    fn from_f64(c: f64) -> f64 {
        c
    }
    fn val(&self) -> f64 {
        *self
    }
    fn is_const(&self) -> bool {
        true
    }
    fn add(&self, o: &f64) -> f64 {
        self + o
    }
    fn sub(&self, o: &f64) -> f64 {
        self - o
    }
    fn mul(&self, o: &f64) -> f64 {
        self * o
    }
    fn neg(&self) -> f64 {
        -self
    }
    fn scale(&self, c: f64) -> f64 {
        self * c
    }
    fn div(&self, o: &f64) -> Option<f64> {
        if *o == 0.0 {
            None
        } else {
            Some(self / o)
        }
    }
    fn sin(&self) -> f64 {
        f64::sin(*self)
    }
    fn cos(&self) -> f64 {
        f64::cos(*self)
    }
    fn exp(&self) -> f64 {
        f64::exp(*self)
    }
    fn tanh(&self) -> f64 {
        f64::tanh(*self)
    }
    fn abs(&self) -> f64 {
        f64::abs(*self)
    }
    fn ln(&self) -> Option<f64> {
        if *self > 0.0 {
            Some(f64::ln(*self))
        } else {
            None
        }
    }
    fn sqrt(&self) -> Option<f64> {
        if *self >= 0.0 {
            Some(f64::sqrt(*self))
        } else {
            None
        }
    }
    fn powi(&self, k: i32) -> Option<f64> {
        if *self == 0.0 && k < 0 {
            None
        } else {
            Some(f64::powi(*self, k))
        }
    }
}

/// First-order jet over a carrier `C`.
#[derive(Debug, Clone)]
pub struct Jet<C: Carrier> {
    pub v: C,
    pub d: Vec<C>,
}

/// Jet over plain reals: value plus gradient.
pub type Jet1 = Jet<f64>;

impl<C: Carrier> Jet<C> {
    pub fn constant(v: C, n: usize) -> Jet<C> {
        let zero = v.constant_like(0.0);
        Jet { v, d: vec![zero; n] }
    }

    /// Variable seeded in slot `idx` of `n`.
    pub fn variable(v: C, idx: usize, n: usize) -> Jet<C> {
        let mut j = Jet::constant(v, n);
        j.d[idx] = j.v.constant_like(1.0);
        j
    }

    fn chain(&self, v: C, dfac: &C) -> Jet<C> {
        Jet { v, d: self.d.iter().map(|di| di.mul(dfac)).collect() }
    }
}

/// Seeds every component of a point as an independent jet variable.
pub fn seed<C: Carrier>(x: &[C]) -> Vec<Jet<C>> {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(i, xi)| Jet::variable(xi.clone(), i, n))
        .collect()
}

impl<C: Carrier> Carrier for Jet<C> {
    fn constant_like(&self, c: f64) -> Self {
        Jet::constant(self.v.constant_like(c), self.d.len())
    }
    fn from_f64(c: f64) -> Self {
        Jet { v: C::from_f64(c), d: Vec::new() }
    }
    fn val(&self) -> f64 {
        self.v.val()
    }
    fn is_const(&self) -> bool {
        self.v.is_const() && self.d.iter().all(|di| di.is_const() && di.val() == 0.0)
    }
    fn add(&self, o: &Self) -> Self {
        debug_assert_eq!(self.d.len(), o.d.len());
        Jet {
            v: self.v.add(&o.v),
            d: self.d.iter().zip(&o.d).map(|(a, b)| a.add(b)).collect(),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        debug_assert_eq!(self.d.len(), o.d.len());
        Jet {
            v: self.v.sub(&o.v),
            d: self.d.iter().zip(&o.d).map(|(a, b)| a.sub(b)).collect(),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        debug_assert_eq!(self.d.len(), o.d.len());
        Jet {
            v: self.v.mul(&o.v),
            d: self
                .d
                .iter()
                .zip(&o.d)
                .map(|(a, b)| a.mul(&o.v).add(&self.v.mul(b)))
                .collect(),
        }
    }
    fn neg(&self) -> Self {
        Jet { v: self.v.neg(), d: self.d.iter().map(|di| di.neg()).collect() }
    }
    fn scale(&self, c: f64) -> Self {
        Jet { v: self.v.scale(c), d: self.d.iter().map(|di| di.scale(c)).collect() }
    }
    fn div(&self, o: &Self) -> Option<Self> {
        if o.val() == 0.0 {
            return None;
        }
        let q = self.v.div(&o.v)?;
        let d = self
            .d
            .iter()
            .zip(&o.d)
            .map(|(a, b)| a.sub(&q.mul(b)).div(&o.v))
            .collect::<Option<Vec<C>>>()?;
        Some(Jet { v: q, d })
    }
    fn sin(&self) -> Self {
        self.chain(self.v.sin(), &self.v.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.v.cos(), &self.v.sin().neg())
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        self.chain(e.clone(), &e)
    }
    fn tanh(&self) -> Self {
        let th = self.v.tanh();
        let one = self.v.constant_like(1.0);
        let dfac = one.sub(&th.mul(&th));
        self.chain(th, &dfac)
    }
    fn abs(&self) -> Self {
        let s = self.val();
        let sign = if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        };
        Jet { v: self.v.abs(), d: self.d.iter().map(|di| di.scale(sign)).collect() }
    }
    fn ln(&self) -> Option<Self> {
        if self.val() <= 0.0 {
            return None;
        }
        let v = self.v.ln()?;
        let one = self.v.constant_like(1.0);
        let dfac = one.div(&self.v)?;
        Some(self.chain(v, &dfac))
    }
    fn sqrt(&self) -> Option<Self> {
        if self.val() <= 0.0 {
            // value 0 is fine for plain reals but the jet derivative blows up
            return if self.val() == 0.0 { None } else { None };
        }
        let s = self.v.sqrt()?;
        let one = self.v.constant_like(1.0);
        let dfac = one.div(&s.scale(2.0))?;
        Some(self.chain(s, &dfac))
    }
    fn powi(&self, k: i32) -> Option<Self> {
        if k == 0 {
            return Some(self.constant_like(1.0));
        }
        if k < 0 {
            let p = self.powi(-k)?;
            return self.constant_like(1.0).div(&p);
        }
        // exponentiation by squaring keeps the composition division-free
        let mut result: Option<Jet<C>> = None;
        let mut base = self.clone();
        let mut e = k as u32;
        loop {
            if e & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.mul(&base),
                });
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = base.mul(&base);
        }
        result
    }
}

// ---------------------------------------------------------------------
// Gradients, Jacobians, Hessians
// ---------------------------------------------------------------------

/// Exact forward-mode gradient of a scalar field with respect to the
/// chart coordinates.
pub fn gradient(f: &ScalarField, x: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
    let (_, g) = value_and_gradient_c(f, x, t)?;
    Ok(g)
}

/// Value and gradient over any carrier; the gradient entries keep the
/// carrier's own derivative structure, so `C = Jet1` yields Hessians.
pub fn value_and_gradient_c<C: Carrier>(
    f: &ScalarField,
    x: &[C],
    t: f64,
) -> Result<(C, Vec<C>), EvalError> {
    let jets = seed(x);
    let out = f.eval(&jets, t)?;
    Ok((out.v, out.d))
}

/// Value, gradient and Hessian of a scalar field.
pub fn hessian(
    f: &ScalarField,
    x: &[f64],
    t: f64,
) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>), EvalError> {
    let lifted: Vec<Jet1> = seed(x);
    let (v, g) = value_and_gradient_c(f, &lifted, t)?;
    let grad: Vec<f64> = g.iter().map(|gi| gi.v).collect();
    let hess: Vec<Vec<f64>> = g.iter().map(|gi| gi.d.clone()).collect();
    Ok((v.v, grad, hess))
}

/// Central-difference gradient oracle. The per-coordinate step is
/// `h·max(1, |x_i|)`.
pub fn fd_gradient(f: &ScalarField, x: &[f64], t: f64, h: f64) -> Result<Vec<f64>, EvalError> {
    assert!(h > 0.0, "fd step must be positive");
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let hi = h * x[i].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += hi;
        xm[i] -= hi;
        let fp: f64 = f.eval(&xp, t)?;
        let fm: f64 = f.eval(&xm, t)?;
        g.push((fp - fm) / (2.0 * hi));
    }
    Ok(g)
}

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Stacked gradients: row i is `∇fs[i]` at the point.
pub fn jacobian(fs: &[ScalarField], x: &[f64], t: f64) -> Result<Vec<Vec<f64>>, EvalError> {
    fs.iter().map(|f| gradient(f, x, t)).collect()
}

/// Stacked gradients over an arbitrary carrier.
pub fn jacobian_c<C: Carrier>(
    fs: &[ScalarField],
    x: &[C],
    t: f64,
) -> Result<Vec<Vec<C>>, EvalError> {
    let jets = seed(x);
    fs.iter()
        .map(|f| f.eval(&jets, t).map(|out| out.d))
        .collect()
}

/// Dense determinant by LU with partial pivoting.
pub fn det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 0 {
        return 1.0;
    }
    debug_assert!(m.iter().all(|row| row.len() == n));
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut sign = 1.0;
    let mut result = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            sign = -sign;
        }
        let p = a[col][col];
        result *= p;
        for row in col + 1..n {
            let factor = a[row][col] / p;
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    sign * result
}

/// Division-free determinant over any carrier via cofactor expansion.
/// Used for jet-valued matrices where an LU pivot with zero value would
/// discard derivative information; dimensions here are small (n ≤ 6 in
/// practice).
pub fn det_c<C: Carrier>(m: &[Vec<C>]) -> C {
    let n = m.len();
    assert!(n > 0, "empty determinant");
    debug_assert!(m.iter().all(|row| row.len() == n));
    let cols: Vec<usize> = (0..n).collect();
    det_rec(m, 0, &cols)
}

fn det_rec<C: Carrier>(m: &[Vec<C>], row: usize, cols: &[usize]) -> C {
    if cols.len() == 1 {
        return m[row][cols[0]].clone();
    }
    let mut acc: Option<C> = None;
    for (pos, &c) in cols.iter().enumerate() {
        let rest: Vec<usize> = cols.iter().copied().filter(|&k| k != c).collect();
        let minor = det_rec(m, row + 1, &rest);
        let term = m[row][c].mul(&minor);
        let signed = if pos % 2 == 0 { term } else { term.neg() };
        acc = Some(match acc {
            None => signed,
            Some(a) => a.add(&signed),
        });
    }
    acc.unwrap()
}

/// Determinant of the (n−1)×(n−1) gradient matrix of `fs` with the
/// `omit`-th coordinate column deleted (0-based).
pub fn jacobian_minor(
    fs: &[ScalarField],
    x: &[f64],
    t: f64,
    omit: usize,
) -> Result<f64, EvalError> {
    let n = x.len();
    assert!(omit < n, "omitted column out of range");
    assert_eq!(fs.len(), n - 1, "minor needs n-1 fields");
    let jac = jacobian(fs, x, t)?;
    let reduced: Vec<Vec<f64>> = jac
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|&(j, _)| j != omit)
                .map(|(_, &v)| v)
                .collect()
        })
        .collect();
    Ok(det(&reduced))
}

/// Lie bracket `[X, Y] = (DY)X − (DX)Y` at a point, with both Jacobians
/// from forward-mode differentiation.
pub fn lie_bracket(
    x_field: &dyn VectorField,
    y_field: &dyn VectorField,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>, EvalError> {
    let n = x.len();
    assert_eq!(x_field.dim(), n);
    assert_eq!(y_field.dim(), n);
    let xj = x_field.jet_eval(x, t)?;
    let yj = y_field.jet_eval(x, t)?;
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for k in 0..n {
            acc += yj[i].d[k] * xj[k].v - xj[i].d[k] * yj[k].v;
        }
        out[i] = acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Chart, CoefficientTable, ScalarField};
    use crate::nambu::ExprField;
    use crate::sample;
    use rand::Rng;

    fn chart(names: &[&str]) -> Chart {
        Chart::new(names, CoefficientTable::new())
    }

    #[test]
    fn gradient_product() {
        let ch = chart(&["x", "y", "z"]);
        let f = ScalarField::parse("x*y*z", &ch).unwrap();
        let g = gradient(&f, &[2.0, 3.0, 5.0], 0.0).unwrap();
        assert_eq!(g, vec![15.0, 10.0, 6.0]);
    }

    #[test]
    fn gradient_constant_and_coordinate() {
        let ch = chart(&["x", "y", "z"]);
        let c = ScalarField::constant(4.25, &ch);
        assert_eq!(gradient(&c, &[1.0, 2.0, 3.0], 0.0).unwrap(), vec![0.0; 3]);
        let x1 = ScalarField::coordinate(0, &ch);
        assert_eq!(gradient(&x1, &[1.0, 2.0, 3.0], 0.0).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn fd_matches_closed_form() {
        let ch = chart(&["x"]);
        let f = ScalarField::parse("x^2", &ch).unwrap();
        let g = fd_gradient(&f, &[1.0], 0.0, 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9);
        let c = ScalarField::constant(7.0, &ch);
        let gc = fd_gradient(&c, &[1.0], 0.0, 1e-5).unwrap();
        assert!(gc[0].abs() <= 1e-10);
    }

    #[test]
    fn ad_fd_agreement_random_polynomials() {
        let mut rng = sample::rng(42);
        for n in 2..=5usize {
            let names: Vec<String> = (0..n).map(|i| format!("x{}", i + 1)).collect();
            let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let ch = Chart::new(&refs, CoefficientTable::new());
            for _ in 0..25 {
                let f = sample::random_polynomial(&ch, 4, &mut rng);
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let ad = gradient(&f, &x, 0.0).unwrap();
                let fd = fd_gradient(&f, &x, 0.0, FD_STEP).unwrap();
                let scale = 1.0 + ad.iter().map(|v| v.abs()).fold(0.0, f64::max);
                for (a, b) in ad.iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-6 * scale, "ad={a} fd={b} n={n}");
                }
            }
        }
    }

    #[test]
    fn gradient_linearity() {
        let mut rng = sample::rng(7);
        let ch = chart(&["x", "y", "z"]);
        let f = sample::random_polynomial(&ch, 3, &mut rng);
        let g = sample::random_polynomial(&ch, 3, &mut rng);
        let combo = f.scaled(2.5).sum(&g.scaled(-1.25));
        let x = [0.3, -0.7, 1.1];
        let gf = gradient(&f, &x, 0.0).unwrap();
        let gg = gradient(&g, &x, 0.0).unwrap();
        let gc = gradient(&combo, &x, 0.0).unwrap();
        for i in 0..3 {
            assert!((gc[i] - (2.5 * gf[i] - 1.25 * gg[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_of_coordinates_is_identity() {
        let ch = chart(&["x", "y", "z"]);
        let fs: Vec<ScalarField> = (0..3).map(|i| ScalarField::coordinate(i, &ch)).collect();
        let j = jacobian(&fs, &[0.4, 0.5, 0.6], 0.0).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                assert_eq!(j[i][k], if i == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn jacobian_fun3ks_at_unit_point() {
        // rows of grad(h1, h2, h3) at (x,v,a) = (1,1,1), c0 = 0
        let ch = chart(&["x", "v", "a"]);
        let h1 = ScalarField::parse("-2/v", &ch).unwrap();
        let h2 = ScalarField::parse("-a/v^2", &ch).unwrap();
        let h3 = ScalarField::parse("-a^2/(2*v^3)", &ch).unwrap();
        let j = jacobian(&[h1, h2, h3], &[1.0, 1.0, 1.0], 0.0).unwrap();
        let expect = [[0.0, 2.0, 0.0], [0.0, 2.0, -1.0], [0.0, 1.5, -1.0]];
        for i in 0..3 {
            for k in 0..3 {
                assert!((j[i][k] - expect[i][k]).abs() < 1e-14, "entry ({i},{k})");
            }
        }
    }

    #[test]
    fn minor_cases() {
        let ch = chart(&["x", "y", "z"]);
        let y = ScalarField::coordinate(1, &ch);
        let z = ScalarField::coordinate(2, &ch);
        let m = jacobian_minor(&[y.clone(), z.clone()], &[1.0, 1.0, 1.0], 0.0, 0).unwrap();
        assert_eq!(m, 1.0);
        // repeated field gives a repeated row
        let m0 = jacobian_minor(&[y.clone(), y.clone()], &[1.0, 2.0, 3.0], 0.0, 2).unwrap();
        assert_eq!(m0, 0.0);
        let x = ScalarField::coordinate(0, &ch);
        let xyz = ScalarField::parse("x*y*z", &ch).unwrap();
        let m6 = jacobian_minor(&[x, xyz], &[2.0, 3.0, 5.0], 0.0, 1).unwrap();
        assert!((m6 - 6.0).abs() < 1e-12);
    }

    #[test]
    fn minor_antisymmetry_exact() {
        let mut rng = sample::rng(11);
        let ch = chart(&["x", "y", "z", "w"]);
        let f1 = sample::random_polynomial(&ch, 3, &mut rng);
        let f2 = sample::random_polynomial(&ch, 3, &mut rng);
        let f3 = sample::random_polynomial(&ch, 3, &mut rng);
        let x = [0.2, -0.4, 0.9, 1.3];
        for omit in 0..4 {
            let a = jacobian_minor(&[f1.clone(), f2.clone(), f3.clone()], &x, 0.0, omit).unwrap();
            let b = jacobian_minor(&[f2.clone(), f1.clone(), f3.clone()], &x, 0.0, omit).unwrap();
            assert_eq!(a, -b);
        }
    }

    #[test]
    fn cofactor_matches_lu() {
        let mut rng = sample::rng(3);
        for n in 1..=4usize {
            for _ in 0..20 {
                let m: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect())
                    .collect();
                let a = det(&m);
                let b = det_c(&m);
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "n={n} lu={a} cof={b}");
            }
        }
    }

    #[test]
    fn hessian_of_cubic() {
        let ch = chart(&["x", "y"]);
        let f = ScalarField::parse("x^2*y + y^3", &ch).unwrap();
        let (v, g, h) = hessian(&f, &[2.0, 3.0], 0.0).unwrap();
        assert!((v - 39.0).abs() < 1e-12);
        assert!((g[0] - 12.0).abs() < 1e-12 && (g[1] - 31.0).abs() < 1e-12);
        assert!((h[0][0] - 6.0).abs() < 1e-12); // 2y
        assert!((h[0][1] - 4.0).abs() < 1e-12); // 2x
        assert!((h[1][0] - 4.0).abs() < 1e-12);
        assert!((h[1][1] - 18.0).abs() < 1e-12); // 6y
    }

    #[test]
    fn lie_bracket_cases() {
        let ch = chart(&["x", "y", "z"]);
        let x_field = ExprField::parse("X", &["1", "0", "0"], &ch).unwrap();
        // x ∂/∂y
        let y_field = ExprField::parse("Y", &["0", "x", "0"], &ch).unwrap();
        let b = lie_bracket(&x_field, &y_field, &[0.7, -0.3, 0.2], 0.0).unwrap();
        assert_eq!(b, vec![0.0, 1.0, 0.0]);
        // antisymmetry: [X, X] = 0
        let bb = lie_bracket(&y_field, &y_field, &[0.7, -0.3, 0.2], 0.0).unwrap();
        assert_eq!(bb, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn lie_bracket_ks3_y1_y2() {
        let ch = chart(&["x", "v", "a"]);
        let y1 = ExprField::parse("Y1", &["0", "0", "2*v"], &ch).unwrap();
        let y2 = ExprField::parse("Y2", &["0", "v", "2*a"], &ch).unwrap();
        let b = lie_bracket(&y1, &y2, &[1.0, 2.0, 3.0], 0.0).unwrap();
        // [Y1, Y2] = Y1, so at (1,2,3) this is (0,0,4)
        assert_eq!(b, vec![0.0, 0.0, 4.0]);
    }

    #[test]
    fn lie_bracket_bilinearity_antisymmetry_sampled() {
        let ch = chart(&["x", "v", "a"]);
        let y1 = ExprField::parse("Y1", &["0", "0", "2*v"], &ch).unwrap();
        let y3 =
            ExprField::parse("Y3", &["v", "a", "3/2*a^2/v"], &ch).unwrap();
        let mut rng = sample::rng(5);
        for _ in 0..20 {
            let x = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.5..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let ab = lie_bracket(&y1, &y3, &x, 0.0).unwrap();
            let ba = lie_bracket(&y3, &y1, &x, 0.0).unwrap();
            for i in 0..3 {
                assert!((ab[i] + ba[i]).abs() < 1e-10);
            }
        }
    }
}
