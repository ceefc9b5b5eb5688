//! Volume Nambu–Poisson structures.
//!
//! An n-dimensional chart with a nowhere-zero density ρ carries the n-ary
//! bracket `{f₁,…,fₙ} = det(∂fᵢ/∂xʲ)/ρ`. A tuple of n−1 Hamiltonians
//! induces a vector field through the sharp map; this module provides the
//! bracket, the sharp map on basis (n−1)-forms, Hamiltonian vector
//! fields, and residual checkers for the algebraic identities
//! (antisymmetry, Leibniz, the fundamental identity) plus the divergence
//! diagnostic.

use crate::diff::{self, Carrier, Jet, Jet1};
use crate::expr::{Chart, EvalError, ScalarField};

/// Threshold below which a "nonzero" field counts as zero.
pub const DOMAIN_EPS: f64 = 1e-12;

/// Open-set membership test: a list of fields that must all be nonzero
/// (in absolute value above [`DOMAIN_EPS`]) at a point.
#[derive(Debug, Clone)]
pub struct DomainPredicate {
    nonzero: Vec<ScalarField>,
}

impl DomainPredicate {
    /// The whole chart (no constraints).
    pub fn all(_chart: &Chart) -> DomainPredicate {
        DomainPredicate { nonzero: Vec::new() }
    }

    /// Requires every listed field to be nonzero.
    pub fn nonzero(fields: Vec<ScalarField>) -> DomainPredicate {
        DomainPredicate { nonzero: fields }
    }

    pub fn constraints(&self) -> &[ScalarField] {
        &self.nonzero
    }

    /// True if the point satisfies every constraint (an evaluation error
    /// counts as outside).
    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        self.nonzero.iter().all(|f| {
            f.eval(x, t).map(|v: f64| v.abs() > DOMAIN_EPS).unwrap_or(false)
        })
    }

    /// Errors with the first violated constraint.
    pub fn check(&self, x: &[f64], t: f64) -> Result<(), EvalError> {
        for f in &self.nonzero {
            let ok = f.eval(x, t).map(|v: f64| v.abs() > DOMAIN_EPS).unwrap_or(false);
            if !ok {
                return Err(EvalError::OutsideDomain(f.text()));
            }
        }
        Ok(())
    }
}

/// Volume structure Ω = ρ dx¹∧…∧dxⁿ on an open subset of ℝⁿ.
#[derive(Debug, Clone)]
pub struct VolumeNPStructure {
    chart: Chart,
    density: ScalarField,
    domain: DomainPredicate,
}

impl VolumeNPStructure {
    pub fn new(
        chart: Chart,
        density: ScalarField,
        domain: DomainPredicate,
    ) -> VolumeNPStructure {
        assert!(chart.dim() >= 3, "volume structures need dimension ≥ 3");
        assert_eq!(density.chart(), &chart, "density chart mismatch");
        VolumeNPStructure { chart, density, domain }
    }

    /// Canonical structure ρ ≡ 1 on the whole chart.
    pub fn canonical(chart: &Chart) -> VolumeNPStructure {
        VolumeNPStructure::new(
            chart.clone(),
            ScalarField::constant(1.0, chart),
            DomainPredicate::all(chart),
        )
    }

    /// Same chart and domain with a replacement density.
    pub fn with_density(&self, density: ScalarField) -> VolumeNPStructure {
        assert_eq!(density.chart(), &self.chart);
        VolumeNPStructure {
            chart: self.chart.clone(),
            density,
            domain: self.domain.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn density(&self) -> &ScalarField {
        &self.density
    }

    pub fn domain(&self) -> &DomainPredicate {
        &self.domain
    }

    /// Checks the domain predicate and that ρ ≠ 0; returns ρ(x, t).
    pub fn density_at(&self, x: &[f64], t: f64) -> Result<f64, EvalError> {
        self.domain.check(x, t)?;
        let rho: f64 = self.density.eval(x, t)?;
        if rho.abs() <= DOMAIN_EPS {
            return Err(EvalError::OutsideDomain(self.density.text()));
        }
        Ok(rho)
    }
}

/// Ordered (n−1)-tuple of Hamiltonians over a volume structure.
#[derive(Debug, Clone)]
pub struct HamiltonianTuple {
    structure: VolumeNPStructure,
    fields: Vec<ScalarField>,
}

impl HamiltonianTuple {
    pub fn new(structure: VolumeNPStructure, fields: Vec<ScalarField>) -> HamiltonianTuple {
        assert_eq!(
            fields.len(),
            structure.dim() - 1,
            "a Hamiltonian tuple has exactly n-1 fields"
        );
        for f in &fields {
            assert_eq!(f.chart(), structure.chart(), "Hamiltonian chart mismatch");
        }
        HamiltonianTuple { structure, fields }
    }

    pub fn structure(&self) -> &VolumeNPStructure {
        &self.structure
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn dim(&self) -> usize {
        self.structure.dim()
    }
}

// ---------------------------------------------------------------------
// Vector fields
// ---------------------------------------------------------------------

/// Evaluable vector field on a chart (or on the base of a fibration).
pub trait VectorField: Send + Sync {
    fn label(&self) -> &str;
    fn dim(&self) -> usize;
    /// Component values at a point.
    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EvalError>;
    /// Component values with their coordinate gradients.
    fn jet_eval(&self, x: &[f64], t: f64) -> Result<Vec<Jet1>, EvalError>;
}

/// Vector field with expression components.
#[derive(Debug, Clone)]
pub struct ExprField {
    label: String,
    components: Vec<ScalarField>,
}

impl ExprField {
    pub fn parse(label: &str, components: &[&str], chart: &Chart) -> Result<ExprField, crate::expr::ParseError> {
        let comps = components
            .iter()
            .map(|c| ScalarField::parse(c, chart))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExprField::from_fields(label, comps))
    }

    pub fn from_fields(label: &str, components: Vec<ScalarField>) -> ExprField {
        assert!(!components.is_empty());
        for c in &components {
            assert_eq!(c.chart(), components[0].chart());
        }
        ExprField { label: label.to_string(), components }
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }
}

impl VectorField for ExprField {
    fn label(&self) -> &str {
        &self.label
    }
    fn dim(&self) -> usize {
        self.components.len()
    }
    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        self.components.iter().map(|c| c.eval(x, t)).collect()
    }
    fn jet_eval(&self, x: &[f64], t: f64) -> Result<Vec<Jet1>, EvalError> {
        let jets = diff::seed(x);
        self.components.iter().map(|c| c.eval(&jets, t)).collect()
    }
}

/// Vector field given by a closure; supports plain evaluation only.
pub struct FnField<F> {
    label: String,
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>, EvalError> + Send + Sync,
{
    pub fn new(label: &str, dim: usize, f: F) -> FnField<F> {
        FnField { label: label.to_string(), dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>, EvalError> + Send + Sync,
{
    fn label(&self) -> &str {
        &self.label
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        let v = (self.f)(x, t)?;
        debug_assert_eq!(v.len(), self.dim);
        Ok(v)
    }
    fn jet_eval(&self, _x: &[f64], _t: f64) -> Result<Vec<Jet1>, EvalError> {
        Err(EvalError::UnsupportedJet(self.label.clone()))
    }
}

/// Sharp image of a basis (n−1)-form: the single nonzero component
/// `(−1)^{n−1−i}/ρ` in slot `i` (0-based).
pub struct SharpBasisField {
    label: String,
    structure: VolumeNPStructure,
    slot: usize,
}

impl SharpBasisField {
    fn component_sign(&self) -> f64 {
        if (self.structure.dim() - 1 - self.slot) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl VectorField for SharpBasisField {
    fn label(&self) -> &str {
        &self.label
    }
    fn dim(&self) -> usize {
        self.structure.dim()
    }
    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        let rho = self.structure.density_at(x, t)?;
        let mut out = vec![0.0; self.dim()];
        out[self.slot] = self.component_sign() / rho;
        Ok(out)
    }
    fn jet_eval(&self, x: &[f64], t: f64) -> Result<Vec<Jet1>, EvalError> {
        self.structure.density_at(x, t)?;
        let jets = diff::seed(x);
        let rho: Jet1 = self.structure.density.eval(&jets, t)?;
        let n = self.dim();
        let zero = Jet::constant(0.0, n);
        let mut out = vec![zero; n];
        let one = rho.constant_like(self.component_sign());
        out[self.slot] = one
            .div(&rho)
            .ok_or_else(|| EvalError::OutsideDomain(self.structure.density.text()))?;
        Ok(out)
    }
}

/// `♯(dx¹∧…∧dx̌ⁱ∧…∧dxⁿ)` with `omit` the 0-based omitted coordinate.
pub fn sharp_basis(structure: &VolumeNPStructure, omit: usize) -> SharpBasisField {
    assert!(omit < structure.dim(), "omitted index out of range");
    SharpBasisField {
        label: format!("sharp_basis[{}]", structure.chart().coords()[omit]),
        structure: structure.clone(),
        slot: omit,
    }
}

/// The Hamiltonian vector field `X_{H₁…H_{n−1}} = ♯(dH₁∧…∧dH_{n−1})`,
/// with components `Xⁱ = {H₁,…,H_{n−1}, xⁱ}`.
pub struct HamiltonianField {
    label: String,
    tuple: HamiltonianTuple,
}

impl HamiltonianField {
    pub fn tuple(&self) -> &HamiltonianTuple {
        &self.tuple
    }

    /// Components over an arbitrary carrier lifted from a real point:
    /// `Xⁱ = (−1)^{n−1−i}·minorᵢ/ρ` (0-based `i`), with the minors of the
    /// Hamiltonian Jacobian computed by forward-mode differentiation.
    fn components_c<C: Carrier>(&self, x: &[C], t: f64) -> Result<Vec<C>, EvalError> {
        let st = self.tuple.structure();
        let n = st.dim();
        let jets = diff::seed(x);
        let rho: C = st.density.eval(x, t)?;
        let jac: Vec<Vec<C>> = self
            .tuple
            .fields
            .iter()
            .map(|h| h.eval(&jets, t).map(|out| out.d))
            .collect::<Result<_, _>>()?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let reduced: Vec<Vec<C>> = jac
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, v)| v.clone())
                        .collect()
                })
                .collect();
            let minor = if n == 1 {
                rho.constant_like(1.0)
            } else {
                diff::det_c(&reduced)
            };
            let signed = if (n - 1 - i) % 2 == 0 { minor } else { minor.neg() };
            let comp = signed
                .div(&rho)
                .ok_or_else(|| EvalError::OutsideDomain(st.density.text()))?;
            out.push(comp);
        }
        Ok(out)
    }
}

impl VectorField for HamiltonianField {
    fn label(&self) -> &str {
        &self.label
    }
    fn dim(&self) -> usize {
        self.tuple.dim()
    }
    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        self.tuple.structure().density_at(x, t)?;
        self.components_c::<f64>(x, t)
    }
    fn jet_eval(&self, x: &[f64], t: f64) -> Result<Vec<Jet1>, EvalError> {
        self.tuple.structure().density_at(x, t)?;
        self.components_c::<Jet1>(&diff::seed(x), t)
    }
}

pub fn hamiltonian_vector_field(tuple: HamiltonianTuple) -> HamiltonianField {
    let names: Vec<String> = tuple.fields.iter().map(|f| f.text()).collect();
    HamiltonianField { label: format!("X[{}]", names.join(", ")), tuple }
}

// ---------------------------------------------------------------------
// The bracket and identity checkers
// ---------------------------------------------------------------------

/// The n-ary bracket `{f₁,…,fₙ} = det(∂fᵢ/∂xʲ)/ρ` at a point.
pub fn bracket(
    structure: &VolumeNPStructure,
    fs: &[ScalarField],
    x: &[f64],
    t: f64,
) -> Result<f64, EvalError> {
    let n = structure.dim();
    assert_eq!(fs.len(), n, "the bracket takes exactly n arguments");
    let rho = structure.density_at(x, t)?;
    let jac = diff::jacobian(fs, x, t)?;
    Ok(diff::det(&jac) / rho)
}

/// Residual of the fundamental identity at a point:
/// `X_f{g₁,…,gₙ} − Σᵢ {g₁,…,X_f gᵢ,…,gₙ}` where `X_f` is the
/// Hamiltonian field of the (n−1)-tuple `fs`.
///
/// The left-hand directional derivative is a central difference along
/// `X_f` with steps `h` and `h/2` combined by Richardson extrapolation;
/// the right-hand rows are exact forward-mode derivatives.
pub fn fundamental_identity_residual(
    structure: &VolumeNPStructure,
    fs: &[ScalarField],
    gs: &[ScalarField],
    x: &[f64],
    t: f64,
) -> Result<f64, EvalError> {
    let n = structure.dim();
    assert_eq!(fs.len(), n - 1);
    assert_eq!(gs.len(), n);
    let field = hamiltonian_vector_field(HamiltonianTuple::new(structure.clone(), fs.to_vec()));
    let xf = field.eval(x, t)?;

    // LHS: d/ds {g…}(x + s·X) at s = 0.
    let speed = xf.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let h = 1e-4 / speed;
    let dd = |s: f64| -> Result<f64, EvalError> {
        let shifted: Vec<f64> = x.iter().zip(&xf).map(|(xi, vi)| xi + s * vi).collect();
        bracket(structure, gs, &shifted, t)
    };
    let slope = |step: f64| -> Result<f64, EvalError> {
        Ok((dd(step)? - dd(-step)?) / (2.0 * step))
    };
    let d1 = slope(h)?;
    let d2 = slope(h / 2.0)?;
    let lhs = (4.0 * d2 - d1) / 3.0;

    // RHS: replace row i of the g-Jacobian by ∇(X_f gᵢ) where
    // ∇(Σₖ Xᵏ ∂ₖg) = Σₖ (∇Xᵏ)(∂ₖg) + Xᵏ·Hess(g) row k.
    let rho = structure.density_at(x, t)?;
    let xjets = field.jet_eval(x, t)?;
    let jac = diff::jacobian(gs, x, t)?;
    let mut rhs = 0.0;
    for i in 0..n {
        let (_, _, hess) = diff::hessian(&gs[i], x, t)?;
        let mut replaced = jac.clone();
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += xjets[k].d[j] * jac[i][k] + xjets[k].v * hess[k][j];
            }
            replaced[i][j] = acc;
        }
        rhs += diff::det(&replaced) / rho;
    }
    Ok(lhs - rhs)
}

/// Residual of the Leibniz rule in the first slot:
/// `{f·g, rest…} − f·{g, rest…} − g·{f, rest…}`.
pub fn leibniz_residual(
    structure: &VolumeNPStructure,
    f: &ScalarField,
    g: &ScalarField,
    rest: &[ScalarField],
    x: &[f64],
    t: f64,
) -> Result<f64, EvalError> {
    let n = structure.dim();
    assert_eq!(rest.len(), n - 1);
    let with = |first: ScalarField| -> Vec<ScalarField> {
        let mut v = vec![first];
        v.extend_from_slice(rest);
        v
    };
    let fg = bracket(structure, &with(f.product(g)), x, t)?;
    let bf = bracket(structure, &with(f.clone()), x, t)?;
    let bg = bracket(structure, &with(g.clone()), x, t)?;
    let fv: f64 = f.eval(x, t)?;
    let gv: f64 = g.eval(x, t)?;
    Ok(fg - fv * bg - gv * bf)
}

/// Divergence with respect to the volume: `(1/ρ)·Σᵢ ∂(ρ Xⁱ)/∂xⁱ`.
pub fn divergence(
    structure: &VolumeNPStructure,
    field: &dyn VectorField,
    x: &[f64],
    t: f64,
) -> Result<f64, EvalError> {
    let rho = structure.density_at(x, t)?;
    let grad_rho = diff::gradient(&structure.density, x, t)?;
    let xjets = field.jet_eval(x, t)?;
    let mut acc = 0.0;
    for i in 0..structure.dim() {
        acc += xjets[i].d[i] + xjets[i].v * grad_rho[i] / rho;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::CoefficientTable;
    use crate::sample;

    fn chart3() -> Chart {
        Chart::new(&["x", "y", "z"], CoefficientTable::new())
    }

    fn coords(ch: &Chart) -> Vec<ScalarField> {
        (0..ch.dim()).map(|i| ScalarField::coordinate(i, ch)).collect()
    }

    #[test]
    fn canonical_bracket_of_coordinates() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let fs = coords(&ch);
        let p = [0.3, -1.2, 2.0];
        assert_eq!(bracket(&st, &fs, &p, 0.0).unwrap(), 1.0);
        let swapped = vec![fs[1].clone(), fs[0].clone(), fs[2].clone()];
        assert_eq!(bracket(&st, &swapped, &p, 0.0).unwrap(), -1.0);
    }

    #[test]
    fn bracket_product_example() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let fs = vec![
            ScalarField::coordinate(0, &ch),
            ScalarField::coordinate(1, &ch),
            ScalarField::parse("x*y*z", &ch).unwrap(),
        ];
        let v = bracket(&st, &fs, &[2.0, 3.0, 5.0], 0.0).unwrap();
        assert!((v - 6.0).abs() < 1e-12);
    }

    #[test]
    fn bracket_antisymmetry_under_permutations() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let mut rng = sample::rng(21);
        let fs: Vec<ScalarField> =
            (0..3).map(|_| sample::random_polynomial(&ch, 3, &mut rng)).collect();
        let p = [0.4, 0.9, -0.6];
        let base = bracket(&st, &fs, &p, 0.0).unwrap();
        // odd permutation: swap first two
        let odd = vec![fs[1].clone(), fs[0].clone(), fs[2].clone()];
        assert_eq!(bracket(&st, &odd, &p, 0.0).unwrap(), -base);
        // even permutation: 3-cycle
        let even = vec![fs[1].clone(), fs[2].clone(), fs[0].clone()];
        let cycled = bracket(&st, &even, &p, 0.0).unwrap();
        assert!((cycled - base).abs() <= 1e-12 * (1.0 + base.abs()));
    }

    #[test]
    fn density_covariance_exact() {
        let ch = chart3();
        let st1 = VolumeNPStructure::canonical(&ch);
        let st2 = st1.with_density(ScalarField::constant(2.0, &ch));
        let mut rng = sample::rng(22);
        let fs: Vec<ScalarField> =
            (0..3).map(|_| sample::random_polynomial(&ch, 3, &mut rng)).collect();
        let p = [1.0, -0.5, 0.25];
        let b1 = bracket(&st1, &fs, &p, 0.0).unwrap();
        let b2 = bracket(&st2, &fs, &p, 0.0).unwrap();
        assert_eq!(b2, b1 / 2.0);
        let f1 = hamiltonian_vector_field(HamiltonianTuple::new(
            st1.clone(),
            fs[..2].to_vec(),
        ));
        let f2 = hamiltonian_vector_field(HamiltonianTuple::new(
            st2.clone(),
            fs[..2].to_vec(),
        ));
        let v1 = f1.eval(&p, 0.0).unwrap();
        let v2 = f2.eval(&p, 0.0).unwrap();
        for i in 0..3 {
            assert_eq!(v2[i], v1[i] / 2.0);
        }
    }

    #[test]
    fn sharp_basis_signs() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let p = [0.1, 0.2, 0.3];
        // omitting the last coordinate leaves +∂/∂x³
        assert_eq!(sharp_basis(&st, 2).eval(&p, 0.0).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(sharp_basis(&st, 1).eval(&p, 0.0).unwrap(), vec![0.0, -1.0, 0.0]);
        // constant density divides through
        let ch4 = Chart::new(&["x1", "x2", "x3", "x4"], CoefficientTable::new());
        let st4 = VolumeNPStructure::canonical(&ch4)
            .with_density(ScalarField::constant(2.0, &ch4));
        assert_eq!(
            sharp_basis(&st4, 3).eval(&[0.0; 4], 0.0).unwrap(),
            vec![0.0, 0.0, 0.0, 0.5]
        );
    }

    #[test]
    fn hamiltonian_field_of_coordinate_pair() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let h = HamiltonianTuple::new(
            st,
            vec![ScalarField::coordinate(1, &ch), ScalarField::coordinate(2, &ch)],
        );
        let x = hamiltonian_vector_field(h);
        assert_eq!(x.eval(&[0.7, 0.1, -0.4], 0.0).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn generators_are_conserved() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let mut rng = sample::rng(23);
        for _ in 0..20 {
            let hs: Vec<ScalarField> =
                (0..2).map(|_| sample::random_polynomial(&ch, 3, &mut rng)).collect();
            let field = hamiltonian_vector_field(HamiltonianTuple::new(st.clone(), hs.clone()));
            let p = sample::random_point(3, -2.0, 2.0, &mut rng);
            let xv = field.eval(&p, 0.0).unwrap();
            for h in &hs {
                let g = diff::gradient(h, &p, 0.0).unwrap();
                let pairing: f64 = g.iter().zip(&xv).map(|(a, b)| a * b).sum();
                assert!(pairing.abs() <= 1e-10, "⟨dH, X⟩ = {pairing}");
            }
        }
    }

    #[test]
    fn divergence_cases() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let constant = ExprField::parse("C", &["1", "2", "3"], &ch).unwrap();
        assert_eq!(divergence(&st, &constant, &[0.0; 3], 0.0).unwrap(), 0.0);
        let radial = ExprField::parse("R", &["x", "0", "0"], &ch).unwrap();
        assert_eq!(divergence(&st, &radial, &[0.5, 0.5, 0.5], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn hamiltonian_fields_are_divergence_free() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let mut rng = sample::rng(24);
        for _ in 0..20 {
            let hs: Vec<ScalarField> =
                (0..2).map(|_| sample::random_polynomial(&ch, 3, &mut rng)).collect();
            let field = hamiltonian_vector_field(HamiltonianTuple::new(st.clone(), hs));
            let p = sample::random_point(3, -2.0, 2.0, &mut rng);
            let d = divergence(&st, &field, &p, 0.0).unwrap();
            assert!(d.abs() <= 1e-9, "divergence {d}");
        }
    }

    #[test]
    fn leibniz_hand_case() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let f = ScalarField::coordinate(0, &ch);
        let g = ScalarField::coordinate(1, &ch);
        let rest = vec![ScalarField::coordinate(1, &ch), ScalarField::coordinate(2, &ch)];
        let r = leibniz_residual(&st, &f, &g, &rest, &[1.0, 1.0, 1.0], 0.0).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn leibniz_random_polynomials() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let mut rng = sample::rng(25);
        for _ in 0..30 {
            let f = sample::random_polynomial(&ch, 3, &mut rng);
            let g = sample::random_polynomial(&ch, 3, &mut rng);
            let rest: Vec<ScalarField> =
                (0..2).map(|_| sample::random_polynomial(&ch, 3, &mut rng)).collect();
            let p = sample::random_point(3, -1.5, 1.5, &mut rng);
            let r = leibniz_residual(&st, &f, &g, &rest, &p, 0.0).unwrap();
            assert!(r.abs() <= 1e-9, "leibniz residual {r}");
        }
    }

    #[test]
    fn leibniz_unit_element() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let one = ScalarField::constant(1.0, &ch);
        let mut rng = sample::rng(26);
        let g = sample::random_polynomial(&ch, 3, &mut rng);
        let rest: Vec<ScalarField> =
            (0..2).map(|_| sample::random_polynomial(&ch, 3, &mut rng)).collect();
        let r = leibniz_residual(&st, &one, &g, &rest, &[0.2, 0.4, 0.8], 0.0).unwrap();
        assert!(r.abs() <= 1e-12);
    }

    #[test]
    fn fundamental_identity_trivial_cases() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let fs = vec![ScalarField::coordinate(1, &ch), ScalarField::coordinate(2, &ch)];
        // all g constant
        let gs_const: Vec<ScalarField> =
            (0..3).map(|i| ScalarField::constant(i as f64, &ch)).collect();
        let r = fundamental_identity_residual(&st, &fs, &gs_const, &[0.5, 0.5, 0.5], 0.0).unwrap();
        assert!(r.abs() <= 1e-12);
        // coordinate g's: both sides differentiate the constant 1
        let gs = coords(&ch);
        let r2 = fundamental_identity_residual(&st, &fs, &gs, &[0.5, 0.5, 0.5], 0.0).unwrap();
        assert!(r2.abs() <= 1e-10);
    }

    #[test]
    fn fundamental_identity_random_polynomials() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let mut rng = sample::rng(27);
        for _ in 0..30 {
            let fs: Vec<ScalarField> =
                (0..2).map(|_| sample::random_polynomial(&ch, 3, &mut rng)).collect();
            let gs: Vec<ScalarField> =
                (0..3).map(|_| sample::random_polynomial(&ch, 3, &mut rng)).collect();
            let p = sample::random_point(3, -1.5, 1.5, &mut rng);
            let r = fundamental_identity_residual(&st, &fs, &gs, &p, 0.0).unwrap();
            assert!(r.abs() <= 1e-6, "fi residual {r}");
        }
    }

    #[test]
    fn domain_predicate_blocks_singular_points() {
        let ch = Chart::new(&["x", "v", "a"], CoefficientTable::new());
        let dom = DomainPredicate::nonzero(vec![ScalarField::coordinate(1, &ch)]);
        assert!(dom.contains(&[0.0, 1.0, 0.0], 0.0));
        assert!(!dom.contains(&[0.0, 0.0, 0.0], 0.0));
        assert!(matches!(
            dom.check(&[0.0, 0.0, 0.0], 0.0),
            Err(EvalError::OutsideDomain(_))
        ));
    }

    #[test]
    fn zero_density_is_outside_domain() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch)
            .with_density(ScalarField::coordinate(0, &ch));
        let fs = coords(&ch);
        assert!(bracket(&st, &fs, &[0.0, 1.0, 1.0], 0.0).is_err());
        assert!((bracket(&st, &fs, &[2.0, 1.0, 1.0], 0.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn jet_eval_matches_eval_values() {
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let mut rng = sample::rng(28);
        let hs: Vec<ScalarField> =
            (0..2).map(|_| sample::random_polynomial(&ch, 3, &mut rng)).collect();
        let field = hamiltonian_vector_field(HamiltonianTuple::new(st, hs));
        let p = [0.3, 0.6, -0.9];
        let plain = field.eval(&p, 0.0).unwrap();
        let jets = field.jet_eval(&p, 0.0).unwrap();
        for i in 0..3 {
            assert_eq!(plain[i], jets[i].v);
        }
        // jet gradients match FD of the components
        let h = 1e-5;
        for i in 0..3 {
            for j in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[j] += h;
                pm[j] -= h;
                let fp = field.eval(&pp, 0.0).unwrap()[i];
                let fm = field.eval(&pm, 0.0).unwrap()[i];
                let fd = (fp - fm) / (2.0 * h);
                assert!((jets[i].d[j] - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn fn_field_rejects_jets() {
        let f = FnField::new("closure", 2, |x: &[f64], _| Ok(vec![x[1], -x[0]]));
        assert_eq!(f.eval(&[1.0, 2.0], 0.0).unwrap(), vec![2.0, -1.0]);
        assert!(matches!(
            f.jet_eval(&[1.0, 2.0], 0.0),
            Err(EvalError::UnsupportedJet(_))
        ));
    }

    #[test]
    fn n4_bracket_and_field() {
        let ch = Chart::new(&["x1", "x2", "x3", "x4"], CoefficientTable::new());
        let st = VolumeNPStructure::canonical(&ch);
        let fs: Vec<ScalarField> = (0..4).map(|i| ScalarField::coordinate(i, &ch)).collect();
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(bracket(&st, &fs, &p, 0.0).unwrap(), 1.0);
        // X_{x2,x3,x4} has components {x2,x3,x4,xi}: only the x1 slot is
        // nonzero and equals {x2,x3,x4,x1} = -1
        let field = hamiltonian_vector_field(HamiltonianTuple::new(st, fs[1..].to_vec()));
        assert_eq!(field.eval(&p, 0.0).unwrap(), vec![-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn leibniz_dimension_sweep() {
        let mut rng = sample::rng(29);
        for n in [4usize, 5] {
            let names: Vec<String> = (0..n).map(|i| format!("x{}", i + 1)).collect();
            let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let ch = Chart::new(&refs, CoefficientTable::new());
            let st = VolumeNPStructure::canonical(&ch);
            for _ in 0..10 {
                let f = sample::random_polynomial(&ch, 2, &mut rng);
                let g = sample::random_polynomial(&ch, 2, &mut rng);
                let rest: Vec<ScalarField> = (0..n - 1)
                    .map(|_| sample::random_polynomial(&ch, 2, &mut rng))
                    .collect();
                let p = sample::random_point(n, -1.0, 1.0, &mut rng);
                let r = leibniz_residual(&st, &f, &g, &rest, &p, 0.0).unwrap();
                assert!(r.abs() <= 1e-9, "n={n} residual {r}");
            }
        }
    }

    #[test]
    fn ham_field_component_anchor() {
        // Xⁱ must equal {H…, xⁱ} computed independently through the bracket.
        let ch = chart3();
        let st = VolumeNPStructure::canonical(&ch);
        let mut rng = sample::rng(30);
        for _ in 0..10 {
            let hs: Vec<ScalarField> =
                (0..2).map(|_| sample::random_polynomial(&ch, 3, &mut rng)).collect();
            let field = hamiltonian_vector_field(HamiltonianTuple::new(st.clone(), hs.clone()));
            let p = sample::random_point(3, -1.5, 1.5, &mut rng);
            let xv = field.eval(&p, 0.0).unwrap();
            for i in 0..3 {
                let mut args = hs.clone();
                args.push(ScalarField::coordinate(i, &ch));
                let b = bracket(&st, &args, &p, 0.0).unwrap();
                assert!((xv[i] - b).abs() <= 1e-10 * (1.0 + b.abs()), "slot {i}");
            }
        }
    }
}
