//! Geometric Hamilton–Jacobi verification for graph sections.
//!
//! The fibration is always the drop-last-coordinate projection
//! `π(x¹,…,xⁿ) = (x¹,…,xⁿ⁻¹)`. A section is a graph
//! `γ(x) = (x, γⁿ(x))`; the HJ condition for a Hamiltonian tuple is that
//! the Hamiltonian field and its projection are γ-related, equivalently
//! that `d(H₁∘γ)∧…∧d(H_{n−1}∘γ) = 0`. Relatedness is the designated
//! ground truth; the determinant and minor-sum residuals are validated
//! against it.

use nalgebra::DMatrix;

use crate::diff::{self, Jet1};
use crate::expr::{Chart, EvalError, ScalarField};
use crate::nambu::{
    hamiltonian_vector_field, HamiltonianField, HamiltonianTuple, VectorField,
    VolumeNPStructure,
};

/// Rank tolerance on singular values for the pointwise linear algebra.
pub const RANK_TOL: f64 = 1e-10;

/// Graph section of the drop-last-coordinate projection.
#[derive(Debug, Clone)]
pub struct Section {
    chart: Chart,
    gamma: ScalarField,
}

impl Section {
    /// `gamma` must live on the base chart (first n−1 coordinates).
    pub fn new(chart: &Chart, gamma: ScalarField) -> Section {
        assert!(chart.dim() >= 2);
        assert_eq!(
            gamma.dim(),
            chart.dim() - 1,
            "the fiber component is a field on the base coordinates"
        );
        Section { chart: chart.clone(), gamma }
    }

    pub fn parse(chart: &Chart, text: &str) -> Result<Section, crate::expr::ParseError> {
        let base = chart.base_chart();
        Ok(Section::new(chart, ScalarField::parse(text, &base)?))
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn gamma(&self) -> &ScalarField {
        &self.gamma
    }

    pub fn base_dim(&self) -> usize {
        self.chart.dim() - 1
    }

    /// `γ(x) = (x, γⁿ(x))`.
    pub fn embed(&self, base: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        let fiber: f64 = self.gamma.eval(base, t)?;
        let mut out = base.to_vec();
        out.push(fiber);
        Ok(out)
    }

    /// Embedded point as jets over the base coordinates, for
    /// differentiating compositions `f∘γ`.
    pub fn embed_jets(&self, base: &[f64], t: f64) -> Result<Vec<Jet1>, EvalError> {
        let seeded = diff::seed(base);
        let fiber: Jet1 = self.gamma.eval(&seeded, t)?;
        let mut out = seeded;
        out.push(fiber);
        Ok(out)
    }
}

/// `Tπ ∘ X_{H…} ∘ γ`: the first n−1 components of the Hamiltonian field
/// along the section.
pub struct ProjectedField {
    label: String,
    field: HamiltonianField,
    section: Section,
}

impl VectorField for ProjectedField {
    fn label(&self) -> &str {
        &self.label
    }
    fn dim(&self) -> usize {
        self.section.base_dim()
    }
    fn eval(&self, base: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        let y = self.section.embed(base, t)?;
        let mut x = self.field.eval(&y, t)?;
        x.truncate(self.dim());
        Ok(x)
    }
    fn jet_eval(&self, base: &[f64], t: f64) -> Result<Vec<Jet1>, EvalError> {
        // chain rule through the embedding: ∂ⱼ(Xᵏ∘γ) = Σₘ ∂ₘXᵏ·∂ⱼγₘ
        let m = self.dim();
        let y = self.section.embed(base, t)?;
        let up = self.field.jet_eval(&y, t)?;
        let ggrad = diff::gradient(&self.section.gamma, base, t)?;
        let mut out = Vec::with_capacity(m);
        for k in 0..m {
            let mut d = Vec::with_capacity(m);
            for j in 0..m {
                d.push(up[k].d[j] + up[k].d[m] * ggrad[j]);
            }
            out.push(Jet1 { v: up[k].v, d });
        }
        Ok(out)
    }
}

pub fn projected_field(tuple: &HamiltonianTuple, section: &Section) -> ProjectedField {
    assert_eq!(tuple.dim(), section.chart.dim());
    let field = hamiltonian_vector_field(tuple.clone());
    ProjectedField {
        label: format!("Tπ∘{}∘γ", field.label()),
        field,
        section: section.clone(),
    }
}

/// γ-relatedness residual `|Σₖ ∂ₖγⁿ·Xᵏ(γ(x)) − Xⁿ(γ(x))|`; the base
/// components of `Tγ(X^γ) − X∘γ` cancel by construction.
pub fn relatedness_residual(
    tuple: &HamiltonianTuple,
    section: &Section,
    base: &[f64],
    t: f64,
) -> Result<f64, EvalError> {
    let field = hamiltonian_vector_field(tuple.clone());
    let y = section.embed(base, t)?;
    let xv = field.eval(&y, t)?;
    let ggrad = diff::gradient(&section.gamma, base, t)?;
    let m = section.base_dim();
    let mut acc = 0.0;
    for k in 0..m {
        acc += ggrad[k] * xv[k];
    }
    Ok((acc - xv[m]).abs())
}

/// `det(∂(Hᵢ∘γ)/∂xʲ)`, the determinant form of the HJ equation.
pub fn hj_det_residual(
    tuple: &HamiltonianTuple,
    section: &Section,
    base: &[f64],
    t: f64,
) -> Result<f64, EvalError> {
    let jets = section.embed_jets(base, t)?;
    let rows: Vec<Vec<f64>> = tuple
        .fields()
        .iter()
        .map(|h| h.eval(&jets, t).map(|j| j.d))
        .collect::<Result<_, _>>()?;
    Ok(diff::det(&rows))
}

/// Minor-weighted sum form of the HJ equation, signed, arranged so that
/// `hj_sum_residual = ±relatedness_residual`: with `mₖ` the Hamiltonian
/// Jacobian minor omitting coordinate k at the embedded point,
/// `(Σₖ (−1)^{n−1−k} mₖ ∂ₖγⁿ − m_{n−1}) / ρ` (0-based k over the base).
pub fn hj_sum_residual(
    tuple: &HamiltonianTuple,
    section: &Section,
    base: &[f64],
    t: f64,
) -> Result<f64, EvalError> {
    let n = tuple.dim();
    let y = section.embed(base, t)?;
    let rho = tuple.structure().density_at(&y, t)?;
    let ggrad = diff::gradient(&section.gamma, base, t)?;
    let mut acc = 0.0;
    for k in 0..n - 1 {
        let m_k = diff::jacobian_minor(tuple.fields(), &y, t, k)?;
        let sign = if (n - 1 - k) % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * m_k * ggrad[k];
    }
    let m_last = diff::jacobian_minor(tuple.fields(), &y, t, n - 1)?;
    Ok((acc - m_last) / rho)
}

// ---------------------------------------------------------------------
// Lagrangian submanifold checks
// ---------------------------------------------------------------------

/// Pointwise annihilator computation for one order `j`.
#[derive(Debug, Clone)]
pub struct AnnihilatorReport {
    pub j: usize,
    /// Basis of Ann^j as coefficient vectors over the n basis
    /// (n−1)-forms `dx¹∧…∧dx̌ⁱ∧…∧dxⁿ`.
    pub basis: Vec<Vec<f64>>,
    pub dim: usize,
    /// Rank of the sharp image of the annihilator.
    pub sharp_dim: usize,
    /// Whether ♯Ann^j equals T_xN ∩ ♯Λ^{n−1} (rank comparisons).
    pub lagrangian: bool,
}

#[derive(Debug, Clone)]
pub struct LagrangianReport {
    /// The j = n−1 report, carrying the Lagrangian verdict.
    pub top: AnnihilatorReport,
    /// Dimensions of Ann^j for 1 ≤ j ≤ n−2.
    pub lower_dims: Vec<(usize, usize)>,
    pub lagrangian: bool,
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}

/// Value of the basis form `dx¹∧…∧dx̌ⁱ∧…∧dxⁿ` on the n−1 listed vectors.
fn basis_form_value(i: usize, vectors: &[Vec<f64>], n: usize) -> f64 {
    debug_assert_eq!(vectors.len(), n - 1);
    let rows: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            (0..n)
                .filter(|&c| c != i)
                .map(|c| v[c])
                .collect()
        })
        .collect();
    diff::det(&rows)
}

fn rank(rows: &[Vec<f64>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
    m.svd(false, false).rank(RANK_TOL)
}

/// Null-space basis of the matrix whose rows are `rows` (n columns).
fn null_space(rows: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    if rows.is_empty() {
        // no constraints: the whole space
        return (0..n)
            .map(|i| (0..n).map(|c| if c == i { 1.0 } else { 0.0 }).collect())
            .collect();
    }
    // pad with zero rows so the thin SVD's v_t spans all of ℝⁿ
    let nr = rows.len().max(n);
    let m = DMatrix::from_fn(nr, n, |r, c| if r < rows.len() { rows[r][c] } else { 0.0 });
    let svd = m.svd(false, true);
    let r = svd.rank(RANK_TOL);
    let vt = svd.v_t.expect("svd requested v_t");
    (r..vt.nrows())
        .map(|row| (0..n).map(|c| vt[(row, c)]).collect())
        .collect()
}

/// Ann^j of the span of `tangent` at a point with density value `rho`,
/// plus the rank tests against the tangent space.
pub fn annihilator_report(
    structure: &VolumeNPStructure,
    tangent: &[Vec<f64>],
    x: &[f64],
    t: f64,
    j: usize,
) -> Result<AnnihilatorReport, EvalError> {
    let n = structure.dim();
    assert!(j >= 1 && j <= n - 1);
    let rho = structure.density_at(x, t)?;
    // Constraint rows: for every j-subset of the tangent basis and every
    // completion by n−1−j coordinate vectors, the form value must vanish.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for sub in subsets(tangent.len(), j) {
        for fill in subsets(n, n - 1 - j) {
            let mut vectors: Vec<Vec<f64>> =
                sub.iter().map(|&s| tangent[s].clone()).collect();
            for &c in &fill {
                let mut e = vec![0.0; n];
                e[c] = 1.0;
                vectors.push(e);
            }
            let row: Vec<f64> = (0..n).map(|i| basis_form_value(i, &vectors, n)).collect();
            if row.iter().any(|v| v.abs() > 0.0) {
                rows.push(row);
            }
        }
    }
    let basis = null_space(&rows, n);
    let dim = basis.len();
    // sharp of Σ aᵢ βᵢ has components (−1)^{n−1−i} aᵢ / ρ (0-based i)
    let sharp: Vec<Vec<f64>> = basis
        .iter()
        .map(|a| {
            (0..n)
                .map(|i| {
                    let sign = if (n - 1 - i) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * a[i] / rho
                })
                .collect()
        })
        .collect();
    let sharp_dim = rank(&sharp);
    // With ρ ≠ 0 the sharp map is onto, so T ∩ ♯Λ^{n−1} = T; the
    // Lagrangian condition reduces to span(♯Ann) = span(tangent).
    let t_rank = rank(tangent);
    let mut joint = sharp.clone();
    joint.extend(tangent.iter().cloned());
    let lagrangian = sharp_dim == t_rank && rank(&joint) == t_rank;
    Ok(AnnihilatorReport { j, basis, dim, sharp_dim, lagrangian })
}

/// Full Lagrangian classification of a graph section at a base point.
pub fn lagrangian_check(
    structure: &VolumeNPStructure,
    section: &Section,
    base: &[f64],
    t: f64,
) -> Result<LagrangianReport, EvalError> {
    let n = structure.dim();
    let x = section.embed(base, t)?;
    let ggrad = diff::gradient(&section.gamma, base, t)?;
    // tangent basis of the graph: ∂ₖ + (∂ₖγⁿ)∂ₙ
    let tangent: Vec<Vec<f64>> = (0..n - 1)
        .map(|k| {
            let mut v = vec![0.0; n];
            v[k] = 1.0;
            v[n - 1] = ggrad[k];
            v
        })
        .collect();
    lagrangian_check_tangent(structure, &tangent, &x, t)
}

/// Variant taking an explicit tangent basis (any codimension).
pub fn lagrangian_check_tangent(
    structure: &VolumeNPStructure,
    tangent: &[Vec<f64>],
    x: &[f64],
    t: f64,
) -> Result<LagrangianReport, EvalError> {
    let n = structure.dim();
    let top = annihilator_report(structure, tangent, x, t, n - 1)?;
    let mut lower_dims = Vec::new();
    for j in 1..=n.saturating_sub(2) {
        if j >= 1 && j <= n - 2 {
            let rep = annihilator_report(structure, tangent, x, t, j)?;
            lower_dims.push((j, rep.dim));
        }
    }
    let lagrangian = top.lagrangian;
    Ok(LagrangianReport { top, lower_dims, lagrangian })
}

// ---------------------------------------------------------------------
// Complete solutions
// ---------------------------------------------------------------------

/// λ-family of sections with an evaluable builder for FD in λ.
pub struct CompleteSolution {
    builder: Box<dyn Fn(f64) -> Result<Section, EvalError> + Send + Sync>,
    lambdas: Vec<f64>,
}

/// FD step in the family parameter λ.
pub const LAMBDA_STEP: f64 = 1e-5;

impl CompleteSolution {
    pub fn new(
        builder: impl Fn(f64) -> Result<Section, EvalError> + Send + Sync + 'static,
        lambdas: Vec<f64>,
    ) -> CompleteSolution {
        assert!(!lambdas.is_empty(), "λ grid must be non-empty");
        CompleteSolution { builder: Box::new(builder), lambdas }
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn section(&self, lambda: f64) -> Result<Section, EvalError> {
        (self.builder)(lambda)
    }
}

#[derive(Debug, Clone)]
pub struct CompleteSolutionReport {
    pub max_det_residual: f64,
    /// Minimum |det DΦ| over the grid; Φ(x,λ) = (x, γⁿ_λ(x)).
    pub min_jacobian_det: f64,
    /// Fiber values strictly monotone in λ at every base point.
    pub monotone: bool,
    pub pass: bool,
}

/// Verifies the three complete-solution conditions over the grids.
pub fn complete_solution_check(
    tuple: &HamiltonianTuple,
    cs: &CompleteSolution,
    base_grid: &[Vec<f64>],
    t: f64,
    det_tol: f64,
) -> Result<CompleteSolutionReport, EvalError> {
    assert!(!base_grid.is_empty(), "base grid must be non-empty");
    let mut max_det_residual = 0.0f64;
    let mut min_jac = f64::INFINITY;
    let mut monotone = true;

    let mut lambdas = cs.lambdas.clone();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());

    for &lam in &lambdas {
        let sec = cs.section(lam)?;
        let up = cs.section(lam + LAMBDA_STEP)?;
        let dn = cs.section(lam - LAMBDA_STEP)?;
        for b in base_grid {
            max_det_residual = max_det_residual.max(hj_det_residual(tuple, &sec, b, t)?.abs());
            // det DΦ = ∂γⁿ/∂λ (block-triangular Jacobian of (x, γⁿ_λ(x)))
            let gu: f64 = up.gamma().eval(b, t)?;
            let gd: f64 = dn.gamma().eval(b, t)?;
            min_jac = min_jac.min(((gu - gd) / (2.0 * LAMBDA_STEP)).abs());
        }
    }
    for b in base_grid {
        let mut prev: Option<f64> = None;
        let mut dir = 0.0f64;
        for &lam in &lambdas {
            let g: f64 = cs.section(lam)?.gamma().eval(b, t)?;
            if let Some(p) = prev {
                let step = g - p;
                if step == 0.0 || (dir != 0.0 && step.signum() != dir) {
                    monotone = false;
                }
                dir = step.signum();
            }
            prev = Some(g);
        }
    }
    let pass = max_det_residual <= det_tol && min_jac >= 1e-10 && monotone;
    Ok(CompleteSolutionReport { max_det_residual, min_jacobian_det: min_jac, monotone, pass })
}
