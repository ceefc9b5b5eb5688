//! Built-in system presets: the third-order Kummer–Schwarz equation as a
//! first-order system on {v ≠ 0}, and n coupled Riccati equations on the
//! open set of pairwise-distinct coordinates. Each preset carries the
//! target first-order system (`rhs`), the Hamiltonian tuple whose Nambu
//! flow should reproduce it, auxiliary scalar fields, presymplectic
//! two-forms, the `ι_Yω = ±d f` pairing table, and the numerical
//! derivation of the conformal volume density ρ*.

use std::collections::BTreeMap;

use crate::diff;
use crate::dynamics::{integrate, IntegratorConfig, Trajectory};
use crate::expr::{Chart, CoefficientTable, EvalError, ScalarField};
use crate::nambu::{
    bracket, hamiltonian_vector_field, DomainPredicate, ExprField, HamiltonianField,
    HamiltonianTuple, VectorField, VolumeNPStructure,
};

#[derive(Debug, thiserror::Error)]
pub enum SystemError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("stationary point: every rhs component is below {0:e}")]
    Stationary(f64),
    #[error("unknown name `{0}`")]
    UnknownName(String),
}

/// Components below this threshold are treated as zero when matching
/// bracket values against rhs components.
pub const RHS_EPS: f64 = 1e-6;

// ---------------------------------------------------------------------
// Two-forms
// ---------------------------------------------------------------------

/// A two-form given by its strictly-upper-triangular entries
/// `ω(∂ᵢ, ∂ⱼ)` for i < j; evaluation returns the full antisymmetric
/// matrix.
#[derive(Debug, Clone)]
pub struct TwoForm {
    label: String,
    n: usize,
    entries: Vec<(usize, usize, ScalarField)>,
}

impl TwoForm {
    pub fn new(label: &str, n: usize, entries: Vec<(usize, usize, ScalarField)>) -> TwoForm {
        for (i, j, _) in &entries {
            assert!(i < j && *j < n, "entries must be strictly upper triangular");
        }
        TwoForm { label: label.to_string(), n, entries }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<Vec<Vec<f64>>, EvalError> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (i, j, f) in &self.entries {
            let v: f64 = f.eval(x, t)?;
            m[*i][*j] = v;
            m[*j][*i] = -v;
        }
        Ok(m)
    }

    /// `ω(u, w)` at a point.
    pub fn pair(&self, u: &[f64], w: &[f64], x: &[f64], t: f64) -> Result<f64, EvalError> {
        let m = self.eval(x, t)?;
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                acc += u[i] * m[i][j] * w[j];
            }
        }
        Ok(acc)
    }

    /// Covector `ι_Y ω` with components `(ι_Yω)ⱼ = Σᵢ Yⁱ ωᵢⱼ`.
    pub fn interior(&self, y: &[f64], x: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        let m = self.eval(x, t)?;
        Ok((0..self.n)
            .map(|j| (0..self.n).map(|i| y[i] * m[i][j]).sum())
            .collect())
    }

    /// Max over coordinate triples i<j<k of the finite-difference cyclic
    /// sum `∂ᵢωⱼₖ + ∂ⱼωₖᵢ + ∂ₖωᵢⱼ` (the exterior-derivative residual).
    pub fn closedness_residual(&self, x: &[f64], t: f64, h: f64) -> Result<f64, EvalError> {
        let n = self.n;
        let d_entry = |p: usize, i: usize, j: usize| -> Result<f64, EvalError> {
            let hp = h * x[p].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[p] += hp;
            xm[p] -= hp;
            Ok((self.eval(&xp, t)?[i][j] - self.eval(&xm, t)?[i][j]) / (2.0 * hp))
        };
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let cyc = d_entry(i, j, k)? + d_entry(j, k, i)? + d_entry(k, i, j)?;
                    worst = worst.max(cyc.abs());
                }
            }
        }
        Ok(worst)
    }
}

/// One row of the `ι_Yω = sign·d(target)` table.
#[derive(Debug, Clone)]
pub struct Pairing {
    pub form: String,
    pub field: String,
    pub target_name: String,
    pub target: ScalarField,
    pub sign: f64,
}

// ---------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------

pub struct SystemPreset {
    name: String,
    chart: Chart,
    structure: VolumeNPStructure,
    hamiltonians: HamiltonianTuple,
    rhs: ExprField,
    aux_fields: BTreeMap<String, ScalarField>,
    vector_fields: BTreeMap<String, ExprField>,
    two_forms: BTreeMap<String, TwoForm>,
    pairings: Vec<Pairing>,
}

impl SystemPreset {
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn chart(&self) -> &Chart {
        &self.chart
    }
    pub fn dim(&self) -> usize {
        self.chart.dim()
    }
    /// Canonical-density structure (ρ ≡ 1) with the system's domain.
    pub fn structure(&self) -> &VolumeNPStructure {
        &self.structure
    }
    pub fn hamiltonians(&self) -> &HamiltonianTuple {
        &self.hamiltonians
    }
    pub fn hamiltonian_field(&self) -> HamiltonianField {
        hamiltonian_vector_field(self.hamiltonians.clone())
    }
    /// The target first-order ODE system.
    pub fn rhs(&self) -> &ExprField {
        &self.rhs
    }
    pub fn aux_field(&self, name: &str) -> Result<&ScalarField, SystemError> {
        self.aux_fields
            .get(name)
            .ok_or_else(|| SystemError::UnknownName(name.to_string()))
    }
    pub fn aux_fields(&self) -> &BTreeMap<String, ScalarField> {
        &self.aux_fields
    }
    pub fn vector_field(&self, name: &str) -> Result<&ExprField, SystemError> {
        self.vector_fields
            .get(name)
            .ok_or_else(|| SystemError::UnknownName(name.to_string()))
    }
    pub fn vector_fields(&self) -> &BTreeMap<String, ExprField> {
        &self.vector_fields
    }
    pub fn two_form(&self, name: &str) -> Result<&TwoForm, SystemError> {
        self.two_forms
            .get(name)
            .ok_or_else(|| SystemError::UnknownName(name.to_string()))
    }
    pub fn two_forms(&self) -> &BTreeMap<String, TwoForm> {
        &self.two_forms
    }
    pub fn pairings(&self) -> &[Pairing] {
        &self.pairings
    }
}

/// Third-order Kummer–Schwarz system on (x, v, a), domain v ≠ 0:
/// `ẋ = v, v̇ = a, ȧ = (3/2)a²/v − 2c₀v³ + 2b₁(t)v`.
pub fn ks3_preset(c0: f64, b1: &str) -> SystemPreset {
    let mut table = CoefficientTable::new();
    table.set_constant("c0", c0);
    table
        .set_expr("b1", b1)
        .expect("b1 must parse as an expression in t");
    let chart = Chart::new(&["x", "v", "a"], table);
    let f = |text: &str| ScalarField::parse(text, &chart).unwrap();

    let domain = DomainPredicate::nonzero(vec![ScalarField::coordinate(1, &chart)]);
    let structure = VolumeNPStructure::new(
        chart.clone(),
        ScalarField::constant(1.0, &chart),
        domain,
    );

    let rhs = ExprField::parse(
        "rhs",
        &["v", "a", "3/2*a^2/v - 2*c0*v^3 + 2*b1*v"],
        &chart,
    )
    .unwrap();

    let mut aux = BTreeMap::new();
    aux.insert("h1".to_string(), f("-2/v"));
    aux.insert("h2".to_string(), f("-a/v^2"));
    aux.insert("h3".to_string(), f("-a^2/(2*v^3) - 2*c0*v"));
    aux.insert("hb1".to_string(), f("4*x/v"));
    aux.insert("hb2".to_string(), f("2*a*x/v^2 - 2"));
    aux.insert("hb3".to_string(), f("a^2*x/v^3 - 2*a/v"));
    // h = h3 + b1·h1 and h̄ = h̄3 + b1·h̄1
    let h = f("-a^2/(2*v^3) - 2*c0*v + b1*(-2/v)");
    let hbar = f("a^2*x/v^3 - 2*a/v + b1*(4*x/v)");
    aux.insert("h".to_string(), h.clone());
    aux.insert("hbar".to_string(), hbar.clone());

    let hamiltonians = HamiltonianTuple::new(structure.clone(), vec![h, hbar]);

    let mut vfs = BTreeMap::new();
    vfs.insert(
        "Y1".to_string(),
        ExprField::parse("Y1", &["0", "0", "2*v"], &chart).unwrap(),
    );
    vfs.insert(
        "Y2".to_string(),
        ExprField::parse("Y2", &["0", "v", "2*a"], &chart).unwrap(),
    );
    vfs.insert(
        "Y3".to_string(),
        ExprField::parse("Y3", &["v", "a", "3/2*a^2/v - 2*c0*v^3"], &chart).unwrap(),
    );
    vfs.insert(
        "ZP".to_string(),
        ExprField::parse("ZP", &["x^2", "0", "0"], &chart).unwrap(),
    );

    let mut forms = BTreeMap::new();
    forms.insert(
        "omega_3ks".to_string(),
        TwoForm::new("omega_3ks", 3, vec![(1, 2, f("1/v^3"))]),
    );
    forms.insert(
        "omega_zp".to_string(),
        TwoForm::new(
            "omega_zp",
            3,
            vec![
                (0, 1, f("-2*a/v^3")),
                (0, 2, f("2/v^2")),
                (1, 2, f("-2*x/v^3")),
            ],
        ),
    );
    forms.insert(
        "omega_bb".to_string(),
        TwoForm::new(
            "omega_bb",
            3,
            vec![
                (0, 1, f("4*x*a/v^3 + 4/v")),
                (0, 2, f("-4*x/v^2")),
                (1, 2, f("2*x^2/v^3")),
            ],
        ),
    );

    // ι_Yω = sign·d(target). The omega_zp/Y3 and every omega_bb row hold
    // exactly only for c0 = 0.
    let mut pairings = Vec::new();
    let mut add = |form: &str, field: &str, name: &str, text: &str, sign: f64| {
        pairings.push(Pairing {
            form: form.to_string(),
            field: field.to_string(),
            target_name: name.to_string(),
            target: f(text),
            sign,
        });
    };
    add("omega_3ks", "Y1", "2/v", "2/v", 1.0);
    add("omega_3ks", "Y2", "a/v^2", "a/v^2", 1.0);
    add(
        "omega_3ks",
        "Y3",
        "a^2/(2v^3) + 2c0v",
        "a^2/(2*v^3) + 2*c0*v",
        1.0,
    );
    add("omega_zp", "Y1", "4x/v", "4*x/v", -1.0);
    add("omega_zp", "Y2", "2 - 2ax/v^2", "2 - 2*a*x/v^2", 1.0);
    add(
        "omega_zp",
        "Y3",
        "2a/v - a^2x/v^3",
        "2*a/v - a^2*x/v^3",
        1.0,
    );
    add("omega_bb", "Y1", "4x^2/v", "4*x^2/v", 1.0);
    add(
        "omega_bb",
        "Y2",
        "2x^2a/v^2 - 4x",
        "2*x^2*a/v^2 - 4*x",
        1.0,
    );
    add(
        "omega_bb",
        "Y3",
        "x^2a^2/v^3 - 4xa/v + 4v",
        "x^2*a^2/v^3 - 4*x*a/v + 4*v",
        1.0,
    );

    SystemPreset {
        name: "ks3".to_string(),
        chart,
        structure,
        hamiltonians,
        rhs,
        aux_fields: aux,
        vector_fields: vfs,
        two_forms: forms,
        pairings,
    }
}

fn riccati_coords(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// The Hamiltonian `h^[l]` (1-based l) as expression text: a₀-, a₁- and
/// a₂-weighted sums over the pairwise differences with coordinate l,
/// with `(xᵏ − xˡ)` denominators for k < l and `(xˡ − xᵏ)` for k > l.
fn riccati_h_text(n: usize, l: usize) -> String {
    let xi = |i: usize| format!("x{i}");
    let pair_terms = |num: &dyn Fn(usize) -> String| -> String {
        let mut terms = Vec::new();
        for k in 1..=n {
            if k == l {
                continue;
            }
            let den = if k > l {
                format!("({} - {})", xi(l), xi(k))
            } else {
                format!("({} - {})", xi(k), xi(l))
            };
            terms.push(format!("{}/{den}", num(k)));
        }
        terms.join(" + ")
    };
    let s0 = pair_terms(&|_k| "1".to_string());
    let s1 = pair_terms(&|k| format!("({} + {})", xi(l), xi(k)));
    let s2 = pair_terms(&|k| format!("{}*{}", xi(l), xi(k)));
    format!("a0*({s0}) + a1/2*({s1}) + a2*({s2})")
}

/// n coupled Riccati equations `ẋⁱ = a₀(t) + a₁(t)xⁱ + a₂(t)(xⁱ)²` on
/// the set of pairwise-distinct coordinates, with Hamiltonians h^[1..n−1]
/// and presymplectic forms ω^[l].
pub fn riccati_preset(n: usize, a0: &str, a1: &str, a2: &str) -> SystemPreset {
    assert!(n >= 3, "the Riccati preset needs n ≥ 3");
    let mut table = CoefficientTable::new();
    for (name, text) in [("a0", a0), ("a1", a1), ("a2", a2)] {
        table
            .set_expr(name, text)
            .unwrap_or_else(|e| panic!("coefficient {name} must parse: {e}"));
    }
    let names = riccati_coords(n);
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let chart = Chart::new(&refs, table);
    let f = |text: &str| ScalarField::parse(text, &chart).unwrap();

    // every h^[l] contains all pairwise differences with l, so the
    // domain requires all coordinates pairwise distinct
    let mut diffs = Vec::new();
    for i in 1..=n {
        for j in i + 1..=n {
            diffs.push(f(&format!("x{i} - x{j}")));
        }
    }
    let structure = VolumeNPStructure::new(
        chart.clone(),
        ScalarField::constant(1.0, &chart),
        DomainPredicate::nonzero(diffs),
    );

    let rhs_texts: Vec<String> = (1..=n)
        .map(|i| format!("a0 + a1*x{i} + a2*x{i}^2"))
        .collect();
    let rhs_refs: Vec<&str> = rhs_texts.iter().map(|s| s.as_str()).collect();
    let rhs = ExprField::parse("rhs", &rhs_refs, &chart).unwrap();

    let mut aux = BTreeMap::new();
    let mut hs = Vec::new();
    for l in 1..=n - 1 {
        let h = f(&riccati_h_text(n, l));
        aux.insert(format!("h{l}"), h.clone());
        hs.push(h);
    }
    let hamiltonians = HamiltonianTuple::new(structure.clone(), hs);

    let mut forms = BTreeMap::new();
    for l in 1..=n - 1 {
        let mut entries = Vec::new();
        for k in 1..=n {
            if k == l {
                continue;
            }
            // ω(∂ₖ,∂ₗ) = 1/(xᵏ−xˡ)² for k<l; ω(∂ₗ,∂ₖ) = 1/(xˡ−xᵏ)² for k>l
            let (i, j) = if k < l { (k - 1, l - 1) } else { (l - 1, k - 1) };
            entries.push((i, j, f(&format!("1/(x{} - x{})^2", i + 1, j + 1))));
        }
        forms.insert(format!("omega{l}"), TwoForm::new(&format!("omega{l}"), n, entries));
    }

    SystemPreset {
        name: format!("riccati{n}"),
        chart,
        structure,
        hamiltonians,
        rhs,
        aux_fields: aux,
        vector_fields: BTreeMap::new(),
        two_forms: forms,
        pairings: Vec::new(),
    }
}

// ---------------------------------------------------------------------
// Checks on presets
// ---------------------------------------------------------------------

/// Sup-norm of `ι_Yω − sign·d(target)` for one pairing-table row.
pub fn ks3_pairing_residual(
    preset: &SystemPreset,
    form_name: &str,
    field_name: &str,
    x: &[f64],
    t: f64,
) -> Result<f64, SystemError> {
    let pairing = preset
        .pairings
        .iter()
        .find(|p| p.form == form_name && p.field == field_name)
        .ok_or_else(|| SystemError::UnknownName(format!("{form_name}/{field_name}")))?;
    let form = preset.two_form(form_name)?;
    let field = preset.vector_field(field_name)?;
    let y = field.eval(x, t)?;
    let iota = form.interior(&y, x, t)?;
    let grad = diff::gradient(&pairing.target, x, t)?;
    Ok(iota
        .iter()
        .zip(&grad)
        .map(|(a, b)| (a - pairing.sign * b).abs())
        .fold(0.0, f64::max))
}

/// Residuals of the sl(2) structure of the 3KS preset at a point:
/// function brackets of (h₁,h₂,h₃) under ω_3KS, of the barred triple
/// under ω_{Z_P}, and the vector-field commutators. The barred bracket
/// rows hold exactly only for c₀ = 0.
pub fn ks3_sl2_check(
    preset: &SystemPreset,
    x: &[f64],
    t: f64,
) -> Result<BTreeMap<String, f64>, SystemError> {
    let mut out = BTreeMap::new();
    let val = |name: &str| -> Result<f64, SystemError> {
        Ok(preset.aux_field(name)?.eval(x, t)?)
    };
    // {f,g} = v³(∂_v f·∂_a g − ∂_a f·∂_v g), the ω_3KS-induced bracket
    let fbracket = |f: &ScalarField, g: &ScalarField| -> Result<f64, SystemError> {
        let gf = diff::gradient(f, x, t)?;
        let gg = diff::gradient(g, x, t)?;
        Ok(x[1].powi(3) * (gf[1] * gg[2] - gf[2] * gg[1]))
    };
    let h1 = preset.aux_field("h1")?;
    let h2 = preset.aux_field("h2")?;
    let h3 = preset.aux_field("h3")?;
    out.insert("{h1,h2}-h1".into(), (fbracket(h1, h2)? - val("h1")?).abs());
    out.insert("{h1,h3}-2h2".into(), (fbracket(h1, h3)? - 2.0 * val("h2")?).abs());
    out.insert("{h2,h3}-h3".into(), (fbracket(h2, h3)? - val("h3")?).abs());

    // barred relations as ω_{Z_P}(Yᵢ, Yⱼ) pairings
    let form = preset.two_form("omega_zp")?;
    let y1 = preset.vector_field("Y1")?.eval(x, t)?;
    let y2 = preset.vector_field("Y2")?.eval(x, t)?;
    let y3 = preset.vector_field("Y3")?.eval(x, t)?;
    out.insert(
        "w(Y1,Y2)-hb1".into(),
        (form.pair(&y1, &y2, x, t)? - val("hb1")?).abs(),
    );
    out.insert(
        "w(Y1,Y3)-2hb2".into(),
        (form.pair(&y1, &y3, x, t)? - 2.0 * val("hb2")?).abs(),
    );
    out.insert(
        "w(Y2,Y3)-hb3".into(),
        (form.pair(&y2, &y3, x, t)? - val("hb3")?).abs(),
    );

    // commutators [Y1,Y2]=Y1, [Y1,Y3]=2Y2, [Y2,Y3]=Y3
    let yf1 = preset.vector_field("Y1")?;
    let yf2 = preset.vector_field("Y2")?;
    let yf3 = preset.vector_field("Y3")?;
    let norm_diff = |b: Vec<f64>, target: &[f64], scale: f64| -> f64 {
        b.iter()
            .zip(target)
            .map(|(u, w)| (u - scale * w).abs())
            .fold(0.0, f64::max)
    };
    out.insert(
        "[Y1,Y2]-Y1".into(),
        norm_diff(diff::lie_bracket(yf1, yf2, x, t)?, &y1, 1.0),
    );
    out.insert(
        "[Y1,Y3]-2Y2".into(),
        norm_diff(diff::lie_bracket(yf1, yf3, x, t)?, &y2, 2.0),
    );
    out.insert(
        "[Y2,Y3]-Y3".into(),
        norm_diff(diff::lie_bracket(yf2, yf3, x, t)?, &y3, 1.0),
    );
    Ok(out)
}

/// Conformal density derived at one point.
#[derive(Debug, Clone, Copy)]
pub struct DensityReport {
    /// ρ* = {H…, xⁱ}_canonical / rhsⁱ for the first usable coordinate i.
    pub rho_star: f64,
    /// Max relative disagreement of the ratio across all usable
    /// coordinates.
    pub spread: f64,
    /// 0-based coordinate used as the reference ratio.
    pub used_coordinate: usize,
}

/// Derives the conformal density ρ* making the canonical Nambu bracket
/// of the preset's Hamiltonians reproduce its rhs at a point.
pub fn derive_density(preset: &SystemPreset, x: &[f64], t: f64) -> Result<DensityReport, SystemError> {
    let n = preset.dim();
    let canonical = preset.structure(); // ρ ≡ 1 by construction
    let rhs = preset.rhs.eval(x, t)?;
    let mut brackets = Vec::with_capacity(n);
    for i in 0..n {
        let mut args = preset.hamiltonians.fields().to_vec();
        args.push(ScalarField::coordinate(i, &preset.chart));
        brackets.push(bracket(canonical, &args, x, t)?);
    }
    let first = (0..n)
        .find(|&i| rhs[i].abs() > RHS_EPS)
        .ok_or(SystemError::Stationary(RHS_EPS))?;
    let rho_star = brackets[first] / rhs[first];
    let mut spread = 0.0f64;
    for i in 0..n {
        if rhs[i].abs() > RHS_EPS {
            spread = spread.max(((brackets[i] / rhs[i] - rho_star) / rho_star).abs());
        }
    }
    Ok(DensityReport { rho_star, spread, used_coordinate: first })
}

/// Nambu-bracket dynamics of the preset's Hamiltonians with the
/// pointwise-derived density ρ*: components `{H…, xⁱ}_canonical / ρ*(x)`.
pub struct DerivedDensityField<'a> {
    preset: &'a SystemPreset,
}

pub fn derived_density_field(preset: &SystemPreset) -> DerivedDensityField<'_> {
    DerivedDensityField { preset }
}

impl VectorField for DerivedDensityField<'_> {
    fn label(&self) -> &str {
        "nambu-derived-density"
    }
    fn dim(&self) -> usize {
        self.preset.dim()
    }
    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        let n = self.dim();
        let report = derive_density(self.preset, x, t).map_err(|e| match e {
            SystemError::Eval(e) => e,
            other => EvalError::Domain {
                expr: self.preset.name.clone(),
                reason: match other {
                    SystemError::Stationary(_) => "stationary point",
                    _ => "preset lookup failed",
                },
            },
        })?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut args = self.preset.hamiltonians.fields().to_vec();
            args.push(ScalarField::coordinate(i, &self.preset.chart));
            out.push(bracket(self.preset.structure(), &args, x, t)? / report.rho_star);
        }
        Ok(out)
    }
    fn jet_eval(&self, _x: &[f64], _t: f64) -> Result<Vec<crate::diff::Jet1>, EvalError> {
        Err(EvalError::UnsupportedJet(self.label().to_string()))
    }
}

/// `{h^[1],…,h^[n−1], xⁱ}/ρ* − rhsⁱ` for every coordinate.
pub fn riccati_bracket_recovery(
    preset: &SystemPreset,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>, SystemError> {
    let field = derived_density_field(preset);
    let flow = field.eval(x, t)?;
    let rhs = preset.rhs.eval(x, t)?;
    Ok(flow.iter().zip(&rhs).map(|(a, b)| a - b).collect())
}

/// Integrates the preset's rhs and its derived-density Nambu flow from
/// the same initial condition and returns the sup-norm gap over matched
/// sample times (fixed-step RK4, so the grids coincide).
pub fn cross_integration_gap(
    preset: &SystemPreset,
    x0: &[f64],
    t_span: (f64, f64),
    step: f64,
) -> Result<f64, crate::dynamics::FlowError> {
    let cfg = IntegratorConfig::rk4(step, t_span.0, t_span.1);
    let domain = Some(preset.structure().domain());
    let direct: Trajectory = integrate(&preset.rhs, x0, &cfg, domain)?;
    let nambu_field = derived_density_field(preset);
    let nambu: Trajectory = integrate(&nambu_field, x0, &cfg, domain)?;
    assert_eq!(direct.len(), nambu.len());
    let mut gap = 0.0f64;
    for (a, b) in direct.states.iter().zip(&nambu.states) {
        for (u, w) in a.iter().zip(b) {
            gap = gap.max((u - w).abs());
        }
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample;
    use rand::Rng;

    fn ks3_point(rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        // keep v away from the singular locus
        let x = rng.gen_range(-2.0..2.0);
        let v_mag = rng.gen_range(0.5..2.0);
        let v = if rng.gen_bool(0.5) { v_mag } else { -v_mag };
        let a = rng.gen_range(-2.0..2.0);
        vec![x, v, a]
    }

    #[test]
    fn ks3_hamiltonian_values() {
        let p = ks3_preset(0.0, "-1");
        let at = |name: &str, pt: &[f64]| -> f64 {
            p.aux_field(name).unwrap().eval(pt, 0.0).unwrap()
        };
        assert_eq!(at("h1", &[0.0, 1.0, 0.0]), -2.0);
        assert_eq!(at("h2", &[0.0, 1.0, 1.0]), -1.0);
        assert_eq!(at("h3", &[0.0, 1.0, 1.0]), -0.5);
    }

    #[test]
    fn ks3_rhs_and_y3_values() {
        let p = ks3_preset(0.0, "-1");
        assert_eq!(p.rhs().eval(&[0.0, 1.0, 0.0], 0.0).unwrap(), vec![1.0, 0.0, -2.0]);
        let y3 = p.vector_field("Y3").unwrap().eval(&[1.0, 1.0, 1.0], 0.0).unwrap();
        assert_eq!(y3, vec![1.0, 1.0, 1.5]);
    }

    #[test]
    fn two_forms_are_antisymmetric() {
        let p = ks3_preset(0.3, "0.5");
        let mut rng = sample::rng(50);
        for (_, form) in p.two_forms() {
            for _ in 0..10 {
                let pt = ks3_point(&mut rng);
                let m = form.eval(&pt, 0.0).unwrap();
                for i in 0..3 {
                    for j in 0..3 {
                        assert_eq!(m[i][j], -m[j][i]);
                    }
                }
            }
        }
    }

    #[test]
    fn ks3_pairing_table_c0_zero() {
        let p = ks3_preset(0.0, "-1");
        let mut rng = sample::rng(51);
        for _ in 0..100 {
            let pt = ks3_point(&mut rng);
            for pairing in p.pairings() {
                let r = ks3_pairing_residual(&p, &pairing.form, &pairing.field, &pt, 0.0)
                    .unwrap();
                assert!(
                    r <= 1e-9,
                    "pairing {}/{} residual {r} at {pt:?}",
                    pairing.form,
                    pairing.field
                );
            }
        }
    }

    #[test]
    fn ks3_omega3ks_pairings_any_c0() {
        let mut rng = sample::rng(52);
        for _ in 0..20 {
            let c0 = rng.gen_range(-1.0..1.0);
            let p = ks3_preset(c0, "0.7");
            let pt = ks3_point(&mut rng);
            for field in ["Y1", "Y2", "Y3"] {
                let r = ks3_pairing_residual(&p, "omega_3ks", field, &pt, 0.0).unwrap();
                assert!(r <= 1e-9, "c0={c0} field={field} r={r}");
            }
        }
    }

    #[test]
    fn ks3_sl2_relations() {
        let p = ks3_preset(0.0, "-1");
        let mut rng = sample::rng(53);
        for _ in 0..100 {
            let pt = ks3_point(&mut rng);
            for (name, r) in ks3_sl2_check(&p, &pt, 0.0).unwrap() {
                assert!(r <= 1e-8, "{name} residual {r} at {pt:?}");
            }
        }
    }

    #[test]
    fn ks3_commutators_any_c0() {
        let mut rng = sample::rng(54);
        for _ in 0..100 {
            let c0 = rng.gen_range(-1.0..1.0);
            let p = ks3_preset(c0, "0");
            let pt = ks3_point(&mut rng);
            let checks = ks3_sl2_check(&p, &pt, 0.0).unwrap();
            for name in ["[Y1,Y2]-Y1", "[Y1,Y3]-2Y2", "[Y2,Y3]-Y3"] {
                assert!(checks[name] <= 1e-8, "{name}: {} (c0={c0})", checks[name]);
            }
        }
    }

    #[test]
    fn ks3_derived_density_matches_closed_form() {
        // at c0 = 0, b1 constant: ρ* = −(a² + 4·b1·v²)/v⁶, obtained from
        // an independent symbolic computation
        let p = ks3_preset(0.0, "-1");
        let mut rng = sample::rng(55);
        let mut checked = 0;
        while checked < 100 {
            let pt = ks3_point(&mut rng);
            let (v, a) = (pt[1], pt[2]);
            let expected = -(a * a - 4.0 * v * v) / v.powi(6);
            if expected.abs() < 1e-2 {
                continue; // ρ* ≈ 0: the conformal factor degenerates
            }
            let rep = derive_density(&p, &pt, 0.0).unwrap();
            assert!(rep.spread <= 1e-6, "spread {} at {pt:?}", rep.spread);
            assert!(
                ((rep.rho_star - expected) / expected).abs() <= 1e-9,
                "rho* {} vs {expected}",
                rep.rho_star
            );
            checked += 1;
        }
    }

    #[test]
    fn ks3_cross_integration() {
        let p = ks3_preset(0.0, "-1");
        let gap = cross_integration_gap(&p, &[0.0, 1.0, 0.0], (0.0, 0.5), 1e-3).unwrap();
        assert!(gap <= 1e-6, "gap {gap}");
    }

    #[test]
    fn riccati_h1_value() {
        let p = riccati_preset(3, "1", "0", "0");
        let h1 = p.aux_field("h1").unwrap();
        let v: f64 = h1.eval(&[0.0, 1.0, 3.0], 0.0).unwrap();
        assert!((v - (-4.0 / 3.0)).abs() <= 1e-14);
    }

    #[test]
    fn riccati_rhs_constant_case() {
        let p = riccati_preset(3, "1", "0", "0");
        assert_eq!(p.rhs().eval(&[0.0, 1.0, 3.0], 0.0).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn riccati_forms_closed() {
        let mut rng = sample::rng(56);
        for n in [3usize, 4] {
            let p = riccati_preset(n, "0.5", "1", "-0.3");
            for _ in 0..20 {
                let pt = sample::random_separated_point(n, -2.0, 2.0, 0.4, &mut rng);
                for (name, form) in p.two_forms() {
                    let r = form.closedness_residual(&pt, 0.0, 1e-5).unwrap();
                    assert!(r <= 1e-6, "{name} closedness {r} (n={n})");
                }
            }
        }
    }

    #[test]
    fn riccati_recovery() {
        let mut rng = sample::rng(57);
        for n in [3usize, 4, 5] {
            let p = riccati_preset(n, "0.7", "1.1", "-0.4");
            for _ in 0..20 {
                let pt = sample::random_separated_point(n, -2.0, 2.0, 0.4, &mut rng);
                let res = riccati_bracket_recovery(&p, &pt, 0.0).unwrap();
                let rhs = p.rhs().eval(&pt, 0.0).unwrap();
                let scale = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
                for r in &res {
                    assert!(r.abs() <= 1e-6 * scale, "n={n} residual {r} at {pt:?}");
                }
            }
        }
    }

    #[test]
    fn riccati_density_spread() {
        let mut rng = sample::rng(58);
        for n in [3usize, 4] {
            let p = riccati_preset(n, "1", "0.5", "0.25");
            for _ in 0..50 {
                let pt = sample::random_separated_point(n, -2.0, 2.0, 0.4, &mut rng);
                let rep = derive_density(&p, &pt, 0.0).unwrap();
                assert!(rep.spread <= 1e-6, "n={n} spread {}", rep.spread);
            }
        }
    }

    #[test]
    fn stationary_point_errors() {
        let p = riccati_preset(3, "0", "0", "0");
        let res = derive_density(&p, &[0.0, 1.0, 2.0], 0.0);
        assert!(matches!(res, Err(SystemError::Stationary(_))));
    }

    #[test]
    fn time_dependent_b1_enters_rhs() {
        let p = ks3_preset(0.0, "-1 + t");
        // at t = 1, b1 = 0: ȧ = 3/2·a²/v
        let r = p.rhs().eval(&[0.0, 1.0, 2.0], 1.0).unwrap();
        assert_eq!(r, vec![1.0, 2.0, 6.0]);
        // at t = 0, b1 = −1: extra −2v
        let r0 = p.rhs().eval(&[0.0, 1.0, 2.0], 0.0).unwrap();
        assert_eq!(r0, vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn domain_excludes_coincident_coordinates() {
        let p = riccati_preset(3, "1", "0", "0");
        assert!(!p.structure().domain().contains(&[1.0, 1.0, 2.0], 0.0));
        assert!(p.structure().domain().contains(&[0.0, 1.0, 2.0], 0.0));
    }
}
