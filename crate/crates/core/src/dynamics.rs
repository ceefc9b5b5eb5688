//! Flow integration with conservation diagnostics.
//!
//! Two integrators: classical fixed-step RK4 and the embedded
//! Dormand–Prince 5(4) pair with a PI step controller. Time-dependent
//! coefficients are sampled exactly at the stage times `t + cᵢh`, so both
//! methods keep their design order on non-autonomous systems. Leaving the
//! structure's domain (e.g. `v = 0` for the third-order Kummer–Schwarz
//! system) is a hard error reporting the last valid time, never a clamp:
//! clamping would silently corrupt conservation statistics.

use std::collections::BTreeMap;

use crate::expr::{EvalError, ScalarField};
use crate::nambu::{DomainPredicate, VectorField};

#[derive(Debug, Clone)]
pub enum Method {
    Rk4Fixed {
        step: f64,
    },
    Rk45Adaptive {
        abs_tol: f64,
        rel_tol: f64,
        initial_step: f64,
        min_step: f64,
        max_step: f64,
    },
}

#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub method: Method,
    pub t_span: (f64, f64),
    /// Record every `stride`-th accepted step (the endpoints are always
    /// recorded).
    pub stride: usize,
}

impl IntegratorConfig {
    pub fn rk4(step: f64, t0: f64, t1: f64) -> IntegratorConfig {
        IntegratorConfig { method: Method::Rk4Fixed { step }, t_span: (t0, t1), stride: 1 }
    }

    pub fn rk45(tol: f64, t0: f64, t1: f64) -> IntegratorConfig {
        IntegratorConfig {
            method: Method::Rk45Adaptive {
                abs_tol: tol,
                rel_tol: tol,
                initial_step: (t1 - t0) / 100.0,
                min_step: 1e-12,
                max_step: t1 - t0,
            },
            t_span: (t0, t1),
            stride: 1,
        }
    }

    fn validate(&self) -> Result<(), FlowError> {
        let (t0, t1) = self.t_span;
        if !(t1 > t0) {
            return Err(FlowError::Config("t1 must exceed t0".into()));
        }
        if self.stride == 0 {
            return Err(FlowError::Config("stride must be ≥ 1".into()));
        }
        match self.method {
            Method::Rk4Fixed { step } => {
                if !(step > 0.0) {
                    return Err(FlowError::Config("rk4 step must be positive".into()));
                }
            }
            Method::Rk45Adaptive { abs_tol, rel_tol, initial_step, min_step, max_step } => {
                if !(abs_tol > 0.0 && rel_tol > 0.0) {
                    return Err(FlowError::Config("tolerances must be positive".into()));
                }
                if !(initial_step > 0.0 && min_step > 0.0 && max_step >= min_step) {
                    return Err(FlowError::Config("invalid step bounds".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("trajectory left the domain; last valid time t = {t_last}")]
    DomainExit { t_last: f64 },
    #[error("adaptive step underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("invalid integrator configuration: {0}")]
    Config(String),
}

/// Time-stamped states of one flow.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory is non-empty")
    }
}

fn check_point(
    domain: Option<&DomainPredicate>,
    x: &[f64],
    t: f64,
    t_last: f64,
) -> Result<(), FlowError> {
    if let Some(d) = domain {
        if !d.contains(x, t) {
            return Err(FlowError::DomainExit { t_last });
        }
    }
    Ok(())
}

/// Evaluates the field, converting evaluation failures at intermediate
/// stages into domain-exit errors carrying the last accepted time.
fn stage(
    field: &dyn VectorField,
    x: &[f64],
    t: f64,
    domain: Option<&DomainPredicate>,
    t_last: f64,
) -> Result<Vec<f64>, FlowError> {
    check_point(domain, x, t, t_last)?;
    field.eval(x, t).map_err(|_| FlowError::DomainExit { t_last })
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

fn rk4_step(
    field: &dyn VectorField,
    x: &[f64],
    t: f64,
    h: f64,
    domain: Option<&DomainPredicate>,
) -> Result<Vec<f64>, FlowError> {
    let k1 = stage(field, x, t, domain, t)?;
    let k2 = stage(field, &axpy(x, h / 2.0, &k1), t + h / 2.0, domain, t)?;
    let k3 = stage(field, &axpy(x, h / 2.0, &k2), t + h / 2.0, domain, t)?;
    let k4 = stage(field, &axpy(x, h, &k3), t + h, domain, t)?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order solution weights (row 7 of A) and 4th-order embedded weights.
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn dp_step(
    field: &dyn VectorField,
    x: &[f64],
    t: f64,
    h: f64,
    domain: Option<&DomainPredicate>,
) -> Result<(Vec<f64>, f64), FlowError> {
    let n = x.len();
    let mut ks: Vec<Vec<f64>> = Vec::with_capacity(7);
    for s in 0..7 {
        let mut xs = x.to_vec();
        for (j, k) in ks.iter().enumerate() {
            let a = DP_A[s][j];
            if a != 0.0 {
                for i in 0..n {
                    xs[i] += h * a * k[i];
                }
            }
        }
        ks.push(stage(field, &xs, t + DP_C[s] * h, domain, t)?);
    }
    let mut x5 = x.to_vec();
    let mut err = 0.0f64;
    for i in 0..n {
        let mut d5 = 0.0;
        let mut d4 = 0.0;
        for s in 0..7 {
            d5 += DP_B5[s] * ks[s][i];
            d4 += DP_B4[s] * ks[s][i];
        }
        x5[i] += h * d5;
        err = err.max((h * (d5 - d4)).abs());
    }
    Ok((x5, err))
}

/// Integrates the field from `x0` over the configured span.
pub fn integrate(
    field: &dyn VectorField,
    x0: &[f64],
    config: &IntegratorConfig,
    domain: Option<&DomainPredicate>,
) -> Result<Trajectory, FlowError> {
    config.validate()?;
    assert_eq!(x0.len(), field.dim(), "initial condition dimension mismatch");
    let (t0, t1) = config.t_span;
    check_point(domain, x0, t0, t0)?;
    field.eval(x0, t0)?; // surface genuine eval errors at the start point

    let mut times = vec![t0];
    let mut states = vec![x0.to_vec()];
    let push = |t: f64, x: &[f64], times: &mut Vec<f64>, states: &mut Vec<Vec<f64>>| {
        times.push(t);
        states.push(x.to_vec());
    };

    match config.method {
        Method::Rk4Fixed { step } => {
            let mut t = t0;
            let mut x = x0.to_vec();
            let mut accepted = 0usize;
            while t < t1 - 1e-14 * (t1 - t0) {
                let h = step.min(t1 - t);
                let next = rk4_step(field, &x, t, h, domain)?;
                t += h;
                if (t - t1).abs() < 1e-12 * (t1 - t0) {
                    t = t1;
                }
                check_point(domain, &next, t, times[times.len() - 1])?;
                x = next;
                accepted += 1;
                if accepted % config.stride == 0 || t >= t1 {
                    push(t, &x, &mut times, &mut states);
                }
            }
            if *times.last().unwrap() < t1 {
                push(t1, &x, &mut times, &mut states);
            }
        }
        Method::Rk45Adaptive { abs_tol, rel_tol, initial_step, min_step, max_step } => {
            let mut t = t0;
            let mut x = x0.to_vec();
            let mut h = initial_step.min(max_step);
            let mut err_prev = 1.0f64;
            let mut accepted = 0usize;
            while t < t1 - 1e-14 * (t1 - t0) {
                let h_try = h.min(t1 - t);
                let (next, err_abs) = dp_step(field, &x, t, h_try, domain)?;
                let scale = abs_tol
                    + rel_tol
                        * x.iter()
                            .chain(next.iter())
                            .map(|v| v.abs())
                            .fold(0.0, f64::max);
                let err = err_abs / scale;
                if err <= 1.0 {
                    t += h_try;
                    if (t - t1).abs() < 1e-12 * (t1 - t0) {
                        t = t1;
                    }
                    check_point(domain, &next, t, times[times.len() - 1])?;
                    x = next;
                    accepted += 1;
                    if accepted % config.stride == 0 || t >= t1 {
                        push(t, &x, &mut times, &mut states);
                    }
                    // PI controller (orders 5/4): exponents 0.7/5 and 0.4/5
                    let fac = 0.9
                        * err.max(1e-10).powf(-0.14)
                        * err_prev.max(1e-10).powf(0.08);
                    h = (h_try * fac.clamp(0.2, 5.0)).min(max_step);
                    err_prev = err.max(1e-10);
                } else {
                    h = h_try * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                }
                if h < min_step {
                    return Err(FlowError::StepUnderflow { t });
                }
            }
            if *times.last().unwrap() < t1 {
                push(t1, &x, &mut times, &mut states);
            }
        }
    }
    Ok(Trajectory { times, states })
}

/// Drift of one scalar diagnostic along a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct Drift {
    pub max_drift: f64,
    pub final_drift: f64,
    /// False for time-dependent fields, where drift carries no
    /// conservation claim.
    pub conservation_claim: bool,
}

/// Drift `|f(x(t)) − f(x(t₀))|` of each named field along the samples.
pub fn conservation_report(
    traj: &Trajectory,
    fields: &[(String, ScalarField)],
) -> Result<BTreeMap<String, Drift>, EvalError> {
    assert!(!traj.is_empty(), "empty trajectory");
    let mut out = BTreeMap::new();
    for (name, f) in fields {
        let f0: f64 = f.eval(&traj.states[0], traj.times[0])?;
        let mut max_drift = 0.0f64;
        let mut final_drift = 0.0;
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let v: f64 = f.eval(x, *t)?;
            final_drift = (v - f0).abs();
            max_drift = max_drift.max(final_drift);
        }
        out.insert(
            name.clone(),
            Drift { max_drift, final_drift, conservation_claim: f.is_autonomous() },
        );
    }
    Ok(out)
}

/// Result of a convergence-order measurement.
#[derive(Debug, Clone, Copy)]
pub enum OrderEstimate {
    Slope(f64),
    /// All errors at or below round-off; no slope is meaningful.
    Degenerate,
}

/// Least-squares slope of log(final-state error) against log(step size)
/// for fixed-step RK4 runs, using a run at the smallest step halved as
/// the reference solution.
pub fn convergence_order(
    field: &dyn VectorField,
    x0: &[f64],
    t_span: (f64, f64),
    steps: &[f64],
    domain: Option<&DomainPredicate>,
) -> Result<OrderEstimate, FlowError> {
    assert!(steps.len() >= 3, "need at least three step sizes");
    let smallest = steps.iter().cloned().fold(f64::INFINITY, f64::min);
    let reference = {
        let cfg = IntegratorConfig::rk4(smallest / 2.0, t_span.0, t_span.1);
        integrate(field, x0, &cfg, domain)?.final_state().to_vec()
    };
    let mut pts = Vec::new();
    for &h in steps {
        let cfg = IntegratorConfig::rk4(h, t_span.0, t_span.1);
        let fin = integrate(field, x0, &cfg, domain)?.final_state().to_vec();
        let err = fin
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if err < 1e-15 {
            return Ok(OrderEstimate::Degenerate);
        }
        pts.push((h.ln(), err.ln()));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    Ok(OrderEstimate::Slope((n * sxy - sx * sy) / (n * sxx - sx * sx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Chart, CoefficientTable};
    use crate::nambu::ExprField;

    fn chart1() -> Chart {
        Chart::new(&["x"], CoefficientTable::new())
    }

    #[test]
    fn zero_field_is_constant() {
        let ch = chart1();
        let f = ExprField::parse("Z", &["0"], &ch).unwrap();
        let traj = integrate(&f, &[1.5], &IntegratorConfig::rk4(0.1, 0.0, 1.0), None).unwrap();
        for x in &traj.states {
            assert_eq!(x[0], 1.5);
        }
        assert_eq!(*traj.times.last().unwrap(), 1.0);
    }

    #[test]
    fn exponential_growth_rk45() {
        let ch = chart1();
        let f = ExprField::parse("L", &["x"], &ch).unwrap();
        let traj =
            integrate(&f, &[1.0], &IntegratorConfig::rk45(1e-10, 0.0, 1.0), None).unwrap();
        let x1 = traj.final_state()[0];
        assert!((x1 - std::f64::consts::E).abs() <= 1e-8, "x(1) = {x1}");
    }

    #[test]
    fn exponential_growth_rk4() {
        let ch = chart1();
        let f = ExprField::parse("L", &["x"], &ch).unwrap();
        let traj = integrate(&f, &[2.0], &IntegratorConfig::rk4(1e-3, 0.0, 1.0), None).unwrap();
        let x1 = traj.final_state()[0];
        assert!((x1 - 2.0 * std::f64::consts::E).abs() <= 1e-9);
    }

    #[test]
    fn nonautonomous_stage_times() {
        // ẋ = 3t² integrates exactly to t³ only if stages sample t + cᵢh.
        let ch = chart1();
        let f = ExprField::parse("T", &["3*t^2"], &ch).unwrap();
        let traj = integrate(&f, &[0.0], &IntegratorConfig::rk4(0.05, 0.0, 2.0), None).unwrap();
        let x1 = traj.final_state()[0];
        assert!((x1 - 8.0).abs() <= 1e-10, "x(2) = {x1}");
    }

    #[test]
    fn time_reversal_rk4() {
        let ch = Chart::new(&["x", "y"], CoefficientTable::new());
        let fwd = ExprField::parse("F", &["y", "-x"], &ch).unwrap();
        let bwd = ExprField::parse("B", &["-y", "x"], &ch).unwrap();
        let x0 = [1.0, 0.0];
        let there =
            integrate(&fwd, &x0, &IntegratorConfig::rk4(1e-3, 0.0, 2.0), None).unwrap();
        let back = integrate(
            &bwd,
            there.final_state(),
            &IntegratorConfig::rk4(1e-3, 0.0, 2.0),
            None,
        )
        .unwrap();
        let fin = back.final_state();
        for i in 0..2 {
            assert!((fin[i] - x0[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn domain_exit_is_hard_error() {
        // ẋ = −1 crosses x = 0 at t = 1
        let ch = chart1();
        let f = ExprField::parse("D", &["0 - 1"], &ch).unwrap();
        let dom = DomainPredicate::nonzero(vec![
            crate::expr::ScalarField::coordinate(0, &ch),
        ]);
        let res = integrate(&f, &[1.0], &IntegratorConfig::rk4(0.1, 0.0, 2.0), Some(&dom));
        match res {
            Err(FlowError::DomainExit { t_last }) => {
                assert!(t_last < 1.05, "t_last = {t_last}");
            }
            other => panic!("expected domain exit, got {other:?}"),
        }
    }

    #[test]
    fn singular_rhs_reports_domain_exit() {
        // the rhs is only defined for x > 0 and drives x through zero
        let ch = chart1();
        let f = ExprField::parse("S", &["0*ln(x) - 1"], &ch).unwrap();
        let res = integrate(&f, &[0.5], &IntegratorConfig::rk4(0.01, 0.0, 2.0), None);
        assert!(matches!(res, Err(FlowError::DomainExit { .. })));
    }

    #[test]
    fn strictly_increasing_times() {
        let ch = chart1();
        let f = ExprField::parse("L", &["x"], &ch).unwrap();
        for cfg in [
            IntegratorConfig::rk4(0.013, 0.0, 1.0),
            IntegratorConfig::rk45(1e-8, 0.0, 1.0),
        ] {
            let traj = integrate(&f, &[1.0], &cfg, None).unwrap();
            for w in traj.times.windows(2) {
                assert!(w[1] > w[0]);
            }
            assert_eq!(*traj.times.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn stride_thins_samples() {
        let ch = chart1();
        let f = ExprField::parse("L", &["x"], &ch).unwrap();
        let mut cfg = IntegratorConfig::rk4(0.1, 0.0, 1.0);
        cfg.stride = 5;
        let traj = integrate(&f, &[1.0], &cfg, None).unwrap();
        assert_eq!(traj.times.len(), 3); // t0, t=0.5, t=1.0
    }

    #[test]
    fn conservation_of_circle_radius() {
        let ch = Chart::new(&["x", "y"], CoefficientTable::new());
        let f = ExprField::parse("F", &["y", "-x"], &ch).unwrap();
        let r2 = crate::expr::ScalarField::parse("x^2 + y^2", &ch).unwrap();
        let traj =
            integrate(&f, &[1.0, 0.0], &IntegratorConfig::rk4(1e-3, 0.0, 1.0), None).unwrap();
        let rep = conservation_report(&traj, &[("r2".to_string(), r2)]).unwrap();
        let d = rep["r2"];
        assert!(d.conservation_claim);
        assert!(d.max_drift <= 1e-10, "drift {}", d.max_drift);
    }

    #[test]
    fn halving_step_cuts_drift_by_order() {
        let ch = Chart::new(&["x", "y"], CoefficientTable::new());
        let f = ExprField::parse("F", &["y", "-x"], &ch).unwrap();
        let r2 = crate::expr::ScalarField::parse("x^2 + y^2", &ch).unwrap();
        let drift_at = |h: f64| {
            let traj =
                integrate(&f, &[1.0, 0.0], &IntegratorConfig::rk4(h, 0.0, 1.0), None).unwrap();
            conservation_report(&traj, &[("r2".to_string(), r2.clone())]).unwrap()["r2"]
                .max_drift
        };
        let d1 = drift_at(1e-2);
        let d2 = drift_at(5e-3);
        assert!(d1 / d2 >= 12.0, "ratio {}", d1 / d2);
    }

    #[test]
    fn rk4_order_measurement() {
        let ch = chart1();
        let f = ExprField::parse("L", &["x"], &ch).unwrap();
        let est = convergence_order(&f, &[1.0], (0.0, 1.0), &[1e-2, 5e-3, 2.5e-3], None)
            .unwrap();
        match est {
            OrderEstimate::Slope(s) => assert!((3.5..=4.5).contains(&s), "slope {s}"),
            OrderEstimate::Degenerate => panic!("unexpected degenerate estimate"),
        }
    }

    #[test]
    fn zero_field_order_is_degenerate() {
        let ch = chart1();
        let f = ExprField::parse("Z", &["0"], &ch).unwrap();
        let est = convergence_order(&f, &[1.0], (0.0, 1.0), &[1e-1, 5e-2, 2.5e-2], None)
            .unwrap();
        assert!(matches!(est, OrderEstimate::Degenerate));
    }

    #[test]
    fn bad_configs_rejected() {
        let ch = chart1();
        let f = ExprField::parse("Z", &["0"], &ch).unwrap();
        let bad = IntegratorConfig::rk4(0.1, 1.0, 0.0);
        assert!(matches!(
            integrate(&f, &[0.0], &bad, None),
            Err(FlowError::Config(_))
        ));
        let mut bad2 = IntegratorConfig::rk4(0.0, 0.0, 1.0);
        assert!(matches!(
            integrate(&f, &[0.0], &bad2, None),
            Err(FlowError::Config(_))
        ));
        bad2.stride = 0;
        assert!(matches!(
            integrate(&f, &[0.0], &bad2, None),
            Err(FlowError::Config(_))
        ));
    }
}
