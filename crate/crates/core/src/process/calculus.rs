//! Calculus on process data: covariability, the product and chain rules, the Taylor
//! gap bound and time changes.

use std::sync::Arc;

use smallvec::SmallVec;

use super::{state_f64, Buf, Channel, HjpError, JumpKernel, ProcessSpec};
use crate::scalar::Scalar;

/// Drift `μ(x) = D(x) + q(x)·E[Δ(x, u)]`.
pub fn drift<S: Scalar>(spec: &ProcessSpec<S>, x: &[S]) -> Result<Vec<S>, HjpError> {
    spec.drift(x)
}

/// Diffusivity `σ²(x) = q(x)·E[Δ(x, u)²]`, per coordinate.
pub fn diffusivity<S: Scalar>(spec: &ProcessSpec<S>, x: &[S]) -> Result<Vec<S>, HjpError> {
    spec.diffusivity(x)
}

/// Covariability `σ(X, Y) = q·E[Δ(X)Δ(Y)]` of two scalar processes driven by the same
/// jump marks. Both specs are evaluated at the same underlying state.
pub fn covariability<S: Scalar>(
    x_spec: &ProcessSpec<S>,
    y_spec: &ProcessSpec<S>,
    state: &[S],
) -> Result<S, HjpError> {
    for s in [x_spec, y_spec] {
        if s.dim() != 1 || state.len() != 1 {
            return Err(HjpError::Dimension { expected: 1, got: state.len().max(s.dim()) });
        }
        s.validate_at(state)?;
    }
    // A kernel that never jumps is coupled with anything.
    if x_spec.kernel().is_empty() || y_spec.kernel().is_empty() {
        return Ok(S::zero());
    }
    let kx = x_spec.clock(state);
    let ky = y_spec.clock(state);
    if kx != ky {
        return Err(HjpError::Coupling(format!("clocks differ ({kx} vs {ky})")));
    }
    let mut dx = [S::zero()];
    let mut dy = [S::zero()];
    let raw = match (x_spec.kernel(), y_spec.kernel()) {
        (JumpKernel::Discrete(a), JumpKernel::Discrete(b)) => {
            if a.len() != b.len() {
                return Err(HjpError::Coupling(format!("{} vs {} channels", a.len(), b.len())));
            }
            let mut acc = S::zero();
            for (ca, cb) in a.iter().zip(b) {
                let w = ca.weight(state);
                if w != cb.weight(state) {
                    return Err(HjpError::Coupling(format!(
                        "channel rates differ at {:?}",
                        state_f64(state)
                    )));
                }
                if w == S::zero() {
                    continue;
                }
                ca.displace(state, &mut dx);
                cb.displace(state, &mut dy);
                acc += w * dx[0] * dy[0];
            }
            acc
        }
        (
            JumpKernel::Continuous { rate: ra, jump: ja, nodes: na },
            JumpKernel::Continuous { rate: rb, jump: jb, nodes: nb },
        ) => {
            let q = ra(state);
            if q != rb(state) || na != nb {
                return Err(HjpError::Coupling("rates or quadrature differ".into()));
            }
            let n = S::from_usize(*na).expect("node count fits scalar");
            let mut m = S::zero();
            for k in 0..*na {
                let u = (S::from_usize(k).expect("node index fits scalar") + S::lit(0.5)) / n;
                ja(state, u, &mut dx);
                jb(state, u, &mut dy);
                m += dx[0] * dy[0];
            }
            q * (m / n)
        }
        _ => return Err(HjpError::Coupling("discrete and continuous kernels".into())),
    };
    Ok(if x_spec.has_clock() { raw / kx } else { raw })
}

/// Matrix of covariabilities `q·E[ΔᵢΔⱼ]` of a vector process, row-major `d × d`.
pub fn covariability_matrix<S: Scalar>(spec: &ProcessSpec<S>, x: &[S]) -> Result<Vec<S>, HjpError> {
    spec.validate_at(x)?;
    let d = spec.dim();
    let mut out = vec![S::zero(); d * d];
    let mut disp: Buf<S> = SmallVec::from_elem(S::zero(), d);
    let accumulate = |w: S, disp: &[S], out: &mut [S]| {
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] += w * disp[i] * disp[j];
            }
        }
    };
    match spec.kernel() {
        JumpKernel::Discrete(ch) => {
            for c in ch {
                let w = c.weight(x);
                if w == S::zero() {
                    continue;
                }
                c.displace(x, &mut disp);
                accumulate(w, &disp, &mut out);
            }
        }
        JumpKernel::Continuous { rate, jump, nodes } => {
            let q = rate(x);
            let n = S::from_usize(*nodes).expect("node count fits scalar");
            for k in 0..*nodes {
                let u = (S::from_usize(k).expect("node index fits scalar") + S::lit(0.5)) / n;
                jump(x, u, &mut disp);
                accumulate(q / n, &disp, &mut out);
            }
        }
    }
    if spec.has_clock() {
        let k = spec.clock(x);
        out.iter_mut().for_each(|v| *v /= k);
    }
    Ok(out)
}

/// Product rule: `μ(XY) = μ(X)·Y + X·μ(Y) + σ(X, Y)`.
pub fn product_drift<S: Scalar>(mu_x: S, mu_y: S, x: S, y: S, sigma_xy: S) -> Result<S, HjpError> {
    if ![mu_x, mu_y, x, y, sigma_xy].iter().all(|v| v.is_finite()) {
        return Err(HjpError::Domain("product rule inputs must be finite".into()));
    }
    Ok(mu_x * y + x * mu_y + sigma_xy)
}

/// Certified bound `½·σ²·sup|f''|` on `|μ(f(X)) − f'(X)μ(X)|`, where the supremum runs
/// over the `c_Δ`-ball around the current state.
pub fn taylor_drift_gap_bound<S: Scalar>(sigma2: S, f_second_sup: S) -> Result<S, HjpError> {
    if !(sigma2 >= S::zero()) || !(f_second_sup >= S::zero()) {
        return Err(HjpError::Domain(format!(
            "Taylor gap bound needs nonnegative inputs, got sigma2={sigma2}, sup|f''|={f_second_sup}"
        )));
    }
    Ok(S::lit(0.5) * sigma2 * f_second_sup)
}

/// Smooth scalar map with its derivative, applied coordinatewise.
#[derive(Clone)]
pub struct ScalarMap<S> {
    pub f: Arc<dyn Fn(S) -> S + Send + Sync>,
    pub df: Arc<dyn Fn(S) -> S + Send + Sync>,
    pub name: String,
}

impl<S: Scalar> ScalarMap<S> {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(S) -> S + Send + Sync + 'static,
        df: impl Fn(S) -> S + Send + Sync + 'static,
    ) -> Self {
        Self { f: Arc::new(f), df: Arc::new(df), name: name.into() }
    }

    pub fn identity() -> Self {
        Self::new("id", |x| x, |_| S::one())
    }

    pub fn square() -> Self {
        Self::new("sq", |x| x * x, |x| S::lit(2.0) * x)
    }

    /// `x ↦ e^{λx}`.
    pub fn exp_scaled(lambda: S) -> Self {
        Self::new(format!("exp[{lambda}]"), move |x| (lambda * x).exp(), move |x| lambda * (lambda * x).exp())
    }
}

/// Process `f(X)` with derivative `f'(X)·D(X)` and jumps `f(X + Δ) − f(X)`.
///
/// The result is evaluated at the state of `X`, so its drift obeys the chain rule
/// `μ(f(X)) = f'(X)D(X) + q·E[f(X + Δ) − f(X)]`. It cannot be simulated on its own. Its jump
/// bound is unknown and set to infinity.
pub fn transform_process<S: Scalar>(spec: &ProcessSpec<S>, map: &ScalarMap<S>) -> ProcessSpec<S> {
    let d = spec.dim();
    let kernel = match spec.kernel() {
        JumpKernel::Discrete(ch) => JumpKernel::Discrete(
            ch.iter()
                .map(|c| {
                    let c = c.clone();
                    let f = map.f.clone();
                    let w = c.weight.clone();
                    Channel {
                        weight: w,
                        displacement: Arc::new(move |x: &[S], out: &mut [S]| {
                            c.displace(x, out);
                            for i in 0..d {
                                out[i] = f(x[i] + out[i]) - f(x[i]);
                            }
                        }),
                    }
                })
                .collect(),
        ),
        JumpKernel::Continuous { rate, jump, nodes } => {
            let jump = jump.clone();
            let f = map.f.clone();
            JumpKernel::Continuous {
                rate: rate.clone(),
                jump: Arc::new(move |x: &[S], u: S, out: &mut [S]| {
                    jump(x, u, out);
                    for i in 0..d {
                        out[i] = f(x[i] + out[i]) - f(x[i]);
                    }
                }),
                nodes: *nodes,
            }
        }
    };
    let flow = spec.flow.clone().map(|field| {
        let df = map.df.clone();
        Arc::new(move |x: &[S], out: &mut [S]| {
            field(x, out);
            for i in 0..d {
                out[i] = df(x[i]) * out[i];
            }
        }) as super::FieldFn<S>
    });
    ProcessSpec {
        dim: d,
        flow,
        kernel,
        c_delta: S::infinity(),
        clock: spec.clock.clone(),
        transformed: true,
        descriptor: format!("{}({})", map.name, spec.descriptor()),
    }
}

/// Time change by a positive clock: rate and derivative are divided by `clock(x)`.
/// Composes with an existing clock. The ratio `μ/σ²` is unchanged.
pub fn rescale_time<S: Scalar>(
    spec: &ProcessSpec<S>,
    clock: impl Fn(&[S]) -> S + Send + Sync + 'static,
) -> ProcessSpec<S> {
    let mut out = spec.clone();
    out.clock = Some(match spec.clock.clone() {
        Some(prev) => Arc::new(move |x: &[S]| prev(x) * clock(x)),
        None => Arc::new(clock),
    });
    out.descriptor = format!("rescaled({})", spec.descriptor());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::Channel;

    fn bd(b: f64, d: f64) -> ProcessSpec<f64> {
        ProcessSpec::new(
            1,
            JumpKernel::Discrete(vec![Channel::constant(b, vec![1.0]), Channel::constant(d, vec![-1.0])]),
            1.0,
            format!("bd({b},{d})"),
        )
        .unwrap()
    }

    #[test]
    fn covariability_examples() {
        let p = ProcessSpec::new(1, JumpKernel::Discrete(vec![Channel::constant(1.0, vec![1.0])]), 1.0, "p")
            .unwrap();
        assert_eq!(covariability(&p, &p, &[0.0]).unwrap(), 1.0);
        let flat = ProcessSpec::<f64>::pure_flow(1, |_, o| o[0] = 1.0, "flat").unwrap();
        assert_eq!(covariability(&p, &flat, &[0.0]).unwrap(), 0.0);
        let down = ProcessSpec::new(1, JumpKernel::Discrete(vec![Channel::constant(1.0, vec![-1.0])]), 1.0, "m")
            .unwrap();
        assert_eq!(covariability(&p, &down, &[0.0]).unwrap(), -1.0);
        assert!(matches!(covariability(&p, &bd(1.0, 1.0), &[0.0]), Err(HjpError::Coupling(_))));
        let faster = ProcessSpec::new(1, JumpKernel::Discrete(vec![Channel::constant(2.0, vec![1.0])]), 1.0, "f")
            .unwrap();
        assert!(matches!(covariability(&p, &faster, &[0.0]), Err(HjpError::Coupling(_))));
    }

    #[test]
    fn product_rule_examples() {
        assert_eq!(product_drift(1.0, 0.0, 2.0, 5.0, 0.0).unwrap(), 5.0);
        assert_eq!(product_drift(1.0, 1.0, 3.0, 3.0, 3.0).unwrap(), 9.0);
        assert_eq!(product_drift(0.0, 0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(product_drift(f64::NAN, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn chain_rule_square_on_counter() {
        let p = ProcessSpec::new(1, JumpKernel::Discrete(vec![Channel::constant(1.0, vec![1.0])]), 1.0, "p")
            .unwrap();
        let sq = transform_process(&p, &ScalarMap::square());
        assert_eq!(sq.drift(&[2.0]).unwrap(), vec![5.0]);
        assert!(!sq.is_autonomous());
        // Exact gap |5 − 2x·μ| = 1 meets the Taylor bound ½·1·2 with equality.
        let gap: f64 = 5.0 - 4.0 * p.drift(&[2.0]).unwrap()[0];
        let gap = gap.abs();
        assert_eq!(gap, taylor_drift_gap_bound(1.0, 2.0).unwrap());
    }

    #[test]
    fn taylor_bound_examples() {
        assert_eq!(taylor_drift_gap_bound(3.0, 2.0).unwrap(), 3.0);
        assert_eq!(taylor_drift_gap_bound(3.0, 0.0).unwrap(), 0.0);
        assert!(taylor_drift_gap_bound(-1.0, 1.0).is_err());
        assert!(taylor_drift_gap_bound(1.0, -1.0).is_err());
    }

    #[test]
    fn transformed_flow_uses_derivative() {
        let f = ProcessSpec::<f64>::pure_flow(1, |x, o| o[0] = -x[0], "decay").unwrap();
        let sq = transform_process(&f, &ScalarMap::square());
        // μ(X²) = 2X·(−X)
        assert_eq!(sq.drift(&[3.0]).unwrap(), vec![-18.0]);
    }

    #[test]
    fn transform_reports_non_finite_images() {
        let p = bd(1.0, 1.0);
        let log = ScalarMap::new("ln", |x: f64| x.ln(), |x| 1.0 / x);
        let t = transform_process(&p, &log);
        assert!(matches!(t.drift(&[1.0]), Err(HjpError::Transform { .. })));
    }

    #[test]
    fn rescale_time_examples() {
        let s = bd(2.0, 1.0);
        let same = rescale_time(&s, |_| 1.0);
        assert_eq!(same.drift(&[0.0]).unwrap(), s.drift(&[0.0]).unwrap());
        let slow = rescale_time(&s, |_| 2.0);
        assert_eq!(slow.drift(&[0.0]).unwrap(), vec![0.5]);
        assert_eq!(slow.diffusivity(&[0.0]).unwrap(), vec![1.5]);
        assert_eq!(slow.rate(&[0.0]), 1.5);
        let twice = rescale_time(&slow, |_| 2.0);
        assert_eq!(twice.drift(&[0.0]).unwrap(), vec![0.25]);
        let bad = rescale_time(&s, |x| x[0]);
        assert!(matches!(bad.drift(&[0.0]), Err(HjpError::TimeChange { .. })));
    }

    #[test]
    fn covariability_matrix_of_coupled_pair() {
        let s = ProcessSpec::new(
            2,
            JumpKernel::Discrete(vec![Channel::constant(2.0, vec![1.0, -1.0]), Channel::constant(1.0, vec![0.0, 1.0])]),
            1.0,
            "pair",
        )
        .unwrap();
        assert_eq!(covariability_matrix(&s, &[0.0, 0.0]).unwrap(), vec![2.0, -2.0, -2.0, 3.0]);
    }
}
