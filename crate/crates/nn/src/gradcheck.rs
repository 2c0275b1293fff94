//! Central finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Mode, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// What each finite difference perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    /// One entry at a time; compares the full gradient entry by entry.
    Entries,
    /// The whole tensor at once along random sign vectors scaled to norm
    /// `eps` (each entry moves by `±eps/√len`), for the given number of
    /// directions; compares directional derivatives. Every tensor gets the
    /// same step length whatever its size.
    Directions(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f32,
    pub mode: Mode,
    /// Seed of the output projection and of the sign patterns.
    pub seed: u64,
    pub probe: Probe,
    /// Leave out entries or directions whose stencil switches a piecewise
    /// branch (see [`Graph::branch_signature`]).
    pub skip_kinks: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            mode: Mode::Eval,
            seed: 0,
            probe: Probe::Entries,
            skip_kinks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, floor)` over the compared quantities
    /// (gradient entries or directional derivatives). The floor is the
    /// magnitude expected from the RMS gradient entry across every checked
    /// tensor; it keeps tensors whose exact gradient is zero (such as a key
    /// bias under softmax) from dividing noise by noise.
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub error_norm: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// Quantities compared.
    pub checked: usize,
    /// Entries or directions left out for switching a branch.
    pub kinks: usize,
}

struct Stencil {
    plus: f64,
    minus: f64,
    /// Each end took the same branches as the unperturbed pass.
    plus_smooth: bool,
    minus_smooth: bool,
    /// Signed step per perturbed entry, `x₊ − x` and `x − x₋`.
    up: Vec<f64>,
    down: Vec<f64>,
}

impl Stencil {
    fn smooth(&self) -> bool {
        self.plus_smooth && self.minus_smooth
    }
}

/// Derivative at 0 from values at distances `a < b` on one side, second
/// order in the step: the slope pointing away from the samples, so negate
/// it for samples on the positive side.
fn three_point(f0: f64, near: f64, far: f64, a: f64, b: f64) -> f64 {
    ((b * b - a * a) * f0 - b * b * near + a * a * far) / (a * b * (b - a))
}

struct Sample {
    analytic: f64,
    numeric: f64,
    smooth: bool,
}

/// Compares analytic and central-difference gradients of
/// `L = Σ cᵢ yᵢ`, where `y` is the output built by `forward` and `c` is a
/// fixed random projection, for every listed parameter.
///
/// `L` is accumulated in 64-bit from the 32-bit outputs, and each quotient
/// divides by the perturbation actually representable in 32-bit, so the
/// remaining error is the forward pass's own rounding.
///
/// With `skip_kinks`, a sample whose perturbed passes take a different
/// ReLU or maxpool branch than the unperturbed one straddles a kink. An
/// entry then falls back to a one-sided stencil at `eps` and `2·eps` on
/// whichever side stays on the unperturbed branches; an entry with no such
/// side, or a direction, is left out.
pub fn check_gradients(
    store: &mut ParamStore,
    params: &[ParamId],
    opts: GradCheckOptions,
    forward: impl Fn(&mut Graph) -> Result<Var>,
) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (coeffs, analytic, signature) = {
        let mut g = Graph::new(store, opts.mode).track_branches();
        let y = forward(&mut g)?;
        let shape = g.shape(y).to_vec();
        let n: usize = shape.iter().product();
        let coeffs = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let c = g.input(coeffs.clone());
        let weighted = g.mul(y, c)?;
        let loss = g.sum(weighted);
        let signature = g.branch_signature();
        let grads = g.backward(loss)?;
        let analytic: Vec<Tensor> = params
            .iter()
            .map(|&id| grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape())))
            .collect();
        (coeffs, analytic, signature)
    };

    let objective = |store: &ParamStore| -> Result<(f64, Option<u64>)> {
        let mut g = Graph::new(store, opts.mode).track_branches();
        let y = forward(&mut g)?;
        let value = g
            .value(y)
            .data()
            .iter()
            .zip(coeffs.data())
            .map(|(&v, &c)| f64::from(v) * f64::from(c))
            .sum();
        Ok((value, g.branch_signature()))
    };

    // Objective at the tensor moved by +steps and by −steps, with the
    // 32-bit representable step sizes actually taken.
    let evaluate = |store: &mut ParamStore, id: ParamId, signs: &[(usize, f32)], eps: f32| -> Result<Stencil> {
        let original = store.get(id).clone();
        let mut plus = original.clone();
        let mut minus = original.clone();
        let mut up = Vec::with_capacity(signs.len());
        let mut down = Vec::with_capacity(signs.len());
        for &(j, s) in signs {
            let x = original.data()[j];
            plus.data_mut()[j] = x + s * eps;
            minus.data_mut()[j] = x - s * eps;
            up.push(f64::from(plus.data()[j]) - f64::from(x));
            down.push(f64::from(x) - f64::from(minus.data()[j]));
        }
        store.set(id, plus)?;
        let (plus, sp) = objective(store)?;
        store.set(id, minus)?;
        let (minus, sm) = objective(store)?;
        store.set(id, original)?;
        Ok(Stencil {
            plus,
            minus,
            plus_smooth: sp == signature,
            minus_smooth: sm == signature,
            up,
            down,
        })
    };
    let (base, _) = objective(store)?;

    let mut samples: Vec<Vec<Sample>> = Vec::with_capacity(params.len());
    for (&id, grad) in params.iter().zip(&analytic) {
        let mut out = Vec::new();
        match opts.probe {
            Probe::Entries => {
                for j in 0..grad.len() {
                    let near = evaluate(store, id, &[(j, 1.0)], opts.eps)?;
                    let analytic = f64::from(grad.data()[j]);
                    let central = Sample {
                        analytic,
                        numeric: (near.plus - near.minus) / (near.up[0] + near.down[0]),
                        smooth: near.smooth(),
                    };
                    if central.smooth || !opts.skip_kinks {
                        out.push(central);
                        continue;
                    }
                    let far = evaluate(store, id, &[(j, 1.0)], 2.0 * opts.eps)?;
                    let numeric = if near.minus_smooth && far.minus_smooth {
                        Some(three_point(base, near.minus, far.minus, near.down[0], far.down[0]))
                    } else if near.plus_smooth && far.plus_smooth {
                        Some(-three_point(base, near.plus, far.plus, near.up[0], far.up[0]))
                    } else {
                        None
                    };
                    out.push(match numeric {
                        Some(numeric) => Sample {
                            analytic,
                            numeric,
                            smooth: true,
                        },
                        None => central,
                    });
                }
            }
            Probe::Directions(count) => {
                let scale = 1.0 / (grad.len().max(1) as f32).sqrt();
                for _ in 0..count {
                    let signs: Vec<(usize, f32)> = (0..grad.len())
                        .map(|j| (j, if rng.random::<bool>() { scale } else { -scale }))
                        .collect();
                    let st = evaluate(store, id, &signs, opts.eps)?;
                    let h = 2.0 * f64::from(opts.eps);
                    // Directional derivative along the steps actually taken.
                    let analytic: f64 = grad
                        .data()
                        .iter()
                        .zip(st.up.iter().zip(&st.down))
                        .map(|(&g, (u, d))| f64::from(g) * (u + d) / h)
                        .sum();
                    out.push(Sample {
                        analytic,
                        numeric: (st.plus - st.minus) / h,
                        smooth: st.smooth(),
                    });
                }
            }
        }
        samples.push(out);
    }

    let total: usize = analytic.iter().map(Tensor::len).sum();
    let sum_sq: f64 = analytic
        .iter()
        .flat_map(|t| t.data())
        .map(|&a| f64::from(a).powi(2))
        .sum();
    let rms = (sum_sq / total.max(1) as f64).sqrt();
    Ok(params
        .iter()
        .zip(&samples)
        .map(|(&id, s)| compare(store.name(id), s, rms, opts.skip_kinks))
        .collect())
}

fn compare(name: &str, samples: &[Sample], unit: f64, skip_kinks: bool) -> GradCheck {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut kinks = 0;
    for s in samples {
        let err = (s.analytic - s.numeric).abs();
        if skip_kinks && !s.smooth {
            kinks += 1;
            continue;
        }
        diff += err * err;
        na += s.analytic * s.analytic;
        nn += s.numeric * s.numeric;
        max_abs = max_abs.max(err);
    }
    let checked = samples.len() - kinks;
    let denom = na.sqrt().max(nn.sqrt()).max(unit * (checked as f64).sqrt());
    GradCheck {
        name: name.to_string(),
        relative_error: if denom == 0.0 { 0.0 } else { diff.sqrt() / denom },
        max_abs_error: max_abs,
        error_norm: diff.sqrt(),
        analytic_norm: na.sqrt(),
        numeric_norm: nn.sqrt(),
        checked,
        kinks,
    }
}

/// Relative error of all checked quantities taken together:
/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`.
pub fn joint_relative_error(reports: &[GradCheck]) -> f64 {
    let sq = |f: fn(&GradCheck) -> f64| reports.iter().map(|r| f(r).powi(2)).sum::<f64>().sqrt();
    let err = sq(|r| r.error_norm);
    let denom = sq(|r| r.analytic_norm).max(sq(|r| r.numeric_norm));
    if denom == 0.0 {
        0.0
    } else {
        err / denom
    }
}
