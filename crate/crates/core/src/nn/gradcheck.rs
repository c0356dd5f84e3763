//! Central finite-difference verification of analytic gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference half step.
    pub step: f64,
    pub rel_tol: f64,
    /// Denominator floor for the relative error, so entries with vanishing
    /// gradients are compared absolutely.
    pub abs_floor: f64,
    /// Entries probed per parameter tensor; `None` probes every entry.
    pub samples_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            rel_tol: 1e-4,
            abs_floor: 1e-6,
            samples_per_param: None,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Probes dropped because every difference stencil changed a ReLU side
    /// or a max-pool winner, so the loss is not differentiable across them.
    pub kinked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub rel_tol: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn kinked(&self) -> usize {
        self.entries.iter().map(|e| e.kinked).sum()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.entries
            .iter()
            .filter(|e| e.max_rel_error > self.rel_tol || (e.checked == 0 && e.kinked > 0))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(4).max(9);
        writeln!(
            f,
            "{:<width$}  {:>7}  {:>6}  {:>12}  {:>12}  status",
            "parameter", "checked", "kinked", "max_rel_err", "max_abs_err"
        )?;
        for e in &self.entries {
            let failed = e.max_rel_error > self.rel_tol || (e.checked == 0 && e.kinked > 0);
            let status = if failed { "FAIL" } else { "ok" };
            writeln!(
                f,
                "{:<width$}  {:>7}  {:>6}  {:>12.3e}  {:>12.3e}  {status}",
                e.name, e.checked, e.kinked, e.max_rel_error, e.max_abs_error
            )?;
        }
        write!(
            f,
            "overall max relative error {:.3e} (tolerance {:.1e}): {}",
            self.max_rel_error(),
            self.rel_tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares `d loss / d param` from [`Graph::backward`] against central
/// differences for every tensor in `params`.
///
/// `loss_fn` builds the scalar loss from the parameters; it is called once
/// with gradients enabled and twice per probed entry in inference mode.
pub fn grad_check<F>(params: &ParamStore<f64>, cfg: &GradCheckConfig, loss_fn: F) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a, f64>, &'a ParamStore<f64>) -> Result<Var>,
{
    let (analytic, base) = {
        let mut g = Graph::new().with_kink_tracking();
        let loss = loss_fn(&mut g, params)?;
        let base = g.kink_signature();
        (g.backward(loss)?, base)
    };

    let eval = |store: &ParamStore<f64>| -> Result<(f64, Option<u64>)> {
        let mut g = Graph::inference().with_kink_tracking();
        let loss = loss_fn(&mut g, store)?;
        let v = g.value(loss).data()[0];
        if !v.is_finite() {
            return Err(Error::Numeric("loss is not finite during gradient check".into()));
        }
        Ok((v, g.kink_signature()))
    };

    let (centre, _) = eval(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for id in params.ids() {
        let n = params.get(id).shape().numel();
        let zeros;
        let grad = match analytic.param(id) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; n];
                &zeros
            }
        };
        // Sampled checks draw a few spare entries to replace kinked probes.
        let (candidates, wanted): (Vec<usize>, usize) = match cfg.samples_per_param {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, (4 * k).min(n)).into_vec();
                v[..k].sort_unstable();
                (v, k)
            }
            _ => ((0..n).collect(), n),
        };
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            checked: 0,
            kinked: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for &i in &candidates {
            if check.checked == wanted {
                break;
            }
            let orig = params.get(id).data()[i];
            let mut at = |d: f64| -> Result<(f64, bool)> {
                work.get_mut(id).data_mut()[i] = orig + d;
                let r = eval(&work);
                work.get_mut(id).data_mut()[i] = orig;
                r.map(|(v, sig)| (v, sig == base))
            };
            let mut numeric = None;
            // On a kink, fall back to a second-order one-sided difference on
            // the clean side, then to smaller steps.
            for step in [cfg.step, cfg.step / 10.0, cfg.step / 100.0] {
                let (plus, p_ok) = at(step)?;
                let (minus, m_ok) = at(-step)?;
                if p_ok && m_ok {
                    numeric = Some((plus - minus) / (2.0 * step));
                    break;
                }
                if m_ok {
                    let (minus2, ok) = at(-2.0 * step)?;
                    if ok {
                        numeric = Some((3.0 * centre - 4.0 * minus + minus2) / (2.0 * step));
                        break;
                    }
                }
                if p_ok {
                    let (plus2, ok) = at(2.0 * step)?;
                    if ok {
                        numeric = Some((-3.0 * centre + 4.0 * plus - plus2) / (2.0 * step));
                        break;
                    }
                }
            }
            let Some(numeric) = numeric else {
                check.kinked += 1;
                continue;
            };
            let a = grad[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            check.max_rel_error = check.max_rel_error.max(rel);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.checked += 1;
        }
        entries.push(check);
    }
    Ok(GradCheckReport {
        rel_tol: cfg.rel_tol,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Shape, Tensor};

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let t = Tensor::from_vec(Shape::new(1, 1, 1, values.len()), values.to_vec()).unwrap();
        s.insert("w", vec![values.len()], t).unwrap();
        s
    }

    #[test]
    fn smooth_loss_passes() {
        let params = store(&[0.3, -1.2, 2.0]);
        let id = params.id("w").unwrap();
        let r = grad_check(&params, &GradCheckConfig::default(), |g, st| {
            let w = g.param(st, id);
            let t = g.tanh(w);
            let sq = g.mul(t, w)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.kinked(), 0);
    }

    #[test]
    fn probe_on_kink_uses_clean_side() {
        // relu(w) at w = 0.5e-4: the central stencil crosses zero, the
        // forward one-sided stencil does not.
        let params = store(&[0.5e-4, 1.0]);
        let id = params.id("w").unwrap();
        let r = grad_check(&params, &GradCheckConfig::default(), |g, st| {
            let w = g.param(st, id);
            let r = g.relu(w);
            Ok(g.sum(r))
        })
        .unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.entries[0].checked, 2);
        assert_eq!(r.kinked(), 0);
    }

    #[test]
    fn kink_on_both_sides_is_reported_not_hidden() {
        // |w| = relu(w) + relu(-w) at 0: every stencil changes a branch.
        let params = store(&[0.0]);
        let id = params.id("w").unwrap();
        let r = grad_check(&params, &GradCheckConfig::default(), |g, st| {
            let w = g.param(st, id);
            let n = g.scale(w, -1.0);
            let (a, b) = (g.relu(w), g.relu(n));
            let abs = g.add(a, b)?;
            Ok(g.sum(abs))
        })
        .unwrap();
        assert_eq!(r.entries[0].kinked, 1);
        assert!(!r.passed());
    }

    #[test]
    fn wrong_gradient_still_fails() {
        // The loss uses the value of sigmoid(w) twice but the second use is
        // fed back as a constant, so backward misses half the gradient.
        let params = store(&[0.7, -0.4]);
        let id = params.id("w").unwrap();
        let r = grad_check(&params, &GradCheckConfig::default(), |g, st| {
            let w = g.param(st, id);
            let s = g.sigmoid(w);
            let value = g.value(s).clone().with_requires_grad(false);
            let detached = g.input(value);
            let p = g.mul(s, detached)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(!r.passed());
        assert_eq!(r.kinked(), 0);
    }
}
