//! Central finite-difference validation of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference half step.
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    /// Check at most this many entries per tensor (seeded sample); all when `None`.
    pub max_entries_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            tolerance: 1e-4,
            floor: 1e-6,
            max_entries_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub numel: usize,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// One line per tensor plus a verdict.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for t in &self.tensors {
            s.push_str(&format!(
                "{:<40} checked {:>6}/{:<8} max_rel {:.3e}  max_abs {:.3e}\n",
                t.name, t.entries_checked, t.numel, t.max_rel_error, t.max_abs_error
            ));
        }
        s.push_str(&format!(
            "max relative error {:.3e} (tolerance {:.1e}): {}\n",
            self.max_rel_error,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        ));
        s
    }
}

fn evaluate<T, F>(stores: &[ParamStore<T>], loss: &F) -> Result<f64>
where
    T: Scalar,
    F: for<'t> Fn(&mut Tape<'t, T>, &[Bound]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bounds: Vec<Bound> = stores.iter().map(|s| s.bind(&mut tape)).collect();
    let l = loss(&mut tape, &bounds)?;
    Ok(tape.value(l).item()?.to_f64().unwrap_or(f64::NAN))
}

/// Compares tape gradients of `loss` against central differences for every
/// tensor of every store. `labels[i]` prefixes the names of `stores[i]`.
///
/// `loss` must be a deterministic function of the parameters.
pub fn grad_check<T, F>(
    stores: &mut [ParamStore<T>],
    labels: &[&str],
    loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'t> Fn(&mut Tape<'t, T>, &[Bound]) -> Result<Var>,
{
    let analytic: Vec<Vec<Vec<T>>> = {
        let mut tape = Tape::new();
        let bounds: Vec<Bound> = stores.iter().map(|s| s.bind(&mut tape)).collect();
        let l = loss(&mut tape, &bounds)?;
        let grads = tape.backward(l)?;
        bounds
            .iter()
            .map(|b| b.grads(&grads).into_iter().map(|t| t.into_data()).collect())
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = T::lit(opts.step);
    let mut tensors = Vec::new();
    let mut worst = 0.0f64;
    for si in 0..stores.len() {
        for ti in 0..stores[si].len() {
            let numel = stores[si].tensors()[ti].len();
            let entries: Vec<usize> = match opts.max_entries_per_tensor {
                Some(k) if k < numel => {
                    let mut e = sample(&mut rng, numel, k).into_vec();
                    e.sort_unstable();
                    e
                }
                _ => (0..numel).collect(),
            };
            let mut max_rel = 0.0f64;
            let mut max_abs = 0.0f64;
            for &e in &entries {
                let orig = stores[si].tensors()[ti].data()[e];
                stores[si].tensors_mut()[ti].data_mut()[e] = orig + h;
                let plus = evaluate(stores, &loss);
                stores[si].tensors_mut()[ti].data_mut()[e] = orig - h;
                let minus = evaluate(stores, &loss);
                stores[si].tensors_mut()[ti].data_mut()[e] = orig;
                let numeric = (plus? - minus?) / (2.0 * opts.step);
                let a = analytic[si][ti][e].to_f64().unwrap_or(f64::NAN);
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
                let rel = if rel.is_nan() { f64::INFINITY } else { rel };
                max_rel = max_rel.max(rel);
                max_abs = max_abs.max(abs);
            }
            worst = worst.max(max_rel);
            let id = stores[si].ids().nth(ti).expect("tensor index in range");
            let label = labels.get(si).copied().unwrap_or("");
            let name = if label.is_empty() {
                stores[si].name(id).to_string()
            } else {
                format!("{label}.{}", stores[si].name(id))
            };
            tensors.push(TensorCheck {
                name,
                numel,
                entries_checked: entries.len(),
                max_rel_error: max_rel,
                max_abs_error: max_abs,
            });
        }
    }
    Ok(GradCheckReport {
        tensors,
        max_rel_error: worst,
        tolerance: opts.tolerance,
        passed: worst < opts.tolerance,
    })
}
