//! Central finite-difference oracle for the autodiff graph.
//!
//! The objective is a fixed random projection `sum(out * R)` of whatever the
//! function under test returns; analytic gradients of that scalar are
//! compared against `(L(x + h) - L(x - h)) / 2h` on sampled entries.

use ndarray::IxDyn;
use rand::seq::index::sample;
use rand::Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::params::{ParamStore, Scope};
use crate::rng::seeded;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub step: f64,
    /// Entries checked per tensor; tensors smaller than this are checked fully.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            max_entries: 24,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    /// Largest norm-wise relative error over the checked groups.
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(group name, relative error, analytic gradient norm)` per group.
    pub groups: Vec<(String, f64, f64)>,
    /// Every checked `(analytic, numeric)` entry in check order.
    pub entries: Vec<(f64, f64)>,
    sizes: Vec<usize>,
}

impl GradReport {
    fn push(&mut self, name: String, analytic: &[f64], numeric: &[f64]) {
        let rel = relative_error(analytic, numeric);
        let norm = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.max_rel_err = self.max_rel_err.max(rel);
        self.checked += analytic.len();
        self.groups.push((name, rel, norm));
        self.entries.extend(analytic.iter().copied().zip(numeric.iter().copied()));
        self.sizes.push(analytic.len());
    }

    /// Norm-wise relative error over all checked entries together.
    pub fn overall_rel_err(&self) -> f64 {
        let (a, n): (Vec<f64>, Vec<f64>) = self.entries.iter().copied().unzip();
        relative_error(&a, &n)
    }

    /// Groups failing both `rel <= rtol` and `||a - n|| <= atol`.
    pub fn failing_groups(&self, rtol: f64, atol: f64) -> Vec<&(String, f64, f64)> {
        let mut start = 0;
        let mut out = Vec::new();
        for (g, &len) in self.groups.iter().zip(&self.sizes) {
            let diff = self.entries[start..start + len]
                .iter()
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            if g.1 > rtol && diff > atol {
                out.push(g);
            }
            start += len;
        }
        out
    }

    /// Appends another report's groups.
    pub fn merge(&mut self, other: GradReport) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
        self.groups.extend(other.groups);
        self.entries.extend(other.entries);
        self.sizes.extend(other.sizes);
    }
}

/// `||a - n|| / max(||a||, ||n||)`, or the absolute difference when both
/// gradients vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn projection(graph: &Graph, out: Var, seed: u64) -> (Var, Tensor) {
    let shape = graph.shape(out);
    let mut rng = seeded(seed ^ 0x9e37);
    let r = Tensor::from_shape_fn(IxDyn(&shape), |_| rng.random_range(-1.0..1.0));
    let rv = graph.constant(r.clone());
    let prod = graph.mul(out, rv);
    (graph.sum(prod), r)
}

fn objective(out: &Tensor, r: &Tensor) -> f64 {
    (out * r).sum()
}

fn pick(len: usize, max: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, max).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Checks gradients of `f` with respect to every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor], f: &F, cfg: &GradCheck) -> GradReport
where
    F: Fn(&Graph, &[Var]) -> Var,
{
    let graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.variable(t.clone())).collect();
    let out = f(&graph, &vars);
    let (loss, r) = projection(&graph, out, cfg.seed);
    let grads = graph.backward(loss);

    let eval = |perturbed: &[Tensor]| -> f64 {
        let g = Graph::new();
        let vs: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let o = f(&g, &vs);
        objective(&g.value(o), &r)
    };

    let mut rng = seeded(cfg.seed);
    let mut report = GradReport::default();
    for (k, input) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(input.raw_dim());
        let analytic = grads.get(vars[k]).unwrap_or(&zero);
        let idx = pick(input.len(), cfg.max_entries, &mut rng);
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        let mut work: Vec<Tensor> = inputs.to_vec();
        for &i in &idx {
            let orig = get_flat(input, i);
            set_flat(&mut work[k], i, orig + cfg.step);
            let up = eval(&work);
            set_flat(&mut work[k], i, orig - cfg.step);
            let down = eval(&work);
            set_flat(&mut work[k], i, orig);
            n.push((up - down) / (2.0 * cfg.step));
            a.push(get_flat(analytic, i));
        }
        report.push(format!("input{k}"), &a, &n);
    }
    report
}

/// How parameter entries are chosen for [`check_param_gradients`].
#[derive(Debug, Clone)]
pub enum Sampling {
    /// Up to `GradCheck::max_entries` entries from every parameter tensor,
    /// reported per tensor.
    PerTensor,
    /// `n` entries drawn uniformly over all weights, reported as one group.
    Total(usize),
}

/// Checks gradients of `f` with respect to the parameters of `store`.
/// `filter` restricts the checked names.
pub fn check_param_gradients<F>(
    store: &ParamStore,
    f: &F,
    filter: &dyn Fn(&str) -> bool,
    sampling: Sampling,
    cfg: &GradCheck,
) -> GradReport
where
    F: Fn(&Graph, &ParamStore) -> Var,
{
    let graph = Graph::new();
    let out = f(&graph, store);
    let (loss, r) = projection(&graph, out, cfg.seed);
    let grads = graph.backward(loss);
    let analytic = graph.param_grads(&grads);

    let mut work = store.clone();
    let eval_at = |work: &mut ParamStore, name: &str, i: usize, value: f64| -> f64 {
        set_flat(work.get_mut(name).unwrap(), i, value);
        let g = Graph::new();
        let o = f(&g, work);
        objective(&g.value(o), &r)
    };

    let names: Vec<String> = store.names().filter(|n| filter(n)).cloned().collect();
    let mut rng = seeded(cfg.seed);
    let mut targets: Vec<(String, usize)> = Vec::new();
    match sampling {
        Sampling::PerTensor => {
            for name in &names {
                let len = store.get(name).unwrap().len();
                for i in pick(len, cfg.max_entries, &mut rng) {
                    targets.push((name.clone(), i));
                }
            }
        }
        Sampling::Total(n) => {
            let total: usize = names.iter().map(|nm| store.get(nm).unwrap().len()).sum();
            for flat in pick(total, n, &mut rng) {
                let mut rem = flat;
                for nm in &names {
                    let len = store.get(nm).unwrap().len();
                    if rem < len {
                        targets.push((nm.clone(), rem));
                        break;
                    }
                    rem -= len;
                }
            }
        }
    }

    let mut report = GradReport::default();
    let mut group: Option<String> = None;
    let (mut a, mut n) = (Vec::new(), Vec::new());
    let per_tensor = matches!(sampling, Sampling::PerTensor);
    for (name, i) in targets {
        if per_tensor && group.as_deref() != Some(name.as_str()) {
            if let Some(g) = group.take() {
                report.push(g, &a, &n);
                a.clear();
                n.clear();
            }
            group = Some(name.clone());
        }
        let orig = get_flat(store.get(&name).unwrap(), i);
        let up = eval_at(&mut work, &name, i, orig + cfg.step);
        let down = eval_at(&mut work, &name, i, orig - cfg.step);
        set_flat(work.get_mut(&name).unwrap(), i, orig);
        n.push((up - down) / (2.0 * cfg.step));
        let ga = analytic.get(&name).map(|t| get_flat(t, i)).unwrap_or(0.0);
        a.push(ga);
    }
    let label = group.unwrap_or_else(|| "sampled".to_string());
    if !a.is_empty() {
        report.push(label, &a, &n);
    }
    report
}

/// Gradients of a block with respect to its inputs and all of its
/// parameters (per tensor), merged into one report.
pub fn check_block<F>(store: &ParamStore, inputs: &[Tensor], f: &F, cfg: &GradCheck) -> GradReport
where
    F: Fn(&Scope, &[Var]) -> Var,
{
    let wrt_inputs = |g: &Graph, vs: &[Var]| f(&Scope::root(g, store), vs);
    let mut report = check_gradients(inputs, &wrt_inputs, cfg);
    let wrt_params = |g: &Graph, st: &ParamStore| {
        let vs: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        f(&Scope::root(g, st), &vs)
    };
    report.merge(check_param_gradients(store, &wrt_params, &|_| true, Sampling::PerTensor, cfg));
    report
}

fn get_flat(t: &Tensor, i: usize) -> f64 {
    t.as_slice().expect("standard layout")[i]
}

fn set_flat(t: &mut Tensor, i: usize, v: f64) {
    t.as_slice_mut().expect("standard layout")[i] = v;
}
