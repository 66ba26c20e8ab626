//! Minimal reverse-mode automatic differentiation over `f64` arrays.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with
//! a closure computing the vector-Jacobian product. Parameters are
//! registered by name and cached, so a weight referenced at several places
//! in a forward pass is a single leaf whose gradient accumulates over all
//! uses.

use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::{s, Array2, Array4, ArrayD, ArrayView4, Axis, Ix4, IxDyn, Zip};

use crate::freqops::{bilinear_taps, Tap};

pub type Tensor = ArrayD<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<BTreeMap<String, Var>>,
}

fn to4(t: &Tensor) -> ArrayView4<'_, f64> {
    t.view()
        .into_dimensionality::<Ix4>()
        .expect("operation expects a 4-D tensor")
}

fn dyn4(a: Array4<f64>) -> Tensor {
    a.into_dyn()
}

/// Sums `grad` down to `shape` along axes where `shape` has extent 1.
fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    let mut out = grad.clone();
    for (ax, (&target, &have)) in shape.iter().zip(grad.shape()).enumerate() {
        if target == 1 && have != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

fn broadcastable(small: &[usize], big: &[usize]) -> bool {
    small.len() == big.len() && small.iter().zip(big).all(|(s, b)| s == b || *s == 1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.0].requires_grad);
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Var(id)
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var(id)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Named trainable leaf. Repeated calls with the same name return the
    /// same node.
    pub fn param(&self, name: &str, value: &Tensor) -> Var {
        if let Some(v) = self.params.borrow().get(name) {
            return *v;
        }
        let v = self.variable(value.clone());
        self.params.borrow_mut().insert(name.to_string(), v);
        v
    }

    pub fn params(&self) -> Ref<'_, BTreeMap<String, Var>> {
        self.params.borrow()
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on a tensor with {} elements", val.len());
        *val.iter().next().unwrap()
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(nodes[root.0].value.raw_dim()));
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|p| nodes[*p].requires_grad).collect();
            let parent_grads = bw(&g, &needs);
            for ((p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                if let (Some(pg), true) = (pg, need) {
                    match grads[*p].as_mut() {
                        Some(acc) => *acc += &pg,
                        None => grads[*p] = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Gradient of every registered parameter (zeros where unused).
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.params
            .borrow()
            .iter()
            .map(|(name, v)| {
                let g = grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*v).raw_dim()));
                (name.clone(), g)
            })
            .collect()
    }

    // ---- element-wise ----------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let out = &*va + &*vb;
        self.push(out, &[a, b], Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let out = &*va - &*vb;
        self.push(out, &[a, b], Box::new(|g, _| vec![Some(g.clone()), Some(-g)]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let out = &*va * &*vb;
        self.push(
            out,
            &[a, b],
            Box::new(move |g, need| {
                vec![need[0].then(|| g * &*vb), need[1].then(|| g * &*va)]
            }),
        )
    }

    /// `a + b` where `b` broadcasts along its unit axes.
    pub fn add_bcast(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(broadcastable(vb.shape(), va.shape()), "add_bcast: {:?} vs {:?}", vb.shape(), va.shape());
        let out = &*va + &*vb;
        let bshape = vb.shape().to_vec();
        self.push(
            out,
            &[a, b],
            Box::new(move |g, need| vec![need[0].then(|| g.clone()), need[1].then(|| reduce_to(g, &bshape))]),
        )
    }

    /// `a * b` where `b` broadcasts along its unit axes.
    pub fn mul_bcast(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(broadcastable(vb.shape(), va.shape()), "mul_bcast: {:?} vs {:?}", vb.shape(), va.shape());
        let out = &*va * &*vb;
        let bshape = vb.shape().to_vec();
        self.push(
            out,
            &[a, b],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g * &*vb),
                    need[1].then(|| reduce_to(&(g * &*va), &bshape)),
                ]
            }),
        )
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        let out = &*self.value(a) * k;
        self.push(out, &[a], Box::new(move |g, _| vec![Some(g * k)]))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Var {
        let va = self.value(a);
        let out = va.mapv(f);
        self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut d = va.mapv(&df);
                d *= g;
                vec![Some(d)]
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const C: f64 = 0.044_715;
        self.unary(
            a,
            |x| 0.5 * x * (1.0 + (K * (x + C * x * x * x)).tanh()),
            |x| {
                let t = (K * (x + C * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * K * (1.0 + 3.0 * C * x * x)
            },
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        fn sig(x: f64) -> f64 {
            1.0 / (1.0 + (-x).exp())
        }
        self.unary(a, sig, |x| {
            let s = sig(x);
            s * (1.0 - s)
        })
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, f64::abs, |x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    /// Clamp to `[0, 1]`; gradient passes through inside the range and is
    /// zero outside it.
    pub fn clamp_unit(&self, a: Var) -> Var {
        self.unary(a, |x| x.clamp(0.0, 1.0), |x| if (0.0..=1.0).contains(&x) { 1.0 } else { 0.0 })
    }

    /// μ-law compression `ln(1 + μx) / ln(1 + μ)` for `x >= 0`.
    pub fn mu_law(&self, a: Var, mu: f64) -> Var {
        let denom = mu.ln_1p();
        self.unary(a, move |x| (mu * x).ln_1p() / denom, move |x| mu / ((1.0 + mu * x) * denom))
    }

    pub fn sum(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = ArrayD::from_elem(IxDyn(&[]), va.sum());
        let dim = va.raw_dim();
        self.push(
            out,
            &[a],
            Box::new(move |g, _| vec![Some(Tensor::from_elem(dim.clone(), g.sum()))]),
        )
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    // ---- shape -----------------------------------------------------------

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let va = self.value(a);
        let old = va.shape().to_vec();
        let out = va
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape element count mismatch");
        self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                vec![Some(
                    g.as_standard_layout()
                        .into_owned()
                        .into_shape_with_order(IxDyn(&old))
                        .unwrap(),
                )]
            }),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.ndim();
        let mut t = va.view();
        t.swap_axes(n - 2, n - 1);
        let out = t.as_standard_layout().into_owned();
        self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut t = g.view();
                t.swap_axes(n - 2, n - 1);
                vec![Some(t.as_standard_layout().into_owned())]
            }),
        )
    }

    pub fn concat(&self, axis: usize, parts: &[Var]) -> Var {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| self.value(*p)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.push(
            out,
            parts,
            Box::new(move |g, need| {
                let mut start = 0;
                extents
                    .iter()
                    .zip(need)
                    .map(|(len, n)| {
                        let piece = n.then(|| {
                            g.slice_axis(Axis(axis), (start..start + len).into()).to_owned()
                        });
                        start += len;
                        piece
                    })
                    .collect()
            }),
        )
    }

    pub fn slice_axis(&self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let va = self.value(a);
        let out = va.slice_axis(Axis(axis), (start..start + len).into()).to_owned();
        let dim = va.raw_dim();
        self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut full = Tensor::zeros(dim.clone());
                full.slice_axis_mut(Axis(axis), (start..start + len).into()).assign(g);
                vec![Some(full)]
            }),
        )
    }

    /// Spatial window `[y0, y0+h) x [x0, x0+w)` of a 4-D map.
    pub fn crop(&self, a: Var, y0: usize, x0: usize, h: usize, w: usize) -> Var {
        let rows = self.slice_axis(a, 2, y0, h);
        self.slice_axis(rows, 3, x0, w)
    }

    // ---- reductions along the last axis ---------------------------------

    pub fn softmax_last(&self, a: Var) -> Var {
        let va = self.value(a);
        let ax = Axis(va.ndim() - 1);
        let mut out = (*va).clone();
        for mut lane in out.lanes_mut(ax) {
            let m = lane.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            lane.mapv_inplace(|v| (v - m).exp());
            let s = lane.sum();
            lane /= s;
        }
        let y = Rc::new(out.clone());
        self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut gi = g * &*y;
                let dots = gi.sum_axis(ax).insert_axis(ax);
                gi -= &(&*y * &dots);
                vec![Some(gi)]
            }),
        )
    }

    /// `x / sqrt(sum(x^2) + eps)` along the last axis.
    pub fn l2_normalize_last(&self, a: Var, eps: f64) -> Var {
        let va = self.value(a);
        let ax = Axis(va.ndim() - 1);
        let norm = va.mapv(|v| v * v).sum_axis(ax).mapv(|s| (s + eps).sqrt()).insert_axis(ax);
        let out = &*va / &norm;
        let y = Rc::new(out.clone());
        self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let dots = (g * &*y).sum_axis(ax).insert_axis(ax);
                let gi = (g - &(&*y * &dots)) / &norm;
                vec![Some(gi)]
            }),
        )
    }

    /// Batched matrix product over the last two axes of 4-D tensors.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (a4, b4) = (to4(&va), to4(&vb));
        let (n0, n1, m, k) = a4.dim();
        let (m0, m1, k2, n) = b4.dim();
        assert!(n0 == m0 && n1 == m1 && k == k2, "matmul shape mismatch");
        let mut out = Array4::zeros((n0, n1, m, n));
        for i in 0..n0 {
            for j in 0..n1 {
                let prod = a4.slice(s![i, j, .., ..]).dot(&b4.slice(s![i, j, .., ..]));
                out.slice_mut(s![i, j, .., ..]).assign(&prod);
            }
        }
        self.push(
            dyn4(out),
            &[a, b],
            Box::new(move |g, need| {
                let g4 = to4(g);
                let (a4, b4) = (to4(&va), to4(&vb));
                let mut ga = need[0].then(|| Array4::<f64>::zeros(a4.raw_dim()));
                let mut gb = need[1].then(|| Array4::<f64>::zeros(b4.raw_dim()));
                for i in 0..n0 {
                    for j in 0..n1 {
                        let gs = g4.slice(s![i, j, .., ..]);
                        if let Some(ga) = ga.as_mut() {
                            ga.slice_mut(s![i, j, .., ..]).assign(&gs.dot(&b4.slice(s![i, j, .., ..]).t()));
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb.slice_mut(s![i, j, .., ..]).assign(&a4.slice(s![i, j, .., ..]).t().dot(&gs));
                        }
                    }
                }
                vec![ga.map(dyn4), gb.map(dyn4)]
            }),
        )
    }

    // ---- image operators ---------------------------------------------------

    /// 2-D cross-correlation with zero padding. `w` is `(out, in, kh, kw)`;
    /// `bias`, if given, has shape `(1, out, 1, 1)`.
    pub fn conv2d(&self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let geo = ConvGeom::new(to4(&vx).dim(), to4(&vw).dim(), stride, pad);
        let cols = Rc::new(im2col(&to4(&vx), &geo));
        let w2 = vw
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((geo.c_out, geo.k_len()))
            .unwrap();
        let out2 = w2.dot(&*cols);
        let mut out = out2
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((geo.c_out, geo.b, geo.ho, geo.wo))
            .unwrap()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned()
            .into_dyn();
        let mut parents = vec![x, w];
        if let Some(b) = bias {
            let vb = self.value(b);
            assert_eq!(vb.shape(), &[1, geo.c_out, 1, 1], "conv bias shape");
            out += &*vb;
            parents.push(b);
        }
        let w2 = Rc::new(w2);
        self.push(
            out,
            &parents,
            Box::new(move |g, need| {
                let g2 = to4(g)
                    .permuted_axes([1, 0, 2, 3])
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((geo.c_out, geo.b * geo.ho * geo.wo))
                    .unwrap();
                let gx = need[0].then(|| {
                    let dcols = w2.t().dot(&g2);
                    col2im(&dcols, &geo).into_dyn()
                });
                let gw = need[1].then(|| {
                    g2.dot(&cols.t())
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order(IxDyn(&[geo.c_out, geo.c_in, geo.kh, geo.kw]))
                        .unwrap()
                });
                let mut grads = vec![gx, gw];
                if need.len() == 3 {
                    let gb = g2.sum_axis(Axis(1)).into_shape_with_order(IxDyn(&[1, geo.c_out, 1, 1])).unwrap();
                    grads.push(Some(gb));
                }
                grads
            }),
        )
    }

    pub fn avg_pool(&self, x: Var, k: usize) -> Var {
        let vx = self.value(x);
        let out = crate::freqops::lowpass_avg(&to4(&vx).to_owned(), k)
            .expect("avg_pool: indivisible dims")
            .into_dyn();
        let dim = to4(&vx).dim();
        self.push(
            out,
            &[x],
            Box::new(move |g, _| {
                let g4 = to4(g);
                let inv = 1.0 / (k * k) as f64;
                let mut gx = Array4::<f64>::zeros(dim);
                for ((n, c, y, xx), v) in gx.indexed_iter_mut() {
                    *v = g4[[n, c, y / k, xx / k]] * inv;
                }
                vec![Some(gx.into_dyn())]
            }),
        )
    }

    pub fn upsample_bilinear(&self, x: Var, scale: usize) -> Var {
        if scale == 1 {
            return x;
        }
        let vx = self.value(x);
        let (b, c, h, w) = to4(&vx).dim();
        let ty = bilinear_taps(h, scale);
        let tx = bilinear_taps(w, scale);
        let out = bilinear_apply(&to4(&vx), &ty, &tx).into_dyn();
        self.push(
            out,
            &[x],
            Box::new(move |g, _| vec![Some(bilinear_adjoint(&to4(g), (b, c, h, w), &ty, &tx).into_dyn())]),
        )
    }

    /// Haar analysis packed along channels as `[ll, lh, hl, hh]`.
    pub fn dwt(&self, x: Var) -> Var {
        let vx = self.value(x);
        let out = haar_forward(&to4(&vx)).into_dyn();
        self.push(out, &[x], Box::new(|g, _| vec![Some(haar_inverse(&to4(g)).into_dyn())]))
    }

    /// Inverse of [`Graph::dwt`]; input channels packed as `[ll, lh, hl, hh]`.
    pub fn idwt(&self, x: Var) -> Var {
        let vx = self.value(x);
        let out = haar_inverse(&to4(&vx)).into_dyn();
        self.push(out, &[x], Box::new(|g, _| vec![Some(haar_forward(&to4(g)).into_dyn())]))
    }

    /// Sub-pixel rearrangement `(B, C*r*r, H, W) -> (B, C, H*r, W*r)`.
    pub fn pixel_shuffle(&self, x: Var, r: usize) -> Var {
        let vx = self.value(x);
        let (b, cr, h, w) = to4(&vx).dim();
        assert_eq!(cr % (r * r), 0, "pixel_shuffle channels not divisible by r^2");
        let c = cr / (r * r);
        let shuffled = vx
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&[b, c, r, r, h, w]))
            .unwrap()
            .permuted_axes(IxDyn(&[0, 1, 4, 2, 5, 3]))
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&[b, c, h * r, w * r]))
            .unwrap();
        self.push(
            shuffled,
            &[x],
            Box::new(move |g, _| {
                let back = g
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&[b, c, h, r, w, r]))
                    .unwrap()
                    .permuted_axes(IxDyn(&[0, 1, 3, 5, 2, 4]))
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&[b, cr, h, w]))
                    .unwrap();
                vec![Some(back)]
            }),
        )
    }

    /// Per-sample, per-channel standardization over spatial positions.
    pub fn channel_norm(&self, x: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let x4 = to4(&vx);
        let (b, c, h, w) = x4.dim();
        let n = (h * w) as f64;
        let mut y = Array4::<f64>::zeros((b, c, h, w));
        let mut inv_std = Array2::<f64>::zeros((b, c));
        for i in 0..b {
            for ch in 0..c {
                let plane = x4.slice(s![i, ch, .., ..]);
                let mean = plane.sum() / n;
                let var = plane.fold(0.0, |acc, v| acc + (v - mean) * (v - mean)) / n;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[[i, ch]] = is;
                Zip::from(y.slice_mut(s![i, ch, .., ..]))
                    .and(&plane)
                    .for_each(|o, v| *o = (v - mean) * is);
            }
        }
        let y = Rc::new(y);
        let out = (*y).clone().into_dyn();
        self.push(
            out,
            &[x],
            Box::new(move |g, _| {
                let g4 = to4(g);
                let mut gx = Array4::<f64>::zeros((b, c, h, w));
                for i in 0..b {
                    for ch in 0..c {
                        let gp = g4.slice(s![i, ch, .., ..]);
                        let yp = y.slice(s![i, ch, .., ..]);
                        let gm = gp.sum() / n;
                        let gym = Zip::from(&gp).and(&yp).fold(0.0, |acc, a, b| acc + a * b) / n;
                        let is = inv_std[[i, ch]];
                        Zip::from(gx.slice_mut(s![i, ch, .., ..]))
                            .and(&gp)
                            .and(&yp)
                            .for_each(|o, gv, yv| *o = is * (gv - gm - yv * gym));
                    }
                }
                vec![Some(gx.into_dyn())]
            }),
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    b: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(x: (usize, usize, usize, usize), w: (usize, usize, usize, usize), stride: usize, pad: usize) -> Self {
        let (b, c_in, h, wd) = x;
        let (c_out, wc_in, kh, kw) = w;
        assert_eq!(c_in, wc_in, "conv2d: input has {c_in} channels, kernel expects {wc_in}");
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d: kernel larger than padded input");
        ConvGeom {
            b,
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        }
    }

    fn k_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

fn im2col(x: &ArrayView4<f64>, g: &ConvGeom) -> Array2<f64> {
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    let ncol = g.b * g.ho * g.wo;
    let mut cols = Array2::<f64>::zeros((g.k_len(), ncol));
    let cs = cols.as_slice_mut().unwrap();
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cs[row * ncol..(row + 1) * ncol];
                for n in 0..g.b {
                    let plane = &xs[(n * g.c_in + ci) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..][..g.w];
                        let base = (n * g.ho + oy) * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[base + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, g: &ConvGeom) -> Array4<f64> {
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().unwrap();
    let ncol = g.b * g.ho * g.wo;
    let mut x = Array4::<f64>::zeros((g.b, g.c_in, g.h, g.w));
    let xs = x.as_slice_mut().unwrap();
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cs[row * ncol..(row + 1) * ncol];
                for n in 0..g.b {
                    let plane = &mut xs[(n * g.c_in + ci) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        let base = (n * g.ho + oy) * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn bilinear_apply(x: &ArrayView4<f64>, ty: &[Tap], tx: &[Tap]) -> Array4<f64> {
    let (b, c, _, _) = x.dim();
    let mut out = Array4::zeros((b, c, ty.len(), tx.len()));
    for ((n, ch, y, xx), o) in out.indexed_iter_mut() {
        let (y0, y1, wy0, wy1) = ty[y];
        let (x0, x1, wx0, wx1) = tx[xx];
        let top = wx0 * x[[n, ch, y0, x0]] + wx1 * x[[n, ch, y0, x1]];
        let bot = wx0 * x[[n, ch, y1, x0]] + wx1 * x[[n, ch, y1, x1]];
        *o = wy0 * top + wy1 * bot;
    }
    out
}

fn bilinear_adjoint(g: &ArrayView4<f64>, dim: (usize, usize, usize, usize), ty: &[Tap], tx: &[Tap]) -> Array4<f64> {
    let mut gx = Array4::zeros(dim);
    for ((n, ch, y, xx), v) in g.indexed_iter() {
        let (y0, y1, wy0, wy1) = ty[y];
        let (x0, x1, wx0, wx1) = tx[xx];
        gx[[n, ch, y0, x0]] += wy0 * wx0 * v;
        gx[[n, ch, y0, x1]] += wy0 * wx1 * v;
        gx[[n, ch, y1, x0]] += wy1 * wx0 * v;
        gx[[n, ch, y1, x1]] += wy1 * wx1 * v;
    }
    gx
}

fn haar_forward(x: &ArrayView4<f64>) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "dwt needs even dims, got {h}x{w}");
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Array4::zeros((b, 4 * c, h2, w2));
    for n in 0..b {
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let a = x[[n, ch, 2 * y, 2 * xx]];
                    let bb = x[[n, ch, 2 * y, 2 * xx + 1]];
                    let cc = x[[n, ch, 2 * y + 1, 2 * xx]];
                    let d = x[[n, ch, 2 * y + 1, 2 * xx + 1]];
                    out[[n, ch, y, xx]] = 0.5 * (a + bb + cc + d);
                    out[[n, c + ch, y, xx]] = 0.5 * (a + bb - cc - d);
                    out[[n, 2 * c + ch, y, xx]] = 0.5 * (a - bb + cc - d);
                    out[[n, 3 * c + ch, y, xx]] = 0.5 * (a - bb - cc + d);
                }
            }
        }
    }
    out
}

fn haar_inverse(x: &ArrayView4<f64>) -> Array4<f64> {
    let (b, c4, h, w) = x.dim();
    assert_eq!(c4 % 4, 0, "idwt expects 4 packed bands");
    let c = c4 / 4;
    let mut out = Array4::zeros((b, c, 2 * h, 2 * w));
    for n in 0..b {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let ll = x[[n, ch, y, xx]];
                    let lh = x[[n, c + ch, y, xx]];
                    let hl = x[[n, 2 * c + ch, y, xx]];
                    let hh = x[[n, 3 * c + ch, y, xx]];
                    out[[n, ch, 2 * y, 2 * xx]] = 0.5 * (ll + hl + lh + hh);
                    out[[n, ch, 2 * y, 2 * xx + 1]] = 0.5 * (ll - hl + lh - hh);
                    out[[n, ch, 2 * y + 1, 2 * xx]] = 0.5 * (ll + hl - lh - hh);
                    out[[n, ch, 2 * y + 1, 2 * xx + 1]] = 0.5 * (ll - hl - lh + hh);
                }
            }
        }
    }
    out
}
