//! Oracles and measurements shared by the numerics tests and the acceptance run.

use std::f64::consts::PI;
use std::sync::Arc;

use lenscoder::grid::{centered_coord, linear_convolve, ComplexGrid, ConvPlan, Fft2Plan, RealGrid, Resizer, C64};
use lenscoder::learn::{BatchNorm1d, Classifier, ClassifierChoice, Mode, NodeId, PsfGraph, Tape, Value};
use lenscoder::optics::{blas_transfer, propagate, propagate_with, spherical_source, PropagationPlan, PsfModel, SourceSpec};
use lenscoder::slm::{MaskRaster, SlmGeometry};

use super::{dot, max_abs_diff, random_complex, random_grid, uniform};

/// Centered crop of the full linear convolution, straight from the definition.
pub fn brute_convolve(img: &RealGrid, k: &RealGrid) -> Vec<f64> {
    let (h, w) = (img.height, img.width);
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for a in 0..h {
                for b in 0..w {
                    let ki = (i + h / 2) as isize - a as isize;
                    let kj = (j + w / 2) as isize - b as isize;
                    if (0..h as isize).contains(&ki) && (0..w as isize).contains(&kj) {
                        s += img.get(0, a, b) * k.get(0, ki as usize, kj as usize);
                    }
                }
            }
            out[i * w + j] = s;
        }
    }
    out
}

/// Worst FFT-vs-direct convolution error over every size up to `n x n`.
pub fn convolution_error_up_to(n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for h in 1..=n {
        for w in 1..=n {
            let seed = (h * 10 + w) as u64;
            let img = random_grid(h, w, 1, seed);
            let k = random_grid(h, w, 1, seed + 1000);
            let fast = linear_convolve(&img, &k).unwrap();
            worst = worst.max(max_abs_diff(&fast.data, &brute_convolve(&img, &k)));
        }
    }
    worst
}

/// First Rayleigh–Sommerfeld solution evaluated by direct summation over
/// the source samples, at the output pixels `rows x cols` of the grid.
pub fn rayleigh_sommerfeld(field: &ComplexGrid, z: f64, lam: f64, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<C64> {
    let p = field.pitch_m;
    let k = 2.0 * PI / lam;
    let coord = |i: usize, n: usize| centered_coord(i, n, p);
    let sources: Vec<(f64, f64, C64)> = (0..field.height)
        .flat_map(|i| (0..field.width).map(move |j| (i, j)))
        .filter_map(|(i, j)| {
            let u = field.get(i, j);
            (u.norm() > 0.0).then(|| (coord(i, field.height), coord(j, field.width), u))
        })
        .collect();
    let mut out = Vec::new();
    for i in rows {
        for j in cols.clone() {
            let (y, x) = (coord(i, field.height), coord(j, field.width));
            let mut s = C64::new(0.0, 0.0);
            for &(ys, xs, u) in &sources {
                let r = ((y - ys).powi(2) + (x - xs).powi(2) + z * z).sqrt();
                let kernel = C64::new(1.0 / r, -k) * (z / (2.0 * PI * r * r)) * C64::from_polar(1.0, k * r);
                s += u * kernel * p * p;
            }
            out.push(s);
        }
    }
    out
}

pub fn square_aperture(n: usize, side: usize, pitch: f64) -> ComplexGrid {
    let mut g = ComplexGrid::zeros(n, n, pitch);
    let lo = n / 2 - side / 2;
    for i in lo..lo + side {
        for j in lo..lo + side {
            g.data[i * n + j] = C64::new(1.0, 0.0);
        }
    }
    g
}

/// Peak-relative intensity agreement on the central 32x32 window.
pub fn window_agreement(blas: &ComplexGrid, oracle: &[C64]) -> f64 {
    let n = blas.height;
    let lo = n / 2 - 16;
    let ia: Vec<f64> = (lo..lo + 32)
        .flat_map(|i| (lo..lo + 32).map(move |j| (i, j)))
        .map(|(i, j)| blas.get(i, j).norm_sqr())
        .collect();
    let ir: Vec<f64> = oracle.iter().map(|u| u.norm_sqr()).collect();
    let (pk, peak) = ir.iter().enumerate().fold((0, 0.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    (ia[pk] - ir[pk]).abs() / peak
}

/// Propagated square aperture against the direct integral.
pub fn aperture_oracle_error() -> f64 {
    let (n, pitch, lam, z) = (128, 2e-6, 0.5e-6, 0.5e-3);
    let field = square_aperture(n, 16, pitch);
    let plan = PropagationPlan::new(n, n, pitch, z, lam).unwrap();
    let u2 = propagate(&field, &plan).unwrap();
    let lo = n / 2 - 16;
    let oracle = rayleigh_sommerfeld(&field, z, lam, lo..lo + 32, lo..lo + 32);
    window_agreement(&u2, &oracle)
}

/// PSF of an open square mask lit by a point source against the direct integral.
pub fn psf_oracle_error() -> f64 {
    let (n, pitch, lam, d1, d2) = (128, 2e-6, 0.5e-6, 5e-3, 0.5e-3);
    let mask = square_aperture(n, 16, pitch);
    let model = PsfModel::new(n, n, pitch, d1, d2, &[lam]).unwrap();
    let intensity = model.channel_intensity(0, &mask).unwrap();
    let src = spherical_source(n, n, pitch, &SourceSpec::new(d1, lam).unwrap());
    let u1 = mask.hadamard(&src).unwrap();
    let lo = n / 2 - 16;
    let oracle = rayleigh_sommerfeld(&u1, d2, lam, lo..lo + 32, lo..lo + 32);
    let as_field = ComplexGrid::from_vec(
        n,
        n,
        pitch,
        intensity.data.iter().map(|&v| C64::new(v.sqrt(), 0.0)).collect(),
    )
    .unwrap();
    window_agreement(&as_field, &oracle)
}

/// Forward then backward propagation against projection onto the pass band.
pub fn blas_round_trip_error() -> f64 {
    let (h, w, pitch, lam, d) = (48, 40, 4e-6, 0.6e-6, 2e-3);
    let f = ComplexGrid::from_vec(h, w, pitch, random_complex(h * w, 9)).unwrap();
    let fwd = PropagationPlan::new(h, w, pitch, d, lam).unwrap();
    let back = PropagationPlan::new(h, w, pitch, -d, lam).unwrap();
    let rt = propagate(&propagate(&f, &fwd).unwrap(), &back).unwrap();
    let band = blas_transfer(&fwd);
    let indicator = ComplexGrid {
        data: band.data.iter().map(|z| C64::new(z.norm_sqr(), 0.0)).collect(),
        ..band.clone()
    };
    let proj = propagate_with(&f, &indicator, &Fft2Plan::new(h, w));
    rt.data
        .iter()
        .zip(&proj.data)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

pub fn flatten(v: &Value) -> Vec<f64> {
    match v {
        Value::Real(x) => x.clone(),
        Value::Complex(x) => x.iter().flat_map(|z| [z.re, z.im]).collect(),
    }
}

pub fn unflatten_like(template: &Value, flat: &[f64]) -> Value {
    match template {
        Value::Real(_) => Value::Real(flat.to_vec()),
        Value::Complex(_) => Value::Complex(flat.chunks(2).map(|p| C64::new(p[0], p[1])).collect()),
    }
}

/// Check `<J dx, dy> = <dx, J^T dy>` for the op built by `build`, with `J dx`
/// from central differences (exact for linear ops up to rounding).
pub fn adjoint_check(x0: Value, build: impl Fn(&mut Tape, NodeId) -> NodeId, seed: u64) -> f64 {
    let n = flatten(&x0).len();
    // offset so the direction is never a rescaled copy of the input
    let dx = uniform(n, -1.0, 1.0, seed + 7919);
    let eval = |x: &Value| -> (Tape, NodeId, NodeId) {
        let mut t = Tape::new();
        let xi = match x {
            Value::Real(v) => t.leaf(v.clone()),
            v => t.constant(v.clone()),
        };
        let y = build(&mut t, xi);
        (t, xi, y)
    };
    let (tape, xi, y) = eval(&x0);
    let ny = flatten(tape.value(y)).len();
    let dy = uniform(ny, -1.0, 1.0, seed + 1);
    let grads = tape.backward(y, unflatten_like(tape.value(y), &dy));
    let jt_dy = grads.get(xi).map(flatten).unwrap_or_else(|| vec![0.0; n]);

    let h = 1e-6;
    let base = flatten(&x0);
    let shifted = |s: f64| {
        let v: Vec<f64> = base.iter().zip(&dx).map(|(a, d)| a + s * d).collect();
        let (t, _, y) = eval(&unflatten_like(&x0, &v));
        flatten(t.value(y))
    };
    let (p, m) = (shifted(h), shifted(-h));
    let j_dx: Vec<f64> = p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let (lhs, rhs) = (dot(&j_dx, &dy), dot(&dx, &jt_dy));
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12)
}

pub fn toy_raster() -> Arc<MaskRaster> {
    let geom = SlmGeometry {
        n_rows: 3,
        n_cols: 2,
        subpixel_size: (30e-6, 40e-6),
        pixel_pitch: (40e-6, 60e-6),
    };
    Arc::new(MaskRaster::new(&geom, 16, 20, 10e-6).unwrap())
}

/// Relative inner-product mismatch of every tape primitive.
pub fn primitive_adjoint_errors() -> Vec<(&'static str, f64)> {
    let (h, w) = (6, 5);
    let hw = h * w;
    let fft = Arc::new(Fft2Plan::new(h, w));
    let cplx = Value::Complex(random_complex(hw, 3));
    let real = |seed| Value::Real(uniform(hw, -1.0, 1.0, seed));
    let factor = Arc::new(random_complex(hw, 5));
    let mut checks: Vec<(&str, f64)> = Vec::new();

    checks.push(("sigmoid", adjoint_check(real(1), |t, x| t.sigmoid(x), 10)));
    let raster = toy_raster();
    let r2 = raster.clone();
    checks.push((
        "rasterize",
        adjoint_check(Value::Real(uniform(6, 0.0, 1.0, 2)), move |t, x| t.rasterize(x, r2.clone(), Some(1)), 11),
    ));
    let f2 = factor.clone();
    checks.push(("mul_const", adjoint_check(cplx.clone(), move |t, x| t.mul_const(x, f2.clone()), 12)));
    let p2 = fft.clone();
    checks.push(("fft2", adjoint_check(cplx.clone(), move |t, x| t.fft2(x, p2.clone()), 13)));
    let p3 = fft.clone();
    checks.push(("ifft2", adjoint_check(cplx.clone(), move |t, x| t.ifft2(x, p3.clone()), 14)));
    checks.push(("squared_modulus", adjoint_check(cplx.clone(), |t, x| t.squared_modulus(x), 15)));
    checks.push((
        "normalize_sum",
        adjoint_check(Value::Real(uniform(hw, 0.5, 2.0, 6)), |t, x| t.normalize_sum(x, 0).unwrap(), 16),
    ));
    checks.push((
        "mean",
        adjoint_check(real(7), |t, x| {
            let s = t.sigmoid(x);
            t.mean(&[x, s])
        }, 17),
    ));
    let conv = Arc::new(ConvPlan::new(h, w));
    let scenes = vec![uniform(hw, 0.0, 1.0, 8), uniform(hw, 0.0, 1.0, 9)];
    checks.push((
        "conv_batch",
        adjoint_check(real(18), move |t, x| t.conv_batch(x, &scenes, conv.clone()).unwrap(), 18),
    ));
    let rs = Arc::new(Resizer::new(h, w, 3, 2));
    checks.push((
        "resize_batch",
        adjoint_check(Value::Real(uniform(2 * hw, -1.0, 1.0, 19)), move |t, x| t.resize_batch(x, rs.clone(), 2).unwrap(), 19),
    ));
    checks.push(("add_const", adjoint_check(real(20), |t, x| t.add_const(x, &[0.5; 30]), 20)));
    let wts = uniform(4 * 3, -1.0, 1.0, 21);
    checks.push((
        "affine",
        adjoint_check(Value::Real(uniform(5 * 3, -1.0, 1.0, 22)), move |t, x| {
            let wi = t.leaf(wts.clone());
            let bi = t.leaf(vec![0.1, 0.2, 0.3, 0.4]);
            t.affine(x, wi, bi, 5, 3, 4).unwrap()
        }, 22),
    ));
    let xa = uniform(5 * 3, -1.0, 1.0, 23);
    checks.push((
        "affine_weight",
        adjoint_check(Value::Real(uniform(12, -1.0, 1.0, 24)), move |t, wv| {
            let x = t.constant(Value::Real(xa.clone()));
            let bi = t.leaf(vec![0.0; 4]);
            t.affine(x, wv, bi, 5, 3, 4).unwrap()
        }, 24),
    ));
    checks.push((
        "batch_norm",
        adjoint_check(Value::Real(uniform(6 * 4, -2.0, 2.0, 25)), |t, x| {
            let g = t.leaf(vec![1.5, 0.5, 1.0, 2.0]);
            let b = t.leaf(vec![0.1; 4]);
            t.batch_norm(x, g, b, 6, 4, 1e-5).0
        }, 25),
    ));
    checks.push((
        "batch_norm_eval",
        adjoint_check(Value::Real(uniform(6 * 4, -2.0, 2.0, 26)), |t, x| {
            let g = t.leaf(vec![1.5, 0.5, 1.0, 2.0]);
            let b = t.leaf(vec![0.1; 4]);
            t.batch_norm_eval(x, g, b, 4, &[0.1, 0.2, 0.3, 0.4], &[1.0, 2.0, 0.5, 1.5], 1e-5)
        }, 26),
    ));
    // keep inputs away from the kink
    let relu_in: Vec<f64> = uniform(hw, 0.1, 1.0, 27).iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -v }).collect();
    checks.push(("relu", adjoint_check(Value::Real(relu_in), |t, x| t.relu(x), 27)));
    checks.push((
        "softmax_ce",
        adjoint_check(Value::Real(uniform(3 * 10, -2.0, 2.0, 28)), |t, x| t.softmax_ce(x, &[1, 7, 3], 10).unwrap(), 28),
    ));

    checks
}

pub fn toy_model() -> (PsfModel, MaskRaster) {
    let geom = SlmGeometry {
        n_rows: 2,
        n_cols: 3,
        subpixel_size: (30e-6, 40e-6),
        pixel_pitch: (50e-6, 60e-6),
    };
    let model = PsfModel::new(16, 20, 10e-6, 0.4, 1e-3, &[500e-9, 600e-9]).unwrap();
    let raster = MaskRaster::new(&geom, 16, 20, 10e-6).unwrap();
    (model, raster)
}

/// theta -> PSF -> sensor -> embedding, returning the embedding node.
pub fn record_optics(tape: &mut Tape, graph: &PsfGraph, theta: NodeId, scenes: &[Vec<f64>]) -> NodeId {
    let psf = graph.record_gray(tape, theta).unwrap();
    let conv = Arc::new(ConvPlan::new(16, 20));
    let y = tape.conv_batch(psf, scenes, conv).unwrap();
    tape.resize_batch(y, Arc::new(Resizer::new(16, 20, 4, 5)), scenes.len()).unwrap()
}

pub fn rel_err(fd: &[f64], ad: &[f64]) -> f64 {
    let scale = ad.iter().map(|v| v.abs()).fold(0.0, f64::max);
    max_abs_diff(fd, ad) / scale
}

/// Relative error of the analytic loss gradient against central differences
/// through optics, batch norm, ReLU, the FCNN head and cross-entropy, for
/// the SLM weights and the batch-norm scale.
pub fn pipeline_gradient_errors() -> (f64, f64) {
    let (model, raster) = toy_model();
    let graph = PsfGraph::new(&model, raster);
    let scenes: Vec<Vec<f64>> = (0..4).map(|s| uniform(320, 0.0, 1.0, 10 + s)).collect();
    let labels = [3u8, 1, 4, 1];
    let noise = uniform(4 * 20, -1e-4, 1e-4, 20);
    let theta0 = uniform(6, -1.0, 1.0, 21);
    let mut r = super::rng(22);
    let head = Classifier::new(ClassifierChoice::Fcnn800, 20, &mut r);
    let front = BatchNorm1d::new(20);

    let run = |theta: &[f64]| -> (Tape, NodeId, NodeId, Vec<NodeId>) {
        let mut t = Tape::new();
        let th = t.leaf(theta.to_vec());
        let e = record_optics(&mut t, &graph, th, &scenes);
        let e = t.add_const(e, &noise);
        let mut bn = front.clone();
        let (x, front_leaves) = bn.record(&mut t, e, 4, Mode::Train);
        let mut leaves = front_leaves.to_vec();
        let x = t.relu(x);
        let mut c = head.clone();
        let (s, p) = c.record(&mut t, x, 4, Mode::Train).unwrap();
        leaves.extend(p);
        let loss = t.softmax_ce(s, &labels, 10).unwrap();
        (t, th, loss, leaves)
    };
    let (tape, th, loss, leaves) = run(&theta0);
    let grads = tape.backward(loss, Value::Real(vec![1.0]));
    let ad = grads.real(th, 6);

    let h = 1e-5;
    let fd: Vec<f64> = (0..6)
        .map(|k| {
            let mut p = theta0.clone();
            let mut m = theta0.clone();
            p[k] += h;
            m[k] -= h;
            (run(&p).0.scalar(run(&p).2) - run(&m).0.scalar(run(&m).2)) / (2.0 * h)
        })
        .collect();

    // batch-norm scale of the front layer
    let gamma_ad = grads.real(leaves[0], 20);
    let fd_gamma: Vec<f64> = (0..4)
        .map(|f| {
            let eval = |delta: f64| {
                let mut t = Tape::new();
                let th = t.leaf(theta0.clone());
                let e = record_optics(&mut t, &graph, th, &scenes);
                let e = t.add_const(e, &noise);
                let mut bn = front.clone();
                bn.gamma[f] += delta;
                let (x, _) = bn.record(&mut t, e, 4, Mode::Train);
                let x = t.relu(x);
                let mut c = head.clone();
                let (s, _) = c.record(&mut t, x, 4, Mode::Train).unwrap();
                let l = t.softmax_ce(s, &labels, 10).unwrap();
                t.scalar(l)
            };
            (eval(h) - eval(-h)) / (2.0 * h)
        })
        .collect();
    (rel_err(&fd, &ad), rel_err(&fd_gamma, &gamma_ad[..4]))
}
