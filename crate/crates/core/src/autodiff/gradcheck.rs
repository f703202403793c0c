//! Central finite-difference checking of tape gradients.

use std::marker::PhantomData;

use super::tape::{Tape, Var};
use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn scalar_output(tape: &Tape<'_, f64>, out: Var) -> Result<f64> {
    if tape.value(out).len() != 1 {
        return Err(Error::dim(format!(
            "gradient check needs a scalar function, got shape {:?}",
            tape.shape(out)
        )));
    }
    Ok(tape.scalar(out))
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// central differences with step `h`; returns the largest relative error.
pub fn grad_check<'s, F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'s, f64>, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let v = tape.input(x, true);
        let out = f(&mut tape, v)?;
        scalar_output(&tape, out)?;
        tape.backward(out)?.get_or_zeros(v, x.numel())
    };
    let eval = |probe: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.input(probe, false);
        let out = f(&mut tape, v)?;
        scalar_output(&tape, out)
    };
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// The store under test, lent to the function of [`grad_check_params`] for
/// one evaluation. `'env` is the lifetime of everything else the function
/// borrows, which therefore outlives each evaluation.
#[derive(Clone, Copy)]
pub struct Probed<'p, 'env: 'p> {
    pub store: &'p ParamStore<f64>,
    _env: PhantomData<&'env ()>,
}

/// Finite-difference check of every parameter of `store` under the scalar
/// function `f`. Parameters with more than `max_per_param` elements are
/// checked on an evenly strided subset. Returns the largest relative error
/// and the parameter it occurred in.
pub fn grad_check_params<'env, F>(
    store: &mut ParamStore<f64>,
    f: F,
    h: f64,
    max_per_param: usize,
) -> Result<(f64, String)>
where
    F: for<'p> Fn(&mut Tape<'p, f64>, Probed<'p, 'env>) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let out = f(&mut tape, Probed { store: &*store, _env: PhantomData })?;
        scalar_output(&tape, out)?;
        let grads = tape.backward(out)?;
        grads
            .param_grads(store)
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| vec![0.0; store.get(ParamId(i)).numel()]))
            .collect()
    };
    let mut worst = (0.0_f64, String::new());
    for p in 0..store.len() {
        let id = ParamId(p);
        let n = store.get(id).numel();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let analytic = analytic[p][i];
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let up = eval_store(store, &f)?;
            store.get_mut(id).data_mut()[i] = orig - h;
            let down = eval_store(store, &f)?;
            store.get_mut(id).data_mut()[i] = orig;
            let err = relative_error(analytic, (up - down) / (2.0 * h));
            if err > worst.0 {
                worst = (err, store.name(id).to_string());
            }
        }
    }
    Ok(worst)
}

fn eval_store<'env, F>(store: &ParamStore<f64>, f: &F) -> Result<f64>
where
    F: for<'p> Fn(&mut Tape<'p, f64>, Probed<'p, 'env>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, Probed { store, _env: PhantomData })?;
    scalar_output(&tape, out)
}


/// One line of a gradient-check report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

fn uniform(rng: &mut crate::rng::Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    use rand::Rng as _;
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `[lo, hi]` bounded away from zero by `gap`, random sign.
fn away_from_zero(rng: &mut crate::rng::Rng, shape: &[usize], gap: f64, hi: f64) -> Tensor<f64> {
    use rand::Rng as _;
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// `sum(w ⊙ y)` with a fixed random `w`, so every output element matters.
fn project(tape: &mut Tape<'_, f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = tape.input(w, false);
    let p = tape.mul(y, wv)?;
    tape.sum(p)
}

/// Finite-difference check of every differentiable tape op on random
/// tie-free 64-bit inputs.
pub fn op_suite(seed: u64, h: f64) -> Result<Vec<CheckResult>> {
    use super::tape::{BinaryOp, UnaryOp};
    let mut rng = crate::rng::seeded(seed);
    let mut out = Vec::new();
    let mut record = |name: &str, err: f64| {
        out.push(CheckResult {
            name: name.to_string(),
            max_rel_error: err,
        })
    };

    // matmul: gradient of sum(A·B) w.r.t. A, and of a projection w.r.t. both
    let a = uniform(&mut rng, &[3, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[3, 3], -1.0, 1.0);
    let e1 = grad_check(
        |t, x| {
            let bv = t.input(&b, false);
            let y = t.matmul(x, bv)?;
            t.sum(y)
        },
        &a,
        h,
    )?;
    let w = uniform(&mut rng, &[3, 3], -1.0, 1.0);
    let e2 = grad_check(
        |t, x| {
            let av = t.input(&a, false);
            let y = t.matmul(av, x)?;
            project(t, y, &w)
        },
        &b,
        h,
    )?;
    record("matmul", e1.max(e2));

    // binary ops, both operand positions, plain and broadcast
    let w = uniform(&mut rng, &[4, 5], -1.0, 1.0);
    for (name, kind) in [
        ("add", BinaryOp::Add),
        ("sub", BinaryOp::Sub),
        ("mul", BinaryOp::Mul),
        ("div", BinaryOp::Div),
        ("min", BinaryOp::Min),
    ] {
        let lhs = away_from_zero(&mut rng, &[4, 5], 0.5, 2.0);
        let mut rhs = away_from_zero(&mut rng, &[4, 5], 0.5, 2.0);
        let row = away_from_zero(&mut rng, &[5], 0.5, 2.0);
        if kind == BinaryOp::Min {
            // keep operands apart so no element sits on a tie
            for (r, l) in rhs.data_mut().iter_mut().zip(lhs.data()) {
                if (*r - l).abs() < 0.1 {
                    *r = l + 0.3;
                }
            }
        }
        let e_left = grad_check(
            |t, x| {
                let r = t.input(&rhs, false);
                let y = t.binary(kind, x, r)?;
                project(t, y, &w)
            },
            &lhs,
            h,
        )?;
        let e_right = grad_check(
            |t, x| {
                let l = t.input(&lhs, false);
                let y = t.binary(kind, l, x)?;
                project(t, y, &w)
            },
            &rhs,
            h,
        )?;
        let row_safe = if kind == BinaryOp::Min {
            Tensor::new(&[5], row.data().iter().map(|v| v + 0.05).collect())?
        } else {
            row.clone()
        };
        let e_bcast = grad_check(
            |t, x| {
                let l = t.input(&lhs, false);
                let y = t.binary(kind, l, x)?;
                project(t, y, &w)
            },
            &row_safe,
            h,
        )?;
        record(name, e_left.max(e_right).max(e_bcast));
    }

    let w = uniform(&mut rng, &[6], -1.0, 1.0);
    let unary_cases: [(&str, UnaryOp, Tensor<f64>); 8] = [
        ("relu", UnaryOp::Relu, away_from_zero(&mut rng, &[6], 0.1, 2.0)),
        ("tanh", UnaryOp::Tanh, uniform(&mut rng, &[6], -2.0, 2.0)),
        ("exp", UnaryOp::Exp, uniform(&mut rng, &[6], -2.0, 2.0)),
        ("log", UnaryOp::Log, uniform(&mut rng, &[6], 0.2, 3.0)),
        ("negate", UnaryOp::Negate, uniform(&mut rng, &[6], -2.0, 2.0)),
        ("scale", UnaryOp::Scale(-1.7), uniform(&mut rng, &[6], -2.0, 2.0)),
        ("add_const", UnaryOp::AddConst(0.4), uniform(&mut rng, &[6], -2.0, 2.0)),
        (
            "clamp",
            UnaryOp::Clamp(-1.0, 1.0),
            Tensor::new(&[6], vec![-1.8, -0.6, 0.1, 0.7, 1.4, 2.2])?,
        ),
    ];
    for (name, kind, x) in unary_cases {
        let err = grad_check(
            |t, v| {
                let y = t.unary(kind, v)?;
                project(t, y, &w)
            },
            &x,
            h,
        )?;
        record(name, err);
    }

    // layer norm: input, gain and bias on a 4×8 batch
    let x = uniform(&mut rng, &[4, 8], -2.0, 2.0);
    let gain = uniform(&mut rng, &[8], 0.5, 1.5);
    let bias = uniform(&mut rng, &[8], -0.5, 0.5);
    let w = uniform(&mut rng, &[4, 8], -1.0, 1.0);
    let ln = |t: &mut Tape<'_, f64>, x: Var, g: Var, b: Var| -> Result<Var> {
        let y = t.layer_norm(x, g, b, 1e-5)?;
        project(t, y, &w)
    };
    let e_x = grad_check(
        |t, v| {
            let (g, b) = (t.input(&gain, false), t.input(&bias, false));
            ln(t, v, g, b)
        },
        &x,
        h,
    )?;
    let e_g = grad_check(
        |t, v| {
            let (xv, b) = (t.input(&x, false), t.input(&bias, false));
            ln(t, xv, v, b)
        },
        &gain,
        h,
    )?;
    let e_b = grad_check(
        |t, v| {
            let (xv, g) = (t.input(&x, false), t.input(&gain, false));
            ln(t, xv, g, v)
        },
        &bias,
        h,
    )?;
    record("layer_norm", e_x.max(e_g).max(e_b));

    // max over the point axis; uniform draws are tie-free almost surely
    let x = uniform(&mut rng, &[2, 5, 3], -1.0, 1.0);
    let w = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    let err = grad_check(
        |t, v| {
            let (y, _) = t.max_over_points(v)?;
            project(t, y, &w)
        },
        &x,
        h,
    )?;
    record("max_over_points", err);

    // conv2d on a 1×2×6×6 input, stride 1 and 2, with bias
    let x = uniform(&mut rng, &[1, 2, 6, 6], -1.0, 1.0);
    let k = uniform(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let kb = uniform(&mut rng, &[3], -0.5, 0.5);
    let mut worst: f64 = 0.0;
    for stride in [1usize, 2] {
        let out = (6 - 3) / stride + 1;
        let w = uniform(&mut rng, &[1, 3, out, out], -1.0, 1.0);
        let conv = |t: &mut Tape<'_, f64>, x: Var, k: Var, b: Var| -> Result<Var> {
            let y = t.conv2d(x, k, Some(b), stride)?;
            project(t, y, &w)
        };
        worst = worst.max(grad_check(
            |t, v| {
                let (kv, bv) = (t.input(&k, false), t.input(&kb, false));
                conv(t, v, kv, bv)
            },
            &x,
            h,
        )?);
        worst = worst.max(grad_check(
            |t, v| {
                let (xv, bv) = (t.input(&x, false), t.input(&kb, false));
                conv(t, xv, v, bv)
            },
            &k,
            h,
        )?);
        worst = worst.max(grad_check(
            |t, v| {
                let (xv, kv) = (t.input(&x, false), t.input(&k, false));
                conv(t, xv, kv, v)
            },
            &kb,
            h,
        )?);
    }
    record("conv2d", worst);

    // structural ops
    let x = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let other = uniform(&mut rng, &[3, 2], -1.0, 1.0);
    let w6 = uniform(&mut rng, &[3, 6], -1.0, 1.0);
    let e_cat = grad_check(
        |t, v| {
            let o = t.input(&other, false);
            let y = t.concat_last(&[o, v])?;
            project(t, y, &w6)
        },
        &x,
        h,
    )?;
    record("concat_last", e_cat);
    let w2 = uniform(&mut rng, &[3, 2], -1.0, 1.0);
    let e_slice = grad_check(
        |t, v| {
            let y = t.slice_last(v, 1, 2)?;
            project(t, y, &w2)
        },
        &x,
        h,
    )?;
    record("slice_last", e_slice);
    let w3 = uniform(&mut rng, &[3], -1.0, 1.0);
    let e_sum = grad_check(
        |t, v| {
            let y = t.sum_last(v)?;
            project(t, y, &w3)
        },
        &x,
        h,
    )?;
    record("sum_last", e_sum);
    let e_mean = grad_check(
        |t, v| {
            let sq = t.square(v)?;
            t.mean(sq)
        },
        &x,
        h,
    )?;
    record("mean", e_mean);
    let w12 = uniform(&mut rng, &[2, 6], -1.0, 1.0);
    let e_reshape = grad_check(
        |t, v| {
            let y = t.reshape(v, &[2, 6])?;
            project(t, y, &w12)
        },
        &x,
        h,
    )?;
    record("reshape", e_reshape);
    Ok(out)
}
