//! The registered gradient checks: every tape operation, the neural
//! building blocks, the Gaussian layer and the full ELBO of each latent
//! model, each verified against central differences on several seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{BinaryKind, Fault, ReduceKind, Tape, UnaryKind, Var};
use crate::data::{CtSplit, Episode, DT};
use crate::error::Result;
use crate::gaussian::GaussianVars;
use crate::gradcheck::{gradcheck_with_fault, GradcheckReport, TOLERANCE};
use crate::model::{ModelDims, ModelKind, NpFamilyModel};
use crate::nn::{AttentionHead, LstmCell, Mlp, ParamBinder, Parameterized};
use crate::tensor::Tensor;

/// Result of one named check, aggregated over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub seeds: usize,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

type Check = fn(&mut ChaCha8Rng, Option<Fault>) -> Result<GradcheckReport>;

/// Names of all registered checks, in report order.
pub fn check_names() -> Vec<String> {
    registry().into_iter().map(|(n, _)| n).collect()
}

/// Runs every registered check on `n_seeds` seeds derived from `seed`.
/// `fault` corrupts a derivative on the analytic pass (negative control).
pub fn run_suite(seed: u64, n_seeds: usize, fault: Option<Fault>) -> Result<Vec<CheckLine>> {
    registry()
        .into_iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let mut line = CheckLine {
                name,
                max_rel_error: 0.0,
                checked: 0,
                seeds: n_seeds,
            };
            for s in 0..n_seeds as u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (s << 32) ^ ((i as u64) << 48));
                let report = check(&mut rng, fault)?;
                line.max_rel_error = line.max_rel_error.max(report.max_rel_error);
                line.checked += report.checked;
            }
            Ok(line)
        })
        .collect()
}

fn registry() -> Vec<(String, Check)> {
    let mut out: Vec<(String, Check)> = vec![
        ("matmul".into(), matmul),
        ("transpose".into(), transpose),
    ];
    let unary: [(UnaryKind, Check); 8] = [
        (UnaryKind::Tanh, |r, f| unary(UnaryKind::Tanh, r, f)),
        (UnaryKind::Relu, |r, f| unary(UnaryKind::Relu, r, f)),
        (UnaryKind::Sigmoid, |r, f| unary(UnaryKind::Sigmoid, r, f)),
        (UnaryKind::Softplus, |r, f| unary(UnaryKind::Softplus, r, f)),
        (UnaryKind::Exp, |r, f| unary(UnaryKind::Exp, r, f)),
        (UnaryKind::Log, |r, f| unary(UnaryKind::Log, r, f)),
        (UnaryKind::Neg, |r, f| unary(UnaryKind::Neg, r, f)),
        (UnaryKind::Square, |r, f| unary(UnaryKind::Square, r, f)),
    ];
    out.extend(unary.into_iter().map(|(k, c)| (k.name().to_string(), c)));
    let binary: [(BinaryKind, Check); 4] = [
        (BinaryKind::Add, |r, f| binary(BinaryKind::Add, r, f)),
        (BinaryKind::Sub, |r, f| binary(BinaryKind::Sub, r, f)),
        (BinaryKind::Mul, |r, f| binary(BinaryKind::Mul, r, f)),
        (BinaryKind::Div, |r, f| binary(BinaryKind::Div, r, f)),
    ];
    for (k, c) in binary {
        out.push((k.name().to_string(), c));
    }
    let broadcast: [(BinaryKind, Check); 4] = [
        (BinaryKind::Add, |r, f| broadcast(BinaryKind::Add, r, f)),
        (BinaryKind::Sub, |r, f| broadcast(BinaryKind::Sub, r, f)),
        (BinaryKind::Mul, |r, f| broadcast(BinaryKind::Mul, r, f)),
        (BinaryKind::Div, |r, f| broadcast(BinaryKind::Div, r, f)),
    ];
    for (k, c) in broadcast {
        out.push((format!("{}_broadcast", k.name()), c));
    }
    let rest: Vec<(&str, Check)> = vec![
        ("reduce_sum", |r, f| reduce(ReduceKind::Sum, r, f)),
        ("reduce_mean", |r, f| reduce(ReduceKind::Mean, r, f)),
        ("sum_all", sum_all),
        ("scale", scale),
        ("concat_last", concat_last),
        ("slice_last", slice_last),
        ("select_rows", select_rows),
        ("repeat_rows", repeat_rows),
        ("softmax_last", softmax_last),
        ("mlp", mlp),
        ("lstm_step", lstm_step),
        ("attention", attention),
        ("gaussian_log_prob", gaussian_log_prob),
        ("gaussian_kl", gaussian_kl),
        ("gaussian_sample", gaussian_sample),
        ("elbo_np", |r, f| elbo(ModelKind::Np, r, f)),
        ("elbo_anp", |r, f| elbo(ModelKind::Anp, r, f)),
        ("elbo_arnp", |r, f| elbo(ModelKind::Arnp, r, f)),
    ];
    out.extend(rest.into_iter().map(|(n, c)| (n.to_string(), c)));
    out
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive shape")
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=6)
}

/// Scalar root `Σ out ⊙ w` with fixed random weights, so every output
/// coordinate contributes a distinct sensitivity.
fn weighted_sum(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum_all(prod))
}

fn output_weights(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, -1.0, 1.0)
}

fn run(
    name: &str,
    params: Vec<Tensor>,
    out_shape: &[usize],
    rng: &mut ChaCha8Rng,
    fault: Option<Fault>,
    forward: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradcheckReport> {
    let w = output_weights(rng, out_shape);
    gradcheck_with_fault(name, &params, fault, |tape, v| {
        let out = forward(tape, v)?;
        weighted_sum(tape, out, &w)
    })
}

fn matmul(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let (m, k, n) = (dim(rng), dim(rng), dim(rng));
    let params = vec![uniform(rng, &[m, k], -1.0, 1.0), uniform(rng, &[k, n], -1.0, 1.0)];
    run("matmul", params, &[m, n], rng, fault, |t, v| t.matmul(v[0], v[1]))
}

fn transpose(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let (m, n) = (dim(rng), dim(rng));
    let params = vec![uniform(rng, &[m, n], -1.0, 1.0)];
    run("transpose", params, &[n, m], rng, fault, |t, v| t.transpose(v[0]))
}

fn unary(kind: UnaryKind, rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let shape = [dim(rng), dim(rng)];
    let x = match kind {
        UnaryKind::Log => uniform(rng, &shape, 0.2, 3.0),
        UnaryKind::Relu => {
            // Keep inputs off the kink at 0.
            let mut x = uniform(rng, &shape, 0.05, 2.0);
            for v in x.data_mut() {
                if rng.random_bool(0.5) {
                    *v = -*v;
                }
            }
            x
        }
        _ => uniform(rng, &shape, -2.0, 2.0),
    };
    run(kind.name(), vec![x], &shape, rng, fault, |t, v| t.unary(kind, v[0]))
}

fn binary_operands(kind: BinaryKind, rng: &mut ChaCha8Rng, a_shape: &[usize], b_shape: &[usize]) -> Vec<Tensor> {
    let a = uniform(rng, a_shape, -2.0, 2.0);
    let b = if kind == BinaryKind::Div {
        let mut b = uniform(rng, b_shape, 0.5, 2.0);
        for v in b.data_mut() {
            if rng.random_bool(0.5) {
                *v = -*v;
            }
        }
        b
    } else {
        uniform(rng, b_shape, -2.0, 2.0)
    };
    vec![a, b]
}

fn binary(kind: BinaryKind, rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let shape = [dim(rng), dim(rng)];
    let params = binary_operands(kind, rng, &shape, &shape);
    run(kind.name(), params, &shape, rng, fault, |t, v| t.binary(kind, v[0], v[1]))
}

fn broadcast(kind: BinaryKind, rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let shape = [dim(rng), dim(rng), dim(rng)];
    let b_shape = if rng.random_bool(0.5) { vec![shape[2]] } else { vec![shape[1], shape[2]] };
    let params = binary_operands(kind, rng, &shape, &b_shape);
    run(kind.name(), params, &shape, rng, fault, |t, v| t.binary(kind, v[0], v[1]))
}

fn reduce(kind: ReduceKind, rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let shape = [dim(rng), dim(rng), dim(rng)];
    let axis = rng.random_range(0..3);
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    let params = vec![uniform(rng, &shape, -1.0, 1.0)];
    run("reduce", params, &out_shape, rng, fault, move |t, v| t.reduce(kind, v[0], axis))
}

fn sum_all(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let shape = [dim(rng), dim(rng)];
    let params = vec![uniform(rng, &shape, -1.0, 1.0)];
    run("sum_all", params, &[], rng, fault, |t, v| Ok(t.sum_all(v[0])))
}

fn scale(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let shape = [dim(rng), dim(rng)];
    let factor = rng.random_range(-3.0..3.0);
    let params = vec![uniform(rng, &shape, -1.0, 1.0)];
    run("scale", params, &shape, rng, fault, move |t, v| Ok(t.scale(v[0], factor)))
}

fn concat_last(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let rows = dim(rng);
    let widths = [dim(rng), dim(rng), dim(rng)];
    let params: Vec<Tensor> = widths.iter().map(|&w| uniform(rng, &[rows, w], -1.0, 1.0)).collect();
    let total = widths.iter().sum::<usize>();
    run("concat_last", params, &[rows, total], rng, fault, |t, v| t.concat_last(v))
}

fn slice_last(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let (rows, cols) = (dim(rng), dim(rng));
    let start = rng.random_range(0..cols);
    let len = rng.random_range(1..=cols - start);
    let params = vec![uniform(rng, &[rows, cols], -1.0, 1.0)];
    run("slice_last", params, &[rows, len], rng, fault, move |t, v| t.slice_last(v[0], start, len))
}

fn select_rows(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let (rows, cols) = (dim(rng), dim(rng));
    let picked: Vec<usize> = (0..dim(rng)).map(|_| rng.random_range(0..rows)).collect();
    let params = vec![uniform(rng, &[rows, cols], -1.0, 1.0)];
    let out = [picked.len(), cols];
    run("select_rows", params, &out, rng, fault, move |t, v| t.select_rows(v[0], &picked))
}

fn repeat_rows(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let (n, cols) = (dim(rng), dim(rng));
    let params = vec![uniform(rng, &[cols], -1.0, 1.0)];
    run("repeat_rows", params, &[n, cols], rng, fault, move |t, v| t.repeat_rows(v[0], n))
}

fn softmax_last(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let shape = [dim(rng), dim(rng)];
    let params = vec![uniform(rng, &shape, -2.0, 2.0)];
    run("softmax_last", params, &shape, rng, fault, |t, v| t.softmax_last(v[0]))
}

/// Perturbs parameters away from their initialization (zero biases would
/// put ReLU inputs exactly on the kink).
fn jitter(params: Vec<&Tensor>, rng: &mut ChaCha8Rng, amount: f64) -> Vec<Tensor> {
    params
        .into_iter()
        .map(|p| {
            let mut t = p.clone();
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-amount..amount));
            t
        })
        .collect()
}

fn mlp(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let dims = [dim(rng), dim(rng), dim(rng)];
    let net = Mlp::new(rng, &dims);
    let mut params = jitter(net.params().into_iter().map(|(_, t)| t).collect(), rng, 0.3);
    let n = params.len();
    let batch = dim(rng);
    params.push(uniform(rng, &[batch, dims[0]], -1.0, 1.0));
    run("mlp", params, &[batch, dims[2]], rng, fault, |t, v| {
        let vars = net.bind(t, &mut ParamBinder::replay(v[..n].to_vec()));
        vars.forward(t, v[n])
    })
}

fn lstm_step(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let (input, hidden, batch) = (dim(rng), dim(rng), dim(rng));
    let cell = LstmCell::new(rng, input, hidden);
    let mut params: Vec<Tensor> = cell.params().into_iter().map(|(_, t)| t.clone()).collect();
    params.push(uniform(rng, &[batch, input], -1.0, 1.0));
    params.push(uniform(rng, &[batch, hidden], -0.5, 0.5));
    params.push(uniform(rng, &[batch, hidden], -0.5, 0.5));
    run("lstm_step", params, &[batch, 2 * hidden], rng, fault, |t, v| {
        let vars = cell.bind(t, &mut ParamBinder::replay(v[..3].to_vec()));
        let s = vars.step_full(t, v[3], v[4], v[5])?;
        t.concat_last(&[s.h, s.c])
    })
}

fn attention(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let (d_in, d_v, d_att, queries, contexts) = (dim(rng), dim(rng), dim(rng), dim(rng), dim(rng));
    let head = AttentionHead::new(rng, d_in, d_v, d_att);
    let mut params: Vec<Tensor> = head.params().into_iter().map(|(_, t)| t.clone()).collect();
    params.push(uniform(rng, &[queries, d_in], -1.0, 1.0));
    params.push(uniform(rng, &[contexts, d_in], -1.0, 1.0));
    params.push(uniform(rng, &[contexts, d_v], -1.0, 1.0));
    run("attention", params, &[queries, d_att], rng, fault, |t, v| {
        let vars = head.bind(t, &mut ParamBinder::replay(v[..3].to_vec()));
        vars.forward(t, v[3], v[4], v[5])
    })
}

fn gaussian_params(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<Tensor> {
    vec![uniform(rng, shape, -1.0, 1.0), uniform(rng, shape, -1.0, 1.0)]
}

fn gaussian_log_prob(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let shape = [dim(rng), dim(rng)];
    let mut params = gaussian_params(rng, &shape);
    params.push(uniform(rng, &shape, -1.0, 1.0));
    gradcheck_with_fault("gaussian_log_prob", &params, fault, |t, v| {
        let g = GaussianVars::from_raw(t, v[0], v[1])?;
        g.log_prob(t, v[2])
    })
}

fn gaussian_kl(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let shape = [dim(rng)];
    let mut params = gaussian_params(rng, &shape);
    params.extend(gaussian_params(rng, &shape));
    gradcheck_with_fault("gaussian_kl", &params, fault, |t, v| {
        let p = GaussianVars::from_raw(t, v[0], v[1])?;
        let q = GaussianVars::from_raw(t, v[2], v[3])?;
        p.kl(t, q)
    })
}

fn gaussian_sample(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    let shape = [dim(rng)];
    let params = gaussian_params(rng, &shape);
    let eps = Tensor::vector((0..shape[0]).map(|_| rng.sample(StandardNormal)).collect());
    run("gaussian_sample", params, &shape, rng, fault, move |t, v| {
        let g = GaussianVars::from_raw(t, v[0], v[1])?;
        let e = t.constant(eps.clone());
        g.sample(t, e)
    })
}

/// Layer sizes for the end-to-end checks; every coordinate is perturbed,
/// so the model is kept small.
pub fn gradcheck_dims(input_dim: usize, output_dim: usize, window: usize) -> ModelDims {
    ModelDims {
        lstm_hidden: 3,
        pair_hidden: [4, 4],
        repr_dim: 5,
        latent_hidden: 4,
        z_dim: 3,
        att_dim: 4,
        decoder_hidden: [4, 4],
        ..ModelDims::new(input_dim, output_dim, window)
    }
}

/// A 3-step episode with window 2 and generic features: every input
/// coordinate varies across steps, so no parameter has an identically
/// zero gradient by symmetry.
pub fn gradcheck_episode(rng: &mut ChaCha8Rng) -> Result<Episode> {
    let (n, window, d_x, d_y) = (3, 2, 4, 2);
    Episode::new(
        uniform(rng, &[n, window, d_x], -1.5, 1.5),
        uniform(rng, &[n, d_y], -1.5, 1.5),
        DT,
        0,
        Vec::new(),
    )
}

/// Negated ELBO of [`gradcheck_episode`] with two contexts, at jittered
/// parameters with shifted biases.
pub fn elbo_gradcheck(kind: ModelKind, rng: &mut ChaCha8Rng, fault: Option<Fault>, jitter_amount: f64) -> Result<GradcheckReport> {
    let ep = gradcheck_episode(rng)?;
    let model = NpFamilyModel::new(kind, gradcheck_dims(ep.input_dim(), ep.output_dim(), ep.window_len()), rng)?;
    let mut values = jitter(model.params().into_iter().map(|(_, t)| t).collect(), rng, jitter_amount);
    for v in values.iter_mut().filter(|v| v.shape().len() == 1) {
        v.data_mut().iter_mut().for_each(|x| *x += ELBO_BIAS_SHIFT);
    }
    let split = CtSplit::prefix(2, ep.len())?;
    let eps = Tensor::vector((0..model.dims.z_dim).map(|_| rng.sample(StandardNormal)).collect());
    gradcheck_with_fault(&format!("elbo_{kind}"), &values, fault, |t, v| {
        let vars = model.bind(t, &mut ParamBinder::replay(v.to_vec()));
        Ok(vars.elbo(t, &ep, &split, &eps)?.loss)
    })
}

fn elbo(kind: ModelKind, rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<GradcheckReport> {
    elbo_gradcheck(kind, rng, fault, ELBO_JITTER)
}

/// Half-width of the uniform perturbation applied to initial parameters.
pub const ELBO_JITTER: f64 = 0.5;
/// Offset added to every bias so hidden ReLU units start active.
pub const ELBO_BIAS_SHIFT: f64 = 0.6;
