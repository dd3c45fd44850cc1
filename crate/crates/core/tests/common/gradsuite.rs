//! Finite-difference checks of every differentiable op, layer, loss, and the
//! full generator objective (64-bit). Each group appends `(check, relative
//! error)` records instead of asserting, so callers decide how to report.

use hetsr::loss::{
    content_loss, critic_loss, generator_loss, gradient_cosine_loss, gradient_penalty, ssim_var, LossConfig,
};
use hetsr::nn::{bind_frozen, ConvCritic, Critic, CriticSpec, Generator, GeneratorSpec, GlobalSkip, HetConv, HetResidualBlock, Module};
use hetsr::nn::Activation;
use hetsr::tensor::check_gradients;
use hetsr::{Graph, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Largest acceptable relative error.
pub const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

pub type Records = Vec<(String, f64)>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values in `±[0.2, 1]`, keeping kinks of piecewise ops out of FD reach.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let u = Tensor::<f64>::uniform(shape, 0.2, 1.0, &mut rng(seed));
    let s = Tensor::<f64>::uniform(shape, -1.0, 1.0, &mut rng(seed + 1000));
    Tensor::from_fn(shape, |i| if s.data()[i] < 0.0 { -u.data()[i] } else { u.data()[i] })
}

/// `Σ out ⊙ r` for a fixed random `r`, turning any output into a scalar with
/// a non-trivial gradient.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let r = g.constant(Tensor::randn(g.shape(out), 1.0, &mut rng(seed)));
    let m = g.mul(out, r)?;
    g.sum(m)
}

/// Records the relative error of one check; a failed evaluation is infinite.
fn assert_grad<F>(out: &mut Records, name: &str, x: &Tensor<f64>, f: F)
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    assert!(x.numel() <= 1000, "{name}: {} inputs", x.numel());
    let err = check_gradients(f, x, EPS).unwrap_or(f64::INFINITY);
    out.push((name.to_string(), err));
}

fn unary(out: &mut Records, name: &str, x: Tensor<f64>, op: impl Fn(&mut Graph<f64>, Var) -> Result<Var>) {
    assert_grad(out, name, &x, |g, v| {
        let y = op(g, v)?;
        project(g, y, 7)
    });
}

/// Checks `op(a, b)` w.r.t. each operand in turn.
fn binary(out: &mut Records, name: &str, a: Tensor<f64>, b: Tensor<f64>, op: impl Fn(&mut Graph<f64>, Var, Var) -> Result<Var>) {
    assert_grad(out, &format!("{name} (lhs)"), &a, |g, v| {
        let bv = g.constant(b.clone());
        let y = op(g, v, bv)?;
        project(g, y, 8)
    });
    assert_grad(out, &format!("{name} (rhs)"), &b, |g, v| {
        let av = g.constant(a.clone());
        let y = op(g, av, v)?;
        project(g, y, 8)
    });
}

pub fn elementwise_ops(out: &mut Records) {
    let a = away_from_zero(&[3, 4], 1);
    let b = away_from_zero(&[3, 4], 2);
    binary(out, "add", a.clone(), b.clone(), |g, x, y| g.add(x, y));
    binary(out, "sub", a.clone(), b.clone(), |g, x, y| g.sub(x, y));
    binary(out, "mul", a.clone(), b.clone(), |g, x, y| g.mul(x, y));
    binary(out, "div", a.clone(), b.clone(), |g, x, y| g.div(x, y));
    unary(out, "add_scalar", a.clone(), |g, x| g.add_scalar(x, 0.3));
    unary(out, "mul_scalar", a.clone(), |g, x| g.mul_scalar(x, -1.7));
    unary(out, "neg", a.clone(), |g, x| g.neg(x));
    unary(out, "square", a.clone(), |g, x| g.square(x));
    unary(out, "sqrt", a.map(f64::abs), |g, x| g.sqrt(x));
    unary(out, "relu", a.clone(), |g, x| g.relu(x));
    unary(out, "leaky_relu", a.clone(), |g, x| g.leaky_relu(x, 0.2));
}

pub fn prelu_input_and_slope(out: &mut Records) {
    let x = away_from_zero(&[2, 3, 4], 3);
    let slope = Tensor::<f64>::scalar(0.25);
    binary(out, "prelu", x, slope, |g, x, s| g.prelu(x, s));
}

pub fn reductions_and_shapes(out: &mut Records) {
    let a = away_from_zero(&[2, 3, 4], 4);
    unary(out, "sum", a.clone(), |g, x| g.sum(x));
    unary(out, "mean", a.clone(), |g, x| g.mean(x));
    unary(out, "sum_per_sample", a.clone(), |g, x| g.sum_per_sample(x));
    unary(out, "reshape", a.clone(), |g, x| g.reshape(x, &[6, 4]));
    unary(out, "flatten", a.clone(), |g, x| g.flatten(x));
    // Finite differences see both branches, so detach is checked exactly: the
    // gradient of x + detach(x)² equals that of x alone.
    let grad_of = |detached: bool| -> Tensor<f64> {
        let mut g = Graph::new();
        let x = g.leaf(a.clone().with_requires_grad(true));
        let y = if detached {
            let d = g.detach(x);
            let s = g.square(d).unwrap();
            g.add(x, s).unwrap()
        } else {
            x
        };
        let l = project(&mut g, y, 7).unwrap();
        g.backward(l).unwrap();
        g.grad(x).unwrap().clone()
    };
    let diff = grad_of(true).max_abs_diff(&grad_of(false)).unwrap_or(f64::INFINITY);
    out.push(("detach".to_string(), diff));
    let m = away_from_zero(&[3, 5], 5);
    unary(out, "transpose", m, |g, x| g.transpose(x));
}

pub fn matrix_ops(out: &mut Records) {
    let a = away_from_zero(&[2, 3], 6);
    let b = away_from_zero(&[3, 2], 7);
    binary(out, "matmul", a, b, |g, x, y| g.matmul(x, y));
    let x = away_from_zero(&[4, 5], 8);
    let w = away_from_zero(&[3, 5], 9);
    let bias = away_from_zero(&[3], 10);
    binary(out, "linear (x, w)", x.clone(), w.clone(), |g, x, w| g.linear(x, w, None));
    assert_grad(out, "linear (bias)", &bias, |g, b| {
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let y = g.linear(xv, wv, Some(b))?;
        project(g, y, 9)
    });
}

pub fn convolution(out: &mut Records) {
    let x = away_from_zero(&[2, 3, 8, 8], 11);
    let w = away_from_zero(&[4, 3, 3, 3], 12);
    let b = away_from_zero(&[4], 13);
    for (stride, pad) in [(1, 1), (1, 0)] {
        binary(out, &format!("conv2d s{stride} p{pad}"), x.clone(), w.clone(), |g, x, w| g.conv2d(x, w, None, stride, pad));
    }
    // A 3×3 stride-2 window needs an odd padded extent.
    let odd = away_from_zero(&[2, 3, 7, 7], 18);
    binary(out, "conv2d s2 p1", odd, w.clone(), |g, x, w| g.conv2d(x, w, None, 2, 1));
    assert_grad(out, "conv2d bias", &b, |g, b| {
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let y = g.conv2d(xv, wv, Some(b), 1, 1)?;
        project(g, y, 14)
    });
    // Many filters takes the im2col path, few the direct path; 4×4 stride 2 is the critic's downsampler.
    let wide = away_from_zero(&[9, 3, 3, 3], 15);
    binary(out, "conv2d im2col", x.clone(), wide, |g, x, w| g.conv2d(x, w, None, 1, 1));
    let down = away_from_zero(&[2, 3, 4, 4], 16);
    binary(out, "conv2d 4x4/2", x.clone(), down, |g, x, w| g.conv2d(x, w, None, 2, 1));
    let point = away_from_zero(&[5, 3, 1, 1], 17);
    binary(out, "conv2d 1x1", x, point, |g, x, w| g.conv2d(x, w, None, 1, 0));
}

pub fn rearrangements(out: &mut Records) {
    let x = away_from_zero(&[1, 8, 3, 3], 20);
    unary(out, "pixel_shuffle", x.clone(), |g, x| g.pixel_shuffle(x, 2));
    let y = away_from_zero(&[1, 2, 4, 6], 21);
    unary(out, "pixel_unshuffle", y.clone(), |g, x| g.pixel_unshuffle(x, 2));
    unary(out, "replicate_pad", y.clone(), |g, x| g.replicate_pad(x, 2));
    unary(out, "index_select", x.clone(), |g, x| g.index_select(x, 1, &[5, 0, 5, 2]));
    unary(out, "assemble_channels", x, |g, x| {
        let even = g.index_select(x, 1, &[0, 2, 4, 6])?;
        let odd = g.index_select(x, 1, &[1, 3, 5, 7])?;
        g.assemble_channels(&[(odd, vec![0, 2, 4, 6]), (even, vec![1, 3, 5, 7])], 8)
    });
}

pub fn cosine_rows(out: &mut Records) {
    let a = away_from_zero(&[3, 7], 22);
    let b = away_from_zero(&[3, 7], 23);
    binary(out, "cosine_rows", a, b, |g, x, y| g.cosine_rows(x, y));
}

pub fn shared_subexpressions_sum_path_gradients(out: &mut Records) {
    let a = away_from_zero(&[5], 24);
    unary(out, "fan-out", a, |g, x| {
        let s = g.square(x)?;
        let t = g.mul(s, x)?;
        g.add(t, x)
    });
}

pub fn hetconv_layer(out: &mut Records) {
    let mut r = rng(30);
    let layer = HetConv::<f64>::new(8, 8, 3, 4, 1, 1.0, &mut r).unwrap();
    let x = away_from_zero(&[1, 8, 5, 5], 31);
    assert_grad(out, "hetconv input", &x, |g, v| {
        let ps = bind_frozen(g, &layer);
        let y = layer.forward(g, &mut hetsr::nn::ParamCursor::new(&ps), v)?;
        project(g, y, 32)
    });
    for i in 0..layer.parameters().len() {
        let p = layer.parameters()[i].clone();
        assert_grad(out, &format!("hetconv param {i}"), &p, |g, v| {
            let mut ps = bind_frozen(g, &layer);
            ps[i] = v;
            let xv = g.constant(x.clone());
            let y = layer.forward(g, &mut hetsr::nn::ParamCursor::new(&ps), xv)?;
            project(g, y, 33)
        });
    }
}

pub fn residual_block(out: &mut Records) {
    let block = HetResidualBlock::<f64>::new(4, 3, 2, Activation::PRelu(Tensor::scalar(0.25)), 1.0, &mut rng(40)).unwrap();
    let x = away_from_zero(&[1, 4, 5, 5], 41);
    assert_grad(out, "residual input", &x, |g, v| {
        let ps = bind_frozen(g, &block);
        let y = block.forward(g, &mut hetsr::nn::ParamCursor::new(&ps), v)?;
        project(g, y, 42)
    });
}

pub fn content_and_edge_losses(out: &mut Records) {
    let sr = Tensor::<f64>::uniform(&[2, 3, 6, 6], 0.0, 1.0, &mut rng(50));
    let hr = Tensor::<f64>::uniform(&[2, 3, 6, 6], 0.0, 1.0, &mut rng(51));
    binary(out, "mse", sr.clone(), hr.clone(), content_loss);
    binary(out, "gradient cosine loss", sr.clone(), hr.clone(), gradient_cosine_loss);
    let a = Tensor::<f64>::uniform(&[1, 3, 12, 12], 0.0, 1.0, &mut rng(52));
    let b = Tensor::<f64>::uniform(&[1, 3, 12, 12], 0.0, 1.0, &mut rng(53));
    assert_grad(out, "ssim", &a, |g, v| {
        let bv = g.constant(b.clone());
        ssim_var(g, v, bv)
    });
}

fn tiny_critic(seed: u64) -> ConvCritic<f64> {
    let spec = CriticSpec {
        depth: 2,
        base_channels: 2,
        max_channels: 4,
        input_size: 8,
        ..CriticSpec::default()
    };
    ConvCritic::new(&spec, &mut rng(seed)).unwrap()
}

pub fn critic_scores(out: &mut Records) {
    let critic = tiny_critic(60);
    let x = away_from_zero(&[2, 3, 8, 8], 61);
    assert_grad(out, "critic input", &x, |g, v| {
        let ps = bind_frozen(g, &critic);
        let s = critic.score(g, &ps, v)?;
        project(g, s, 62)
    });
}

/// The penalty, the critic loss including it, and their dependence on every
/// critic parameter (this is the double-backward path).
pub fn gradient_penalty_through_critic_parameters(out: &mut Records) {
    let critic = tiny_critic(70);
    let real = Tensor::<f64>::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut rng(71));
    let fake = Tensor::<f64>::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut rng(72));
    let n = critic.parameters().len();
    for i in 0..n {
        let p = critic.parameters()[i].clone();
        let f = |g: &mut Graph<f64>, v: Var| -> Result<Var> {
            // The side graph reads stored weights, so evaluate at v's value.
            let mut c = critic.clone();
            *c.parameters_mut()[i] = g.value(v).clone();
            let mut ps = bind_frozen(g, &c);
            ps[i] = v;
            let pen = gradient_penalty(g, &c, &ps, &real, &fake, 10.0, &mut rng(73))?;
            Ok(pen.var)
        };
        assert_grad(out, &format!("gradient penalty param {i}"), &p, f);
        assert_grad(out, &format!("critic loss param {i}"), &p, |g, v| {
            let mut c = critic.clone();
            *c.parameters_mut()[i] = g.value(v).clone();
            let mut ps = bind_frozen(g, &c);
            ps[i] = v;
            let rv = g.constant(real.clone());
            let fv = g.constant(fake.clone());
            let rs = c.score(g, &ps, rv)?;
            let fs = c.score(g, &ps, fv)?;
            let pen = gradient_penalty(g, &c, &ps, &real, &fake, 10.0, &mut rng(73))?;
            critic_loss(g, rs, fs, Some(pen.var))
        });
    }
}

fn two_block_generator(skip: GlobalSkip) -> Generator<f64> {
    let spec = GeneratorSpec {
        channels: 4,
        blocks: 2,
        head_kernel: 3,
        tail_kernel: 3,
        residual_init_scale: 1.0,
        global_skip: skip,
        ..GeneratorSpec::default()
    };
    let mut g = Generator::new(&spec, &mut rng(80)).unwrap();
    // A zero-initialised tail would hide every upstream parameter.
    if skip == GlobalSkip::Bicubic {
        g.tail.weight = Tensor::randn(g.tail.weight.shape(), 0.1, &mut rng(81));
    }
    g
}

/// The generator objective (content + λ·adversarial + μ·edge) w.r.t. every generator
/// parameter and the LR input, through a critic.
pub fn full_generator_objective(out: &mut Records) {
    let critic = {
        let spec = CriticSpec {
            depth: 2,
            base_channels: 2,
            max_channels: 4,
            input_size: 8,
            ..CriticSpec::default()
        };
        ConvCritic::<f64>::new(&spec, &mut rng(82)).unwrap()
    };
    let lr = Tensor::<f64>::uniform(&[1, 3, 2, 2], 0.0, 1.0, &mut rng(83));
    let hr = Tensor::<f64>::uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut rng(84));
    let cfg = LossConfig {
        lambda: 0.1,
        mu: 0.5,
        ..LossConfig::default()
    };
    for skip in [GlobalSkip::None, GlobalSkip::Bicubic] {
        let gen = two_block_generator(skip);
        let objective = |g: &mut Graph<f64>, ps: &[Var], x: Var| -> Result<Var> {
            let sr = gen.forward(g, ps, x)?;
            let cps = bind_frozen(g, &critic);
            let fs = critic.score(g, &cps, sr)?;
            let hv = g.constant(hr.clone());
            Ok(generator_loss(g, sr, hv, fs, &cfg)?.total)
        };
        for (i, p) in gen.parameters().into_iter().enumerate() {
            assert_grad(out, &format!("objective {skip:?} param {i}"), p, |g, v| {
                let mut ps = bind_frozen(g, &gen);
                ps[i] = v;
                let x = g.constant(lr.clone());
                objective(g, &ps, x)
            });
        }
        assert_grad(out, &format!("objective {skip:?} input"), &lr, |g, v| {
            let ps = bind_frozen(g, &gen);
            objective(g, &ps, v)
        });
    }
}

/// Every group, in order.
pub const GROUPS: &[(&str, fn(&mut Records))] = &[
    ("elementwise ops", elementwise_ops),
    ("prelu", prelu_input_and_slope),
    ("reductions and shapes", reductions_and_shapes),
    ("matrix ops", matrix_ops),
    ("convolution", convolution),
    ("rearrangements", rearrangements),
    ("cosine rows", cosine_rows),
    ("shared subexpressions", shared_subexpressions_sum_path_gradients),
    ("hetconv", hetconv_layer),
    ("residual block", residual_block),
    ("content and edge losses", content_and_edge_losses),
    ("critic", critic_scores),
    ("gradient penalty", gradient_penalty_through_critic_parameters),
    ("generator objective", full_generator_objective),
];
