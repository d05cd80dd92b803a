//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::Network;
use super::{Mode, Tensor};
use crate::error::{Error, Result};

/// Denominator floor of the relative error, so that a gradient tensor which
/// is zero up to rounding compares on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Fraction of the whole gradient's norm below which a tensor's own norm no
/// longer sets the scale of its error. Gradient tensors much smaller than the
/// network's overall gradient are otherwise dominated by 32-bit rounding of
/// the loss.
pub const TENSOR_SCALE_FLOOR: f64 = 0.1;

/// Largest parameter count the finite-difference oracle will probe.
pub const MAX_PARAMS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(|a|, |n|, TENSOR_SCALE_FLOOR * |g|, REL_ERROR_FLOOR)`
    /// over gradient tensors, with `|.|` the Euclidean norm of a tensor's
    /// probed elements and `g` the whole analytic gradient.
    pub max_rel_error: f64,
    /// Name of the parameter (or `input`) where the worst error occurred.
    pub worst: String,
    pub checked: usize,
    /// Probes skipped because the perturbation switched a ReLU/PReLU sign or
    /// a max-pool selection, or crossed an ELU joint (not twice differentiable).
    pub skipped_kinks: usize,
}

/// Compares every parameter and input gradient of `network` against
/// fourth-order central differences with step `epsilon`. The scalar loss is
/// a fixed random projection of the output (drawn from `seed`). In [`Mode::Train`] dropout
/// masks are frozen at the network's current step for every probe.
pub fn grad_check(
    network: &Network,
    input: &Tensor,
    epsilon: f32,
    mode: Mode,
    seed: u64,
) -> Result<GradCheckReport> {
    if network.param_count() > MAX_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "grad_check supports at most {MAX_PARAMS} parameters, network has {}",
            network.param_count()
        )));
    }
    let mut net = network.clone();
    net.zero_grad();
    let step = net.step();
    let out_id = net.output_id();

    let base = net.run(input, mode, step)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj: Vec<f32> = (0..base.output().len())
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    let loss = |t: &Tensor| -> f64 {
        t.data()
            .iter()
            .zip(&proj)
            .map(|(&a, &w)| f64::from(a) * f64::from(w))
            .sum()
    };
    let pattern = base.branch_pattern(&net);

    match mode {
        Mode::Train => net.forward(input, Mode::Train)?,
        Mode::Eval => net.forward_without_dropout(input)?,
    };
    let seed_grad = Tensor::new(base.output().shape().to_vec(), proj.clone())?;
    let input_grad = net.backward(&[(out_id, seed_grad)])?;

    let mut skipped_kinks = 0;
    let mut tensors: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for pi in 0..net.params().len() {
        let mut pairs = Vec::new();
        for j in 0..net.params()[pi].value.len() {
            let orig = net.params()[pi].value.data()[j];
            let numeric = stencil(orig, epsilon, &pattern, |v| {
                net.params_mut()[pi].value.data_mut()[j] = v;
                let a = net.run(input, mode, step)?;
                Ok((loss(a.output()), a.branch_pattern(&net)))
            })?;
            net.params_mut()[pi].value.data_mut()[j] = orig;
            match numeric {
                Some(n) => pairs.push((f64::from(net.params()[pi].grad.data()[j]), n)),
                None => skipped_kinks += 1,
            }
        }
        tensors.push((net.params()[pi].name.clone(), pairs));
    }
    let mut x = input.clone();
    let mut pairs = Vec::new();
    for j in 0..x.len() {
        let orig = x.data()[j];
        let numeric = stencil(orig, epsilon, &pattern, |v| {
            x.data_mut()[j] = v;
            let a = net.run(&x, mode, step)?;
            Ok((loss(a.output()), a.branch_pattern(&net)))
        })?;
        x.data_mut()[j] = orig;
        match numeric {
            Some(n) => pairs.push((f64::from(input_grad.data()[j]), n)),
            None => skipped_kinks += 1,
        }
    }
    tensors.push(("input".to_string(), pairs));

    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(&mut tensors.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let floor = (TENSOR_SCALE_FLOOR * scale).max(REL_ERROR_FLOOR);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped_kinks,
    };
    for (name, pairs) in &tensors {
        let diff = norm(&mut pairs.iter().map(|(a, n)| a - n));
        let denom = norm(&mut pairs.iter().map(|p| p.0))
            .max(norm(&mut pairs.iter().map(|p| p.1)))
            .max(floor);
        let err = diff / denom;
        report.checked += pairs.len();
        if report.worst.is_empty() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = name.clone();
        }
    }
    Ok(report)
}

/// Fourth-order central difference `(-f(2h) + 8f(h) - 8f(-h) + f(-2h)) / 12h`.
/// `None` when any probe changes the branch pattern.
fn stencil(
    orig: f32,
    epsilon: f32,
    pattern: &[u64],
    mut eval: impl FnMut(f32) -> Result<(f64, Vec<u64>)>,
) -> Result<Option<f64>> {
    let mut f = [0.0f64; 4];
    let mut at = [0.0f32; 4];
    for (i, k) in [2.0f32, 1.0, -1.0, -2.0].into_iter().enumerate() {
        at[i] = orig + k * epsilon;
        let (l, p) = eval(at[i])?;
        if p != pattern {
            return Ok(None);
        }
        f[i] = l;
    }
    let h = (f64::from(at[1]) - f64::from(at[2])) / 2.0;
    Ok(Some((-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h)))
}

/// A small random network that contains every layer kind, with a random
/// batch-2 input in [-1, 1]. Used to exercise [`grad_check`].
pub fn probe_network(seed: u64) -> Result<(Network, Tensor)> {
    use super::layer::LayerSpec;
    use super::network::NetworkBuilder;
    use rand::seq::SliceRandom;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = rng.gen_range(1..=2);
    let side = 2 * rng.gen_range(2..=4);
    let mut acts = [LayerSpec::Relu,
        LayerSpec::Prelu { init_slope: 0.25 },
        LayerSpec::Elu { alpha: 1.0 },
        LayerSpec::Sigmoid];
    acts.shuffle(&mut rng);

    let mut b = NetworkBuilder::new(channels, side, side);
    let k0 = *[1usize, 3].choose(&mut rng).unwrap_or(&3);
    let x = b.conv("c0", b.input(), rng.gen_range(2..=3), k0, 1, k0 / 2)?;
    let a0 = b.unary("a0", x, acts[0].clone())?;
    let p = b.unary("pool", a0, LayerSpec::MaxPool2)?;
    let u = b.unary("up", p, LayerSpec::Upsample2x)?;
    let x = b.conv("c1", u, rng.gen_range(1..=3), 3, 1, 1)?;
    let a1 = b.unary("a1", x, acts[1].clone())?;
    let cat = b.concat("cat", &[a1, a0])?;
    let rate = rng.gen_range(0.1f32..0.5);
    let d = b.unary("drop", cat, LayerSpec::Dropout { rate })?;
    let (k, pad) = *[(4usize, 1usize), (3, 1), (2, 0)].choose(&mut rng).unwrap_or(&(4, 1));
    let x = b.conv("c2", d, rng.gen_range(2..=3), k, 2, pad)?;
    let a2 = b.unary("a2", x, acts[2].clone())?;
    let x = b.dense("fc", a2, rng.gen_range(2..=4))?;
    let a3 = b.unary("a3", x, acts[3].clone())?;
    b.dense("out", a3, 2)?;
    let mut net = b.build(rng.gen());
    net.set_step(rng.gen_range(0..1000));

    let n = 2 * channels * side * side;
    let data = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let input = Tensor::new(vec![2, channels, side, side], data)?;
    Ok((net, input))
}
