//! The full finite-difference suite: every differentiable tape op, every layer, the
//! loss terms and the three model variants at tiny scale, in train and eval mode.

use super::{check_fn, check_params, GradCheckConfig, GradCheckReport};
use crate::autodiff::{NormStats, Tape, Var};
use crate::error::Result;
use crate::model::{Classifier, ModelConfig, Variant};
use crate::nn::{
    AttentionSpec, BlockKind, Graph, LayerParams, Linear, Mode, MultiHeadAttention, PatchEmbed, ResidualBlock,
    ResidualBlockSpec, TransformerBlock,
};
use crate::optim::{l2_penalty, weighted_cross_entropy, ClassWeights, L2Scope};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).expect("non-empty")
}

/// `Σ y ⊙ c` for a fixed random `c`, a loss whose gradient reaches every output.
fn project(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let n = g.value(y).len();
    let mut rng = Rng::new(seed);
    let c = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
    let y = g.tape_mut().mul_const(y, c)?;
    Ok(g.tape_mut().sum(y))
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn op_cases() -> Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> {
    let targets = vec![0, 2, 1, 2];
    let weights = ClassWeights { w: vec![0.5, 2.0, 1.0] };
    let (rm, rv) = (vec![0.3, -0.2], vec![1.5, 0.7]);
    let consts: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.3).collect();
    vec![
        (
            "matmul",
            vec![rand(&[3, 4], 1), rand(&[4, 2], 2)],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.matmul(v[0], v[1])?;
                let y = t.mul(y, y)?;
                Ok(t.sum(y))
            }),
        ),
        (
            "batch_matmul",
            vec![rand(&[2, 3, 4], 3), rand(&[2, 4, 5], 4)],
            Box::new(|t, v| {
                let y = t.batch_matmul(v[0], v[1], false)?;
                let y = t.gelu(y);
                Ok(t.sum(y))
            }),
        ),
        (
            "batch_matmul(trans_b)",
            vec![rand(&[2, 3, 4], 5), rand(&[2, 5, 4], 6)],
            Box::new(|t, v| {
                let y = t.batch_matmul(v[0], v[1], true)?;
                let y = t.mul(y, y)?;
                Ok(t.sum(y))
            }),
        ),
        (
            "add/sub/mul/broadcast/scale",
            vec![rand(&[3, 4], 7), rand(&[3, 4], 8), rand(&[4], 9)],
            Box::new(|t, v| {
                let a = t.add(v[0], v[1])?;
                let b = t.sub(a, v[1])?;
                let c = t.mul(b, v[1])?;
                let d = t.add_broadcast(c, v[2])?;
                let e = t.scale(d, 0.7);
                let f = t.mul(e, e)?;
                Ok(t.mean(f))
            }),
        ),
        (
            "relu/gelu/mul_const",
            vec![rand(&[12], 10)],
            Box::new(move |t, v| {
                let r = t.relu(v[0]);
                let g = t.gelu(v[0]);
                let s = t.add(r, g)?;
                let m = t.mul_const(s, consts.clone())?;
                let m = t.mul(m, s)?;
                Ok(t.sum(m))
            }),
        ),
        (
            "concat/permute/reshape/transpose/mean_axis",
            vec![rand(&[2, 3, 4], 11), rand(&[2, 2, 4], 12)],
            Box::new(|t, v| {
                let c = t.concat(&[v[0], v[1]], 1)?;
                let p = t.permute(c, &[2, 0, 1])?;
                let r = t.reshape(p, vec![8, 5])?;
                let w = t.transpose(r, 0, 1)?;
                let m = t.mean_axis(w, 1)?;
                let m = t.mul(m, m)?;
                Ok(t.sum(m))
            }),
        ),
        (
            "softmax",
            vec![rand(&[3, 5], 13), rand(&[3, 5], 14)],
            Box::new(|t, v| {
                let s = t.softmax(v[0], 1)?;
                let s = t.mul(s, v[1])?;
                Ok(t.sum(s))
            }),
        ),
        (
            "log_softmax+gather",
            vec![rand(&[4, 3], 15)],
            Box::new(|t, v| {
                let s = t.log_softmax(v[0], 1)?;
                let g = t.gather(s, &[0, 2, 1, 2])?;
                Ok(t.mean(g))
            }),
        ),
        (
            "conv2d(stride 2, pad 1)",
            vec![rand(&[2, 3, 6, 5], 16), rand(&[4, 3, 3, 3], 17), rand(&[4], 18)],
            Box::new(|t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                let y = t.mul(y, y)?;
                Ok(t.sum(y))
            }),
        ),
        (
            "conv2d(1x1)",
            vec![rand(&[2, 3, 4, 4], 19), rand(&[2, 3, 1, 1], 20)],
            Box::new(|t, v| {
                let y = t.conv2d(v[0], v[1], None, 1, 0)?;
                let y = t.gelu(y);
                Ok(t.sum(y))
            }),
        ),
        (
            "batch_norm(train)",
            vec![rand(&[3, 2, 3, 3], 21), rand(&[2], 22), rand(&[2], 23), rand(&[3, 2, 3, 3], 24)],
            Box::new(|t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], NormStats::Batch, 1e-5)?;
                let y = t.mul(y, v[3])?;
                Ok(t.sum(y))
            }),
        ),
        (
            "batch_norm(eval)",
            vec![rand(&[3, 2, 3, 3], 25), rand(&[2], 26), rand(&[2], 27), rand(&[3, 2, 3, 3], 28)],
            Box::new(move |t, v| {
                let stats = NormStats::Running { mean: &rm, var: &rv };
                let (y, _) = t.batch_norm(v[0], v[1], v[2], stats, 1e-5)?;
                let y = t.mul(y, v[3])?;
                Ok(t.sum(y))
            }),
        ),
        (
            "layer_norm",
            vec![rand(&[2, 3, 6], 29), rand(&[6], 30), rand(&[6], 31), rand(&[2, 3, 6], 32)],
            Box::new(|t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let y = t.mul(y, v[3])?;
                Ok(t.sum(y))
            }),
        ),
        (
            "dropout",
            vec![rand(&[20], 33)],
            Box::new(|t, v| {
                let y = t.dropout(v[0], 0.5, true, &mut Rng::new(3))?;
                let y = t.mul(y, y)?;
                Ok(t.sum(y))
            }),
        ),
        (
            "weighted_cross_entropy",
            vec![rand(&[4, 3], 34)],
            Box::new(move |t, v| weighted_cross_entropy(t, v[0], &targets, &weights)),
        ),
    ]
}

/// Runs everything and returns one report per case, in a fixed order.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for (name, inputs, f) in op_cases() {
        out.push(check_fn(name, &inputs, f, cfg)?);
    }

    let layer = |name: &str, p: &LayerParams<f64>, mode: Mode, x: &Tensor<f64>, f: &dyn Fn(&mut Graph<'_, f64>, Var) -> Result<Var>| {
        check_params(
            name,
            p,
            mode,
            |g| {
                let xv = g.input(x.clone());
                let y = f(g, xv)?;
                project(g, y, 99)
            },
            cfg,
        )
    };

    for kind in [BlockKind::Basic, BlockKind::Bottleneck] {
        let spec = ResidualBlockSpec { in_channels: 3, out_channels: 8, stride: 2, bottleneck_ratio: 4, kind };
        let block = ResidualBlock::new("b", spec);
        let mut p = LayerParams::new();
        block.init(&mut p, &mut Rng::new(40))?;
        let x = rand(&[2, 3, 6, 6], 41);
        for mode in [Mode::Train, Mode::Eval] {
            let name = format!("residual_block({kind:?}, {mode:?})");
            out.push(layer(&name, &p, mode, &x, &|g, x| block.forward(g, x))?);
        }
    }

    let lin = Linear::new("fc", 5, 3);
    let mut p = LayerParams::new();
    lin.init(&mut p, &mut Rng::new(42))?;
    out.push(layer("linear", &p, Mode::Train, &rand(&[4, 5], 43), &|g, x| lin.forward(g, x))?);

    let mha = MultiHeadAttention::new("mha", 8, 2)?;
    let mut p = LayerParams::new();
    mha.init(&mut p, &mut Rng::new(44))?;
    out.push(layer("multi_head_attention", &p, Mode::Eval, &rand(&[2, 4, 8], 45), &|g, x| mha.forward(g, x))?);

    let spec = AttentionSpec { embed_dim: 8, num_heads: 2, mlp_ratio: 2, num_layers: 1, dropout_p: 0.3 };
    let blk = TransformerBlock::new("blk", spec)?;
    let mut p = LayerParams::new();
    blk.init(&mut p, &mut Rng::new(46))?;
    out.push(layer("transformer_block(dropout)", &p, Mode::Train, &rand(&[2, 3, 8], 47), &|g, x| blk.forward(g, x))?);

    let pe = PatchEmbed::new("pe", 2, 2, 4, 4, 6)?;
    let mut p = LayerParams::new();
    pe.init(&mut p, &mut Rng::new(48))?;
    out.push(layer("patch_embed", &p, Mode::Eval, &rand(&[2, 2, 4, 4], 49), &|g, x| pe.forward(g, x))?);

    let model = Classifier::new(ModelConfig::tiny(Variant::Fusion, 3))?;
    let p = model.init_params::<f64>(50)?;
    out.push(check_params(
        "l2_penalty(all linear)",
        &p,
        Mode::Eval,
        |g| l2_penalty(g, L2Scope::AllLinear, 0.01).map(|v| v.expect("model has linear layers")),
        cfg,
    )?);

    let mut rng = Rng::new(51);
    let x = Tensor::new(vec![2, 3, 32, 32], (0..2 * 3 * 32 * 32).map(|_| rng.uniform()).collect())?;
    let targets = [1, 3];
    let weights = ClassWeights { w: vec![0.5, 1.5, 1.0, 2.0] };
    for variant in Variant::ALL {
        let model = Classifier::new(ModelConfig::tiny(variant, 4))?;
        let p = model.init_params::<f64>(52)?;
        for mode in [Mode::Train, Mode::Eval] {
            out.push(check_params(
                &format!("model({variant}, {mode:?})"),
                &p,
                mode,
                |g| {
                    let xv = g.input(x.clone());
                    let logits = model.forward(g, xv)?;
                    let ce = weighted_cross_entropy(g.tape_mut(), logits, &targets, &weights)?;
                    match l2_penalty(g, L2Scope::Head, 0.01)? {
                        Some(l2) => g.tape_mut().add(ce, l2),
                        None => Ok(ce),
                    }
                },
                &GradCheckConfig { coords_per_input: cfg.coords_per_input.min(8), ..cfg.clone() },
            )?);
        }
    }
    Ok(out)
}
