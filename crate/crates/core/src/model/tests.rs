use super::*;
use crate::gradcheck::{check_params, GradCheckConfig};
use crate::nn::{Graph, LayerParams, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Error;

fn images(n: usize, size: usize, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    let len = n * 3 * size * size;
    Tensor::new(vec![n, 3, size, size], (0..len).map(|_| rng.uniform()).collect()).unwrap()
}

fn logits<S: crate::tensor::Scalar>(model: &Classifier, p: &mut LayerParams<S>, x: &Tensor<S>, mode: Mode) -> Tensor<S> {
    let mut g = Graph::new(p, mode, Rng::new(5));
    let xv = g.input(x.clone());
    let y = model.forward(&mut g, xv).unwrap();
    g.value(y).clone()
}

#[test]
fn all_variants_share_the_shape_contract() {
    let x = images(3, 32, 1).cast::<f32>();
    for v in Variant::ALL {
        let model = Classifier::new(ModelConfig::tiny(v, 5)).unwrap();
        let mut p = model.init_params::<f32>(1).unwrap();
        let y = logits(&model, &mut p, &x, Mode::Train);
        assert_eq!(y.shape(), &[3, 5], "{v}");
        assert!(y.all_finite());
    }
}

#[test]
fn full_model_gradchecks() {
    let x = images(2, 32, 2);
    let mut rng = Rng::new(3);
    let target: Vec<f64> = (0..8).map(|_| rng.normal(0.0, 1.0)).collect();
    for v in Variant::ALL {
        let model = Classifier::new(ModelConfig::tiny(v, 4)).unwrap();
        let p = model.init_params::<f64>(4).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let report = check_params(
                &format!("model::{v}"),
                &p,
                mode,
                |g| {
                    let xv = g.input(x.clone());
                    let y = model.forward(g, xv)?;
                    let y = g.tape_mut().mul_const(y, target.clone())?;
                    Ok(g.tape_mut().sum(y))
                },
                &GradCheckConfig { coords_per_input: 8, ..GradCheckConfig::default() },
            )
            .unwrap();
            assert!(report.passed(), "{mode:?} {report}");
        }
    }
}

#[test]
fn zero_head_gives_uniform_probs() {
    let model = Classifier::new(ModelConfig::tiny(Variant::CnnOnly, 4)).unwrap();
    let mut p = model.init_params::<f32>(6).unwrap();
    p.zero_prefix("head.");
    let pred = model.predict(&mut p, images(2, 32, 7).cast()).unwrap();
    for row in &pred.probs {
        assert!(row.iter().all(|&q| (q - 0.25).abs() < 1e-12));
    }
    assert_eq!(pred.class_ids, vec![0, 0]);
}

#[test]
fn identical_images_give_identical_rows() {
    for v in Variant::ALL {
        let model = Classifier::new(ModelConfig::tiny(v, 3)).unwrap();
        let mut p = model.init_params::<f32>(8).unwrap();
        let one = images(1, 32, 9).cast::<f32>();
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let x = Tensor::new(vec![2, 3, 32, 32], data).unwrap();
        let y = logits(&model, &mut p, &x, Mode::Eval);
        assert_eq!(y.data()[..3], y.data()[3..]);
    }
}

#[test]
fn wrong_input_shapes_are_rejected() {
    let model = Classifier::new(ModelConfig::tiny(Variant::Fusion, 3)).unwrap();
    let mut p = model.init_params::<f32>(1).unwrap();
    let mut g = Graph::new(&mut p, Mode::Eval, Rng::new(0));
    let x = g.input(Tensor::zeros(vec![1, 1, 32, 32]));
    assert!(matches!(model.forward(&mut g, x), Err(Error::Dimension(_))));
    let x = g.input(Tensor::zeros(vec![1, 3, 16, 16]));
    assert!(matches!(model.forward(&mut g, x), Err(Error::Dimension(_))));

    let cfg = ModelConfig { patch_size: 5, ..ModelConfig::tiny(Variant::TransformerOnly, 3) };
    assert!(matches!(Classifier::new(cfg), Err(Error::Config(_))));
    let cfg = ModelConfig { num_classes: 1, ..ModelConfig::tiny(Variant::CnnOnly, 3) };
    assert!(matches!(Classifier::new(cfg), Err(Error::Config(_))));
}

#[test]
fn default_config_geometry() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.cnn.feature_size(224), Some(14));
    let model = Classifier::new(cfg.clone()).unwrap();
    assert_eq!(model.num_tokens(), Some(196));
    let vit = Classifier::new(ModelConfig { variant: Variant::TransformerOnly, ..cfg }).unwrap();
    assert_eq!(vit.num_tokens(), Some(196));
    let big = Classifier::new(ModelConfig::resnet50_like(Variant::CnnOnly, 10)).unwrap();
    let p = big.init_params::<f32>(0).unwrap();
    assert_eq!(p.names().iter().filter(|n| n.contains(".block") && n.ends_with("conv1.weight")).count(), 16);
}

fn dot_rows(x: &[f64], w: &[f64], b: &[f64], out: usize) -> Vec<f64> {
    let rows = w.len() / out;
    assert_eq!(rows, x.len());
    (0..out).map(|j| b[j] + (0..rows).map(|i| x[i] * w[i * out + j]).sum::<f64>()).collect()
}

#[test]
fn zeroed_transformer_branches_classify_mean_patch_embedding() {
    let cfg = ModelConfig { attention: crate::nn::AttentionSpec { num_layers: 2, ..ModelConfig::tiny(Variant::TransformerOnly, 3).attention }, ..ModelConfig::tiny(Variant::TransformerOnly, 3) };
    let model = Classifier::new(cfg).unwrap();
    let mut p = model.init_params::<f64>(10).unwrap();
    for b in 1..=2 {
        p.zero_prefix(&format!("transformer.block{b}.attn."));
        p.zero_prefix(&format!("transformer.block{b}.mlp."));
    }
    let x = images(1, 32, 11);
    let y = logits(&model, &mut p, &x, Mode::Eval);

    // Oracle: mean over the 16 tokens of (patch · W + b + pos), then the head.
    let (patch, d) = (8, 16);
    let w = p.get("transformer.embed.proj.weight").unwrap().data();
    let bias = p.get("transformer.embed.proj.bias").unwrap().data();
    let pos = p.get("transformer.embed.pos_embed").unwrap().data();
    let mut mean = vec![0.0; d];
    for gy in 0..4 {
        for gx in 0..4 {
            let mut v = Vec::new();
            for c in 0..3 {
                for py in 0..patch {
                    for px in 0..patch {
                        v.push(x.data()[(c * 32 + gy * patch + py) * 32 + gx * patch + px]);
                    }
                }
            }
            let tok = dot_rows(&v, w, bias, d);
            for e in 0..d {
                mean[e] += (tok[e] + pos[(gy * 4 + gx) * d + e]) / 16.0;
            }
        }
    }
    let want = dot_rows(&mean, p.get("head.fc.weight").unwrap().data(), p.get("head.fc.bias").unwrap().data(), 3);
    for (a, b) in y.data().iter().zip(&want) {
        assert!((a - b).abs() <= 1e-9);
    }
}

fn layer_norm_vec(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    x.iter().enumerate().map(|(i, v)| gamma[i] * (v - mean) / (var + 1e-5).sqrt() + beta[i]).collect()
}

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

#[test]
fn single_patch_transformer_is_an_mlp_on_the_flat_image() {
    let base = ModelConfig::tiny(Variant::TransformerOnly, 3);
    let cfg = ModelConfig { image_size: 8, patch_size: 8, ..base };
    let model = Classifier::new(cfg).unwrap();
    assert_eq!(model.num_tokens(), Some(1));
    let p64 = model.init_params::<f64>(12).unwrap();
    let x = images(1, 8, 13);
    let mut p32 = p64.cast::<f32>();
    let got = logits(&model, &mut p32, &x.cast(), Mode::Eval);

    let g = |n: &str| p64.get(n).unwrap().data();
    let d = 16;
    let lin = |v: &[f64], name: &str, out: usize| dot_rows(v, g(&format!("{name}.weight")), g(&format!("{name}.bias")), out);
    let mut h: Vec<f64> = lin(x.data(), "transformer.embed.proj", d);
    for (e, p) in h.iter_mut().zip(g("transformer.embed.pos_embed")) {
        *e += p;
    }
    let b = "transformer.block1";
    // One token attends only to itself: attention = out(v(·)).
    let ln = layer_norm_vec(&h, g(&format!("{b}.ln1.weight")), g(&format!("{b}.ln1.bias")));
    let att = lin(&lin(&ln, &format!("{b}.attn.v"), d), &format!("{b}.attn.out"), d);
    h.iter_mut().zip(&att).for_each(|(a, b)| *a += b);
    let ln = layer_norm_vec(&h, g(&format!("{b}.ln2.weight")), g(&format!("{b}.ln2.bias")));
    let hid: Vec<f64> = lin(&ln, &format!("{b}.mlp.fc1"), 2 * d).into_iter().map(gelu_scalar).collect();
    let mlp = lin(&hid, &format!("{b}.mlp.fc2"), d);
    h.iter_mut().zip(&mlp).for_each(|(a, b)| *a += b);
    let want = lin(&h, "head.fc", 3);
    for (a, b) in got.to_f64_vec().iter().zip(&want) {
        assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }
}

#[test]
fn seeds_change_initialization() {
    let model = Classifier::new(ModelConfig::tiny(Variant::TransformerOnly, 3)).unwrap();
    let x = images(1, 32, 14).cast::<f32>();
    let mut a = model.init_params::<f32>(1).unwrap();
    let mut b = model.init_params::<f32>(2).unwrap();
    assert_ne!(logits(&model, &mut a, &x, Mode::Eval), logits(&model, &mut b, &x, Mode::Eval));
}

#[test]
fn init_is_deterministic_and_norms_start_at_one() {
    for v in Variant::ALL {
        let model = Classifier::new(ModelConfig::tiny(v, 3)).unwrap();
        let a = model.init_params::<f32>(21).unwrap();
        let b = model.init_params::<f32>(21).unwrap();
        assert!(a.bitwise_eq(&b));
        for (name, t, kind) in a.iter() {
            if kind == crate::nn::ParamKind::NormScale {
                assert!(t.data().iter().all(|&s| s == 1.0), "{name}");
            }
            if kind == crate::nn::ParamKind::NormShift || kind == crate::nn::ParamKind::Bias {
                assert!(t.data().iter().all(|&s| s == 0.0), "{name}");
            }
        }
    }
}

#[test]
fn fusion_concat_width_and_feature_bundle() {
    let model = Classifier::new(ModelConfig::tiny(Variant::Fusion, 3)).unwrap();
    let cfg = model.config();
    assert_eq!(model.input_layer().in_features, cfg.local_dim() + cfg.global_dim());
    assert_eq!(model.num_tokens(), Some(64));
    let mut p = model.init_params::<f32>(15).unwrap();
    let mut g = Graph::new(&mut p, Mode::Eval, Rng::new(0));
    let x = g.input(images(2, 32, 16).cast());
    let (y, bundle) = model.forward_fusion(&mut g, x).unwrap();
    assert_eq!(g.shape(bundle.local), &[2, 16]);
    assert_eq!(g.shape(bundle.global), &[2, 16]);
    assert_eq!(g.shape(y), &[2, 3]);
    assert!(g.value(bundle.local).all_finite() && g.value(bundle.global).all_finite());
}

/// Builds a CNN-only model whose backbone is the fusion model's and whose head uses
/// only the local rows of the fusion head.
fn matched_cnn_head(fusion: &LayerParams<f64>, local_dim: usize) -> (Classifier, LayerParams<f64>) {
    let cnn = Classifier::new(ModelConfig::tiny(Variant::CnnOnly, 3)).unwrap();
    let mut p = cnn.init_params::<f64>(99).unwrap();
    for name in p.names() {
        if name.starts_with("cnn.") || name == "head.fc.bias" {
            p.set(&name, fusion.get(&name).unwrap().clone()).unwrap();
        }
    }
    let w = fusion.get("head.fc.weight").unwrap();
    let k = w.shape()[1];
    let local = Tensor::new(vec![local_dim, k], w.data()[..local_dim * k].to_vec()).unwrap();
    p.set("head.fc.weight", local).unwrap();
    (cnn, p)
}

#[test]
fn fusion_with_global_columns_zeroed_matches_cnn_head() {
    let model = Classifier::new(ModelConfig::tiny(Variant::Fusion, 3)).unwrap();
    let local_dim = model.config().local_dim();
    let mut p = model.init_params::<f64>(17).unwrap();
    let w = p.get_mut("head.fc.weight").unwrap();
    let k = w.shape()[1];
    w.data_mut()[local_dim * k..].iter_mut().for_each(|v| *v = 0.0);
    let (cnn, mut cp) = matched_cnn_head(&p, local_dim);
    let x = images(3, 32, 18);
    let a = logits(&model, &mut p, &x, Mode::Eval);
    let b = logits(&cnn, &mut cp, &x, Mode::Eval);
    assert!(a.max_abs_diff(&b) <= 1e-6);

    // Same with the whole transformer zeroed as well.
    p.zero_prefix("transformer.");
    let a = logits(&model, &mut p, &x, Mode::Eval);
    assert!(a.max_abs_diff(&b) <= 1e-6);
}

#[test]
fn predict_tie_break_and_argmax() {
    let p = Prediction::from_logits(&Tensor::<f64>::from_f64(vec![1, 2], &[0.0, 0.0]).unwrap());
    assert_eq!(p.class_ids, vec![0]);
    assert_eq!(p.probs[0], vec![0.5, 0.5]);
    let p = Prediction::from_logits(&Tensor::<f64>::from_f64(vec![1, 3], &[1.0, 3.0, 2.0]).unwrap());
    assert_eq!(p.class_ids, vec![1]);
    assert_eq!(argmax(&[2.0, 5.0, 5.0]), 1);
}

#[test]
fn predict_rows_sum_to_one_and_repeat_bitwise() {
    let model = Classifier::new(ModelConfig::tiny(Variant::Fusion, 4)).unwrap();
    let mut p = model.init_params::<f32>(19).unwrap();
    let x = images(4, 32, 20).cast::<f32>();
    let first = model.predict(&mut p, x.clone()).unwrap();
    for row in &first.probs {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
    let second = model.predict(&mut p, x).unwrap();
    assert_eq!(first, second);
}

#[test]
fn bias_translation_leaves_probs_unchanged() {
    let model = Classifier::new(ModelConfig::tiny(Variant::CnnOnly, 4)).unwrap();
    let mut p = model.init_params::<f32>(22).unwrap();
    let x = images(3, 32, 23).cast::<f32>();
    let before = model.predict(&mut p, x.clone()).unwrap();
    let before_logits = logits(&model, &mut p, &x, Mode::Eval);
    p.get_mut("head.fc.bias").unwrap().data_mut().iter_mut().for_each(|b| *b += 3.0);
    let after = model.predict(&mut p, x.clone()).unwrap();
    let after_logits = logits(&model, &mut p, &x, Mode::Eval);
    assert_eq!(before.class_ids, after.class_ids);
    for (r0, r1) in before.probs.iter().zip(&after.probs) {
        for (a, b) in r0.iter().zip(r1) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
    for (a, b) in before_logits.data().iter().zip(after_logits.data()) {
        assert!((b - a - 3.0).abs() <= 1e-5);
    }
}

#[test]
fn config_toml_roundtrip() {
    for v in Variant::ALL {
        let cfg = ModelConfig::tiny(v, 7);
        assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
    let partial = ModelConfig::from_toml("variant = \"cnn_only\"\nnum_classes = 3\n").unwrap();
    assert_eq!(partial.cnn, CnnConfig::default());
    assert!(ModelConfig::from_toml("nonsense = 1").is_err());
    assert!("vit".parse::<Variant>().is_err());
    assert_eq!("fusion".parse::<Variant>().unwrap(), Variant::Fusion);
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let cfg = ModelConfig::tiny(Variant::Fusion, 3);
    let model = Classifier::new(cfg.clone()).unwrap();
    let params = model.init_params::<f32>(24).unwrap();
    let mut ckpt = Checkpoint::new(cfg, vec!["a".into(), "b".into(), "c".into()], params);
    ckpt.state.insert("adam.m.head.fc.weight".into(), Tensor::full(vec![32, 3], 0.25f32));
    ckpt.meta = serde_json::json!({"epoch": 3});
    let mut bytes = Vec::new();
    ckpt.write_to(&mut bytes).unwrap();
    let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, ckpt);
    assert!(back.params.bitwise_eq(&ckpt.params));

    assert!(matches!(Checkpoint::read_from(&mut &bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
}

#[test]
fn checkpoint_rejects_config_param_disagreement() {
    let cfg = ModelConfig::tiny(Variant::CnnOnly, 3);
    let model = Classifier::new(cfg.clone()).unwrap();
    let params = model.init_params::<f32>(25).unwrap();
    let wider = ModelConfig { num_classes: 4, ..cfg };
    let ckpt = Checkpoint::new(wider, vec!["a".into(), "b".into(), "c".into(), "d".into()], params);
    let err = ckpt.validate_params().unwrap_err();
    assert!(err.to_string().contains("head.fc"), "{err}");
    let mut bytes = Vec::new();
    ckpt.write_to(&mut bytes).unwrap();
    assert!(Checkpoint::read_from(&mut bytes.as_slice()).is_err());
}
