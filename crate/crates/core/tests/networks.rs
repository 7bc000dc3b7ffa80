use wdgda::losses::gradient_penalty;
use wdgda::networks::{
    dense_block_channels, ContentDiscriminator, Critic, Domain, Group, LinearCritic, MlpCritic, ModelBundle,
    NetConfig, ParamGroup, Translator,
};
use wdgda::tensor::{grad, Tensor};

fn small_config() -> NetConfig {
    NetConfig {
        patch: [5, 8, 8],
        width: 4,
        style_hidden: 8,
        init_std: 0.2,
        ..NetConfig::default()
    }
}

fn bundle() -> ModelBundle {
    ModelBundle::new(small_config(), 11).unwrap()
}

fn input(b: &ModelBundle, n: usize, seed: u64) -> Tensor {
    Tensor::random_uniform(&b.config.patch_shape(n), -1.0, 1.0, seed)
}

fn zeroed(p: &ParamGroup) -> ParamGroup {
    let mut out = ParamGroup::default();
    for (name, t) in p.iter() {
        out.insert(name.clone(), Tensor::parameter(vec![0.0; t.numel()], t.shape(), t.dtype()).unwrap());
    }
    out
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn content_code_shape_and_finiteness() {
    let b = bundle();
    let z = b.encode_content(Domain::X, &Tensor::zeros(&b.config.patch_shape(2))).unwrap();
    assert_eq!(z.shape(), &b.config.content_shape(2));
    assert_eq!(z.shape(), &[2, 8, 5, 2, 2]);
    assert!(z.is_finite());
}

#[test]
fn wrong_input_shape_is_rejected() {
    let b = bundle();
    let bad = Tensor::zeros(&[1, 1, 5, 12, 12]);
    assert!(b.encode_content(Domain::X, &bad).is_err());
    assert!(b.encode_style(Domain::Y, &bad).is_err());
    assert!(b.critic(Domain::X, &bad).is_err());
}

#[test]
fn content_encoders_with_shared_weights_agree() {
    let mut b = bundle();
    b.set_group(Group::EncContentY, b.group(Group::EncContentX).clone());
    let x = input(&b, 2, 3);
    let zx = b.encode_content(Domain::X, &x).unwrap();
    let zy = b.encode_content(Domain::Y, &x).unwrap();
    assert!(zx.bit_eq(&zy));
}

#[test]
fn single_voxel_perturbation_reaches_the_content_code() {
    let b = bundle();
    let x = input(&b, 1, 4);
    let mut data = x.data().to_vec();
    let mid = data.len() / 2;
    data[mid] += 0.5;
    let x2 = Tensor::new(data, x.shape()).unwrap();
    let z1 = b.encode_content(Domain::X, &x).unwrap();
    let z2 = b.encode_content(Domain::X, &x2).unwrap();
    assert!(max_abs_diff(&z1, &z2) > 1e-8);
}

#[test]
fn style_codes_are_global_and_sensitive_to_intensity() {
    let b = bundle();
    let x = input(&b, 1, 5);
    let s = b.encode_style(Domain::X, &x).unwrap();
    assert_eq!(s.shape(), &[1, b.config.style_dim]);
    let shifted = x.add_scalar(0.7);
    let s2 = b.encode_style(Domain::X, &shifted).unwrap();
    assert!(max_abs_diff(&s, &s2) > 1e-8);

    let c = Tensor::full(&b.config.patch_shape(1), 0.3);
    let a1 = b.encode_style(Domain::Y, &c).unwrap();
    let a2 = b.encode_style(Domain::Y, &c).unwrap();
    assert!(a1.is_finite() && a1.bit_eq(&a2));
}

#[test]
fn style_encoder_rows_are_batch_independent() {
    let b = bundle();
    let x = input(&b, 2, 6);
    let both = b.encode_style(Domain::X, &x).unwrap();
    let first = b.encode_style(Domain::X, &x.narrow(0, 0, 1).unwrap()).unwrap();
    let second = b.encode_style(Domain::X, &x.narrow(0, 1, 1).unwrap()).unwrap();
    let sd = b.config.style_dim;
    assert!(max_abs_diff(&both.narrow(0, 0, 1).unwrap(), &first) < 1e-12);
    assert!(max_abs_diff(&both.narrow(0, 1, 1).unwrap(), &second) < 1e-12);
    assert_eq!(both.numel(), 2 * sd);
}

#[test]
fn decode_round_trip_shape_for_several_geometries() {
    for patch in [[5, 8, 8], [5, 16, 12], [3, 4, 8]] {
        let b = ModelBundle::new(NetConfig { patch, ..small_config() }, 1).unwrap();
        let x = input(&b, 2, 7);
        for d in [Domain::X, Domain::Y] {
            let lp = b.encode(d, &x).unwrap();
            // content from either domain must be accepted by either decoder
            for g in [Domain::X, Domain::Y] {
                let out = b.decode(g, &lp.content, &lp.style).unwrap();
                assert_eq!(out.shape(), x.shape());
            }
        }
    }
}

#[test]
fn decoder_output_is_bounded_by_the_output_scale() {
    let b = bundle();
    let x = input(&b, 1, 8).scale(10.0);
    let lp = b.encode(Domain::X, &x).unwrap();
    let out = b.decode(Domain::X, &lp.content, &lp.style).unwrap();
    assert!(out.data().iter().all(|v| v.abs() <= b.config.output_scale));
}

#[test]
fn zero_style_decodes_to_a_finite_image_and_styles_matter() {
    let b = bundle();
    let x = input(&b, 1, 9);
    let z = b.encode_content(Domain::X, &x).unwrap();
    let img = b.content_only_image(&z).unwrap();
    assert!(img.is_finite());
    assert_eq!(img.shape(), x.shape());
    let s1 = Tensor::random_uniform(&[1, b.config.style_dim], -1.0, 1.0, 1);
    let s2 = Tensor::random_uniform(&[1, b.config.style_dim], -1.0, 1.0, 2);
    let a = b.decode(Domain::Y, &z, &s1).unwrap();
    let c = b.decode(Domain::Y, &z, &s2).unwrap();
    assert!(max_abs_diff(&a, &c) > 1e-8);
}

#[test]
fn latent_shape_mismatch_is_rejected() {
    let b = bundle();
    let z = Tensor::zeros(&[1, 8, 5, 3, 3]);
    let s = Tensor::zeros(&[1, b.config.style_dim]);
    assert!(b.decode(Domain::X, &z, &s).is_err());
    assert!(b.segment(&z).is_err());
}

#[test]
fn zero_critic_scores_zero() {
    let mut b = bundle();
    b.set_group(Group::CriticX, zeroed(b.group(Group::CriticX)));
    let out = b.critic(Domain::X, &input(&b, 3, 10)).unwrap();
    assert_eq!(out.shape(), &[3]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn critic_is_permutation_equivariant() {
    let b = bundle();
    let x = input(&b, 2, 12);
    let (x0, x1) = (x.narrow(0, 0, 1).unwrap(), x.narrow(0, 1, 1).unwrap());
    let swapped = Tensor::concat(&[&x1, &x0], 0).unwrap();
    let a = b.critic(Domain::Y, &x).unwrap();
    let s = b.critic(Domain::Y, &swapped).unwrap();
    assert!((a.data()[0] - s.data()[1]).abs() < 1e-12);
    assert!((a.data()[1] - s.data()[0]).abs() < 1e-12);
}

#[test]
fn linear_critic_is_a_dot_product() {
    let w = Tensor::random_uniform(&[1, 2, 2, 2], -1.0, 1.0, 3);
    let c = LinearCritic::new(w.clone());
    let x = Tensor::random_uniform(&[2, 1, 2, 2, 2], -1.0, 1.0, 4);
    let out = c.critic(Domain::X, &x).unwrap();
    for i in 0..2 {
        let dot: f64 = x.data()[i * 8..(i + 1) * 8].iter().zip(w.data()).map(|(a, b)| a * b).sum();
        assert!((out.data()[i] - dot).abs() < 1e-12);
    }
}

#[test]
fn mlp_critic_scores_one_value_per_sample() {
    let c = MlpCritic::new(1, 4, 1);
    let out = c.critic(Domain::X, &Tensor::zeros(&[3, 1, 1, 1, 1])).unwrap();
    assert_eq!(out.shape(), &[3]);
    assert!(c.critic(Domain::X, &Tensor::zeros(&[3, 2])).is_err());
}

#[test]
fn critic_supports_double_backward() {
    let b = bundle();
    let real = input(&b, 2, 13);
    let fake = input(&b, 2, 14);
    let gp = gradient_penalty(&b, Domain::X, &real, &fake, 5).unwrap();
    let params = b.parameters_of(&[Group::CriticX]);
    let refs: Vec<&Tensor> = params.iter().map(|(_, t)| t).collect();
    let g = grad(&gp, &refs, false).unwrap();
    assert!(g.iter().all(Tensor::is_finite));
    assert!(g.iter().any(|t| t.data().iter().any(|v| *v != 0.0)));
}

#[test]
fn content_disc_probabilities() {
    let mut b = bundle();
    let z = b.encode_content(Domain::X, &input(&b, 2, 15)).unwrap();
    let p = b.content_discriminate(&z).unwrap();
    assert_eq!(p.shape(), &[2]);
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(p.bit_eq(&b.content_discriminate(&z).unwrap()));

    let mut disc = b.group(Group::ContentDisc).clone();
    for name in ["out.weight", "out.bias"] {
        let t = disc.get(name).unwrap();
        let zero = Tensor::parameter(vec![0.0; t.numel()], t.shape(), t.dtype()).unwrap();
        disc.insert(name, zero);
    }
    b.set_group(Group::ContentDisc, disc);
    let half = b.content_discriminate(&z).unwrap();
    assert!(half.data().iter().all(|&v| v == 0.5));
}

#[test]
fn segmentation_logits_and_probabilities() {
    let b = bundle();
    let z = Tensor::random_uniform(&b.config.content_shape(2), -1.0, 1.0, 16);
    let logits = b.segment(&z).unwrap();
    assert_eq!(logits.shape(), &[2, 2, 5, 8, 8]);
    let p = logits.softmax_channels().unwrap();
    let spatial = 5 * 8 * 8;
    for n in 0..2 {
        for v in 0..spatial {
            let s = p.data()[n * 2 * spatial + v] + p.data()[n * 2 * spatial + spatial + v];
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn dense_block_growth_law() {
    assert_eq!(dense_block_channels(8, 4, 3), vec![8, 12, 16, 20]);
    let b = bundle();
    let head = b.group(Group::SegHead);
    for l in 0..3 {
        let w = head.get(&format!("block1.layer{l}.weight")).unwrap();
        assert_eq!(w.shape()[1], 8 + l * 4);
        assert_eq!(w.shape()[0], 4);
    }
}

#[test]
fn parameter_names_are_unique_and_finite() {
    let b = bundle();
    let names: Vec<String> = b.named_parameters().into_iter().map(|(n, _)| n).collect();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    assert!(b.all_finite());
}

#[test]
fn initialization_is_seeded() {
    let a = ModelBundle::new(small_config(), 3).unwrap();
    let b = ModelBundle::new(small_config(), 3).unwrap();
    let c = ModelBundle::new(small_config(), 4).unwrap();
    assert!(Group::ALL.iter().all(|&g| a.group_bit_eq(&b, g)));
    assert!(!a.group_bit_eq(&c, Group::DecX));
}
