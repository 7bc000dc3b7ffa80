use proptest::prelude::*;
use wdgda::data::{augment, kfold_split, normalize, patch_origins, Mask, Volume};
use wdgda::losses::{
    content_encoder_objective, dice_metric, gradient_penalty, jaccard_metric, latent_content_loss,
    self_reconstruction_loss, total_loss, GeneratorTerms, LossWeights,
};
use wdgda::networks::{ContentDiscriminator, Domain, LinearCritic};
use wdgda::tensor::Tensor;
use wdgda::Result;

fn scalar(v: f64) -> Tensor {
    Tensor::scalar(v)
}

fn terms(v: [f64; 8]) -> GeneratorTerms {
    GeneratorTerms {
        recon_x: scalar(v[0]),
        recon_y: scalar(v[1]),
        latent_content: scalar(v[2]),
        latent_style: scalar(v[3]),
        cyc: scalar(v[4]),
        wgan_x: scalar(v[5]),
        wgan_y: scalar(v[6]),
        content_adv: scalar(v[7]),
    }
}

/// Per-sample sigmoid of a fixed linear map, standing in for the content
/// discriminator.
struct LogisticDisc(Tensor);

impl ContentDiscriminator for LogisticDisc {
    fn content_discriminate(&self, content: &Tensor) -> Result<Tensor> {
        Ok(content.mul(&self.0)?.sum_per_sample()?.sigmoid())
    }
}

fn weights_from(v: [f64; 6]) -> LossWeights {
    LossWeights {
        lambda_wgan: v[0],
        lambda_recon: v[1],
        lambda_cyc: v[2],
        lambda_latent: v[3],
        lambda_content: v[4],
        alpha: v[5],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jaccard_is_dice_over_two_minus_dice(
        pair in prop::collection::vec((0u8..2, 0u8..2), 1..200)
    ) {
        let (a, b): (Vec<u8>, Vec<u8>) = pair.into_iter().unzip();
        let d = dice_metric(&a, &b).unwrap();
        let j = jaccard_metric(&a, &b).unwrap();
        prop_assert!((j - d / (2.0 - d)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
    }

    #[test]
    fn l1_losses_are_symmetric_nonnegative_and_zero_on_equal(
        a in prop::collection::vec(-5.0f64..5.0, 12),
        b in prop::collection::vec(-5.0f64..5.0, 12),
    ) {
        let ta = Tensor::new(a, &[2, 6]).unwrap();
        let tb = Tensor::new(b, &[2, 6]).unwrap();
        for f in [self_reconstruction_loss, latent_content_loss] {
            let ab = f(&ta, &tb).unwrap().item().unwrap();
            let ba = f(&tb, &ta).unwrap().item().unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(f(&ta, &ta).unwrap().item().unwrap(), 0.0);
            if ta.data() != tb.data() {
                prop_assert!(ab > 0.0);
            }
        }
    }

    #[test]
    fn linear_critic_penalty_is_analytic(
        norm in 0.05f64..4.0,
        wseed in any::<u64>(),
        pseed in any::<u64>(),
        scale in 0.1f64..10.0,
    ) {
        let c = LinearCritic::with_norm(&[1, 2, 2, 2], norm, wseed).unwrap();
        let real = Tensor::random_uniform(&[3, 1, 2, 2, 2], -scale, scale, pseed);
        let fake = Tensor::random_uniform(&[3, 1, 2, 2, 2], -scale, scale, pseed ^ 1);
        let gp = gradient_penalty(&c, Domain::Y, &real, &fake, pseed).unwrap().item().unwrap();
        prop_assert!((gp - (norm - 1.0).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn total_loss_is_linear_in_each_weight(
        t in prop::array::uniform8(-3.0f64..3.0),
        w in prop::array::uniform6(0.0f64..10.0),
        k in 0usize..5,
        delta in 0.0f64..5.0,
    ) {
        let tt = terms(t);
        let base = weights_from(w);
        let f = |lw: &LossWeights| total_loss(lw, &tt).unwrap().item().unwrap();
        let bump = |d: f64| {
            let mut v = w;
            v[k] += d;
            weights_from(v)
        };
        // f(w + d·e_k) is affine in d
        let (f0, f1, f2) = (f(&base), f(&bump(delta)), f(&bump(2.0 * delta)));
        prop_assert!((f2 - 2.0 * f1 + f0).abs() < 1e-9 * (1.0 + f0.abs() + f2.abs()));
        prop_assert!((f(&base.scaled(2.0)) - 2.0 * f0).abs() < 1e-9 * (1.0 + f0.abs()));
    }

    #[test]
    fn encoder_objective_ignores_domain_order(
        w in prop::collection::vec(-2.0f64..2.0, 4),
        a in prop::collection::vec(-2.0f64..2.0, 8),
        b in prop::collection::vec(-2.0f64..2.0, 8),
    ) {
        let d = LogisticDisc(Tensor::new(w, &[4]).unwrap());
        let za = Tensor::new(a, &[2, 4]).unwrap();
        let zb = Tensor::new(b, &[2, 4]).unwrap();
        let ab = content_encoder_objective(&d, &za, &zb).unwrap().item().unwrap();
        let ba = content_encoder_objective(&d, &zb, &za).unwrap().item().unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= std::f64::consts::LN_2 - 1e-12);
    }

    #[test]
    fn normalize_is_standardizing_and_idempotent(
        v in prop::collection::vec(-100.0f64..100.0, 27),
    ) {
        prop_assume!(v.iter().any(|&x| (x - v[0]).abs() > 1e-3));
        let vol = Volume::new([3, 3, 3], [1.0; 3], v).unwrap();
        let n = normalize(&vol);
        let len = n.voxels.len() as f64;
        let mean = n.voxels.iter().sum::<f64>() / len;
        let std = (n.voxels.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / len).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((std - 1.0).abs() < 1e-9);
        let twice = normalize(&n);
        for (a, b) in n.voxels.iter().zip(&twice.voxels) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn augmentation_moves_volume_and_mask_together(
        labels in prop::collection::vec(0u8..2, 2 * 4 * 4),
        seed in any::<u64>(),
    ) {
        // encode each voxel's position in its intensity so pairing is checkable
        let voxels: Vec<f64> = labels.iter().enumerate().map(|(i, &l)| i as f64 * 2.0 + l as f64).collect();
        let vol = Volume::new([2, 4, 4], [1.0; 3], voxels).unwrap();
        let mask = Mask::new([2, 4, 4], labels).unwrap();
        let (v2, m2) = augment(&vol, &mask, seed).unwrap();
        prop_assert_eq!(m2.foreground(), mask.foreground());
        for (v, &l) in v2.voxels.iter().zip(&m2.labels) {
            prop_assert_eq!((*v as u64 % 2) as u8, l);
        }
        let mut seen: Vec<u64> = v2.voxels.iter().map(|&v| v as u64 / 2).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..32).collect::<Vec<u64>>());
    }

    #[test]
    fn unit_stride_patch_count(
        dims in prop::array::uniform3(1usize..9),
        patch in prop::array::uniform3(1usize..9),
    ) {
        prop_assume!((0..3).all(|i| patch[i] <= dims[i]));
        let origins = patch_origins(dims, patch, [1, 1, 1], false).unwrap();
        let expected: usize = (0..3).map(|i| dims[i] - patch[i] + 1).product();
        prop_assert_eq!(origins.len(), expected);
    }

    #[test]
    fn kfold_is_a_balanced_partition(n in 2usize..60, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ids: Vec<usize> = (0..n).collect();
        let folds = kfold_split(&ids, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flat_map(|(_, t)| t.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(&all, &ids);
        let sizes: Vec<usize> = folds.iter().map(|(_, t)| t.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for (train, test) in &folds {
            prop_assert_eq!(train.len() + test.len(), n);
            prop_assert!(train.iter().all(|i| !test.contains(i)));
        }
        prop_assert_eq!(kfold_split(&ids, k, seed).unwrap(), folds);
    }
}

#[test]
fn dice_jaccard_worked_example() {
    let mut a = vec![0u8; 16];
    let mut b = vec![0u8; 16];
    a[..8].fill(1);
    b[4..12].fill(1);
    assert_eq!(dice_metric(&a, &b).unwrap(), 0.5);
    assert_eq!(jaccard_metric(&a, &b).unwrap(), 1.0 / 3.0);
}

#[test]
fn total_loss_reference_values() {
    let ones = terms([1.0; 8]);
    let w = weights_from([1.0, 10.0, 0.1, 10.0, 1.0, 10.0]);
    // wgan 2·1, recon 2·10, cyc 0.1, latent 2·10, content 1
    assert!((total_loss(&w, &ones).unwrap().item().unwrap() - 43.1).abs() < 1e-12);
    assert_eq!(total_loss(&weights_from([0.0; 6]), &ones).unwrap().item().unwrap(), 0.0);
    let mut bad = terms([1.0; 8]);
    bad.cyc = scalar(f64::NAN);
    let err = total_loss(&w, &bad).unwrap_err();
    assert!(err.to_string().contains("cyc"), "{err}");
}
