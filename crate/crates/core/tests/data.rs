use std::fs;

use wdgda::data::{
    augment, extract_patches, generate_phantom, kfold_split, normalize, read_mask, read_volume, reassemble,
    write_mask, write_volume, Appearance, Augmentation, Mask, PatchLayout, PhantomSpec, Volume,
};
use wdgda::networks::Domain;
use wdgda::Error;

#[test]
fn phantoms_are_deterministic() {
    let spec = PhantomSpec::new(Domain::Y, 42);
    let (v1, m1) = generate_phantom(&spec).unwrap();
    let (v2, m2) = generate_phantom(&spec).unwrap();
    assert_eq!(v1, v2);
    assert_eq!(m1, m2);
    assert!(v1.voxels.iter().zip(&v2.voxels).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn matched_geometry_shares_the_mask_only() {
    let (vx, mx) = generate_phantom(&PhantomSpec::new(Domain::X, 9)).unwrap();
    let (vy, my) = generate_phantom(&PhantomSpec::new(Domain::Y, 9)).unwrap();
    assert_eq!(mx, my);
    assert_ne!(vx, vy);
}

#[test]
fn foreground_fraction_bounds_over_100_seeds() {
    for seed in 0..100 {
        let (_, m) = generate_phantom(&PhantomSpec::new(Domain::X, seed)).unwrap();
        let f = m.foreground_fraction();
        assert!((0.02..=0.5).contains(&f), "seed {seed}: foreground fraction {f}");
    }
}

#[test]
fn domains_render_organs_with_opposite_contrast() {
    let (vx, m) = generate_phantom(&PhantomSpec::new(Domain::X, 3)).unwrap();
    let (vy, _) = generate_phantom(&PhantomSpec::new(Domain::Y, 3)).unwrap();
    let contrast = |v: &Volume| {
        let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0, 0.0, 0);
        for (x, &l) in v.voxels.iter().zip(&m.labels) {
            if l == 1 {
                fg += x;
                nf += 1;
            } else {
                bg += x;
                nb += 1;
            }
        }
        fg / nf as f64 - bg / nb as f64
    };
    assert!(contrast(&vx) > 0.0);
    assert!(contrast(&vy) < 0.0);
}

#[test]
fn target_variants_differ() {
    let base = PhantomSpec::new(Domain::Y, 5);
    let (a, _) = generate_phantom(&PhantomSpec {
        appearance: Appearance::y_variant(0),
        ..base.clone()
    })
    .unwrap();
    let (b, _) = generate_phantom(&PhantomSpec {
        appearance: Appearance::y_variant(1),
        ..base
    })
    .unwrap();
    assert_ne!(a, b);
}

#[test]
fn too_small_dims_are_rejected() {
    let spec = PhantomSpec::new(Domain::X, 1).with_dims([1, 2, 2]);
    assert!(generate_phantom(&spec).is_err());
}

#[test]
fn normalize_worked_example() {
    let v = Volume::new([1, 1, 3], [1.0; 3], vec![1.0, 2.0, 3.0]).unwrap();
    let n = normalize(&v);
    // population std of [1, 2, 3] is sqrt(2/3)
    let s = (2.0f64 / 3.0).sqrt();
    for (got, want) in n.voxels.iter().zip([-1.0 / s, 0.0, 1.0 / s]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((n.voxels[2] - 1.2247).abs() < 1e-4);
    let c = Volume::new([1, 2, 2], [1.0; 3], vec![4.0; 4]).unwrap();
    assert!(normalize(&c).voxels.iter().all(|&x| x == 0.0));
}

#[test]
fn patch_extraction_counts_and_tiling() {
    let (v, m) = generate_phantom(&PhantomSpec::new(Domain::X, 2)).unwrap();
    let [_, h, w] = v.dims;
    assert_eq!(extract_patches(&v, Some(&m), [5, h, w], [5, h, w]).unwrap().len(), 2);

    let patch = [5, 16, 16];
    let layout = PatchLayout::covering(v.dims, patch, patch).unwrap();
    let patches = extract_patches(&v, Some(&m), patch, patch).unwrap();
    assert_eq!(patches.len(), layout.origins.len());
    let values: Vec<Vec<f64>> = patches.iter().map(|p| p.volume.voxels.clone()).collect();
    let back = reassemble(&layout, &values).unwrap();
    assert_eq!(back.voxels, v.voxels);
    let fg: usize = patches.iter().map(|p| p.mask.as_ref().unwrap().foreground()).sum();
    assert_eq!(fg, m.foreground());

    assert!(extract_patches(&v, None, [11, 16, 16], [1, 1, 1]).is_err());
}

#[test]
fn full_size_patches_are_supported() {
    let v = Volume::zeros([5, 256, 256]);
    let p = extract_patches(&v, None, [5, 256, 256], [5, 256, 256]).unwrap();
    assert_eq!(p.len(), 1);
    assert_eq!(p[0].volume.dims, [5, 256, 256]);
}

#[test]
fn augmentation_identity_and_involution() {
    let (v, m) = generate_phantom(&PhantomSpec::new(Domain::X, 4).with_dims([5, 16, 16])).unwrap();
    let identity_seed = (0..1000).find(|&s| Augmentation::from_seed(s).is_identity()).unwrap();
    assert_eq!(augment(&v, &m, identity_seed).unwrap(), (v.clone(), m.clone()));

    for flip in [
        Augmentation { flip_h: true, ..Augmentation::IDENTITY },
        Augmentation { flip_v: true, ..Augmentation::IDENTITY },
        Augmentation { rot_k: 2, ..Augmentation::IDENTITY },
    ] {
        let (v1, m1) = flip.apply_pair(&v, &m).unwrap();
        assert_ne!(v1, v);
        assert_eq!(flip.apply_pair(&v1, &m1).unwrap(), (v.clone(), m.clone()));
    }

    let quarter = Augmentation { rot_k: 1, ..Augmentation::IDENTITY };
    let mut pair = (v.clone(), m.clone());
    for _ in 0..4 {
        pair = quarter.apply_pair(&pair.0, &pair.1).unwrap();
    }
    assert_eq!(pair, (v, m));
}

#[test]
fn quarter_turn_needs_a_square_plane() {
    let v = Volume::zeros([2, 4, 6]);
    let m = Mask::new([2, 4, 6], vec![0; 48]).unwrap();
    let rot = Augmentation { rot_k: 1, ..Augmentation::IDENTITY };
    assert!(matches!(rot.apply_pair(&v, &m), Err(Error::Invalid(_))));
}

#[test]
fn kfold_35_into_5() {
    let ids: Vec<u32> = (0..35).collect();
    let folds = kfold_split(&ids, 5, 1).unwrap();
    assert!(folds.iter().all(|(train, test)| test.len() == 7 && train.len() == 28));
    assert!(kfold_split(&ids, 1, 1).is_err());
    assert!(kfold_split(&ids[..3], 4, 1).is_err());
}

#[test]
fn volume_and_mask_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (v, m) = generate_phantom(&PhantomSpec::new(Domain::Y, 8)).unwrap();
    let (vp, mp) = (dir.path().join("a.vol"), dir.path().join("a.mask"));
    write_volume(&vp, &v).unwrap();
    write_mask(&mp, &m).unwrap();
    assert_eq!(read_volume(&vp).unwrap(), v);
    assert_eq!(read_mask(&mp).unwrap(), m);
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = Mask::new([1, 2, 2], vec![0, 1, 1, 0]).unwrap();
    let mp = dir.path().join("b.mask");
    write_mask(&mp, &m).unwrap();
    let mut bytes = fs::read(&mp).unwrap();
    *bytes.last_mut().unwrap() = 7;
    fs::write(&mp, &bytes).unwrap();
    assert!(matches!(read_mask(&mp), Err(Error::Invalid(_))));

    let vp = dir.path().join("c.vol");
    fs::write(&vp, b"WDGX1garbage").unwrap();
    assert!(matches!(read_volume(&vp), Err(Error::Format(_))));
    assert!(matches!(read_volume(dir.path().join("missing.vol")), Err(Error::Io { .. })));
    assert!(Mask::new([1, 1, 2], vec![0, 2]).is_err());
}
