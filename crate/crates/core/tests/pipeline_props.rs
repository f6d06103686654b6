//! Noise, patching, augmentation and batching.

use msdr_core::batch::PatchPool;
use msdr_core::image::{add_gaussian_noise, augment, gaussian_noise, Dihedral, Image, NoiseSpec};
use msdr_core::rng::{stream, uniform, Purpose};
use msdr_core::synth::synthetic_corpus;

fn random_patch(channels: usize, side: usize, seed: u64) -> Image {
    let mut rng = stream(seed, Purpose::Eval, 0, 0);
    Image::new(
        channels,
        side,
        side,
        (0..channels * side * side).map(|_| uniform(&mut rng)).collect(),
    )
    .unwrap()
}

#[test]
fn dihedral_group_closure_and_inverse() {
    let p = random_patch(1, 5, 1);
    let images: Vec<Image> = Dihedral::all().map(|d| d.apply(&p).unwrap()).collect();
    for (i, a) in images.iter().enumerate() {
        for b in &images[i + 1..] {
            assert_ne!(a, b, "the 8 transforms must be distinct on a generic patch");
        }
    }
    for a in Dihedral::all() {
        let inv = a.inverse();
        assert_eq!(inv.apply(&a.apply(&p).unwrap()).unwrap(), p, "id {}", a.id());
        for b in Dihedral::all() {
            let composed = b.apply(&a.apply(&p).unwrap()).unwrap();
            assert!(
                images.contains(&composed),
                "{} then {} leaves the group",
                a.id(),
                b.id()
            );
        }
    }
}

#[test]
fn augmentation_examples() {
    let p = Image::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(augment(&p, 0).unwrap(), p);
    assert_eq!(augment(&p, 1).unwrap().pixels(), &[2.0, 4.0, 1.0, 3.0]);
    assert!(augment(&p, 8).is_err());
    let color = random_patch(3, 4, 2);
    for id in 0..8 {
        let inv = Dihedral::new(id).unwrap().inverse().id();
        assert_eq!(augment(&augment(&color, id).unwrap(), inv).unwrap(), color);
    }
}

#[test]
fn noise_statistics_on_256_square() {
    let img = Image::filled(1, 256, 256, 0.0).unwrap();
    let n = gaussian_noise(&img, &NoiseSpec::new(25.0, 17).unwrap(), 0, 0);
    let len = n.pixels().len() as f64;
    let mean = n.pixels().iter().sum::<f64>() / len;
    let var = n.pixels().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (len - 1.0);
    let target = 25.0 / 255.0;
    assert!(mean.abs() < 0.002, "mean {mean}");
    assert!((var.sqrt() - target).abs() < 0.03 * target, "std {}", var.sqrt());
}

#[test]
fn noise_is_seeded_and_vanishes_with_sigma() {
    let img = random_patch(1, 16, 3);
    let spec = NoiseSpec::new(25.0, 4).unwrap();
    assert_eq!(add_gaussian_noise(&img, &spec), add_gaussian_noise(&img, &spec));
    assert_ne!(
        add_gaussian_noise(&img, &spec),
        add_gaussian_noise(&img, &NoiseSpec::new(25.0, 5).unwrap())
    );
    let quiet = add_gaussian_noise(&img, &NoiseSpec::new(1e-9, 4).unwrap());
    for (a, b) in quiet.pixels().iter().zip(img.pixels()) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!(NoiseSpec::new(0.0, 1).is_err());
    assert!(NoiseSpec::new(f64::NAN, 1).is_err());
}

#[test]
fn patch_counts() {
    let img = |h, w| Image::filled(1, h, w, 0.5).unwrap();
    assert_eq!(msdr_core::image::extract_patches(&img(45, 45), 45, 7).unwrap().len(), 1);
    assert_eq!(
        msdr_core::image::extract_patches(&img(45, 90), 45, 45).unwrap().len(),
        2
    );
    assert_eq!(
        msdr_core::image::extract_patches(&img(100, 100), 45, 45).unwrap().len(),
        9
    );
    assert!(msdr_core::image::extract_patches(&img(40, 100), 45, 45)
        .unwrap()
        .is_empty());
}

fn epoch_stream(seed: u64) -> Vec<msdr_core::batch::PatchBatch> {
    let corpus = synthetic_corpus(4, 1, 60, 60, 9).unwrap();
    let pool = PatchPool::from_images(&corpus, 45, 15).unwrap();
    (0..2)
        .flat_map(|epoch| {
            pool.epoch_batches(seed, epoch, 5)
                .into_iter()
                .map(|idx| pool.batch(&idx, seed, epoch, 25.0).unwrap())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn batch_stream_is_deterministic_and_labels_are_exact() {
    let a = epoch_stream(7);
    let b = epoch_stream(7);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        let bits = |t: &msdr_core::Tensor4| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.noisy), bits(&y.noisy));
        assert_eq!(bits(&x.residual_label), bits(&y.residual_label));
        assert_eq!(x.meta, y.meta);
    }
    assert_ne!(a[0].noisy, epoch_stream(8)[0].noisy);

    let corpus = synthetic_corpus(4, 1, 60, 60, 9).unwrap();
    let pool = PatchPool::from_images(&corpus, 45, 15).unwrap();
    for batch in &a {
        let clean = batch.noisy.sub(&batch.residual_label).unwrap();
        for (k, m) in batch.meta.iter().enumerate() {
            let src = &pool.patches()[m.patch_id as usize].image;
            let expect = augment(src, m.augmentation).unwrap();
            for (u, v) in clean.sample(k).iter().zip(expect.pixels()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
