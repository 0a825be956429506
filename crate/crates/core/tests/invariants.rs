use cyclemix_core::baselines::{cutmix_with, cutout_with, mixup_with, PatchBox};
use cyclemix_core::losses::cycle_loss;
use cyclemix_core::{
    apply_cyclemix_minibatch, cyclemix_image, enumerate_folds, sample_mix_weights, split_train_val, DomainDataset,
    DomainSample, FoldPlan, Minibatch, MixMode, MixPolicy, MixWeights, Raster, Result, Target, TranslationProvider,
    TranslatorId,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn raster(h: usize, w: usize) -> impl Strategy<Value = Raster> {
    prop::collection::vec(0u8..=255, h * w * 3).prop_map(move |b| Raster::from_u8(h, w, &b).unwrap())
}

fn weights(k: usize) -> impl Strategy<Value = MixWeights> {
    (any::<u64>()).prop_map(move |s| sample_mix_weights(k, 1.0, &mut ChaCha8Rng::seed_from_u64(s)).unwrap())
}

struct Invert;
impl TranslationProvider for Invert {
    fn translate(&self, _id: &TranslatorId, image: &Raster) -> Result<Raster> {
        Ok(image.map(|v| 1.0 - v))
    }
}

fn fold(k: usize) -> FoldPlan {
    let sources = (0..k).map(|i| format!("s{i}")).collect();
    FoldPlan::new("target", sources, 0).unwrap()
}

fn batch(n: usize, sources: usize, side: usize) -> Minibatch {
    let images = (0..n).map(|i| Raster::filled(side, side, (i % 7) as f32 / 7.0)).collect();
    let targets = (0..n).map(|i| Target::Class(i % 3)).collect();
    let domains = (0..n).map(|i| format!("s{}", i % sources)).collect();
    Minibatch::new(images, targets, domains, 3).unwrap()
}

fn one_hot_batch(labels: &[usize], side: usize) -> Minibatch {
    let images = labels.iter().map(|&l| Raster::filled(side, side, l as f32 / 10.0)).collect();
    let targets = labels.iter().map(|&l| Target::Class(l)).collect();
    let domains = labels.iter().map(|_| "s0".to_string()).collect();
    Minibatch::new(images, targets, domains, 10).unwrap()
}

proptest! {
    #[test]
    fn simplex_draws_are_valid(k in 1usize..8, seed in any::<u64>(), c in 0.05f64..5.0) {
        let w = sample_mix_weights(k, c, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(w.len(), k);
        prop_assert!(w.as_slice().iter().all(|&v| v >= 0.0));
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn convex_mix_stays_in_unit_range(x in raster(3, 4), t in prop::collection::vec(raster(3, 4), 1..5), seed in any::<u64>()) {
        let w = sample_mix_weights(t.len(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let convex = cyclemix_image(&x, &t, &w, MixMode::Convex).unwrap();
        prop_assert!(convex.in_range(0.0, 1.0));
        let literal = cyclemix_image(&x, &t, &w, MixMode::Literal).unwrap();
        prop_assert!(literal.in_range(0.0, 2.0));
    }

    #[test]
    fn mix_is_affine_in_weights(x in raster(2, 3), t in prop::collection::vec(raster(2, 3), 2..4), seed in any::<u64>(), lam in 0.0f64..=1.0) {
        let k = t.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = sample_mix_weights(k, 1.0, &mut rng).unwrap();
        let b = sample_mix_weights(k, 1.0, &mut rng).unwrap();
        let blend: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| lam * p + (1.0 - lam) * q).collect();
        let total: f64 = blend.iter().sum();
        let c = MixWeights::new(blend.iter().map(|v| v / total).collect()).unwrap();
        for mode in [MixMode::Convex, MixMode::Literal] {
            let ma = cyclemix_image(&x, &t, &a, mode).unwrap();
            let mb = cyclemix_image(&x, &t, &b, mode).unwrap();
            let mc = cyclemix_image(&x, &t, &c, mode).unwrap();
            for ((pa, pb), pc) in ma.data().iter().zip(mb.data()).zip(mc.data()) {
                let want = lam * *pa as f64 + (1.0 - lam) * *pb as f64;
                prop_assert!((*pc as f64 - want).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn identity_translations_fix_convex_mix(x in raster(4, 4), w in (1usize..5).prop_flat_map(weights)) {
        let copies = vec![x.clone(); w.len()];
        prop_assert_eq!(cyclemix_image(&x, &copies, &w, MixMode::Convex).unwrap(), x);
    }

    #[test]
    fn exact_mixed_count_and_labels_kept(b in 1usize..65, frac in 0.0f64..=1.0, sources in 2usize..5, seed in any::<u64>()) {
        let mb = batch(b, sources, 2);
        let policy = MixPolicy { fraction: frac, ..MixPolicy::default() };
        let out = apply_cyclemix_minibatch(&mb, &Invert, &fold(sources), &policy, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let changed = out.images.iter().zip(&mb.images).filter(|(a, b)| a != b).count();
        let expected = (frac * b as f64 + 1e-9).floor() as usize;
        prop_assert_eq!(policy.mixed_count(b), expected);
        prop_assert_eq!(changed, expected);
        prop_assert_eq!(&out.targets, &mb.targets);
        prop_assert_eq!(&out.domains, &mb.domains);
    }

    #[test]
    fn mixup_and_cutmix_labels_sum_to_one(labels in prop::collection::vec(0usize..10, 2..12), lam in 0.0f64..=1.0, seed in any::<u64>()) {
        let mb = one_hot_batch(&labels, 8);
        let n = labels.len();
        let partners: Vec<usize> = (0..n).map(|i| (i + 1 + seed as usize % (n - 1)) % n).collect();
        let mixed = mixup_with(&mb, lam, &partners).unwrap();
        let side = (seed % 9) as usize;
        let boxes = vec![PatchBox::centred(4, 4, side, side, 8, 8); n];
        let cut = cutmix_with(&mb, &partners, &boxes).unwrap();
        for (i, (m, c)) in mixed.targets.iter().zip(&cut.targets).enumerate() {
            prop_assert_eq!(m.to_distribution(10).iter().sum::<f64>(), 1.0);
            let dist = c.to_distribution(10);
            prop_assert_eq!(dist.iter().sum::<f64>(), 1.0);
            let partner_label = labels[partners[i]];
            if partner_label != labels[i] {
                prop_assert_eq!(dist[partner_label], boxes[i].area() as f64 / 64.0);
            }
        }
    }

    #[test]
    fn cutout_touches_only_the_hole(img in raster(6, 6), cy in 0usize..6, cx in 0usize..6, size in 0usize..6) {
        let mb = Minibatch::new(vec![img.clone()], vec![Target::Class(0)], vec!["s0".into()], 2).unwrap();
        let hole = PatchBox::centred(cy, cx, size, size, 6, 6);
        let out = cutout_with(&mb, &[hole], [0.5, 0.25, 0.75]).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                if hole.contains(y, x) {
                    prop_assert_eq!(out.images[0].pixel(y, x), [0.5, 0.25, 0.75]);
                } else {
                    prop_assert_eq!(out.images[0].pixel(y, x), img.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn split_partitions_each_class(counts in prop::collection::vec(1usize..20, 2..5), frac in 0.0f64..0.9, seed in any::<u64>()) {
        let classes: Vec<String> = (0..counts.len()).map(|c| format!("c{c}")).collect();
        let mut samples = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                samples.push(DomainSample { image: Raster::filled(1, 1, (i % 256) as f32 / 255.0), label: c, domain: "d".into() });
            }
        }
        let ds = DomainDataset::new("d", samples, classes).unwrap();
        let (train, val) = split_train_val(&ds, frac, seed).unwrap();
        prop_assert_eq!(train.len() + val.len(), ds.len());
        for (c, &n) in counts.iter().enumerate() {
            let v = val.samples().iter().filter(|s| s.label == c).count();
            prop_assert_eq!(v, (frac * n as f64).round() as usize);
        }
        prop_assert_eq!(split_train_val(&ds, frac, seed).unwrap(), (train, val));
    }

    #[test]
    fn cycle_loss_is_a_pseudometric(a in raster(3, 3), b in raster(3, 3), c in raster(3, 3)) {
        let d = |x: &Raster, y: &Raster| cycle_loss(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn folds_never_list_target_as_source(n in 2usize..7) {
        let names: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let folds = enumerate_folds(&names, 0).unwrap();
        prop_assert_eq!(folds.len(), n);
        for f in folds {
            prop_assert!(!f.is_source(&f.target));
            prop_assert_eq!(f.sources.len(), n - 1);
            prop_assert!(f.directed_translators().iter().all(|id| !id.touches(&f.target)));
            prop_assert_eq!(f.directed_translators().len(), (n - 1) * (n - 2));
        }
    }
}
