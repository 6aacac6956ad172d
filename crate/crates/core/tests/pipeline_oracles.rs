//! Metrics, breakage detection and losses on generated trees with known
//! answers.

use airwaytopo::losses::{
    atrl, dice_loss, gul, local_imbalance_weights, stage3_loss, weight_field, CenterlineParams,
    GulParams, LocalWeightParams,
};
use airwaytopo::metrics::{
    branch_coverage, dsc, evaluate_case, evaluate_with_tree, precision, tree_length_detected,
    weighted_mean_score, BdParams, EvalParams,
};
use airwaytopo::skeleton::{detect_breakages, skeletonize};
use airwaytopo::testkit::{ablate_branch, generate, to_probability, Ablation, TreeSpec};
use airwaytopo::tree::AnatomicalLabel;
use airwaytopo::morphology::{dual_threshold_iteration, DtiParams};
use airwaytopo::{Error, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn g3(seed: u64) -> airwaytopo::testkit::GroundTruthBundle {
    generate(&TreeSpec { seed, ..TreeSpec::default() }).unwrap()
}

#[test]
fn table_one_weighted_scores() {
    let rows = [
        ((96.425, 95.479, 93.827, 91.781), 94.693),
        ((95.919, 94.729, 93.910, 93.553), 94.687),
    ];
    for ((td, bd, d, p), want) in rows {
        let got = weighted_mean_score(td, bd, d, p).unwrap();
        assert!((got - want).abs() <= 1e-3, "{got} vs {want}");
    }
}

#[test]
fn perfect_prediction_identities() {
    let b = g3(0);
    let gt = &b.mask;
    let r = evaluate_case(gt, gt, &EvalParams::default()).unwrap();
    assert_eq!((r.td, r.bd, r.dsc, r.pre), (1.0, 1.0, 1.0, 1.0));
    assert_eq!(r.wms, 1.0);

    let sk = skeletonize(gt).unwrap();
    let none = detect_breakages(&sk, gt).unwrap();
    assert!(none.groups.is_empty());
    let w = weight_field(gt, &b.tree, &sk, &none, &LocalWeightParams::default(), &CenterlineParams::default()).unwrap();
    let prm = GulParams::default();
    assert!(dice_loss(gt, gt).unwrap().abs() < 1e-9);
    assert!(gul(gt, gt, &w.w_l, &prm).unwrap().abs() < 1e-9);
    assert!((atrl(gt, gt, &sk, &w).unwrap() - 0.5).abs() < 1e-9);
    assert!((stage3_loss(gt, gt, &w.w_l, &sk, &w, &prm).unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn whole_segmental_ablation_against_exact_tree() {
    for seed in 0..4 {
        let b = g3(seed);
        assert_eq!(b.tree.len(), 15);
        let bd = BdParams::default();
        let base = evaluate_with_tree(&b.mask, &b.mask, &b.tree, &bd).unwrap();
        let total = b.tree.total_length_mm();
        for br in b.tree.branches().iter().filter(|br| br.label == AnatomicalLabel::Segmental) {
            let pred = ablate_branch(&b, br.id, Ablation::Whole).unwrap();
            let r = evaluate_with_tree(&pred, &b.mask, &b.tree, &bd).unwrap();
            assert!(((base.bd - r.bd) - 1.0 / 15.0).abs() < 1e-12);
            let want = br.length_mm / total;
            assert!(((base.td - r.td) - want).abs() <= 0.02 * want);
            assert_eq!(r.td_large, Some(1.0));
            assert_eq!(r.bd_large, Some(1.0));
            assert!((r.bd_small.unwrap() - 7.0 / 8.0).abs() < 1e-12);
            // the detected length drops by exactly the recorded branch length
            let lost: f64 = branch_coverage(&b.tree, &pred)
                .unwrap()
                .iter()
                .map(|c| c.total_mm - c.detected_mm)
                .sum();
            assert!((lost - br.length_mm).abs() < 1e-9);
        }
    }
}

#[test]
fn whole_segmental_ablation_through_parsing() {
    let b = g3(1);
    let ep = EvalParams::default();
    let base = evaluate_case(&b.mask, &b.mask, &ep).unwrap();
    let total = b.tree.total_length_mm();
    for id in [7, 10, 14] {
        let pred = ablate_branch(&b, id, Ablation::Whole).unwrap();
        let r = evaluate_case(&pred, &b.mask, &ep).unwrap();
        assert!(((base.bd - r.bd) - 1.0 / 15.0).abs() < 1e-12);
        let want = b.tree.branches()[id].length_mm / total;
        assert!(((base.td - r.td) - want).abs() <= 0.02, "{} vs {want}", base.td - r.td);
    }
}

#[test]
fn td_is_length_weighted_mean_of_branch_fractions() {
    let b = g3(2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pred = ablate_branch(&b, 3, Ablation::InteriorGap { start: 4.0, len: 5.0 }).unwrap();
    let pred = ablate_branch(
        &airwaytopo::testkit::GroundTruthBundle { mask: pred, ..b.clone() },
        rng.random_range(7..15),
        Ablation::Whole,
    )
    .unwrap();
    let (td, fractions) = tree_length_detected(&b.tree, &pred).unwrap();
    let lens: Vec<f64> = b.tree.branches().iter().map(|br| br.length_mm).collect();
    let weighted: f64 = fractions.iter().zip(&lens).map(|(f, l)| f * l).sum::<f64>() / lens.iter().sum::<f64>();
    assert!((td - weighted).abs() < 1e-12);
    assert!(td < 1.0);
}

#[test]
fn extra_blob_lowers_precision_only() {
    let b = g3(3);
    let mut v = b.mask.values().to_vec();
    let d = b.mask.dims();
    // a blob in a corner, away from the tree
    for z in 0..2 {
        for y in 0..2 {
            for x in 0..2 {
                let i = d.index([z, y, x]);
                assert!(!b.mask.is_set(i));
                v[i] = 1.0;
            }
        }
    }
    let pred = VoxelGrid::new(d, b.mask.spacing(), v, b.mask.kind()).unwrap();
    let bd = BdParams::default();
    let r = evaluate_with_tree(&pred, &b.mask, &b.tree, &bd).unwrap();
    assert!(r.pre < 1.0);
    assert_eq!(r.td, 1.0);
    assert_eq!(r.dsc, dsc(&pred, &b.mask).unwrap());
    assert_eq!(r.pre, precision(&pred, &b.mask).unwrap());
}

#[test]
fn breakage_rule_on_random_placements() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut gaps, mut tips) = (0, 0);
    for k in 0..10u64 {
        let b = generate(&TreeSpec::randomized(1 + (k % 3) as usize, 300 + k)).unwrap();
        let sk = skeletonize(&b.mask).unwrap();
        let id = rng.random_range(0..b.axes.len());
        let l = b.axes[id].length();
        let len = rng.random_range(2.0..5.0);
        let start = rng.random_range(0.3 * l..0.7 * l - len);
        let pred = ablate_branch(&b, id, Ablation::InteriorGap { start, len }).unwrap();
        let found = detect_breakages(&sk, &pred).unwrap();
        if found.groups.len() == 1 && found.breakage_count() == 1 {
            gaps += 1;
        }
        let leaves: Vec<usize> = b.tree.branches().iter().filter(|x| x.is_leaf()).map(|x| x.id).collect();
        let leaf = leaves[rng.random_range(0..leaves.len())];
        let tl = rng.random_range(3.0..0.6 * b.axes[leaf].length());
        let pred = ablate_branch(&b, leaf, Ablation::Tip { len: tl }).unwrap();
        if detect_breakages(&sk, &pred).unwrap().breakage_count() == 0 {
            tips += 1;
        }
    }
    assert_eq!((gaps, tips), (10, 10));
}

#[test]
fn whole_leaf_ablation_is_not_a_breakage() {
    let b = g3(4);
    let sk = skeletonize(&b.mask).unwrap();
    let pred = ablate_branch(&b, 12, Ablation::Whole).unwrap();
    let found = detect_breakages(&sk, &pred).unwrap();
    assert!(!found.groups.is_empty());
    assert_eq!(found.breakage_count(), 0);
}

#[test]
fn ablation_preconditions() {
    let b = g3(5);
    assert!(matches!(ablate_branch(&b, 99, Ablation::Whole), Err(Error::BranchNotFound(99))));
    let l = b.axes[2].length();
    assert!(matches!(
        ablate_branch(&b, 2, Ablation::InteriorGap { start: l - 2.0, len: 3.0 }),
        Err(Error::GapTooLarge { branch: 2, .. })
    ));
    assert!(matches!(
        ablate_branch(&b, 2, Ablation::InteriorGap { start: 0.0, len: 3.0 }),
        Err(Error::GapTooLarge { .. })
    ));
}

#[test]
fn local_weights_favour_thin_branches() {
    let b = g3(6);
    let w = local_imbalance_weights(&b.mask, &b.tree, &LocalWeightParams::default()).unwrap();
    let root_voxel = b.tree.branches()[0].centerline[3];
    let leaf = b.tree.branches()[14].centerline.clone();
    let leaf_voxel = leaf[leaf.len() / 2];
    let d = b.mask.dims();
    assert_eq!(w[d.index(root_voxel)], 1.0);
    assert!(w[d.index(leaf_voxel)] > 1.0);
}

#[test]
fn probability_round_trip_and_hysteresis() {
    let b = g3(7);
    let p = to_probability(&b.mask, 0.9, 0.05, 0).unwrap();
    let back = dual_threshold_iteration(&p, DtiParams::default()).unwrap();
    assert_eq!(back.foreground(), b.mask.foreground());
}

#[test]
fn hysteresis_keeps_blurred_thin_branch() {
    // an 11^3 trunk with a 3x3 rod leaving it along x
    let d = airwaytopo::Dims::new(15, 15, 40);
    let fg: Vec<bool> = (0..d.len())
        .map(|i| {
            let [z, y, x] = d.coord(i);
            let trunk = (2..13).contains(&z) && (2..13).contains(&y) && (2..13).contains(&x);
            let rod = (6..9).contains(&z) && (6..9).contains(&y) && (13..36).contains(&x);
            trunk || rod
        })
        .collect();
    let mask = VoxelGrid::from_mask(d, [1.0; 3], &fg);
    let p = to_probability(&mask, 0.9, 0.05, 2).unwrap();
    // away from the trunk and the rod's end, every rod voxel sees 9 of 25
    // foreground columns in its blur window
    let want = (0.05 + 0.85 * 9.0 / 25.0) as f32;
    for x in 18..32 {
        for (z, y) in [(6, 6), (7, 7), (8, 6)] {
            assert!((p.get([z, y, x]) - want).abs() < 1e-6);
        }
    }
    let dti = dual_threshold_iteration(&p, DtiParams::default()).unwrap();
    let plain = dual_threshold_iteration(&p, DtiParams::new(0.5, 0.5).unwrap()).unwrap();
    for x in 18..32 {
        assert!(dti.is_set_at([7, 7, x]));
        assert!(!plain.is_set_at([7, 7, x]));
    }
}
