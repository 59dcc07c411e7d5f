mod common;

use common::{arb_sampled, brute_chamfer};
use proptest::prelude::*;
use skadapter::backbone::OccupancyGrid;
use skadapter::data::rasterize_capsules;
use skadapter::metrics::{chamfer, extract_skeleton_points, occupancy_iou, rerigging_score, sample_bone_points};

fn arb_points(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-0.5f64..0.5), 1..=max)
}

fn arb_grid() -> impl Strategy<Value = OccupancyGrid> {
    prop::collection::vec(prop::bool::weighted(0.3), 512).prop_map(|b| OccupancyGrid::from_bits(8, b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn chamfer_matches_all_pairs(a in arb_points(5), b in arb_points(5)) {
        prop_assert_eq!(chamfer(&a, &b).unwrap(), brute_chamfer(&a, &b));
    }

    #[test]
    fn chamfer_is_symmetric_and_nonnegative(a in arb_points(20), b in arb_points(20)) {
        let ab = chamfer(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
    }

    #[test]
    fn chamfer_zero_for_covering_sets(a in arb_points(10), extra in prop::collection::vec(0usize..10, 0..10)) {
        // Duplicates of existing points keep both sets mutually covering.
        let mut b = a.clone();
        b.extend(extra.iter().map(|&i| a[i % a.len()]));
        b.reverse();
        prop_assert_eq!(chamfer(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_positive_for_uncovered_point(a in arb_points(10), p in prop::array::uniform3(0.6f64..1.0)) {
        let mut b = a.clone();
        b.push(p);
        prop_assert!(chamfer(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_grid(), b in arb_grid()) {
        let ab = occupancy_iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, occupancy_iou(&b, &a).unwrap());
        prop_assert_eq!(occupancy_iou(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(ab == 1.0, a == b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn extracted_points_are_occupied_centers(skel in arb_sampled()) {
        let occ = rasterize_capsules(&skel, 16, 1.5).unwrap();
        let centers = occ.occupied_centers();
        let pts = extract_skeleton_points(&occ).unwrap();
        prop_assert!(!pts.is_empty());
        for p in pts {
            prop_assert!(centers.contains(&p));
        }
    }

    #[test]
    fn rerigging_separates_distant_skeletons(a in arb_sampled(), b in arb_sampled()) {
        let spacing = 1.0 / 16.0;
        let gap = chamfer(&sample_bone_points(&a, spacing).unwrap(), &sample_bone_points(&b, spacing).unwrap()).unwrap();
        prop_assume!(gap > 4.0 / 16.0);
        let occ = rasterize_capsules(&a, 16, 1.5).unwrap();
        prop_assert!(rerigging_score(&occ, &a, spacing).unwrap() < rerigging_score(&occ, &b, spacing).unwrap());
    }
}
