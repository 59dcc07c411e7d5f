mod common;

use common::{arb_sampled, arb_tree, brute_rasterize};
use proptest::prelude::*;
use skadapter::data::{
    family_histogram, make_dataset, rasterize_capsules, write_dataset, DataConfig, DatasetReader,
};
use skadapter::skeleton::Skeleton;

fn bytes(seed: u64, n: usize, cfg: &DataConfig) -> Vec<u8> {
    let samples = make_dataset(seed, n, cfg).unwrap();
    let mut out = Vec::new();
    write_dataset(&mut out, cfg, &samples).unwrap();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rasterizer_matches_voxel_scan(skel in arb_tree(), side in 2u32..=5, radius in 1.0f32..3.0) {
        let res = 1usize << side;
        let fast = rasterize_capsules(&skel, res, radius).unwrap();
        prop_assert!(fast == brute_rasterize(&skel, res, radius));
    }

    #[test]
    fn rasterizer_is_monotone_in_radius(skel in arb_sampled(), r1 in 1.0f32..3.0, dr in 0.0f32..2.0) {
        let small = rasterize_capsules(&skel, 16, r1).unwrap();
        let large = rasterize_capsules(&skel, 16, r1 + dr).unwrap();
        for (a, b) in small.bits().iter().zip(large.bits()) {
            prop_assert!(!*a || *b);
        }
    }

    #[test]
    fn axis_bone_is_mirror_symmetric(len in 0.05f32..0.4, radius in 1.0f32..3.0) {
        // Bone along x through the grid center: mirror in y and in z.
        let skel = Skeleton::new(vec![[-len, 0.0, 0.0], [len, 0.0, 0.0]], &[-1, 0]).unwrap();
        let occ = rasterize_capsules(&skel, 16, radius).unwrap();
        for x in 0..16 {
            for y in 0..16 {
                for z in 0..16 {
                    prop_assert_eq!(occ.get(x, y, z), occ.get(x, 15 - y, z));
                    prop_assert_eq!(occ.get(x, y, z), occ.get(x, y, 15 - z));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dataset_round_trip_is_byte_exact(seed in any::<u64>(), n in 1usize..12) {
        let cfg = DataConfig::default();
        let samples = make_dataset(seed, n, &cfg).unwrap();
        let mut first = Vec::new();
        write_dataset(&mut first, &cfg, &samples).unwrap();
        let reader = DatasetReader::new(&first[..]).unwrap();
        prop_assert_eq!(reader.header(), cfg.header(n));
        let back: Vec<_> = reader.collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(&back, &samples);
        let mut second = Vec::new();
        write_dataset(&mut second, &cfg, &back).unwrap();
        prop_assert_eq!(first, second);
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let cfg = DataConfig::default();
    assert_eq!(bytes(11, 24, &cfg), bytes(11, 24, &cfg));
    assert_ne!(bytes(11, 24, &cfg), bytes(12, 24, &cfg));
}

#[test]
fn family_counts_are_balanced() {
    // Binomial(100, 1/4) lies in [15, 35] with probability above 0.999.
    for seed in 0..5 {
        let samples = make_dataset(seed, 100, &DataConfig::default()).unwrap();
        for count in family_histogram(&samples) {
            assert!((15..=35).contains(&count), "seed {seed}: {count}");
        }
    }
}

#[test]
fn stored_occupancy_is_its_rasterization() {
    let cfg = DataConfig::default();
    for s in make_dataset(3, 32, &cfg).unwrap() {
        assert!(!s.occupancy.is_empty());
        assert_eq!(s.occupancy, brute_rasterize(&s.skeleton, cfg.res, cfg.radius));
    }
}
