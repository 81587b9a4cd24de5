use faultrange_core::protection::{
    apply_backflip, apply_clipper, apply_fmap_avg, apply_fmap_rescale, apply_ranger, backflip, is_oob,
};
use faultrange_core::Tensor;
use proptest::prelude::*;

fn value(t_up: f32) -> impl Strategy<Value = f32> {
    prop_oneof![
        4 => (-2.0f32..3.0).prop_map(move |u| u * t_up),
        1 => (1e3f32..3e38).prop_map(|v| v),
        1 => (-3e38f32..-1e3).prop_map(|v| v),
        1 => Just(f32::INFINITY),
        1 => Just(f32::NEG_INFINITY),
        1 => Just(0.0f32),
    ]
}

/// `(t_low, t_up)` with `t_low <= 0 <= t_up`, the shape of post-activation bounds.
fn bounds() -> impl Strategy<Value = (f32, f32)> {
    (prop_oneof![Just(0.0f32), -50.0f32..0.0], prop_oneof![0.0f32..1.0, 2.0f32..500.0])
}

fn tensor() -> impl Strategy<Value = ((f32, f32), Vec<f32>, usize)> {
    bounds().prop_flat_map(|(lo, up)| {
        (1usize..5, 1usize..9).prop_flat_map(move |(c, plane)| {
            (Just((lo, up)), proptest::collection::vec(value(up.max(1.0)), c * plane), Just(c))
        })
    })
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn elementwise_policies_are_idempotent_and_contained(((lo, up), data, _) in tensor()) {
        let floor = lo.min(0.0);
        let ceil = up.max(2.0);
        for (name, f) in [
            ("ranger", apply_ranger as fn(&mut [f32], f32, f32)),
            ("clipper", apply_clipper),
            ("backflip", apply_backflip),
        ] {
            let mut once = data.clone();
            f(&mut once, lo, up);
            let mut twice = once.clone();
            f(&mut twice, lo, up);
            prop_assert_eq!(bits(&once), bits(&twice), "{} not idempotent", name);
            for &x in &once {
                prop_assert!(x >= floor && x <= ceil, "{} left {}", name, x);
                if name == "ranger" {
                    prop_assert!(x >= lo && x <= up);
                }
            }
        }
    }

    #[test]
    fn fmap_policies_leave_nothing_out_of_bound(((lo, up), data, c) in tensor()) {
        let plane = data.len() / c;
        let mut rescaled = data.clone();
        for map in rescaled.chunks_exact_mut(plane) {
            apply_fmap_rescale(map, lo, up);
        }
        prop_assert!(rescaled.iter().all(|&x| !is_oob(x, lo, up)), "{:?}", rescaled);
        let mut again = rescaled.clone();
        for map in again.chunks_exact_mut(plane) {
            apply_fmap_rescale(map, lo, up);
        }
        prop_assert_eq!(bits(&again), bits(&rescaled));

        let mut t = Tensor::new(vec![c, 1, plane], data.clone()).unwrap();
        apply_fmap_avg(&mut t, lo, up);
        prop_assert!(t.data().iter().all(|&x| !is_oob(x, lo, up)), "{:?}", t);
        let mut t2 = t.clone();
        apply_fmap_avg(&mut t2, lo, up);
        prop_assert!(t2.bit_eq(&t));
    }

    #[test]
    fn elementwise_policies_commute_with_permutation(((lo, up), data, _) in tensor(), seed in any::<u64>()) {
        let n = data.len();
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                p.swap(i, (s >> 33) as usize % (i + 1));
            }
            p
        };
        let permute = |v: &[f32]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        for f in [apply_ranger as fn(&mut [f32], f32, f32), apply_clipper, apply_backflip, apply_fmap_rescale] {
            let mut a = data.clone();
            f(&mut a, lo, up);
            let mut b = permute(&data);
            f(&mut b, lo, up);
            prop_assert_eq!(bits(&permute(&a)), bits(&b));
        }
    }

    #[test]
    fn fmap_avg_commutes_with_spatial_permutation(((lo, up), data, c) in tensor(), rot in 0usize..8) {
        let plane = data.len() / c;
        let rotate = |v: &[f32]| -> Vec<f32> {
            v.chunks_exact(plane)
                .flat_map(|m| (0..plane).map(move |i| m[(i + rot) % plane]))
                .collect()
        };
        let mut a = Tensor::new(vec![c, 1, plane], data.clone()).unwrap();
        apply_fmap_avg(&mut a, lo, up);
        let mut b = Tensor::new(vec![c, 1, plane], rotate(&data)).unwrap();
        apply_fmap_avg(&mut b, lo, up);
        prop_assert_eq!(bits(&rotate(a.data())), bits(b.data()));
    }

    #[test]
    fn backflip_is_contained_for_any_bounds(x in any::<f32>(), lo in -100.0f32..100.0, up in 0.0f32..1e6) {
        prop_assume!(!x.is_nan() && lo <= up);
        let y = backflip(x, lo, up);
        prop_assert!(y >= lo.min(0.0) && y <= up.max(2.0));
    }
}

#[test]
fn backflip_is_not_idempotent_for_t_up_between_one_and_two() {
    // 2 lands above t_up = 1.5 and is then clamped on the second pass
    let once = backflip(1e10, 0.0, 1.5);
    assert_eq!(once, 2.0);
    assert_eq!(backflip(once, 0.0, 1.5), 1.5);
    // and a positive t_low sends the 0 branch to t_low on the second pass
    let once = backflip(1e30, 0.5, 10.0);
    assert_eq!((once, backflip(once, 0.5, 10.0)), (0.0, 0.5));
}
