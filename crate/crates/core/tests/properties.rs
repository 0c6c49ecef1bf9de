use mvoc::denoiser::{AttentionKind, AttentionMap, InjectionBundle};
use mvoc::guidance::{compose_eps_chained, compose_eps_omega, GuidanceWeights};
use mvoc::injection::{compose_layers, transport_attention, ObjectLayer};
use mvoc::metrics::warping_error;
use mvoc::sampler::{ddim_invert_step, ddim_step};
use mvoc::schedule::ScheduleConfig;
use mvoc::tensor::{hadamard_blend, AffineTransform, FlowField, Mask, VideoTensor};
use proptest::prelude::*;

fn tensor(dims: [usize; 4]) -> impl Strategy<Value = VideoTensor> {
    let n: usize = dims.iter().product();
    prop::collection::vec(-3.0..3.0f64, n).prop_map(move |v| VideoTensor::from_vec(dims, v).unwrap())
}

fn binary_mask(dims: [usize; 3]) -> impl Strategy<Value = Mask> {
    let n: usize = dims.iter().product();
    prop::collection::vec(prop::bool::ANY, n)
        .prop_map(move |v| Mask::from_vec(dims, v.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect()).unwrap())
}

fn invert(m: &Mask) -> Mask {
    Mask::from_fn(m.dims(), |f, y, x| 1.0 - m.get(f, y, x))
}

fn attention(frames: usize, grid: (usize, usize)) -> impl Strategy<Value = AttentionMap> {
    let n = grid.0 * grid.1;
    prop::collection::vec(0.01..1.0f64, frames * n * n).prop_map(move |raw| {
        let data = raw
            .chunks(n)
            .flat_map(|row| {
                let z: f64 = row.iter().sum();
                row.iter().map(move |v| v / z).collect::<Vec<_>>()
            })
            .collect();
        AttentionMap {
            kind: AttentionKind::Spatial,
            frames,
            grid,
            data,
        }
    })
}

fn feat_layer(id: u32, mask: Mask, f: VideoTensor) -> ObjectLayer {
    let mut l = ObjectLayer::new(id, mask, AffineTransform::identity());
    l.taps.insert(
        1,
        InjectionBundle {
            f_n: Some(f),
            ..Default::default()
        },
    );
    l
}

proptest! {
    #[test]
    fn blend_complement_symmetry(a in tensor([2, 2, 3, 3]), b in tensor([2, 2, 3, 3]), m in binary_mask([2, 3, 3])) {
        prop_assert_eq!(hadamard_blend(&a, &b, &m).unwrap(), hadamard_blend(&b, &a, &invert(&m)).unwrap());
    }

    #[test]
    fn blend_is_idempotent(a in tensor([2, 2, 3, 3]), b in tensor([2, 2, 3, 3]), m in binary_mask([2, 3, 3])) {
        let once = hadamard_blend(&a, &b, &m).unwrap();
        prop_assert_eq!(hadamard_blend(&once, &b, &m).unwrap(), once);
    }

    #[test]
    fn omega_form_matches_chained(terms in prop::collection::vec(tensor([1, 2, 2, 2]), 2..6), seed_w in prop::collection::vec(-4.0..6.0f64, 5)) {
        let n = terms.len() - 1;
        let w = GuidanceWeights::new(seed_w[..n].to_vec()).unwrap();
        let refs: Vec<&VideoTensor> = terms.iter().collect();
        let a = compose_eps_chained(&refs, &w).unwrap();
        let b = compose_eps_omega(&refs, &w.omega()).unwrap();
        let scale = terms.iter().map(|t| t.l2_norm()).sum::<f64>().max(1.0);
        prop_assert!(a.sub(&b).unwrap().l2_norm() <= 1e-12 * scale);
        prop_assert!((w.omega().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_layers_commute(base in tensor([1, 1, 4, 4]), f1 in tensor([1, 1, 4, 4]), f2 in tensor([1, 1, 4, 4]), m in binary_mask([1, 4, 4])) {
        let (l1, l2) = (feat_layer(1, m.clone(), f1), feat_layer(2, invert(&m), f2));
        let b = InjectionBundle { f_n: Some(base), ..Default::default() };
        prop_assert_eq!(compose_layers(&b, &[&l1, &l2], 1).unwrap(), compose_layers(&b, &[&l2, &l1], 1).unwrap());
    }

    #[test]
    fn later_layer_wins_on_overlap(base in tensor([1, 1, 4, 4]), f1 in tensor([1, 1, 4, 4]), f2 in tensor([1, 1, 4, 4]), m in binary_mask([1, 4, 4])) {
        let b = InjectionBundle { f_n: Some(base), ..Default::default() };
        let (l1, l2) = (feat_layer(1, m.clone(), f1), feat_layer(2, m.clone(), f2));
        let both = compose_layers(&b, &[&l1, &l2], 1).unwrap();
        prop_assert_eq!(both, compose_layers(&b, &[&l2], 1).unwrap());
    }

    #[test]
    fn transported_attention_stays_stochastic(map in attention(2, (4, 4)), dy in -3i32..=3, dx in -3i32..=3) {
        let moved = transport_attention(&map, &AffineTransform::translation(dy as f64, dx as f64)).unwrap();
        prop_assert!(moved.same_geometry(&map));
        prop_assert!(moved.max_row_sum_error() < 1e-12);
        prop_assert!(moved.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn warp_error_mirror_symmetry(a in tensor([1, 2, 5, 6]), b in tensor([1, 2, 5, 6]), fl in prop::collection::vec(-1.5..1.5f64, 60), m in binary_mask([1, 5, 6])) {
        let w = 6;
        let flip = |t: &VideoTensor| VideoTensor::from_fn(t.dims(), |f, c, y, x| t.get(f, c, y, w - 1 - x));
        let flow = FlowField::new(VideoTensor::from_vec([1, 2, 5, 6], fl).unwrap()).unwrap();
        let mirrored = FlowField::new(VideoTensor::from_fn([1, 2, 5, 6], |f, c, y, x| {
            let v = flow.as_tensor().get(f, c, y, w - 1 - x);
            if c == 1 { -v } else { v }
        })).unwrap();
        let mm = Mask::from_fn([1, 5, 6], |f, y, x| m.get(f, y, w - 1 - x));
        let lhs = warping_error(&a, &b, &flow, &m);
        let rhs = warping_error(&flip(&a), &flip(&b), &mirrored, &mm);
        match (lhs, rhs) {
            (Ok(l), Ok(r)) => prop_assert!((l - r).abs() <= 1e-12 * l.abs().max(1.0)),
            (l, r) => prop_assert_eq!(l.is_err(), r.is_err()),
        }
    }

    #[test]
    fn ddim_invert_undoes_step(x in tensor([1, 1, 3, 3]), eps in tensor([1, 1, 3, 3]), t in 1usize..=1000) {
        let s = ScheduleConfig::default().build().unwrap();
        let prev = ddim_step(&x, t, t - 1, &eps, &s, 0.0, None).unwrap();
        let back = ddim_invert_step(&prev, t, &eps, &s).unwrap();
        prop_assert!(back.max_abs_diff(&x) <= 1e-9 * (1.0 + x.l2_norm()));
    }
}
