mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use story_reorg::{
    build_report, reorganize_story, slice_frame, IdSource, ReorganizerConfig, StoryEmbeddingBundle,
    TokenEmbeddingMatrix,
};

fn cfg() -> ReorganizerConfig {
    ReorganizerConfig::default()
}

fn random_story(n: usize, lf: usize, d: usize, seed: u64) -> StoryEmbeddingBundle {
    let mut r = rng(seed);
    let parts: Vec<_> = (0..n).map(|_| gaussian_f32(&mut r, lf, d)).collect();
    story_from_parts(&parts, 2, seed ^ 0x5eed)
}

/// Well-conditioned `k × k` mixing matrix, so float32 rounding of the mixed
/// rows cannot tilt their span noticeably.
fn mixing(r: &mut impl rand::Rng, k: usize) -> DMatrix<f64> {
    let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(k, |_, _| r.random_range(0.5..2.0)));
    scale * random_orthogonal(r, k)
}

fn story_shape() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (2usize..=5, 1usize..=4, 2usize..=10, any::<u64>())
}

fn map_values(b: &StoryEmbeddingBundle, f: impl Fn(&TokenEmbeddingMatrix) -> DMatrix<f32>) -> StoryEmbeddingBundle {
    let frames = b
        .frames()
        .iter()
        .map(|fr| TokenEmbeddingMatrix::new(fr.name.clone(), f(fr), fr.layout, fr.frame_index).unwrap())
        .collect();
    StoryEmbeddingBundle::new(frames).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn shapes_layouts_and_untouched_rows_survive((n, lf, d, seed) in story_shape()) {
        let story = random_story(n, lf, d, seed);
        let out = reorganize_story(&story, &cfg()).unwrap();
        let id0 = slice_frame(story.frame(0)).identity_part;
        for (a, b) in story.frames().iter().zip(out.frames()) {
            prop_assert_eq!(a.values.shape(), b.values.shape());
            prop_assert_eq!(a.layout, b.layout);
            let (sa, sb) = (slice_frame(a), slice_frame(b));
            prop_assert_eq!(&sa.untouched_part, &sb.untouched_part);
            prop_assert_eq!(&sb.identity_part, &id0);
        }
    }

    #[test]
    fn two_frame_outputs_are_orthogonal_to_the_other_input((_, lf, d, seed) in story_shape()) {
        prop_assume!(lf < d);
        let story = random_story(2, lf, d, seed);
        let out = reorganize_story(&story, &cfg()).unwrap();
        for (n, m) in [(0, 1), (1, 0)] {
            let after = frame_part(&out, n);
            let other = frame_part(&story, m);
            for row in after.row_iter() {
                if row.norm() == 0.0 { continue; }
                for o in other.row_iter() {
                    let cos = row.dot(&o).abs() / (row.norm() * o.norm());
                    prop_assert!(cos <= 1e-4, "cos {}", cos);
                }
            }
        }
    }

    #[test]
    fn shared_span_is_annihilated((n, lf, d, seed) in story_shape()) {
        prop_assume!(lf < d);
        let mut r = rng(seed);
        let base = gaussian(&mut r, lf, d);
        let parts: Vec<DMatrix<f32>> = (0..n)
            .map(|_| (mixing(&mut r, lf) * &base).map(|v| v as f32))
            .collect();
        let story = story_from_parts(&parts, 1, seed);
        let out = reorganize_story(&story, &cfg()).unwrap();
        for i in 0..n {
            let input = frame_part(&story, i).map(f64::from).norm();
            prop_assert!(frame_part(&out, i).map(f64::from).norm() <= 1e-5 * input);
        }
    }

    #[test]
    fn mutually_orthogonal_spans_are_fixed((n, lf, d, seed) in story_shape()) {
        let d = d.max(n * lf);
        let mut r = rng(seed);
        let q = random_orthogonal(&mut r, d);
        let parts: Vec<DMatrix<f32>> = (0..n)
            .map(|i| {
                let block = q.rows(i * lf, lf).into_owned();
                (mixing(&mut r, lf) * block).map(|v| v as f32)
            })
            .collect();
        let story = story_from_parts(&parts, 1, seed);
        let out = reorganize_story(&story, &cfg()).unwrap();
        for i in 0..n {
            prop_assert!(rel_err_f32(&frame_part(&out, i), &frame_part(&story, i)) <= 1e-6);
        }
    }

    #[test]
    fn scaling_one_frame_scales_only_its_output((n, lf, d, seed) in story_shape(), c in 0.1f32..10.0) {
        let story = random_story(n, lf, d, seed);
        let scaled = map_values(&story, |f| {
            let mut v = f.values.clone();
            if f.frame_index == 0 {
                let span = f.layout.frame_rows;
                let part = v.rows(span.start, span.len()) * c;
                v.rows_mut(span.start, span.len()).copy_from(&part);
            }
            v
        });
        let a = reorganize_story(&story, &cfg()).unwrap();
        let b = reorganize_story(&scaled, &cfg()).unwrap();
        let expected = frame_part(&a, 0) * c;
        // relative to the scaled input: outputs may cancel to near zero
        let diff = (frame_part(&b, 0) - &expected).map(f64::from).norm();
        prop_assert!(diff <= 1e-6 * frame_part(&scaled, 0).map(f64::from).norm());
        for i in 1..n {
            let denom = frame_part(&story, i).map(f64::from).norm();
            let diff = (frame_part(&b, i) - frame_part(&a, i)).map(f64::from).norm();
            prop_assert!(diff <= 1e-6 * denom);
        }
    }

    #[test]
    fn rotation_commutes((n, lf, d, seed) in story_shape()) {
        let story = random_story(n, lf, d, seed);
        let q = random_orthogonal(&mut rng(seed.wrapping_add(1)), d);
        let rotate = |m: &DMatrix<f32>| (m.map(f64::from) * &q).map(|v| v as f32);
        let rotated = map_values(&story, |f| rotate(&f.values));
        let lhs = reorganize_story(&rotated, &cfg()).unwrap();
        let rhs = reorganize_story(&story, &cfg()).unwrap();
        for i in 0..n {
            let expected = rotate(&frame_part(&rhs, i));
            let diff = (frame_part(&lhs, i) - &expected).map(f64::from).norm();
            // relative to the input scale: outputs may cancel to near zero
            prop_assert!(diff <= 1e-5 * frame_part(&story, i).map(f64::from).norm());
        }
    }

    #[test]
    fn energy_never_grows((n, lf, d, seed) in story_shape(), w in 0.0f64..=1.0) {
        let story = random_story(n, lf, d, seed);
        let config = ReorganizerConfig { interference_weight: w, ..cfg() };
        let out = reorganize_story(&story, &config).unwrap();
        let report = build_report(&story, &out, &config).unwrap();
        for e in report.per_frame_energy_ratio {
            prop_assert!(e <= 1.0 + 1e-6);
        }
        for row in report.overlap_before.iter().chain(&report.overlap_after) {
            for &v in row {
                prop_assert!((0.0..=1.0 + 1e-6).contains(&v));
            }
        }
    }
}

#[test]
fn reorganization_is_bit_deterministic() {
    let story = random_story(5, 4, 16, 7);
    let a = reorganize_story(&story, &cfg()).unwrap();
    let b = reorganize_story(&story, &cfg()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_weight_keeps_frame_rows_and_unifies_identity() {
    let story = random_story(3, 3, 8, 11);
    for source in [IdSource::FirstFrame, IdSource::MeanOverFrames, IdSource::PerFrame] {
        let config = ReorganizerConfig {
            interference_weight: 0.0,
            id_source: source,
            ..cfg()
        };
        let out = reorganize_story(&story, &config).unwrap();
        for i in 0..3 {
            assert_eq!(frame_part(&out, i), frame_part(&story, i));
        }
        let ids: Vec<_> = out.frames().iter().map(|f| slice_frame(f).identity_part).collect();
        match source {
            IdSource::PerFrame => assert_eq!(out, story),
            _ => assert!(ids.iter().all(|m| m == &ids[0])),
        }
    }
}

#[test]
fn identical_two_frame_story_zeroes_frame_rows_only() {
    let mut r = rng(3);
    let p = gaussian_f32(&mut r, 3, 6);
    let story = story_from_parts(&[p.clone(), p], 2, 3);
    let out = reorganize_story(&story, &cfg()).unwrap();
    for i in 0..2 {
        assert!(frame_part(&out, i).iter().all(|&v| v == 0.0));
        assert_eq!(
            slice_frame(out.frame(i)).identity_part,
            slice_frame(story.frame(0)).identity_part
        );
    }
}

#[test]
fn zero_rank_frames_count_in_the_normalization() {
    // frame 2 is all zero: it contributes no projection but still divides
    let parts = vec![
        nalgebra::dmatrix![1.0f32, 1.0, 0.0],
        nalgebra::dmatrix![1.0f32, 0.0, 0.0],
        DMatrix::<f32>::zeros(1, 3),
    ];
    let story = story_from_parts(&parts, 0, 1);
    let out = reorganize_story(&story, &cfg()).unwrap();
    let expected = nalgebra::dmatrix![0.5f32, 1.0, 0.0];
    assert!(rel_err_f32(&frame_part(&out, 0), &expected) < 1e-6);
    assert!(frame_part(&out, 2).iter().all(|&v| v == 0.0));
}
