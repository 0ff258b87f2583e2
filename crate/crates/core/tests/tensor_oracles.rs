use polypseg_core::tensor::{
    batchnorm, conv2d_as_matrix, conv2d_forward, conv2d_transpose, softmax_xent, BatchNormState, BnMode, ConvMatrix,
    LabelMap, LossNorm, Shape, Tensor, IGNORE,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn conv_matches_explicit_matrix(
        cin in 1usize..4, cout in 1usize..4, k in 1usize..6, stride in 1usize..4,
        pad_frac in 0.0f64..1.0, oh in 1usize..7, ow in 1usize..7, batch in 1usize..3, seed in any::<u64>(),
    ) {
        let span = (oh.min(ow) - 1) * stride + k;
        let padding = (((k - 1).min((span - 1) / 2) + 1) as f64 * pad_frac) as usize;
        // Output size first; the input is the size that produces it exactly.
        let h = (oh - 1) * stride + k - 2 * padding;
        let w = (ow - 1) * stride + k - 2 * padding;
        let kernel = random(Shape::new(cout, cin, k, k), seed);
        let x = random(Shape::new(batch, cin, h, w), seed ^ 1);
        let y = conv2d_forward(&x, &kernel, None, stride, padding).unwrap();
        let m = ConvMatrix::new(&kernel, h, w, stride, padding).unwrap();
        prop_assert_eq!(m.output_size(), (oh, ow));
        prop_assert_eq!((y.shape().h, y.shape().w), (oh, ow));
        let per_in = cin * h * w;
        let per_out = m.rows();
        for n in 0..batch {
            let want = m.multiply(&x.data()[n * per_in..(n + 1) * per_in]).unwrap();
            prop_assert!(max_diff(&y.data()[n * per_out..(n + 1) * per_out], &want) < 1e-10);
        }
    }

    #[test]
    fn transpose_conv_is_matrix_transpose(
        cin in 1usize..4, cout in 1usize..4, k in 1usize..6, stride in 1usize..4,
        oh in 1usize..6, ow in 1usize..6, seed in any::<u64>(),
    ) {
        let kernel = random(Shape::new(cout, cin, k, k), seed);
        let x = random(Shape::new(1, cout, oh, ow), seed ^ 2);
        let y = conv2d_transpose(&x, &kernel, stride).unwrap();
        let full = ((oh - 1) * stride + k, (ow - 1) * stride + k);
        prop_assert_eq!((y.shape().h, y.shape().w), full);
        let m = conv2d_as_matrix(&kernel, full, stride).unwrap();
        prop_assert!(max_diff(y.data(), &m.multiply_transpose(x.data()).unwrap()) < 1e-10);
    }

    #[test]
    fn softmax_loss_is_nonnegative_and_gradient_sums_to_zero(
        classes in 2usize..5, h in 1usize..5, w in 1usize..5, scale in 0.1f64..30.0, seed in any::<u64>(),
    ) {
        let scores = random(Shape::new(2, classes, h, w), seed).scale(scale);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..2 * h * w)
            .map(|_| if rng.gen_bool(0.1) { IGNORE } else { rng.gen_range(0..classes as u8) })
            .collect();
        let labels = LabelMap::new(2, h, w, labels).unwrap();
        for norm in [LossNorm::Mean, LossNorm::Sum] {
            let (loss, g) = softmax_xent(&scores, &labels, norm).unwrap();
            prop_assert!(loss >= 0.0 && loss.is_finite());
            for n in 0..2 {
                for i in 0..h {
                    for j in 0..w {
                        let s: f64 = (0..classes).map(|c| g.get(n, c, i, j)).sum();
                        prop_assert!(s.abs() < 1e-12);
                        if labels.get(n, i, j) == IGNORE {
                            prop_assert!((0..classes).all(|c| g.get(n, c, i, j) == 0.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn inference_batchnorm_is_per_sample(seed in any::<u64>(), n in 1usize..4) {
        let x = random(Shape::new(n, 3, 4, 4), seed);
        let mut st = BatchNormState::new(3);
        st.running_mean = vec![0.1, -0.3, 0.0];
        st.running_var = vec![0.5, 2.0, 1.0];
        let before = st.clone();
        let (y, _) = batchnorm(&x, &mut st, BnMode::Infer).unwrap();
        prop_assert_eq!(&st, &before);
        let (again, _) = batchnorm(&x, &mut st, BnMode::Infer).unwrap();
        prop_assert_eq!(&y, &again);
        // The first sample alone gives the same output as inside the batch.
        let first = Tensor::from_vec(Shape::new(1, 3, 4, 4), x.data()[..48].to_vec()).unwrap();
        let (alone, _) = batchnorm(&first, &mut st, BnMode::Infer).unwrap();
        prop_assert_eq!(alone.data(), &y.data()[..48]);
    }
}
