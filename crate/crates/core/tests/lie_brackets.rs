use lbesc::lie::{channel_vector_field, chen_fliess_predict, lbs_rhs_exact, lie_bracket, VectorField};
use lbesc::model::{b0_of, b0_of_fd, ChannelSpec, EscModel, ScalarMap};
use lbesc::scenario::{preset, PRESETS};
use lbesc::sim::Rk4;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field_a() -> VectorField {
    VectorField::new(3, |_t, x| DVector::from_vec(vec![x[1] * x[2], (x[0]).sin() + x[2] * x[2], (x[0] - x[1]).exp() * 0.1]))
}

fn field_b() -> VectorField {
    VectorField::new(3, |t, x| DVector::from_vec(vec![(x[2] + t).cos(), x[0] * x[0] * x[1], 1.0 + x[1]]))
}

#[test]
fn brackets_are_antisymmetric_on_random_points() {
    let (bi, bj) = (field_a(), field_b());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let x = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let t = rng.random_range(0.0..5.0);
        let ij = lie_bracket(&bi, &bj, t, &x).unwrap();
        let ji = lie_bracket(&bj, &bi, t, &x).unwrap();
        assert!((ij + ji).amax() < 1e-8);
    }
}

#[test]
fn analytic_and_fd_jacobians_give_the_same_bracket() {
    // linear fields A·x and B·x: [A x, B x] = (B A − A B) x
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.5]);
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, -1.0]);
    let (a1, a2, b1, b2) = (a.clone(), a.clone(), b.clone(), b.clone());
    let fa = VectorField::new(2, move |_t, x| &a1 * x).with_jacobian(move |_t, _x| a2.clone());
    let fb = VectorField::new(2, move |_t, x| &b1 * x);
    let x = DVector::from_vec(vec![0.7, -1.3]);
    let br = lie_bracket(&fa, &fb, 0.0, &x).unwrap();
    let want = (&b2 * &a - &a * &b2) * &x;
    assert!((br - want).amax() < 1e-7);
}

#[test]
fn diagonal_brackets_reduce_to_b0_times_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in PRESETS {
        let sc = preset(name).unwrap();
        for agent in &sc.agents {
            let model = EscModel::compile(&agent.spec).unwrap();
            let obj = &agent.spec.objective;
            let n = model.n();
            for _ in 0..20 {
                let x: Vec<f64> = obj.domain.iter().map(|(lo, hi)| rng.random_range(*lo..*hi)).collect();
                let a = vec![1.0; n];
                let lbs = lbs_rhs_exact(&model, &x, &a).unwrap();
                for i in 0..n {
                    let b1 = channel_vector_field(&model, i, 1);
                    let b2 = channel_vector_field(&model, i, 2);
                    let br = lie_bracket(&b2, &b1, 0.0, &DVector::from_vec(x.clone())).unwrap();
                    let want = lbs.b0[i] * lbs.grad[i];
                    let scale = want.abs().max(1.0);
                    assert!((br[i] - want).abs() <= 1e-5 * scale, "{name} ch{i}: {} vs {want}", br[i]);
                    for k in (0..n).filter(|k| *k != i) {
                        assert!(br[k].abs() < 1e-12);
                    }
                }
            }
        }
    }
}

/// Largest first-order prediction error over one dither period of the
/// Case 1 loop, with measurement interval `period / pieces`.
fn chen_fliess_error(pieces: usize) -> f64 {
    let sc = preset("case1").unwrap();
    let model = EscModel::compile(&sc.agents[0].spec).unwrap();
    let ch = &model.spec.channels;
    let a = [1.0];
    let period = model.spec.channel_period(0);
    let interval = period / pieces as f64;
    let sub = 256;
    let h = interval / sub as f64;

    let mut rk = Rk4::new(1);
    let mut rhs = |t: f64, x: &[f64], out: &mut [f64]| {
        model.esc_rhs(t, x, &a, out);
        Ok(())
    };
    let (mut u1, mut u2) = ([0.0], [0.0]);
    let mut x = vec![2.0];
    let mut worst = 0.0_f64;
    for p in 0..pieces {
        let t1 = p as f64 * interval;
        let f1 = model.spec.objective.eval(&x);
        let mut grad = [0.0];
        model.spec.objective.oracle_gradient(&x, &mut grad);
        // Simpson for the input integrals on the same sub-grid
        let (mut big1, mut big2) = (0.0, 0.0);
        for k in 0..sub {
            let ta = t1 + k as f64 * h;
            let mut acc = (0.0, 0.0);
            for (w, tt) in [(1.0, ta), (4.0, ta + 0.5 * h), (1.0, ta + h)] {
                model.inputs(tt, &a, &mut u1, &mut u2);
                acc.0 += w * u1[0];
                acc.1 += w * u2[0];
            }
            big1 += acc.0 * h / 6.0;
            big2 += acc.1 * h / 6.0;
            rk.step(&mut rhs, ta, &mut x, h).unwrap();
        }
        let predicted = chen_fliess_predict(f1, &grad, ch, &[big1], &[big2]).unwrap();
        worst = worst.max((predicted - model.spec.objective.eval(&x)).abs());
    }
    worst
}

#[test]
fn chen_fliess_truncation_is_second_order() {
    let coarse = chen_fliess_error(32);
    let fine = chen_fliess_error(64);
    let ratio = coarse / fine;
    eprintln!("chen-fliess error ratio {ratio:.3}");
    assert!((3.0..=5.0).contains(&ratio), "ratio {ratio} ({coarse} / {fine})");
}

#[test]
fn chen_fliess_at_extremum_predicts_no_change() {
    let ch = vec![ChannelSpec { b1: ScalarMap::linear(1.0), b2: ScalarMap::constant(1.0), dither_pair: (0, 1) }];
    assert_eq!(chen_fliess_predict(0.0, &[0.0], &ch, &[3.0], &[-1.0]).unwrap(), 0.0);
}

fn scalar_map() -> impl Strategy<Value = ScalarMap> {
    prop_oneof![
        (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(gain, offset)| ScalarMap::Affine { gain, offset }),
        (0.1..4.0f64, -2.0..2.0f64).prop_map(|(k, scale)| ScalarMap::Cos { k, scale }),
        (0.1..4.0f64, -2.0..2.0f64).prop_map(|(k, scale)| ScalarMap::Sin { k, scale }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn b0_analytic_matches_finite_differences(b1 in scalar_map(), b2 in scalar_map(), f in -5.0..5.0f64) {
        let ch = ChannelSpec { b1, b2, dither_pair: (0, 1) };
        let exact = b0_of(&ch, f).unwrap();
        let fd = b0_of_fd(&ch, f).unwrap();
        prop_assert!((exact - fd).abs() <= 1e-5 * exact.abs().max(1.0));
    }

    #[test]
    fn constant_pairs_have_zero_b0(c1 in -5.0..5.0f64, c2 in -5.0..5.0f64, f in -10.0..10.0f64) {
        let ch = ChannelSpec { b1: ScalarMap::constant(c1), b2: ScalarMap::constant(c2), dither_pair: (0, 1) };
        prop_assert_eq!(b0_of(&ch, f).unwrap(), 0.0);
    }

    #[test]
    fn rotation_pair_has_b0_equal_to_k(k in 0.1..5.0f64, f in -5.0..5.0f64) {
        let ch = ChannelSpec { b1: ScalarMap::Cos { k, scale: 1.0 }, b2: ScalarMap::Sin { k, scale: -1.0 }, dither_pair: (0, 1) };
        prop_assert!((b0_of(&ch, f).unwrap() - k).abs() < 1e-12);
    }
}
