use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selfmi::cpc::{infonce_loss, mi_lower_bound, unit_normalize_rows};
use selfmi::data::{gen_synthetic, load_features, save_features, SeqDims, SyntheticSpec};
use selfmi::fusion::{fuse, FusionParams};
use selfmi::params::Session;
use selfmi::ulg::ULabelState;
use selfmi::{checkpoint, Modality, ModelConfig, ParamStore, SelfMiModel, Tape, TaskSet, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn square() -> impl Strategy<Value = Tensor> {
    (1usize..10).prop_flat_map(|n| matrix(n, n))
}

fn infonce(score: Tensor) -> f64 {
    let mut tape = Tape::new();
    let s = tape.leaf(score, false);
    let l = infonce_loss(&mut tape, s).unwrap();
    tape.value(l).item()
}

proptest! {
    #[test]
    fn normalized_rows_have_unit_norm_and_are_idempotent(x in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c))) {
        prop_assume!((0..x.rows()).all(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt() >= 1e-3));
        let mut tape = Tape::new();
        let v = tape.leaf(x, false);
        let u = unit_normalize_rows(&mut tape, v).unwrap();
        let uu = unit_normalize_rows(&mut tape, u).unwrap();
        let (a, b) = (tape.value(u).clone(), tape.value(uu));
        for i in 0..a.rows() {
            let norm = a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-12);
        }
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn infonce_ignores_a_global_shift(score in square(), c in -100.0f64..100.0) {
        let shifted = score.map(|v| v + c);
        prop_assert!((infonce(score) - infonce(shifted)).abs() <= 1e-9);
    }

    #[test]
    fn mi_bound_never_exceeds_ln_n(score in square()) {
        let n = score.rows();
        let bound = mi_lower_bound(infonce(score), n);
        prop_assert!(bound <= (n as f64).ln() + 1e-9);
    }

    #[test]
    fn fusion_is_permutation_covariant(seed in 0u64..1000, perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let f = FusionParams::init(&mut store, [3, 2, 4], 6, &mut rng);
        let xs: Vec<Tensor> = [3, 2, 4]
            .iter()
            .map(|&d| Tensor::matrix(5, d, (0..5 * d).map(|k| ((k as f64 + seed as f64) * 0.37).sin()).collect()).unwrap())
            .collect();
        let run = |inputs: &[Tensor]| {
            let mut sess = Session::new(&store, false);
            let v: Vec<_> = inputs.iter().map(|t| sess.tape.leaf(t.clone(), false)).collect();
            let z = fuse(&mut sess, &f, v[0], v[1], v[2]).unwrap();
            sess.tape.value(z).clone()
        };
        let base = run(&xs);
        let permuted: Vec<Tensor> = xs.iter().map(|t| t.select_rows(&perm).unwrap()).collect();
        prop_assert_eq!(run(&permuted), base.select_rows(&perm).unwrap());
        prop_assert!(base.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn generated_labels_are_clamped(values in prop::collection::vec(-50.0f64..50.0, 4)) {
        let ids = (0..4).map(|i| format!("s{i}")).collect();
        let mut st = ULabelState::new(ids, vec![0.5, -1.0, 2.0, 0.0], (-3.0, 3.0), [2, 2, 2, 2]).unwrap();
        st.set_epoch(2).unwrap();
        st.store_generated(Modality::Audio, &[0, 1, 2, 3], &values).unwrap();
        for (&l, &v) in st.labels(Modality::Audio).iter().zip(&values) {
            prop_assert_eq!(l, v.clamp(-3.0, 3.0));
        }
        prop_assert_eq!(st.labels(Modality::Text), st.y_m());
    }

    #[test]
    fn task_sets_round_trip_through_text(t: bool, a: bool, v: bool) {
        let set = TaskSet { t, a, v };
        prop_assert_eq!(set.to_string().parse::<TaskSet>().unwrap(), set);
    }
}

fn tiny_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_samples: 15,
        dims: SeqDims {
            l_t: 2,
            d_t: 3,
            l_a: 3,
            d_a: 2,
            l_v: 2,
            d_v: 2,
        },
        latent_dim: 2,
        ..SyntheticSpec::standard(seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn feature_files_round_trip(seed in 0u64..10_000) {
        let data = gen_synthetic(&tiny_spec(seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.txt");
        save_features(&data, &path).unwrap();
        prop_assert_eq!(load_features(&path).unwrap(), data);
    }

    #[test]
    fn checkpoints_round_trip(seed in 0u64..10_000) {
        let cfg = ModelConfig::for_dims(tiny_spec(0).dims);
        let (model, params) = SelfMiModel::new(cfg, seed).unwrap();
        let text = checkpoint::to_string(&model, &params, None).unwrap();
        let back = checkpoint::from_str(&text).unwrap();
        prop_assert_eq!(&back.params, &params);
        prop_assert_eq!(checkpoint::to_string(&back.model, &back.params, None).unwrap(), text);
    }
}
