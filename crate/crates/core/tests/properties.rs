use nsp_ope::estimators::{FoldPartition, FoldScheme};
use nsp_ope::experiments::mse_with_ci;
use nsp_ope::io::{read_dataset_jsonl, write_dataset_jsonl, DatasetHeader, RecordKind, DATASET_FORMAT, DATASET_VERSION};
use nsp_ope::nuisance::derive_seed;
use nsp_ope::policies::NaturalPolicySpec;
use nsp_ope::{Dataset, StochasticPolicy, TransitionTuple};
use proptest::prelude::*;

fn policy_rows(ns: usize, na: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.05f64..1.0, na), ns).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let z: f64 = r.iter().sum();
                r.into_iter().map(|x| x / z).collect()
            })
            .collect()
    })
}

fn permutations(ns: usize, na: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(Just((0..na).collect::<Vec<_>>()).prop_shuffle(), ns)
}

proptest! {
    #[test]
    fn tilting_reweights_by_u(
        (rows, u) in (1usize..5, 2usize..5).prop_flat_map(|(ns, na)| (policy_rows(ns, na), prop::collection::vec(0.1f64..5.0, na)))
    ) {
        let pi_b = StochasticPolicy::stationary(rows.clone()).unwrap();
        let pi_e = NaturalPolicySpec::tilting(u.clone()).unwrap().evaluation_policy(&pi_b).unwrap();
        for (s, row) in rows.iter().enumerate() {
            let e = pi_e.probs(0, s);
            prop_assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for a in 1..u.len() {
                let lhs = e[a] / e[0];
                let rhs = u[a] * row[a] / (u[0] * row[0]);
                prop_assert!((lhs - rhs).abs() < 1e-9 * rhs.max(1.0));
            }
        }
    }

    #[test]
    fn modified_treatment_pushes_the_behavior_forward(
        (rows, tau) in (1usize..5, 2usize..5).prop_flat_map(|(ns, na)| (policy_rows(ns, na), permutations(ns, na)))
    ) {
        let pi_b = StochasticPolicy::stationary(rows.clone()).unwrap();
        let spec = NaturalPolicySpec::modified(tau.clone()).unwrap();
        let pi_e = spec.evaluation_policy(&pi_b).unwrap();
        for (s, perm) in tau.iter().enumerate() {
            for (a, &image) in perm.iter().enumerate() {
                prop_assert!((pi_e.prob(0, s, image) - rows[s][a]).abs() < 1e-12);
                prop_assert_eq!(spec.tau_inv(0, s, image), a);
            }
        }
    }

    #[test]
    fn folds_partition_the_records(n in 1usize..300, k_frac in 0.0f64..1.0, seed: u64, random: bool) {
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let scheme = if random { FoldScheme::Random } else { FoldScheme::Contiguous };
        let p = FoldPartition::new(n, k, scheme, seed).unwrap();
        prop_assert_eq!(p.k(), k);
        let sizes = p.sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        for f in 0..k {
            let fold = p.fold(f);
            let train = p.training(f);
            if k == 1 {
                prop_assert_eq!(&train, &fold);
            } else {
                prop_assert_eq!(fold.len() + train.len(), n);
                prop_assert!(fold.iter().all(|i| !train.contains(i)));
            }
        }
        prop_assert_eq!(p.clone(), FoldPartition::new(n, k, scheme, seed).unwrap());
    }

    #[test]
    fn mse_interval_brackets_the_mse(errors in prop::collection::vec(0.0f64..10.0, 1..50)) {
        let (mse, lo, hi) = mse_with_ci(&errors);
        prop_assert!(lo >= 0.0);
        prop_assert!(lo <= mse + 1e-12 && mse <= hi + 1e-12);
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        prop_assert!((mse - mean).abs() < 1e-12);
    }

    #[test]
    fn transition_datasets_round_trip(
        records in prop::collection::vec((0usize..4, 0usize..3, 0.0f64..1.0, 0usize..4, 0usize..3), 1..40),
        seed in prop::option::of(any::<u64>()),
    ) {
        let tuples: Vec<TransitionTuple> =
            records.iter().map(|&(s, a, r, s_next, a_next)| TransitionTuple { s, a, r, s_next, a_next }).collect();
        let data = Dataset::transitions(tuples, seed).unwrap();
        let header = DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            kind: RecordKind::Transitions,
            n_states: 4,
            n_actions: 3,
            seed,
            gamma: Some(0.9),
            initial_dist: None,
        };
        let mut buf = Vec::new();
        write_dataset_jsonl(&mut buf, &header, &data).unwrap();
        let (h, d) = read_dataset_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(d, data);
    }

    #[test]
    fn derived_seeds_separate_streams(master: u64, a in 0u64..1_000_000, b in 0u64..1_000_000) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(master, a), derive_seed(master, b));
    }
}
