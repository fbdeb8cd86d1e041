use proptest::prelude::*;

use timemm::checkpoint::Checkpoint;
use timemm::context::softmax;
use timemm::data::{make_temporal_split, Interaction, InteractionLog};
use timemm::diagnostics::{perturb_timestamps, PerturbMode};
use timemm::eval::{metrics_from_ranks, rank_of};
use timemm::operators::{kernel, OperatorBank};
use timemm::spectral::{check_dirichlet, eig, random_bipartite};
use timemm::tensor::{Matrix, Tensor};
use timemm::training::diversity_loss;

fn log_strategy() -> impl Strategy<Value = InteractionLog> {
    (2usize..8, 2usize..10)
        .prop_flat_map(|(users, items)| {
            let triple = (0..users as u32, 0..items as u32, 0u32..1_000_000);
            (Just(users), Just(items), prop::collection::vec(triple, 1..60))
        })
        .prop_map(|(users, items, raw)| {
            let triples = raw
                .into_iter()
                .map(|(user, item, t)| Interaction {
                    user,
                    item,
                    time: t as f64,
                })
                .collect();
            InteractionLog::from_dense(users, items, triples).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_bounded_and_monotone(dt in 0.0f64..1e4, extra in 1e-3f64..1e3, tau in 0.05f64..50.0, tau_gap in 1e-3f64..20.0) {
        let w = kernel(dt, tau).unwrap();
        prop_assert!(w > 0.0 && w <= 1.0);
        prop_assert!(kernel(dt + extra, tau).unwrap() <= w);
        prop_assert!(kernel(dt, tau + tau_gap).unwrap() >= w);
    }

    #[test]
    fn softmax_lies_on_the_simplex(logits in prop::collection::vec(-50.0f64..50.0, 1..6), shift in -100.0f64..100.0, t in 0.05f64..5.0) {
        let p = softmax(&logits, t).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let q = softmax(&shifted, t).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_operators_are_symmetric_contractions(seed in 0u64..1000, users in 2usize..9, items in 2usize..9) {
        let train = random_bipartite(seed, users, items, 0.4, 100.0);
        prop_assume!(!train.is_empty());
        let bank = OperatorBank::temporal(&train, &[0.5, 2.0, 8.0], 86_400.0).unwrap();
        let n = bank.num_nodes();
        for k in 0..bank.k() {
            let s = bank.operator(k).to_dense();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((s[i * n + j] - s[j * n + i]).abs() < 1e-15);
                    prop_assert!((0.0..=1.0 + 1e-12).contains(&s[i * n + j]));
                }
            }
            let spectrum = eig(&s, n).unwrap();
            prop_assert!(spectrum.values.iter().all(|&l| l.abs() <= 1.0 + 1e-10));
            prop_assert!(bank.pattern().nnz() == bank.operator(k).values().len());
        }
    }

    #[test]
    fn dirichlet_trace_matches_edge_sum(seed in 0u64..1000) {
        let train = random_bipartite(seed, 6, 7, 0.35, 60.0);
        prop_assume!(!train.is_empty());
        let bank = OperatorBank::temporal(&train, &[0.5, 8.0], 86_400.0).unwrap();
        let x = Matrix::from_fn(bank.num_nodes(), 3, |r, c| ((r * 7 + c * 3 + seed as usize) % 11) as f64 - 5.0);
        for k in 0..bank.k() {
            let (trace, edges) = check_dirichlet(bank.operator(k), bank.adjacency(k), bank.degrees(k), &x);
            prop_assert!((trace - edges).abs() <= 1e-8 * trace.abs().max(1.0));
            prop_assert!(trace >= -1e-9);
        }
    }

    #[test]
    fn temporal_split_respects_time(log in log_strategy()) {
        let split = make_temporal_split(&log);
        let train = split.train();
        prop_assert_eq!(train.len() + 2 * split.evaluated_users().len(), log.len());
        for u in split.evaluated_users() {
            let v = split.valid(u).unwrap();
            let t = split.test(u).unwrap();
            prop_assert!(v.time <= t.time);
            for x in train.user_history(u) {
                prop_assert!(x.time <= v.time);
            }
            prop_assert!(train.user_history(u).windows(2).all(|w| w[0].time <= w[1].time));
        }
    }

    #[test]
    fn perturbation_touches_only_train_times(log in log_strategy(), seed in 0u64..100, mode_idx in 0usize..3) {
        let split = make_temporal_split(&log);
        prop_assume!(!split.train().is_empty());
        let mode = [PerturbMode::Shuffle, PerturbMode::Constant, PerturbMode::Noise][mode_idx];
        let p = perturb_timestamps(&split, mode, seed, 0.05).unwrap();
        prop_assert_eq!(p.train().len(), split.train().len());
        for u in 0..split.num_users() {
            prop_assert_eq!(p.valid(u), split.valid(u));
            prop_assert_eq!(p.test(u), split.test(u));
            prop_assert_eq!(p.train().user_items(u), split.train().user_items(u));
        }
    }

    #[test]
    fn ranks_and_metrics_are_consistent(scores in prop::collection::vec(-5.0f64..5.0, 2..40), target_seed in any::<u64>()) {
        let target = (target_seed as usize) % scores.len();
        let rank = rank_of(&scores, target, |_| false);
        prop_assert!(rank >= 1 && rank <= scores.len());
        let above = scores.iter().filter(|&&s| s > scores[target]).count();
        prop_assert!(rank > above);
        let (recall, ndcg) = metrics_from_ranks(&[rank], &[1, 5, 20]);
        for (r, g) in recall.iter().zip(&ndcg) {
            prop_assert!(*g <= *r && (0.0..=1.0).contains(r));
        }
    }

    #[test]
    fn identical_experts_give_k_squared_minus_k(k in 1usize..6, margins in prop::collection::vec(-3.0f64..3.0, 4..30)) {
        let var: f64 = {
            let m = margins.iter().sum::<f64>() / margins.len() as f64;
            margins.iter().map(|x| (x - m).powi(2)).sum::<f64>() / margins.len() as f64
        };
        prop_assume!(var > 1e-3);
        let experts = vec![margins.clone(); k];
        let (value, _) = diversity_loss(&experts, 0.0, 0.0, 1e-12);
        prop_assert!((value - (k * k - k) as f64).abs() <= 1e-6);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact_for_f32(values in prop::collection::vec(-1e6f32..1e6, 0..50), echo in "[a-z_ =0-9\n]{0,40}") {
        let c = Checkpoint {
            version: 1,
            config_echo: echo,
            tensors: vec![Tensor { name: "w".into(), shape: vec![values.len()], data: values.iter().map(|&v| v as f64).collect() }],
        };
        prop_assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }
}
