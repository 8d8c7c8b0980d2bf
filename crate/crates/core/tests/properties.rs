use coldstart::baselines::{select_eps_greedy, select_exploration, select_random};
use coldstart::budget::{allocate_scores, controversy, popularity};
use coldstart::criteria::{calibrate, diversity_matrix, diversity_rows, objectivity, similarity_matrix, CriteriaBundle, UserProfiles};
use coldstart::data::{encode, generate_synthetic, make_split, FeatureVector, Layout, Rating, RatingScale, RatingStore, SyntheticSpec};
use coldstart::fm::{self, FmModel, Regularization, Task, TrainConfig};
use coldstart::matrix::{mean_std, top_k_indices, SquareMatrix};
use coldstart::metrics::{ast, mae, pfr, rmse, topn_eval, Prediction, PredictionSet, RequestLog};
use coldstart::selector::{brute_force_select, build_m, indicator, initial_solution, psd_shift, solve, Weights};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f64> {
    -1.0..1.0f64
}

prop_compose! {
    fn model_and_input()(dim in 2usize..9, factors in 1usize..5, classify in any::<bool>())
        (w0 in unit(),
         w in prop::collection::vec(unit(), dim),
         v in prop::collection::vec(unit(), dim * factors),
         x in prop::collection::vec(prop_oneof![Just(0.0), -2.0..2.0f64], dim),
         factors in Just(factors),
         classify in Just(classify))
        -> (FmModel, Vec<f64>)
    {
        let task = if classify { Task::Classification } else { Task::Regression };
        let mut m = FmModel::zeros(Layout::flat(w.len()), factors, task);
        m.w0 = w0;
        m.w = w;
        m.v = v;
        (m, x)
    }
}

fn pairwise_score(m: &FmModel, x: &[f64]) -> f64 {
    let mut y = m.w0 + x.iter().zip(&m.w).map(|(a, b)| a * b).sum::<f64>();
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dot: f64 = (0..m.factors()).map(|f| m.factor(i, f) * m.factor(j, f)).sum();
            y += dot * x[i] * x[j];
        }
    }
    y
}

prop_compose! {
    /// Raw (uncalibrated) criteria over `n` users with a valid similarity
    /// matrix built from random rating rows.
    fn raw_bundle(n: usize)(
        p in prop::collection::vec(0.0..1.0f64, n),
        potential in prop::collection::vec(1.0..5.0f64, n),
        o in prop::collection::vec(0.0..2.0f64, n),
        s in prop::collection::vec(0.0..1.0f64, n * n),
    ) -> CriteriaBundle {
        let s = SquareMatrix::from_fn(n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => s[i * n + j],
            std::cmp::Ordering::Greater => s[j * n + i],
        });
        let d = diversity_matrix(&potential);
        CriteriaBundle::new((0..n).collect(), p, potential, d, o, s).unwrap()
    }
}

fn weights() -> impl Strategy<Value = Weights> {
    (0.0..2.0f64, 0.0..2.0f64, 0.0..2.0f64, 0.0..2.0f64).prop_map(|(alpha, beta, gamma, sigma)| Weights {
        alpha,
        beta,
        gamma,
        sigma,
    })
}

fn small_store() -> impl Strategy<Value = RatingStore> {
    (2usize..12, 2usize..10, 1usize..5, any::<u64>()).prop_map(|(users, items, attrs, seed)| {
        let spec = SyntheticSpec {
            n_users: users,
            n_items: items,
            n_attrs: attrs,
            latent_dim: 2,
            density: 0.5,
            noise_std: 0.1,
            seed,
        };
        generate_synthetic(&spec, RatingScale::default()).unwrap()
    })
}

fn prediction_set() -> impl Strategy<Value = PredictionSet> {
    prop::collection::btree_map((0usize..6, 0usize..8), (1.0..5.0f64, 0.0..6.0f64), 1..30).prop_map(|cells| {
        PredictionSet::new(
            cells
                .into_iter()
                .map(|((user, item), (actual, predicted))| Prediction {
                    user,
                    item,
                    actual: actual.round(),
                    predicted,
                })
                .collect(),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // ---- data

    #[test]
    fn split_partitions_items_and_users(store in small_store(), fraction in 0.1..0.9f64, seed in any::<u64>()) {
        let Ok(split) = make_split(&store, fraction, seed) else { return Ok(()) };
        let mut items = [split.train_items.clone(), split.test_items.clone()].concat();
        items.sort_unstable();
        prop_assert_eq!(items, (0..store.num_items()).collect::<Vec<_>>());
        prop_assert_eq!(split.test_items.len(), (fraction * store.num_items() as f64 + 0.5).floor() as usize);
        let mut users = [split.active_users.clone(), split.prediction_users.clone()].concat();
        users.sort_unstable();
        prop_assert_eq!(users, (0..store.num_users()).collect::<Vec<_>>());
        prop_assert!(split.active_users.len().abs_diff(split.prediction_users.len()) <= 1);
        prop_assert_eq!(&make_split(&store, fraction, seed).unwrap(), &split);
    }

    #[test]
    fn encoding_has_block_shape(users in 1usize..20, items in 1usize..20, attrs in prop::collection::btree_set(0usize..15, 0..6), with_item in any::<bool>()) {
        let layout = Layout { users, items: with_item.then_some(items), attrs: 15 };
        let attrs: Vec<usize> = attrs.into_iter().collect();
        let x = encode(layout, users - 1, with_item.then_some(items - 1), &attrs).unwrap();
        prop_assert_eq!(x.dim(), users + if with_item { items } else { 0 } + 15);
        prop_assert_eq!(x.nnz(), 1 + usize::from(with_item) + attrs.len());
        prop_assert!(x.entries().iter().all(|&(_, v)| v == 1.0));
        prop_assert_eq!(x.entries().iter().filter(|&&(i, _)| i < users).count(), 1);
    }

    // ---- factorization machine

    #[test]
    fn factorized_score_matches_pairwise_sum((model, x) in model_and_input()) {
        let fv = FeatureVector::from_dense(&x);
        let fast = model.raw_score(&fv).unwrap();
        prop_assert!((fast - pairwise_score(&model, &x)).abs() <= 1e-10);
        let out = model.predict(&fv).unwrap();
        if model.task() == Task::Classification {
            prop_assert!(out > 0.0 && out < 1.0);
        } else {
            prop_assert_eq!(out, fast);
        }
    }

    #[test]
    fn gradient_matches_central_differences((model, x) in model_and_input(), label in 0.0..1.0f64) {
        let label = if model.task() == Task::Classification { label.round() } else { 1.0 + 4.0 * label };
        let fv = FeatureVector::from_dense(&x);
        let reg = Regularization { w0: 0.01, w: 0.01, v: 0.01 };
        let g = fm::gradient(&model, &fv, label, &reg).unwrap();
        let h = 1e-5;
        let loss = |m: &FmModel| fm::instance_loss(m, &fv, label, &reg).unwrap();
        let numeric = |bump: &dyn Fn(&mut FmModel, f64)| {
            let (mut up, mut down) = (model.clone(), model.clone());
            bump(&mut up, h);
            bump(&mut down, -h);
            (loss(&up) - loss(&down)) / (2.0 * h)
        };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-3);
        prop_assert!(close(g.w0, numeric(&|m, d| m.w0 += d)));
        for &(i, _) in fv.entries() {
            prop_assert!(close(g.w[i], numeric(&|m, d| m.w[i] += d)));
            for f in 0..model.factors() {
                let at = i * model.factors() + f;
                prop_assert!(close(g.v[at], numeric(&|m, d| m.v[at] += d)));
            }
        }
    }

    #[test]
    fn small_step_sgd_lowers_training_loss(xs in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 4), 5), ys in prop::collection::vec(1.0..5.0f64, 5)) {
        let data: Vec<(FeatureVector, f64)> = xs.iter().zip(&ys).map(|(x, &y)| (FeatureVector::from_dense(x), y)).collect();
        let config = TrainConfig { factors: 2, epochs: 1, learning_rate: 1e-3, shuffle: false, ..TrainConfig::default() };
        let reg = config.regularization();
        let mut model = fm::train(&data, Task::Regression, Layout::flat(4), &config, None).unwrap();
        let mut last = fm::training_loss(&model, &data, &reg).unwrap();
        for _ in 0..20 {
            model = fm::train(&data, Task::Regression, Layout::flat(4), &config, Some(&model)).unwrap();
            let now = fm::training_loss(&model, &data, &reg).unwrap();
            prop_assert!(now <= last + 1e-12, "loss rose from {last} to {now}");
            last = now;
        }
    }

    // ---- criteria

    #[test]
    fn raw_criteria_shapes(potential in prop::collection::vec(1.0..5.0f64, 2..20)) {
        let n = potential.len();
        let d = diversity_matrix(&potential);
        for i in 0..n {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!(d.get(i, j) >= 0.0);
                prop_assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
        let split = n / 2;
        let rows = [diversity_rows(&potential, 0..split), diversity_rows(&potential, split..n)].concat();
        prop_assert_eq!(rows.as_slice(), d.values());
    }

    #[test]
    fn similarity_and_objectivity_shapes(store in small_store(), scale in 0.5..3.0f64) {
        let users: Vec<usize> = (0..store.num_users()).collect();
        let items: Vec<usize> = (0..store.num_items()).collect();
        let s = similarity_matrix(&store, &items, &users);
        let n = users.len();
        for i in 0..n {
            prop_assert_eq!(s.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s.get(i, j)));
                prop_assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
        let profiles = UserProfiles::new(&store, &items, &users);
        let half = n / 2;
        let rows = [profiles.similarity_rows(0..half), profiles.similarity_rows(half..n)].concat();
        prop_assert_eq!(rows.as_slice(), s.values());

        let o = objectivity(&store, &items, &users);
        prop_assert!(o.iter().all(|v| *v >= 0.0));
        let reversed: Vec<usize> = users.iter().rev().copied().collect();
        let o_rev = objectivity(&store, &items, &reversed);
        prop_assert_eq!(o_rev.into_iter().rev().collect::<Vec<_>>(), o);

        // cosine ignores positive rescaling of a user's whole rating row
        let ratings: Vec<Rating> = store
            .ratings()
            .iter()
            .map(|r| Rating { value: if r.user == 0 { r.value * scale } else { r.value }, ..*r })
            .collect();
        let wide = RatingScale { min: 0.0, max: 20.0 };
        let attrs: Vec<Vec<usize>> = items.iter().map(|&i| store.item_attrs(i).to_vec()).collect();
        let scaled = RatingStore::new(store.num_users(), store.num_items(), store.num_attrs(), ratings, attrs, wide).unwrap();
        let s2 = similarity_matrix(&scaled, &items, &users);
        for (a, b) in s.values().iter().zip(s2.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn calibration_centres_every_signal(bundle in (2usize..15).prop_flat_map(raw_bundle)) {
        let c = calibrate(&bundle, None).unwrap();
        for v in [&c.p, &c.o] {
            let (mean, std) = mean_std(v);
            prop_assert!(mean.abs() <= 1e-9);
            prop_assert!(std == 0.0 || (std - 1.0).abs() <= 1e-9);
        }
        let n = c.len();
        for (raw, cal) in [(&bundle.d, &c.d), (&bundle.s, &c.s)] {
            prop_assert!(cal.is_symmetric(1e-12));
            let (mean, std) = mean_std(raw.values());
            for i in 0..n {
                for j in 0..n {
                    let expected = if i == j || std == 0.0 { 0.0 } else { (raw.get(i, j) - mean) / std / n as f64 };
                    prop_assert!((cal.get(i, j) - expected).abs() <= 1e-12);
                }
            }
        }
    }

    // ---- selector

    #[test]
    fn selection_matrix_and_ascent(bundle in (2usize..15).prop_flat_map(raw_bundle), w in weights(), k_seed in any::<usize>()) {
        let c = calibrate(&bundle, None).unwrap();
        let n = c.len();
        let k = 1 + k_seed % n;
        let problem = build_m(&c, w, k).unwrap();
        let m = problem.matrix();
        prop_assert!(m.is_symmetric(1e-9));
        let s_rows = c.s.row_sums();
        for (i, &row) in s_rows.iter().enumerate() {
            let diag = w.alpha * c.p[i] - w.gamma * c.o[i] + w.sigma * row;
            prop_assert!((m.get(i, i) - diag).abs() <= 1e-12);
        }

        let result = solve(&psd_shift(&problem), 50).unwrap();
        prop_assert_eq!(result.q.iter().filter(|b| **b).count(), k);
        prop_assert_eq!(result.selected.len(), k);
        prop_assert!(result.iterations <= 50);
        prop_assert!(result.is_monotone());
        prop_assert!((result.objective - m.quadratic_form_on(&result.selected)).abs() <= 1e-12);
    }

    #[test]
    fn brute_force_argmax_ignores_the_shift(bundle in raw_bundle(8), w in weights(), k in 1usize..8) {
        let problem = build_m(&calibrate(&bundle, None).unwrap(), w, k).unwrap();
        let plain = brute_force_select(&problem).unwrap();
        let shifted = brute_force_select(&psd_shift(&problem)).unwrap();
        prop_assert_eq!(plain.selected, shifted.selected);
    }

    #[test]
    fn willingness_only_selects_top_p(bundle in (2usize..12).prop_flat_map(raw_bundle), k_seed in any::<usize>()) {
        let c = calibrate(&bundle, None).unwrap();
        let k = 1 + k_seed % c.len();
        let w = Weights { alpha: 1.0, beta: 0.0, gamma: 0.0, sigma: 0.0 };
        let problem = psd_shift(&build_m(&c, w, k).unwrap());
        let expected = top_k_indices(&c.p, k);
        prop_assert_eq!(&solve(&problem, 100).unwrap().selected, &expected);
        prop_assert_eq!(initial_solution(&problem), indicator(c.len(), &expected));
        prop_assert_eq!(&brute_force_select(&problem).unwrap().selected, &expected);
        prop_assert_eq!(select_eps_greedy(&c.p, k, 0.0, 3).unwrap(), expected);
    }

    // ---- baselines

    #[test]
    fn baselines_return_k_distinct_members(pool in prop::collection::btree_set(0usize..500, 1..40), k_seed in any::<usize>(), seed in any::<u64>(), eps in 0.0..=1.0f64) {
        let pool: Vec<usize> = pool.into_iter().collect();
        let k = 1 + k_seed % pool.len();
        let distinct = |v: &[usize]| {
            let mut s = v.to_vec();
            s.sort_unstable();
            s.dedup();
            s.len()
        };
        let random = select_random(&pool, k, seed).unwrap();
        prop_assert_eq!(random.len(), k);
        prop_assert_eq!(distinct(&random), k);
        prop_assert!(random.iter().all(|u| pool.contains(u)));

        let p: Vec<f64> = (0..pool.len()).map(|i| ((i * 37 + 11) % 17) as f64 / 17.0).collect();
        let greedy = select_eps_greedy(&p, k, eps, seed).unwrap();
        prop_assert_eq!(greedy.len(), k);
        prop_assert_eq!(distinct(&greedy), k);
        prop_assert!(greedy.iter().all(|&i| i < pool.len()));

        let s = SquareMatrix::from_fn(pool.len(), |i, j| if i == j { 0.0 } else { 1.0 / (1 + i.abs_diff(j)) as f64 });
        let explore = select_exploration(&s, k, 1.0, 100).unwrap();
        prop_assert_eq!(explore.selected.len(), k);
        prop_assert_eq!(distinct(&explore.selected), k);
    }

    // ---- budget

    #[test]
    fn budget_is_exact_floored_monotone_and_scale_free(scores in prop::collection::vec(prop_oneof![Just(0.0), 0.0..3.0f64], 1..20), extra in 0usize..200, c in 0.01..100.0f64, bump in 0.0..2.0f64, at in any::<usize>()) {
        let l = scores.len();
        let k_total = l + extra;
        let k = allocate_scores(&scores, k_total, None).unwrap();
        prop_assert_eq!(k.iter().sum::<usize>(), k_total);
        prop_assert!(k.iter().all(|&v| v >= 1));
        for i in 0..l {
            for j in 0..l {
                if scores[i] > scores[j] {
                    prop_assert!(k[i] >= k[j]);
                }
            }
        }
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        let k_scaled = allocate_scores(&scaled, k_total, None).unwrap();
        prop_assert_eq!(&k_scaled, &k);

        let i = at % l;
        let mut raised = scores.clone();
        raised[i] += bump;
        prop_assert!(allocate_scores(&raised, k_total, None).unwrap()[i] >= k[i]);
    }

    #[test]
    fn budget_respects_cap(scores in prop::collection::vec(0.0..3.0f64, 1..15), cap in 1usize..30, fill in 0.0..=1.0f64) {
        let l = scores.len();
        let k_total = l + ((cap * l - l) as f64 * fill) as usize;
        let k = allocate_scores(&scores, k_total, Some(cap)).unwrap();
        prop_assert_eq!(k.iter().sum::<usize>(), k_total);
        prop_assert!(k.iter().all(|&v| (1..=cap).contains(&v)));
    }

    #[test]
    fn popularity_and_controversy_are_pool_statistics(pr in prop::collection::vec(prop::collection::vec(0.0..5.0f64, 1..20), 1..5)) {
        let pop = popularity(&pr).unwrap();
        let con = controversy(&pr).unwrap();
        for (i, v) in pr.iter().enumerate() {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            prop_assert!((pop[i] - mean).abs() <= 1e-12);
            let (_, std) = mean_std(v);
            prop_assert!((con[i] - std / n.sqrt()).abs() <= 1e-12);
            prop_assert!(con[i] >= 0.0);
        }
    }

    // ---- metrics

    #[test]
    fn error_and_ranking_metrics_bounds(preds in prediction_set()) {
        let (r, m) = (rmse(&preds).unwrap(), mae(&preds).unwrap());
        prop_assert!(r >= m - 1e-12 && m >= 0.0);
        let ranking = topn_eval(&preds, 10, 3.0).unwrap();
        for v in [ranking.precision_at_5, ranking.precision_at_n, ranking.recall_at_5, ranking.recall_at_n, ranking.ndcg_at_5, ranking.ndcg_at_n] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }

        // predicting the truth orders every list ideally
        let oracle = PredictionSet::new(
            preds.entries().iter().map(|p| Prediction { predicted: p.actual, ..*p }).collect(),
        ).unwrap();
        let ideal = topn_eval(&oracle, 10, 3.0).unwrap();
        if ideal.users_with_preferred > 0 {
            prop_assert!((ideal.ndcg_at_5 - 1.0).abs() <= 1e-12);
            prop_assert!((ideal.ndcg_at_n - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn request_metrics_ignore_item_labels(rows in prop::collection::vec((prop::collection::btree_set(0usize..30, 1..10), any::<u64>()), 1..8), offset in 1usize..1000) {
        let build = |shift: usize| {
            let mut log = RequestLog::new();
            for (item, (asked, mask)) in rows.iter().enumerate() {
                let asked: Vec<usize> = asked.iter().copied().collect();
                let answered: Vec<usize> = asked.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &u)| u).collect();
                log.record(item * 7 + shift, asked, answered).unwrap();
            }
            log
        };
        let (a, b) = (build(0), build(offset));
        prop_assert_eq!(pfr(&a).unwrap(), pfr(&b).unwrap());
        prop_assert_eq!(ast(&a).unwrap(), ast(&b).unwrap());
        prop_assert!((0.0..=1.0).contains(&pfr(&a).unwrap()));
    }
}
