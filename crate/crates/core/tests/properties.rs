//! Property tests across diffusion, guidance and the concept bank.

use conceptdiff::conceptbank::{
    donor_distribution, sample_negative_concepts, top_k_indices, BankCategory, ConceptBank, NegativeStrategy,
};
use conceptdiff::diffusion::{
    ddim_pairs, ddim_step, ddpm_step, estimate_x0, posterior_mean, q_sample, NoiseSchedule, StepPair,
};
use conceptdiff::embedder::{EmbedderConfig, JointEmbedder, Tokenizer};
use conceptdiff::grad::{value_and_grad, Graph};
use conceptdiff::guidance::{contrastive_from_scores, contrastive_loss, informed_epsilon, GuidanceGrad, MatchContext};
use conceptdiff::rng;
use conceptdiff::Tensor;
use proptest::prelude::*;

fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn pair(seed: u64, shape: &[usize], lo: f32, hi: f32) -> (Tensor, Tensor) {
    let mut r = rng::stream(seed, &[]);
    (rng::uniform_tensor(&mut r, shape, lo, hi), rng::normal_tensor(&mut r, shape))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inversion_is_tight_away_from_the_last_steps(t in 1usize..=700, seed in any::<u64>()) {
        let s = NoiseSchedule::default();
        let (x0, eps) = pair(seed, &[3, 4, 4], -1.0, 1.0);
        let back = estimate_x0(&q_sample(&x0, t, &eps, &s).unwrap(), t, &eps, &s, false).unwrap();
        prop_assert!(max_diff(&back, &x0) <= 1e-5);
    }

    #[test]
    fn ddim_with_true_noise_lands_on_the_forward_marginal(i in 0usize..50, seed in any::<u64>(), clamp in any::<bool>()) {
        let s = NoiseSchedule::default();
        let p = ddim_pairs(&s, 50).unwrap()[i];
        prop_assume!(p.t <= 900);
        let (x0, eps) = pair(seed, &[3, 4, 4], -0.9, 0.9);
        let xt = q_sample(&x0, p.t, &eps, &s).unwrap();
        let next = ddim_step(&xt, p, &eps, &s, clamp).unwrap();
        let want = q_sample(&x0, p.t_prev, &eps, &s).unwrap();
        prop_assert!(max_diff(&next, &want) <= 1e-4);
    }

    #[test]
    fn clamped_ddim_keeps_the_estimate_in_range(t in 2usize..=1000, dt in 1usize..50, seed in any::<u64>()) {
        let s = NoiseSchedule::default();
        let p = StepPair::new(t, t.saturating_sub(dt), &s).unwrap();
        let (x, eps) = pair(seed, &[3, 4, 4], -3.0, 3.0);
        let next = ddim_step(&x, p, &eps, &s, true).unwrap();
        // The step is x_prev = sqrt(ab') x0c + sqrt(1-ab') eps_c with the same
        // clipped x0c that x itself implies.
        let abt = s.alpha_bar(t);
        let x0c = estimate_x0(&x, t, &eps, &s, true).unwrap();
        prop_assert!(x0c.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let implied: Vec<f32> = x.data().iter().zip(x0c.data())
            .map(|(&xv, &c)| ((xv as f64 - abt.sqrt() * c as f64) / (1.0 - abt).sqrt()) as f32).collect();
        let eps_c = Tensor::new(x.shape().to_vec(), implied).unwrap();
        let want = q_sample(&x0c, p.t_prev, &eps_c, &s).unwrap();
        prop_assert!(max_diff(&next, &want) <= 1e-4);
    }

    #[test]
    fn ddpm_mean_matches_the_posterior(t in 2usize..=1000, seed in any::<u64>()) {
        let s = NoiseSchedule::default();
        let (x, eps) = pair(seed, &[2, 3, 3], -2.0, 2.0);
        let zero = Tensor::zeros(x.shape().to_vec());
        let step = ddpm_step(&x, t, &eps, &s, &zero).unwrap();
        let x0 = estimate_x0(&x, t, &eps, &s, false).unwrap();
        let mean = posterior_mean(&x, t, &x0, &s).unwrap();
        let scale = mean.max_abs().max(1.0);
        prop_assert!(max_diff(&step, &mean) <= 1e-4 * scale);
    }

    #[test]
    fn contrastive_is_shift_invariant_and_stable(
        scores in prop::collection::vec(-30.0f64..30.0, 2..12),
        p in 1usize..4,
        shift in -50.0f64..50.0,
    ) {
        prop_assume!(p < scores.len());
        let eval = |offset: f64| -> f64 {
            let mut g = Graph::<f64>::new();
            let v = g.raw_leaf(vec![1, scores.len()], scores.iter().map(|s| s + offset).collect(), false).unwrap();
            let out = contrastive_from_scores(&mut g, v, p).unwrap();
            g.data(out)[0]
        };
        let (a, b) = (eval(0.0), eval(shift));
        prop_assert!(a.is_finite() && a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn informed_noise_moves_the_estimate_against_the_gradient(
        lambda in 0.0f64..4.0, t in 1usize..=1000, seed in any::<u64>(), log_prob in any::<bool>(),
    ) {
        let s = NoiseSchedule::default();
        let (x, eps) = pair(seed, &[3, 4, 4], -1.0, 1.0);
        let mut r = rng::stream(seed, &[1]);
        let grad = rng::normal_tensor(&mut r, &[3, 4, 4]);
        let which = if log_prob { GuidanceGrad::LogProb(&grad) } else { GuidanceGrad::Loss(&grad) };
        let hat = informed_epsilon(&eps, which, lambda, t, &s).unwrap();
        let plain = estimate_x0(&x, t, &eps, &s, false).unwrap();
        let guided = estimate_x0(&x, t, &hat, &s, false).unwrap();
        let along: f64 = guided.data().iter().zip(plain.data()).zip(grad.data())
            .map(|((&a, &b), &g)| (a as f64 - b as f64) * g as f64).sum();
        // Loss gradients are descended, log-probability gradients ascended.
        let expect = if log_prob { 1.0 } else { -1.0 } * lambda * (1.0 - s.alpha_bar(t)) / s.alpha_bar(t).sqrt()
            * grad.data().iter().map(|&g| (g as f64).powi(2)).sum::<f64>();
        prop_assert!((along - expect).abs() <= 1e-3 * expect.abs().max(1.0));
        if lambda > 0.0 {
            let ascended = along > 0.0;
            prop_assert_eq!(ascended, log_prob);
        }
    }
}

fn unit_rows(r: &mut impl rand::Rng, n: usize, d: usize) -> Vec<f32> {
    (0..n)
        .flat_map(|_| {
            let v = rng::normal_vec(r, d);
            let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            v.into_iter().map(move |x| (x as f64 / norm) as f32)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn a_small_step_down_the_gradient_lowers_the_loss(seed in any::<u64>(), n_neg in 1usize..6) {
        let e = JointEmbedder::new(EmbedderConfig::new([3, 8, 8]), Tokenizer::new(["w".to_string()]), seed).unwrap();
        let mut r = rng::stream(seed, &[2]);
        let ctx = MatchContext::new(0, e.dim(), unit_rows(&mut r, 2, e.dim()), unit_rows(&mut r, n_neg, e.dim())).unwrap();
        let x = rng::uniform_tensor(&mut r, &[3, 8, 8], -1.0, 1.0);
        let c = vec![ctx.clone()];
        let f = conceptdiff::diff_fn!([e: JointEmbedder, c: Vec<MatchContext>] |g, x| {
            let p = e.params().bind(g, false);
            let img = g.reshape(x, vec![1, 3, 8, 8])?;
            let z = e.image_forward(g, &p, img)?;
            let per = conceptdiff::guidance::contrastive_objective(g, z, c, 0.07)?;
            g.sum(per)
        });
        let (l0, grad) = value_and_grad(&f, &x).unwrap();
        let norm = grad.l2_norm();
        prop_assume!(norm > 1e-4);
        let h = 1e-3 / norm;
        let moved = Tensor::new(x.shape().to_vec(), x.data().iter().zip(grad.data()).map(|(a, g)| a - h * g).collect()).unwrap();
        let l1 = contrastive_loss(&ctx, &e, &moved, 0.07).unwrap();
        prop_assert!((l0 - contrastive_loss(&ctx, &e, &x, 0.07).unwrap()).abs() <= 1e-5);
        prop_assert!(l1 < l0, "{l1} !< {l0}");
    }
}

fn bank(sim: Vec<Vec<f64>>, empty: &[usize]) -> ConceptBank {
    let n = sim.len();
    ConceptBank {
        categories: (0..n)
            .map(|i| {
                let r: Vec<String> = (0..3).map(|k| format!("c{i} p{k}")).collect();
                let selected = if empty.contains(&i) { vec![] } else { r[..2].to_vec() };
                BankCategory { id: i, name: format!("c{i}"), retrieved: r, scores: vec![], selected }
            })
            .collect(),
        similarity: sim,
        embedder_checksum: String::new(),
        source: "test".into(),
        similarity_encoder: "test".into(),
    }
}

fn similarity() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (3usize..8).prop_flat_map(|n| {
        prop::collection::vec(-1.0f64..1.0, n * (n - 1) / 2).prop_map(move |upper| {
            let mut upper = upper.into_iter();
            let mut m = vec![vec![1.0; n]; n];
            for (i, j) in (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))) {
                let v = upper.next().expect("n(n-1)/2 entries");
                m[i][j] = v;
                m[j][i] = v;
            }
            m
        })
    })
}

proptest! {
    #[test]
    fn negatives_come_from_eligible_donors(sim in similarity(), t in any::<prop::sample::Index>(), seed in any::<u64>(), k in 1usize..4) {
        let n = sim.len();
        let target = t.index(n);
        let empty = [(target + 1) % n];
        let b = bank(sim.clone(), &empty);
        for strategy in [NegativeStrategy::Random, NegativeStrategy::Weighted, NegativeStrategy::SimilarK(k.min(n - 1))] {
            let dist = donor_distribution(&b, target, strategy).unwrap();
            let total: f64 = dist.iter().map(|d| d.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(dist.iter().all(|&(j, p)| j != target && !empty.contains(&j) && p > 0.0));
            let negs = sample_negative_concepts(&b, target, 50, strategy, &mut rng::stream(seed, &[])).unwrap();
            prop_assert_eq!(negs.len(), 50);
            for ng in &negs {
                prop_assert!(dist.iter().any(|d| d.0 == ng.category));
                prop_assert!(b.categories[ng.category].selected.contains(&ng.concept));
            }
            if let NegativeStrategy::SimilarK(k) = strategy {
                // Every donor is at least as similar as every excluded eligible category.
                let worst_in = dist.iter().map(|d| sim[target][d.0]).fold(f64::INFINITY, f64::min);
                for j in (0..n).filter(|j| *j != target && !empty.contains(j) && !dist.iter().any(|d| d.0 == *j)) {
                    prop_assert!(sim[target][j] <= worst_in);
                }
                prop_assert!(dist.len() <= k);
            }
        }
        prop_assert!(sample_negative_concepts(&b, target, 0, NegativeStrategy::Weighted, &mut rng::stream(seed, &[])).unwrap().is_empty());
    }

    #[test]
    fn top_k_is_a_stable_descending_prefix(scores in prop::collection::vec(prop_oneof![Just(0.5f64), -1.0f64..1.0], 0..15), k in 0usize..20) {
        let idx = top_k_indices(&scores, k);
        prop_assert_eq!(idx.len(), k.min(scores.len()));
        for w in idx.windows(2) {
            prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
        }
        for j in (0..scores.len()).filter(|j| !idx.contains(j)) {
            for &i in &idx {
                prop_assert!(scores[i] > scores[j] || (scores[i] == scores[j] && i < j));
            }
        }
    }
}

#[test]
fn sampling_rejects_impossible_requests() {
    let sim = vec![vec![1.0, 0.2, 0.1], vec![0.2, 1.0, 0.3], vec![0.1, 0.3, 1.0]];
    let b = bank(sim, &[1, 2]);
    let mut r = rng::stream(0, &[]);
    assert!(sample_negative_concepts(&b, 0, 3, NegativeStrategy::Random, &mut r).is_err());
    assert!(donor_distribution(&b, 0, NegativeStrategy::SimilarK(3)).is_err());
    assert!(donor_distribution(&b, 7, NegativeStrategy::Random).is_err());
    let no_sim = bank(vec![], &[]);
    assert!(donor_distribution(&no_sim, 0, NegativeStrategy::Weighted).is_err());
}
