use proptest::prelude::*;

use kyc_core::corpus::{tokenize, ClientCorpus};
use kyc_core::eval::{accuracy, paired_t_test, perplexity, proportions, token_f1, total_variation};
use kyc_core::sketch::{
    saliency_sketch, BackgroundModel, CountProfile, SketchContext, SketchVariant,
};
use kyc_core::vocab::Vocab;

const WORDS: [&str; 12] = [
    "alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu",
];

fn instances() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(&WORDS[..]).prop_map(String::from), 1..12),
        1..10,
    )
}

fn clients() -> impl Strategy<Value = Vec<Vec<Vec<String>>>> {
    prop::collection::vec(instances(), 2..5)
}

fn corpora(raw: &[Vec<Vec<String>>]) -> Vec<ClientCorpus> {
    raw.iter()
        .enumerate()
        .map(|(i, inst)| ClientCorpus::unlabeled(format!("c{i}"), inst.clone()).unwrap())
        .collect()
}

const VARIANTS: [SketchVariant; 4] = [
    SketchVariant::Saliency,
    SketchVariant::TfIdf,
    SketchVariant::BinaryBow,
    SketchVariant::AvgLength,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn saliency_raw_term_is_affine_in_count(p in 1e-6f64..(1.0 - 1e-6), total in 2u64..100_000, frac in 0.0f64..1.0) {
        let n = ((total - 1) as f64 * frac) as u64;
        let raw = |n: u64| -(n as f64) * p.ln() - (total - n) as f64 * (1.0 - p).ln();
        let slope = ((1.0 - p) / p).ln();
        prop_assert!(((raw(n + 1) - raw(n)) - slope).abs() <= 1e-9);
    }

    #[test]
    fn background_rates_form_a_distribution(
        counts in prop::collection::vec(prop::collection::vec(0u64..40, 30), 1..6),
        alpha in 0.01f64..5.0,
    ) {
        prop_assume!(counts.iter().flatten().any(|&c| c > 0));
        let profiles: Vec<CountProfile> = counts
            .into_iter()
            .filter(|c| c.iter().any(|&n| n > 0))
            .map(|c| CountProfile::from_counts(c).unwrap())
            .collect();
        let bg = BackgroundModel::fit(&profiles, alpha).unwrap();
        prop_assert!((bg.rates.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(bg.rates.iter().all(|&r| r > 0.0 && r < 1.0));
    }

    #[test]
    fn uniform_half_background_gives_constant_sketch(counts in prop::collection::vec(0u64..50, 2..40)) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let dim = counts.len();
        let bg = BackgroundModel { rates: vec![0.5; dim], smoothing_alpha: 1.0, n_train_clients: 1 };
        let s = saliency_sketch(&CountProfile::from_counts(counts).unwrap(), &bg).unwrap();
        let first = s.values[0];
        prop_assert!(s.values.iter().all(|&v| v == first));
        prop_assert!((first - 1.0 / (dim as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sketches_are_well_formed_and_order_free(raw in clients(), probe in instances(), seed in any::<u64>()) {
        let train = corpora(&raw);
        let refs: Vec<&ClientCorpus> = train.iter().collect();
        let vocab = Vocab::build(&train, 8).unwrap();
        let mut shuffled = probe.clone();
        let k = (seed as usize) % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = ClientCorpus::unlabeled("p", probe).unwrap();
        let b = ClientCorpus::unlabeled("p", shuffled).unwrap();
        for variant in VARIANTS {
            let lengths: Vec<f64> = train.iter().map(|c| c.mean_length()).collect();
            if variant == SketchVariant::AvgLength
                && lengths.iter().all(|&l| l == lengths[0])
            {
                continue;
            }
            let ctx = SketchContext::fit(variant, &refs, &vocab, 1.0).unwrap();
            let sa = ctx.sketch_corpus(&a, &vocab).unwrap();
            let sb = ctx.sketch_corpus(&b, &vocab).unwrap();
            prop_assert_eq!(&sa, &sb);
            prop_assert_eq!(sa.dim(), ctx.dim());
            prop_assert!(sa.values.iter().all(|v| v.is_finite()));
            let norm = sa.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            match variant {
                SketchVariant::Saliency => prop_assert!((norm - 1.0).abs() < 1e-6),
                SketchVariant::TfIdf => prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-6),
                SketchVariant::BinaryBow => prop_assert!(sa.values.iter().all(|&v| v == 0.0 || v == 1.0)),
                SketchVariant::AvgLength => prop_assert_eq!(sa.dim(), 1),
            }
            prop_assert!(sa.values.iter().all(|&v| variant == SketchVariant::AvgLength || v >= 0.0));
        }
    }

    #[test]
    fn vocab_indices_are_dense_and_unique(raw in clients(), max in 1usize..20) {
        let train = corpora(&raw);
        let v = Vocab::build(&train, max).unwrap();
        prop_assert!(v.size() <= max.max(1));
        prop_assert!(v.unk_index() < v.size());
        let mut seen = std::collections::HashSet::new();
        for (i, w) in v.words().iter().enumerate() {
            prop_assert!(seen.insert(w.clone()));
            prop_assert_eq!(v.id(w), i);
        }
        prop_assert_eq!(Vocab::build(&train, max).unwrap(), v);
    }

    #[test]
    fn tokens_never_contain_whitespace(text in "[ a-zA-Z0-9.,!?$'-]{0,60}") {
        let toks = tokenize(&text, true);
        prop_assert!(toks.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        let lower = tokenize(&text, false);
        prop_assert_eq!(lower, toks.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>());
    }

    #[test]
    fn accuracy_is_permutation_invariant(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60), shift in 0usize..60) {
        let (p, g): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut rotated = pairs.clone();
        rotated.rotate_left(shift % pairs.len());
        let (rp, rg): (Vec<usize>, Vec<usize>) = rotated.into_iter().unzip();
        prop_assert_eq!(accuracy(&p, &g).unwrap(), accuracy(&rp, &rg).unwrap());
    }

    #[test]
    fn token_f1_ignores_sequence_order(seqs in prop::collection::vec(prop::collection::vec((0usize..3, 0usize..3), 1..8), 1..8)) {
        let split = |s: &[Vec<(usize, usize)>]| -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
            s.iter().map(|seq| seq.iter().copied().unzip()).unzip()
        };
        let (p, g) = split(&seqs);
        let mut rev = seqs.clone();
        rev.reverse();
        let (rp, rg) = split(&rev);
        let a = token_f1(&p, &g, 3, Some(0)).unwrap();
        let b = token_f1(&rp, &rg, 3, Some(0)).unwrap();
        prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a.macro_f1));
    }

    #[test]
    fn total_variation_is_a_bounded_metric(
        a in prop::collection::vec(0usize..4, 1..50),
        b in prop::collection::vec(0usize..4, 1..50),
    ) {
        let (p, q) = (proportions(&a, 4), proportions(&b, 4));
        let d = total_variation(&p, &q);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - total_variation(&q, &p)).abs() < 1e-15);
        prop_assert_eq!(total_variation(&p, &p), 0.0);
    }

    #[test]
    fn perplexity_of_constant_loss(nll in 0.0f64..10.0, n in 1usize..50) {
        prop_assert!((perplexity(&vec![nll; n]).unwrap() - nll.exp()).abs() <= 1e-9 * nll.exp());
    }

    #[test]
    fn t_test_is_antisymmetric(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..10)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let same = paired_t_test(&a, &a).unwrap();
        prop_assert_eq!((same.t_statistic, same.p_value), (0.0, 0.5));
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert!((ab.p_value + ba.p_value - 1.0).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }
}
