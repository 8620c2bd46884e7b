//! Randomized properties of the metric, optimizer, schedule and data code.

use mat::data::{bleu4, generate_task, write_examples, TaskKind, TaskSpec};
use mat::training::{label_smoothed_nll, lr_at, mask_schedule, Adam, LayerDraws, TrainConfig};
use mat::rng::UniformSource;
use mat::{Tape, Tensor};
use proptest::prelude::*;

fn corpus(max_len: usize) -> impl Strategy<Value = Vec<(Vec<u8>, Vec<u8>)>> {
    prop::collection::vec(
        (prop::collection::vec(0u8..5, 0..max_len), prop::collection::vec(0u8..5, 1..max_len)),
        1..8,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bleu_ignores_sentence_order(pairs in corpus(12), rot in 0usize..8) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let k = rot % c.len();
        let (mut c2, mut r2) = (c.clone(), r.clone());
        c2.rotate_left(k);
        r2.rotate_left(k);
        prop_assert_eq!(bleu4(&c, &r).unwrap().to_bits(), bleu4(&c2, &r2).unwrap().to_bits());
    }

    #[test]
    fn bleu_stays_in_unit_interval(pairs in corpus(12)) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let b = bleu4(&c, &r).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
    }

    // Candidates that are prefixes of their references lose score as they
    // are cut shorter. (For arbitrary candidates this does not hold: cutting a
    // wrong trailing token can raise the score.)
    #[test]
    fn bleu_prefix_truncation_is_monotone(
        refs in prop::collection::vec(prop::collection::vec(0u8..4, 4..14), 1..6),
        cuts in prop::collection::vec(0usize..14, 6),
    ) {
        let full: Vec<Vec<u8>> = refs.clone();
        let mut prev = bleu4(&full, &refs).unwrap();
        prop_assert_eq!(prev, 1.0);
        let mut cands = full;
        for (i, &cut) in cuts.iter().enumerate() {
            let j = i % cands.len();
            let n = cands[j].len();
            cands[j].truncate(n.saturating_sub(1 + cut % 3));
            let b = bleu4(&cands, &refs).unwrap();
            prop_assert!(b <= prev + 1e-15, "{} > {}", b, prev);
            prev = b;
        }
    }

    #[test]
    fn adam_ignores_parameter_layout(
        values in prop::collection::vec(-2.0f64..2.0, 12),
        grads in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 12), 1..5),
        split in 1usize..11,
    ) {
        let mut whole = values.clone();
        let mut parts = (values[..split].to_vec(), values[split..].to_vec());
        let mut a = Adam::new(0.9, 0.98, 1e-8);
        let mut b = Adam::new(0.9, 0.98, 1e-8);
        for g in &grads {
            a.step(&mut [&mut whole[..]], &[&g[..]], &["w".into()], 1e-2).unwrap();
            b.step(
                &mut [&mut parts.0[..], &mut parts.1[..]],
                &[&g[..split], &g[split..]],
                &["a".into(), "b".into()],
                1e-2,
            ).unwrap();
        }
        let joined: Vec<u64> = parts.0.iter().chain(&parts.1).map(|x| x.to_bits()).collect();
        let whole: Vec<u64> = whole.iter().map(|x| x.to_bits()).collect();
        prop_assert_eq!(whole, joined);
    }

    #[test]
    fn lr_decays_strictly_after_warmup(warmup in 1u64..5000, base in 1e-5f64..1.0, extra in 1u64..100_000) {
        let cfg = TrainConfig { base_lr: base, warmup_steps: warmup, ..TrainConfig::default() };
        let s = warmup + extra;
        prop_assert!(lr_at(s + 1, &cfg).unwrap() < lr_at(s, &cfg).unwrap());
        prop_assert!(lr_at(s, &cfg).unwrap() <= base);
    }

    #[test]
    fn unsmoothed_loss_is_cross_entropy(
        rows in prop::collection::vec(prop::collection::vec(-8.0f64..8.0, 6), 1..5),
        targets in prop::collection::vec(0usize..6, 5),
    ) {
        let targets = &targets[..rows.len()];
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::from_rows(&rows).unwrap());
        let loss = label_smoothed_nll(&mut tape, logits, targets, 0.0, usize::MAX).unwrap();
        let got = tape.value(loss).data()[0];
        let expected = rows
            .iter()
            .zip(targets)
            .map(|(r, &t)| {
                let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln() - r[t]
            })
            .sum::<f64>()
            / rows.len() as f64;
        prop_assert!((got - expected).abs() < 1e-10, "{} vs {}", got, expected);
    }

    #[test]
    fn mask_draws_are_pure(seed: u64, step in 1u64..1_000_000, layer in 0usize..64, branch in 0usize..8, head in 0usize..8) {
        let a = mask_schedule(step, layer, branch, Some(head), seed);
        // a resumed run rebuilds the source from (seed, step, layer) alone
        let mut src = LayerDraws { seed, step, layer };
        prop_assert_eq!(a.to_bits(), src.draw(branch, Some(head)).to_bits());
        prop_assert!((0.0..1.0).contains(&a));
    }
}

#[test]
fn mask_schedule_is_uniform() {
    // Kolmogorov-Smirnov against U[0,1) over 1e5 draws from varied addresses
    let mut u: Vec<f64> = (0..100_000u64)
        .map(|i| mask_schedule(1 + i / 600, (i / 30 % 20) as usize, (i / 5 % 6) as usize, Some((i % 5) as usize), 7))
        .collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max);
    // critical value at alpha = 0.001
    let crit = 1.95 / n.sqrt();
    assert!(d < crit, "KS statistic {d} >= {crit}");
}

#[test]
fn task_generation_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [TaskKind::Copy, TaskKind::Reverse, TaskKind::SortDigits] {
        let spec = TaskSpec {
            kind,
            train: 300,
            valid: 50,
            test: 50,
            seed: 3,
            ..TaskSpec::default()
        };
        let files: Vec<Vec<u8>> = (0..2)
            .map(|i| {
                let s = generate_task(&spec).unwrap();
                let p = dir.path().join(format!("{kind}-{i}.tsv"));
                write_examples(&p, &[s.train, s.valid, s.test].concat()).unwrap();
                std::fs::read(&p).unwrap()
            })
            .collect();
        assert_eq!(files[0], files[1], "{kind}");
        let other = generate_task(&TaskSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(other.train, generate_task(&spec).unwrap().train);
    }
}
