//! Runs ARISE, the binary-reward ablation and the skill-free baseline on the
//! toy task and prints held-out pass@1 and late Phase II utilization.
//!
//! `cargo run --release -p arise-core --example coevolution -- [seeds] [key=value ...]`

use arise_core::trainer::{eval_queries, Trainer, TrainerConfig};

fn apply(cfg: &mut TrainerConfig, kv: &str) {
    let (k, v) = kv.split_once('=').expect("key=value");
    match k {
        "lr" => cfg.learning_rate = v.parse().unwrap(),
        "copy" => cfg.copy_prior = v.parse().unwrap(),
        "hint" => cfg.hint_prior = v.parse().unwrap(),
        "temp" => cfg.rollout_temperature = v.parse().unwrap(),
        "steps" => cfg.steps = v.parse().unwrap(),
        "warmup" => cfg.warmup_steps = v.parse().unwrap(),
        "buckets" => cfg.query_buckets = v.parse().unwrap(),
        "noise" => cfg.env.noise = v.parse().unwrap(),
        "fault" => cfg.env.fault_probability = v.parse().unwrap(),
        _ => panic!("unknown key {k}"),
    }
}

fn main() {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(1);
    let mut base = TrainerConfig { eval_runs: 1, ..TrainerConfig::default() };
    for kv in args {
        apply(&mut base, &kv);
    }
    let variants = [("arise", true, true), ("binary", true, false), ("baseline", false, false)];
    for (name, sel, hier) in variants {
        let mut accs = Vec::new();
        let mut utils = Vec::new();
        for seed in 0..seeds {
            let cfg = TrainerConfig { seed, skill_selection: sel, hierarchical_reward: hier, ..base.clone() };
            let start = std::time::Instant::now();
            let mut t = Trainer::toy(cfg.clone()).unwrap();
            let log = t.train(|m| {
                if m.step % 250 == 0 {
                    eprintln!(
                        "{name} s{seed} step {} succ {:.3} util {:.3} inj {:.3} gate {:.3} filt {} cache {} res {}",
                        m.step, m.success_rate, m.skill_utilization_rate, m.injection_rate, m.gate_pass_rate,
                        m.groups_filtered, m.cache_size, m.reservoir_size
                    )
                }
            })
            .unwrap();
            let q = eval_queries(&cfg.env, cfg.eval_queries, seed);
            let acc = t.evaluate(&q, seed).unwrap();
            let tail = &log[log.len().saturating_sub(100)..];
            let util = tail.iter().map(|m| m.skill_utilization_rate).sum::<f64>() / tail.len() as f64;
            eprintln!("{name} seed {seed}: pass@1 {acc:.3} util {util:.3} ({:.1}s)", start.elapsed().as_secs_f64());
            accs.push(acc);
            utils.push(util);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!("{name}: pass@1 {:.3} util {:.3}", mean(&accs), mean(&utils));
    }
}
