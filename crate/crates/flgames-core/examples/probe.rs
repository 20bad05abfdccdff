// Scratch exploration of the synthetic benchmark dynamics.

use flgames_core::data::{make_client_specs, synth_sem_generate, FederatedData, SemLayout, SpecOptions};
use flgames_core::server::baselines::{run_fedavg_baseline, run_fedsgd_baseline, BaselineConfig};
use flgames_core::server::{run_training, GameConfig, PhiVariant, Schedule};

fn bench_data(per_client: usize, test_n: usize, seed: u64) -> FederatedData {
    let opts = SpecOptions {
        train_pool: per_client * 2,
        test_samples: test_n,
        ..SpecOptions::default()
    };
    let (specs, test_spec) = make_client_specs(2, &opts).unwrap();
    let train = specs
        .iter()
        .map(|s| synth_sem_generate(s, SemLayout::default(), seed + s.client_id as u64).unwrap())
        .collect();
    let test = synth_sem_generate(&test_spec, SemLayout::default(), seed + 999).unwrap();
    FederatedData { train, test }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("game");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(42);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2.5e-4);
    let thresh: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.6);
    let hidden: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(16);
    let smooth = args.get(6).map(String::as_str).unwrap_or("smooth") == "smooth";
    let max_rounds: u64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(2000);

    let data = bench_data(20_000, 10_000, seed);
    let t0 = std::time::Instant::now();

    match mode {
        "game" | "game-seq" => {
            let config = GameConfig {
                variant_phi: PhiVariant::Fixed,
                schedule: if mode == "game-seq" { Schedule::Sequential } else { Schedule::Parallel },
                smooth,
                skip_phi_rounds: true,
                stop_threshold: thresh,
                max_rounds,
                lr_w: lr,
                predictor_hidden: vec![hidden, hidden],
                ..GameConfig::default()
            };
            let (_, run) = run_training(&data, &config, seed).unwrap();
            for (i, log) in run.logs.iter().enumerate() {
                if i % 25 == 0 || i + 1 == run.logs.len() {
                    println!(
                        "round {:4} train {:.4} test {:.4}",
                        log.round, log.train_acc, log.test_acc
                    );
                }
            }
            println!(
                "STOPPED={} rounds={} final train {:.4} test {:.4} elapsed {:.1}s",
                run.stopped,
                run.rounds(),
                run.final_train_acc,
                run.final_test_acc,
                t0.elapsed().as_secs_f64()
            );
        }
        "fedavg" | "fedsgd" => {
            let config = BaselineConfig {
                rounds: max_rounds,
                lr,
                hidden: vec![hidden, hidden],
                ..BaselineConfig::default()
            };
            let run = if mode == "fedavg" {
                run_fedavg_baseline(&data, &config, seed).unwrap()
            } else {
                run_fedsgd_baseline(&data, &config, seed).unwrap()
            };
            for (i, log) in run.logs.iter().enumerate() {
                if i % (run.logs.len() / 10).max(1) == 0 || i + 1 == run.logs.len() {
                    println!(
                        "round {:4} train {:.4} test {:.4}",
                        log.round, log.train_acc, log.test_acc
                    );
                }
            }
            println!(
                "final train {:.4} test {:.4} elapsed {:.1}s",
                run.final_train_acc,
                run.final_test_acc,
                t0.elapsed().as_secs_f64()
            );
        }
        other => eprintln!("unknown mode {other}"),
    }
}
