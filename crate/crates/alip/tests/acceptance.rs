//! Acceptance gate. Each test covers one numbered criterion and prints a
//! single pass/fail line; run with `--nocapture` to see them all.

use std::process::Command;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use alip::formulation::Enhancements;
use alip::metrics;
use alip::model::{compile, ApplianceSpec, StateSpec, OFF};
use alip::pipeline::{run, PipelineConfig};
use alip::simgen::{preset_chatter, preset_collision, preset_suite, simulate, SimScenario};
use alip::solver::{refine_oracle, solve_bb, solve_exhaustive, solve_refinement_lp, RefinementProblem};

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n} ({name}): {tag} [{detail}]");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn random_model(rng: &mut ChaCha8Rng) -> alip::model::HouseholdModel {
    let n = rng.gen_range(1..=5);
    let specs: Vec<ApplianceSpec> = (0..n)
        .map(|j| {
            let l = rng.gen_range(1..=3);
            let states: Vec<StateSpec> = (0..l)
                .map(|s| {
                    let rating = rng.gen_range(20.0..1000.0f64);
                    if rng.gen_bool(0.3) {
                        StateSpec::transient(
                            format!("s{}", s + 1),
                            rating,
                            rating * 0.6,
                            rating * 1.3,
                        )
                    } else {
                        StateSpec::steady(format!("s{}", s + 1), rating)
                    }
                })
                .collect();
            let mut spec = ApplianceSpec::new(format!("A{j}"), states);
            if rng.gen_bool(0.15) {
                spec = spec.always_on();
            }
            spec
        })
        .collect();
    compile(&specs, 1.0).unwrap()
}

fn flag_mix(i: usize) -> Enhancements {
    match i % 4 {
        0 => Enhancements::NONE,
        1 => Enhancements::ALL,
        2 => Enhancements {
            constraints: true,
            ..Enhancements::NONE
        },
        _ => Enhancements {
            constraints: false,
            ..Enhancements::ALL
        },
    }
}

#[test]
fn criterion_1_bb_matches_exhaustive() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11F_0001);
    for i in 0..600 {
        let model = random_model(&mut rng);
        let total: f64 = model.r.iter().sum();
        let z = if rng.gen_bool(0.5) {
            // Exact subset sum, the ambiguity-prone regime.
            model
                .r
                .iter()
                .filter(|_| rng.gen_bool(0.4))
                .sum::<f64>()
        } else {
            rng.gen_range(0.0..total.max(1.0) * 1.2)
        };
        let flags = flag_mix(i);
        let instance = alip::formulation::build(&model, z, flags);
        let got = solve_bb(&instance, &model).unwrap();
        let want = solve_exhaustive(&model, z, flags).unwrap();
        assert_eq!(got.choices, want.choices, "model {i}, z = {z}");
        assert_eq!(got.delta.to_bits(), want.delta.to_bits(), "model {i}");
        assert_eq!(got.b, want.b, "model {i}");
    }
    let elapsed = started.elapsed();
    verdict(
        1,
        "oracle equivalence",
        elapsed.as_secs_f64() < 60.0,
        &format!("600 models exact, {:.2}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_2_refinement_optimality() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11F_0002);
    let mut worst = 0.0f64;
    for i in 0..1200 {
        let len = rng.gen_range(1..=8);
        let lower: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..500.0)).collect();
        let upper: Vec<f64> = lower
            .iter()
            .map(|&lo| {
                if rng.gen_bool(0.1) {
                    lo
                } else {
                    lo + rng.gen_range(0.0..400.0)
                }
            })
            .collect();
        let hi: f64 = upper.iter().sum();
        let p = RefinementProblem {
            z_residual: rng.gen_range(-200.0..hi + 200.0),
            lower,
            upper,
            p2: (0..len).collect(),
        };
        let sol = solve_refinement_lp(&p).unwrap();
        let gap = (sol.objective - p.optimal_objective()).abs();
        worst = worst.max(gap);
        assert!(gap <= 1e-9, "problem {i}: objective gap {gap:e}");
        assert_eq!(sol.values, refine_oracle(&p).unwrap(), "problem {i}");
    }
    let elapsed = started.elapsed();
    verdict(
        2,
        "lp refinement optimality",
        worst <= 1e-9 && elapsed.as_secs_f64() < 10.0,
        &format!("1200 problems, worst gap {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_3_sanity_recovery() {
    // Collision-free ratings: all 16 subset sums are pairwise distinct.
    let ratings = [100.0, 230.0, 470.0, 990.0];
    let appliances: Vec<ApplianceSpec> = ratings
        .iter()
        .enumerate()
        .map(|(j, &r)| ApplianceSpec::new(format!("A{j}"), vec![StateSpec::steady("s1", r)]))
        .collect();
    let transitions = (0..4)
        .map(|_| vec![vec![(OFF, 0.95), (1, 0.05)], vec![(1, 0.90), (OFF, 0.10)]])
        .collect();
    let scenario = SimScenario {
        name: "sanity".into(),
        appliances,
        tol: 0.5,
        transitions,
        transient_len: 0,
        noise_sd: 0.0,
        length: 10_000,
        seed: 31,
    };
    let out = simulate(&scenario).unwrap();
    let cfg = PipelineConfig {
        enhancements: Enhancements::NONE,
        ..PipelineConfig::default()
    };
    let result = run(&out.model, &out.readings, &cfg).unwrap();
    let acc = metrics::acc(&out.truth, &result.power).unwrap();
    verdict(3, "sanity recovery", acc == 1.0, &format!("plain-IP ACC = {acc}"));
}

fn suite_acc(scenario: &SimScenario, flags: Enhancements) -> f64 {
    let out = simulate(scenario).unwrap();
    let cfg = PipelineConfig {
        enhancements: flags,
        ..PipelineConfig::default()
    };
    let result = run(&out.model, &out.readings, &cfg).unwrap();
    metrics::acc(&out.truth, &result.power).unwrap()
}

#[test]
fn criterion_4_enhancement_value() {
    let suite = preset_suite(40, 10_000);
    assert!(suite.len() >= 20);
    let mut alip_sum = 0.0;
    let mut ip_sum = 0.0;
    for scenario in &suite {
        alip_sum += suite_acc(scenario, Enhancements::ALL);
        ip_sum += suite_acc(scenario, Enhancements::NONE);
    }
    let n = suite.len() as f64;
    let gain = alip_sum / n - ip_sum / n;
    verdict(
        4,
        "enhancement value",
        gain >= 0.05,
        &format!(
            "{} scenarios, mean ACC(ALIP) = {:.4}, mean ACC(IP) = {:.4}, gain = {:+.4}",
            suite.len(),
            alip_sum / n,
            ip_sum / n,
            gain
        ),
    );
}

#[test]
fn criterion_5_stage_ablation_direction() {
    let collision = preset_collision(51, 10_000);
    let base_c = suite_acc(&collision, Enhancements::NONE);
    let with_rows = suite_acc(
        &collision,
        Enhancements {
            constraints: true,
            ..Enhancements::NONE
        },
    );
    let chatter = preset_chatter(52, 10_000);
    let base_m = suite_acc(&chatter, Enhancements::NONE);
    let with_median = suite_acc(
        &chatter,
        Enhancements {
            median: true,
            ..Enhancements::NONE
        },
    );
    verdict(
        5,
        "stage ablation direction",
        with_rows > base_c && with_median > base_m,
        &format!(
            "constraints {:.4} -> {:.4}, median {:.4} -> {:.4}",
            base_c, with_rows, base_m, with_median
        ),
    );
}

#[test]
fn criterion_6_throughput() {
    // Experiment-1 shape: n = 4 appliances, m = 13 states total.
    let specs = vec![
        ApplianceSpec::new(
            "FRE",
            vec![
                StateSpec::steady("s1", 120.0),
                StateSpec::transient("s2", 310.0, 280.0, 520.0),
                StateSpec::steady("s3", 445.0),
                StateSpec::steady("s4", 590.0),
            ],
        ),
        ApplianceSpec::new(
            "HPE",
            vec![
                StateSpec::steady("s1", 40.0),
                StateSpec::steady("s2", 1800.0),
                StateSpec::transient("s3", 2600.0, 2400.0, 3100.0),
                StateSpec::steady("s4", 3300.0),
            ],
        ),
        ApplianceSpec::new(
            "CDE",
            vec![
                StateSpec::steady("s1", 250.0),
                StateSpec::steady("s2", 900.0),
                StateSpec::steady("s3", 4500.0),
            ],
        ),
        ApplianceSpec::new(
            "DWE",
            vec![StateSpec::steady("s1", 140.0), StateSpec::steady("s2", 770.0)],
        ),
    ];
    let model = compile(&specs, 1.0).unwrap();
    assert_eq!(model.num_states(), 13);
    let total: f64 = model.r.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11F_0006);
    let readings: Vec<f64> = (0..3000).map(|_| rng.gen_range(0.0..total)).collect();
    let result = run(&model, &readings, &PipelineConfig::default()).unwrap();
    let ms = result.mean_sample_seconds * 1e3;
    if ms >= 20.0 {
        eprintln!("warning: mean per-sample time {ms:.3} ms exceeds the 20 ms target");
    }
    verdict(
        6,
        "throughput",
        ms < 100.0,
        &format!("n=4 m=13, mean {ms:.3} ms/sample (target < 20, hard fail >= 100)"),
    );
}

fn naive_ac(gt: &[f64], est: &[f64]) -> f64 {
    let mut err = 0.0;
    let mut mass = 0.0;
    for (&g, &e) in gt.iter().zip(est) {
        err += (g - e).abs();
        mass += g.abs();
    }
    1.0 - err / (2.0 * mass)
}

fn naive_acc(gt: &[Vec<f64>], est: &[Vec<f64>]) -> f64 {
    let mut err = 0.0;
    let mut mass = 0.0;
    for (grow, erow) in gt.iter().zip(est) {
        for (&g, &e) in grow.iter().zip(erow) {
            err += (g - e).abs();
            mass += g.abs();
        }
    }
    1.0 - err / (2.0 * mass)
}

#[test]
fn criterion_7_metrics_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11F_0007);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let t = rng.gen_range(1..=60);
        let n = rng.gen_range(1..=6);
        let gen = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..t)
                .map(|_| (0..n).map(|_| rng.gen_range(0.0..2000.0)).collect())
                .collect()
        };
        let gt = gen(&mut rng);
        let est = gen(&mut rng);
        for i in 0..n {
            let gcol: Vec<f64> = gt.iter().map(|r| r[i]).collect();
            let ecol: Vec<f64> = est.iter().map(|r| r[i]).collect();
            let gap = (metrics::ac(&gcol, &ecol).unwrap() - naive_ac(&gcol, &ecol)).abs();
            worst = worst.max(gap);
        }
        let gap = (metrics::acc(&gt, &est).unwrap() - naive_acc(&gt, &est)).abs();
        worst = worst.max(gap);
    }
    // Estimate mass far above truth mass drives AC below zero.
    let gt = vec![10.0, 12.0, 9.0];
    let est = vec![500.0, 700.0, 600.0];
    let negative = metrics::ac(&gt, &est).unwrap();
    verdict(
        7,
        "metrics fidelity",
        worst <= 1e-12 && negative < 0.0,
        &format!("worst oracle gap {worst:.2e}, negative-AC case = {negative:.3}"),
    );
}

#[test]
fn criterion_8_determinism() {
    let bin = env!("CARGO_BIN_EXE_alip");
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.toml");
    std::fs::write(
        &model_path,
        "\
[[appliance]]
id = \"H1\"
  [[appliance.state]]
  label = \"s1\"
  rating = 300.0

[[appliance]]
id = \"H2\"
  [[appliance.state]]
  label = \"s1\"
  rating = 100.0

[[appliance]]
id = \"H3\"
  [[appliance.state]]
  label = \"s1\"
  rating = 200.0
",
    )
    .unwrap();
    let data = dir.path().join("data.csv");
    let status = Command::new(bin)
        .args(["simulate", "--preset", "collision", "--seed", "7"])
        .args(["--length", "4000", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let run_once = |tag: &str, threads: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let report = dir.path().join(format!("report_{tag}.txt"));
        let plot = dir.path().join(format!("plot_{tag}.csv"));
        let est = dir.path().join(format!("est_{tag}.csv"));
        let status = Command::new(bin)
            .arg("run")
            .args(["--model"])
            .arg(&model_path)
            .args(["--data"])
            .arg(&data)
            .args(["--block-size", "500", "--threads", threads])
            .args(["--report"])
            .arg(&report)
            .args(["--plot-data"])
            .arg(&plot)
            .args(["--estimates"])
            .arg(&est)
            .status()
            .unwrap();
        assert!(status.success());
        (
            std::fs::read(&report).unwrap(),
            std::fs::read(&plot).unwrap(),
            std::fs::read(&est).unwrap(),
        )
    };
    let a = run_once("a", "1");
    let b = run_once("b", "1");
    let c = run_once("c", "4");
    let pass = a == b && a == c;
    verdict(
        8,
        "determinism",
        pass,
        "report, plot, and estimates byte-identical across repeats and --threads 1/4",
    );
}

#[test]
fn criterion_9_optional_dataset() {
    // Non-gating. Set ALIP_DATASET_DIR to a directory holding model.toml
    // and data.csv (with per-appliance channel columns) to exercise it.
    let dir = match std::env::var("ALIP_DATASET_DIR") {
        Ok(d) => d,
        Err(_) => {
            println!("criterion 9 (optional dataset): SKIP [ALIP_DATASET_DIR not set]");
            return;
        }
    };
    let bin = env!("CARGO_BIN_EXE_alip");
    let out = tempfile::tempdir().unwrap();
    let mut accs = Vec::new();
    for (tag, extra) in [("alip", Vec::new()), (
        "ip",
        vec!["--no-constraints", "--no-std-correction", "--no-median", "--no-lp-refine"],
    )] {
        let est = out.path().join(format!("est_{tag}.csv"));
        let status = Command::new(bin)
            .arg("run")
            .args(["--model", &format!("{dir}/model.toml")])
            .args(["--data", &format!("{dir}/data.csv")])
            .args(["--estimates"])
            .arg(&est)
            .args(extra)
            .status()
            .unwrap();
        assert!(status.success());
        let score = Command::new(bin)
            .arg("score")
            .args(["--truth", &format!("{dir}/data.csv")])
            .args(["--estimate"])
            .arg(&est)
            .output()
            .unwrap();
        assert!(score.status.success());
        let text = String::from_utf8_lossy(&score.stdout).to_string();
        let acc: f64 = text
            .lines()
            .find_map(|l| l.strip_prefix("acc:"))
            .and_then(|rest| rest.trim().parse().ok())
            .unwrap_or(f64::NAN);
        accs.push(acc);
    }
    let ordered = accs[0] >= accs[1];
    println!(
        "criterion 9 (optional dataset): {} [ACC(ALIP) = {:.4}, ACC(IP) = {:.4}; not gating]",
        if ordered { "PASS" } else { "FAIL" },
        accs[0],
        accs[1]
    );
}
