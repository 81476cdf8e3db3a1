// Temporary calibration probe; removed before finishing.
use fedemd::config::ExperimentConfig;
use fedemd::federation;

fn stats(w: &[Vec<Option<f64>>], truth: &[usize]) -> (f64, f64, f64, f64, usize) {
    let c = truth.len();
    let mut same = Vec::new();
    let mut cross = Vec::new();
    let mut unmeasured = 0usize;
    for i in 0..c {
        for j in 0..c {
            if i == j {
                continue;
            }
            match w[i][j] {
                Some(v) => {
                    if truth[i] == truth[j] {
                        same.push(v);
                    } else {
                        cross.push(v);
                    }
                }
                None => unmeasured += 1,
            }
        }
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
    (
        same.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean(&same),
        cross.iter().cloned().fold(f64::INFINITY, f64::min),
        cross.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        unmeasured,
    )
}

fn run_probe(label: &str, seed: u64, extra: &[&str]) -> federation::RunArtifacts {
    let mut overrides: Vec<String> = vec![format!("seed={seed}")];
    overrides.extend(extra.iter().map(|s| s.to_string()));
    let cfg = ExperimentConfig::load(None, &overrides).unwrap();
    let t0 = std::time::Instant::now();
    let run = federation::run_experiment(&cfg).unwrap();
    let (same_max, same_mean, cross_min, cross_max, unmeasured) =
        stats(&run.final_w, &run.ground_truth);
    println!(
        "{label} seed {seed}: ari1={:.3} final={:.3} K={} acc={:.3} same(max={:.4} mean={:.4}) cross(min={:.4} MAX={:.4}) unmeas={} {:?}",
        run.epochs[0].ari,
        run.final_ari,
        run.num_clusters,
        run.avg_accuracy,
        same_max,
        same_mean,
        cross_min,
        cross_max,
        unmeasured,
        t0.elapsed()
    );
    run
}

#[test]
fn probe_defaults_5_seeds() {
    for seed in 1..=5u64 {
        run_probe("default", seed, &[]);
    }
}

#[test]
fn probe_min_angles() {
    for seed in 1..=5u64 {
        run_probe(
            "min",
            seed,
            &["dataset.angles=[-3.0,-1.0,1.0,3.0]"],
        );
    }
}

#[test]
fn probe_backdoor() {
    for seed in 1..=5u64 {
        run_probe(
            "backdoor",
            seed,
            &["dataset.kind=backdoor", "dataset.clients=15"],
        );
    }
}

#[test]
fn probe_partial() {
    for seed in 1..=5u64 {
        run_probe(
            "part50",
            seed,
            &[
                "federation.participation=8",
                "federation.global_epochs=20",
            ],
        );
    }
}

#[test]
fn probe_sinkhorn() {
    for seed in [1u64] {
        run_probe("sinkhorn", seed, &["federation.backend=sinkhorn"]);
    }
}

#[test]
fn probe_projection_ratios() {
    for ratio in ["0.9", "0.7", "0.5"] {
        run_probe(
            "ratio",
            1,
            &[&format!("federation.projection_ratio={ratio}")],
        );
    }
}

#[test]
fn probe_min_epochs() {
    for e in ["10", "20", "30"] {
        for seed in 1..=3u64 {
            run_probe(
                &format!("minE{e}"),
                seed,
                &[
                    "dataset.angles=[-3.0,-1.0,1.0,3.0]",
                    &format!("federation.local_epochs={e}"),
                ],
            );
        }
    }
}

#[test]
fn probe_backdoor_flip() {
    use fedemd::synthdata::flip_backdoor;
    use fedemd::autonet::evaluate;
    for seed in 1..=5u64 {
        let overrides: Vec<String> = vec![
            format!("seed={seed}"),
            "dataset.kind=backdoor".into(),
            "dataset.clients=15".into(),
        ];
        let cfg = ExperimentConfig::load(None, &overrides).unwrap();
        let partition = cfg.build_partition().unwrap();

        // emdcfl
        let run = federation::run_experiment(&cfg).unwrap();
        // fedavg
        let fed = federation::run_baseline(federation::BaselineKind::FedAvg, &cfg).unwrap();

        let clean_ids: Vec<usize> = (0..15).filter(|&i| partition.ground_truth[i] == 0).collect();
        let mut emd_clean = vec![];
        let mut emd_flip = vec![];
        let mut fed_clean = vec![];
        let mut fed_flip = vec![];
        for &i in &clean_ids {
            let test = &partition.clients[i].test;
            let flipped = flip_backdoor(test, 1000 + i as u64).unwrap();
            let emd_model = &run.client_params[i];
            let fed_model = &fed.client_params[i];
            emd_clean.push(evaluate(emd_model, &test.x.view(), &test.y).unwrap());
            emd_flip.push(evaluate(emd_model, &flipped.x.view(), &flipped.y).unwrap());
            fed_clean.push(evaluate(fed_model, &test.x.view(), &test.y).unwrap());
            fed_flip.push(evaluate(fed_model, &flipped.x.view(), &flipped.y).unwrap());
        }
        let avg = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "flip seed {seed}: ari={:.2} emd clean={:.3} flip={:.3} (d={:.3}) | fedavg clean={:.3} flip={:.3} (d={:.3})",
            run.final_ari,
            avg(&emd_clean),
            avg(&emd_flip),
            avg(&emd_clean) - avg(&emd_flip),
            avg(&fed_clean),
            avg(&fed_flip),
            avg(&fed_clean) - avg(&fed_flip),
        );
    }
}

#[test]
fn probe_sinkhorn_match() {
    for seed in 1..=3u64 {
        let exact = federation::run_experiment(
            &ExperimentConfig::load(None, &[format!("seed={seed}")]).unwrap(),
        )
        .unwrap();
        let sk = federation::run_experiment(
            &ExperimentConfig::load(
                None,
                &[format!("seed={seed}"), "federation.backend=sinkhorn".into()],
            )
            .unwrap(),
        )
        .unwrap();
        let m_equal = exact.final_m == sk.final_m;
        let pi_equal = exact.final_pi == sk.final_pi;
        println!(
            "sinkhorn-match seed {seed}: m_equal={m_equal} pi_equal={pi_equal} ari={:.3}",
            sk.final_ari
        );
    }
}
