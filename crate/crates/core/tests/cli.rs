use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn marginlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marginlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const SMALL: &[&str] = &[
    "--n-topics",
    "4",
    "--docs-per-topic",
    "4",
    "--queries-per-topic",
    "2",
    "--dim",
    "8",
];

fn generate(dir: &Path, seed: &str) -> Output {
    let mut args = vec!["generate", "--seed", seed, "--out", p(dir)];
    args.extend_from_slice(SMALL);
    marginlab(&args)
}

#[test]
fn generate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    for (dir, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        assert_eq!(code(&generate(dir, seed)), 0);
    }
    for file in [
        "features.tsv",
        "oracle.tsv",
        "triplets.tsv",
        "qrels.txt",
        "manifest.tsv",
    ] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file}");
    }
    assert_ne!(read(&a.join("features.tsv")), read(&c.join("features.tsv")));

    let manifest = read(&a.join("manifest.tsv"));
    let count = |role: &str| {
        manifest
            .lines()
            .filter(|l| l.ends_with(&format!("\t{role}")))
            .count()
    };
    assert_eq!(count("doc"), 16);
    assert_eq!(count("train"), 4);
    assert_eq!(count("validation"), 4);
}

#[test]
fn single_topic_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = marginlab(&["generate", "--n-topics", "1", "--out", p(tmp.path())]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn distributed_without_in_batch_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = marginlab(&[
        "train",
        "--loss",
        "distributed",
        "--no-in-batch",
        "--data-dir",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 1);
    let out = marginlab(&["train", "--in-batch", "--no-in-batch"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_data_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let out = marginlab(&[
        "train",
        "--data-dir",
        p(&tmp.path().join("nowhere")),
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("exp.conf");
    std::fs::write(
        &cfg,
        "# small corpus\nn_topics = 3\ndocs_per_topic = 2\nqueries_per_topic = 2\ndim = 4\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("data");
    let out = marginlab(&[
        "--config",
        p(&cfg),
        "generate",
        "--n-topics",
        "5",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0);
    let manifest = read(&out_dir.join("manifest.tsv"));
    assert_eq!(
        manifest.lines().filter(|l| l.ends_with("\tdoc")).count(),
        10
    );

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(
        code(&marginlab(&[
            "--config",
            p(&cfg),
            "generate",
            "--out",
            p(&out_dir)
        ])),
        1
    );
}

#[test]
fn train_evaluate_compare_round_trip() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&generate(&data, "5")), 0);

    let trained = tmp.path().join("trained");
    let out = marginlab(&[
        "train",
        "--data-dir",
        p(&data),
        "--out",
        p(&trained),
        "--loss",
        "distributed",
        "--batch-size",
        "4",
        "--lr",
        "1e-3",
        "--eval-every",
        "5",
        "--max-steps",
        "20",
        "--max-epochs",
        "100",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let telemetry = read(&trained.join("telemetry.csv"));
    let mut lines = telemetry.lines();
    assert_eq!(
        lines.next(),
        Some("step,loss,lr,target_mean,target_min,target_max,eval_metric")
    );
    assert_eq!(lines.count(), 20);
    assert!(read(&trained.join("checkpoint.tsv")).starts_with("#dim=8 seed=5"));

    let oracle = tmp.path().join("oracle");
    let out = marginlab(&[
        "evaluate",
        "--data-dir",
        p(&data),
        "--checkpoint",
        p(&data.join("oracle.tsv")),
        "--out",
        p(&oracle),
        "--metric",
        "ndcg@10",
        "--metric",
        "hits@3",
        "--split",
        "all",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = read(&oracle.join("metrics.csv"));
    assert!(metrics.lines().any(|l| l == "ALL,ndcg,10,1"), "{metrics}");
    assert!(metrics.lines().any(|l| l.starts_with("ALL,hits,3,")));

    let features = tmp.path().join("features");
    let out = marginlab(&[
        "evaluate",
        "--data-dir",
        p(&data),
        "--checkpoint",
        p(&data.join("features.tsv")),
        "--out",
        p(&features),
        "--split",
        "all",
    ]);
    assert_eq!(code(&out), 0);

    let reranked = tmp.path().join("reranked");
    let out = marginlab(&[
        "evaluate",
        "--data-dir",
        p(&data),
        "--checkpoint",
        p(&trained.join("checkpoint.tsv")),
        "--out",
        p(&reranked),
        "--mode",
        "rerank",
        "--run",
        p(&features.join("run.txt")),
        "--depth",
        "1",
        "--split",
        "all",
    ]);
    assert_eq!(code(&out), 0);
    let baseline_top: Vec<String> = read(&features.join("run.txt"))
        .lines()
        .filter(|l| l.split_whitespace().nth(3) == Some("1"))
        .map(|l| l.split_whitespace().take(3).collect::<Vec<_>>().join(" "))
        .collect();
    let rerank_rows: Vec<String> = read(&reranked.join("run.txt"))
        .lines()
        .map(|l| l.split_whitespace().take(3).collect::<Vec<_>>().join(" "))
        .collect();
    assert_eq!(rerank_rows, baseline_top);

    let cmp = tmp.path().join("cmp");
    let run_a = features.join("run.txt");
    let out = marginlab(&[
        "compare",
        "--run-a",
        p(&run_a),
        "--run-b",
        p(&run_a),
        "--qrels",
        p(&data.join("qrels.txt")),
        "--out",
        p(&cmp),
        "--metric",
        "ndcg@10",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read(&cmp.join("compare.csv"));
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2], "ndcg@10");
    assert_eq!(row[4].parse::<f64>().unwrap(), 0.0);
    assert_eq!(row[7], "true");

    // mean_diff must agree with the per-query scores written next to it.
    let run_b = oracle.join("run.txt");
    let out = marginlab(&[
        "compare",
        "--run-a",
        p(&run_a),
        "--run-b",
        p(&run_b),
        "--qrels",
        p(&data.join("qrels.txt")),
        "--out",
        p(&cmp),
        "--metric",
        "ndcg@10",
        "--metric",
        "recall@5",
        "--family",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let per_query = read(&cmp.join("per_query.csv"));
    for line in read(&cmp.join("compare.csv")).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let diffs: Vec<f64> = per_query
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|r| r[1] == f[2])
            .map(|r| r[2].parse::<f64>().unwrap() - r[3].parse::<f64>().unwrap())
            .collect();
        assert_eq!(diffs.len(), f[3].parse::<usize>().unwrap());
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!((mean - f[4].parse::<f64>().unwrap()).abs() < 1e-9, "{line}");
        let (p_tost, p_adj): (f64, f64) = (f[5].parse().unwrap(), f[6].parse().unwrap());
        assert!((p_adj - (2.0 * p_tost).min(1.0)).abs() < 1e-12, "{line}");
    }

    let out = marginlab(&[
        "compare",
        "--run-a",
        p(&run_a),
        "--run-b",
        p(&run_b),
        "--qrels",
        p(&data.join("qrels.txt")),
        "--out",
        p(&cmp),
        "--metric",
        "ndcg@10",
        "--metric",
        "recall@5",
        "--family",
        "1",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn inspect_loss_reports_worked_instance() {
    let tmp = TempDir::new().unwrap();
    let a = (0.38 - 0.79 * 0.34) / (1.0f64 - 0.6241).sqrt();
    let rows = [
        ("q", [1.0, 0.0, 0.0]),
        ("p", [0.79, (1.0f64 - 0.6241).sqrt(), 0.0]),
        ("n", [0.34, a, (1.0 - 0.1156 - a * a).sqrt()]),
        ("q2", [0.0, 1.0, 0.0]),
        ("p2", [0.1, 0.9, 0.2]),
        ("n2", [0.3, -0.2, 0.8]),
    ];
    let mut tsv = String::from("#dim=3 seed=0\n");
    for (id, v) in rows {
        tsv.push_str(&format!("{id}\t{}\t{}\t{}\n", v[0], v[1], v[2]));
    }
    let checkpoint = tmp.path().join("table.tsv");
    std::fs::write(&checkpoint, tsv).unwrap();
    let triplets = tmp.path().join("triplets.tsv");
    std::fs::write(&triplets, "q\tp\tn\nq2\tp2\tn2\n").unwrap();

    let out = marginlab(&[
        "inspect-loss",
        "--checkpoint",
        p(&checkpoint),
        "--triplets",
        p(&triplets),
        "--query",
        "q",
        "--loss",
        "adaptive",
        "--batch-size",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(
        lines.next(),
        Some("negative\trho_pos\trho_neg\ttarget\tloss_sq\tmark")
    );
    let body: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(body.len(), 2);
    let own = body.iter().find(|r| r[0] == "n").unwrap();
    let num = |i: usize| own[i].parse::<f64>().unwrap();
    assert!((num(1) - 0.79).abs() < 1e-12);
    assert!((num(2) - 0.34).abs() < 1e-12);
    assert!((num(3) - 0.69).abs() < 1e-12);
    assert!((num(4) - 0.0576).abs() < 1e-12);
    assert_eq!(body[0][5], "max");
    assert_eq!(body[1][5], "min");

    let out = marginlab(&[
        "inspect-loss",
        "--checkpoint",
        p(&checkpoint),
        "--triplets",
        p(&triplets),
        "--query",
        "zz",
    ]);
    assert_ne!(code(&out), 0);
}

#[test]
fn help_lists_every_config_key() {
    let out = marginlab(&["train", "--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for key in [
        "seed",
        "hardness",
        "epsilon_l",
        "binarize_threshold",
        "family",
    ] {
        assert!(text.contains(key), "{key}");
    }
}
