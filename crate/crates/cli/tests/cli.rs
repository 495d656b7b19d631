use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mvpln_cli::diagnose::{diagnose_dump, diagnose_fit, ChainReport};
use mvpln_cli::manifest::{sha256_file, Manifest};
use mvpln_cli::run::{load_dataset, run_fit};
use mvpln_cli::sim::{run_sim, SimSummary};
use mvpln_cli::RunConfig;
use mvpln_core::matnorm::MatNormParams;
use mvpln_core::sampler::{sample_latent, write_chain_dump, ChainConfig};
use mvpln_core::selection::SelectionTable;
use mvpln_core::simgen::{generate, preset, write_labels};
use mvpln_core::tensor_io::{save_counts, LibrarySizes};

fn quick(out: &Path) -> RunConfig {
    RunConfig {
        preset: Some("sim3".into()),
        n: Some(40),
        g_min: 1,
        g_max: 2,
        chains: 2,
        iters: 200,
        max_outer_iterations: 3,
        seed: 17,
        out: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvpln"))
}

fn exit_code(args: &[&str]) -> i32 {
    bin()
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("exit code")
}

/// Every file under `dir`, keyed by its path relative to `dir`.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                acc.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(dir, dir, &mut acc);
    acc
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn outputs_do_not_depend_on_worker_count_or_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (name, jobs) in [("a", 1), ("b", 4), ("c", 1)] {
        let cfg = RunConfig {
            jobs,
            heatmaps: true,
            ..quick(&tmp.path().join(name))
        };
        run_fit(&cfg).unwrap();
        runs.push(tree(&cfg.out));
    }
    assert!(runs[0].contains_key(Path::new("selection.csv")));
    assert!(runs[0].contains_key(Path::new("manifest.json")));
    assert!(runs[0].contains_key(&Path::new("heatmaps_G2").join("cluster_2.svg")));
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn manifest_lists_every_artifact_with_its_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick(tmp.path());
    run_fit(&cfg).unwrap();
    let manifest: Manifest = read_json(&tmp.path().join("manifest.json"));
    let on_disk: Vec<String> = tree(tmp.path())
        .keys()
        .filter(|p| p != &Path::new("manifest.json"))
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .collect();
    assert_eq!(manifest.artifacts.keys().cloned().collect::<Vec<_>>(), on_disk);
    for (rel, hash) in &manifest.artifacts {
        assert_eq!(&sha256_file(&tmp.path().join(rel)).unwrap(), hash);
    }
    assert!(manifest.config.get("jobs").is_none());
    assert!(manifest.config.get("out").is_none());
    assert_eq!(manifest.config["seed"], 17);
}

#[test]
fn single_g_range_gives_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        g_max: 1,
        max_outer_iterations: 60,
        ..quick(tmp.path())
    };
    let report = run_fit(&cfg).unwrap();
    assert_eq!(report.table.rows.len(), 1);
    let chosen = report.table.chosen.expect("G = 1 fitted");
    assert_eq!([chosen.aic, chosen.bic, chosen.aic3, chosen.icl], [1; 4]);
    let csv = fs::read_to_string(tmp.path().join("selection.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn one_replicate_summary_matches_its_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        max_outer_iterations: 60,
        ..quick(tmp.path())
    };
    let summary = run_sim(&cfg).unwrap();
    assert_eq!(summary.replicates, 1);
    let table: SelectionTable = read_json(&tmp.path().join("rep_001").join("selection.json"));
    let chosen = table.chosen.expect("replicate fitted");
    let picks = [chosen.aic, chosen.bic, chosen.aic3, chosen.icl];
    for (c, g) in summary.criteria.iter().zip(picks) {
        assert_eq!(c.chosen, BTreeMap::from([(g, 1)]));
        let row = table.rows.iter().find(|r| r.g == g).unwrap();
        assert_eq!(c.ari_mean, row.ari);
        assert_eq!(c.ari_sd, Some(0.0));
    }
    let on_disk: SimSummary = read_json(&tmp.path().join("summary.json"));
    assert_eq!(on_disk, summary);
    for f in ["counts.csv", "labels.csv", "spec.json"] {
        assert!(tmp.path().join("rep_001").join(f).is_file(), "{f}");
    }
}

#[test]
fn replicates_get_distinct_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick(tmp.path());
    let a = load_dataset(&cfg, 0).unwrap();
    let b = load_dataset(&cfg, 1).unwrap();
    assert_ne!(a.tensor, b.tensor);
    assert_eq!(load_dataset(&cfg, 1).unwrap().tensor, b.tensor);
}

#[test]
fn diagnose_reads_a_chain_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let (tensor, _) = generate(&preset("sim3").unwrap().with_n(1)).unwrap();
    let params = MatNormParams::new(
        nalgebra::DMatrix::from_element(2, 3, 6.2),
        nalgebra::DMatrix::identity(2, 2),
        nalgebra::DMatrix::identity(3, 3),
    )
    .unwrap();
    let config = ChainConfig {
        n_chains: 3,
        n_iter: 600,
        ..ChainConfig::default()
    };
    let chains = sample_latent(&tensor.unit_matrix(0), &LibrarySizes::unit(6), &params, &config, 3).unwrap();
    let dump = tmp.path().join("chains.csv");
    let mut bytes = Vec::new();
    write_chain_dump(&mut bytes, &chains).unwrap();
    fs::write(&dump, bytes).unwrap();

    let out = tmp.path().join("diag");
    let report = diagnose_dump(&dump, &out, 0.05).unwrap();
    assert_eq!(report.dim, 6);
    assert_eq!(report.n_chains, 3);
    assert_eq!(report.retained, chains.retained());
    assert_eq!(report.coordinates.len(), 6);
    assert!(report.coordinates.iter().all(|c| c.stationary.len() == 3));
    assert!(report.passed, "max psrf {}", report.max_psrf);
    let saved: ChainReport = read_json(&out.join("report.json"));
    assert_eq!(saved, report);

    let status = bin()
        .args(["diagnose", "--dump"])
        .arg(&dump)
        .arg("--out")
        .arg(tmp.path().join("diag_bin"))
        .status()
        .unwrap();
    assert!(status.success());
    let from_bin: ChainReport = read_json(&tmp.path().join("diag_bin").join("report.json"));
    assert_eq!(from_bin, report);
}

#[test]
fn diagnose_samples_a_unit_of_a_saved_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        g_min: 2,
        ..quick(&tmp.path().join("fit"))
    };
    run_fit(&cfg).unwrap();
    let data = load_dataset(&cfg, 0).unwrap();
    let unit = data.tensor.unit_ids()[0].clone();
    let diag_cfg = RunConfig {
        chains: 3,
        iters: 400,
        out: tmp.path().join("diag"),
        ..cfg.clone()
    };
    let fit_path = cfg.out.join("fit_G2.json");
    let report = diagnose_fit(&diag_cfg, &fit_path, &unit, 2).unwrap();
    assert_eq!((report.dim, report.n_chains), (6, 3));
    assert!(diag_cfg.out.join("chains.csv").is_file());
    assert!(diagnose_fit(&diag_cfg, &fit_path, &unit, 3).is_err());
    assert!(diagnose_fit(&diag_cfg, &fit_path, "no such unit", 1).is_err());
}

#[test]
fn heatmap_subcommand_writes_one_file_per_cluster() {
    let tmp = tempfile::tempdir().unwrap();
    let (tensor, labels) = generate(&preset("sim3").unwrap().with_n(30)).unwrap();
    let counts = tmp.path().join("counts.csv");
    save_counts(&counts, &tensor).unwrap();
    let labels_path = tmp.path().join("labels.csv");
    write_labels(&labels_path, tensor.unit_ids(), &labels).unwrap();
    let out = tmp.path().join("maps");
    let status = bin()
        .args(["heatmap", "--r", "2", "--p", "3", "--input"])
        .arg(&counts)
        .arg("--labels")
        .arg(&labels_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let mut present = labels.clone();
    present.sort_unstable();
    present.dedup();
    let files: Vec<String> = tree(&out).keys().map(|p| p.to_string_lossy().into_owned()).collect();
    let expected: Vec<String> = present.iter().map(|k| format!("cluster_{}.svg", k + 1)).collect();
    assert_eq!(files, expected);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.json");
    let file_cfg = RunConfig {
        seed: 5,
        g_max: 1,
        ..quick(&tmp.path().join("from_file"))
    };
    fs::write(&config, serde_json::to_string(&file_cfg).unwrap()).unwrap();
    let out = tmp.path().join("from_flags");
    let status = bin()
        .arg("fit")
        .arg("--config")
        .arg(&config)
        .args(["--seed", "9", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: Manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest.config["seed"], 9);
    assert_eq!(manifest.config["g_max"], 1);
    assert_eq!(manifest.config["iters"], 200);
    assert!(!tmp.path().join("from_file").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(exit_code(&["--help"]), 0);
    assert_eq!(exit_code(&["--version"]), 0);
    assert_eq!(exit_code(&[]), 1);
    assert_eq!(exit_code(&["frobnicate"]), 1);
    assert_eq!(exit_code(&["fit", "--preset", "sim9"]), 1);
    assert_eq!(
        exit_code(&["fit", "--preset", "sim3", "--g-min", "3", "--g-max", "2", "--out", out]),
        1
    );
    assert_eq!(exit_code(&["fit", "--input", "missing.csv", "--out", out]), 1);

    let missing = tmp.path().join("missing.csv");
    let missing = missing.to_str().unwrap();
    assert_eq!(
        exit_code(&["fit", "--input", missing, "--r", "2", "--p", "3", "--out", out]),
        2
    );

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "unit,a:x,a:y\ng1,1,-2\n").unwrap();
    let bad = bad.to_str().unwrap();
    assert_eq!(
        exit_code(&["fit", "--input", bad, "--r", "1", "--p", "2", "--out", out]),
        2
    );

    let (tensor, _) = generate(&preset("sim3").unwrap().with_n(2)).unwrap();
    let tiny = tmp.path().join("tiny.csv");
    save_counts(&tiny, &tensor).unwrap();
    let tiny = tiny.to_str().unwrap();
    let args = [
        "fit", "--input", tiny, "--r", "2", "--p", "3", "--g-min", "3", "--g-max", "3", "--norm", "total", "--out", out,
    ];
    assert_eq!(exit_code(&args), 3);
}

#[test]
fn each_g_is_independent_of_the_rest_of_the_range() {
    let tmp = tempfile::tempdir().unwrap();
    let wide = quick(&tmp.path().join("wide"));
    let narrow = RunConfig {
        g_min: 2,
        ..quick(&tmp.path().join("narrow"))
    };
    run_fit(&wide).unwrap();
    run_fit(&narrow).unwrap();
    for f in ["fit_G2.json", "labels_G2.csv", "loglik_G2.csv"] {
        assert_eq!(
            fs::read(wide.out.join(f)).unwrap(),
            fs::read(narrow.out.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn a_failed_g_leaves_the_others_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let (tensor, _) = generate(&preset("sim3").unwrap().with_n(6)).unwrap();
    let input = tmp.path().join("counts.csv");
    save_counts(&input, &tensor).unwrap();
    let base = RunConfig {
        input: Some(input),
        r: Some(2),
        p: Some(3),
        g_min: 1,
        g_max: 1,
        chains: 2,
        iters: 200,
        max_outer_iterations: 3,
        out: tmp.path().join("alone"),
        ..RunConfig::default()
    };
    let with_failure = RunConfig {
        g_max: 7,
        out: tmp.path().join("with_failure"),
        ..base.clone()
    };
    run_fit(&base).unwrap();
    let report = run_fit(&with_failure).unwrap();
    let failed = report.table.rows.iter().find(|r| r.g == 7).unwrap();
    assert!(failed.error.is_some() && failed.criteria.is_none());
    assert!(!with_failure.out.join("fit_G7.json").exists());
    for f in ["fit_G1.json", "labels_G1.csv", "loglik_G1.csv"] {
        assert_eq!(
            fs::read(base.out.join(f)).unwrap(),
            fs::read(with_failure.out.join(f)).unwrap(),
            "{f}"
        );
    }
}
