use std::fs;
use std::path::Path;
use std::process::Command;

use ipbc_core::data::{blob_centers, load_csv};

fn ipbc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ipbc"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path
}

const BLOBS: &str = "[dataset]\nblobs = { n_per_cluster = 25, d = 4, k = 3 }\n";

fn run(dir: &Path, body: &str) -> std::process::Output {
    let cfg = write_config(dir, body);
    ipbc()
        .args(["run", "--jobs", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

#[test]
fn minimal_run_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &format!("{BLOBS}[run]\nmethods = [\"kmeans_raw\"]\nseeds = [0]\n"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,dataset,seed,round,ari,nmi,silhouette,davies_bouldin");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("kmeans_raw,blobs,0,0,"));
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells.len(), 8);
    assert!(cells[4..].iter().all(|c| !c.is_empty()));
    assert!(dir.path().join("out/coords_kmeans_raw_seed0.csv").exists());
}

#[test]
fn ipbc_rows_for_each_round() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{BLOBS}[run]\nmethods = [\"ipbc\"]\n[ipbc]\nrounds = 3\n[pipeline.optimizer]\nepochs = 40\nwarm_epochs = 10\n");
    let out = run(dir.path(), &body);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let rounds: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(rounds, ["0", "1", "2", "3"]);
    let session: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/session_ipbc_seed0.json")).unwrap()).unwrap();
    assert_eq!(session["rounds"].as_array().unwrap().len(), 4);
}

#[test]
fn unlabeled_csv_leaves_external_metrics_blank() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("plain.csv");
    let mut text = String::from("a,b\n");
    for i in 0..30 {
        let base = if i < 15 { 0.0 } else { 20.0 };
        text.push_str(&format!("{},{}\n", base + (i % 5) as f64 * 0.1, base + (i % 3) as f64 * 0.1));
    }
    fs::write(&data, text).unwrap();
    let body = "[dataset]\ncsv = \"plain.csv\"\n[run]\nmethods = [\"kmeans_raw\"]\n[kmeans]\nk = 2\n";
    let out = run(dir.path(), body);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let cells: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&cells[..4], ["kmeans_raw", "plain", "0", "0"]);
    assert_eq!(&cells[4..6], ["", ""]);
    assert!(!cells[6].is_empty() && !cells[7].is_empty());
}

#[test]
fn unknown_method_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &format!("{BLOBS}[run]\nmethods = [\"tsne\"]\n"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run.methods") && err.contains("tsne"), "{err}");
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "[dataset]\ncsv = \"nope.csv\"\n[run]\nmethods = [\"static\"]\n");
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn metrics_are_byte_identical_across_runs() {
    let body = format!("{BLOBS}[run]\nmethods = [\"kmeans_raw\", \"kmeans_pca\", \"static\", \"ipbc\"]\nseeds = [0, 1]\n[ipbc]\nrounds = 1\n[pipeline.optimizer]\nepochs = 30\nwarm_epochs = 10\n");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run(a.path(), &body).status.success());
    let cfg = write_config(b.path(), &body);
    let out = ipbc().args(["run", "--jobs", "1", "--config"]).arg(&cfg).arg("--out").arg(b.path().join("out")).output().unwrap();
    assert!(out.status.success());
    let ma = fs::read(a.path().join("out/metrics.csv")).unwrap();
    let mb = fs::read(b.path().join("out/metrics.csv")).unwrap();
    assert_eq!(ma, mb);
    // 4 methods × 2 seeds, ipbc contributes 2 rounds each
    assert_eq!(String::from_utf8(ma).unwrap().lines().count(), 1 + 2 + 2 + 2 + 4);
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let path = dir.join(name);
    let out = ipbc().arg("gen").args(extra).arg("--out").arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn gen_defaults_round_trip_through_load_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "d.csv", &[]);
    let ds = load_csv(&path, Some("label")).unwrap();
    assert_eq!(ds.n_points(), 400);
    assert_eq!(ds.n_features(), 10);
    assert_eq!(ds.n_classes(), Some(4));
}

#[test]
fn gen_same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--n", "30", "--d", "3", "--k", "3", "--seed", "11"];
    let a = gen(dir.path(), "a.csv", &args);
    let b = gen(dir.path(), "b.csv", &args);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    let c = gen(dir.path(), "c.csv", &["--n", "30", "--d", "3", "--k", "3", "--seed", "12"]);
    assert_ne!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(c).unwrap());
}

#[test]
fn gen_overlap_halves_one_center_distance() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "o.csv", &["--n", "2000", "--d", "5", "--k", "4", "--noise", "0.5", "--overlap", "1,2"]);
    let ds = load_csv(&path, Some("label")).unwrap();
    let labels = ds.labels().unwrap();
    let x = ds.features();
    // empirical class means from the written file
    let mut means = vec![vec![0.0; 5]; 4];
    let mut counts = [0usize; 4];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for j in 0..5 {
            means[l][j] += x[[i, j]];
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c as f64);
    }
    let dist = |a: usize, b: usize| means[a].iter().zip(&means[b]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    // standard error of a mean difference is about 0.5 * sqrt(2 / 2000)
    for a in 0..4 {
        for b in a + 1..4 {
            let want = if (a, b) == (1, 2) { 5.0 } else { 10.0 };
            assert!((dist(a, b) - want).abs() < 0.1, "({a},{b}) {} vs {want}", dist(a, b));
        }
    }
    // and the generator's own centers carry the exact distances
    let c = blob_centers(4, 5, 10.0, Some((1, 2)));
    let d12 = (&c.row(1) - &c.row(2)).mapv(|v| v * v).sum().sqrt();
    assert!((d12 - 5.0).abs() < 1e-9);
}

#[test]
fn gen_rejects_bad_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let out = ipbc().args(["gen", "--k", "3", "--overlap", "0,5", "--out"]).arg(dir.path().join("x.csv")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn serve_port_in_use_fails_with_os_error() {
    let taken = std::net::TcpListener::bind("0.0.0.0:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let out = ipbc().args(["serve", "--port", &port.to_string()]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr).to_lowercase();
    assert!(err.contains("address") || err.contains("in use"), "{err}");
}

#[test]
fn serve_prints_listen_address() {
    use std::io::{BufRead, BufReader};
    let probe = std::net::TcpListener::bind("0.0.0.0:0").unwrap();
    let port = probe.local_addr().unwrap().port();
    drop(probe);
    let mut child = ipbc()
        .args(["serve", "--port", &port.to_string()])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(line.contains(&format!(":{port}")), "{line}");
}
