use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gazeadapt::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use gazeadapt::engine::{parse_loss_log, RunManifest, RunStatus};
use gazeadapt::nn::Architecture;

const BASE: &str = r#"
source_val = 20

[source]
kind = "synthetic"
[source.spec]
gaze_range = { pitch_span = 0.4, yaw_span = 0.6 }
illumination = { brightness_mean = 0.9, brightness_std = 0.05 }
noise_std = 0.01
texture_seed = 11
n_images = 80
seed = 1
height = 12
width = 20

[target]
kind = "synthetic"
[target.spec]
gaze_range = { pitch_span = 0.25, yaw_span = 0.35 }
illumination = { brightness_mean = 0.5, brightness_std = 0.05 }
noise_std = 0.05
texture_seed = 29
n_images = 30
seed = 2
height = 12
width = 20

[pretrain]
n_models = 3
steps = 20
batch_size = 8
lr = 1e-3

[adapt]
H = 2
N = 5
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gazeadapt"))
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{BASE}\n{extra}")).unwrap();
    path
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// The single JSON error record a failing command leaves on stderr.
fn error_record(o: &Output) -> serde_json::Value {
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["status"], "error");
    v
}

fn pretrained(dir: &Path, extra: &str) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, extra);
    let out = dir.join("run");
    ok(&run(&["pretrain"], &cfg, &out));
    (cfg, out)
}

#[test]
fn pretrain_writes_checkpoints_and_stable_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = pretrained(dir.path(), "");
    let mut subdirs: Vec<_> = fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    subdirs.sort();
    assert_eq!(subdirs, ["model_00", "model_01", "model_02"]);
    let ranking = fs::read_to_string(out.join("ranking.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 4);
    assert!(ranking.starts_with("rank,id,seed,source_val_error\n"));

    let again = dir.path().join("again");
    ok(&run(&["pretrain"], &cfg, &again));
    assert_eq!(fs::read_to_string(again.join("ranking.csv")).unwrap(), ranking);
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, BASE.replace("N = 5", "N = 5\nalpa = 0.9")).unwrap();
    let rec = error_record(&run(&["pretrain"], &cfg, &dir.path().join("o")));
    assert_eq!(rec["kind"], "config");
    assert!(rec["message"].as_str().unwrap().contains("alpa"), "{rec}");
}

#[test]
fn usage_errors_are_records_too() {
    let o = bin().args(["adapt", "--bogus"]).output().unwrap();
    assert_eq!(error_record(&o)["kind"], "usage");
}

#[test]
fn adapt_runs_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = pretrained(dir.path(), "");
    ok(&run(&["adapt"], &cfg, &out));
    let m: RunManifest =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    assert_eq!(m.losses.len(), 5);
    let log = parse_loss_log(&fs::read_to_string(out.join("losses.csv")).unwrap()).unwrap();
    assert_eq!(log, m.losses);
    let resolved = m.resolved_config.unwrap();
    assert_eq!(resolved["adapt"]["N"], 5);
    assert_eq!(resolved["source_val"], 20);
    assert_eq!(m.target_label_accesses, 0);
    assert!(m.final_error.is_some());
    load_checkpoint(&out.join("adapted")).unwrap();
}

#[test]
fn zero_iterations_return_the_top_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = pretrained(dir.path(), "");
    let cfg_text = fs::read_to_string(&cfg).unwrap().replace("N = 5", "N = 0");
    fs::write(&cfg, cfg_text).unwrap();
    ok(&run(&["adapt"], &cfg, &out));
    let ranking = fs::read_to_string(out.join("ranking.csv")).unwrap();
    let top = ranking.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string();
    let first = load_checkpoint(&out.join("checkpoints").join(top)).unwrap();
    let adapted = load_checkpoint(&out.join("adapted")).unwrap();
    assert_eq!(adapted.params, first.params);
}

#[test]
fn adapt_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("empty");
    let rec = error_record(&run(&["adapt"], &cfg, &out));
    assert!(rec["message"].as_str().unwrap().contains("empty"), "{rec}");

    let (cfg, out) = pretrained(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("H = 2", "H = 4");
    fs::write(&cfg, text).unwrap();
    assert_eq!(error_record(&run(&["adapt"], &cfg, &out))["kind"], "config");
}

#[test]
fn divergence_exits_nonzero_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = pretrained(dir.path(), "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("N = 5", "N = 50\nlr_adapt = 1e30");
    fs::write(&cfg, text).unwrap();
    assert_eq!(error_record(&run(&["adapt"], &cfg, &out))["kind"], "diverged");
    let m: RunManifest =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.status, RunStatus::Diverged);
}

const PROBE_DATA: &str = r#"
[eval]
kind = "synthetic"
[eval.spec]
gaze_range = { pitch_span = 0.3, yaw_span = 0.4 }
illumination = { brightness_mean = 0.5, brightness_std = 0.05 }
noise_std = 0.0
texture_seed = 3
n_images = 16
seed = 5
height = 12
width = 20
label_channel = true
"#;

fn probe_checkpoint(dir: &Path) -> PathBuf {
    let arch = Architecture::LabelProbe {
        channels: 2,
        height: 12,
        width: 20,
    };
    let model = arch.build(0);
    let path = dir.join("probe");
    save_checkpoint(&path, &Checkpoint::from_model("probe", model.as_ref(), 0)).unwrap();
    path
}

#[test]
fn eval_of_label_probe_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PROBE_DATA);
    let model = probe_checkpoint(dir.path());
    let out = dir.path().join("eval");
    let o = bin()
        .args(["eval", "--model"])
        .arg(&model)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(ok(&o), "0.000\n");
    let per = fs::read_to_string(out.join("per_sample.csv")).unwrap();
    assert_eq!(per.lines().count(), 17);
}

#[test]
fn eval_rejects_unlabeled_data() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    fs::create_dir_all(&imgs).unwrap();
    let img = gazeadapt::Tensor::full(&[1, 12, 20], 0.5);
    gazeadapt::data::write_png(&imgs.join("a.png"), &img).unwrap();
    let extra = format!("[eval]\nkind = \"directory\"\nroot = {:?}\n", imgs.display().to_string());
    let (_, out) = pretrained(dir.path(), "");
    let cfg = write_config(dir.path(), &extra);
    let o = bin()
        .args(["eval", "--model"])
        .arg(out.join("checkpoints/model_00"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(error_record(&o)["kind"], "invalid_argument");
}

#[test]
fn ablate_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = pretrained(dir.path(), "");

    let single = format!(
        "{}\n[ablate]\nseeds = [0]\nvariants = [{{ name = \"full\" }}]\n",
        fs::read_to_string(&cfg).unwrap()
    );
    fs::write(&cfg, &single).unwrap();
    let table = ok(&run(&["ablate"], &cfg, &out));
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "variant,mean,std,seeds,cell");
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].split(',').nth(2), Some(""));

    let grid = single.replace(
        "variants = [{ name = \"full\" }]",
        "seeds = [0, 1]\nvariants = [{ name = \"eps0.1\", epsilon = 0.1 }, { name = \"eps0.05\", epsilon = 0.05 }, { name = \"eps0.01\", epsilon = 0.01 }]",
    ).replace("seeds = [0]\n", "");
    fs::write(&cfg, &grid).unwrap();
    let first = ok(&run(&["ablate"], &cfg, &out));
    let names: Vec<&str> = first.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["eps0.1", "eps0.05", "eps0.01"]);
    for l in first.lines().skip(1) {
        assert!(l.ends_with('}'), "{l}");
    }
    assert_eq!(ok(&run(&["ablate"], &cfg, &out)), first);
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap(), first);
}

fn curve(dir: &Path, extra: &str) -> Output {
    let cfg = write_config(dir, extra);
    run(&["losscurve"], &cfg, dir)
}

#[test]
fn losscurve_exports() {
    let dir = tempfile::tempdir().unwrap();
    ok(&curve(dir.path(), ""));
    let text = fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 801);
    assert!(text.lines().any(|l| l == "0,0,0,0"));
    let step = 8.0 / 800.0;
    let jump = rows
        .windows(2)
        .filter(|w| w[0][0] >= 0.0)
        .max_by(|a, b| (a[1][1] - a[0][1]).total_cmp(&(b[1][1] - b[0][1])))
        .unwrap();
    assert!(jump[0][0] <= 1.6449 + step && jump[1][0] >= 1.6449 - step, "{jump:?}");

    ok(&curve(dir.path(), "[losscurve]\nn_points = 2\n"));
    let text = fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);

    let rec = error_record(&curve(dir.path(), "[losscurve]\nepsilon = 1.5\n"));
    assert_eq!(rec["kind"], "invalid_argument");
}
