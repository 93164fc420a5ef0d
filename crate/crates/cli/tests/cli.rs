use std::path::Path;
use std::process::{Command, Output};

fn gradleak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradleak"))
        .args(args)
        .env("GRADLEAK_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, attack: &str) -> String {
    let text = format!(
        r#"schema = "gradleak.experiment/1"
task = "vision-cls"
seed = 5
metrics = ["mse", "psnr"]

[model]
kind = "mlp-classifier"
layer_dims = [8]
input = {{ type = "image", channels = 1, height = 4, width = 4 }}
num_classes = 2

[data]
eval_size = 4
aux_size = 80
pool = {{ source = "synthetic-vision", classes = 4, channels = 1, height = 4, width = 4, pool_size = 200 }}

{attack}

[output]
dir = "out"
"#
    );
    let path = dir.join(format!("{}.toml", attack.len()));
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const LTI: &str = "[attack]\nkind = \"lti\"\nhidden = [8]\n\n[attack.train]\nepochs = 1\nbatch_size = 8\n";
const OPT: &str = "[attack]\nkind = \"opt-baseline\"\n\n[attack.optimizer]\nsteps = 10\n";

#[test]
fn full_pipeline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let lti = write_config(dir.path(), LTI);
    let opt = write_config(dir.path(), OPT);

    for cmd in ["gen-data", "snapshot-model", "train-lti"] {
        let o = gradleak(&[cmd, "--config", &lti, "--out", out_s]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(out.join("data.glkd").exists() && out.join("model.json").exists());
    assert!(out.join("inverter.glki").exists() && out.join("training-log.json").exists());

    let inv = out.join("inverter.glki");
    let o = gradleak(&["evaluate", "--config", &lti, "--out", out_s, "--inverter", inv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mse"));
    std::fs::rename(out.join("report.json"), out.join("lti.json")).unwrap();

    let o = gradleak(&["attack-opt", "--config", &opt, "--out", out_s, "--seed", "6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = gradleak(&["sweep", "--config", &lti, "--out", out_s, "--axis", "aux-size", "--values", "40,80"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report-sweep.csv").exists());

    let (a, b) = (out.join("lti.json"), out.join("report.json"));
    let o = gradleak(&["report", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ordering by mse"));
}

#[test]
fn configuration_problems_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let lti = write_config(dir.path(), LTI);
    let opt = write_config(dir.path(), OPT);
    let missing = dir.path().join("nope.toml");
    let cases: Vec<Vec<&str>> = vec![
        vec!["evaluate", "--config", missing.to_str().unwrap()],
        vec!["train-lti", "--config", &opt],
        vec!["attack-opt", "--config", &lti],
        vec!["sweep", "--config", &lti, "--axis", "depth", "--values", "1"],
        vec!["evaluate", "--config", &lti, "--inverter", missing.to_str().unwrap()],
        vec!["no-such-command"],
    ];
    for args in cases {
        let o = gradleak(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema = \"gradleak.experiment/1\"\ntask = 3\n").unwrap();
    let o = gradleak(&["evaluate", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
}

#[test]
fn runtime_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let lti = write_config(dir.path(), LTI);
    // the output "directory" is a regular file, so writing fails at run time
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "").unwrap();
    for cmd in ["gen-data", "evaluate"] {
        let o = gradleak(&[cmd, "--config", &lti, "--out", blocker.to_str().unwrap()]);
        assert_eq!(code(&o), 3, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
