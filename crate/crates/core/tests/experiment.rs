use std::path::Path;

use gradleak::error::Error;
use gradleak::experiment::{run_experiment, run_sweep, ExperimentConfig, SweepAxis, WeightSnapshot};
use gradleak::model::{fingerprint, init_params, TargetModel};

fn vision_toml(out: &Path, extra_data: &str, attack: &str) -> String {
    format!(
        r#"
schema = "gradleak.experiment/1"
task = "vision-cls"
seed = 11
batch_size = 1
metrics = ["mse", "psnr"]

[model]
kind = "mlp-classifier"
layer_dims = [8]
input = {{ type = "image", channels = 1, height = 4, width = 4 }}
num_classes = 2

[data]
eval_size = 8
aux_size = 120
{extra_data}
pool = {{ source = "synthetic-vision", classes = 4, channels = 1, height = 4, width = 4, pool_size = 400 }}

{attack}

[output]
dir = "{}"
"#,
        out.display()
    )
}

const LTI: &str = "[attack]\nkind = \"lti\"\nhidden = [16]\n\n[attack.train]\nepochs = 2\nbatch_size = 16\n";
const OPT: &str = "[attack]\nkind = \"opt-baseline\"\n\n[attack.optimizer]\nsteps = 30\nrestarts = 2\n";

fn config(out: &Path, extra: &str, attack: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&vision_toml(out, extra, attack)).unwrap()
}

fn field_of(err: Error) -> String {
    match err {
        Error::Config { field, .. } => field,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn config_errors_name_the_field() {
    let out = Path::new("/tmp/unused");
    let cases = [
        (vision_toml(out, "", LTI).replace("experiment/1", "experiment/9"), "schema"),
        (vision_toml(out, "", LTI).replace("aux_size = 120", "aux_size = 395"), "data.aux_size"),
        (vision_toml(out, "beta = 1.5", LTI), "data.beta"),
        (vision_toml(out, "augmentation = \"unigram\"", LTI), "data.augmentation"),
        (vision_toml(out, "", LTI).replace("num_classes = 2", "num_classes = 3"), "data.pool.classes"),
        (vision_toml(out, "", LTI).replace("epochs = 2", "epochs = 2\nlr = -1.0"), "attack.train.lr"),
        (vision_toml(out, "", LTI).replace("batch_size = 1", "batch_size = 3"), "data.eval_size"),
        (vision_toml(out, "", LTI).replace("\"psnr\"]", "\"bleu\"]"), "metrics"),
    ];
    for (text, field) in cases {
        assert_eq!(field_of(ExperimentConfig::from_toml(&text).unwrap_err()), field);
    }
    // parse errors point at a byte span
    let err = ExperimentConfig::from_toml(&vision_toml(out, "colour = 3", LTI)).unwrap_err();
    assert!(field_of(err).starts_with("bytes "));
}

#[test]
fn toml_round_trip() {
    let cfg = config(Path::new("out"), "augmentation = \"dct-gaussian\"\naugment_size = 50", OPT);
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "", LTI);
    let model = TargetModel::new(cfg.model.clone()).unwrap();
    let weights = init_params(&model, 1).into_inner();
    let snap = WeightSnapshot { model: cfg.model.clone(), fingerprint: fingerprint(&model, &weights), weights };
    snap.save(&dir.path().join("w.json")).unwrap();
    let text = vision_toml(dir.path(), "", LTI).replace("[model]", "weights = \"w.json\"\n\n[model]");
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, text).unwrap();
    let loaded = ExperimentConfig::load(&path).unwrap();
    assert_eq!(loaded.weights.as_deref(), Some(dir.path().join("w.json").as_path()));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for attack in [LTI, OPT] {
        let cfg = config(dir.path(), "", attack);
        run_experiment(&cfg).unwrap();
        let json = std::fs::read(dir.path().join("report.json")).unwrap();
        let csv = std::fs::read(dir.path().join("report.csv")).unwrap();
        run_experiment(&cfg).unwrap();
        assert_eq!(std::fs::read(dir.path().join("report.json")).unwrap(), json);
        assert_eq!(std::fs::read(dir.path().join("report.csv")).unwrap(), csv);
        assert!(!dir.path().join("report.json.partial").exists());
    }
}

#[test]
fn report_has_one_record_per_eval_sample() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&config(dir.path(), "beta = 0.0\naugmentation = \"image-gaussian\"", LTI)).unwrap();
    assert_eq!(report.records.len(), 8);
    assert_eq!(report.aggregates.keys().collect::<Vec<_>>(), ["mse", "psnr"].iter().collect::<Vec<_>>());
}

#[test]
fn single_value_sweep_equals_a_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "", LTI);
    let sweep = run_sweep(&cfg, SweepAxis::AuxSize, &[120.0]).unwrap();
    let plain = run_experiment(&cfg).unwrap();
    assert_eq!(sweep.points[0].records, plain.records);
    assert_eq!(sweep.points[0].aggregates, plain.aggregates);
    assert!(dir.path().join("report-sweep.csv").exists());
    assert!(dir.path().join("report-aux-size=120.json").exists());
}

#[test]
fn sweep_rejects_bad_values() {
    let cfg = config(Path::new("out"), "", LTI);
    assert!(run_sweep(&cfg, SweepAxis::AuxSize, &[]).unwrap_err().is_config());
    assert!(run_sweep(&cfg, SweepAxis::AuxSize, &[0.5]).unwrap_err().is_config());
    assert!(run_sweep(&cfg, SweepAxis::AuxSize, &[1000.0]).unwrap_err().is_config());
    assert!("depth".parse::<SweepAxis>().is_err());
}

#[test]
fn undefended_l2_baseline_reports_small_error() {
    let dir = tempfile::tempdir().unwrap();
    let attack = "[attack]\nkind = \"opt-baseline\"\nobjective = { kind = \"l2\" }\n\n[attack.optimizer]\nsteps = 2000\n";
    let text = vision_toml(dir.path(), "", attack).replace("mlp-classifier", "conv-lite-classifier").replace("[8]", "[4]");
    let report = run_experiment(&ExperimentConfig::from_toml(&text).unwrap()).unwrap();
    assert!(report.mean("mse").unwrap() < 0.01, "{:?}", report.aggregates);
}

#[test]
fn in_distribution_aux_beats_out_of_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "", LTI);
    cfg.data.aux_size = 150;
    if let gradleak::experiment::AttackConfig::Lti(l) = &mut cfg.attack {
        l.hidden = vec![64];
        l.train.epochs = 15;
    }
    let sweep = run_sweep(&cfg, SweepAxis::Beta, &[0.0, 1.0]).unwrap();
    let s = sweep.series("mse");
    assert_eq!(s.len(), 2);
    assert!(s[1].1 <= s[0].1, "{s:?}");
}
