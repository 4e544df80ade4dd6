use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_partfield"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        r#"
iterations = 2
resolution = [32, 16]
samples = 3

[prior]
corpus_count = 32
steps = 3
batch = 2
channels = 4

[mesh]
grid = 10
iterations = 2
color_fit_steps = 5
turntable_views = 2
"#,
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> (bool, String, String) {
    let out = bin().args(args).output().unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn help_lists_every_verb() {
    let (ok, stdout, _) = run(&["--help"]);
    assert!(ok);
    for verb in ["train-prior", "finetune", "sample", "mesh", "eval-diversity", "ablate-p"] {
        assert!(stdout.contains(verb), "{verb}");
    }
}

#[test]
fn missing_prior_is_an_actionable_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let (ok, _, stderr) = run(&["finetune", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!ok);
    assert!(stderr.contains("train-prior"), "{stderr}");
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "p = 2.0\n").unwrap();
    let (ok, _, stderr) = run(&["train-prior", "--config", path.to_str().unwrap()]);
    assert!(!ok && stderr.contains("p = 2"), "{stderr}");
}

#[test]
fn end_to_end_verbs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let common = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    let with = |extra: &[&str]| {
        let mut v: Vec<&str> = extra.to_vec();
        v.extend_from_slice(&common);
        let (ok, stdout, stderr) = run(&v);
        assert!(ok, "{extra:?}: {stderr}");
        stdout
    };
    assert!(with(&["train-prior"]).starts_with("trained"));
    assert!(with(&["train-prior"]).starts_with("cached"));
    let ckpt = with(&["finetune", "--p", "0.5"]).trim().to_string();
    assert!(Path::new(&ckpt).exists());
    let stdout = with(&["sample", "--checkpoint", &ckpt, "--n", "2", "--seed", "3"]);
    let latents: Vec<&str> = stdout.lines().collect();
    assert_eq!(latents.len(), 2);
    assert!(with(&["eval-diversity", "--checkpoint", &ckpt]).contains("samples 3"));
    let mesh = with(&["mesh", "--checkpoint", &ckpt, "--latent", latents[0]]);
    assert!(mesh.trim().ends_with("mesh.obj"));
    let table = with(&["ablate-p", "--p", "0.1", "--p", "1", "--seeds", "1"]);
    assert_eq!(table.lines().count(), 3);
    let manifest = out.join("finetune/manifest.json");
    let out2 = dir.path().join("replay");
    let (ok, _, stderr) = run(&["train-prior", "--config", manifest.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert!(ok, "{stderr}");
    let (ok, replay, stderr) =
        run(&["finetune", "--config", manifest.to_str().unwrap(), "--out", out2.to_str().unwrap(), "--quiet"]);
    assert!(ok, "{stderr}");
    assert!(!replay.contains(out.to_str().unwrap()));
    assert_eq!(std::fs::read(replay.trim()).unwrap(), std::fs::read(&ckpt).unwrap());
}
