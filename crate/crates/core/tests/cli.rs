use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flame_gaze::cli::plot::{parse_history, read_report};
use flame_gaze::trainer::HISTORY_HEADER;

fn flame(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flame"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FLAME_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("run flame")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic_and_noise_changes_landmarks() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    for dir in ["a", "b"] {
        let o = flame(&["synth", "--n", "64", "--seed", "7", "--out", dir], t);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("64 records"));
    }
    let a = tree(&t.join("a"));
    assert_eq!(a, tree(&t.join("b")));
    let manifest = fs::read_to_string(t.join("a/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 65);
    assert_eq!(fs::read_dir(t.join("a/landmarks")).unwrap().count(), 64);

    let o = flame(
        &[
            "synth", "--n", "64", "--seed", "7", "--noise", "0.5", "--out", "c",
        ],
        t,
    );
    assert_eq!(code(&o), 0);
    let lm = |d: &str| fs::read(t.join(d).join("landmarks/synth00000.json")).unwrap();
    assert_ne!(lm("a"), lm("c"));
}

#[test]
fn flame_seed_is_a_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let run = |dir: &str, seed: Option<&str>, env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_flame"));
        c.args(["synth", "--n", "12", "--out", dir]).current_dir(t);
        if let Some(s) = seed {
            c.args(["--seed", s]);
        }
        match env {
            Some(e) => c.env("FLAME_SEED", e),
            None => c.env_remove("FLAME_SEED"),
        };
        assert!(c.status().unwrap().success());
        tree(&t.join(dir))
    };
    let explicit = run("x", Some("11"), None);
    assert_eq!(run("y", None, Some("11")), explicit);
    assert_eq!(run("z", Some("11"), Some("3")), explicit);
    assert_ne!(run("w", None, Some("3")), explicit);
}

#[test]
fn train_eval_plot_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    assert_eq!(
        code(&flame(
            &["synth", "--n", "40", "--seed", "2", "--out", "d"],
            t
        )),
        0
    );
    fs::write(
        t.join("run.cfg"),
        "# tiny run\npreset = tiny\nresolution = 30\nepochs = 200\nvariant = F_B\n",
    )
    .unwrap();
    let o = flame(
        &[
            "train", "--config", "run.cfg", "--epochs", "2", "--data", "d", "--out", "r",
        ],
        t,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let history = fs::read_to_string(t.join("r/history.tsv")).unwrap();
    assert_eq!(history.lines().next(), Some(HISTORY_HEADER));
    assert_eq!(
        history.lines().count(),
        3,
        "flag overrides the config's 200 epochs"
    );
    for f in [
        "best.ckpt",
        "final.ckpt",
        "eval_test.json",
        "config.txt",
        "flame.log",
    ] {
        assert!(t.join("r").join(f).exists(), "{f}");
    }
    let cfg = fs::read_to_string(t.join("r/config.txt")).unwrap();
    assert!(cfg.contains("epochs = 2\n") && cfg.contains("variant = F_B\n"));

    // Evaluating the saved best checkpoint on the test split reproduces the
    // report written at the end of training.
    let o = flame(
        &[
            "eval",
            "--data",
            "d",
            "--checkpoint",
            "r/best.ckpt",
            "--eval-split",
            "test",
            "--out",
            "e",
        ],
        t,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = read_report(&t.join("r/eval_test.json")).unwrap();
    let b = read_report(&t.join("e/eval.json")).unwrap();
    assert_eq!(a, b);

    let o = flame(
        &["plot", "r/history.tsv", "r/eval_test.json", "--out", "p"],
        t,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "history.svg",
        "eval_test_pitch.svg",
        "eval_test_yaw.svg",
        "eval_test_errors.svg",
    ] {
        let svg = fs::read_to_string(t.join("p").join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f}");
    }
    let pitch = fs::read_to_string(t.join("p/eval_test_pitch.svg")).unwrap();
    assert!(pitch.contains("true pitch (deg)") && pitch.contains("predicted pitch (deg)"));
    let yaw = fs::read_to_string(t.join("p/eval_test_yaw.svg")).unwrap();
    assert!(yaw.contains("true yaw (deg)"));
}

#[test]
fn single_epoch_history_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    fs::write(
        t.join("h.tsv"),
        format!("{HISTORY_HEADER}\n0\t0.0001\t0.25\tNaN\tNaN\t0\n"),
    )
    .unwrap();
    assert_eq!(
        parse_history(
            &fs::read_to_string(t.join("h.tsv")).unwrap(),
            Path::new("h.tsv")
        )
        .unwrap()
        .len(),
        1
    );
    let o = flame(&["plot", "h.tsv", "--out", "p"], t);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(t.join("p/h.svg")).unwrap();
    assert!(
        svg.contains("<circle"),
        "the single epoch is drawn as a point"
    );
}

#[test]
fn plot_parse_errors_name_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    fs::write(
        t.join("h.tsv"),
        format!("{HISTORY_HEADER}\n0\t1e-4\t0.3\t1\t1\t0\n1\t1e-4\toops\t1\t1\t0\n"),
    )
    .unwrap();
    let o = flame(&["plot", "h.tsv", "--out", "p"], t);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("h.tsv:3:"), "{}", stderr(&o));

    fs::write(
        t.join("eval_x.json"),
        "{\n  \"variant\": \"FLAME\",\n  \"resolution\": oops\n}",
    )
    .unwrap();
    let o = flame(&["plot", "eval_x.json", "--out", "p"], t);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("eval_x.json:3:"), "{}", stderr(&o));
}

#[test]
fn validation_and_runtime_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    fs::write(t.join("bad.cfg"), "epochs = 2\nlearning_rate = 0.1\n").unwrap();
    let o = flame(
        &["train", "--config", "bad.cfg", "--data", "d", "--out", "o"],
        t,
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("learning_rate") && stderr(&o).contains("bad.cfg:2"));
    assert!(!stderr(&o).contains("panicked"));

    let o = flame(
        &["train", "--batch-size", "1", "--data", "d", "--out", "o"],
        t,
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = flame(
        &["train", "--epochs", "three", "--data", "d", "--out", "o"],
        t,
    );
    assert_eq!(code(&o), 1);
    let o = flame(&["train", "--preset", "tiny"], t);
    assert_eq!(code(&o), 1, "missing data/out");
    let o = flame(&["train", "--no-such-flag", "1"], t);
    assert_eq!(code(&o), 1);

    let o = flame(
        &[
            "train",
            "--data",
            "missing",
            "--out",
            "o",
            "--preset",
            "tiny",
            "--resolution",
            "30",
        ],
        t,
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("missing"));
}

#[test]
fn help_lists_every_honoured_key() {
    let tmp = tempfile::tempdir().unwrap();
    let help = stdout(&flame(&["train", "--help"], tmp.path()));
    for k in [
        "epochs",
        "batch_size",
        "lr_milestones",
        "variant",
        "preset",
        "channels",
        "split_ratios",
        "seed",
        "data",
        "out",
    ] {
        assert!(help.contains(&format!("\n  {k} ")), "train help lacks {k}");
        assert!(
            help.contains(&format!("--{}", k.replace('_', "-"))),
            "{k} flag"
        );
    }
    let help = stdout(&flame(&["ablate", "--help"], tmp.path()));
    assert!(help.contains("\n  variants "));
    let help = stdout(&flame(&["resolution", "--help"], tmp.path()));
    assert!(help.contains("\n  resolutions "));
    let help = stdout(&flame(&["eval", "--help"], tmp.path()));
    assert!(help.contains("\n  checkpoint ") && help.contains("\n  eval_split "));
}

#[test]
fn ablate_writes_annotated_table_and_box_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    assert_eq!(
        code(&flame(
            &["synth", "--n", "40", "--seed", "4", "--out", "d"],
            t
        )),
        0
    );
    let args = [
        "ablate",
        "--data",
        "d",
        "--preset",
        "tiny",
        "--resolution",
        "30",
        "--epochs",
        "1",
        "--variants",
        "F_B,FLAME",
    ];
    let mut a = args.to_vec();
    a.extend(["--out", "o1"]);
    let o = flame(&a, t);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(t.join("o1/ablation.tsv")).unwrap();
    assert_eq!(stdout(&o), table);
    assert!(table.starts_with("variant\tmean_deg\tstd_deg\tn\tstatus\tpaper_columbiagaze_mean"));
    assert!(table.contains("\nF_B\t") && table.contains("\t5.93\t3.20\t5.32\t3.08"));
    assert!(table.contains("\nFLAME\t") && table.contains("\t4.64\t2.86\t4.62\t2.93"));

    let mut b = args.to_vec();
    b.extend(["--out", "o2"]);
    assert_eq!(code(&flame(&b, t)), 0);
    assert_eq!(
        table,
        fs::read_to_string(t.join("o2/ablation.tsv")).unwrap()
    );

    let o = flame(&["plot", "o1/ablation.tsv", "--out", "p"], t);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(t.join("p/ablation_box.svg")).unwrap();
    assert!(svg.contains("F_B") && svg.contains("FLAME"));
}

#[test]
fn gradcheck_reports_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let o = flame(
        &["gradcheck", "--preset", "tiny", "--variant", "F_B"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    assert!(
        out.contains("max relative error") && out.trim_end().ends_with("PASS"),
        "{out}"
    );
}
