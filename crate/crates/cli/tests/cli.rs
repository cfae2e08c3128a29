use std::path::Path;
use std::process::{Command, Output};

fn reynet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reynet"))
        .args(args)
        .env("REYNET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_writes_deterministic_files_of_the_stated_size() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.reyd");
    let b = dir.path().join("b.reyd");
    for f in [&a, &b] {
        let o = reynet(&["gen", "--task", "symmetry", "--n", "5", "--count", "1000", "--seed", "0", "--out", p(f)]);
        assert_eq!(code(&o), 0, "{o:?}");
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes.len(), 32 + 8 * 1000 * (25 + 25));
    assert_eq!(bytes, std::fs::read(&b).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.reyd");
    assert_eq!(code(&reynet(&["gen", "--task", "cubes", "--n", "3", "--out", p(&out)])), 2);
    assert_eq!(code(&reynet(&["gen", "--task", "symmetry"])), 2);
    assert_eq!(code(&reynet(&["verify", "--suite", "all", "--max-n", "9"])), 2);
    assert_eq!(code(&reynet(&["train", "--model", "fnn", "--loss", "corner"])), 2);
    assert_eq!(code(&reynet(&["table", "table3"])), 2);
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let data = dir.path().join("d.reyd");
    assert_eq!(code(&reynet(&["gen", "--task", "symmetry", "--n", "3", "--count", "5", "--out", p(&data)])), 0);
    assert_eq!(code(&reynet(&["eval", "--checkpoint", p(&missing), "--data", p(&data)])), 1);
}

#[test]
fn train_eval_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = reynet(&[
        "train", "--model", "red-reynet", "--task", "symmetry", "--n-train", "3", "--seeds", "0,1", "--epochs", "2",
        "--batch", "10", "--widths", "8", "--train-count", "20", "--test-count", "10", "--out", p(&run),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("mean test mse at n=3 over 2 seeds"));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "task,model,loss,n_train,n_test,seed,epoch,split,mse");
    assert_eq!(lines.len(), 1 + 2 * 3);

    let ck = run.join("red-reynet-symmetry-n3-mse-seed0.json");
    assert!(ck.exists());
    let data = dir.path().join("big.reyd");
    assert_eq!(code(&reynet(&["gen", "--task", "symmetry", "--n", "20", "--count", "5", "--out", p(&data)])), 0);
    let o = reynet(&["eval", "--checkpoint", p(&ck), "--data", p(&data)]);
    assert_eq!(code(&o), 0, "{o:?}");
    let row = stdout(&o);
    assert!(row.lines().nth(1).unwrap().starts_with("symmetry,red-reynet,mse,3,20,0,2,eval,"));

    let o = reynet(&["sweep", "--checkpoint", p(&ck), "--n-min", "3", "--n-max", "20", "--count", "5"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let text = stdout(&o);
    let ns: Vec<usize> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ns, (3..=20).collect::<Vec<_>>());
}

#[test]
fn zero_epochs_evaluates_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = reynet(&[
        "train", "--model", "fnn", "--task", "trace", "--n-train", "3", "--epochs", "0", "--seed", "4", "--batch", "5",
        "--train-count", "10", "--test-count", "5", "--widths", "4", "--out", p(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let rows = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let last = rows.lines().last().unwrap();
    assert!(last.starts_with("trace,fnn,mse,3,3,4,0,test,"));
    let mse: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(mse.is_finite());
}

#[test]
fn non_reduced_checkpoints_refuse_other_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let o = reynet(&[
        "train", "--model", "reynet", "--task", "symmetry", "--n-train", "3", "--epochs", "1", "--seed", "0", "--batch",
        "5", "--train-count", "5", "--test-count", "5", "--widths", "4", "--out", p(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let ck = dir.path().join("reynet-symmetry-n3-mse-seed0.json");
    let data = dir.path().join("d.reyd");
    assert_eq!(code(&reynet(&["gen", "--task", "symmetry", "--n", "4", "--count", "3", "--out", p(&data)])), 0);
    let o = reynet(&["eval", "--checkpoint", p(&ck), "--data", p(&data)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot take n=4"));
    assert_eq!(code(&reynet(&["sweep", "--checkpoint", p(&ck)])), 1);
}

#[test]
fn verify_reports_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    let o = reynet(&["verify", "--suite", "bijection", "--max-n", "5", "--out", p(&report)]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).lines().all(|l| !l.starts_with("FAIL")));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "suite,case,gap,tolerance,pass");
    assert_eq!(csv.lines().count(), 1 + 5 * 3);
    let o = reynet(&["verify", "--suite", "count", "--max-n", "20"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("n=20 calls=400"));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "model = \"red-reynet\"\ntask = \"diagonal\"\nn_train = 4\nepochs = 1\nbatch = 5\ntrain_count = 10\ntest_count = 5\nwidths = [4]\nseeds = [0, 1, 2]\n",
    )
    .unwrap();
    let o = reynet(&["train", "--config", p(&cfg), "--seed", "7", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(dir.path().join("red-reynet-diagonal-n4-mse-seed7.json").exists());
    assert!(!dir.path().join("red-reynet-diagonal-n4-mse-seed0.json").exists());
    std::fs::write(&cfg, "colour = 1\n").unwrap();
    assert_eq!(code(&reynet(&["train", "--config", p(&cfg)])), 2);
}
