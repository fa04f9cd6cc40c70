use std::process::{Command, Output};

fn zeta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zeta"))
        .env_remove("ZETA_SEED")
        .args(args)
        .output()
        .expect("spawn zeta")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn help_lists_defaults() {
    let o = zeta(&["locality", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("[default: 1,2,3,4,5,6,7,8]"));
    assert!(text.contains("ZETA_SEED"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(zeta(&["locality", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(zeta(&["nonsense"]).status.code(), Some(2));
}

#[test]
fn invalid_parameters_exit_one() {
    let o = zeta(&["gradcheck", "--k", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn gradcheck_and_equiv_pass() {
    let g = zeta(&["gradcheck"]);
    assert!(g.status.success());
    assert!(stdout(&g).contains("max_relative_error="));
    let e = zeta(&["equiv"]);
    assert!(e.status.success());
    assert!(stdout(&e).contains("max_abs_diff="));
}

#[test]
fn csv_is_byte_identical_across_runs() {
    let args = ["--seed", "3", "locality", "--dims", "1,2", "--sizes", "256", "--trials", "2"];
    let a = zeta(&args);
    let b = zeta(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("# zeta locality sweep, seed=3, dist=gaussian\nd_k,n,trial,mean_overlap\n"));

    let k1 = zeta(&["ablate-k", "--n", "128", "--chunk", "16", "--trials", "2"]);
    let k2 = zeta(&["ablate-k", "--n", "128", "--chunk", "16", "--trials", "2"]);
    assert!(k1.status.success());
    assert_eq!(k1.stdout, k2.stdout);
}

#[test]
fn seed_falls_back_to_env() {
    let args = ["locality", "--dims", "2", "--sizes", "128", "--trials", "1"];
    let flag = zeta(&[&["--seed", "11"][..], &args[..]].concat());
    let env = Command::new(env!("CARGO_BIN_EXE_zeta"))
        .env("ZETA_SEED", "11")
        .args(args)
        .output()
        .unwrap();
    assert_eq!(flag.stdout, env.stdout);
    assert!(stdout(&env).contains("seed=11"));
}

#[test]
fn out_flag_writes_file() {
    let path = std::env::temp_dir().join(format!("zeta-cli-{}.csv", std::process::id()));
    let o = zeta(&["--out", path.to_str().unwrap(), "metric-demo"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert!(text.contains("euclidean_nearest=House B"));
    assert!(text.contains("max_dot=House D"));
}

#[test]
fn short_training_run_reports_accuracy() {
    let o = zeta(&["train", "--steps", "5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("step,loss\n"));
    assert!(text.lines().any(|l| l.starts_with("accuracy=")));
}
