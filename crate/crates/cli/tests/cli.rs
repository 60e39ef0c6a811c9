use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chinpaint_cli::image_io;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chinpaint"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Plain bisection on `F'(m) = theta atanh(m) - theta_c m`.
fn bisect_well(theta: f64, theta_c: f64) -> f64 {
    let fp = |m: f64| theta * m.atanh() - theta_c * m;
    let (mut lo, mut hi) = (1e-3, 1.0 - 1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fp(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn mstar_matches_bisection() {
    let dir = tempfile::tempdir().unwrap();
    for (theta, theta_c) in [(1.0, 2.0), (0.3, 1.0), (1.9, 2.0)] {
        let o = run(&["mstar", "--set", &format!("theta={theta}"), "--set", &format!("theta_c={theta_c}")], dir.path());
        assert!(o.status.success());
        let text = stdout(&o);
        let m: f64 = text.lines().next().unwrap().trim_start_matches("m* = ").parse().unwrap();
        assert!((m - bisect_well(theta, theta_c)).abs() <= 1e-12, "{text}");
    }
    let o = run(&["mstar", "--set", "theta=2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["inpaint", "--config", "/nonexistent.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["inpaint", "--set", "lambda_min=10", "--set", "lambda_max=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda_min (10) must be below lambda_max (1)"));
    let o = run(&["export-diagnostics"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    // one inner iteration cannot meet the tolerance
    let o = run(&["inpaint", "--set", "fixture.n=16", "--set", "picard_max=1", "--set", "n_steps=2"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn grad_check_passes_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["grad-check", "--set", "fixture.n=16", "--set", "n_steps=40", "--set", "check.directions=3"];
    let oa = run(&args, a.path());
    let ob = run(&args, b.path());
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(ob.status.success());
    assert!(stdout(&oa).contains("gradient check passed"));
    let ca = fs::read(a.path().join("grad_check.csv")).unwrap();
    assert_eq!(ca, fs::read(b.path().join("grad_check.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&ca).lines().count(), 4);
    assert!(a.path().join("config_used.txt").exists());
}

#[test]
fn image_inpaint_and_trajectory_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (nx, ny) = (24, 16);
    let img: Vec<u8> = (0..nx * ny).map(|k| if (k % nx) < nx / 2 { 255 } else { 0 }).collect();
    let mask: Vec<u8> = (0..nx * ny)
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            if (8..16).contains(&i) && (4..12).contains(&j) { 255 } else { 0 }
        })
        .collect();
    let ip = dir.path().join("img.pgm");
    let mp = dir.path().join("mask.pgm");
    fs::write(&ip, image_io::encode_pgm(nx, ny, &img)).unwrap();
    fs::write(&mp, image_io::encode_pgm(nx, ny, &mask)).unwrap();
    let out = dir.path().join("run");
    let (ips, mps) = (ip.to_str().unwrap(), mp.to_str().unwrap());
    let o = run(&["inpaint", "--image", ips, "--mask", mps, "--set", "n_steps=30", "--set", "image_format=png"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fin = image_io::load_gray(&out.join("phi_final.png")).unwrap();
    assert_eq!((fin.width, fin.height), (nx, ny));
    assert_eq!(fs::read_to_string(out.join("diagnostics.csv")).unwrap().lines().count(), 32);

    let replay = dir.path().join("replay");
    let traj = out.join("trajectory.bin");
    let o = run(&["export-diagnostics", "--set", &format!("trajectory={}", traj.display())], &replay);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let b = fs::read_to_string(replay.join("diagnostics.csv")).unwrap();
    assert_eq!(a, b);

    let o = run(&["inpaint", "--image", ips, "--mask", mps, "--set", "nx=20"], &out);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["inpaint", "--image", ips], &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn optimize_hess_check_and_decay_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let small = ["--set", "fixture.n=16", "--set", "n_steps=40"];
    let o = run(&[&["optimize"][..], &small, &["--set", "optim.max_iter=5"]].concat(), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("optimizer.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "iter,J,stationarity,step_size,armijo_backtracks,min_lambda,max_lambda");
    let lam = fs::read_to_string(dir.path().join("lambda.csv")).unwrap();
    assert_eq!(lam.lines().count(), 1 + 16 * 16);
    assert!(dir.path().join("phi_optimal.pgm").exists());

    let o = run(&[&["hess-check"][..], &small, &["--set", "check.hess_pairs=2"]].concat(), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("hess_check.csv")).unwrap().lines().count(), 3);

    let o = run(
        &[&["decay-experiment"][..], &small, &["--set", "decay.ladder=1,100", "--set", "decay.eps_scan=0.5"]].concat(),
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["decay_1.csv", "decay_100.csv", "decay_summary.csv", "eps_scan.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.starts_with("# ") && text.contains("surrogate-norm"), "{name}");
    }
    let rung = fs::read_to_string(dir.path().join("decay_100.csv")).unwrap();
    assert_eq!(rung.lines().nth(1), Some("time,d_hminus1"));
}
