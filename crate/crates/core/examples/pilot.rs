//! Scratch pilot for watching pipeline stage timings and reconstruction
//! quality while tuning solver parameters.

use std::time::Instant;

use epirecon::pipeline::{preset, run_forward, run_invert, run_observe, run_report, read_metrics};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map(String::as_str).unwrap_or("A-M");
    let mut cfg = preset(name).unwrap();
    for a in &args[2..] {
        let (k, v) = a.split_once('=').unwrap();
        match k {
            "lambda" => cfg.lambda = v.parse().unwrap(),
            "xi" => cfg.xi = v.parse().unwrap(),
            "delta" => cfg.delta = v.parse().unwrap(),
            "ls_tol" => cfg.ls_tol = v.parse().unwrap(),
            "ls_max_iter" => cfg.ls_max_iter = v.parse().unwrap(),
            "kappa_n" => cfg.kappa_n = Some(v.parse().unwrap()),
            "kappa_c" => cfg.kappa_c = v.parse().unwrap(),
            "p_sm" => cfg.p_sm = v.parse().unwrap(),
            "fine_nx" => { cfg.fine_nx = v.parse().unwrap(); cfg.fine_ny = cfg.fine_nx; }
            "fine_nt" => cfg.fine_nt = v.parse().unwrap(),
            "max_iter" => cfg.max_iter = v.parse().unwrap(),
            other => panic!("unknown key {other}"),
        }
    }
    println!("config: lambda={} xi={} delta={} ls_tol={} kappa_n={:?}", cfg.lambda, cfg.xi, cfg.delta, cfg.ls_tol, cfg.kappa_n);

    let root = std::path::PathBuf::from("/tmp/pilot");
    let _ = std::fs::remove_dir_all(&root);
    let fdir = root.join("forward");
    let odir = root.join("observe");
    let idir = root.join("invert");
    let rdir = root.join("report");

    let t0 = Instant::now();
    run_forward(&cfg, &fdir).unwrap();
    println!("forward: {:.1?}", t0.elapsed());

    let t1 = Instant::now();
    run_observe(&cfg, &fdir, &odir).unwrap();
    println!("observe: {:.1?}", t1.elapsed());

    let t2 = Instant::now();
    run_invert(&cfg, &odir, &idir).unwrap();
    println!("invert: {:.1?}", t2.elapsed());
    println!("history:\n{}", std::fs::read_to_string(idir.join("history.csv")).unwrap());

    let t3 = Instant::now();
    run_report(&cfg, &idir, &rdir).unwrap();
    println!("report: {:.1?}", t3.elapsed());
    let m = read_metrics(&rdir).unwrap();
    println!("metrics: {}", serde_json::to_string_pretty(&m).unwrap());
    println!("total: {:.1?}", t0.elapsed());
}
