use std::path::Path;
use std::process::Command;

use intflow::experiment::{run_continuity, run_fig1, run_fig2, ExperimentConfig};
use intflow::par::with_threads;
use intflow::MixtureComponent;

fn small(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::three_component();
    cfg.n_samples = 300;
    cfg.n_perturbations = 3;
    cfg.epsilons = vec![1e-3, 1e-2, 1e-1];
    cfg.grid.nx = 40;
    cfg.grid.ny = 36;
    cfg.max_arrows = 50;
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn small_continuity(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::single_gaussian();
    cfg.grid.nx = 48;
    cfg.grid.ny = 48;
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let name = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((name, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn svgs_parse(dir: &Path) -> usize {
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "svg") {
            let text = std::fs::read_to_string(&p).unwrap();
            let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            assert_eq!(doc.root_element().tag_name().name(), "svg");
            assert!(!text.contains("href") && !text.contains("url("), "{} is not self-contained", p.display());
            n += 1;
        }
    }
    n
}

#[test]
fn fig1_small_run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_fig1(&small(tmp.path())).unwrap();
    assert!(r.correlation.is_some());
    assert_eq!(r.n_arrows, 50);
    assert_eq!(svgs_parse(tmp.path()), 3);
    let flow = std::fs::read_to_string(tmp.path().join("fig1_flow.csv")).unwrap();
    assert_eq!(flow.lines().next().unwrap(), "i,x_1,x_2,v_1,v_2,clipped");
    assert_eq!(flow.lines().count(), 301);
    let grid = std::fs::read_to_string(tmp.path().join("fig1_kde_difference.csv")).unwrap();
    assert_eq!(grid.lines().next().unwrap(), "x,y,value");
    assert_eq!(grid.lines().count(), 40 * 36 + 1);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("fig1_metrics.json")).unwrap()).unwrap();
    assert!(metrics.as_object().unwrap().values().all(|v| v.is_number()));
    assert!(metrics["kde_correlation"].is_number());
}

#[test]
fn zero_perturbation_gives_zero_arrows_and_zero_difference() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.perturbation.shifts = Some(vec![vec![0.0, 0.0]; 3]);
    let r = run_fig1(&cfg).unwrap();
    assert_eq!(r.correlation, None);
    let flow = std::fs::read_to_string(tmp.path().join("fig1_flow.csv")).unwrap();
    for line in flow.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!((f[3], f[4], f[5]), ("0", "0", "0"), "{line}");
    }
    let diff = std::fs::read_to_string(tmp.path().join("fig1_kde_difference.csv")).unwrap();
    assert!(diff.lines().skip(1).all(|l| l.ends_with(",0")));

    let c = run_continuity(&{
        let mut c = small_continuity(tmp.path());
        c.perturbation.shifts = Some(vec![vec![0.0, 0.0]]);
        c
    })
    .unwrap();
    assert_eq!(c.relative_l2, 0.0);
}

#[test]
fn fig2_small_run_aggregates_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_fig2(&small(tmp.path())).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert_eq!(r.runs.len(), 3);
    for (k, row) in r.rows.iter().enumerate() {
        let mean = r.runs.iter().map(|p| p.flowed[k].ustat).sum::<f64>() / 3.0;
        assert!((row.ustat_flowed - mean).abs() <= 1e-15 * mean.abs().max(1.0));
        assert!((row.ustat_over_eps_original - row.ustat_original / row.epsilon).abs() <= 1e-12 * row.ustat_over_eps_original.abs());
        assert!(row.ustat_original_std >= 0.0 && row.ustat_flowed_std >= 0.0);
    }
    let ksd = std::fs::read_to_string(tmp.path().join("fig2_ksd/perturbation_00_flowed.csv")).unwrap();
    assert_eq!(ksd.lines().next().unwrap(), "epsilon,ustat,bandwidth,n_samples");
    assert_eq!(ksd.lines().count(), 4);
    assert_eq!(svgs_parse(tmp.path()), 1);
}

#[test]
fn outputs_are_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let run = |dir: &Path| {
        run_fig1(&small(dir)).unwrap();
        run_fig2(&small(dir)).unwrap();
        run_continuity(&small_continuity(dir)).unwrap();
    };
    with_threads(1, || run(a.path()));
    with_threads(4, || run(b.path()));
    with_threads(4, || run(c.path()));
    let (fa, fb, fc) = (csv_files(a.path()), csv_files(b.path()), csv_files(c.path()));
    assert!(fa.len() > 10);
    assert_eq!(fa, fb);
    assert_eq!(fb, fc);
}

#[test]
fn non_planar_mixture_is_rejected_for_fig1() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.mixture.components = vec![MixtureComponent {
        weight: 1.0,
        mean: vec![0.0; 3],
        covariance: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
    }];
    cfg.perturbation.shifts = None;
    assert!(matches!(run_fig1(&cfg), Err(intflow::Error::UnsupportedDimension { n: 3, .. })));
    assert!(run_continuity(&cfg).is_err());
    // fig2 works in any dimension.
    cfg.epsilons = vec![0.01];
    cfg.n_perturbations = 1;
    assert!(run_fig2(&cfg).is_ok());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intflow"))
}

#[test]
fn cli_runs_with_config_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("c.toml");
    let out = tmp.path().join("out");
    std::fs::write(&cfg_path, small_continuity(Path::new("ignored")).to_toml_string()).unwrap();
    let status = bin()
        .args(["continuity", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "3", "--threads", "2"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out.join("continuity_residual.csv").exists());
    assert!(out.join("continuity_metrics.json").exists());
    assert!(!Path::new("ignored").exists());
}

#[test]
fn cli_errors_exit_nonzero_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.epsilons = vec![0.0, 0.1];
    let text = cfg.to_toml_string();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    for args in [
        vec!["fig2".to_string(), "--config".into(), path.display().to_string()],
        vec!["fig1".into(), "--config".into(), tmp.path().join("missing.toml").display().to_string()],
    ] {
        let o = bin().args(&args).output().unwrap();
        assert!(!o.status.success());
        let err = String::from_utf8(o.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    }
    let o = bin().args(["fig2", "--config"]).arg(&path).output().unwrap();
    assert!(String::from_utf8(o.stderr).unwrap().contains("epsilons"));

    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = bin()
        .args(["continuity", "--out"])
        .arg(blocker.join("sub"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert_eq!(String::from_utf8(o.stderr).unwrap().trim_end().lines().count(), 1);
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        n += 1;
    }
    assert!(n >= 4);
}
