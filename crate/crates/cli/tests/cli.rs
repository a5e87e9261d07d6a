//! End-to-end tests driving the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multimesh"))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.conf",
        "[problem]\nkind = biharmonic\ntypo_key = 3\n",
    );
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("problem.typo_key"),
        "stderr must name the key: {}",
        stderr(&out)
    );
}

#[test]
fn biharmonic_run_writes_csv_vtk_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bh.conf",
        "[problem]\nkind = biharmonic\n[mesh]\nlevels = 4\n",
    );
    let outdir = tmp.path().join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&outdir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("L2 error"), "summary missing: {text}");
    let csv = std::fs::read_to_string(outdir.join("biharmonic.csv")).unwrap();
    assert!(csv.starts_with("step,time,u_dofs,u_leaves,w_dofs,w_leaves,nnz"));
    assert!(outdir.join("biharmonic_u_0001.vtk").exists());
    assert!(outdir.join("biharmonic_w_0001.vtk").exists());
}

/// Integer columns of the CSV (sizes, counters) must be identical across
/// repeated runs of the same seeded configuration.
#[test]
fn integer_csv_columns_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ch.conf",
        "[problem]\nkind = cahn_hilliard\nepsilon = 0.15\ntimestep = 1e-5\nseed = 7\n\
         max_steps = 5\n[mesh]\npre_refine = 4\nmax_level = 6\n[adapt]\nstart = 3\n\
         phi.tolerance = 1.0\nmu.tolerance = 0.5\n",
    );
    let mut tables = Vec::new();
    for sub in ["a", "b"] {
        let outdir = tmp.path().join(sub);
        let out = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--output-dir")
            .arg(&outdir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        tables.push(std::fs::read_to_string(outdir.join("cahn_hilliard.csv")).unwrap());
    }
    let integer_cols = |csv: &str| -> Vec<Vec<String>> {
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let keep: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| {
                **h == "step"
                    || **h == "nnz"
                    || **h == "solver_iterations"
                    || h.ends_with("_dofs")
                    || h.ends_with("_leaves")
            })
            .map(|(i, _)| i)
            .collect();
        lines
            .map(|l| {
                let cells: Vec<&str> = l.split(',').collect();
                keep.iter().map(|&i| cells[i].to_string()).collect()
            })
            .collect()
    };
    assert_eq!(integer_cols(&tables[0]), integer_cols(&tables[1]));
}

#[test]
fn cavity_smoke_reports_eddies_and_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cav.conf",
        "[problem]\nkind = cavity\nreynolds = 50\nregularized_lid = true\ntau0 = 0.1\n\
         tau_max = 5.0\nmax_steps = 200\n[mesh]\npressure_levels = 3\n\
         velocity_extra_levels = 2\n[solver]\ntol = 1e-11\n",
    );
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("steady: yes"), "{text}");
    assert!(text.contains("eddies"), "{text}");
    assert!(text.contains("center ("), "{text}");
}

#[test]
fn bench_compares_modes_with_four_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bh.conf",
        "[problem]\nkind = biharmonic\n[mesh]\nlevels = 4\n",
    );
    let out = bin().args(["bench", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for row in ["assembler", "solver", "estimator", "overall"] {
        assert!(text.contains(row), "missing row {row}: {text}");
    }
    assert!(text.contains('%'), "speedup percentages missing: {text}");
}

#[test]
fn mode_flag_forces_a_shared_mesh() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ch.conf",
        "[problem]\nkind = cahn_hilliard\nepsilon = 0.15\ntimestep = 1e-5\nmax_steps = 4\n\
         [mesh]\npre_refine = 4\nmax_level = 6\n[adapt]\nstart = 2\nphi.tolerance = 1.0\n\
         mu.tolerance = 0.5\n",
    );
    let outdir = tmp.path().join("out");
    let out = bin()
        .args(["run", "--mode", "single", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&outdir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(outdir.join("cahn_hilliard.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (pl, ml) = (col("phi_leaves"), col("mu_leaves"));
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[pl], cells[ml], "shared mesh must keep leaf counts equal");
    }
}

#[test]
fn check_mesh_validates_shipped_files() {
    for name in ["unit_square_cross.mesh", "unit_square_two.mesh", "interval4.mesh"] {
        let path = repo_root().join("meshes").join(name);
        let out = bin().args(["check-mesh", "--file"]).arg(&path).output().unwrap();
        assert!(out.status.success(), "{name}: {}", stderr(&out));
        assert!(stdout(&out).contains("OK"));
    }
}

#[test]
fn check_mesh_rejects_inconsistent_input() {
    let tmp = tempfile::tempdir().unwrap();
    // interior facet wrongly carries a boundary marker
    let bad = write_config(
        tmp.path(),
        "bad.mesh",
        "DIM 2\nVERTICES 4\n0 0\n1 0\n1 1\n0 1\nELEMENTS 2\n2 0 1\n0 2 3\nNEIGHBOURS\n\
         -1 -1 1\n-1 -1 0\nBOUNDARY\n1 2 9\n3 4 0\nREFINEMENT_EDGES\n2\n2\n",
    );
    let out = bin().args(["check-mesh", "--file"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn macro_mesh_file_feeds_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mesh = repo_root().join("meshes/unit_square_two.mesh");
    let cfg = write_config(
        tmp.path(),
        "bh.conf",
        &format!(
            "[problem]\nkind = biharmonic\n[mesh]\nlevels = 4\nfile = {}\n",
            mesh.display()
        ),
    );
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("L2 error"));

    // the same config also feeds check-mesh
    let out = bin().args(["check-mesh", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
}
