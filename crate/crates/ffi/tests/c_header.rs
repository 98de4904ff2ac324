//! Compiles a small C program against the generated header and the static
//! library, then runs it on a freshly trained checkpoint.

use std::path::{Path, PathBuf};
use std::process::Command;

use eventcl::data::{generate_synthetic, SyntheticSpec};
use eventcl::trainer::{train, TrainConfig};

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "eventcl.h"

int main(int argc, char **argv) {
    EventclModel *model = NULL;
    if (eventcl_model_load(argv[1], &model) != EVENTCL_STATUS_OK) {
        fprintf(stderr, "load: %s\n", eventcl_last_error());
        return 1;
    }
    size_t dim = eventcl_model_dim(model);
    double v[64];
    EventclEvent a = { "army", "start", "initiative" };
    EventclEvent b = { "military", "launch", "program" };
    if (dim > 64 || eventcl_embed(model, &a, v, 64) != EVENTCL_STATUS_OK) return 2;
    double norm = 0.0;
    for (size_t i = 0; i < dim; i++) norm += v[i] * v[i];
    double sim = 0.0;
    if (eventcl_similarity(model, &a, &b, &sim) != EVENTCL_STATUS_OK) return 3;
    if (eventcl_embed(model, &a, v, 1) != EVENTCL_STATUS_BUFFER_TOO_SMALL) return 4;
    if (eventcl_last_error() == NULL) return 5;
    printf("%zu %.6f %.6f\n", dim, norm, sim);
    eventcl_model_free(model);
    return fabs(norm - 1.0) < 1e-9 ? 0 : 6;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps/
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn checkpoint(dir: &Path) -> PathBuf {
    let spec = SyntheticSpec {
        num_synonym_clusters: 6,
        events_per_cluster: 6,
        mcnc_instances: 10,
        ..Default::default()
    };
    let corpus = generate_synthetic(&spec).unwrap().corpus;
    let cfg = TrainConfig {
        hidden_dim: 16,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 32,
        batch_size: 8,
        prototype_count: 4,
        steps: Some(1),
        ..Default::default()
    };
    train(&corpus, &cfg, Some(dir)).unwrap().checkpoint.unwrap()
}

#[test]
fn c_program_links_and_runs() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("eventcl.h").is_file(), "build script writes the header");
    let lib = target_dir().join("libeventcl_ffi.a");
    assert!(lib.is_file(), "static library missing at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .expect("C compiler available");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let ckpt = checkpoint(dir.path());
    let run = Command::new(&bin).arg(&ckpt).output().unwrap();
    assert!(
        run.status.success(),
        "exit {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();
    let fields: Vec<&str> = stdout.split_whitespace().collect();
    assert_eq!(fields[0], "16");
    let sim: f64 = fields[2].parse().unwrap();
    assert!((-1.0..=1.0).contains(&sim));
}
