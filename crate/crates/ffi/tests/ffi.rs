use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use geodesic_lode_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(gl_last_error()) }
        .to_str()
        .unwrap()
        .to_string()
}

fn small_dataset() -> *mut GlDataset {
    let mut ds = ptr::null_mut();
    let st = unsafe { gl_dataset_generate(c("dho").as_ptr(), 30, 4, &mut ds) };
    assert_eq!(st, GlStatus::Ok);
    assert!(!ds.is_null());
    ds
}

const TINY: &str = "preset = \"dho-pathmin\"\nsteps = 3\nbatch = 4\nval_every = 3\nhidden_dim = 4\nlatent_dim = 2\ndynamics_hidden = [6]\n";

#[test]
fn version_strings() {
    let v = unsafe { CStr::from_ptr(gl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    assert_eq!(gl_schema_version(), geodesic_lode::SCHEMA_VERSION);
}

#[test]
fn dataset_round_trip_and_copy_out() {
    let ds = small_dataset();
    let mut n = 0usize;
    unsafe {
        assert_eq!(gl_dataset_len(ds, GlSplit::Train, &mut n), GlStatus::Ok);
        assert_eq!(n, 24);
        assert_eq!(gl_dataset_len(ds, GlSplit::Test, &mut n), GlStatus::Ok);
        assert_eq!(n, 3);
    }

    let (mut pts, mut dim) = (0usize, 0usize);
    let st = unsafe {
        gl_dataset_trajectory(
            ds,
            GlSplit::Train,
            0,
            ptr::null_mut(),
            ptr::null_mut(),
            0,
            &mut pts,
            &mut dim,
        )
    };
    assert_eq!(st, GlStatus::BufferTooSmall);
    assert_eq!((pts, dim), (30, 2));

    let mut times = vec![0.0; pts];
    let mut values = vec![0.0; pts * dim];
    let st = unsafe {
        gl_dataset_trajectory(
            ds,
            GlSplit::Train,
            0,
            times.as_mut_ptr(),
            values.as_mut_ptr(),
            pts,
            &mut pts,
            &mut dim,
        )
    };
    assert_eq!(st, GlStatus::Ok);
    assert!(times.windows(2).all(|w| w[0] < w[1]));

    let dir = tempfile::tempdir().unwrap();
    let file = c(dir.path().join("d.glds").to_str().unwrap());
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(gl_dataset_save(ds, file.as_ptr()), GlStatus::Ok);
        assert_eq!(gl_dataset_load(file.as_ptr(), &mut back), GlStatus::Ok);
        let mut t2 = vec![0.0; pts];
        let mut v2 = vec![0.0; pts * dim];
        assert_eq!(
            gl_dataset_trajectory(
                back,
                GlSplit::Train,
                0,
                t2.as_mut_ptr(),
                v2.as_mut_ptr(),
                pts,
                &mut pts,
                &mut dim
            ),
            GlStatus::Ok
        );
        assert_eq!((t2, v2), (times, values));
        gl_dataset_free(back);
        gl_dataset_free(ds);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(
            gl_dataset_generate(c("pendulum").as_ptr(), 10, 0, &mut ds),
            GlStatus::UnknownSystem
        );
        assert!(last_error().contains("pendulum"));
        assert!(ds.is_null());

        assert_eq!(
            gl_dataset_generate(c("dho").as_ptr(), 0, 0, &mut ds),
            GlStatus::InvalidArgument
        );
        assert_eq!(
            gl_dataset_generate(ptr::null(), 10, 0, &mut ds),
            GlStatus::NullPointer
        );
        assert_eq!(
            gl_dataset_generate(c("dho").as_ptr(), 10, 0, ptr::null_mut()),
            GlStatus::NullPointer
        );
        assert_eq!(
            gl_dataset_load(c("/no/such/file.glds").as_ptr(), &mut ds),
            GlStatus::Io
        );
        let mut n = 0;
        assert_eq!(gl_dataset_len(ptr::null(), GlSplit::Train, &mut n), GlStatus::NullPointer);
        gl_dataset_free(ptr::null_mut());
        gl_model_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_per_thread() {
    unsafe {
        let mut ds = ptr::null_mut();
        gl_dataset_generate(c("pendulum").as_ptr(), 10, 0, &mut ds);
    }
    let other = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(other, "");
    assert!(last_error().contains("pendulum"));
}

#[test]
fn train_save_load_predict() {
    let ds = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = c(dir.path().join("run").to_str().unwrap());
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(
            gl_model_train(ds, c(TINY).as_ptr(), out_dir.as_ptr(), &mut model),
            GlStatus::Ok,
            "{}",
            last_error()
        );
    }
    assert!(dir.path().join("run").join("metrics.csv").is_file());

    let (mut latent, mut features) = (0, 0);
    unsafe {
        assert_eq!(gl_model_dims(model, &mut latent, &mut features), GlStatus::Ok);
    }
    assert_eq!((latent, features), (2, 2));

    let times = [0.0, 1.0, 2.5, 4.0];
    let values = [3.0, 1.0, 2.6, 0.3, 2.0, -0.1, 1.6, -0.3];
    let query = [0.0, 5.0, 10.0];
    let mut pred = [0.0; 6];
    let mut z = [0.0; 2];
    unsafe {
        assert_eq!(
            gl_model_predict(model, times.as_ptr(), values.as_ptr(), 4, query.as_ptr(), 3, pred.as_mut_ptr(), 6),
            GlStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(
            gl_model_encode(model, times.as_ptr(), values.as_ptr(), 4, z.as_mut_ptr(), 2),
            GlStatus::Ok
        );
        assert_eq!(
            gl_model_predict(model, times.as_ptr(), values.as_ptr(), 4, query.as_ptr(), 3, pred.as_mut_ptr(), 5),
            GlStatus::ShapeMismatch
        );
        let back_q = [5.0, 1.0];
        let mut two = [0.0; 4];
        assert_eq!(
            gl_model_predict(model, times.as_ptr(), values.as_ptr(), 4, back_q.as_ptr(), 2, two.as_mut_ptr(), 4),
            GlStatus::InvalidArgument
        );
    }
    assert!(pred.iter().chain(&z).all(|v| v.is_finite()));

    let file = c(dir.path().join("m.json").to_str().unwrap());
    let mut loaded = ptr::null_mut();
    let mut again = [0.0; 6];
    unsafe {
        assert_eq!(gl_model_save(model, file.as_ptr()), GlStatus::Ok);
        assert_eq!(gl_model_load(file.as_ptr(), &mut loaded), GlStatus::Ok);
        assert_eq!(
            gl_model_predict(loaded, times.as_ptr(), values.as_ptr(), 4, query.as_ptr(), 3, again.as_mut_ptr(), 6),
            GlStatus::Ok
        );
        gl_model_free(loaded);
        gl_model_free(model);
        gl_dataset_free(ds);
    }
    assert_eq!(pred, again);
}

#[test]
fn bad_training_config_is_rejected() {
    let ds = small_dataset();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(
            gl_model_train(ds, c("stepz = 3").as_ptr(), ptr::null(), &mut model),
            GlStatus::InvalidArgument
        );
        assert!(last_error().contains("stepz"));
        assert_eq!(
            gl_model_train(ds, c("preset = \"lve-kl\"").as_ptr(), ptr::null(), &mut model),
            GlStatus::InvalidArgument
        );
        assert!(model.is_null());
        gl_dataset_free(ds);
    }
}

fn header() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/geodesic_lode.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "gl_version",
        "gl_schema_version",
        "gl_last_error",
        "gl_dataset_generate",
        "gl_dataset_load",
        "gl_dataset_save",
        "gl_dataset_len",
        "gl_dataset_trajectory",
        "gl_dataset_free",
        "gl_model_train",
        "gl_model_load",
        "gl_model_save",
        "gl_model_dims",
        "gl_model_encode",
        "gl_model_predict",
        "gl_model_free",
        "GL_STATUS_OK",
        "GL_STATUS_BUFFER_TOO_SMALL",
        "typedef struct GlModel GlModel",
        "typedef struct GlDataset GlDataset",
    ] {
        assert!(h.contains(name), "{name}");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(header())
            .output()
        else {
            eprintln!("{compiler} not available, skipping");
            continue;
        };
        assert!(
            out.status.success(),
            "{compiler}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
