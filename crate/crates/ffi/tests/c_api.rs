use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use pdfusion::cnn::{he_uniform_init, write_checkpoint, NetworkSpec};
use pdfusion::datamodel::{write_volume, Volume};
use pdfusion_ffi::*;
use rand::SeedableRng;

fn last_error() -> String {
    let p = pdf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn dti_scalars_of_known_tensors() {
    let mut md = 0.0;
    let mut fa = 0.0;
    let t = [2.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    assert_eq!(unsafe { pdf_dti_scalars(t.as_ptr(), &mut md, &mut fa) }, PdfStatus::Ok);
    assert!((md - 4.0 / 3.0).abs() < 1e-12);
    assert!((fa - (1.0f64 / 6.0).sqrt()).abs() < 1e-9);
    assert!(pdf_last_error().is_null());

    let bad = [f64::NAN, 1.0, 1.0, 0.0, 0.0, 0.0];
    assert_eq!(
        unsafe { pdf_dti_scalars(bad.as_ptr(), &mut md, &mut fa) },
        PdfStatus::InvalidArgument
    );
    assert!(last_error().contains("non-finite"));
}

#[test]
fn null_pointers_are_reported() {
    let mut out = [0.0; 2];
    assert_eq!(
        unsafe { pdf_mra_weights(ptr::null(), 2, out.as_mut_ptr()) },
        PdfStatus::NullPointer
    );
    assert!(last_error().contains("accuracies"));
    assert_eq!(
        unsafe { pdf_volume_read(ptr::null(), ptr::null_mut()) },
        PdfStatus::NullPointer
    );
    unsafe {
        pdf_volume_free(ptr::null_mut());
        pdf_model_free(ptr::null_mut());
        pdf_ensemble_free(ptr::null_mut());
    }
}

#[test]
fn mra_weights_match_hand_derived_values() {
    let acc = [0.886, 0.842, 0.882, 0.8094];
    let mut w = [0.0; 4];
    assert_eq!(unsafe { pdf_mra_weights(acc.as_ptr(), 4, w.as_mut_ptr()) }, PdfStatus::Ok);
    let expected = [0.39696, 0.20245, 0.29812, 0.10247];
    for (a, b) in w.iter().zip(expected) {
        assert!((a - b).abs() < 1e-4, "{w:?}");
    }
}

#[test]
fn metrics_from_codes() {
    let truth = [0u32, 0, 1, 2];
    let pred = [0u32, 1, 1, 2];
    let mut out = [0.0; 4];
    assert_eq!(
        unsafe { pdf_metrics(truth.as_ptr(), pred.as_ptr(), 4, out.as_mut_ptr()) },
        PdfStatus::Ok
    );
    assert!((out[0] - 0.75).abs() < 1e-12);

    let bad = [0u32, 0, 1, 7];
    assert_eq!(
        unsafe { pdf_metrics(truth.as_ptr(), bad.as_ptr(), 4, out.as_mut_ptr()) },
        PdfStatus::InvalidArgument
    );
    assert!(last_error().contains("out of range"));
}

#[test]
fn ensemble_fusion_vote_and_search() {
    #[rustfmt::skip]
    let probs = [
        0.7, 0.2, 0.1,  0.2, 0.7, 0.1,  0.6, 0.3, 0.1,
        0.1, 0.8, 0.1,  0.1, 0.2, 0.7,  0.1, 0.1, 0.8,
    ];
    let mut ens = ptr::null_mut();
    assert_eq!(unsafe { pdf_ensemble_new(probs.as_ptr(), 2, 3, &mut ens) }, PdfStatus::Ok);
    let (mut subjects, mut models) = (0, 0);
    assert_eq!(unsafe { pdf_ensemble_shape(ens, &mut subjects, &mut models) }, PdfStatus::Ok);
    assert_eq!((subjects, models), (2, 3));

    let mut votes = [9u32; 2];
    assert_eq!(unsafe { pdf_majority_vote(ens, votes.as_mut_ptr()) }, PdfStatus::Ok);
    assert_eq!(votes, [0, 2]);

    let mut fused = [9u32; 2];
    let w = [1.0, 0.0, 0.0];
    assert_eq!(unsafe { pdf_fuse(ens, w.as_ptr(), 3, fused.as_mut_ptr()) }, PdfStatus::Ok);
    assert_eq!(fused, [0, 1]);
    assert_eq!(
        unsafe { pdf_fuse(ens, w.as_ptr(), 2, fused.as_mut_ptr()) },
        PdfStatus::InvalidArgument
    );

    let labels = [0u32, 2];
    let initial = [1.0 / 3.0; 3];
    let mut best = [0.0; 3];
    let mut acc = 0.0;
    assert_eq!(
        unsafe { pdf_owaf_search(ens, labels.as_ptr(), initial.as_ptr(), 0.05, 0.01, best.as_mut_ptr(), &mut acc) },
        PdfStatus::Ok
    );
    assert_eq!(acc, 1.0);
    assert!((best.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    unsafe { pdf_ensemble_free(ens) };
}

#[test]
fn model_predicts_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = NetworkSpec::desk(8, 8);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let params = he_uniform_init(&spec, &mut rng);
    let ckpt = dir.path().join("m.cnn1");
    write_checkpoint(&ckpt, &spec, &params).unwrap();
    let vol_path = dir.path().join("v.vol");
    let voxels: Vec<f32> = (0..2 * 64).map(|i| (i % 7) as f32 / 7.0).collect();
    write_volume(&vol_path, &Volume::new(2, 8, 8, voxels).unwrap()).unwrap();

    let c = |p: &Path| CString::new(p.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    let mut volume = ptr::null_mut();
    unsafe {
        assert_eq!(pdf_model_load(c(&ckpt).as_ptr(), &mut model), PdfStatus::Ok);
        assert_eq!(pdf_volume_read(c(&vol_path).as_ptr(), &mut volume), PdfStatus::Ok);
        let mut dims = [0usize; 3];
        assert_eq!(pdf_volume_dims(volume, dims.as_mut_ptr()), PdfStatus::Ok);
        assert_eq!(dims, [2, 8, 8]);
        let mut probs = [0.0; 3];
        assert_eq!(pdf_model_predict(model, volume, probs.as_mut_ptr()), PdfStatus::Ok);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        pdf_model_free(model);
        pdf_volume_free(volume);

        let missing = c(&dir.path().join("missing.vol"));
        let mut v = ptr::null_mut();
        assert_eq!(pdf_volume_read(missing.as_ptr(), &mut v), PdfStatus::Io);
        assert!(v.is_null());
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(pdf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pdfusion.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["pdf_owaf_search", "pdf_fuse", "pdf_mra_weights", "PDF_STATUS_OK", "PdfEnsemble"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99", "-Wall", "-Werror"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(status.success());
}
