use std::ffi::{CStr, CString};
use std::ptr;

use hamstat_ffi::*;

fn last_error() -> String {
    let p = hamstat_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn example(name: &str) -> *mut HamstatExample {
    let c = CString::new(name).unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { hamstat_example_new(c.as_ptr(), &mut e) }, HamstatStatus::Ok);
    assert!(!e.is_null());
    e
}

fn mesh(r: usize, s: usize) -> *mut HamstatMesh {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { hamstat_mesh_new(r, s, 1.0, &mut m) }, HamstatStatus::Ok);
    m
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(hamstat_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn mesh_handle() {
    let m = mesh(2, 8);
    let (mut n, mut t, mut h) = (0, 0, 0.0);
    assert_eq!(unsafe { hamstat_mesh_info(m, &mut n, &mut t, &mut h) }, HamstatStatus::Ok);
    assert_eq!((n, t), (17, 24));
    assert!(h > 0.0);
    let mut xy = vec![f64::NAN; 2 * n];
    assert_eq!(unsafe { hamstat_mesh_nodes(m, xy.as_mut_ptr(), xy.len()) }, HamstatStatus::Ok);
    assert_eq!(&xy[..2], &[0.0, 0.0]);
    assert!(xy.chunks(2).all(|p| p[0].hypot(p[1]) <= 1.0 + 1e-15));
    assert_eq!(unsafe { hamstat_mesh_nodes(m, xy.as_mut_ptr(), 3) }, HamstatStatus::InvalidArgument);
    assert!(last_error().contains("need 34"));
    unsafe { hamstat_mesh_free(m) };
}

#[test]
fn invalid_arguments_report_messages() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { hamstat_mesh_new(1, 8, 1.0, &mut m) }, HamstatStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains("n_rings"));
    assert_eq!(unsafe { hamstat_mesh_new(4, 8, 1.0, ptr::null_mut()) }, HamstatStatus::NullPointer);
    assert!(last_error().contains("out_mesh"));
    let bad = CString::new("sw:2,4").unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { hamstat_example_new(bad.as_ptr(), &mut e) }, HamstatStatus::InvalidArgument);
    assert!(e.is_null());
    assert!(last_error().contains("coprime"));
    assert_eq!(unsafe { hamstat_example_new(ptr::null(), &mut e) }, HamstatStatus::NullPointer);
    hamstat_clear_error();
    assert!(hamstat_last_error().is_null());
    unsafe {
        hamstat_mesh_free(ptr::null_mut());
        hamstat_example_free(ptr::null_mut());
        hamstat_domain_free(ptr::null_mut());
    }
}

#[test]
fn example_values_and_angle() {
    let e = example("flat");
    let mut v = [0.0; 4];
    assert_eq!(unsafe { hamstat_example_value(e, 0.3, -0.2, v.as_mut_ptr()) }, HamstatStatus::Ok);
    assert_eq!(v, [0.3, 0.0, -0.2, 0.0]);
    assert_eq!(unsafe { hamstat_example_value(e, 1.0, 1.0, v.as_mut_ptr()) }, HamstatStatus::InvalidArgument);
    let (mut re, mut im) = (0.0, 0.0);
    assert_eq!(unsafe { hamstat_example_angle(e, 0.1, 0.2, &mut re, &mut im) }, HamstatStatus::Ok);
    assert!((re - 1.0).abs() < 1e-15 && im.abs() < 1e-15);
    unsafe { hamstat_example_free(e) };
    let c = example("sw:1,2");
    assert_eq!(unsafe { hamstat_example_angle(c, 0.0, 0.0, &mut re, &mut im) }, HamstatStatus::InvalidArgument);
    assert_eq!(unsafe { hamstat_example_angle(c, 0.5, 0.0, &mut re, &mut im) }, HamstatStatus::Ok);
    assert!((re.hypot(im) - 1.0).abs() < 1e-14);
    unsafe { hamstat_example_free(c) };
}

#[test]
fn cone_mass_is_integer() {
    let c = example("sw:2,3");
    let (mut d, mut f) = (0.0, 0.0);
    assert_eq!(unsafe { hamstat_example_singular_mass(c, 0.0, 0.0, &mut d, &mut f) }, HamstatStatus::Ok);
    assert!((d.abs() - 1.0).abs() < 1e-8 && f.abs() < 1e-8, "{d} {f}");
    assert_eq!(unsafe { hamstat_example_singular_mass(c, 0.6, 0.0, &mut d, &mut f) }, HamstatStatus::Ok);
    assert!(d.abs() < 1e-8, "{d}");
    assert_eq!(unsafe { hamstat_example_singular_mass(c, 1.0, 0.0, &mut d, &mut f) }, HamstatStatus::InvalidArgument);
    unsafe { hamstat_example_free(c) };
}

#[test]
fn reports_through_handles() {
    let m = mesh(12, 48);
    let mut ball = ptr::null_mut();
    assert_eq!(unsafe { hamstat_domain_ball(&mut ball) }, HamstatStatus::Ok);
    let flat = example("flat");
    let mut r = HamstatReport::default();
    assert_eq!(unsafe { hamstat_example_report(flat, m, ball, &mut r) }, HamstatStatus::Ok);
    for v in [r.lagrangian, r.conformality, r.structural, r.angle_div, r.angle_perp_div, r.legendrian, r.conormal, r.neumann_trace, r.stationarity] {
        assert!(v <= 1e-10, "{r:?}");
    }
    let mut s = 0.0;
    assert_eq!(unsafe { hamstat_stationarity(flat, m, ball, &mut s) }, HamstatStatus::Ok);
    assert!(s > 0.0 && s < 1e-2, "{s}");

    let nm = example("nonminimal");
    let mut curve = ptr::null_mut();
    assert_eq!(unsafe { hamstat_domain_curve(nm, &mut curve) }, HamstatStatus::Ok);
    assert_eq!(unsafe { hamstat_example_report(nm, m, curve, &mut r) }, HamstatStatus::Ok);
    assert!((r.legendrian - 0.5_f64.sqrt()).abs() < 1e-10, "{r:?}");
    assert!(r.neumann_trace >= 1.0);
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { hamstat_domain_curve(flat, &mut bad) }, HamstatStatus::Unsupported);
    assert!(bad.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { hamstat_example_report(flat, m, ptr::null(), &mut r) }, HamstatStatus::NullPointer);
    unsafe {
        hamstat_domain_free(curve);
        hamstat_domain_free(ball);
        hamstat_example_free(nm);
        hamstat_example_free(flat);
        hamstat_mesh_free(m);
    }
}

#[test]
fn rigidity_small() {
    let m = mesh(12, 48);
    let mut r = HamstatRigidity::default();
    assert_eq!(unsafe { hamstat_rigidity(1, 0.05, m, &mut r) }, HamstatStatus::Ok);
    assert!(r.pass && r.final_distance <= 1e-3 && r.initial_distance > r.final_distance, "{r:?}");
    assert_eq!(unsafe { hamstat_rigidity(1, 0.5, m, &mut r) }, HamstatStatus::InvalidArgument);
    unsafe { hamstat_mesh_free(m) };
}

#[test]
fn cli_entry_point() {
    let t = tempfile::tempdir().unwrap();
    let args: Vec<CString> = ["hamstat", "--command", "dump-mesh", "--mesh", "2,8", "--out", t.path().to_str().unwrap()].iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs: Vec<_> = args.iter().map(|a| a.as_ptr()).collect();
    assert_eq!(unsafe { hamstat_run_cli(ptrs.len() as i32, ptrs.as_ptr()) }, 0);
    assert!(t.path().join("mesh.json").exists());
    assert_eq!(unsafe { hamstat_run_cli(2, ptrs.as_ptr()) }, 1);
    assert_eq!(unsafe { hamstat_run_cli(1, ptr::null()) }, -1);
}

#[test]
fn errors_are_thread_local() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { hamstat_mesh_new(0, 8, 1.0, &mut m) }, HamstatStatus::InvalidArgument);
    std::thread::spawn(|| assert!(hamstat_last_error().is_null())).join().unwrap();
    assert!(!hamstat_last_error().is_null());
}
