//! C ABI over `hamstat`: opaque handles, status codes and a per-thread
//! last-error message.
//!
//! Every fallible function returns a [`HamstatStatus`]; on failure the message
//! is available from [`hamstat_last_error`] until the next failing call on the
//! same thread. Handles are created by `*_new` functions and released by the
//! matching `*_free`, which accepts null.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hamstat::analytic::{ExampleMap, ExampleName, IDENTITY};
use hamstat::domain::{curve_domain_from_map, unit_ball, Domain};
use hamstat::mesh::{build_polar_mesh, DiscMesh};
use hamstat::residual::{example_report, singular_masses, standard_family, stationarity_test, Omega};
use hamstat::solver::{rigidity_experiment, SolverConfig};
use hamstat::Error;

/// Result codes shared by every function of the library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamstatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Unsupported = 4,
    Io = 5,
    Panic = 6,
}

pub struct HamstatMesh(DiscMesh);

pub struct HamstatExample {
    map: ExampleMap,
    name: ExampleName,
}

pub struct HamstatDomain(Domain);

/// All residuals of an analytic example on one mesh.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HamstatReport {
    pub h: f64,
    pub lagrangian: f64,
    pub conformality: f64,
    pub structural: f64,
    pub angle_div: f64,
    pub angle_perp_div: f64,
    pub legendrian: f64,
    pub conormal: f64,
    pub neumann_trace: f64,
    pub stationarity: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HamstatRigidity {
    pub initial_distance: f64,
    pub final_distance: f64,
    pub final_energy: f64,
    pub angle_variance: f64,
    pub circle_defect: f64,
    pub lagrangian_residual: f64,
    pub iterations: u64,
    pub pass: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HamstatStatus {
    match e {
        Error::InvalidParameter(_) | Error::InvalidCollar(_) | Error::InvalidLoop { .. } | Error::NotCoprime(..) | Error::NotUnitary(_) | Error::Config { .. } => {
            HamstatStatus::InvalidArgument
        }
        Error::Unsupported(_) => HamstatStatus::Unsupported,
        Error::Io(_) => HamstatStatus::Io,
        _ => HamstatStatus::Numerical,
    }
}

/// Runs `f`, converting errors and panics to a status and recording the message.
fn guard(f: impl FnOnce() -> Result<(), (HamstatStatus, String)>) -> HamstatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HamstatStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            HamstatStatus::Panic
        }
    }
}

fn lib<T>(r: hamstat::Result<T>) -> Result<T, (HamstatStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (HamstatStatus, String) {
    (HamstatStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (HamstatStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (HamstatStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn hamstat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn hamstat_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hamstat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out_mesh` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_mesh_new(n_rings: usize, n_sectors: usize, grading: f64, out_mesh: *mut *mut HamstatMesh) -> HamstatStatus {
    guard(|| {
        let o = out(out_mesh, "out_mesh")?;
        *o = ptr::null_mut();
        let m = lib(build_polar_mesh(n_rings, n_sectors, grading))?;
        *o = Box::into_raw(Box::new(HamstatMesh(m)));
        Ok(())
    })
}

/// # Safety
/// `mesh` must be null or come from [`hamstat_mesh_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hamstat_mesh_free(mesh: *mut HamstatMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must be a live handle; the out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_mesh_info(mesh: *const HamstatMesh, n_nodes: *mut usize, n_triangles: *mut usize, h: *mut f64) -> HamstatStatus {
    guard(|| {
        let m = &as_ref(mesh, "mesh")?.0;
        *out(n_nodes, "n_nodes")? = m.n_nodes();
        *out(n_triangles, "n_triangles")? = m.n_triangles();
        *out(h, "h")? = m.h();
        Ok(())
    })
}

/// Copies node coordinates as `x0, y0, x1, y1, …` into `xy` (length `len ≥ 2·n_nodes`).
///
/// # Safety
/// `mesh` must be a live handle and `xy` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_mesh_nodes(mesh: *const HamstatMesh, xy: *mut f64, len: usize) -> HamstatStatus {
    guard(|| {
        let m = &as_ref(mesh, "mesh")?.0;
        if xy.is_null() {
            return Err(null("xy"));
        }
        let need = 2 * m.n_nodes();
        if len < need {
            return Err((HamstatStatus::InvalidArgument, format!("buffer of {len} doubles, need {need}")));
        }
        let buf = std::slice::from_raw_parts_mut(xy, need);
        for (i, p) in m.nodes.iter().enumerate() {
            buf[2 * i] = p[0];
            buf[2 * i + 1] = p[1];
        }
        Ok(())
    })
}

/// `name` is `flat`, `sw:p,q` or `nonminimal`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out_example` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_example_new(name: *const c_char, out_example: *mut *mut HamstatExample) -> HamstatStatus {
    guard(|| {
        let o = out(out_example, "out_example")?;
        *o = ptr::null_mut();
        if name.is_null() {
            return Err(null("name"));
        }
        let s = CStr::from_ptr(name).to_str().map_err(|e| (HamstatStatus::InvalidArgument, format!("name is not UTF-8: {e}")))?;
        let parsed: ExampleName = lib(s.parse())?;
        let map = lib(parsed.build(IDENTITY))?;
        *o = Box::into_raw(Box::new(HamstatExample { map, name: parsed }));
        Ok(())
    })
}

/// # Safety
/// `example` must be null or a handle from [`hamstat_example_new`].
#[no_mangle]
pub unsafe extern "C" fn hamstat_example_free(example: *mut HamstatExample) {
    if !example.is_null() {
        drop(Box::from_raw(example));
    }
}

/// Image point `(x₁, y₁, x₂, y₂)` of a disc point.
///
/// # Safety
/// `example` must be a live handle and `xyxy` valid for 4 writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_example_value(example: *const HamstatExample, x: f64, y: f64, xyxy: *mut f64) -> HamstatStatus {
    guard(|| {
        let e = &as_ref(example, "example")?.map;
        if xyxy.is_null() {
            return Err(null("xyxy"));
        }
        if !(x.hypot(y) <= 1.0) {
            return Err((HamstatStatus::InvalidArgument, format!("({x}, {y}) is outside the closed unit disc")));
        }
        std::slice::from_raw_parts_mut(xyxy, 4).copy_from_slice(&e.value(x, y).to_array());
        Ok(())
    })
}

/// Lagrangian angle as a unit complex number.
///
/// # Safety
/// `example` must be a live handle; `re`, `im` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_example_angle(example: *const HamstatExample, x: f64, y: f64, re: *mut f64, im: *mut f64) -> HamstatStatus {
    guard(|| {
        let e = &as_ref(example, "example")?.map;
        if e.is_singular([x, y]) || !(x.hypot(y) <= 1.0) {
            return Err((HamstatStatus::InvalidArgument, format!("angle undefined at ({x}, {y})")));
        }
        let g = e.angle(x, y);
        *out(re, "re")? = g.re;
        *out(im, "im")? = g.im;
        Ok(())
    })
}

/// Degree and flux of `iḡ∇g` around `(x, y)`, averaged over circles of radii `0.2, 0.35, 0.5`
/// (each scaled to stay inside the disc).
///
/// # Safety
/// `example` must be a live handle; `degree`, `flux` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_example_singular_mass(example: *const HamstatExample, x: f64, y: f64, degree: *mut f64, flux: *mut f64) -> HamstatStatus {
    guard(|| {
        let e = &as_ref(example, "example")?.map;
        let d = out(degree, "degree")?;
        let f = out(flux, "flux")?;
        let room = 1.0 - x.hypot(y);
        if !(room > 0.0) {
            return Err((HamstatStatus::InvalidArgument, format!("({x}, {y}) is not inside the disc")));
        }
        let scale = (0.9 * room / 0.5).min(1.0);
        let radii = [0.2 * scale, 0.35 * scale, 0.5 * scale];
        let rec = lib(singular_masses(|p| e.exact_angle_flux(p[0], p[1]), [x, y], &radii, 1024))?;
        *d = rec.degree;
        *f = rec.flux_mass;
        Ok(())
    })
}

/// # Safety
/// `out_domain` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_domain_ball(out_domain: *mut *mut HamstatDomain) -> HamstatStatus {
    guard(|| {
        *out(out_domain, "out_domain")? = Box::into_raw(Box::new(HamstatDomain(unit_ball())));
        Ok(())
    })
}

/// Curve domain defined by the boundary normal field of `example`.
///
/// # Safety
/// `example` must be a live handle and `out_domain` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_domain_curve(example: *const HamstatExample, out_domain: *mut *mut HamstatDomain) -> HamstatStatus {
    guard(|| {
        let o = out(out_domain, "out_domain")?;
        *o = ptr::null_mut();
        let e = &as_ref(example, "example")?.map;
        let d = lib(curve_domain_from_map(e))?;
        *o = Box::into_raw(Box::new(HamstatDomain(d)));
        Ok(())
    })
}

/// # Safety
/// `domain` must be null or a handle from a `hamstat_domain_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn hamstat_domain_free(domain: *mut HamstatDomain) {
    if !domain.is_null() {
        drop(Box::from_raw(domain));
    }
}

/// Full residual report of an analytic example against the standard test family.
///
/// # Safety
/// Handles must be live and `report` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_example_report(
    example: *const HamstatExample,
    mesh: *const HamstatMesh,
    domain: *const HamstatDomain,
    report: *mut HamstatReport,
) -> HamstatStatus {
    guard(|| {
        let ex = as_ref(example, "example")?;
        let m = &as_ref(mesh, "mesh")?.0;
        let d = &as_ref(domain, "domain")?.0;
        let r_out = out(report, "report")?;
        let fs = lib(standard_family(d, |p| ex.map.value(p[0], p[1])))?;
        let r = lib(example_report(&ex.name.to_string(), &ex.map, m, d, &fs))?;
        *r_out = HamstatReport {
            h: r.h,
            lagrangian: r.lagrangian,
            conformality: r.conformality,
            structural: r.structural,
            angle_div: r.angle_div,
            angle_perp_div: r.angle_perp_div,
            legendrian: r.legendrian,
            conormal: r.conormal,
            neumann_trace: r.neumann_trace,
            stationarity: r.stationarity,
        };
        Ok(())
    })
}

/// Stationarity value of the P1 interpolant of `example` on `mesh`.
///
/// # Safety
/// Handles must be live and `value` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_stationarity(example: *const HamstatExample, mesh: *const HamstatMesh, domain: *const HamstatDomain, value: *mut f64) -> HamstatStatus {
    guard(|| {
        let ex = as_ref(example, "example")?;
        let m = &as_ref(mesh, "mesh")?.0;
        let d = &as_ref(domain, "domain")?.0;
        let v = out(value, "value")?;
        let fs = lib(standard_family(d, |p| ex.map.value(p[0], p[1])))?;
        *v = lib(stationarity_test(&ex.map.sample(m), d, &fs, &Omega::Full))?.value;
        Ok(())
    })
}

/// Rigidity experiment with the default solver configuration.
///
/// # Safety
/// `mesh` must be a live handle and `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hamstat_rigidity(seed: u64, eps: f64, mesh: *const HamstatMesh, result: *mut HamstatRigidity) -> HamstatStatus {
    guard(|| {
        let m = &as_ref(mesh, "mesh")?.0;
        let r_out = out(result, "result")?;
        let r = lib(rigidity_experiment(seed, eps, m, &SolverConfig::default()))?;
        *r_out = HamstatRigidity {
            initial_distance: r.initial_distance,
            final_distance: r.final_distance,
            final_energy: r.final_energy,
            angle_variance: r.angle_variance,
            circle_defect: r.circle_defect,
            lagrangian_residual: r.lagrangian_residual,
            iterations: r.iterations as u64,
            pass: r.pass,
        };
        Ok(())
    })
}

/// Runs the command-line driver with `argv[0..argc]` and returns its exit code
/// (0 pass, 1 usage or config error, 2 failed assertion); -1 on null arguments.
///
/// # Safety
/// `argv` must hold `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hamstat_run_cli(argc: c_int, argv: *const *const c_char) -> c_int {
    if argv.is_null() || argc < 0 {
        set_error("argv is null or argc negative".into());
        return -1;
    }
    let mut args = Vec::with_capacity(argc as usize);
    for i in 0..argc as usize {
        let a = *argv.add(i);
        if a.is_null() {
            set_error(format!("argv[{i}] is null"));
            return -1;
        }
        args.push(CStr::from_ptr(a).to_string_lossy().into_owned());
    }
    catch_unwind(|| hamstat::cli::main_with_args(args)).unwrap_or_else(|_| {
        set_error("internal panic in the command-line driver".into());
        -1
    })
}
