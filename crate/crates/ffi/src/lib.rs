//! C ABI over `marsupial-core`.
//!
//! Every fallible call returns an [`MrStatus`]. On failure a message is kept
//! per thread and can be read with [`mr_last_error`]. Buffers are always
//! caller-owned; the only heap object handed out is the [`MrSimulation`]
//! handle, released with [`mr_sim_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use marsupial::comms::{self, Message};
use marsupial::localization::Modality;
use marsupial::mission::{Outcome, Simulation};
use marsupial::photometry::{agcwd_apply, exposure_time, ExposureCalibration, GrayImage};
use marsupial::planning::MissionStage;
use marsupial::simworld::scenario::ScenarioConfig;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Codec = 4,
    BufferTooSmall = 5,
    Simulation = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrOutcome {
    Running = 0,
    Complete = 1,
    Abort = 2,
    Timeout = 3,
}

/// One planner tick of a simulation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MrTick {
    pub t: f64,
    /// Mission stage code, as carried in heartbeats.
    pub stage: u8,
    /// 1 while tag-relative localization is active, 0 for optical flow.
    pub tag_mode: u8,
    pub switched: u8,
    pub est: [f64; 3],
    pub fused: [f64; 3],
    pub truth: [f64; 3],
}

/// Opaque simulation handle.
pub struct MrSimulation {
    sim: Simulation,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl std::fmt::Display) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string());
}

type FfiResult = Result<(), (MrStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult) -> MrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MrStatus::Panic
        }
    }
}

fn null(what: &str) -> (MrStatus, String) {
    (MrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (MrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies `bytes` plus a NUL into `buf`; `*written` gets the length without
/// the NUL even when the buffer is too small.
unsafe fn write_c_string(bytes: &[u8], buf: *mut c_char, cap: usize, written: *mut usize) -> FfiResult {
    if !written.is_null() {
        *written = bytes.len();
    }
    if bytes.len() + 1 > cap {
        return Err((MrStatus::BufferTooSmall, format!("need {} bytes", bytes.len() + 1)));
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
    *buf.add(bytes.len()) = 0;
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit). Returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn mr_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Heading-aware exposure time for calibration bounds `[t_min, t_max]` (us).
///
/// # Safety
/// `out` must be null or point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn mr_exposure_time(
    sun_heading: f64,
    uav_heading: f64,
    t_min: f64,
    t_max: f64,
    out: *mut f64,
) -> MrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cal = ExposureCalibration::new(t_min, t_max).map_err(|e| (MrStatus::InvalidArgument, e.to_string()))?;
        *out = exposure_time(sun_heading, uav_heading, &cal);
        Ok(())
    })
}

/// AGCWD enhancement of a row-major 8-bit image. `out` receives
/// `width * height` pixels; `gamma_out`, when not null, the 256-entry gamma
/// table.
///
/// # Safety
/// `pixels` and `out` must be valid for `width * height` bytes and
/// `gamma_out` null or valid for 256 doubles.
#[no_mangle]
pub unsafe extern "C" fn mr_agcwd_enhance(
    pixels: *const u8,
    width: usize,
    height: usize,
    alpha: f64,
    out: *mut u8,
    gamma_out: *mut f64,
) -> MrStatus {
    guard(|| {
        if pixels.is_null() || out.is_null() {
            return Err(null("pixel buffer"));
        }
        let n = width.checked_mul(height).ok_or((MrStatus::InvalidArgument, "image too large".to_string()))?;
        let input = std::slice::from_raw_parts(pixels, n).to_vec();
        let img = GrayImage::new(width, height, input).map_err(|e| (MrStatus::InvalidArgument, e.to_string()))?;
        let enhanced = agcwd_apply(&img, alpha).map_err(|e| (MrStatus::InvalidArgument, e.to_string()))?;
        ptr::copy_nonoverlapping(enhanced.image.pixels().as_ptr(), out, n);
        if !gamma_out.is_null() {
            ptr::copy_nonoverlapping(enhanced.gamma.gamma.as_ptr(), gamma_out, 256);
        }
        Ok(())
    })
}

/// CRC-16/X25 of `len` bytes. A null `data` hashes the empty string.
///
/// # Safety
/// `data` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mr_crc16_x25(data: *const u8, len: usize) -> u16 {
    if data.is_null() {
        return comms::crc16_x25(&[]);
    }
    comms::crc16_x25(std::slice::from_raw_parts(data, len))
}

/// Encodes a message given as JSON, e.g. `{"type":"Heartbeat","stage":2}`,
/// into a frame. `*written` receives the frame length.
///
/// # Safety
/// `json` must be a NUL-terminated string, `buf` valid for `cap` bytes and
/// `written` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mr_encode(
    json: *const c_char,
    seq: u8,
    sys_id: u8,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> MrStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let msg: Message = serde_json::from_str(text).map_err(|e| (MrStatus::InvalidArgument, e.to_string()))?;
        let frame = comms::encode(&msg, seq, sys_id).map_err(|e| (MrStatus::Codec, e.kind().to_string()))?;
        if !written.is_null() {
            *written = frame.len();
        }
        if frame.len() > cap {
            return Err((MrStatus::BufferTooSmall, format!("need {} bytes", frame.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(frame.as_ptr(), buf, frame.len());
        Ok(())
    })
}

/// Decodes the frame at the start of `bytes`. The message is written to
/// `json_buf` as NUL-terminated JSON. On a codec failure the status is
/// `Codec` and the last error holds the error kind, e.g. `BadCrc`.
///
/// # Safety
/// `bytes` must be valid for `len` bytes, `json_buf` for `cap` bytes and
/// every out pointer null or writable.
#[no_mangle]
pub unsafe extern "C" fn mr_decode(
    bytes: *const u8,
    len: usize,
    seq: *mut u8,
    sys_id: *mut u8,
    consumed: *mut usize,
    json_buf: *mut c_char,
    cap: usize,
    json_len: *mut usize,
) -> MrStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let d = comms::decode(std::slice::from_raw_parts(bytes, len))
            .map_err(|e| (MrStatus::Codec, e.kind().to_string()))?;
        if !seq.is_null() {
            *seq = d.seq;
        }
        if !sys_id.is_null() {
            *sys_id = d.sys_id;
        }
        if !consumed.is_null() {
            *consumed = d.consumed;
        }
        let json = serde_json::to_string(&d.message).expect("message serializes");
        write_c_string(json.as_bytes(), json_buf, cap, json_len)
    })
}

fn new_handle(cfg: ScenarioConfig, out: *mut *mut MrSimulation) -> FfiResult {
    let handle = Box::new(MrSimulation { sim: Simulation::new(cfg) });
    unsafe { *out = Box::into_raw(handle) };
    Ok(())
}

/// Creates a simulation from scenario JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mr_sim_new(json: *const c_char, out: *mut *mut MrSimulation) -> MrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ScenarioConfig::from_json(c_str(json, "json")?).map_err(|e| (MrStatus::Config, e.to_string()))?;
        new_handle(cfg, out)
    })
}

/// Creates a simulation from a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mr_sim_from_file(path: *const c_char, out: *mut *mut MrSimulation) -> MrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let cfg = ScenarioConfig::load(std::path::Path::new(path)).map_err(|e| (MrStatus::Config, e.to_string()))?;
        new_handle(cfg, out)
    })
}

/// Advances one planner tick. `*done` is set to 1 (and `tick` left
/// untouched) once the mission has finished.
///
/// # Safety
/// `sim` must come from `mr_sim_new`/`mr_sim_from_file`; `tick` and `done`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mr_sim_tick(sim: *mut MrSimulation, tick: *mut MrTick, done: *mut u8) -> MrStatus {
    guard(|| {
        let h = sim.as_mut().ok_or_else(|| null("sim"))?;
        let rec = h.sim.tick().map_err(|e| (MrStatus::Simulation, e.to_string()))?;
        if !done.is_null() {
            *done = u8::from(rec.is_none());
        }
        if let (Some(r), false) = (rec, tick.is_null()) {
            *tick = MrTick {
                t: r.t,
                stage: MissionStage::from_label(&r.stage).map_or(u8::MAX, MissionStage::code),
                tag_mode: u8::from(r.modality == Modality::TagRelative.label()),
                switched: u8::from(r.switched),
                est: r.est,
                fused: r.fused,
                truth: r.truth,
            };
        }
        Ok(())
    })
}

/// Mission outcome so far.
///
/// # Safety
/// `sim` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mr_sim_outcome(sim: *const MrSimulation, out: *mut MrOutcome) -> MrStatus {
    guard(|| {
        let h = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = match h.sim.outcome() {
            None => MrOutcome::Running,
            Some(Outcome::Complete) => MrOutcome::Complete,
            Some(Outcome::Abort) => MrOutcome::Abort,
            Some(Outcome::Timeout) => MrOutcome::Timeout,
        };
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mr_sim_free(sim: *mut MrSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}
