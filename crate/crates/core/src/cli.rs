//! `marsupial` command line: run, replay, enhance, proto.
//!
//! Exit codes: 0 success or Complete, 1 usage/config/input error, 2 Abort,
//! 3 Timeout, 4 replay invariant violation.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::comms::{self, Message};
use crate::mission::{check_runlog, run_mission, RunLogLine, ViolationKind};
use crate::photometry::{agcwd_apply, check_alpha, load_pgm, save_pgm, DEFAULT_ALPHA};
use crate::simworld::scenario::ScenarioConfig;

/// Overrides the directory that relative output paths are resolved against.
pub const OUT_DIR_ENV: &str = "MARSUPIAL_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ABORT: i32 = 2;
pub const EXIT_TIMEOUT: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "marsupial", version, about = "UAV + hexapod maritime retrieval simulator and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its RunLog and metrics.
    Run {
        scenario: PathBuf,
        /// Replace the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// RunLog path (JSON Lines). Defaults to `<name>.runlog.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Metrics path (JSON). Defaults to `<name>.metrics.json`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Summarize a RunLog, optionally re-checking its invariants.
    Replay {
        log: PathBuf,
        #[arg(long)]
        check_invariants: bool,
    },
    /// Apply AGCWD contrast enhancement to a binary PGM.
    Enhance {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Print the 256-entry gamma table to stdout.
        #[arg(long)]
        dump_gamma: bool,
    },
    /// Encode a message to hex or decode frames from hex or a file.
    Proto {
        /// Hex string to decode.
        hex: Option<String>,
        /// Read frames from a file (raw bytes or hex text).
        #[arg(long, conflicts_with = "hex")]
        file: Option<PathBuf>,
        /// Message as JSON, e.g. '{"type":"Heartbeat","stage":2}'.
        #[arg(long, conflicts_with_all = ["decode", "hex", "file"])]
        encode: Option<String>,
        #[arg(long)]
        decode: bool,
        #[arg(long, default_value_t = 0)]
        seq: u8,
        #[arg(long, default_value_t = comms::SYS_UAV)]
        sys: u8,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    execute(cli.command, out, err)
}

pub fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cmd {
        Command::Run { scenario, seed, out: log, metrics } => cmd_run(&scenario, seed, log, metrics, out),
        Command::Replay { log, check_invariants } => cmd_replay(&log, check_invariants, out),
        Command::Enhance { input, output, alpha, dump_gamma } => cmd_enhance(&input, &output, alpha, dump_gamma, out),
        Command::Proto { hex, file, encode, decode: _, seq, sys } => match encode {
            Some(json) => cmd_proto_encode(&json, seq, sys, out),
            None => cmd_proto_decode(hex.as_deref(), file.as_deref(), out),
        },
    };
    match result {
        Ok(code) => code,
        Err((code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

type CmdResult = Result<i32, (i32, String)>;

fn fail(msg: impl std::fmt::Display) -> (i32, String) {
    (EXIT_ERROR, msg.to_string())
}

fn output_path(path: Option<PathBuf>, default_name: String) -> PathBuf {
    let p = path.unwrap_or_else(|| PathBuf::from(default_name));
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p,
    }
}

fn cmd_run(
    scenario: &Path,
    seed: Option<u64>,
    log: Option<PathBuf>,
    metrics: Option<PathBuf>,
    out: &mut dyn Write,
) -> CmdResult {
    let mut cfg = ScenarioConfig::load(scenario).map_err(fail)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let log_path = output_path(log, format!("{}.runlog.jsonl", cfg.name));
    let metrics_path = output_path(metrics, format!("{}.metrics.json", cfg.name));
    for p in [&log_path, &metrics_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| fail(format!("{}: {e}", dir.display())))?;
        }
    }

    let file = fs::File::create(&log_path).map_err(|e| fail(format!("{}: {e}", log_path.display())))?;
    let mut writer = BufWriter::new(file);
    let summary = run_mission(&cfg, Some(&mut writer)).map_err(fail)?;
    writer.flush().map_err(fail)?;
    let json = serde_json::to_string_pretty(&summary).expect("metrics serialize");
    fs::write(&metrics_path, format!("{json}\n")).map_err(|e| fail(format!("{}: {e}", metrics_path.display())))?;

    let _ = writeln!(
        out,
        "{:?} after {:.1} s (mean error {:.3} m, {} retries, {}/{} frames dropped)",
        summary.mission_outcome,
        summary.total_time_s,
        summary.mean_position_error_m,
        summary.retry_count,
        summary.frames_dropped,
        summary.frames_sent
    );
    Ok(summary.mission_outcome.exit_code())
}

fn cmd_replay(path: &Path, check: bool, out: &mut dyn Write) -> CmdResult {
    let text = fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    if check {
        return match check_runlog(&text) {
            Ok(n) => {
                let _ = writeln!(out, "ok: {n} records, all invariants hold");
                Ok(EXIT_OK)
            }
            Err(v) if v.kind == ViolationKind::Format => Err(fail(v)),
            Err(v) => Err((EXIT_INVARIANT, v.to_string())),
        };
    }
    let mut ticks = 0usize;
    let mut last = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str::<RunLogLine>(line) {
            Ok(RunLogLine::Tick(r)) => {
                ticks += 1;
                last = Some(r);
            }
            Ok(RunLogLine::Header(h)) => {
                let _ = writeln!(out, "scenario {} seed {}", h.scenario, h.seed);
            }
            Err(e) => return Err(fail(format!("line {}: {e}", i + 1))),
        }
    }
    match last {
        Some(r) => {
            let _ = writeln!(out, "{ticks} records, final stage {} at t = {:.1} s", r.stage, r.t);
        }
        None => {
            let _ = writeln!(out, "no records");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_enhance(input: &Path, output: &Path, alpha: f64, dump: bool, out: &mut dyn Write) -> CmdResult {
    check_alpha(alpha).map_err(fail)?;
    let bytes = fs::read(input).map_err(|e| fail(format!("{}: {e}", input.display())))?;
    let img = load_pgm(&bytes).map_err(fail)?;
    let enhanced = agcwd_apply(&img, alpha).map_err(fail)?;
    fs::write(output, save_pgm(&enhanced.image)).map_err(|e| fail(format!("{}: {e}", output.display())))?;
    if dump {
        for (level, g) in enhanced.gamma.gamma.iter().enumerate() {
            let _ = writeln!(out, "{level} {g:.12}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_proto_encode(json: &str, seq: u8, sys: u8, out: &mut dyn Write) -> CmdResult {
    let msg: Message = serde_json::from_str(json).map_err(|e| fail(format!("bad message JSON: {e}")))?;
    let frame = comms::encode(&msg, seq, sys).map_err(|e| fail(e.kind()))?;
    let _ = writeln!(out, "{}", hex::encode(frame));
    Ok(EXIT_OK)
}

fn parse_hex_text(s: &str) -> Option<Vec<u8>> {
    let digits: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let digits = digits.strip_prefix("0x").unwrap_or(&digits);
    hex::decode(digits).ok()
}

fn cmd_proto_decode(hex_arg: Option<&str>, file: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let bytes = match (hex_arg, file) {
        (Some(h), _) => parse_hex_text(h).ok_or_else(|| fail("argument is not valid hex"))?,
        (None, Some(p)) => {
            let raw = fs::read(p).map_err(|e| fail(format!("{}: {e}", p.display())))?;
            std::str::from_utf8(&raw).ok().and_then(parse_hex_text).unwrap_or(raw)
        }
        (None, None) => return Err(fail("give a hex string, --file or --encode")),
    };
    let mut first_error = None;
    let mut i = 0;
    while i < bytes.len() {
        match comms::decode(&bytes[i..]) {
            Ok(d) => {
                let fields = serde_json::to_string(&d.message).expect("message serializes");
                let frame = hex::encode(&bytes[i..i + d.consumed]);
                let _ = writeln!(out, "{frame} seq={} sys={} {fields}", d.seq, d.sys_id);
                i += d.consumed;
            }
            Err(e) => {
                let _ = writeln!(out, "error at byte {i}: {}", e.kind());
                first_error.get_or_insert(e.kind());
                i = bytes[i + 1..].iter().position(|&b| b == comms::MAGIC).map_or(bytes.len(), |o| i + 1 + o);
            }
        }
    }
    match first_error {
        Some(kind) => Err(fail(kind)),
        None => Ok(EXIT_OK),
    }
}
