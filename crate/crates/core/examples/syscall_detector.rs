//! Builds an event stream with one attacker polling scaling_cur_freq among
//! benign processes, runs the detector and prints the flags.
//!
//! cargo run --release --example syscall_detector -- [events_file]
//!
//! With a file argument the stream is read from it instead.

use std::fmt::Write;

use freqprint::defense::{detect, detections_to_tsv, parse_event_stream, DetectorConfig};

fn demo_stream() -> String {
    let freq = "/sys/devices/system/cpu/cpu2/cpufreq/scaling_cur_freq";
    let mut s = String::from("# seconds pid syscall path\n");
    let line = |s: &mut String, ms: u64, pid: u32, call: &str, path: &str| {
        let _ = writeln!(s, "{}.{:03} {pid} {call} {path}", ms / 1000, ms % 1000);
    };
    for step in 0..3000u64 {
        let t = step * 10;
        // attacker: one poll every 10 ms
        for (k, call) in ["fstat", "fadvise64", "read", "close"].iter().enumerate() {
            line(&mut s, t + k as u64 / 2, 4242, call, freq);
        }
        // a monitoring daemon reading the frequency once a second
        if step % 100 == 0 {
            for call in ["fstat", "fadvise64", "read", "close"] {
                line(&mut s, t, 777, call, freq);
            }
        }
        line(&mut s, t + 3, 1200, "read", "/var/log/syslog");
    }
    s
}

fn main() -> freqprint::Result<()> {
    let text = match std::env::args().nth(1) {
        Some(p) => std::fs::read_to_string(&p).map_err(|e| freqprint::Error::InvalidArgument(format!("{p}: {e}")))?,
        None => demo_stream(),
    };
    let events = parse_event_stream(&text)?;
    let flags = detect(&events, &DetectorConfig::default())?;
    println!("{} events, {} flagged", events.len(), flags.len());
    print!("{}", detections_to_tsv(&flags));
    Ok(())
}
